"""Bayesian GMM with adaptive weighting-matrix tuning."""
