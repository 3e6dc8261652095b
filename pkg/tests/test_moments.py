import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgmm.moments import (
    Dataset,
    FunctionMomentModel,
    InitializerError,
    LinearIVModel,
    MomentEvaluationError,
    moment_matrix,
    moment_mean,
    tsls_estimate,
)


def _iv(y, x, Z):
    return Dataset(np.asarray(y, float), np.asarray(x, float), np.asarray(Z, float))


class TestDataset:
    def test_rejects_mismatched_rows(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros(3), np.zeros(2), np.zeros((3, 1)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Dataset(np.array([1.0, np.nan]), np.zeros(2), np.zeros((2, 1)))

    def test_rejects_single_row(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros(1), np.zeros(1), np.zeros((1, 1)))

    def test_shapes(self):
        d = _iv([1, 2, 3], [0, 1, 0], np.ones((3, 2)))
        assert d.n_obs == 3 and d.n_instruments == 2


class TestMomentMatrix:
    def test_gamma_zero_gives_y_times_z(self):
        M = moment_matrix(LinearIVModel(1), _iv([1, 2], [0, 0], [[1], [1]]), [0.0])
        np.testing.assert_array_equal(M, [[1.0], [2.0]])

    def test_residuals_vanish(self):
        M = moment_matrix(LinearIVModel(1), _iv([1, 2], [1, 2], [[1], [1]]), [1.0])
        np.testing.assert_array_equal(M, [[0.0], [0.0]])

    def test_scalar_loop_oracle(self, draw_k50_seed7):
        d = draw_k50_seed7.data
        M = moment_matrix(LinearIVModel.for_data(d), d, [0.5])
        oracle = np.empty_like(M)
        for n in range(d.n_obs):
            r = d.y[n] - 0.5 * d.x[n]
            for k in range(d.n_instruments):
                oracle[n, k] = r * d.Z[n, k]
        np.testing.assert_allclose(M, oracle, rtol=0, atol=1e-12)

    def test_theta_length_checked(self):
        with pytest.raises(ValueError):
            moment_matrix(LinearIVModel(1), _iv([1, 2], [1, 2], [[1], [1]]), [1.0, 2.0])

    def test_non_finite_output_raises(self):
        model = FunctionMomentModel(lambda d, n, th: np.array([np.inf]), param_dim=1,
                                    moment_dim=1)
        with pytest.raises(MomentEvaluationError):
            moment_matrix(model, _iv([1, 2], [1, 2], [[1], [1]]), [0.0])

    def test_wrong_output_length_raises(self):
        model = FunctionMomentModel(lambda d, n, th: np.zeros(3), param_dim=1, moment_dim=2)
        with pytest.raises(MomentEvaluationError):
            moment_matrix(model, _iv([1, 2], [1, 2], [[1], [1]]), [0.0])

    def test_function_model_agrees_with_linear_iv(self, rng):
        d = _iv(rng.normal(size=9), rng.normal(size=9), rng.normal(size=(9, 3)))
        fm = FunctionMomentModel(lambda data, n, th: (data.y[n] - th[0] * data.x[n]) * data.Z[n],
                                 param_dim=1, moment_dim=3)
        np.testing.assert_allclose(moment_matrix(fm, d, [0.3]),
                                   moment_matrix(LinearIVModel(3), d, [0.3]), atol=1e-14)


class TestMomentMean:
    def test_examples(self):
        np.testing.assert_array_equal(moment_mean(np.array([[1.0], [2.0]])), [1.5])
        np.testing.assert_array_equal(moment_mean(np.zeros((2, 2))), [0.0, 0.0])

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            moment_mean(np.zeros((0, 2)))

    def test_exactly_identified_root(self, rng):
        d = _iv(rng.normal(size=50), rng.normal(size=50) + 1.0, rng.normal(size=(50, 1)) + 2.0)
        root = (d.Z[:, 0] @ d.y) / (d.Z[:, 0] @ d.x)
        m = moment_mean(moment_matrix(LinearIVModel(1), d, [root]))
        assert abs(m[0]) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), gamma=st.floats(-10, 10))
def test_mean_is_linear_in_gamma(seed, gamma):
    r = np.random.default_rng(seed)
    d = _iv(r.normal(size=20), r.normal(size=20), r.normal(size=(20, 4)))
    model = LinearIVModel(4)
    lhs = model.mean(d, np.array([gamma]))
    rhs = model.mean(d, np.array([0.0])) - gamma * (d.Z.T @ d.x) / d.n_obs
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + abs(gamma)) * 10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mean_invariant_to_row_permutation(seed):
    r = np.random.default_rng(seed)
    d = _iv(r.normal(size=25), r.normal(size=25), r.normal(size=(25, 3)))
    perm = r.permutation(25)
    model = LinearIVModel(3)
    np.testing.assert_allclose(model.mean(d.take(perm), np.array([0.7])),
                               model.mean(d, np.array([0.7])), atol=1e-12)


class TestTsls:
    def test_perfect_instrument(self, rng):
        x = rng.normal(size=30)
        Z = np.column_stack([x, rng.normal(size=30)])
        assert tsls_estimate(_iv(0.5 * x, x, Z)) == pytest.approx(0.5, abs=1e-10)

    def test_degenerate_projection_raises(self):
        Z = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        x = np.array([1.0, 1.0, 1.0, 1.0])
        with pytest.raises(InitializerError):
            tsls_estimate(_iv([1, 2, 3, 4], x, Z))

    def test_normal_equations_oracle(self, draw_k50_seed7):
        d = draw_k50_seed7.data
        # from-scratch normal equations: xhat = Z (Z'Z)^-1 Z'x
        ZtZ = d.Z.T @ d.Z
        xhat = d.Z @ np.linalg.solve(ZtZ, d.Z.T @ d.x)
        oracle = (xhat @ d.y) / (xhat @ d.x)
        assert tsls_estimate(d) == pytest.approx(oracle, abs=1e-8)

    def test_rank_deficient_instruments(self, rng):
        x = rng.normal(size=40)
        z = x + 0.1 * rng.normal(size=40)
        Z = np.column_stack([z, 2 * z])
        y = 0.5 * x + 0.01 * rng.normal(size=40)
        assert np.isfinite(tsls_estimate(_iv(y, x, Z)))

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1),
           scales=st.lists(st.floats(0.1, 10), min_size=4, max_size=4))
    def test_invariant_to_column_scaling(self, seed, scales):
        r = np.random.default_rng(seed)
        Z = r.normal(size=(40, 4))
        x = Z @ np.ones(4) + r.normal(size=40)
        y = 0.5 * x + r.normal(size=40)
        base = tsls_estimate(_iv(y, x, Z))
        assert tsls_estimate(_iv(y, x, Z * np.array(scales))) == pytest.approx(base, abs=1e-8)
