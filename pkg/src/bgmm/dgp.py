"""Factor-structure instrumental-variable data with known ground truth.

Instruments are Gaussian with covariance BB' + Psi^2 (S common factors plus
idiosyncratic noise). The first-stage coefficients are the population
projection of a random factor loading vector onto the instruments, and the
error variances are tied to the first-stage signal.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from bgmm.moments import Dataset, NumericalError

MAX_STRUCTURE_RETRIES = 100
MIN_SIGMA_X2 = 1e-12


@dataclass(frozen=True)
class DgpConfig:
    n_obs: int = 200
    n_instruments: int = 50
    n_factors: int = 3
    gamma: float = 0.5
    phi: float = 0.2
    snr_x: float = 2.0
    # accepted for completeness; the error-variance formula only uses snr_x
    snr_y: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < 2 or self.n_instruments < 1 or self.n_factors < 1:
            raise ValueError("need n_obs >= 2, n_instruments >= 1, n_factors >= 1")
        if self.snr_x <= 0 or self.snr_y <= 0:
            raise ValueError("signal-to-noise controls must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpConfig":
        aliases = {"N": "n_obs", "K": "n_instruments", "S": "n_factors"}
        return cls(**{aliases.get(k, k): v for k, v in d.items()})


@dataclass(frozen=True)
class Structure:
    B: np.ndarray       # K x S loadings
    psi: np.ndarray     # K idiosyncratic scales; Psi = diag(psi)
    eta: np.ndarray     # S
    A: np.ndarray       # S x K
    delta: np.ndarray   # K first-stage coefficients

    @property
    def covariance(self) -> np.ndarray:
        return self.B @ self.B.T + np.diag(self.psi ** 2)


@dataclass(frozen=True)
class DgpDraw:
    data: Dataset
    structure: Structure
    sigma_x2: float
    sigma_y2: float
    gamma_true: float
    w: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)

    def truth(self) -> dict:
        return {"gamma_true": self.gamma_true, "sigma_x2": self.sigma_x2, "sigma_y2": self.sigma_y2}


def structure_from_draws(B, psi, eta) -> Structure:
    """A = B'(BB' + Psi^2)^-1 and delta = A'eta for given draws."""
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    psi = np.asarray(psi, dtype=np.float64).reshape(-1)
    eta = np.asarray(eta, dtype=np.float64).reshape(-1)
    C = B @ B.T + np.diag(psi ** 2)
    # C is symmetric, so A' = C^-1 B
    try:
        At = np.linalg.solve(C, B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("instrument covariance is singular") from exc
    A = At.T
    return Structure(B=B, psi=psi, eta=eta, A=A, delta=At @ eta)


def generate_structure(cfg: DgpConfig, rng: np.random.Generator) -> Structure:
    """Draw b_ks ~ U(0,1), psi_k ~ U(2,4), eta_s ~ U(0,1) and derive delta."""
    K, S = cfg.n_instruments, cfg.n_factors
    B = rng.uniform(0.0, 1.0, size=(K, S))
    psi = rng.uniform(2.0, 4.0, size=K)
    eta = rng.uniform(0.0, 1.0, size=S)
    return structure_from_draws(B, psi, eta)


def noise_variances(cfg: DgpConfig, structure: Structure) -> tuple[float, float]:
    """(sigma_x^2, sigma_y^2) from the first-stage signal variance."""
    delta = structure.delta
    sigma_x2 = float(delta @ structure.covariance @ delta)
    factor = cfg.gamma ** 2 * (1.0 + cfg.snr_x ** 2) + cfg.phi ** 2 * cfg.snr_x ** 2
    return sigma_x2, factor * sigma_x2


def draw_instruments(structure: Structure, n_obs: int, rng: np.random.Generator) -> np.ndarray:
    """z_n = B f_n + Psi e_n with standard-normal f_n, e_n."""
    K, S = structure.B.shape
    f = rng.standard_normal((n_obs, S))
    e = rng.standard_normal((n_obs, K))
    return f @ structure.B.T + e * structure.psi


def assemble(Z, delta, gamma, phi, w, u) -> Dataset:
    """x = Z delta + w;  y = gamma x + phi (x - Z delta) + u."""
    signal = Z @ delta
    x = signal + w
    y = gamma * x + phi * (x - signal) + u
    return Dataset(y, x, Z)


def generate_dataset(cfg: DgpConfig, rng: np.random.Generator | None = None) -> DgpDraw:
    """One dataset; seeded from ``cfg.seed`` when ``rng`` is None."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    for _ in range(MAX_STRUCTURE_RETRIES):
        structure = generate_structure(cfg, rng)
        sigma_x2, sigma_y2 = noise_variances(cfg, structure)
        if sigma_x2 >= MIN_SIGMA_X2:
            break
    else:
        raise NumericalError("could not draw a non-degenerate structure")
    Z = draw_instruments(structure, cfg.n_obs, rng)
    w = rng.normal(0.0, np.sqrt(sigma_x2), size=cfg.n_obs)
    u = rng.normal(0.0, np.sqrt(sigma_y2), size=cfg.n_obs)
    data = assemble(Z, structure.delta, cfg.gamma, cfg.phi, w, u)
    return DgpDraw(data, structure, sigma_x2, sigma_y2, cfg.gamma, w, u)
