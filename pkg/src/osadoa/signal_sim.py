"""Snapshot simulation through the hybrid front end and covariance estimates.

Random streams come from numpy's PCG64 seeded through ``SeedSequence``.
Sub-streams (one per trial, sample, ...) are derived by :func:`derive_seed`
from a master seed and integer keys, so any batch can be regenerated in
isolation and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array_model import ArrayConfig, _check_angles, _steering, as_matrix
from .errors import DomainError, IdentifiabilityError

SNAPSHOT_STREAM = 0x534E4150  # "SNAP"


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def snr_to_power(snr_db: float, sigma_v2: float = 1.0) -> float:
    """Per-source signal power giving ``snr_db`` against noise power ``sigma_v2``."""
    return sigma_v2 * 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class SimParams:
    """Scenario for one snapshot batch.

    The SNR is per source and per antenna: ``sigma_s2 = sigma_v2 * 10**(snr_db/10)``.
    ``noise_only`` drops the source term while keeping ``thetas`` as metadata.
    """

    snr_db: float
    N: int
    thetas: tuple = ()
    seed: int = 0
    sigma_v2: float = 1.0
    noise_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(float(t) for t in np.atleast_1d(self.thetas)))
        if self.N < 1:
            raise DomainError("need at least one snapshot")
        if self.sigma_v2 <= 0:
            raise DomainError("noise power must be positive")

    @property
    def sigma_s2(self) -> float:
        return 0.0 if self.noise_only else snr_to_power(self.snr_db, self.sigma_v2)

    @property
    def Q(self) -> int:
        return len(self.thetas)


@dataclass(frozen=True)
class SnapshotBatch:
    Y: np.ndarray  # K x N
    params: SimParams
    w_seed: int | None = None


@dataclass(frozen=True)
class CovarianceEstimate:
    """A K x K covariance matrix, either exact (model) or sample (data)."""

    C: np.ndarray
    kind: str
    N: int | None = None
    meta: SimParams | None = field(default=None, repr=False)


def _validate_region(thetas, cfg: ArrayConfig):
    thetas = _check_angles(thetas) if len(thetas) else np.zeros(0)
    if np.any(np.abs(thetas) > cfg.theta0 + 1e-12):
        raise DomainError(f"angles {thetas.tolist()} outside [-{cfg.theta0}, {cfg.theta0}]")
    return thetas


def draw_sources_and_noise(cfg: ArrayConfig, params: SimParams):
    """Draw ``s`` (Q x N) and element noise ``v`` (M x N) for ``params.seed``.

    Both depend only on the seed and shapes, not on ``W``, so two front ends
    fed the same seed see identical impinging fields.
    """
    rng = np.random.default_rng(params.seed)
    Q, N = params.Q, params.N
    # CN(0, s2): real and imaginary parts each N(0, s2/2)
    s = rng.standard_normal((Q, N, 2)) @ np.array([1.0, 1j])
    v = rng.standard_normal((cfg.M, N, 2)) @ np.array([1.0, 1j])
    s *= np.sqrt(params.sigma_s2 / 2)
    v *= np.sqrt(params.sigma_v2 / 2)
    return s, v


def simulate_snapshots(cfg: ArrayConfig, W, params: SimParams) -> SnapshotBatch:
    """``y(n) = W^H A s(n) + W^H v(n)`` for ``n = 1..N``."""
    thetas = _validate_region(params.thetas, cfg)
    if len(thetas) >= cfg.K:
        raise IdentifiabilityError(f"Q={len(thetas)} sources need more than K={cfg.K} RF chains")
    Wm = as_matrix(W)
    s, v = draw_sources_and_noise(cfg, params)
    x = v if params.noise_only or len(thetas) == 0 else _steering(thetas, cfg) @ s + v
    return SnapshotBatch(Y=Wm.conj().T @ x, params=params, w_seed=getattr(W, "seed", None))


def exact_covariance(cfg: ArrayConfig, W, thetas, sigma_s2: float, sigma_v2: float = 1.0):
    """Model covariance ``W^H (A C_s A^H + sigma_v2 I) W`` with ``C_s = sigma_s2 I``."""
    thetas = _validate_region(thetas, cfg)
    Wm = as_matrix(W)
    C = sigma_v2 * (Wm.conj().T @ Wm)
    if len(thetas) and sigma_s2 != 0:
        At = Wm.conj().T @ _steering(thetas, cfg)
        C = C + sigma_s2 * (At @ At.conj().T)
    C = 0.5 * (C + C.conj().T)
    return CovarianceEstimate(C=C, kind="exact")


def sample_covariance(batch: SnapshotBatch) -> CovarianceEstimate:
    """``(1/N) sum_n y(n) y(n)^H``."""
    Y = np.asarray(batch.Y)
    if Y.ndim != 2 or Y.shape[1] == 0:
        raise DomainError("empty snapshot batch")
    C = Y @ Y.conj().T / Y.shape[1]
    C = 0.5 * (C + C.conj().T)
    return CovarianceEstimate(C=C, kind="sample", N=Y.shape[1], meta=batch.params)
