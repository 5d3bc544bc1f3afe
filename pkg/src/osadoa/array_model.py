"""Uniform linear array with an overlapped-subarray hybrid front end.

The array has ``M`` elements split into ``K`` subarrays of ``Ms`` elements;
adjacent subarrays share ``dMs`` elements, so ``M = K*Ms - (K-1)*dMs``.
Each subarray drives one RF chain through unit-modulus phase shifters,
which gives the ``M x K`` analog combiner ``W``.

Angles are in degrees at every public entry point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

PHASE_POLICIES = ("random_uniform", "all_zero", "user_supplied")


@dataclass(frozen=True)
class ArrayConfig:
    """Geometry and partition of the hybrid receive array.

    Parameters
    ----------
    M : int
        Number of antenna elements.
    Ms : int
        Elements per subarray.
    dMs : int
        Elements shared by two adjacent subarrays (0 gives NOSA).
    K : int
        Number of subarrays, i.e. RF chains.
    d, lam : float
        Element spacing and wavelength, in the same unit.
    theta0 : float
        Half-width of the angular search region in degrees.
    dtheta : float
        Grid step in degrees.
    """

    M: int
    Ms: int
    dMs: int
    K: int
    d: float = 0.5
    lam: float = 1.0
    theta0: float = 90.0
    dtheta: float = 1.0

    def __post_init__(self):
        if self.K < 1 or self.Ms < 1:
            raise DomainError(f"need K >= 1 and Ms >= 1, got K={self.K}, Ms={self.Ms}")
        if not 0 <= self.dMs < self.Ms:
            raise DomainError(f"need 0 <= dMs < Ms, got dMs={self.dMs}, Ms={self.Ms}")
        expected = self.K * self.Ms - (self.K - 1) * self.dMs
        if self.M != expected:
            raise DomainError(
                f"M={self.M} inconsistent with K={self.K}, Ms={self.Ms}, dMs={self.dMs} "
                f"(expected M={expected})"
            )
        if self.d <= 0 or self.lam <= 0:
            raise DomainError("element spacing and wavelength must be positive")
        if not 0 < self.theta0 <= 90 or self.dtheta <= 0:
            raise DomainError("need 0 < theta0 <= 90 and dtheta > 0")
        n_steps = 2 * self.theta0 / self.dtheta
        if abs(n_steps - round(n_steps)) > 1e-9:
            raise DomainError("2*theta0 must be an integer multiple of dtheta")

    @classmethod
    def from_elements(cls, M, Ms, dMs, **kw) -> "ArrayConfig":
        """Build a config from the element count, deriving K."""
        step = Ms - dMs
        if step <= 0 or (M - dMs) % step:
            raise DomainError(f"M={M} cannot be tiled by subarrays of Ms={Ms}, dMs={dMs}")
        return cls(M=M, Ms=Ms, dMs=dMs, K=(M - dMs) // step, **kw)

    @property
    def stride(self) -> int:
        """Row offset between the first elements of adjacent subarrays."""
        return self.Ms - self.dMs

    @property
    def L(self) -> int:
        return int(round(2 * self.theta0 / self.dtheta)) + 1

    @property
    def grid(self) -> np.ndarray:
        """Label grid angles in degrees, ascending."""
        return -self.theta0 + self.dtheta * np.arange(self.L)

    def with_overlap(self, dMs: int) -> "ArrayConfig":
        """Same element count and subarray size with a different overlap."""
        return ArrayConfig.from_elements(
            self.M, self.Ms, dMs, d=self.d, lam=self.lam, theta0=self.theta0, dtheta=self.dtheta
        )


def _check_angles(thetas):
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if not np.all(np.isfinite(thetas)) or np.any(np.abs(thetas) > 90):
        raise DomainError(f"angles must lie in [-90, 90] degrees, got {thetas.tolist()}")
    return thetas


def _steering(thetas_deg, cfg: ArrayConfig) -> np.ndarray:
    # unchecked, vectorized: M x len(thetas)
    m = np.arange(cfg.M)[:, None]
    phase = 2 * np.pi / cfg.lam * cfg.d * m * np.sin(np.deg2rad(thetas_deg))[None, :]
    return np.exp(1j * phase)


def steering_vector(theta, cfg: ArrayConfig) -> np.ndarray:
    """Far-field ULA response ``a(theta)``; element 0 is the phase reference."""
    thetas = _check_angles(theta)
    if thetas.size != 1:
        raise DomainError("steering_vector takes a single angle")
    return _steering(thetas, cfg)[:, 0]


def steering_matrix(thetas, cfg: ArrayConfig) -> np.ndarray:
    """Stack steering vectors column-wise, ``A = [a(theta_1), ..., a(theta_Q)]``."""
    thetas = _check_angles(thetas)
    if len(np.unique(thetas)) != len(thetas):
        raise DomainError(f"duplicate source angles {thetas.tolist()} make A rank deficient")
    return _steering(thetas, cfg)


def subarray_rows(k: int, cfg: ArrayConfig) -> range:
    """0-based row range selected by ``J_k`` for the 1-based subarray ``k``."""
    if not 1 <= k <= cfg.K:
        raise DomainError(f"subarray index {k} outside 1..{cfg.K}")
    start = (k - 1) * cfg.stride
    return range(start, start + cfg.Ms)


@dataclass(frozen=True)
class BeamformerMatrix:
    """Analog combiner ``W`` (M x K) and the phases that generated it."""

    W: np.ndarray
    phases: np.ndarray
    seed: int | None = None
    policy: str = "random_uniform"
    cfg: ArrayConfig | None = field(default=None, repr=False)

    @property
    def gram(self) -> np.ndarray:
        """``W^H W``; the identity for non-overlapped partitions."""
        return self.W.conj().T @ self.W


def build_beamformer(cfg: ArrayConfig, phase_policy="random_uniform", seed=0, phases=None):
    """Assemble the block-banded phase-shifter matrix.

    Column ``k`` is non-zero only on the rows of subarray ``k`` and every
    non-zero entry is ``exp(j*alpha)/sqrt(Ms)``. ``random_uniform`` draws
    ``alpha ~ U[0, 2*pi)`` from ``numpy.random.default_rng(seed)`` (PCG64).
    """
    if phase_policy not in PHASE_POLICIES:
        raise DomainError(f"unknown phase policy {phase_policy!r}")
    if phase_policy == "random_uniform":
        alpha = np.random.default_rng(seed).uniform(0.0, 2 * np.pi, size=(cfg.K, cfg.Ms))
    elif phase_policy == "all_zero":
        alpha = np.zeros((cfg.K, cfg.Ms))
        seed = None
    else:
        if phases is None:
            raise DomainError("user_supplied policy needs a phases array")
        alpha = np.asarray(phases, dtype=float)
        if alpha.shape != (cfg.K, cfg.Ms):
            raise DomainError(f"phases must have shape {(cfg.K, cfg.Ms)}, got {alpha.shape}")
        seed = None

    W = np.zeros((cfg.M, cfg.K), dtype=complex)
    for k in range(cfg.K):
        rows = subarray_rows(k + 1, cfg)
        W[rows.start : rows.stop, k] = np.exp(1j * alpha[k]) / np.sqrt(cfg.Ms)
    W.setflags(write=False)
    alpha.setflags(write=False)
    return BeamformerMatrix(W=W, phases=alpha, seed=seed, policy=phase_policy, cfg=cfg)


def as_matrix(W) -> np.ndarray:
    """Accept either a :class:`BeamformerMatrix` or a bare array."""
    return np.asarray(getattr(W, "W", W))


def virtual_steering(theta, W, cfg: ArrayConfig) -> np.ndarray:
    """Steering vector seen after analog combining, ``W^H a(theta)`` (length K)."""
    W = as_matrix(W)
    if W.shape != (cfg.M, cfg.K):
        raise DomainError(f"W has shape {W.shape}, expected {(cfg.M, cfg.K)}")
    return W.conj().T @ steering_vector(theta, cfg)
