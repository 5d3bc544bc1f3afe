"""Stochastic-signal Cramer-Rao bound for the hybrid overlapped-subarray array.

Only the DOAs are unknown; the source covariance ``C_s`` and the noise power
are treated as known ("known-C_s CRLB"). All derivatives are taken with
respect to angles in radians.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .array_model import ArrayConfig, _check_angles, _steering, as_matrix
from .errors import DomainError, UnidentifiableError
from .signal_sim import exact_covariance

log = logging.getLogger(__name__)

RAD2_TO_DEG2 = (180.0 / np.pi) ** 2
MAX_CONDITION = 1e12


def steering_derivative(theta, cfg: ArrayConfig) -> np.ndarray:
    """``d a(theta) / d theta`` (per radian): element m is ``j (2 pi/lam) m d cos(theta) a_m``."""
    (theta,) = _check_angles(theta)
    if abs(theta) == 90:
        warnings.warn("steering derivative vanishes at +/-90 deg; the FIM may be singular",
                      RuntimeWarning, stacklevel=2)
    m = np.arange(cfg.M)
    scale = 1j * 2 * np.pi / cfg.lam * m * cfg.d * np.cos(np.deg2rad(theta))
    return scale * _steering([theta], cfg)[:, 0]


def _source_cov(Q, sigma_s2, Cs):
    return sigma_s2 * np.eye(Q) if Cs is None else np.asarray(Cs, dtype=complex)


def derivative_matrix(thetas, cfg: ArrayConfig) -> np.ndarray:
    """``D = sum_q D_q``: column q holds ``d_q a(theta_q)``."""
    return np.stack([steering_derivative(t, cfg) for t in np.atleast_1d(thetas)], axis=1)


def partial_covariance(q, cfg: ArrayConfig, W, thetas, sigma_s2, Cs=None) -> np.ndarray:
    """``dC/dtheta_q = W^H D_q C_s At^H + At C_s D_q^H W`` with ``At = W^H A``.

    ``q`` is 0-based.
    """
    thetas = _check_angles(thetas)
    Q = len(thetas)
    if not 0 <= q < Q:
        raise DomainError(f"source index {q} outside 0..{Q - 1}")
    Wm = as_matrix(W)
    At = Wm.conj().T @ _steering(thetas, cfg)
    Dq = np.zeros((cfg.M, Q), dtype=complex)
    Dq[:, q] = steering_derivative(thetas[q], cfg)
    X = Wm.conj().T @ Dq @ _source_cov(Q, sigma_s2, Cs) @ At.conj().T
    return X + X.conj().T


@dataclass(frozen=True)
class FisherInformation:
    F: np.ndarray  # element-wise trace form
    F_assembled: np.ndarray  # Hadamard-product form
    thetas: tuple
    sigma_s2: float
    sigma_v2: float

    @property
    def Q(self) -> int:
        return len(self.thetas)


def fisher_matrix(cfg: ArrayConfig, W, thetas, sigma_s2, sigma_v2=1.0, Cs=None,
                  rtol=1e-6) -> FisherInformation:
    """FIM of the DOAs for one snapshot, computed two independent ways.

    ``F[p,q] = tr(C^-1 dC_p C^-1 dC_q)`` is evaluated directly; the
    Hadamard form ``2 Re{(G o G^T) + (C_s At^H C^-1 At C_s) o (D^H W C^-1 W^H D)^T}``
    with ``G = C_s At^H C^-1 W^H D`` is evaluated alongside, and a mismatch
    beyond ``rtol`` raises.
    """
    thetas = _check_angles(thetas)
    Q = len(thetas)
    Wm = as_matrix(W)
    C = exact_covariance(cfg, Wm, thetas, sigma_s2, sigma_v2).C
    if np.linalg.cond(C) > MAX_CONDITION:
        raise UnidentifiableError("covariance is singular; need sigma_v2 > 0")
    broadside = 2 * np.pi / cfg.lam * cfg.d * np.linalg.norm(np.arange(cfg.M))
    flat = [t for t in thetas if np.linalg.norm(steering_derivative(t, cfg)) < 1e-9 * broadside]
    if flat:
        raise UnidentifiableError(f"steering derivative vanishes at {flat} deg")
    Ci = np.linalg.inv(C)
    Ci = 0.5 * (Ci + Ci.conj().T)

    dC = [partial_covariance(q, cfg, Wm, thetas, sigma_s2, Cs) for q in range(Q)]
    CidC = [Ci @ d for d in dC]
    F = np.empty((Q, Q))
    for p in range(Q):
        for q in range(Q):
            F[p, q] = np.trace(CidC[p] @ CidC[q]).real

    Csrc = _source_cov(Q, sigma_s2, Cs)
    At = Wm.conj().T @ _steering(thetas, cfg)
    WD = Wm.conj().T @ derivative_matrix(thetas, cfg)
    G = Csrc @ At.conj().T @ Ci @ WD
    H1 = Csrc @ At.conj().T @ Ci @ At @ Csrc
    H2 = WD.conj().T @ Ci @ WD
    Fa = 2 * np.real(G * G.T + H1 * H2.T)

    scale = max(np.abs(F).max(), np.finfo(float).tiny)
    if np.abs(F - Fa).max() > rtol * scale:
        raise ArithmeticError(f"trace and Hadamard FIM forms disagree: {F} vs {Fa}")
    F = 0.5 * (F + F.T)
    return FisherInformation(F=F, F_assembled=Fa, thetas=tuple(thetas),
                             sigma_s2=float(sigma_s2), sigma_v2=float(sigma_v2))


@dataclass(frozen=True)
class CrlbResult:
    matrix_rad2: np.ndarray
    N: int
    cond_F: float

    @property
    def matrix_deg2(self) -> np.ndarray:
        return self.matrix_rad2 * RAD2_TO_DEG2

    @property
    def per_source_deg2(self) -> np.ndarray:
        return np.diag(self.matrix_deg2).copy()

    @property
    def per_source_rad2(self) -> np.ndarray:
        return np.diag(self.matrix_rad2).copy()

    @property
    def rmse_bound_deg(self) -> float:
        """``sqrt(mean diag)`` in degrees, comparable to a per-source RMSE."""
        return float(np.sqrt(np.mean(self.per_source_deg2)))


def crlb(F, N: int) -> CrlbResult:
    """``F^-1 / N`` for ``N`` independent snapshots."""
    Fm = np.asarray(getattr(F, "F", F), dtype=float)
    if N < 1:
        raise DomainError("need N >= 1")
    cond = float(np.linalg.cond(Fm))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        thetas = getattr(F, "thetas", None)
        raise UnidentifiableError(
            f"Fisher information is singular (cond={cond:.3g}) for sources at {thetas} deg"
        )
    log.debug("FIM condition number %.3g", cond)
    Finv = np.linalg.solve(Fm, np.eye(len(Fm)))
    Finv = 0.5 * (Finv + Finv.T)
    return CrlbResult(matrix_rad2=Finv / N, N=int(N), cond_F=cond)
