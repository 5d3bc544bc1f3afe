"""Grid-search MUSIC on the combined (K-dimensional) covariance.

With overlapped subarrays the post-combining noise covariance is
``sigma_v2 * W^H W``, which is not white. By default the covariance and the
virtual steering vectors are whitened with ``(W^H W)^{-1/2}`` first.
Steering vectors are unit-normalized before projection, so the spectrum is
``||a||^2 / ||E_n^H a||^2``: the beam gain of a random-phase combiner varies
strongly with angle and would otherwise bias the search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .array_model import ArrayConfig, _steering, as_matrix
from .errors import DomainError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MusicConfig:
    Q: int = 1
    whiten: bool = True


def inv_sqrt_hermitian(G) -> np.ndarray:
    vals, vecs = np.linalg.eigh(G)
    if vals.min() <= 0:
        raise DomainError("W^H W is singular; cannot whiten")
    return (vecs / np.sqrt(vals)) @ vecs.conj().T


def _virtual_grid(W, cfg: ArrayConfig):
    return as_matrix(W).conj().T @ _steering(cfg.grid, cfg)


def music_spectrum(C, W, cfg: ArrayConfig, mcfg: MusicConfig) -> np.ndarray:
    """Pseudo-spectrum over ``cfg.grid``, scaled to a maximum of 1."""
    C = np.asarray(getattr(C, "C", C))
    K = cfg.K
    if C.shape != (K, K):
        raise DomainError(f"covariance has shape {C.shape}, expected {(K, K)}")
    if not 0 <= mcfg.Q < K:
        raise DomainError(f"MUSIC needs 0 <= Q < K={K}, got Q={mcfg.Q}")
    B = _virtual_grid(W, cfg)
    if mcfg.whiten:
        T = inv_sqrt_hermitian(as_matrix(W).conj().T @ as_matrix(W))
        C = T @ C @ T
        B = T @ B
    C = 0.5 * (C + C.conj().T)
    vals, vecs = np.linalg.eigh(C)  # ascending
    n_noise = K - mcfg.Q
    if mcfg.Q and n_noise < K and np.isclose(vals[n_noise - 1], vals[n_noise], rtol=1e-12):
        log.info("eigenvalue tie at the noise/signal boundary; split by index")
    En = vecs[:, :n_noise]
    B = B / np.linalg.norm(B, axis=0)
    proj = np.sum(np.abs(En.conj().T @ B) ** 2, axis=0)
    spec = 1.0 / np.maximum(proj, np.finfo(float).tiny)
    return spec / spec.max()


def local_maxima(spec) -> np.ndarray:
    """Indices strictly above both neighbours; endpoints need only one."""
    spec = np.asarray(spec)
    if len(spec) == 1:
        return np.array([0])
    left = np.r_[True, spec[1:] > spec[:-1]]
    right = np.r_[spec[:-1] > spec[1:], True]
    return np.flatnonzero(left & right)


def pick_peaks(spec, Q) -> np.ndarray:
    """Grid indices of the ``Q`` largest local maxima, topped up with the
    largest remaining values if there are fewer maxima; ascending."""
    peaks = local_maxima(spec)
    chosen = list(peaks[np.argsort(-spec[peaks], kind="stable")][:Q])
    if len(chosen) < Q:
        for i in np.argsort(-spec, kind="stable"):
            if i not in chosen:
                chosen.append(i)
            if len(chosen) == Q:
                break
    return np.sort(np.array(chosen, dtype=int))


def music_estimate(C, W, cfg: ArrayConfig, mcfg: MusicConfig) -> np.ndarray:
    spec = music_spectrum(C, W, cfg, mcfg)
    return cfg.grid[pick_peaks(spec, mcfg.Q)]
