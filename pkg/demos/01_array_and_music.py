"""Hybrid overlapped-subarray front end, its covariance and whitened MUSIC.

Run: python3 demos/01_array_and_music.py
"""

import numpy as np

from osadoa.array_model import ArrayConfig, build_beamformer
from osadoa.baselines import MusicConfig, music_estimate, music_spectrum
from osadoa.signal_sim import SimParams, exact_covariance, sample_covariance, simulate_snapshots

# 32 elements in 8-element subarrays that share 4 elements with their neighbour
osa = ArrayConfig.from_elements(32, 8, 4, theta0=60.0)
nosa = osa.with_overlap(0)
print(f"OSA: K={osa.K} RF chains, NOSA: K={nosa.K}; grid of L={osa.L} angles")

W = build_beamformer(osa, "random_uniform", seed=0)
G = W.gram
print("W^H W is banded: |G| first row =", np.round(np.abs(G[0]), 3))
# neighbouring chains share elements, so the combined noise is coloured

params = SimParams(snr_db=0.0, N=100, thetas=(-20.0, 10.1), seed=7)
C = exact_covariance(osa, W, params.thetas, params.sigma_s2).C
for N in (100, 1000, 10000):
    Ct = sample_covariance(simulate_snapshots(osa, W, SimParams(0.0, N, params.thetas, seed=7))).C
    print(f"N={N:5d}: ||C~ - C|| / ||C|| = {np.linalg.norm(Ct - C) / np.linalg.norm(C):.3f}")

Ct = sample_covariance(simulate_snapshots(osa, W, params)).C
for whiten in (False, True):
    est = music_estimate(Ct, W, osa, MusicConfig(Q=2, whiten=whiten))
    print(f"MUSIC whiten={whiten}: estimates {est} deg (truth -20, 10.1)")

spec = music_spectrum(Ct, W, osa, MusicConfig(Q=2))
db = 10 * np.log10(spec)
for theta, v in zip(osa.grid[::10], db[::10]):
    print(f"{theta:6.0f} deg {'#' * int(max(v + 40, 0))}")
