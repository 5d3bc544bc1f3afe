"""Acceptance criteria 1-9 on the scaled desk configuration.

Each test prints one ``CRITERION n: PASS|FAIL`` line (also collected in the
terminal summary) and then asserts the verdict. Runtime budgets are part of
the verdict; time spent training the shared toy model counts towards every
criterion that uses it.
"""

import time

import numpy as np
import pytest

from osadoa.array_model import build_beamformer, steering_vector
from osadoa.baselines import MusicConfig, music_estimate, music_spectrum
from osadoa.bench import Scenario, run_rmse_vs_snr
from osadoa.cdae_dnn import (
    TOY_CDAE_HYPER,
    TOY_FC,
    TOY_FC_HYPER,
    CdaeArch,
    build_cdae,
    build_fc,
    denoise_ratio,
    train_cdae,
    train_fc,
)
from osadoa.cli import main
from osadoa.crlb import crlb, fisher_matrix, partial_covariance, steering_derivative
from osadoa.dataset import DatasetSpec, generate_dataset
from osadoa.nn import (
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    ReLU,
    Sequential,
    Sigmoid,
    TransposedConv2d,
    bce_loss,
    grad_check,
    mse_loss,
)
from osadoa.signal_sim import (
    SimParams,
    derive_seed,
    exact_covariance,
    sample_covariance,
    simulate_snapshots,
    snr_to_power,
)

pytestmark = pytest.mark.slow

TRIALS = 200


def rel_fro(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


@pytest.fixture(scope="module")
def toy(cfg, W):
    """CDAE-DNN trained once on the desk recipe; reused by criteria 5-7."""
    t0 = time.perf_counter()
    ds = generate_dataset(DatasetSpec(snr_db=(), snr_range=(-20.0, 10.0), reps=20, seed=1), cfg, W)
    val = generate_dataset(DatasetSpec(snr_db=(), snr_range=(-20.0, 10.0), reps=2, seed=2), cfg, W)
    cdae = build_cdae(CdaeArch(), cfg.K, seed=0, dtype=np.float32)
    cdae_report = train_cdae(cdae, ds, TOY_CDAE_HYPER, val)
    fc = build_fc(TOY_FC, cfg.K, cfg.L, seed=0, dtype=np.float32)
    train_fc(fc, cdae, ds, TOY_FC_HYPER, val)
    return {"cdae": cdae, "fc": fc, "train": ds, "val": val, "report": cdae_report,
            "seconds": time.perf_counter() - t0}


# 1 ---------------------------------------------------------------------------

def _layer_check(layer, in_shape, tol, rng, loss=mse_loss, target=None, scale=1.0):
    model = Sequential([layer], in_shape).init(0, np.float64)
    x = scale * rng.standard_normal((3,) + in_shape)
    if target is None:
        target = rng.standard_normal((3,) + model.output_shape)
    return grad_check(model, loss, x, target), tol


def _loss_check(loss, pred, target, h=1e-6):
    _, g = loss(pred, target)
    fd = np.empty(pred.size)
    flat = pred.reshape(-1)
    for i in range(pred.size):
        old = flat[i]
        flat[i] = old + h
        lp, _ = loss(pred, target)
        flat[i] = old - h
        lm, _ = loss(pred, target)
        flat[i] = old
        fd[i] = (lp - lm) / (2 * h)
    return rel_fro(g.reshape(-1), fd)


def test_criterion_1_gradient_suite(cfg, criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    K, L = cfg.K, cfg.L
    errors = {}
    checks = {
        "conv": (Conv2d(2, 4), (2, K, K), 1e-4),
        "conv_strided": (Conv2d(2, 3, stride=2, padding=1), (2, K, K), 1e-4),
        "tconv": (TransposedConv2d(4, 2), (4, K, K), 1e-4),
        "tconv_strided": (TransposedConv2d(3, 2, stride=2, padding=1), (3, 4, 4), 1e-4),
        "batchnorm": (BatchNorm(3), (3, K, K), 1e-4),
        "dense": (Dense(12, 5), (12,), 1e-6),
        "relu": (ReLU(), (10,), 1e-6),
        "sigmoid": (Sigmoid(), (10,), 1e-6),
        "dropout": (Dropout(0.2), (10,), 1e-6),
        "flatten": (Flatten(), (2, 3, 3), 1e-6),
    }
    limits = {}
    for name, (layer, shape, tol) in checks.items():
        rep, limits[name] = _layer_check(layer, shape, tol, rng)
        errors[name] = rep.max_rel_error
    pred = rng.standard_normal((4, 2, K, K))
    errors["mse_loss"] = _loss_check(mse_loss, pred, rng.standard_normal(pred.shape))
    p = rng.uniform(0.05, 0.95, (4, L))
    errors["bce_loss"] = _loss_check(bce_loss, p, (rng.random((4, L)) < 0.05).astype(float))
    limits["mse_loss"] = limits["bce_loss"] = 1e-6

    # composed models at the toy size K = 7
    cdae = build_cdae(CdaeArch(), K, seed=0, dtype=np.float64)
    x = rng.standard_normal((4, 2, K, K))
    target = cdae.forward(x, True) + 0.1 * rng.standard_normal(x.shape)
    errors["cdae"] = grad_check(cdae, mse_loss, x, target, max_coords=20).max_rel_error
    fc = build_fc(TOY_FC, K, L, seed=0, dtype=np.float64)
    z = (rng.random((4, L)) < 0.05).astype(float)
    errors["fc"] = grad_check(fc, bce_loss, 0.1 * x, z, max_coords=20).max_rel_error
    limits["cdae"], limits["fc"] = 1e-4, 1e-6

    seconds = time.perf_counter() - t0
    bad = {k: v for k, v in errors.items() if v >= limits[k]}
    worst = max(errors, key=lambda k: errors[k] / limits[k])
    ok = criterion(1, not bad and seconds < 120,
                   f"{len(errors)} checks, worst {worst} {errors[worst]:.2e} "
                   f"(tol {limits[worst]:.0e}), failing {sorted(bad)}, {seconds:.1f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_criterion_2_covariance_oracle(cfg, W, criterion):
    t0 = time.perf_counter()
    params = SimParams(snr_db=0.0, N=100_000, thetas=(-20.3, 35.7), seed=21)
    exact = exact_covariance(cfg, W, params.thetas, params.sigma_s2).C
    acc = np.zeros_like(exact)
    chunks = 10
    for i in range(chunks):
        p = SimParams(params.snr_db, params.N, params.thetas, seed=derive_seed(params.seed, i))
        Y = simulate_snapshots(cfg, W, p).Y
        acc += Y @ Y.conj().T
    mc_err = rel_fro(acc / (chunks * params.N), exact)

    med = {}
    for N in (100, 400, 1600):
        errs = [rel_fro(sample_covariance(simulate_snapshots(
                    cfg, W, SimParams(0.0, N, params.thetas, seed=derive_seed(22, N, s)))).C, exact)
                for s in range(20)]
        med[N] = float(np.median(errs))
    ratios = [med[100] / med[400], med[400] / med[1600]]
    seconds = time.perf_counter() - t0
    scaling_ok = all(2 / 1.5 <= r <= 2 * 1.5 for r in ratios)
    ok = criterion(2, mc_err < 0.01 and scaling_ok and seconds < 180,
                   f"1e6-snapshot error {mc_err:.2e}, median error ratios "
                   f"{ratios[0]:.2f} {ratios[1]:.2f} (expect 2 within x1.5), {seconds:.1f}s")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_crlb_suite(cfg, criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(33)
    h = 1e-6  # degrees
    dc_err, form_err, scale_err, psd_ok = 0.0, 0.0, 0.0, True
    for trial in range(20):
        W = build_beamformer(cfg, "random_uniform", derive_seed(33, trial))
        a = rng.uniform(-55, 45)
        thetas = [a, a + rng.uniform(3, 15)]
        s2 = snr_to_power(rng.uniform(-15, 15))
        for q in range(2):
            up, dn = list(thetas), list(thetas)
            up[q] += h
            dn[q] -= h
            fd = (exact_covariance(cfg, W, up, s2).C - exact_covariance(cfg, W, dn, s2).C) / (
                2 * np.deg2rad(h))
            dc_err = max(dc_err, rel_fro(partial_covariance(q, cfg, W, thetas, s2), fd))
        fd_a = (steering_vector(a + h, cfg) - steering_vector(a - h, cfg)) / (2 * np.deg2rad(h))
        dc_err = max(dc_err, rel_fro(steering_derivative(a, cfg), fd_a))
        fim = fisher_matrix(cfg, W, thetas, s2, rtol=1e-8)
        form_err = max(form_err, rel_fro(fim.F_assembled, fim.F))
        b1, b2 = crlb(fim, 100), crlb(fim, 200)
        scale_err = max(scale_err, rel_fro(b2.matrix_rad2, b1.matrix_rad2 / 2))
        psd_ok &= bool(np.array_equal(fim.F, fim.F.T)
                       and np.linalg.eigvalsh(fim.F).min() >= -1e-12 * np.abs(fim.F).max())
    seconds = time.perf_counter() - t0
    ok = criterion(3, dc_err < 1e-6 and form_err < 1e-8 and scale_err < 1e-14 and psd_ok
                   and seconds < 60,
                   f"dC/dtheta vs FD {dc_err:.1e}, FIM forms {form_err:.1e}, "
                   f"CRLB(2N) vs CRLB(N)/2 {scale_err:.1e}, symmetric PSD {psd_ok}, {seconds:.1f}s")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_criterion_4_music_oracle(cfg, W, criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    s2 = snr_to_power(0.0)
    misses = 0
    cases = [(t,) for t in cfg.grid]
    for _ in range(100):
        i, j = sorted(rng.choice(cfg.L, 2, replace=False))
        cases.append((cfg.grid[i], cfg.grid[j]))
    for thetas in cases:
        C = exact_covariance(cfg, W, thetas, s2).C
        est = music_estimate(C, W, cfg, MusicConfig(Q=len(thetas), whiten=True))
        misses += int(not np.array_equal(est, thetas))
    flat = music_spectrum(exact_covariance(cfg, W, (), 0.0).C, W, cfg, MusicConfig(Q=0))
    flat_dev = float(np.abs(flat - 1).max())
    seconds = time.perf_counter() - t0
    ok = criterion(4, misses == 0 and flat_dev < 1e-6 and seconds < 60,
                   f"{misses} of {len(cases)} on-grid cases missed, noise-only spectrum "
                   f"deviation {flat_dev:.1e}, {seconds:.1f}s")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_5_grid_floor(cfg, toy, criterion):
    t0 = time.perf_counter()
    sc = Scenario(cfg=cfg, sweep=(10.0,), estimators=("cdae_dnn", "music_whitened"),
                  trials=TRIALS, truth=(10.1,), seed=5, N=100,
                  models={"osa": (toy["cdae"], toy["fc"])})
    table = run_rmse_vs_snr(sc)
    music = float(table.rmse("music_whitened")[0])
    net = float(table.rmse("cdae_dnn")[0])
    seconds = time.perf_counter() - t0 + toy["seconds"]
    ok = criterion(5, 0.1 - 1e-9 <= music <= 0.15 and 0.1 - 1e-9 <= net <= 0.3 and seconds < 600,
                   f"10.1 deg at 10 dB: MUSIC {music:.3f}, CDAE-DNN {net:.3f} deg "
                   f"over {TRIALS} trials, {seconds:.0f}s with training")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_denoising_gain(toy, criterion):
    t0 = time.perf_counter()
    ratio = denoise_ratio(toy["cdae"], toy["val"])
    med = float(np.median(ratio))
    seconds = time.perf_counter() - t0 + toy["seconds"]
    n = len(toy["train"])
    ok = criterion(6, n >= 2000 and med < 0.9 and seconds < 600,
                   f"median validation ratio {med:.3f} on {len(ratio)} samples "
                   f"after training on {n}, {seconds:.0f}s with training")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_low_snr_trend(cfg, toy, criterion):
    t0 = time.perf_counter()
    lowest = -20.0
    results = []
    for seed in range(5):
        sc = Scenario(cfg=cfg, sweep=(lowest,), estimators=("cdae_dnn", "music_whitened"),
                      trials=TRIALS, truth=(10.1,), seed=100 + seed, N=100,
                      models={"osa": (toy["cdae"], toy["fc"])}, with_crlb=False)
        table = run_rmse_vs_snr(sc)
        results.append((float(table.rmse("cdae_dnn")[0]), float(table.rmse("music_whitened")[0])))
    wins = sum(net <= music for net, music in results)
    seconds = time.perf_counter() - t0 + toy["seconds"]
    pairs = ", ".join(f"{n:.1f}/{m:.1f}" for n, m in results)
    ok = criterion(7, wins >= 4 and seconds < 1200,
                   f"{lowest:g} dB, CDAE-DNN/MUSIC RMSE per seed: {pairs} deg; "
                   f"CDAE-DNN <= MUSIC in {wins} of 5 (need 4), {seconds:.0f}s with training")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_8_osa_vs_nosa(cfg, cfg_nosa, criterion):
    t0 = time.perf_counter()
    def crlb_wins(snr_db):
        s2, wins = snr_to_power(snr_db), 0
        for seed in range(50):
            osa = crlb(fisher_matrix(cfg, build_beamformer(cfg, "random_uniform", seed),
                                     [10.0], s2), 100)
            nosa = crlb(fisher_matrix(cfg_nosa, build_beamformer(cfg_nosa, "random_uniform", seed),
                                      [10.0], s2), 100)
            wins += int(osa.per_source_deg2[0] <= nosa.per_source_deg2[0])
        return wins

    # evaluated at the fixed-SNR operating point; other SNRs are reported only
    better = crlb_wins(-13.0)
    others = {snr: crlb_wins(snr) for snr in (-20.0, -10.0, 0.0, 10.0)}

    snrs = (0.0, 5.0, 10.0)
    runs = []
    for seed in range(5):
        sc = Scenario(cfg=cfg, sweep=snrs, estimators=("music_whitened",),
                      architectures=("osa", "nosa"), trials=TRIALS, truth=(10.1,),
                      seed=200 + seed, w_seed=seed, N=100, with_crlb=False)
        table = run_rmse_vs_snr(sc)
        runs.append((table.rmse("music_whitened", "osa"), table.rmse("music_whitened", "nosa")))
    med_osa = np.median([r[0] for r in runs], axis=0)
    med_nosa = np.median([r[1] for r in runs], axis=0)
    bench_ok = bool(np.all(med_osa <= med_nosa))
    seconds = time.perf_counter() - t0
    ok = criterion(8, better >= 45 and bench_ok and seconds < 600,
                   f"CRLB OSA <= NOSA for {better}/50 beamformer seeds at -13 dB "
                   f"({', '.join(f'{k:g} dB {v}/50' for k, v in others.items())}); "
                   f"median MUSIC RMSE at "
                   f"{', '.join(f'{s:g}' for s in snrs)} dB: OSA "
                   f"{', '.join(f'{v:.3f}' for v in med_osa)} vs NOSA "
                   f"{', '.join(f'{v:.3f}' for v in med_nosa)}, {seconds:.1f}s")
    assert ok


# 9 ---------------------------------------------------------------------------

TINY = """
[dataset]
reps = 1
val_reps = 1
[cdae]
channels = 4, 8, 8
epochs = 2
batch_size = 16
warmup_epochs = 1
[fc]
widths = 16, 16, 16
epochs = 2
batch_size = 16
[bench]
trials = 20
snr = -10, 0, 10
snapshots = 10, 100
"""


def test_criterion_9_determinism(tmp_path, criterion):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(TINY)

    def run(tag, precision):
        out = tmp_path / f"{tag}_{precision}"
        out.mkdir()
        base = ["--config", str(cfg_path), "--seed", "9", "--precision", precision]
        ck = out / "model"
        commands = [
            ["gen-dataset", "--out", str(out / "data.osad")],
            ["train-cdae", "--dataset", str(out / "data.osad"), "--out", str(ck)],
            ["train-fc", "--dataset", str(out / "data.osad"), "--checkpoint", str(ck),
             "--out", str(ck)],
            ["eval", "--checkpoint", str(ck), "--out", str(out / "eval.csv")],
            ["music", "--out", str(out / "music.csv")],
            ["crlb", "--snr=-10,0", "--snapshots", "10,100", "--out", str(out / "crlb.csv")],
            ["bench-snr", "--checkpoint", str(ck), "--out", str(out / "snr.csv")],
            ["bench-snapshots", "--checkpoint", str(ck), "--out", str(out / "snap.csv")],
            ["bench-2src", "--checkpoint", str(ck), "--fixed-w", "false",
             "--out", str(out / "two.csv")],
            ["bench-snr", "--estimators", "music,music_whitened", "--arch", "osa,nosa",
             "--out", str(out / "arch.csv")],
        ]
        codes = [main(cmd[:1] + base + cmd[1:]) for cmd in commands]
        files = {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
        return codes, files

    mismatched, failed, compared = [], [], 0
    for precision in ("f32", "f64"):
        codes_a, a = run("a", precision)
        codes_b, b = run("b", precision)
        failed += [c for c in codes_a + codes_b if c != 0]
        if set(a) != set(b):
            mismatched.append(f"{precision}: file sets differ")
        for name in sorted(set(a) & set(b)):
            compared += 1
            if a[name] != b[name]:
                mismatched.append(f"{precision}:{name}")
    ok = criterion(9, not mismatched and not failed and compared >= 20,
                   f"{compared} CSV/checkpoint/dataset files compared across repeated runs "
                   f"(f32 and f64), mismatches {mismatched}, nonzero exits {len(failed)}")
    assert ok
