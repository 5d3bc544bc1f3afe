"""Monte-Carlo RMSE benchmarks and their CSV tables.

Trial ``t`` at sweep point ``i`` draws sources and element noise from
``derive_seed(master, 3, i, t)``. That seed ignores the architecture, so OSA
and NOSA front ends see the same impinging field and the comparison is
paired. With ``fixed_w`` every trial reuses the combiner built from
``w_seed``; otherwise a fresh one is drawn per trial.

Estimates and truths are both sorted before pairing, and the per-trial error
is the mean squared error over sources. ``rmse_deg`` is the square root of
its mean over successful trials.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .array_model import ArrayConfig, build_beamformer
from .baselines import MusicConfig, music_estimate
from .cdae_dnn import predict_batch
from .crlb import crlb, fisher_matrix
from .errors import ConfigError, DomainError, UnidentifiableError
from .signal_sim import SimParams, derive_seed, sample_covariance, simulate_snapshots, snr_to_power

log = logging.getLogger(__name__)

ESTIMATORS = ("cdae_dnn", "music", "music_whitened")
ARCHITECTURES = ("osa", "nosa")
TRIAL_STREAM = 3
W_STREAM = 4
CSV_COLUMNS = ("sweep_var", "estimator", "architecture", "rmse_deg", "trials", "failures",
               "crlb_deg", "seed")


@dataclass
class Scenario:
    """One benchmark: which estimators and front ends, swept over what.

    ``cfg`` is the overlapped (OSA) configuration; the NOSA counterpart keeps
    ``M`` and ``Ms`` and sets ``dMs = 0``. ``snr_db`` is held fixed for
    snapshot sweeps and ``N`` for SNR sweeps. ``models`` maps an
    architecture name to a trained ``(cdae, fc)`` pair.
    """

    cfg: ArrayConfig
    sweep: tuple
    estimators: tuple = ("music_whitened",)
    architectures: tuple = ("osa",)
    trials: int = 200
    truth: tuple = (10.1,)
    seed: int = 0
    snr_db: float = -13.0
    N: int = 100
    fixed_w: bool = True
    w_seed: int = 0
    w_policy: str = "random_uniform"
    models: dict = field(default_factory=dict)
    with_crlb: bool = True
    precision: str = "f32"
    config_hash: str = ""
    workers: int = 1

    def __post_init__(self):
        self.sweep = tuple(self.sweep)
        self.truth = tuple(float(t) for t in self.truth)
        if not self.sweep:
            raise DomainError("sweep must not be empty")
        if self.trials < 1:
            raise DomainError("need at least one trial")
        bad = set(self.estimators) - set(ESTIMATORS) or set(self.architectures) - set(ARCHITECTURES)
        if bad:
            raise ConfigError(f"unknown estimator/architecture {sorted(bad)}")


@dataclass
class ResultRow:
    sweep_var: float
    estimator: str
    architecture: str
    rmse_deg: float
    trials: int
    failures: int
    crlb_deg: float | None
    seed: int


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict, compare=False, repr=False)

    def rmse(self, estimator, architecture="osa"):
        """RMSE column for one estimator/architecture, in sweep order."""
        return np.array([r.rmse_deg for r in self.rows
                         if r.estimator == estimator and r.architecture == architecture])

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def arch_config(cfg: ArrayConfig, arch: str) -> ArrayConfig:
    if arch == "osa":
        return cfg
    if arch == "nosa":
        return cfg.with_overlap(0)
    raise ConfigError(f"unknown architecture {arch!r}")


def build_id() -> str:
    """``git describe`` of the source tree, or the package version outside git."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"osadoa-{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"osadoa-{__version__}"


def grid_floor(truth, cfg: ArrayConfig) -> float:
    """Smallest RMSE any estimator restricted to ``cfg.grid`` can reach."""
    truth = np.asarray(truth, dtype=float)
    off = np.abs(truth - (np.rint((truth + cfg.theta0) / cfg.dtheta) * cfg.dtheta - cfg.theta0))
    return float(np.sqrt(np.mean(off**2)))


def paired_sq_error(estimates, truth) -> float:
    est = np.sort(np.asarray(estimates, dtype=float))
    tru = np.sort(np.asarray(truth, dtype=float))
    if est.shape != tru.shape:
        raise DomainError(f"{len(est)} estimates for {len(tru)} sources")
    return float(np.mean((est - tru) ** 2))


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))  # keeps input order


def _estimate_all(name, Cs, W_list, cfg, Q, scenario, arch):
    """Per-trial estimates (``None`` marks a failure)."""
    if name == "cdae_dnn":
        if arch not in scenario.models:
            raise ConfigError(f"no trained CDAE-DNN checkpoint for architecture {arch!r}")
        cdae, fc = scenario.models[arch]
        try:
            return [p.thetas for p in predict_batch(cdae, fc, Cs, Q, cfg.theta0, cfg.dtheta)]
        except (DomainError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("cdae_dnn failed on the whole batch: %s", exc)
            return [None] * len(Cs)
    mcfg = MusicConfig(Q=Q, whiten=name == "music_whitened")
    out = []
    for C, W in zip(Cs, W_list):
        try:
            out.append(music_estimate(C, W, cfg, mcfg))
        except (DomainError, np.linalg.LinAlgError) as exc:
            log.warning("%s trial failed: %s", name, exc)
            out.append(None)
    return out


def _crlb_deg(cfg, W, truth, snr_db, N):
    try:
        F = fisher_matrix(cfg, W, truth, snr_to_power(snr_db), 1.0)
        return crlb(F, N).rmse_bound_deg
    except UnidentifiableError:
        return None


def _run_sweep(scenario: Scenario, sweep_name: str) -> ResultTable:
    table = ResultTable()
    Q = len(scenario.truth)
    floor = grid_floor(scenario.truth, scenario.cfg)
    for a_idx, arch in enumerate(scenario.architectures):
        cfg = arch_config(scenario.cfg, arch)
        W_fixed = build_beamformer(cfg, scenario.w_policy, scenario.w_seed)
        for p_idx, value in enumerate(scenario.sweep):
            snr = float(value) if sweep_name == "snr_db" else scenario.snr_db
            N = int(value) if sweep_name == "N" else scenario.N

            def trial(t):
                W = W_fixed if scenario.fixed_w else build_beamformer(
                    cfg, scenario.w_policy, derive_seed(scenario.seed, W_STREAM, a_idx, p_idx, t))
                params = SimParams(snr_db=snr, N=N, thetas=scenario.truth,
                                   seed=derive_seed(scenario.seed, TRIAL_STREAM, p_idx, t))
                return sample_covariance(simulate_snapshots(cfg, W, params)).C, W

            sims = _map(trial, range(scenario.trials), scenario.workers)
            Cs = np.stack([c for c, _ in sims])
            Ws = [w for _, w in sims]
            bound = _crlb_deg(cfg, W_fixed, scenario.truth, snr, N) if scenario.with_crlb else None
            for name in scenario.estimators:
                est = _estimate_all(name, Cs, Ws, cfg, Q, scenario, arch)
                errs = np.array([paired_sq_error(e, scenario.truth) for e in est if e is not None])
                failures = sum(e is None for e in est)
                rmse = float(np.sqrt(errs.mean())) if len(errs) else float("nan")
                if len(errs) and rmse < floor - 1e-9:
                    raise AssertionError(f"{name} RMSE {rmse} below the grid floor {floor}")
                table.rows.append(ResultRow(
                    sweep_var=value, estimator=name, architecture=arch, rmse_deg=rmse,
                    trials=scenario.trials, failures=failures, crlb_deg=bound, seed=scenario.seed))
                table.details[(value, name, arch)] = np.array(
                    [np.nan if e is None else paired_sq_error(e, scenario.truth) for e in est])
    table.meta = {
        "build_id": build_id(),
        "config_hash": scenario.config_hash,
        "master_seed": scenario.seed,
        "sweep_name": sweep_name,
        "truth_deg": list(scenario.truth),
        "fixed_snr_db" if sweep_name == "N" else "fixed_N": (
            scenario.snr_db if sweep_name == "N" else scenario.N),
        "w_policy": scenario.w_policy,
        "fixed_w": scenario.fixed_w,
        "w_seed": scenario.w_seed,
        "precision": scenario.precision,
        "grid_floor_deg": floor,
        "crlb": "known-C_s CRLB, sqrt of mean per-source bound, degrees",
    }
    return table


def run_rmse_vs_snr(scenario: Scenario) -> ResultTable:
    """RMSE against SNR at ``scenario.N`` snapshots."""
    return _run_sweep(scenario, "snr_db")


def run_rmse_vs_snapshots(scenario: Scenario) -> ResultTable:
    """RMSE against the snapshot count at ``scenario.snr_db``."""
    return _run_sweep(scenario, "N")


def run_two_source(scenario: Scenario) -> ResultTable:
    """RMSE against SNR for a pair of sources."""
    if len(scenario.truth) != 2:
        raise DomainError(f"two-source benchmark needs two truths, got {scenario.truth}")
    return _run_sweep(scenario, "snr_db")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def table_to_csv(table: ResultTable) -> str:
    buf = io.StringIO(newline="")
    for key in sorted(table.meta):
        buf.write(f"# {key}={json.dumps(table.meta[key], sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in table.rows:
        writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def emit_csv(table: ResultTable, path) -> None:
    """Write metadata comment lines, a header and one row per result; UTF-8, LF."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(table_to_csv(table))


def _num(s):
    f = float(s)
    return int(s) if s.lstrip("-").isdigit() else f


def read_csv(path) -> ResultTable:
    table = ResultTable()
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            table.meta[key] = json.loads(value)
        elif line:
            body.append(line)
    reader = csv.DictReader(body)
    for rec in reader:
        table.rows.append(ResultRow(
            sweep_var=_num(rec["sweep_var"]), estimator=rec["estimator"],
            architecture=rec["architecture"], rmse_deg=float(rec["rmse_deg"]),
            trials=int(rec["trials"]), failures=int(rec["failures"]),
            crlb_deg=float(rec["crlb_deg"]) if rec["crlb_deg"] else None, seed=int(rec["seed"])))
    return table
