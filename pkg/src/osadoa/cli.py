"""``osadoa`` command-line front end.

Every subcommand reads the INI configuration (:mod:`osadoa.config`), applies
flag overrides and writes its result to ``--out``. Exit status is 0 on
success, 1 for invalid input (flags, config, files) and 2 when a run fails.

A checkpoint directory holds ``cdae.osam`` and ``fc.osam``. Benchmarks take
``--checkpoint osa=DIR --checkpoint nosa=DIR``; a bare ``DIR`` is the OSA
model.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .array_model import build_beamformer
from .baselines import MusicConfig, music_spectrum, pick_peaks
from .bench import (
    Scenario,
    build_id,
    emit_csv,
    run_rmse_vs_snapshots,
    run_rmse_vs_snr,
    run_two_source,
)
from .cdae_dnn import (
    FcArch,
    build_cdae,
    build_fc,
    denoise_ratio,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
    train_cdae,
    train_fc,
)
from .config import RunConfig, load_config, parse_bool
from .crlb import crlb, fisher_matrix
from .dataset import generate_dataset, load_dataset, save_dataset
from .errors import ConfigError, DivergenceError, DomainError, FormatError
from .nn import bce_loss, grad_check, mse_loss
from .signal_sim import SimParams, sample_covariance, simulate_snapshots, snr_to_power

log = logging.getLogger("osadoa")

COMMANDS = ("gen-dataset", "train-cdae", "train-fc", "eval", "music", "crlb", "bench-snr",
            "bench-snapshots", "bench-2src", "grad-check")
CDAE_FILE, FC_FILE = "cdae.osam", "fc.osam"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(p) for p in text.split(",") if p.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _bool(text):
    try:
        return parse_bool(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="osadoa", description="DOA estimation for hybrid overlapped-subarray arrays")
    parser.add_argument("--version", action="version", version=f"osadoa {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "gen-dataset": "generate a training set (OSAD file + JSON manifest)",
        "train-cdae": "train the denoising autoencoder",
        "train-fc": "train the grid classifier on top of a trained autoencoder",
        "eval": "denoising ratio and angle error of a checkpoint on a dataset",
        "music": "one MUSIC pseudo-spectrum as CSV",
        "crlb": "Cramer-Rao bound table over SNR and snapshot count",
        "bench-snr": "Monte-Carlo RMSE against SNR",
        "bench-snapshots": "Monte-Carlo RMSE against the snapshot count",
        "bench-2src": "Monte-Carlo RMSE against SNR for two sources",
        "grad-check": "finite-difference check of the CDAE and classifier gradients",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="master seed (u64)")
        p.add_argument("--out", help="output file or directory")
        p.add_argument("--trials", type=int, help="Monte-Carlo trials per sweep point")
        p.add_argument("--snr", type=_csv_list(float), help="comma-separated SNRs in dB")
        p.add_argument("--snapshots", type=_csv_list(int), help="comma-separated snapshot counts")
        p.add_argument("--arch", type=_csv_list(str), help="osa, nosa or both (comma separated)")
        p.add_argument("--estimators", type=_csv_list(str),
                       help="subset of cdae_dnn,music,music_whitened")
        p.add_argument("--checkpoint", action="append", default=[],
                       help="checkpoint directory, optionally ARCH=DIR; repeatable")
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("--fixed-w", type=_bool, help="reuse one combiner for every trial")
        p.add_argument("--dataset", help="dataset file for training or evaluation")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be a u64")
        for section in ("train", "dataset"):
            cfg.set(section, "seed", args.seed)
    if args.precision:
        cfg.set("train", "precision", args.precision)
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        cfg.set("bench", "trials", args.trials)
    if args.snr:
        cfg.set("bench", "snr", args.snr)
        cfg.set("sim", "snr_db", args.snr[0])
    if args.snapshots:
        cfg.set("bench", "snapshots", args.snapshots)
        cfg.set("sim", "N", args.snapshots[0])
        cfg.set("dataset", "N", args.snapshots[0])
    if args.arch:
        cfg.set("bench", "architectures", args.arch)
    if args.estimators:
        cfg.set("bench", "estimators", args.estimators)
    if args.fixed_w is not None:
        cfg.set("bench", "fixed_w", args.fixed_w)
    return cfg


def _arch(args) -> str:
    arch = (args.arch or ["osa"])[0]
    if arch not in ("osa", "nosa") or len(args.arch or []) > 1:
        raise ConfigError(f"--arch must be a single osa or nosa here, got {args.arch}")
    return arch


def _need_out(args) -> Path:
    if not args.out:
        raise ConfigError(f"{args.command} needs --out")
    return Path(args.out)


def _checkpoints(args) -> dict:
    out = {}
    for item in args.checkpoint:
        arch, sep, path = item.partition("=")
        if not sep:
            arch, path = "osa", item
        if arch not in ("osa", "nosa"):
            raise ConfigError(f"unknown architecture in --checkpoint {item!r}")
        out[arch] = Path(path)
    return out


def _load_pair(directory: Path, dtype):
    for name in (CDAE_FILE, FC_FILE):
        if not (directory / name).is_file():
            raise ConfigError(f"missing checkpoint file {directory / name}")
    cdae, _ = load_checkpoint(directory / CDAE_FILE, dtype)
    fc, _ = load_checkpoint(directory / FC_FILE, dtype)
    return cdae, fc


def _dtype(cfg):
    return np.float32 if cfg.precision == "f32" else np.float64


def _dataset(args, cfg, arch, validation=False):
    if args.dataset and not validation:
        path = Path(args.dataset)
        if not path.is_file():
            raise ConfigError(f"dataset file not found: {path}")
        return load_dataset(path)
    array = cfg.array(arch)
    W = build_beamformer(array, cfg["sim"]["w_policy"], cfg["sim"]["w_seed"])
    return generate_dataset(cfg.dataset_spec(validation), array, W)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _meta(cfg, arch, **extra):
    return {"config_hash": cfg.digest(), "build_id": build_id(), "arch": arch,
            "precision": cfg.precision, "seed": cfg["train"]["seed"], **extra}


def cmd_gen_dataset(args, cfg):
    out = _need_out(args)
    ds = _dataset(argparse.Namespace(dataset=None), cfg, _arch(args))
    save_dataset(ds, out)
    print(f"wrote {len(ds)} samples to {out}")


def cmd_train_cdae(args, cfg):
    out = _need_out(args)
    arch = _arch(args)
    ds = _dataset(args, cfg, arch)
    val = _dataset(args, cfg, arch, validation=True)
    hyper = cfg.hyper("cdae")
    model = build_cdae(cfg.cdae_arch(), ds.K, seed=hyper.seed, dtype=hyper.dtype)
    report = train_cdae(model, ds, hyper, val)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / CDAE_FILE, **_meta(cfg, arch))
    _write_json(out / "cdae_report.json", report.to_dict())
    print(f"cdae: final loss {report.history[-1]:.6g}, "
          f"median denoise ratio {report.val.get('median_denoise_ratio', float('nan')):.4f}")


def cmd_train_fc(args, cfg):
    out = _need_out(args)
    arch = _arch(args)
    ckpts = _checkpoints(args)
    if arch not in ckpts:
        raise ConfigError("train-fc needs --checkpoint DIR holding a trained cdae.osam")
    src = ckpts[arch]
    if not (src / CDAE_FILE).is_file():
        raise ConfigError(f"missing checkpoint file {src / CDAE_FILE}")
    cdae, _ = load_checkpoint(src / CDAE_FILE, _dtype(cfg))
    ds = _dataset(args, cfg, arch)
    val = _dataset(args, cfg, arch, validation=True)
    hyper = cfg.hyper("fc")
    fc = build_fc(cfg.fc_arch(), ds.K, ds.L, seed=hyper.seed, dtype=hyper.dtype)
    report = train_fc(fc, cdae, ds, hyper, val)
    out.mkdir(parents=True, exist_ok=True)
    if out.resolve() != src.resolve():
        shutil.copyfile(src / CDAE_FILE, out / CDAE_FILE)
    save_checkpoint(fc, out / FC_FILE, **_meta(cfg, arch, theta0=ds.theta0, dtheta=ds.dtheta))
    _write_json(out / "fc_report.json", report.to_dict())
    print(f"fc: final loss {report.history[-1]:.6g}, val bce {report.val.get('bce', float('nan')):.6g}")


def cmd_eval(args, cfg):
    out = _need_out(args)
    arch = _arch(args)
    ckpts = _checkpoints(args)
    if arch not in ckpts:
        raise ConfigError("eval needs --checkpoint DIR")
    cdae, fc = _load_pair(ckpts[arch], _dtype(cfg))
    ds = _dataset(args, cfg, arch, validation=not args.dataset)
    ratio = denoise_ratio(cdae, ds)
    Cs = ds.noisy[..., 0] + 1j * ds.noisy[..., 1]
    errs = np.empty(len(ds))
    for Q in np.unique(ds.Q):
        idx = np.flatnonzero(ds.Q == Q)
        preds = predict_batch(cdae, fc, Cs[idx], int(Q), ds.theta0, ds.dtheta)
        for i, pred in zip(idx, preds):
            errs[i] = np.mean((pred.thetas - np.sort(ds.thetas[i])) ** 2)
    rows = [("samples", len(ds)), ("median_denoise_ratio", float(np.median(ratio))),
            ("mean_denoise_ratio", float(np.mean(ratio))),
            ("rmse_deg", float(np.sqrt(np.mean(errs)))),
            ("exact_hit_rate", float(np.mean(np.asarray(errs) == 0)))]
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={json.dumps(cfg.digest())}\n# build_id={json.dumps(build_id())}\n")
        fh.write("metric,value\n")
        for key, value in rows:
            fh.write(f"{key},{value!r}\n")
    print("\n".join(f"{k}: {v}" for k, v in rows))


def cmd_music(args, cfg):
    out = _need_out(args)
    arch = _arch(args)
    array = cfg.array(arch)
    sim = cfg["sim"]
    W = build_beamformer(array, sim["w_policy"], sim["w_seed"])
    params = SimParams(snr_db=sim["snr_db"], N=sim["N"], thetas=tuple(sim["thetas"]),
                       seed=cfg["train"]["seed"])
    C = sample_covariance(simulate_snapshots(array, W, params))
    whiten = "music" not in (args.estimators or []) or "music_whitened" in (args.estimators or [])
    mcfg = MusicConfig(Q=len(sim["thetas"]), whiten=whiten)
    spec = music_spectrum(C, W, array, mcfg)
    est = array.grid[pick_peaks(spec, mcfg.Q)]
    with open(out, "w", encoding="utf-8", newline="") as fh:
        for key, value in (("config_hash", cfg.digest()), ("estimates_deg", est.tolist()),
                           ("truth_deg", list(sim["thetas"])), ("whiten", whiten)):
            fh.write(f"# {key}={json.dumps(value)}\n")
        fh.write("theta_deg,spectrum\n")
        for theta, value in zip(array.grid, spec):
            fh.write(f"{float(theta)!r},{float(value)!r}\n")
    print("estimates (deg):", " ".join(f"{t:g}" for t in est))


def cmd_crlb(args, cfg):
    out = _need_out(args)
    arch = _arch(args)
    array = cfg.array(arch)
    sim = cfg["sim"]
    W = build_beamformer(array, sim["w_policy"], sim["w_seed"])
    thetas = tuple(sim["thetas"])
    snrs = args.snr or [sim["snr_db"]]
    Ns = args.snapshots or [sim["N"]]
    cols = ["theta_deg", "snr_db", "N"] + [f"crlb_deg2_{q + 1}" for q in range(len(thetas))]
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={json.dumps(cfg.digest())}\n# arch={json.dumps(arch)}\n")
        fh.write(",".join(cols + ["cond_F"]) + "\n")
        for snr in snrs:
            F = fisher_matrix(array, W, thetas, snr_to_power(snr), 1.0)
            for N in Ns:
                res = crlb(F, N)
                vals = [" ".join(repr(t) for t in thetas), repr(float(snr)), str(N)]
                vals += [repr(float(v)) for v in res.per_source_deg2] + [repr(res.cond_F)]
                fh.write(",".join(vals) + "\n")
    print(f"wrote {len(snrs) * len(Ns)} rows to {out}")


def _bench(args, cfg, kind):
    out = _need_out(args)
    b = cfg["bench"]
    models = {arch: _load_pair(path, _dtype(cfg)) for arch, path in _checkpoints(args).items()}
    if "cdae_dnn" in b["estimators"]:
        missing = [a for a in b["architectures"] if a not in models]
        if missing:
            raise ConfigError(f"cdae_dnn needs --checkpoint for {', '.join(missing)}")
    truth = b["truth_2src"] if kind == "2src" else b["truth"]
    sweep = b["snapshots"] if kind == "snapshots" else b["snr"]
    sc = Scenario(cfg=cfg.array("osa"), sweep=tuple(sweep), estimators=tuple(b["estimators"]),
                  architectures=tuple(b["architectures"]), trials=b["trials"], truth=tuple(truth),
                  seed=cfg["train"]["seed"], snr_db=b["snr_fixed"], N=b["N"], fixed_w=b["fixed_w"],
                  w_seed=b["w_seed"], w_policy=b["w_policy"], models=models,
                  precision=cfg.precision, config_hash=cfg.digest(), workers=b["workers"])
    run = {"snr": run_rmse_vs_snr, "snapshots": run_rmse_vs_snapshots, "2src": run_two_source}[kind]
    table = run(sc)
    emit_csv(table, out)
    print(f"wrote {len(table.rows)} rows to {out}")


def cmd_grad_check(args, cfg):
    rng = np.random.default_rng(cfg["train"]["seed"])
    K = cfg.array(_arch(args)).K
    L = cfg.array().L
    cdae = build_cdae(cfg.cdae_arch(), K, seed=cfg["train"]["seed"], dtype=np.float64)
    # narrow hidden layers keep the finite-difference pass short
    fc = build_fc(FcArch(widths=(16, 16, 16), dropout=cfg.fc_arch().dropout),
                  K, L, seed=cfg["train"]["seed"], dtype=np.float64)
    x = rng.standard_normal((4, 2, K, K))
    target = cdae.forward(x, True) + 0.1 * rng.standard_normal(x.shape)
    z = (rng.random((4, L)) < 0.05).astype(float)
    reports = {
        "cdae": grad_check(cdae, mse_loss, x, target, tolerance=1e-4, max_coords=20),
        # small inputs keep the sigmoid outputs clear of the BCE clamp
        "fc": grad_check(fc, bce_loss, 0.1 * x, z, tolerance=1e-6, max_coords=20),
    }
    text = "\n\n".join(f"[{name}]\n{rep}" for name, rep in reports.items())
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    if not all(r.passed for r in reports.values()):
        raise RuntimeError("gradient check failed")


HANDLERS = {
    "gen-dataset": cmd_gen_dataset, "train-cdae": cmd_train_cdae, "train-fc": cmd_train_fc,
    "eval": cmd_eval, "music": cmd_music, "crlb": cmd_crlb,
    "bench-snr": lambda a, c: _bench(a, c, "snr"),
    "bench-snapshots": lambda a, c: _bench(a, c, "snapshots"),
    "bench-2src": lambda a, c: _bench(a, c, "2src"),
    "grad-check": cmd_grad_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"osadoa: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        HANDLERS[args.command](args, cfg)
    except (DivergenceError, RuntimeError, ArithmeticError, OSError, np.linalg.LinAlgError) as exc:
        # LinAlgError subclasses ValueError, so this clause comes first
        print(f"osadoa: run failed: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DomainError, FormatError, ValueError) as exc:
        print(f"osadoa: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
