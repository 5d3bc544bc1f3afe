"""INI run configuration shared by the command-line tools.

Grammar: standard ``configparser`` INI. Section and key names are fixed;
unknown sections or keys are rejected. Lists are comma separated, booleans
accept ``true/false/yes/no/1/0``, an empty value means an empty list.

::

    [array]    M Ms dMs d lam theta0 dtheta
    [sim]      snr_db N thetas w_policy w_seed
    [dataset]  snr_db snr_range reps n_pairs min_sep N seed val_reps val_pairs
               val_seed
    [cdae]     channels kernel batch_size epochs lr warmup_epochs schedule
    [fc]       widths dropout batch_size epochs lr warmup_epochs schedule
    [train]    seed precision
    [bench]    trials snr snapshots truth truth_2src snr_fixed N estimators
               architectures fixed_w w_policy w_seed workers

Defaults describe the scaled desk configuration: a 32-element array cut
into 8-element subarrays overlapping by 4, a +/-60 deg grid at 1 deg.
"""

from __future__ import annotations

import configparser
import copy
import hashlib
import json
from pathlib import Path

from .array_model import ArrayConfig
from .cdae_dnn import CdaeArch, FcArch, TrainHyper
from .dataset import DatasetSpec
from .errors import ConfigError

_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    try:
        return _BOOL[str(text).strip().lower()]
    except KeyError:
        raise ConfigError(f"not a boolean: {text!r}") from None


def _list(kind):
    def parse(text):
        if isinstance(text, (list, tuple)):
            return [kind(v) for v in text]
        parts = [p.strip() for p in str(text).split(",")]
        return [kind(p) for p in parts if p]
    return parse


floats, ints, strs = _list(float), _list(int), _list(str)

# section -> key -> (parser, default)
SCHEMA = {
    "array": {
        "M": (int, 32), "Ms": (int, 8), "dMs": (int, 4), "d": (float, 0.5),
        "lam": (float, 1.0), "theta0": (float, 60.0), "dtheta": (float, 1.0),
    },
    "sim": {
        "snr_db": (float, 10.0), "N": (int, 100), "thetas": (floats, [10.1]),
        "w_policy": (str, "random_uniform"), "w_seed": (int, 0),
    },
    "dataset": {
        "snr_db": (floats, []), "snr_range": (floats, [-20.0, 10.0]), "reps": (int, 20),
        "n_pairs": (int, 0), "min_sep": (float, 2.0), "N": (int, 100), "seed": (int, 1),
        "val_reps": (int, 2), "val_pairs": (int, 0), "val_seed": (int, 2),
    },
    "cdae": {
        "channels": (ints, [16, 32, 64]), "kernel": (int, 3), "batch_size": (int, 32),
        "epochs": (int, 100), "lr": (float, 0.01), "warmup_epochs": (float, 3.0),
        "schedule": (str, "cosine"),
    },
    "fc": {
        "widths": (ints, [256, 512, 256]), "dropout": (float, 0.2), "batch_size": (int, 64),
        "epochs": (int, 100), "lr": (float, 1.0), "warmup_epochs": (float, 0.0),
        "schedule": (str, "constant"),
    },
    "train": {"seed": (int, 0), "precision": (str, "f32")},
    "bench": {
        "trials": (int, 200), "snr": (floats, [-20.0, -15.0, -10.0, -5.0, 0.0, 5.0, 10.0]),
        "snapshots": (ints, [10, 100, 500, 1000]), "truth": (floats, [10.1]),
        "truth_2src": (floats, [10.1, 20.1]), "snr_fixed": (float, -13.0), "N": (int, 100),
        "estimators": (strs, ["cdae_dnn", "music_whitened"]), "architectures": (strs, ["osa"]),
        "fixed_w": (parse_bool, True), "w_policy": (str, "random_uniform"), "w_seed": (int, 0),
        "workers": (int, 1),
    },
}


class RunConfig:
    """Resolved configuration: ``cfg.values[section][key]``."""

    def __init__(self, values=None, source=None):
        self.values = {s: {k: copy.deepcopy(d) for k, (_, d) in keys.items()}
                       for s, keys in SCHEMA.items()}
        self.source = source
        for section, keys in (values or {}).items():
            for key, value in keys.items():
                self.set(section, key, value)

    def set(self, section, key, value):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        try:
            self.values[section][key] = SCHEMA[section][key][0](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key} = {value!r}: {exc}") from None

    def __getitem__(self, section):
        return self.values[section]

    @property
    def precision(self) -> str:
        p = self.values["train"]["precision"]
        if p not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {p!r}")
        return p

    def array(self, arch="osa") -> ArrayConfig:
        a = self.values["array"]
        dMs = a["dMs"] if arch == "osa" else 0
        try:
            return ArrayConfig.from_elements(a["M"], a["Ms"], dMs, d=a["d"], lam=a["lam"],
                                             theta0=a["theta0"], dtheta=a["dtheta"])
        except ValueError as exc:
            raise ConfigError(f"invalid [array]: {exc}") from None

    def dataset_spec(self, validation=False) -> DatasetSpec:
        d, s = self.values["dataset"], self.values["sim"]
        if len(d["snr_range"]) != 2:
            raise ConfigError("[dataset] snr_range needs two values")
        return DatasetSpec(
            snr_db=tuple(d["snr_db"]), snr_range=tuple(d["snr_range"]),
            reps=d["val_reps"] if validation else d["reps"],
            n_pairs=d["val_pairs"] if validation else d["n_pairs"],
            min_sep=d["min_sep"], N=d["N"], w_policy=s["w_policy"], w_seed=s["w_seed"],
            seed=d["val_seed"] if validation else d["seed"], precision=self.precision)

    def cdae_arch(self) -> CdaeArch:
        c = self.values["cdae"]
        return CdaeArch(channels=tuple(c["channels"]), kernel=c["kernel"])

    def fc_arch(self) -> FcArch:
        f = self.values["fc"]
        return FcArch(widths=tuple(f["widths"]), dropout=f["dropout"])

    def hyper(self, which) -> TrainHyper:
        h = self.values[which]
        if h["schedule"] not in ("constant", "cosine"):
            raise ConfigError(f"[{which}] schedule must be constant or cosine")
        return TrainHyper(batch_size=h["batch_size"], epochs=h["epochs"], lr=h["lr"],
                          seed=self.values["train"]["seed"], precision=self.precision,
                          warmup_epochs=h["warmup_epochs"], schedule=h["schedule"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def digest(self) -> str:
        """Short SHA-256 of the canonical JSON form of every resolved value."""
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, value in keys.items():
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, list):
                    value = ", ".join(str(v) for v in value)
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)


def load_config(path=None) -> RunConfig:
    """Defaults overlaid with ``path`` (if given); raises :class:`ConfigError`."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (M vs Ms)
    try:
        parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    values = {section: dict(parser[section]) for section in parser.sections()}
    return RunConfig(values, source=str(path))
