"""Network features, grid labels and on-disk training sets.

A covariance ``C`` becomes a real ``K x K x 2`` tensor ``[Re C, Im C] / p``
with ``p = trace(C)/K``. Labels are multi-hot vectors over the angle grid
``-theta0, -theta0 + dtheta, ..., theta0``.

Binary dataset layout (little-endian)::

    header   magic b"OSAD" | version u16 | K u16 | L u32 | count u64 | f32 flag u8
    records  noisy K*K*2 floats | clean K*K*2 floats | label packbits ceil(L/8)
             | Q u8 | thetas Q*f64 | snr_db f64 | N u32 | seed u64 | w_seed u64
             | norm_factor f64
    trailer  CRC-32 (u32) of the record bytes

Floats are f32 when the flag is 1 and f64 otherwise. A JSON manifest with
the generation settings is written next to the file (``<path>.json``).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .array_model import ArrayConfig, build_beamformer
from .errors import ChecksumError, DomainError, FormatError
from .signal_sim import (
    SimParams,
    derive_seed,
    exact_covariance,
    sample_covariance,
    simulate_snapshots,
)

MAGIC = b"OSAD"
VERSION = 1
_HEADER = struct.Struct("<4sHHIQB")
SAMPLE_STREAM = 1
PAIR_STREAM = 2


@dataclass(frozen=True)
class FeatureTensor:
    R: np.ndarray  # K x K x 2
    norm_factor: float

    def to_covariance(self) -> np.ndarray:
        """Undo the normalization and rebuild the complex matrix."""
        return self.norm_factor * (self.R[..., 0] + 1j * self.R[..., 1])


def to_feature_tensor(C, norm_factor=None, dtype=np.float64) -> FeatureTensor:
    C = np.asarray(getattr(C, "C", C))
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise DomainError(f"covariance must be square, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise DomainError("covariance has non-finite entries")
    if norm_factor is None:
        norm_factor = float(np.trace(C).real) / C.shape[0]
    if not norm_factor > 0:
        raise DomainError(f"normalization factor must be positive, got {norm_factor}")
    R = np.stack([C.real, C.imag], axis=-1) / norm_factor
    return FeatureTensor(R=R.astype(dtype, copy=False), norm_factor=float(norm_factor))


def grid_index(theta, theta0=90.0, dtheta=1.0, tol=1e-9):
    """0-based grid index of an on-grid angle; raises for off-grid input."""
    pos = (np.asarray(theta, dtype=float) + theta0) / dtheta
    idx = np.rint(pos)
    if np.any(np.abs(pos - idx) > tol):
        raise DomainError(f"angle(s) {np.atleast_1d(theta).tolist()} not on the {dtheta} deg grid")
    L = int(round(2 * theta0 / dtheta)) + 1
    if np.any(idx < 0) or np.any(idx >= L):
        raise DomainError(f"angle(s) {np.atleast_1d(theta).tolist()} outside +/-{theta0} deg")
    return idx.astype(int)


@dataclass(frozen=True)
class LabelVector:
    z: np.ndarray
    theta0: float = 90.0
    dtheta: float = 1.0
    snapped: bool = False  # evaluation mode moved an off-grid angle to the grid

    @property
    def L(self) -> int:
        return len(self.z)


def make_label(thetas, theta0=90.0, dtheta=1.0, mode="train") -> LabelVector:
    """Multi-hot label with ones at the grid positions of ``thetas``.

    ``mode="train"`` insists on on-grid angles; ``mode="eval"`` snaps to the
    nearest grid point and sets ``snapped``.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    L = int(round(2 * theta0 / dtheta)) + 1
    snapped = False
    if mode == "train":
        idx = grid_index(thetas, theta0, dtheta)
    elif mode == "eval":
        pos = (thetas + theta0) / dtheta
        idx = np.clip(np.rint(pos), 0, L - 1).astype(int)
        snapped = bool(np.any(np.abs(pos - idx) > 1e-9))
    else:
        raise ValueError(f"unknown label mode {mode!r}")
    if len(np.unique(idx)) != len(idx):
        raise DomainError(f"angles {thetas.tolist()} collide on the grid")
    z = np.zeros(L, dtype=np.uint8)
    z[idx] = 1
    return LabelVector(z=z, theta0=theta0, dtheta=dtheta, snapped=snapped)


@dataclass(frozen=True)
class DatasetSpec:
    """What to generate.

    Single-source samples cover ``angles`` (``None`` = the whole grid), each
    SNR in ``snr_db`` and ``reps`` repetitions. If ``snr_db`` is empty, the
    SNR of every sample is drawn uniformly from ``snr_range`` instead and
    ``reps`` counts draws per angle. ``n_pairs`` two-source samples are added
    at random on-grid pairs separated by at least ``min_sep`` degrees.
    """

    snr_db: tuple = (-10.0, 0.0, 10.0)
    snr_range: tuple = (-20.0, 10.0)
    reps: int = 1
    angles: tuple | None = None
    n_pairs: int = 0
    min_sep: float = 2.0
    N: int = 100
    w_policy: str = "random_uniform"
    w_seed: int = 0
    seed: int = 0
    precision: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "snr_range", tuple(float(s) for s in self.snr_range))
        if self.angles is not None:
            object.__setattr__(self, "angles", tuple(float(a) for a in self.angles))
        if self.precision not in ("f32", "f64"):
            raise DomainError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.reps < 0 or self.n_pairs < 0 or self.N < 1:
            raise DomainError("reps and n_pairs must be >= 0 and N >= 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass(frozen=True)
class Sample:
    noisy: FeatureTensor
    clean: FeatureTensor
    label: LabelVector
    meta: SimParams
    w_seed: int


@dataclass(eq=False)
class Dataset:
    """Column-oriented store of samples; indexing yields :class:`Sample`."""

    noisy: np.ndarray  # T x K x K x 2
    clean: np.ndarray
    labels: np.ndarray  # T x L, uint8
    thetas: list  # T tuples
    snr_db: np.ndarray
    N: np.ndarray
    seeds: np.ndarray  # uint64
    w_seeds: np.ndarray  # uint64
    norm: np.ndarray
    theta0: float = 90.0
    dtheta: float = 1.0
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def K(self) -> int:
        return self.noisy.shape[1]

    @property
    def L(self) -> int:
        return self.labels.shape[1]

    @property
    def Q(self) -> np.ndarray:
        return np.array([len(t) for t in self.thetas], dtype=int)

    def __getitem__(self, i) -> Sample:
        meta = SimParams(snr_db=float(self.snr_db[i]), N=int(self.N[i]),
                         thetas=self.thetas[i], seed=int(self.seeds[i]))
        return Sample(
            noisy=FeatureTensor(self.noisy[i], float(self.norm[i])),
            clean=FeatureTensor(self.clean[i], float(self.norm[i])),
            label=LabelVector(self.labels[i], self.theta0, self.dtheta),
            meta=meta,
            w_seed=int(self.w_seeds[i]),
        )

    @property
    def samples(self) -> list:
        return [self[i] for i in range(len(self))]

    def subset(self, index) -> "Dataset":
        """Rows selected by an integer index array or boolean mask."""
        index = np.arange(len(self))[index]
        return Dataset(
            noisy=self.noisy[index], clean=self.clean[index], labels=self.labels[index],
            thetas=[self.thetas[i] for i in index], snr_db=self.snr_db[index], N=self.N[index],
            seeds=self.seeds[index], w_seeds=self.w_seeds[index], norm=self.norm[index],
            theta0=self.theta0, dtheta=self.dtheta, manifest=dict(self.manifest),
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        arrays = ("noisy", "clean", "labels", "snr_db", "N", "seeds", "w_seeds", "norm")
        return (
            all(
                getattr(self, a).dtype == getattr(other, a).dtype
                and np.array_equal(getattr(self, a), getattr(other, a))
                for a in arrays
            )
            and self.thetas == other.thetas
            and (self.theta0, self.dtheta) == (other.theta0, other.dtheta)
            and self.manifest == other.manifest
        )


def _empty(K, L, dtype, theta0, dtheta, manifest) -> Dataset:
    return Dataset(
        noisy=np.zeros((0, K, K, 2), dtype), clean=np.zeros((0, K, K, 2), dtype),
        labels=np.zeros((0, L), np.uint8), thetas=[], snr_db=np.zeros(0), N=np.zeros(0, np.int64),
        seeds=np.zeros(0, np.uint64), w_seeds=np.zeros(0, np.uint64), norm=np.zeros(0),
        theta0=theta0, dtheta=dtheta, manifest=manifest,
    )


def _draw_pairs(spec: DatasetSpec, cfg: ArrayConfig, rng):
    grid = cfg.grid
    if grid[-1] - grid[0] < spec.min_sep:
        raise DomainError(f"grid cannot hold two sources {spec.min_sep} deg apart")
    pairs = []
    while len(pairs) < spec.n_pairs:
        a, b = np.sort(rng.choice(grid, size=2, replace=False))
        if b - a >= spec.min_sep - 1e-9:
            pairs.append((float(a), float(b)))
    return pairs


def _plan(spec: DatasetSpec, cfg: ArrayConfig):
    """List of (thetas, snr_db) in generation order."""
    rng = np.random.default_rng(derive_seed(spec.seed, PAIR_STREAM))
    angles = cfg.grid if spec.angles is None else np.asarray(spec.angles)
    grid_index(angles, cfg.theta0, cfg.dtheta)
    lo, hi = spec.snr_range
    plan = []
    for theta in angles:
        if spec.snr_db:
            plan += [((float(theta),), snr) for snr in spec.snr_db for _ in range(spec.reps)]
        else:
            plan += [((float(theta),), float(rng.uniform(lo, hi))) for _ in range(spec.reps)]
    for pair in _draw_pairs(spec, cfg, rng) if spec.n_pairs else []:
        snr = float(rng.choice(spec.snr_db)) if spec.snr_db else float(rng.uniform(lo, hi))
        plan.append((pair, snr))
    if any(len(t) >= cfg.K for t, _ in plan):
        raise DomainError(f"Q must stay below K={cfg.K}")
    return plan


def generate_dataset(spec: DatasetSpec, cfg: ArrayConfig, W=None) -> Dataset:
    """Simulate noisy/clean covariance feature pairs with grid labels.

    Sample ``i`` uses snapshot seed ``derive_seed(spec.seed, 1, i)``; the clean
    target is the exact covariance normalized with the noisy sample's factor.
    """
    if W is None:
        W = build_beamformer(cfg, spec.w_policy, spec.w_seed)
    w_seed = spec.w_seed if getattr(W, "seed", None) is None else W.seed
    plan = _plan(spec, cfg)
    dtype = spec.dtype
    manifest = {
        "format_version": VERSION,
        "spec": asdict(spec),
        "array": asdict(cfg),
        "count": len(plan),
        "w_seed": int(w_seed),
        "w_policy": getattr(W, "policy", spec.w_policy),
        "rng": "numpy PCG64 via SeedSequence(master, stream, index)",
    }
    manifest = json.loads(json.dumps(manifest))  # same types as after a file round trip
    if not plan:
        return _empty(cfg.K, cfg.L, dtype, cfg.theta0, cfg.dtheta, manifest)

    T = len(plan)
    noisy = np.empty((T, cfg.K, cfg.K, 2), dtype)
    clean = np.empty_like(noisy)
    labels = np.empty((T, cfg.L), np.uint8)
    seeds = np.empty(T, np.uint64)
    norm = np.empty(T)
    for i, (thetas, snr) in enumerate(plan):
        seed = derive_seed(spec.seed, SAMPLE_STREAM, i)
        params = SimParams(snr_db=snr, N=spec.N, thetas=thetas, seed=seed)
        Ct = sample_covariance(simulate_snapshots(cfg, W, params))
        C = exact_covariance(cfg, W, thetas, params.sigma_s2, params.sigma_v2)
        ft = to_feature_tensor(Ct)
        noisy[i] = ft.R
        clean[i] = to_feature_tensor(C, ft.norm_factor).R
        labels[i] = make_label(thetas, cfg.theta0, cfg.dtheta).z
        seeds[i] = seed
        norm[i] = ft.norm_factor
    return Dataset(
        noisy=noisy, clean=clean, labels=labels, thetas=[t for t, _ in plan],
        snr_db=np.array([s for _, s in plan]), N=np.full(T, spec.N, np.int64), seeds=seeds,
        w_seeds=np.full(T, w_seed, np.uint64), norm=norm,
        theta0=cfg.theta0, dtheta=cfg.dtheta, manifest=manifest,
    )


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_dataset(ds: Dataset, path) -> None:
    f32 = ds.noisy.dtype == np.float32
    ftype = "<f4" if f32 else "<f8"
    header = _HEADER.pack(MAGIC, VERSION, ds.K, ds.L, len(ds), int(f32))
    parts = []
    for i in range(len(ds)):
        th = ds.thetas[i]
        parts += [
            ds.noisy[i].astype(ftype).tobytes(),
            ds.clean[i].astype(ftype).tobytes(),
            np.packbits(ds.labels[i]).tobytes(),
            struct.pack(f"<B{len(th)}d", len(th), *th),
            struct.pack("<dIQQd", ds.snr_db[i], ds.N[i], ds.seeds[i], ds.w_seeds[i], ds.norm[i]),
        ]
    payload = b"".join(parts)
    path = Path(path)
    path.write_bytes(header + payload + struct.pack("<I", zlib.crc32(payload)))
    extra = {"theta0": ds.theta0, "dtheta": ds.dtheta}
    manifest_path(path).write_text(
        json.dumps({**ds.manifest, "_grid": extra}, sort_keys=True, indent=2) + "\n"
    )


def load_dataset(path) -> Dataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated header")
    magic, version, K, L, count, f32 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    payload, trailer = raw[_HEADER.size : -4], raw[-4:]
    if zlib.crc32(payload) != struct.unpack("<I", trailer)[0]:
        raise ChecksumError(f"{path}: CRC-32 mismatch")

    ftype = np.dtype("<f4" if f32 else "<f8")
    dtype = np.float32 if f32 else np.float64
    nfeat = K * K * 2
    nlab = (L + 7) // 8
    manifest = {}
    grid = {"theta0": 90.0, "dtheta": 1.0}
    if manifest_path(path).exists():
        manifest = json.loads(manifest_path(path).read_text())
        grid = manifest.pop("_grid", grid)
    ds = _empty(K, L, dtype, grid["theta0"], grid["dtheta"], manifest)
    if count == 0:
        return ds

    noisy = np.empty((count, K, K, 2), dtype)
    clean = np.empty_like(noisy)
    labels = np.empty((count, L), np.uint8)
    thetas, meta = [], np.empty((count, 5), dtype=object)
    off = 0
    try:
        for i in range(count):
            for dst in (noisy, clean):
                dst[i] = np.frombuffer(payload, ftype, nfeat, off).reshape(K, K, 2)
                off += nfeat * ftype.itemsize
            labels[i] = np.unpackbits(np.frombuffer(payload, np.uint8, nlab, off))[:L]
            off += nlab
            (q,) = struct.unpack_from("<B", payload, off)
            thetas.append(struct.unpack_from(f"<{q}d", payload, off + 1))
            off += 1 + 8 * q
            meta[i] = struct.unpack_from("<dIQQd", payload, off)
            off += struct.calcsize("<dIQQd")
    except (ValueError, struct.error) as exc:
        raise FormatError(f"{path}: truncated payload") from exc
    if off != len(payload):
        raise FormatError(f"{path}: {len(payload) - off} trailing bytes")
    ds.noisy, ds.clean, ds.labels, ds.thetas = noisy, clean, labels, thetas
    ds.snr_db = meta[:, 0].astype(float)
    ds.N = meta[:, 1].astype(np.int64)
    ds.seeds = meta[:, 2].astype(np.uint64)
    ds.w_seeds = meta[:, 3].astype(np.uint64)
    ds.norm = meta[:, 4].astype(float)
    return ds


def features_nchw(R: np.ndarray) -> np.ndarray:
    """``(..., K, K, 2)`` feature tensors to the channel-first layout of the networks."""
    return np.moveaxis(np.asarray(R), -1, -3)


def features_nhwc(X: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.asarray(X), -3, -1)
