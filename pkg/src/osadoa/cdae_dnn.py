"""CDAE-DNN estimator: a convolutional denoising autoencoder cleans the
normalized sample-covariance tensor, then a fully connected classifier scores
every grid angle and the Q highest scores give the DOA estimates.

The two networks are trained separately: the autoencoder on MSE against the
exact covariance, then the classifier on binary cross-entropy against the
grid labels with the autoencoder frozen in eval mode.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .dataset import Dataset, features_nchw, to_feature_tensor
from .errors import DivergenceError, DomainError
from .nn import (
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
    load_model,
    mse_loss,
    save_model,
    sgd_step,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CdaeArch:
    """Encoder of ``len(channels)`` conv+BN+ReLU blocks and a mirrored decoder.

    The decoder runs transposed convolutions back through the channel list to
    2 output channels; its last block has no BN and an identity activation
    because the real/imaginary targets are signed.
    """

    channels: tuple = (16, 32, 64)
    kernel: int = 3
    stride: int = 1
    padding: str = "same"

    @property
    def H(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class FcArch:
    widths: tuple = (2048, 4096, 2048)
    dropout: float = 0.2


FULL_CDAE = CdaeArch()
FULL_FC = FcArch()
TOY_FC = FcArch(widths=(256, 512, 256))


@dataclass(frozen=True)
class TrainHyper:
    batch_size: int = 1000
    epochs: int = 30
    lr: float = 0.1
    seed: int = 0
    precision: str = "f32"
    warmup_epochs: float = 0.0  # linear learning-rate ramp from 0
    schedule: str = "constant"  # or "cosine": decay to 0 over the run

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


FULL_HYPER = TrainHyper(batch_size=1000, epochs=30, lr=0.1)
TOY_HYPER = TrainHyper(batch_size=64, epochs=100, lr=0.05)
# Desk-scale recipes that actually converge with plain SGD on ~2400 samples:
# the summed-MSE autoencoder diverges at lr 0.05 without a warmup, and the
# label-averaged BCE gradient is too small for the classifier at lr 0.05.
TOY_CDAE_HYPER = TrainHyper(batch_size=32, epochs=100, lr=0.01, warmup_epochs=3.0,
                            schedule="cosine")
TOY_FC_HYPER = TrainHyper(batch_size=64, epochs=100, lr=1.0)


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    hyper: dict = field(default_factory=dict)
    val: dict = field(default_factory=dict)

    def to_dict(self):
        return {"history": list(self.history), "hyper": dict(self.hyper), "val": dict(self.val)}


class Cdae(Sequential):
    """Autoencoder whose first ``code_index`` layers form the encoder."""

    def __init__(self, layers, input_shape, code_index):
        super().__init__(layers, input_shape)
        self.code_index = code_index

    def encode(self, x):
        """The code ``r = f(R)``: encoder output in eval mode."""
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[: self.code_index]:
            x = layer.forward(x, False)
        return x


def build_cdae(arch: CdaeArch, K: int, seed=0, dtype=np.float64, out_scale=0.1) -> Cdae:
    """Encoder/decoder for ``(2, K, K)`` inputs.

    Convolutions followed by batchnorm carry no bias (the batchnorm shift
    absorbs it). The last decoder weight starts at ``out_scale`` times its
    He initialization, which keeps the first epochs from being dominated by
    a large random output.
    """
    conv = dict(kernel=arch.kernel, stride=arch.stride, padding=arch.padding)
    layers, prev = [], 2
    for ch in arch.channels:
        layers += [Conv2d(prev, ch, bias=False, **conv), BatchNorm(ch), ReLU()]
        prev = ch
    code_index = len(layers)
    outs = list(arch.channels[-2::-1]) + [2]
    for i, ch in enumerate(outs):
        last = i == len(outs) - 1
        layers.append(TransposedConv2d(prev, ch, bias=last, **conv))
        if not last:
            layers += [BatchNorm(ch), ReLU()]
        prev = ch
    model = Cdae(layers, (2, K, K), code_index)
    if model.output_shape != (2, K, K):
        raise DomainError(f"architecture maps (2,{K},{K}) to {model.output_shape}")
    model.init(seed, dtype)
    model.layers[-1].params["weight"] *= out_scale
    return model


def build_fc(arch: FcArch, K: int, L: int, seed=0, dtype=np.float64) -> Sequential:
    layers, prev = [Flatten()], 2 * K * K
    for width in arch.widths:
        layers += [Dense(prev, width), ReLU(), Dropout(arch.dropout)]
        prev = width
    layers += [Dense(prev, L), Sigmoid()]
    return Sequential(layers, (2, K, K)).init(seed, dtype)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if len(idx) >= 2:  # batchnorm needs two samples
            yield idx


def _fit(models, X, Y, loss_fn, hyper: TrainHyper, forward, backward, what):
    rng = np.random.default_rng(hyper.seed)
    report = TrainReport(hyper=asdict(hyper))
    steps_per_epoch = max(len(X) // hyper.batch_size, 1)
    warmup_steps = hyper.warmup_epochs * steps_per_epoch
    total_steps = hyper.epochs * steps_per_epoch
    step = 0
    for epoch in range(hyper.epochs):
        total, count = 0.0, 0
        for idx in _batches(len(X), hyper.batch_size, rng):
            step += 1
            lr = hyper.lr * min(1.0, step / warmup_steps) if warmup_steps else hyper.lr
            if hyper.schedule == "cosine":
                lr *= 0.5 * (1 + np.cos(np.pi * min(step / total_steps, 1.0)))
            loss, grad = loss_fn(forward(X[idx]), Y[idx])
            if not np.isfinite(loss):
                report.history.append(float("nan"))
                raise DivergenceError(f"{what} loss diverged in epoch {epoch}", report)
            backward(grad)
            if lr > 0:
                for m in models:
                    sgd_step(m, lr)
            total += loss * len(idx)
            count += len(idx)
        report.history.append(total / max(count, 1))
        log.debug("%s epoch %d loss %.6g", what, epoch, report.history[-1])
    return report


def _batched_forward(model, X, batch=1024):
    if len(X) == 0:
        return np.zeros((0,) + tuple(model.output_shape), model.dtype)
    return np.concatenate([model.forward(X[i : i + batch], False) for i in range(0, len(X), batch)])


def denoise_ratio(model: Cdae, ds: Dataset) -> np.ndarray:
    """Per-sample ``||R_hat - R||_F / ||R_tilde - R||_F``."""
    X = features_nchw(ds.noisy).astype(model.dtype)
    Y = features_nchw(ds.clean).astype(np.float64)
    out = _batched_forward(model, X).astype(np.float64)
    num = np.linalg.norm((out - Y).reshape(len(ds), -1), axis=1)
    den = np.linalg.norm((X.astype(np.float64) - Y).reshape(len(ds), -1), axis=1)
    return num / den


def train_cdae(model: Cdae, dataset: Dataset, hyper: TrainHyper, val: Dataset | None = None):
    """Minibatch SGD on the MSE between the denoised and exact feature tensors.

    Each history entry is the sample-weighted mean of that epoch's minibatch
    losses (batchnorm in train mode).
    """
    model.astype(hyper.dtype)
    X = features_nchw(dataset.noisy).astype(hyper.dtype)
    Y = features_nchw(dataset.clean).astype(hyper.dtype)
    report = _fit([model], X, Y, mse_loss, hyper,
                  lambda x: model.forward(x, True), model.backward, "cdae")
    if val is not None and len(val):
        ratio = denoise_ratio(model, val)
        Xv = features_nchw(val.noisy).astype(hyper.dtype)
        report.val = {
            "mse": mse_loss(_batched_forward(model, Xv), features_nchw(val.clean))[0],
            "median_denoise_ratio": float(np.median(ratio)),
        }
    return report


def denoise(model: Cdae, R) -> np.ndarray:
    """Eval-mode pass of ``K x K x 2`` tensor(s); returns the same layout."""
    R = np.asarray(R)
    single = R.ndim == 3
    X = features_nchw(R[None] if single else R)
    if X.shape[1:] != tuple(model.input_shape):
        raise DomainError(f"expected (K, K, 2) = {model.input_shape[1:] + (2,)}, got {R.shape}")
    out = np.moveaxis(_batched_forward(model, X.astype(model.dtype)), -3, -1)
    return out[0] if single else out


def train_fc(fc: Sequential, cdae: Cdae, dataset: Dataset, hyper: TrainHyper,
             val: Dataset | None = None):
    """Minibatch SGD on BCE against the grid labels; ``cdae`` stays frozen."""
    fc.astype(hyper.dtype)
    fc.reseed_dropout(hyper.seed)
    Xd = _batched_forward(cdae, features_nchw(dataset.noisy).astype(cdae.dtype)).astype(hyper.dtype)
    Z = dataset.labels.astype(hyper.dtype)
    report = _fit([fc], Xd, Z, bce_loss, hyper, lambda x: fc.forward(x, True), fc.backward, "fc")
    if val is not None and len(val):
        Xv = _batched_forward(cdae, features_nchw(val.noisy).astype(cdae.dtype))
        zhat = _batched_forward(fc, Xv.astype(fc.dtype))
        report.val = {"bce": bce_loss(zhat, val.labels.astype(zhat.dtype))[0]}
    return report


def train_joint(cdae: Cdae, fc: Sequential, dataset: Dataset, hyper: TrainHyper):
    """Optional end-to-end fine-tuning of both networks on the BCE loss."""
    for m in (cdae, fc):
        m.astype(hyper.dtype)
    fc.reseed_dropout(hyper.seed)
    X = features_nchw(dataset.noisy).astype(hyper.dtype)
    Z = dataset.labels.astype(hyper.dtype)
    return _fit([cdae, fc], X, Z, bce_loss, hyper,
                lambda x: fc.forward(cdae.forward(x, True), True),
                lambda g: cdae.backward(fc.backward(g)), "joint")


class Prediction(NamedTuple):
    z: np.ndarray  # L grid scores
    thetas: np.ndarray  # Q estimates, ascending
    ambiguous: bool  # tie across the selection boundary


def select_peaks(z, Q, theta0=90.0, dtheta=1.0) -> Prediction:
    """Angles of the ``Q`` largest scores; ties go to the lower grid index."""
    z = np.asarray(z)
    if not 1 <= Q <= len(z):
        raise DomainError(f"need 1 <= Q <= L={len(z)}, got Q={Q}")
    order = np.argsort(-z, kind="stable")
    ambiguous = Q < len(z) and z[order[Q - 1]] == z[order[Q]]
    idx = np.sort(order[:Q])
    return Prediction(z=z, thetas=-theta0 + dtheta * idx, ambiguous=bool(ambiguous))


def predict_batch(cdae: Cdae, fc: Sequential, Cs, Q, theta0=90.0, dtheta=1.0) -> list:
    """:func:`predict` over a stack of covariance matrices."""
    Cs = np.asarray(Cs)
    R = np.stack([to_feature_tensor(C).R for C in Cs])
    X = _batched_forward(cdae, features_nchw(R).astype(cdae.dtype))
    Z = _batched_forward(fc, X.astype(fc.dtype))
    if Z.shape[1] != int(round(2 * theta0 / dtheta)) + 1:
        raise DomainError(f"classifier has {Z.shape[1]} outputs, grid needs a different L")
    return [select_peaks(z, Q, theta0, dtheta) for z in Z]


def predict(cdae: Cdae, fc: Sequential, C, Q, theta0=90.0, dtheta=1.0) -> Prediction:
    """Normalize ``C``, denoise, classify and pick the ``Q`` best grid angles."""
    C = np.asarray(getattr(C, "C", C))
    return predict_batch(cdae, fc, C[None], Q, theta0, dtheta)[0]


def save_checkpoint(model, path, **meta):
    kind = "cdae" if isinstance(model, Cdae) else "fc"
    extra = {"code_index": model.code_index} if kind == "cdae" else {}
    save_model(model, path, {"model": kind, **extra, **meta})


def load_checkpoint(path, dtype=np.float32):
    """Rebuild a :class:`Cdae` or classifier from an OSAM file; returns ``(model, meta)``."""
    model, meta = load_model(path, dtype)
    if meta.get("model") == "cdae":
        model = Cdae(model.layers, model.input_shape, meta["code_index"])
    return model, meta
