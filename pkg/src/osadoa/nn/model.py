"""Layer containers, plain SGD and finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Dropout, Layer


class Sequential:
    """Chain of layers applied in order."""

    def __init__(self, layers, input_shape=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        if self.input_shape is not None:
            self.output_shape = self.shape_trace()[-1]

    def shape_trace(self):
        """Per-sample shape after every layer; raises on inconsistent specs."""
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        return shapes

    def init(self, seed, dtype=np.float64):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng, dtype)
        return self

    @property
    def dtype(self):
        for key, value in self.named_params():
            return value.dtype
        return np.dtype(np.float64)

    def astype(self, dtype):
        for layer in self.layers:
            for d in (layer.params, layer.state):
                for key in d:
                    d[key] = d[key].astype(dtype)
        return self

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    __call__ = forward

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{layer.kind}.{key}", layer.params[key]

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{layer.kind}.{key}", layer.grads.get(key)

    def reseed_dropout(self, seed):
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dropout):
                layer.reseed(seed + i)

    def snapshot(self):
        """Deep copy of parameters and state, for restoring later."""
        return [({k: v.copy() for k, v in l.params.items()},
                 {k: v.copy() for k, v in l.state.items()}) for l in self.layers]

    def restore(self, snap):
        for layer, (params, state) in zip(self.layers, snap):
            layer.params = {k: v.copy() for k, v in params.items()}
            layer.state = {k: v.copy() for k, v in state.items()}

    def n_params(self):
        return sum(v.size for _, v in self.named_params())

    def __getitem__(self, index):
        if isinstance(index, slice):
            return Sequential(self.layers[index])
        return self.layers[index]

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        inner = "\n".join(f"  {layer!r}" for layer in self.layers)
        return f"Sequential(\n{inner}\n)"


def sgd_step(model, lr):
    """In-place ``theta <- theta - lr * grad`` for every parameter of ``model``.

    ``model`` may be a :class:`Sequential` or a single :class:`Layer`.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    layers = [model] if isinstance(model, Layer) else model.layers
    for layer in layers:
        for key, value in layer.params.items():
            g = layer.grads.get(key)
            if g is None:
                continue
            if g.shape != value.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {value.shape}")
            value -= lr * g.astype(value.dtype, copy=False)


@dataclass
class GradCheckReport:
    """Per-tensor relative errors ``||g_a - g_fd|| / max(||g_a|| + ||g_fd||, floor)``.

    The floor keeps gradients that are identically zero (a bias feeding a
    batchnorm) from turning finite-difference roundoff into a unit error.
    """

    errors: dict = field(default_factory=dict)
    tolerance: float = 1e-6
    checked: int = 0

    @property
    def max_rel_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self):
        lines = [f"{k:32s} {v:.3e}" for k, v in self.errors.items()]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"max relative error {self.max_rel_error:.3e} "
                     f"(tol {self.tolerance:.0e}, {self.checked} coords) {status}")
        return "\n".join(lines)


GRAD_FLOOR = 1e-6


def _rel(a, b):
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), GRAD_FLOOR)
    return float(np.linalg.norm(a - b) / denom)


def grad_check(model, loss_fn, x, target, tolerance=1e-6, h=1e-5, train=True,
               max_coords=None, seed=0, check_input=True) -> GradCheckReport:
    """Compare backprop gradients with central differences.

    The check runs in float64; dropout masks are re-seeded before every
    forward pass so all perturbed evaluations see the same mask. With
    ``max_coords`` only that many randomly chosen coordinates per tensor are
    perturbed. Batchnorm running statistics are restored afterwards.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 model")
    x = np.asarray(x, dtype=np.float64)
    snap = model.snapshot()
    rng = np.random.default_rng(seed)

    def evaluate(inp):
        model.reseed_dropout(seed)
        return loss_fn(model.forward(inp, train), target)

    _, g = evaluate(x)
    gx = model.backward(g)
    analytic = {name: grad.copy() for name, grad in model.named_grads()}

    report = GradCheckReport(tolerance=tolerance)
    targets = list(model.named_params())
    if check_input:
        targets.append(("input", x))
    for name, tensor in targets:
        flat = tensor.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        numeric = np.empty(len(coords))
        for j, c in enumerate(coords):
            old = flat[c]
            flat[c] = old + h
            lp, _ = evaluate(x)
            flat[c] = old - h
            lm, _ = evaluate(x)
            flat[c] = old
            numeric[j] = (lp - lm) / (2 * h)
        ref = (gx if name == "input" else analytic[name]).reshape(-1)[coords]
        report.errors[name] = _rel(ref, numeric)
        report.checked += len(coords)
    model.restore(snap)
    return report
