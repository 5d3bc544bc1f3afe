"""Layers with explicit forward and backward passes.

Images are channel-first, ``(batch, channels, height, width)``. Every layer
caches what its backward pass needs during ``forward`` and stores parameter
gradients in ``self.grads`` under the same keys as ``self.params``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    kind = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.state = {}  # non-trainable tensors that go into checkpoints
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def spec(self) -> dict:
        """JSON-serializable description sufficient to rebuild the layer."""
        return {"kind": self.kind}

    def init(self, rng, dtype):
        for key, value in self.params.items():
            self.params[key] = value.astype(dtype)
        for key, value in self.state.items():
            self.state[key] = value.astype(dtype)

    def _pop_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a matching forward")
        cache, self._cache = self._cache, None
        return cache

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _pad_amount(kernel, padding):
    if padding == "same":
        if kernel % 2 == 0:
            raise ValueError("same padding needs an odd kernel")
        return (kernel - 1) // 2
    return int(padding)


def _im2col(x, kernel, stride, pad):
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kernel * kernel)
    return cols, Ho, Wo


def _col2im(dcols, x_shape, kernel, stride, pad, Ho, Wo):
    B, C, H, W = x_shape
    dcols = np.ascontiguousarray(
        dcols.reshape(B, Ho, Wo, C, kernel, kernel).transpose(4, 5, 0, 3, 1, 2))
    dxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=dcols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[i, j]
    return dxp[:, :, pad : pad + H, pad : pad + W]


def conv2d(x, weight, bias, stride=1, pad=0):
    """Cross-correlation of ``x`` (B,Cin,H,W) with ``weight`` (Cout,Cin,k,k)."""
    cout, _, k, _ = weight.shape
    cols, Ho, Wo = _im2col(x, k, stride, pad)
    out = cols @ weight.reshape(cout, -1).T
    if bias is not None:
        out += bias
    return out.reshape(x.shape[0], Ho, Wo, cout).transpose(0, 3, 1, 2), cols


def conv2d_input_grad(grad, weight, x_shape, stride=1, pad=0):
    """Adjoint of :func:`conv2d` with respect to its input."""
    cout = weight.shape[0]
    B, _, Ho, Wo = grad.shape
    g = grad.transpose(0, 2, 3, 1).reshape(-1, cout)
    return _col2im(g @ weight.reshape(cout, -1), x_shape, weight.shape[2], stride, pad, Ho, Wo)


def conv2d_weight_grad(grad, cols, weight_shape):
    cout = weight_shape[0]
    g = grad.transpose(0, 2, 3, 1).reshape(-1, cout)
    return (g.T @ cols).reshape(weight_shape), g.sum(axis=0)


def _kaiming(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel=3, stride=1, padding="same", bias=True):
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.pad = _pad_amount(kernel, padding)
        self.bias = bias
        self.params = {"weight": np.zeros(self._weight_shape())}
        if bias:
            self.params["bias"] = np.zeros(out_channels)

    def _weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    def init(self, rng, dtype):
        fan_in = self.in_channels * self.kernel**2
        self.params["weight"] = _kaiming(rng, self._weight_shape(), fan_in)
        if self.bias:
            self.params["bias"] = np.zeros(self.out_channels)
        Layer.init(self, rng, dtype)

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding, "bias": self.bias}

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ValueError(f"conv2d expects {self.in_channels} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.pad
        return (self.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"conv2d expects (B, {self.in_channels}, H, W), got {x.shape}")
        out, cols = conv2d(x, self.params["weight"], self.params.get("bias"), self.stride, self.pad)
        self._cache = (cols, x.shape)
        return out

    def backward(self, grad):
        cols, x_shape = self._pop_cache()
        w = self.params["weight"]
        self.grads["weight"], gb = conv2d_weight_grad(grad, cols, w.shape)
        if self.bias:
            self.grads["bias"] = gb
        return conv2d_input_grad(grad, w, x_shape, self.stride, self.pad)


class TransposedConv2d(Conv2d):
    """Adjoint of :class:`Conv2d` with the same kernel, stride and padding.

    ``weight`` has shape ``(in_channels, out_channels, k, k)``: it is the
    weight of the conv2d whose input-gradient map this layer applies.
    """

    kind = "transposed_conv2d"

    def _weight_shape(self):
        return (self.in_channels, self.out_channels, self.kernel, self.kernel)

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ValueError(f"transposed_conv2d expects {self.in_channels} channels, got {c}")
        k, s, p = self.kernel, self.stride, self.pad
        return (self.out_channels, (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k)

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"transposed_conv2d expects (B, {self.in_channels}, H, W), got {x.shape}")
        _, h, w = self.output_shape(x.shape[1:])
        out_shape = (x.shape[0], self.out_channels, h, w)
        out = conv2d_input_grad(x, self.params["weight"], out_shape, self.stride, self.pad)
        if self.bias:
            out = out + self.params["bias"][None, :, None, None]
        self._cache = x
        return out

    def backward(self, grad):
        x = self._pop_cache()
        w = self.params["weight"]
        # grad w.r.t. input is the forward conv; weight grad swaps the conv roles
        gx, cols = conv2d(grad, w, None, self.stride, self.pad)
        self.grads["weight"], _ = conv2d_weight_grad(x, cols, w.shape)
        if self.bias:
            self.grads["bias"] = grad.sum(axis=(0, 2, 3))
        return gx


class BatchNorm(Layer):
    """Per-channel normalization over every axis except axis 1.

    Running statistics follow ``r <- momentum*r + (1-momentum)*batch``.
    """

    kind = "batchnorm"

    def __init__(self, channels, eps=1e-5, momentum=0.9):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params = {"scale": np.ones(channels), "shift": np.zeros(channels)}
        self.state = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def spec(self):
        return {"kind": self.kind, "channels": self.channels, "eps": self.eps,
                "momentum": self.momentum}

    def output_shape(self, shape):
        if shape[0] != self.channels:
            raise ValueError(f"batchnorm expects {self.channels} channels, got {shape[0]}")
        return shape

    def _bshape(self, x):
        return (1, -1) + (1,) * (x.ndim - 2)

    def forward(self, x, train=False):
        axes = (0,) + tuple(range(2, x.ndim))
        bs = self._bshape(x)
        if train:
            if x.shape[0] < 2:
                raise ValueError("batchnorm needs a batch of at least 2 in train mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.state["running_mean"] = m * self.state["running_mean"] + (1 - m) * mean
            self.state["running_var"] = m * self.state["running_var"] + (1 - m) * var
        else:
            mean, var = self.state["running_mean"], self.state["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bs)) * inv_std.reshape(bs)
        self._cache = (xhat, inv_std, train, axes)
        return self.params["scale"].reshape(bs) * xhat + self.params["shift"].reshape(bs)

    def backward(self, grad):
        xhat, inv_std, train, axes = self._pop_cache()
        bs = self._bshape(grad)
        self.grads["scale"] = (grad * xhat).sum(axis=axes)
        self.grads["shift"] = grad.sum(axis=axes)
        gxhat = grad * self.params["scale"].reshape(bs)
        if not train:
            return gxhat * inv_std.reshape(bs)
        n = grad.size // grad.shape[1]
        return inv_std.reshape(bs) / n * (
            n * gxhat
            - gxhat.sum(axis=axes).reshape(bs)
            - xhat * (gxhat * xhat).sum(axis=axes).reshape(bs)
        )


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        out = np.maximum(x, 0)
        self._cache = out
        return out

    def backward(self, grad):
        return grad * (self._pop_cache() > 0)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False):
        y = sigmoid(np.asarray(x))
        self._cache = y
        return y

    def backward(self, grad):
        y = self._pop_cache()
        return grad * y * (1 - y)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.params = {"weight": np.zeros((out_features, in_features)),
                       "bias": np.zeros(out_features)}

    def init(self, rng, dtype):
        self.params["weight"] = _kaiming(rng, self.params["weight"].shape, self.in_features)
        self.params["bias"] = np.zeros(self.out_features)
        super().init(rng, dtype)

    def spec(self):
        return {"kind": self.kind, "in_features": self.in_features,
                "out_features": self.out_features}

    def output_shape(self, shape):
        if tuple(shape) != (self.in_features,):
            raise ValueError(f"dense expects ({self.in_features},), got {tuple(shape)}")
        return (self.out_features,)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(f"dense expects (B, {self.in_features}), got {x.shape}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        x = self._pop_cache()
        self.grads["weight"] = grad.T @ x
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1/(1-rate)`` in train mode."""

    kind = "dropout"

    def __init__(self, rate=0.2, seed=0):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.reseed(seed)

    def reseed(self, seed):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def init(self, rng, dtype):
        self.reseed(int(rng.integers(2**63)))

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._cache = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._cache = keep / (1 - self.rate)
        return x * self._cache.astype(x.dtype)

    def backward(self, grad):
        if self._cache is None:
            return grad
        mask, self._cache = self._cache, None
        return grad * mask.astype(grad.dtype)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._pop_cache())


LAYER_KINDS = {
    cls.kind: cls
    for cls in (Conv2d, TransposedConv2d, BatchNorm, ReLU, Sigmoid, Dense, Dropout, Flatten)
}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    cls = LAYER_KINDS[spec.pop("kind")]
    return cls(**spec)
