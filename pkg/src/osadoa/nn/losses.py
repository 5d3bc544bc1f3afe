"""Losses returning ``(value, gradient w.r.t. prediction)``."""

import numpy as np

BCE_EPS = 1e-7


def _check(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")


def mse_loss(pred, target):
    """Batch mean of squared Frobenius errors, ``(1/T) sum_i ||pred_i - target_i||^2``."""
    target = np.asarray(target, dtype=pred.dtype)
    _check(pred, target)
    T = pred.shape[0]
    diff = pred - target
    return float(np.sum(diff.astype(np.float64) ** 2) / T), 2.0 * diff / T


def bce_loss(pred, target, eps=BCE_EPS):
    """Binary cross-entropy averaged over the L outputs and the batch.

    Predictions are clamped to ``[eps, 1-eps]``. The gradient is evaluated at
    the clamped point and passed through unchanged, so saturated outputs still
    receive a learning signal.
    """
    target = np.asarray(target, dtype=pred.dtype)
    _check(pred, target)
    n = pred.size
    p = np.clip(pred, eps, 1 - eps)
    p64 = p.astype(np.float64)
    loss = -np.sum(target * np.log(p64) + (1 - target) * np.log1p(-p64)) / n
    grad = (p - target) / (p * (1 - p)) / n
    return float(loss), grad.astype(pred.dtype, copy=False)
