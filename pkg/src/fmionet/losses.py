"""Masked relative-norm training loss and evaluation metrics.

The loss is a relative p-norm of the masked error plus a weighted relative
p-norm of the radial-derivative error, averaged over the batch. Metrics
(R2, MAE) pool all masked points of the evaluation set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class LossSpec:
    p: float = 2.0
    beta: float = 0.5
    eps: float = 1e-8

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("norm order must be >= 1")
        if self.beta < 0:
            raise ValueError("derivative weight must be >= 0")


def radial_diff(arr: np.ndarray) -> np.ndarray:
    """Forward differences along the last axis, last column repeating the
    previous one (one-sided closure)."""
    d = arr[..., 1:] - arr[..., :-1]
    return np.concatenate([d, d[..., -1:]], axis=-1)


def _radial_diff_tensor(x: Tensor) -> Tensor:
    nr = x.shape[-1]
    left = T.getitem(x, (Ellipsis, slice(0, nr - 1)))
    right = T.getitem(x, (Ellipsis, slice(1, nr)))
    d = T.sub(right, left)
    last = T.getitem(d, (Ellipsis, slice(nr - 2, nr - 1)))
    return T.concat([d, last], axis=x.ndim - 1)


def derivative_mask(mask: np.ndarray) -> np.ndarray:
    """Validity of the radial differences: both stencil points in-mask."""
    vm = mask[..., 1:] & mask[..., :-1] if mask.dtype == bool else \
        (mask[..., 1:] * mask[..., :-1])
    return np.concatenate([vm, vm[..., -1:]], axis=-1)


def lp_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray,
            spec: LossSpec | None = None) -> Tensor:
    """Relative masked p-norm loss with a radial-derivative term.

    ``pred`` is (B, H, W) on the tape; ``target`` and ``mask`` are constant
    arrays of the same shape (mask may broadcast over the batch axis).
    """
    spec = spec or LossSpec()
    dt = pred.dtype
    target = np.broadcast_to(np.asarray(target, dtype=dt), pred.shape)
    mask_f = np.broadcast_to(np.asarray(mask, dtype=dt), pred.shape)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")

    axes = tuple(range(1, pred.ndim))

    def pnorm(x: Tensor) -> Tensor:
        if spec.p == 2.0:
            return T.sqrt(T.tsum(T.mul(x, x), axis=axes))
        return T.power(T.tsum(T.power(T.absolute(x), spec.p), axis=axes), 1.0 / spec.p)

    def pnorm_np(x: np.ndarray) -> np.ndarray:
        return (np.abs(x) ** spec.p).sum(axis=axes) ** (1.0 / spec.p)

    m = Tensor(mask_f)
    err = T.mul(T.sub(pred, Tensor(target)), m)
    den0 = pnorm_np(target * mask_f) + spec.eps
    terms = T.div(pnorm(err), Tensor(den0.astype(dt)))

    if spec.beta > 0:
        dmask = derivative_mask(mask_f > 0).astype(dt)
        dmask = np.broadcast_to(dmask, pred.shape)
        dtarget = radial_diff(target) * dmask
        derr = T.mul(T.sub(_radial_diff_tensor(pred), Tensor(dtarget)), Tensor(dmask))
        den1 = pnorm_np(dtarget) + spec.eps
        terms = T.add(terms, T.mul(T.div(pnorm(derr), Tensor(den1.astype(dt))), spec.beta))
    return T.tmean(terms)


def r2(y: np.ndarray, y_hat: np.ndarray, mask: np.ndarray) -> float:
    """Coefficient of determination pooled over masked points.

    Returns NaN when the masked truth has zero variance (undefined R2).
    """
    sel = np.broadcast_to(mask, y.shape).astype(bool)
    yt = np.asarray(y, dtype=np.float64)[sel]
    yp = np.asarray(y_hat, dtype=np.float64)[sel]
    if yt.size == 0:
        raise ValueError("empty mask")
    ss_tot = ((yt - yt.mean()) ** 2).sum()
    if ss_tot == 0.0:
        return float("nan")
    ss_res = ((yt - yp) ** 2).sum()
    return float(1.0 - ss_res / ss_tot)


def mae(y: np.ndarray, y_hat: np.ndarray, mask: np.ndarray) -> float:
    """Mean absolute error over masked points."""
    sel = np.broadcast_to(mask, y.shape).astype(bool)
    if not sel.any():
        raise ValueError("empty mask")
    diff = np.asarray(y, dtype=np.float64)[sel] - np.asarray(y_hat, dtype=np.float64)[sel]
    return float(np.abs(diff).mean())
