"""Multi-task detection loss with per-view sub-losses and analytic gradients.

Class targets are integer arrays: 0 background, ``c >= 1`` object class,
``-1`` ignored in that view. The fusion terms are supervised with BEV-view
targets; the image and BEV branches each with their own view's targets.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ShapeMismatch


@dataclass
class HeaderOutputs:
    y_fusion: np.ndarray  # (N, K) pre-softmax scores, K = num_classes + 1
    y_img: np.ndarray
    y_bev: np.ndarray
    s_fusion: np.ndarray  # (N, 10) corner encodings
    s_img: np.ndarray
    s_bev: np.ndarray
    a_fusion: np.ndarray  # (N, 2) cos/sin orientation

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zeros_like(cls, other: "HeaderOutputs") -> "HeaderOutputs":
        return cls(**{k: np.zeros_like(v, dtype=np.float64) for k, v in other.arrays().items()})


@dataclass
class LossTargets:
    cls_bev: np.ndarray   # (N,) int
    cls_img: np.ndarray   # (N,) int
    reg_bev: np.ndarray   # (N, 10)
    reg_img: np.ndarray   # (N, 10)
    ang_bev: np.ndarray   # (N, 2)


@dataclass(frozen=True)
class LossWeights:
    lambda_cls: float = 1.0
    lambda_reg: float = 1.0
    lambda_ang: float = 1.0
    lambda_sub_cls: float = 1.0
    lambda_sub_reg: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    @classmethod
    def with_ratio(cls, ratio: float, base: float = 1.0) -> "LossWeights":
        """Fusion weights at ``base``; both sub-loss weights at ``ratio * base``."""
        return cls(base, base, base, ratio * base, ratio * base)


@dataclass
class LossBreakdown:
    cls: float
    reg: float
    ang: float
    sub_cls: float
    sub_reg: float
    total: float
    grads: HeaderOutputs


def smooth_l1(x):
    """Elementwise value and derivative: 0.5 x^2 inside |x| < 1, |x| - 0.5 outside."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    small = ax < 1.0
    value = np.where(small, 0.5 * x * x, ax - 0.5)
    deriv = np.where(small, x, np.sign(x))
    return value, deriv


def cross_entropy(scores, labels):
    """Per-row softmax cross-entropy and its gradient (softmax - one-hot)."""
    s = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    squeeze = s.ndim == 1
    if squeeze:
        s, labels = s[None], labels.reshape(1)
    shifted = s - s.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(s))
    loss = logz - shifted[rows, labels]
    grad = np.exp(shifted - logz[:, None])
    grad[rows, labels] -= 1.0
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def _cls_term(scores, targets):
    """Mean CE over participating rows; returns (value, grad w.r.t. scores)."""
    grad = np.zeros_like(scores, dtype=np.float64)
    active = targets >= 0
    n = int(active.sum())
    if n == 0:
        return 0.0, grad
    loss, g = cross_entropy(scores[active], targets[active])
    grad[active] = g / n
    return float(np.sum(loss) / n), grad


def _reg_term(pred, target, positive):
    """Smooth-L1 summed over encoding dims, averaged over positive rows."""
    grad = np.zeros_like(pred, dtype=np.float64)
    n = int(positive.sum())
    if n == 0:
        return 0.0, grad
    value, deriv = smooth_l1(pred[positive] - target[positive])
    grad[positive] = deriv / n
    return float(np.sum(value) / n), grad


def _check_shapes(out: HeaderOutputs, tgt: LossTargets):
    n = out.y_fusion.shape[0]
    k = out.y_fusion.shape[1]
    expect = {
        "y_img": (n, k), "y_bev": (n, k),
        "s_fusion": tgt.reg_bev.shape, "s_img": tgt.reg_img.shape, "s_bev": tgt.reg_bev.shape,
        "a_fusion": tgt.ang_bev.shape,
    }
    for name, shape in expect.items():
        if getattr(out, name).shape != shape:
            raise ShapeMismatch(f"{name} has shape {getattr(out, name).shape}, expected {shape}")
    for name in ("cls_bev", "cls_img"):
        if getattr(tgt, name).shape != (n,):
            raise ShapeMismatch(f"{name} has shape {getattr(tgt, name).shape}, expected {(n,)}")
    if tgt.reg_bev.shape[0] != n or tgt.reg_img.shape[0] != n or tgt.ang_bev.shape[0] != n:
        raise ShapeMismatch("target rows do not match the number of proposals")


def sub_losses(out: HeaderOutputs, tgt: LossTargets):
    """Image- and BEV-branch losses, each supervised with its own view's labels.

    Returns ``(sub_cls, sub_reg, grads)`` with gradients for ``y_img``,
    ``y_bev``, ``s_img`` and ``s_bev`` (other entries zero).
    """
    cls_img = np.asarray(tgt.cls_img)
    cls_bev = np.asarray(tgt.cls_bev)
    grads = HeaderOutputs.zeros_like(out)
    ci, grads.y_img = _cls_term(out.y_img, cls_img)
    cb, grads.y_bev = _cls_term(out.y_bev, cls_bev)
    ri, grads.s_img = _reg_term(out.s_img, tgt.reg_img, cls_img > 0)
    rb, grads.s_bev = _reg_term(out.s_bev, tgt.reg_bev, cls_bev > 0)
    return ci + cb, ri + rb, grads


def total_loss(out: HeaderOutputs, tgt: LossTargets, w: LossWeights = LossWeights()) -> LossBreakdown:
    _check_shapes(out, tgt)
    cls_bev = np.asarray(tgt.cls_bev)
    pos_bev = cls_bev > 0

    cls, g_yf = _cls_term(out.y_fusion, cls_bev)
    reg, g_sf = _reg_term(out.s_fusion, tgt.reg_bev, pos_bev)
    ang, g_af = _reg_term(out.a_fusion, tgt.ang_bev, pos_bev)
    sub_cls, sub_reg, g_sub = sub_losses(out, tgt)

    total = (w.lambda_cls * cls + w.lambda_reg * reg + w.lambda_ang * ang
             + w.lambda_sub_cls * sub_cls + w.lambda_sub_reg * sub_reg)
    grads = HeaderOutputs(
        y_fusion=w.lambda_cls * g_yf,
        y_img=w.lambda_sub_cls * g_sub.y_img,
        y_bev=w.lambda_sub_cls * g_sub.y_bev,
        s_fusion=w.lambda_reg * g_sf,
        s_img=w.lambda_sub_reg * g_sub.s_img,
        s_bev=w.lambda_sub_reg * g_sub.s_bev,
        a_fusion=w.lambda_ang * g_af,
    )
    return LossBreakdown(cls, reg, ang, sub_cls, sub_reg, float(total), grads)
