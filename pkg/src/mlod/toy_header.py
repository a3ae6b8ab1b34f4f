"""A miniature three-branch detection header with hand-written backprop and Adam.

Image branch: masked k x k x 3 crop -> hidden (ReLU) -> class scores, corner offsets.
BEV branch: k x k x 6 crop -> hidden (ReLU) -> class scores, corner offsets.
Fusion: concat(hidden_img, hidden_bev) -> class scores, corner offsets, orientation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .box_codec import ENCODING_SIZE
from .errors import NonFiniteLoss, ShapeMismatch
from .losses import HeaderOutputs, LossTargets, LossWeights, total_loss


@dataclass(frozen=True)
class HeaderConfig:
    k: int = 7
    c_img: int = 3
    c_bev: int = 6
    hidden: int = 32
    num_classes: int = 3   # object classes; scores have num_classes + 1 entries

    @property
    def img_dim(self):
        return self.k * self.k * self.c_img

    @property
    def bev_dim(self):
        return self.k * self.k * self.c_bev

    @property
    def num_scores(self):
        return self.num_classes + 1


def param_shapes(cfg: HeaderConfig) -> dict:
    H, K, R = cfg.hidden, cfg.num_scores, ENCODING_SIZE
    return {
        "W_img": (cfg.img_dim, H), "b_img": (H,),
        "W_bev": (cfg.bev_dim, H), "b_bev": (H,),
        "W_img_cls": (H, K), "b_img_cls": (K,),
        "W_img_reg": (H, R), "b_img_reg": (R,),
        "W_bev_cls": (H, K), "b_bev_cls": (K,),
        "W_bev_reg": (H, R), "b_bev_reg": (R,),
        "W_fus_cls": (2 * H, K), "b_fus_cls": (K,),
        "W_fus_reg": (2 * H, R), "b_fus_reg": (R,),
        "W_fus_ang": (2 * H, 2), "b_fus_ang": (2,),
    }


@dataclass
class ToyHeaderModel:
    cfg: HeaderConfig
    params: dict

    @classmethod
    def init(cls, cfg: HeaderConfig = HeaderConfig(), seed: int = 0) -> "ToyHeaderModel":
        """Xavier-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in param_shapes(cfg).items():
            if name.startswith("W"):
                bound = math.sqrt(6.0 / (shape[0] + shape[1]))
                params[name] = rng.uniform(-bound, bound, size=shape)
            else:
                params[name] = np.zeros(shape)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: HeaderConfig = HeaderConfig()) -> "ToyHeaderModel":
        return cls(cfg, {n: np.zeros(s) for n, s in param_shapes(cfg).items()})

    def copy(self) -> "ToyHeaderModel":
        return ToyHeaderModel(self.cfg, {n: p.copy() for n, p in self.params.items()})

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


@dataclass
class ForwardCache:
    x_img: np.ndarray
    x_bev: np.ndarray
    h_img: np.ndarray
    h_bev: np.ndarray


def _flatten_inputs(model, img, bev, mask):
    cfg = model.cfg
    img = np.asarray(img, dtype=np.float64)
    bev = np.asarray(bev, dtype=np.float64)
    n = img.shape[0]
    if img.shape[1:] != (cfg.k, cfg.k, cfg.c_img):
        raise ShapeMismatch(f"image crops {img.shape}, expected (N, {cfg.k}, {cfg.k}, {cfg.c_img})")
    if bev.shape != (n, cfg.k, cfg.k, cfg.c_bev):
        raise ShapeMismatch(f"bev crops {bev.shape}, expected ({n}, {cfg.k}, {cfg.k}, {cfg.c_bev})")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != (n, cfg.k, cfg.k):
            raise ShapeMismatch(f"mask {mask.shape}, expected ({n}, {cfg.k}, {cfg.k})")
        img = np.where(mask[..., None] != 0, img, 0.0)
    return img.reshape(n, -1), bev.reshape(n, -1)


def forward(model: ToyHeaderModel, img_feats, bev_feats, mask=None, return_cache=False):
    """Header outputs for a batch; ``mask`` (N, k, k) zeroes image cells before the image branch."""
    p = model.params
    x_img, x_bev = _flatten_inputs(model, img_feats, bev_feats, mask)
    h_img = np.maximum(x_img @ p["W_img"] + p["b_img"], 0.0)
    h_bev = np.maximum(x_bev @ p["W_bev"] + p["b_bev"], 0.0)
    h_fus = np.concatenate([h_img, h_bev], axis=1)
    out = HeaderOutputs(
        y_fusion=h_fus @ p["W_fus_cls"] + p["b_fus_cls"],
        y_img=h_img @ p["W_img_cls"] + p["b_img_cls"],
        y_bev=h_bev @ p["W_bev_cls"] + p["b_bev_cls"],
        s_fusion=h_fus @ p["W_fus_reg"] + p["b_fus_reg"],
        s_img=h_img @ p["W_img_reg"] + p["b_img_reg"],
        s_bev=h_bev @ p["W_bev_reg"] + p["b_bev_reg"],
        a_fusion=h_fus @ p["W_fus_ang"] + p["b_fus_ang"],
    )
    if return_cache:
        return out, ForwardCache(x_img, x_bev, h_img, h_bev)
    return out


def backward(model: ToyHeaderModel, cache: ForwardCache, g: HeaderOutputs) -> dict:
    """Parameter gradients given gradients w.r.t. every header output."""
    p = model.params
    H = model.cfg.hidden
    h_fus = np.concatenate([cache.h_img, cache.h_bev], axis=1)
    grads = {}

    def head(name, h, gy):
        grads["W_" + name] = h.T @ gy
        grads["b_" + name] = gy.sum(axis=0)
        return gy @ p["W_" + name].T

    d_fus = (head("fus_cls", h_fus, g.y_fusion) + head("fus_reg", h_fus, g.s_fusion)
             + head("fus_ang", h_fus, g.a_fusion))
    d_img = d_fus[:, :H] + head("img_cls", cache.h_img, g.y_img) + head("img_reg", cache.h_img, g.s_img)
    d_bev = d_fus[:, H:] + head("bev_cls", cache.h_bev, g.y_bev) + head("bev_reg", cache.h_bev, g.s_bev)
    d_img = d_img * (cache.h_img > 0)
    d_bev = d_bev * (cache.h_bev > 0)
    grads["W_img"] = cache.x_img.T @ d_img
    grads["b_img"] = d_img.sum(axis=0)
    grads["W_bev"] = cache.x_bev.T @ d_bev
    grads["b_bev"] = d_bev.sum(axis=0)
    return grads


def loss_and_grads(model, batch, weights: LossWeights, use_mask: bool = True):
    out, cache = forward(model, batch.img, batch.bev, batch.mask if use_mask else None, return_cache=True)
    lb = total_loss(out, batch.targets(), weights)
    return lb, backward(model, cache, lb.grads)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    decay: float = 0.5
    decay_every: int = 500
    batch_size: int = 64
    seed: int = 0
    ratio: float = 1.0        # lambda_sub / lambda_cls
    use_mask: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("batch_size and decay_every must be >= 1")

    def lr_at(self, step: int) -> float:
        return self.lr * self.decay ** (step // self.decay_every)


@dataclass
class Dataset:
    """Per-proposal header inputs and targets, one row per ROI."""

    img: np.ndarray        # (N, k, k, 3) in [0, 1]
    bev: np.ndarray        # (N, k, k, 6)
    mask: np.ndarray       # (N, k, k) uint8
    cls_bev: np.ndarray
    cls_img: np.ndarray
    reg_bev: np.ndarray
    reg_img: np.ndarray
    ang_bev: np.ndarray
    meta: dict = field(default_factory=dict)   # optional per-row arrays for evaluation

    def __len__(self):
        return len(self.cls_bev)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.img[idx], self.bev[idx], self.mask[idx], self.cls_bev[idx], self.cls_img[idx],
                       self.reg_bev[idx], self.reg_img[idx], self.ang_bev[idx],
                       {k: _take(v, idx) for k, v in self.meta.items()})

    def targets(self) -> LossTargets:
        return LossTargets(self.cls_bev, self.cls_img, self.reg_bev, self.reg_img, self.ang_bev)

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        arr = lambda name: np.concatenate([getattr(p, name) for p in parts])
        meta = {}
        for key in parts[0].meta:
            vals = [p.meta[key] for p in parts]
            meta[key] = np.concatenate(vals) if isinstance(vals[0], np.ndarray) else sum(vals, [])
        return cls(arr("img"), arr("bev"), arr("mask"), arr("cls_bev"), arr("cls_img"),
                   arr("reg_bev"), arr("reg_img"), arr("ang_bev"), meta)


def _take(v, idx):
    if isinstance(v, np.ndarray):
        return v[idx]
    return [v[i] for i in idx]


@dataclass
class TrainResult:
    model: ToyHeaderModel
    losses: np.ndarray   # total loss per step


def train(model: ToyHeaderModel, data: Dataset, cfg: TrainConfig,
          weights: Optional[LossWeights] = None) -> TrainResult:
    """Adam on mini-batches drawn with the config seed. Returns a trained copy."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    weights = LossWeights.with_ratio(cfg.ratio) if weights is None else weights
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    m = {n: np.zeros_like(p) for n, p in model.params.items()}
    v = {n: np.zeros_like(p) for n, p in model.params.items()}
    losses = np.empty(cfg.steps)
    bs = min(cfg.batch_size, len(data))
    for step in range(cfg.steps):
        batch = data.subset(rng.choice(len(data), size=bs, replace=False))
        lb, grads = loss_and_grads(model, batch, weights, cfg.use_mask)
        if not math.isfinite(lb.total):
            raise NonFiniteLoss(step, lb.total)
        losses[step] = lb.total
        lr = cfg.lr_at(step)
        t = step + 1
        c1 = 1.0 - cfg.beta1 ** t
        c2 = 1.0 - cfg.beta2 ** t
        for name, g in grads.items():
            m[name] = cfg.beta1 * m[name] + (1.0 - cfg.beta1) * g
            v[name] = cfg.beta2 * v[name] + (1.0 - cfg.beta2) * g * g
            model.params[name] -= lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + cfg.eps)
    return TrainResult(model, losses)
