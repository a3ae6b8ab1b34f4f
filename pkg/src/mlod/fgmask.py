"""Foreground mask layer: sparse depth -> per-cell medians -> binary k x k mask.

Pixel ``(row, col)`` covers ``[col, col + 1) x [row, row + 1)`` in continuous
image coordinates. Depth value 0 means "no LIDAR evidence".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBox, InvalidDepthRange, ShapeMismatch


@dataclass(frozen=True)
class MaskConfig:
    k: int = 7          # side of the image-feature crop
    n: int = 4          # depth samples per feature cell along each axis
    eps1: float = 0.5   # buffer around the box depth span (m)
    eps2: float = 0.1   # depths in [0, eps2] count as "no evidence" (m)

    def __post_init__(self):
        if self.k < 1 or self.n < 1:
            raise ValueError("k and n must be >= 1")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("eps1 and eps2 must be >= 0")

    @property
    def grid_size(self) -> int:
        return self.n * self.k


def build_sparse_depth_map(cloud: np.ndarray, calib, image_size) -> np.ndarray:
    """Project LIDAR points into an ``(H, W)`` depth image; the nearest point wins a pixel."""
    W, H = image_size
    depth_map = np.full(H * W, np.inf)
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.size:
        uv, depth = calib.project_lidar(pts[:, :3])
        ok = depth > 0
        uv, depth = uv[ok], depth[ok]
        col = np.floor(uv[:, 0])
        row = np.floor(uv[:, 1])
        inside = (col >= 0) & (col < W) & (row >= 0) & (row < H)
        flat = row[inside].astype(np.int64) * W + col[inside].astype(np.int64)
        np.minimum.at(depth_map, flat, depth[inside])
    depth_map[np.isinf(depth_map)] = 0.0
    return depth_map.reshape(H, W)


def nearest_sample_indices(lo: float, hi: float, count: int, limit: int) -> np.ndarray:
    pos = lo + (np.arange(count) + 0.5) * (hi - lo) / count
    return np.clip(np.floor(pos), 0, limit - 1).astype(np.int64)


def crop_resize_depth_nearest(depth_map: np.ndarray, bbox, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    left, top, right, bottom = bbox
    if not (right > left and bottom > top):
        raise DegenerateBox(f"bbox {tuple(bbox)} has no area")
    H, W = depth_map.shape
    size = cfg.grid_size
    rows = nearest_sample_indices(top, bottom, size, H)
    cols = nearest_sample_indices(left, right, size, W)
    return depth_map[np.ix_(rows, cols)]


def cell_medians(grid: np.ndarray, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    """Median of the nonzero entries of every n x n block; 0 where a block has none."""
    k, n = cfg.k, cfg.n
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape != (k * n, k * n):
        raise ShapeMismatch(f"expected {(k * n, k * n)} grid, got {grid.shape}")
    blocks = grid.reshape(k, n, k, n).transpose(0, 2, 1, 3).reshape(k, k, n * n)
    nonzero = blocks != 0
    cnt = nonzero.sum(axis=-1)
    ordered = np.sort(np.where(nonzero, blocks, np.inf), axis=-1)
    lo = np.maximum((cnt - 1) // 2, 0)
    hi = cnt // 2
    a = np.take_along_axis(ordered, lo[..., None], axis=-1)[..., 0]
    b = np.take_along_axis(ordered, np.minimum(hi, n * n - 1)[..., None], axis=-1)[..., 0]
    with np.errstate(invalid="ignore"):
        med = (a + b) / 2
    return np.where(cnt > 0, med, 0.0)


def compute_mask(medians: np.ndarray, d_min: float, d_max: float,
                 cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    if not d_min <= d_max:
        raise InvalidDepthRange(f"d_min {d_min} > d_max {d_max}")
    m = np.asarray(medians, dtype=np.float64)
    in_box = (m >= d_min - cfg.eps1) & (m <= d_max + cfg.eps1)
    no_evidence = (m >= 0) & (m <= cfg.eps2)
    return (in_box | no_evidence).astype(np.uint8)


def apply_mask(features: np.ndarray, mask: np.ndarray) -> np.ndarray:
    features = np.asarray(features)
    mask = np.asarray(mask)
    if features.shape[:2] != mask.shape:
        raise ShapeMismatch(f"features {features.shape} vs mask {mask.shape}")
    return np.where(mask[..., None] != 0, features, np.zeros((), features.dtype))


def foreground_mask(depth_map: np.ndarray, bbox, d_min: float, d_max: float,
                    cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    grid = crop_resize_depth_nearest(depth_map, bbox, cfg)
    return compute_mask(cell_medians(grid, cfg), d_min, d_max, cfg)
