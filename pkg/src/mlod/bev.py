"""Six-channel bird's-eye-view rasterization and per-proposal BEV crops.

Grid rows follow LIDAR x (forward), columns follow LIDAR y (left). Each of
the ``num_slices`` height channels stores the maximum height above the
ground plane of points falling in that slice; the last channel is the
log-normalized point density.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import OutsideExtents, ParseError
from .geometry import OrientedBox3D

GRID_MAGIC = b"MLBV"


@dataclass(frozen=True)
class BevConfig:
    resolution: float = 0.1
    x_range: tuple = (0.0, 70.0)
    y_range: tuple = (-40.0, 40.0)
    height_range: tuple = (0.0, 2.5)
    num_slices: int = 5

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]
                and self.height_range[1] > self.height_range[0]):
            raise ValueError("extents must be well ordered")
        if self.num_slices < 1:
            raise ValueError("num_slices must be >= 1")
        for v in (*self.x_range, *self.y_range):
            q = v / self.resolution
            if abs(q - round(q)) > 1e-6:
                raise ValueError(f"extent {v} is not a multiple of the resolution")

    @property
    def shape(self) -> tuple:
        H = int(round((self.x_range[1] - self.x_range[0]) / self.resolution))
        W = int(round((self.y_range[1] - self.y_range[0]) / self.resolution))
        return H, W

    @property
    def slice_width(self) -> float:
        return (self.height_range[1] - self.height_range[0]) / self.num_slices

    @property
    def num_channels(self) -> int:
        return self.num_slices + 1


@dataclass
class BevMap:
    cells: np.ndarray    # (H, W, num_slices + 1) float32
    counts: np.ndarray   # (H, W) int64, in-range points per cell
    config: BevConfig

    @property
    def density(self) -> np.ndarray:
        return self.cells[..., -1]


def density_from_counts(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return np.minimum(1.0, np.log(counts + 1.0) / math.log(16.0))


def cell_indices(points: np.ndarray, cfg: BevConfig):
    """Row/column indices of each point; columns are mirror-symmetric about y = 0.

    Negative-signed y (including -0.0) fills columns left of the centre line,
    so negating y maps column j to W - 1 - j exactly.
    """
    res = cfg.resolution
    x = points[:, 0]
    y = points[:, 1]
    rows = np.floor((x - cfg.x_range[0]) / res)
    j0 = round(-cfg.y_range[0] / res)
    neg = np.signbit(y)
    mag = np.floor(np.abs(y) / res)
    cols = np.where(neg, j0 - 1 - mag, j0 + mag)
    return rows, cols


def rasterize(cloud: np.ndarray, plane, cfg: BevConfig = BevConfig()) -> BevMap:
    H, W = cfg.shape
    S = cfg.num_slices
    cells = np.zeros((H, W, S + 1), dtype=np.float32)
    counts = np.zeros((H, W), dtype=np.int64)
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.size == 0:
        return BevMap(cells, counts, cfg)

    h = plane.height(pts[:, :3])
    rows, cols = cell_indices(pts, cfg)
    h0, h1 = cfg.height_range
    keep = ((rows >= 0) & (rows < H) & (cols >= 0) & (cols < W)
            & (h >= h0) & (h <= h1) & (pts[:, 0] < cfg.x_range[1]))
    rows = rows[keep].astype(np.int64)
    cols = cols[keep].astype(np.int64)
    h = h[keep]
    # half-open slices, the top slice closed at h1
    s = np.minimum(np.floor((h - h0) / cfg.slice_width), S - 1).astype(np.int64)

    flat_cell = rows * W + cols
    counts = np.bincount(flat_cell, minlength=H * W).reshape(H, W)

    heights = np.zeros(H * W * S, dtype=np.float64)
    np.maximum.at(heights, flat_cell * S + s, h)
    cells[..., :S] = heights.reshape(H, W, S)
    cells[..., S] = density_from_counts(counts)
    return BevMap(cells, counts, cfg)


# ---------------------------------------------------------------------------
# crop & resize
# ---------------------------------------------------------------------------

def bilinear_crop_resize(grid: np.ndarray, top: float, left: float, bottom: float,
                         right: float, out_h: int, out_w: int) -> np.ndarray:
    """Sample the region ``[top, bottom) x [left, right)`` (edge coordinates) at cell centres.

    Samples inside the grid clamp to the border cells; samples outside it read 0.
    """
    g = np.asarray(grid)
    squeeze = g.ndim == 2
    if squeeze:
        g = g[..., None]
    H, W = g.shape[:2]
    r = top + (np.arange(out_h) + 0.5) * (bottom - top) / out_h
    c = left + (np.arange(out_w) + 0.5) * (right - left) / out_w
    pr = np.clip(r - 0.5, 0.0, H - 1.0)
    pc = np.clip(c - 0.5, 0.0, W - 1.0)
    r0 = np.floor(pr).astype(np.int64)
    c0 = np.floor(pc).astype(np.int64)
    r1 = np.minimum(r0 + 1, H - 1)
    c1 = np.minimum(c0 + 1, W - 1)
    fr = (pr - r0)[:, None, None]
    fc = (pc - c0)[None, :, None]
    cell = lambda rr, cc: g[np.ix_(rr, cc)].astype(np.float64)
    top_row = cell(r0, c0) * (1 - fc) + cell(r0, c1) * fc
    bot_row = cell(r1, c0) * (1 - fc) + cell(r1, c1) * fc
    out = top_row * (1 - fr) + bot_row * fr
    inside = ((r >= 0) & (r <= H))[:, None] & ((c >= 0) & (c <= W))[None, :]
    out = np.where(inside[..., None], out, 0.0)
    return out[..., 0] if squeeze else out


def footprint_cell_hull(box: OrientedBox3D, cfg: BevConfig):
    """Axis-aligned hull of the footprint in continuous (row, col) edge coordinates."""
    fp = box.footprint()
    r = (fp[:, 0] - cfg.x_range[0]) / cfg.resolution
    c = (fp[:, 1] - cfg.y_range[0]) / cfg.resolution
    return r.min(), c.min(), r.max(), c.max()


def crop_resize_bev(bev: BevMap, box: OrientedBox3D, out_size: int = 7) -> np.ndarray:
    H, W = bev.config.shape
    top, left, bottom, right = footprint_cell_hull(box, bev.config)
    if bottom <= 0 or top >= H or right <= 0 or left >= W:
        raise OutsideExtents("box footprint does not intersect the BEV extents")
    return bilinear_crop_resize(bev.cells, top, left, bottom, right, out_size, out_size)


# ---------------------------------------------------------------------------
# flat binary grid
# ---------------------------------------------------------------------------

def encode_grid(cells: np.ndarray) -> bytes:
    """16-byte header (magic, H, W, C as uint32 LE) followed by row-major float32 LE."""
    cells = np.asarray(cells)
    if cells.ndim == 2:
        cells = cells[..., None]
    H, W, C = cells.shape
    return GRID_MAGIC + struct.pack("<III", H, W, C) + cells.astype("<f4").tobytes()


def decode_grid(blob: bytes) -> np.ndarray:
    if len(blob) < 16 or blob[:4] != GRID_MAGIC:
        raise ParseError("not an MLBV grid")
    H, W, C = struct.unpack("<III", blob[4:16])
    body = blob[16:]
    if len(body) != H * W * C * 4:
        raise ParseError(f"grid body has {len(body)} bytes, expected {H * W * C * 4}")
    return np.frombuffer(body, dtype="<f4").reshape(H, W, C).astype(np.float32)
