"""Box geometry, camera projection, and the two IoU measures used for labeling.

Boxes live in the LIDAR frame (x forward, y left, z up). ``yaw`` is the
heading of the box length axis measured from +x towards +y. The footprint
is the box projected onto the x-y plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BehindCamera, DegenerateOnImage


def normalize_angle(a: float) -> float:
    """Wrap to [-pi, pi]; values already inside are returned unchanged."""
    if -math.pi <= a <= math.pi:
        return a
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class OrientedBox3D:
    center: tuple  # x, y, z of the geometric centre (m)
    dims: tuple    # length, width, height (m)
    yaw: float     # rad about the up axis

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        object.__setattr__(self, "yaw", float(self.yaw))

    @property
    def length(self):
        return self.dims[0]

    @property
    def width(self):
        return self.dims[1]

    @property
    def height(self):
        return self.dims[2]

    def footprint(self) -> np.ndarray:
        return box_corners_3d(self)[:4, :2]

    def translated(self, dx=0.0, dy=0.0, dz=0.0) -> "OrientedBox3D":
        x, y, z = self.center
        return OrientedBox3D((x + dx, y + dy, z + dz), self.dims, self.yaw)


class AxisAlignedBox2D(NamedTuple):
    left: float
    top: float
    right: float
    bottom: float

    @property
    def width(self):
        return self.right - self.left

    @property
    def height(self):
        return self.bottom - self.top

    @property
    def area(self):
        return max(self.right - self.left, 0.0) * max(self.bottom - self.top, 0.0)


class ProjectedBox(NamedTuple):
    bbox: AxisAlignedBox2D
    d_min: float
    d_max: float


# local footprint corners, counterclockwise starting front-left
_FOOT = np.array([[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]])


def box_corners_3d(box: OrientedBox3D) -> np.ndarray:
    """(8, 3) corners: bottom face counterclockwise, then the top face in the same order."""
    l, w, h = box.dims
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    lx = _FOOT[:, 0] * l
    ly = _FOOT[:, 1] * w
    x = box.center[0] + c * lx - s * ly
    y = box.center[1] + s * lx + c * ly
    zb = np.full(4, box.center[2] - 0.5 * h)
    zt = np.full(4, box.center[2] + 0.5 * h)
    bottom = np.column_stack([x, y, zb])
    top = np.column_stack([x, y, zt])
    return np.vstack([bottom, top])


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def project_box_to_image(box: OrientedBox3D, calib, image_size=None) -> ProjectedBox:
    """Tight 2D hull of the projected corners plus the corner depth range.

    ``image_size`` is ``(width, height)``; when given the hull is clipped to
    the image. Raises ``BehindCamera`` if any corner has non-positive depth.
    """
    corners = calib.lidar_to_rect(box_corners_3d(box))
    depth = corners[:, 2]
    if np.any(depth <= 0):
        raise BehindCamera(f"box corner depth {depth.min():.3f} <= 0")
    uv, _ = calib.project_rect(corners)
    left, top = uv.min(axis=0)
    right, bottom = uv.max(axis=0)
    if image_size is not None:
        W, H = image_size
        left, right = min(max(left, 0.0), W), min(max(right, 0.0), W)
        top, bottom = min(max(top, 0.0), H), min(max(bottom, 0.0), H)
    if right <= left or bottom <= top:
        raise DegenerateOnImage("projected box has zero area inside the image")
    bbox = AxisAlignedBox2D(float(left), float(top), float(right), float(bottom))
    return ProjectedBox(bbox, float(depth.min()), float(depth.max()))


def height_above_plane(point, plane):
    return plane.height(point)


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------

def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by the counterclockwise convex polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        m = len(inp)
        for j in range(m):
            px, py = inp[j]
            qx, qy = inp[(j + 1) % m]
            sp = ex * (py - ay) - ey * (px - ax)
            sq = ex * (qy - ay) - ey * (qx - ax)
            if sp >= 0:
                out.append((px, py))
                if sq < 0:
                    t = sp / (sp - sq)
                    out.append((px + t * (qx - px), py + t * (qy - py)))
            elif sq >= 0:
                t = sp / (sp - sq)
                out.append((px + t * (qx - px), py + t * (qy - py)))
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def _box_key(b: OrientedBox3D):
    return (b.center[0], b.center[1], b.dims[0], b.dims[1], b.yaw)


def bev_iou(a: OrientedBox3D, b: OrientedBox3D) -> float:
    # fixed operand order keeps the result exactly symmetric
    if _box_key(a) == _box_key(b):
        return 1.0
    if _box_key(b) < _box_key(a):
        a, b = b, a
    pa, pb = a.footprint(), b.footprint()
    area_a = a.dims[0] * a.dims[1]
    area_b = b.dims[0] * b.dims[1]
    # cheap rejection on circumscribed circles
    ra = 0.5 * math.hypot(a.dims[0], a.dims[1])
    rb = 0.5 * math.hypot(b.dims[0], b.dims[1])
    if math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) >= ra + rb:
        return 0.0
    inter = polygon_area(clip_convex(pa, pb))
    inter = min(max(inter, 0.0), area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(max(inter / union, 0.0), 1.0))


def bev_iou_matrix(boxes_a: Sequence[OrientedBox3D], boxes_b: Sequence[OrientedBox3D]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = bev_iou(a, b)
    return out


def image_iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)
