"""Corner-based 3D box regression targets.

A box is encoded relative to a proposal as four footprint-corner offsets
(x and y, metres) plus the change in bottom and top height above the
ground plane. The flat vector layout is ``[dx0..dx3, dy0..dy3, dh_bot, dh_top]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCorners, ZeroVector
from .geometry import OrientedBox3D, normalize_angle

ENCODING_SIZE = 10


@dataclass
class CornerEncoding:
    corner_offsets: np.ndarray   # (4, 2)
    height_offsets: np.ndarray   # (2,) bottom, top

    def to_vector(self) -> np.ndarray:
        c = np.asarray(self.corner_offsets, dtype=np.float64)
        return np.concatenate([c[:, 0], c[:, 1], np.asarray(self.height_offsets, dtype=np.float64)])

    @classmethod
    def from_vector(cls, v) -> "CornerEncoding":
        v = np.asarray(v, dtype=np.float64)
        return cls(np.column_stack([v[0:4], v[4:8]]), v[8:10].copy())


def _end_heights(box: OrientedBox3D, plane):
    x, y, z = box.center
    h = box.dims[2]
    ends = np.array([[x, y, z - 0.5 * h], [x, y, z + 0.5 * h]])
    return plane.height(ends)


def match_corners(gt_fp: np.ndarray, prop_fp: np.ndarray) -> int:
    """Cyclic shift ``k`` minimising sum |gt[(i + k) % 4] - prop[i]|^2; lowest k on ties."""
    costs = [float(np.sum((np.roll(gt_fp, -k, axis=0) - prop_fp) ** 2)) for k in range(4)]
    return int(np.argmin(costs))


def encode_box(gt: OrientedBox3D, proposal: OrientedBox3D, plane) -> CornerEncoding:
    gfp, pfp = gt.footprint(), proposal.footprint()
    k = match_corners(gfp, pfp)
    offsets = np.roll(gfp, -k, axis=0) - pfp
    dh = _end_heights(gt, plane) - _end_heights(proposal, plane)
    return CornerEncoding(offsets, dh)


def fit_rectangle(corners: np.ndarray):
    """Nearest rectangle to four cyclically ordered corners.

    Returns ``(center, axis_angle, len_a, len_b)`` where ``len_a`` runs along
    edges (0,1)/(3,2) at ``axis_angle`` and ``len_b`` along the other pair.
    """
    c = np.asarray(corners, dtype=np.float64)
    center = c.mean(axis=0)
    e_a = 0.5 * ((c[0] - c[1]) + (c[3] - c[2]))
    e_b = 0.5 * ((c[1] - c[2]) + (c[0] - c[3]))
    len_a = 0.5 * (np.linalg.norm(c[0] - c[1]) + np.linalg.norm(c[3] - c[2]))
    len_b = 0.5 * (np.linalg.norm(c[1] - c[2]) + np.linalg.norm(c[0] - c[3]))
    if len_a * len_b < 1e-6 or np.linalg.norm(e_a) == 0 or np.linalg.norm(e_b) == 0:
        raise DegenerateCorners(f"footprint area {len_a * len_b:.3g} m^2")
    ang_a = math.atan2(e_a[1], e_a[0])
    ang_b = math.atan2(e_b[1], e_b[0]) - 0.5 * math.pi
    diff = normalize_angle(ang_b - ang_a)
    if abs(diff) > 0.5 * math.pi:
        # clockwise ordering: the b edge points the other way
        diff = normalize_angle(diff + math.pi)
    return center, normalize_angle(ang_a + 0.5 * diff), len_a, len_b


def _closest(candidates, target):
    return min(candidates, key=lambda c: abs(normalize_angle(c[0] - target)))


def decode_box(enc: CornerEncoding, proposal: OrientedBox3D, plane, orientation=None) -> OrientedBox3D:
    """Rebuild a box from an encoding.

    The heading axis is the rectangle axis closest to ``orientation`` (an
    angle or a (cos, sin) pair) when given. Otherwise the longer edge pair
    is the length axis and its sign follows the proposal's yaw.
    """
    corners = proposal.footprint() + np.asarray(enc.corner_offsets, dtype=np.float64)
    center, theta, len_a, len_b = fit_rectangle(corners)
    along_a = [(theta, len_a, len_b), (theta + math.pi, len_a, len_b)]
    along_b = [(theta + 0.5 * math.pi, len_b, len_a), (theta - 0.5 * math.pi, len_b, len_a)]
    if orientation is not None:
        if np.ndim(orientation) > 0:
            orientation = decode_orientation(orientation)
        yaw, length, width = _closest(along_a + along_b, orientation)
    else:
        yaw, length, width = _closest(along_a if len_a >= len_b else along_b, proposal.yaw)

    hb, ht = _end_heights(proposal, plane) + np.asarray(enc.height_offsets, dtype=np.float64)
    nx, ny, nz = plane.normal
    if abs(nz) < 1e-9:
        raise DegenerateCorners("ground plane normal has no vertical component")
    base = plane.offset + nx * center[0] + ny * center[1]
    zb = (hb - base) / nz
    zt = (ht - base) / nz
    if zt <= zb:
        raise DegenerateCorners(f"decoded height {zt - zb:.3g} m is not positive")
    return OrientedBox3D((center[0], center[1], 0.5 * (zb + zt)), (length, width, zt - zb),
                         normalize_angle(yaw))


def encode_orientation(yaw: float) -> np.ndarray:
    return np.array([math.cos(yaw), math.sin(yaw)])


def decode_orientation(enc) -> float:
    c, s = float(enc[0]), float(enc[1])
    if c == 0.0 and s == 0.0:
        raise ZeroVector("orientation vector is (0, 0)")
    return math.atan2(s, c)
