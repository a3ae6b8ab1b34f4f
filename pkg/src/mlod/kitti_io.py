"""Readers and writers for the KITTI object-detection file formats.

Covered: velodyne ``.bin`` blobs, ``calib/*.txt``, ``label_2/*.txt``,
``planes/*.txt`` and the 16-field result format used for submissions.
Point clouds are returned as ``(N, 4)`` float64 arrays of
``x, y, z, reflectance`` in the LIDAR frame.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    GeometryError,
    LengthNotMultipleOf16,
    MissingKey,
    NonFiniteValue,
    NonOrthonormalRotation,
    WrongArity,
    WrongFieldCount,
    ZeroNormal,
)
from .geometry import OrientedBox3D, normalize_angle, project_box_to_image

_POINT_DTYPE = np.dtype("<f4")


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

def parse_point_cloud(blob: bytes) -> np.ndarray:
    if len(blob) % 16:
        raise LengthNotMultipleOf16(len(blob))
    pts = np.frombuffer(blob, dtype=_POINT_DTYPE).reshape(-1, 4).astype(np.float64)
    bad = ~np.isfinite(pts).all(axis=1)
    if bad.any():
        raise NonFiniteValue(int(np.flatnonzero(bad)[0]))
    return pts


def write_point_cloud(points: np.ndarray) -> bytes:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    return pts.astype(_POINT_DTYPE).tobytes()


def read_point_cloud(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_point_cloud(f.read())


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationSet:
    """P2 projection plus the homogeneous rectification and LIDAR->camera transforms."""

    P2: np.ndarray
    R0: np.ndarray = field(default_factory=lambda: np.eye(4))
    Tr: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.P2 = np.asarray(self.P2, dtype=np.float64).reshape(3, 4)
        self.R0 = _homogeneous(self.R0)
        self.Tr = _homogeneous(self.Tr)

    @property
    def lidar_to_rect_matrix(self) -> np.ndarray:
        return self.R0 @ self.Tr

    def lidar_to_rect(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        M = self.lidar_to_rect_matrix
        return pts[..., :3] @ M[:3, :3].T + M[:3, 3]

    def rect_to_lidar(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        M = self.lidar_to_rect_matrix
        R, t = M[:3, :3], M[:3, 3]
        # rigid inverse; R0 and Tr rotation blocks are orthonormal
        return (pts[..., :3] - t) @ R

    def project_rect(self, pts):
        """Rectified camera points -> (pixel uv, depth)."""
        pts = np.asarray(pts, dtype=np.float64)
        uvw = pts[..., :3] @ self.P2[:, :3].T + self.P2[:, 3]
        depth = pts[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = uvw[..., :2] / uvw[..., 2:3]
        return uv, depth

    def project_lidar(self, pts):
        return self.project_rect(self.lidar_to_rect(pts))

    def backproject(self, uv, depth):
        """Inverse of :meth:`project_rect` along the pixel ray at the given depth."""
        uv = np.asarray(uv, dtype=np.float64)
        shape = uv.shape[:-1]
        uvf = uv.reshape(-1, 2)
        d = np.broadcast_to(np.asarray(depth, dtype=np.float64), shape).reshape(-1)
        P = self.P2
        u, v = uvf[:, 0], uvf[:, 1]
        # (P_r - u P_2) . (X, Y, d, 1) = 0 for r = 0, 1; two equations in X, Y
        M = np.empty((len(d), 2, 2))
        b = np.empty((len(d), 2))
        for r, c in ((0, u), (1, v)):
            row = P[r][None, :] - c[:, None] * P[2][None, :]
            M[:, r, 0] = row[:, 0]
            M[:, r, 1] = row[:, 1]
            b[:, r] = -(row[:, 2] * d + row[:, 3])
        xy = np.linalg.solve(M, b[..., None])[..., 0]
        return np.column_stack([xy, d]).reshape(shape + (3,))


def _homogeneous(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape == (4, 4):
        return m.copy()
    out = np.eye(4)
    if m.size == 9:
        out[:3, :3] = m.reshape(3, 3)
    elif m.size == 12:
        out[:3, :] = m.reshape(3, 4)
    else:
        raise ValueError(f"cannot promote array of shape {m.shape} to 4x4")
    return out


_CALIB_ARITY = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def parse_calibration(text: str) -> CalibrationSet:
    entries = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if ":" in line:
            key, rest = line.split(":", 1)
        else:
            key, _, rest = line.partition(" ")
        entries[key.strip()] = rest.split()

    values = {}
    for key, arity in _CALIB_ARITY.items():
        if key not in entries:
            raise MissingKey(key)
        tokens = entries[key]
        if len(tokens) != arity:
            raise WrongArity(key, arity, len(tokens))
        values[key] = np.array([float(t) for t in tokens])

    calib = CalibrationSet(
        P2=values["P2"].reshape(3, 4),
        R0=values["R0_rect"].reshape(3, 3),
        Tr=values["Tr_velo_to_cam"].reshape(3, 4),
    )
    for name, mat in (("R0_rect", calib.R0), ("Tr_velo_to_cam", calib.Tr)):
        R = mat[:3, :3]
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > 1e-3:
            warnings.warn(f"{name} rotation block deviates from orthonormal by {err:.3g}",
                          NonOrthonormalRotation, stacklevel=2)
    return calib


def write_calibration(calib: CalibrationSet) -> str:
    def fmt(a):
        return " ".join(f"{v:.12e}" for v in np.asarray(a).ravel())

    lines = [f"P{i}: {fmt(calib.P2)}" for i in range(4)]
    lines.append(f"R0_rect: {fmt(calib.R0[:3, :3])}")
    lines.append(f"Tr_velo_to_cam: {fmt(calib.Tr[:3, :])}")
    lines.append(f"Tr_imu_to_velo: {fmt(np.eye(4)[:3, :])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ground plane
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundPlane:
    """Plane ``normal . p + offset = 0``; heights above it are positive."""

    normal: tuple
    offset: float

    @classmethod
    def from_coefficients(cls, a, b, c, d) -> "GroundPlane":
        n = math.sqrt(a * a + b * b + c * c)
        if n == 0.0 or not math.isfinite(n):
            raise ZeroNormal()
        a, b, c, d = a / n, b / n, c / n, d / n
        if d < 0:
            a, b, c, d = -a, -b, -c, -d
        return cls((a, b, c), d)

    def height(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        nx, ny, nz = self.normal
        return nx * pts[..., 0] + ny * pts[..., 1] + nz * pts[..., 2] + self.offset

    def transformed(self, M: np.ndarray) -> "GroundPlane":
        """The same plane expressed in the frame reached by rigid transform ``M`` (4x4)."""
        R, t = M[:3, :3], M[:3, 3]
        n = R @ np.asarray(self.normal)
        return GroundPlane(tuple(float(v) for v in n), float(self.offset - n @ t))


def parse_ground_plane(text: str) -> GroundPlane:
    coeffs = None
    for raw in text.splitlines():
        tokens = raw.split()
        if len(tokens) != 4:
            continue
        try:
            coeffs = [float(t) for t in tokens]
        except ValueError:
            continue
    if coeffs is None:
        raise WrongArity("plane", 4, 0)
    return GroundPlane.from_coefficients(*coeffs)


def write_ground_plane(plane: GroundPlane) -> str:
    a, b, c = plane.normal
    return f"# Plane\nWidth 4\nHeight 1\n{a:.12e} {b:.12e} {c:.12e} {plane.offset:.12e}\n"


def plane_to_lidar(plane: GroundPlane, calib: CalibrationSet) -> GroundPlane:
    """Camera-rect plane (as stored in ``planes/*.txt``) -> LIDAR frame."""
    M = calib.lidar_to_rect_matrix
    R, t = M[:3, :3], M[:3, 3]
    n_c = np.asarray(plane.normal)
    n_l = R.T @ n_c
    return GroundPlane(tuple(float(v) for v in n_l), float(n_c @ t + plane.offset))


def plane_to_rect(plane: GroundPlane, calib: CalibrationSet) -> GroundPlane:
    return plane.transformed(calib.lidar_to_rect_matrix)


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------

@dataclass
class GroundTruthLabel:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple        # left, top, right, bottom
    dimensions: tuple    # h, w, l
    location: tuple      # x, y, z of the bottom centre, camera frame
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == "DontCare"


def parse_labels(text: str) -> list[GroundTruthLabel]:
    labels = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) not in (15, 16):
            raise WrongFieldCount(lineno, len(tokens))
        f = [float(t) for t in tokens[1:]]
        labels.append(GroundTruthLabel(
            class_name=tokens[0],
            truncation=f[0],
            occlusion=int(round(f[1])),
            alpha=f[2],
            bbox2d=(f[3], f[4], f[5], f[6]),
            dimensions=(f[7], f[8], f[9]),
            location=(f[10], f[11], f[12]),
            rotation_y=f[13],
            score=f[14] if len(f) == 15 else None,
        ))
    return labels


def format_label(label: GroundTruthLabel) -> str:
    parts = [
        label.class_name,
        f"{label.truncation:.2f}",
        f"{int(label.occlusion)}",
        f"{label.alpha:.2f}",
        *(f"{v:.2f}" for v in label.bbox2d),
        *(f"{v:.2f}" for v in label.dimensions),
        *(f"{v:.2f}" for v in label.location),
        f"{label.rotation_y:.2f}",
    ]
    if label.score is not None:
        parts.append(f"{label.score:.4f}")
    return " ".join(parts)


def write_labels(labels: Iterable[GroundTruthLabel]) -> str:
    lines = [format_label(lab) for lab in labels]
    return "".join(line + "\n" for line in lines)


def label_to_box(label: GroundTruthLabel, calib: CalibrationSet) -> OrientedBox3D:
    h, w, l = label.dimensions
    x, y, z = label.location
    center_rect = np.array([x, y - h / 2.0, z])
    center = calib.rect_to_lidar(center_rect)
    yaw = normalize_angle(-label.rotation_y - math.pi / 2.0)
    return OrientedBox3D(tuple(float(v) for v in center), (l, w, h), yaw)


def box_to_label(box: OrientedBox3D, calib: CalibrationSet, class_name: str,
                 score: Optional[float] = None, image_size=None,
                 truncation: float = -1.0, occlusion: int = -1) -> GroundTruthLabel:
    l, w, h = box.dims
    c = calib.lidar_to_rect(np.asarray(box.center))
    loc = (float(c[0]), float(c[1] + h / 2.0), float(c[2]))
    ry = normalize_angle(-box.yaw - math.pi / 2.0)
    alpha = normalize_angle(ry - math.atan2(loc[0], loc[2]))
    try:
        bbox = tuple(project_box_to_image(box, calib, image_size).bbox)
    except GeometryError:
        bbox = (0.0, 0.0, 0.0, 0.0)
    return GroundTruthLabel(class_name, truncation, occlusion, alpha, bbox,
                            (h, w, l), loc, ry, score)


def write_detections(detections: Sequence, calib: CalibrationSet, image_size=None) -> str:
    """``(box, class_name, score)`` triples -> KITTI result text (16 fields per line)."""
    labels = [box_to_label(box, calib, cls, score=float(score), image_size=image_size)
              for box, cls, score in detections]
    return write_labels(labels)
