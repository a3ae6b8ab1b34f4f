"""Lateral scene flipping and PCA color jitter."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import OrientedBox3D, normalize_angle
from .kitti_io import CalibrationSet, GroundPlane, GroundTruthLabel


def flip_cloud(cloud: np.ndarray) -> np.ndarray:
    out = np.array(cloud, dtype=np.float64, copy=True)
    out[:, 1] = -out[:, 1]
    return out


def flip_image(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[:, ::-1])


def flip_calibration(calib: CalibrationSet, image_width: float) -> CalibrationSet:
    """Calibration for the mirrored scene.

    The cloud is mirrored in LIDAR y, the camera frame in x, and the image
    about its vertical centre line; the principal point moves to ``W - cx``.
    """
    A = np.array([[-1.0, 0.0, image_width], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    Fc = np.diag([-1.0, 1.0, 1.0, 1.0])
    Fl = np.diag([1.0, -1.0, 1.0, 1.0])
    P2 = A @ calib.P2 @ Fc
    R0 = calib.R0
    if np.array_equal(R0, np.eye(4)):
        Tr = Fc @ calib.Tr @ Fl
    else:
        # true inverse: KITTI R0 blocks are orthonormal only to ~1e-7
        Tr = np.linalg.inv(R0) @ Fc @ R0 @ calib.Tr @ Fl
    return CalibrationSet(P2, R0.copy(), Tr)


def flip_box(box: OrientedBox3D) -> OrientedBox3D:
    x, y, z = box.center
    return OrientedBox3D((x, -y, z), box.dims, -box.yaw)


def flip_plane(plane: GroundPlane) -> GroundPlane:
    """Mirror a LIDAR-frame plane together with the cloud."""
    a, b, c = plane.normal
    return GroundPlane((a, -b, c), plane.offset)


def flip_label(label: GroundTruthLabel, image_width: float) -> GroundTruthLabel:
    """Camera-frame KITTI label mirrored in x (exact up to float rounding of pi - ry)."""
    x, y, z = label.location
    left, top, right, bottom = label.bbox2d
    return replace(
        label,
        location=(-x, y, z),
        rotation_y=normalize_angle(math.pi - label.rotation_y),
        alpha=normalize_angle(math.pi - label.alpha),
        bbox2d=(image_width - right, top, image_width - left, bottom),
    )


@dataclass
class FlippedScene:
    cloud: np.ndarray
    image: np.ndarray
    calib: CalibrationSet
    boxes: list


def flip_scene(cloud, image, calib, boxes) -> FlippedScene:
    """Mirror cloud, image, calibration and LIDAR-frame boxes consistently."""
    width = np.shape(image)[1]
    return FlippedScene(flip_cloud(cloud), flip_image(image), flip_calibration(calib, width),
                        [flip_box(b) for b in boxes])


# ---------------------------------------------------------------------------
# PCA jitter
# ---------------------------------------------------------------------------

@dataclass
class PcaBasis:
    eigenvalues: np.ndarray   # (3,) descending
    eigenvectors: np.ndarray  # (3, 3), column c is the c-th component
    scale: float = 1.0        # pixel value that corresponds to 1.0 in basis units

    def covariance(self) -> np.ndarray:
        V = self.eigenvectors
        return V @ np.diag(self.eigenvalues) @ V.T


def fit_pca_basis(images, scale: float = 255.0) -> PcaBasis:
    """PCA of the RGB covariance of all pixels divided by ``scale``.

    The default expresses the basis in [0, 1] colour units, so alphas drawn
    with sigma 0.1 give shifts of a few intensity levels on 8-bit images.
    """
    if isinstance(images, np.ndarray) and images.ndim == 3:
        images = [images]
    pixels = np.concatenate([np.asarray(im, dtype=np.float64).reshape(-1, 3) for im in images]) / scale
    if len(pixels) == 0:
        raise ValueError("need at least one pixel")
    centred = pixels - pixels.mean(axis=0)
    cov = centred.T @ centred / len(pixels)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    return PcaBasis(vals, vecs[:, order], float(scale))


def pca_jitter(image: np.ndarray, basis: PcaBasis, alphas) -> np.ndarray:
    """Add ``sum_c alphas_c * lambda_c * v_c`` (in basis units) to every pixel, clamp to [0, 255]."""
    shift = basis.eigenvectors @ (np.asarray(alphas, dtype=np.float64) * basis.eigenvalues)
    out = np.asarray(image, dtype=np.float64) + basis.scale * shift
    return np.clip(out, 0.0, 255.0)


def draw_alphas(rng: np.random.Generator, sigma: float = 0.1) -> np.ndarray:
    return rng.normal(0.0, sigma, size=3)
