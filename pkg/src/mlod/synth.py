"""Deterministic synthetic driving scenes with ray-cast LIDAR and a flat-shaded camera image.

The sensor rig places the camera at the LIDAR origin looking along +x, the
ground plane ``sensor_height`` metres below. Boxes are cast against with the
slab method; the image is rendered by casting one ray per pixel centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GeometryError, PlacementFailure
from .fgmask import MaskConfig, crop_resize_depth_nearest
from .geometry import (OrientedBox3D, bev_iou, box_corners_3d, image_iou,
                       project_box_to_image)
from .kitti_io import CalibrationSet, GroundPlane, box_to_label
from .labeling import GroundTruth

CLASS_COLORS = {
    "Car": (200, 40, 40),
    "Pedestrian": (40, 170, 40),
    "Cyclist": (40, 60, 210),
}

DEFAULT_DIMS = {
    # (length, width, height) ranges in metres
    "Car": ((3.5, 4.5), (1.5, 1.9), (1.4, 1.7)),
    "Pedestrian": ((0.5, 0.9), (0.5, 0.8), (1.6, 1.9)),
    "Cyclist": ((1.5, 1.9), (0.5, 0.8), (1.6, 1.8)),
}

GROUND_ID, SKY_ID = -1, -2


@dataclass
class SceneSpec:
    seed: int = 0
    num_objects: int = 3
    class_mix: dict = field(default_factory=lambda: {"Car": 0.5, "Pedestrian": 0.25, "Cyclist": 0.25})
    dims: dict = field(default_factory=lambda: dict(DEFAULT_DIMS))
    clutter: int = 0                         # number of non-target boxes
    clutter_dims: tuple = ((0.6, 4.0), (0.5, 2.0), (0.8, 2.2))
    clutter_near_objects: float = 0.7        # share of clutter placed on an object's line of sight
    clutter_mimic: float = 0.0               # share of clutter painted in a target-class colour
    x_range: tuple = (6.0, 40.0)
    lateral_margin: float = 1.0
    lidar_rings: int = 32
    lidar_azimuth_steps: int = 720
    elevation_range: tuple = (-24.9, 2.0)    # degrees
    azimuth_range: tuple = (-180.0, 180.0)   # degrees, 0 = +x
    max_range: float = 120.0
    image_size: tuple = (480, 160)           # width, height
    focal: float = 240.0
    principal: tuple = (240.0, 60.0)
    sensor_height: float = 1.73
    texture: float = 18.0                    # amplitude of background noise (0-255 scale)

    def __post_init__(self):
        if self.num_objects < 0 or self.clutter < 0:
            raise ValueError("object counts must be >= 0")
        if self.lidar_rings < 1 or self.lidar_azimuth_steps < 1:
            raise ValueError("lidar ray counts must be >= 1")
        if not 0.0 <= self.clutter_mimic <= 1.0 or not 0.0 <= self.clutter_near_objects <= 1.0:
            raise ValueError("clutter shares must lie in [0, 1]")
        if self.focal <= 0 or min(self.image_size) <= 0:
            raise ValueError("camera intrinsics must be positive")
        for rng in (self.x_range, *[r for d in self.dims.values() for r in d]):
            if not 0 < rng[0] <= rng[1]:
                raise ValueError(f"invalid range {rng}")


@dataclass
class SyntheticScene:
    cloud: np.ndarray          # (N, 4) LIDAR frame
    image: np.ndarray          # (H, W, 3) uint8
    gts: list                  # GroundTruth
    clutter: list              # OrientedBox3D
    calib: CalibrationSet
    plane: GroundPlane         # LIDAR frame
    dense_depth: np.ndarray    # (H, W) camera depth, inf where nothing is hit
    hit_ids: np.ndarray        # (H, W) surface id per pixel (box index, GROUND_ID, SKY_ID)
    spec: SceneSpec

    @property
    def image_size(self):
        return self.spec.image_size

    @property
    def surfaces(self) -> list:
        return [g.box for g in self.gts] + list(self.clutter)


def make_calibration(spec: SceneSpec) -> CalibrationSet:
    f = spec.focal
    cx, cy = spec.principal
    P2 = np.array([[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
    # camera x right = -lidar y, camera y down = -lidar z, camera z = lidar x
    Tr = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    return CalibrationSet(P2, np.eye(3), Tr)


def make_plane(spec: SceneSpec) -> GroundPlane:
    return GroundPlane((0.0, 0.0, 1.0), spec.sensor_height)


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def ray_box_intersect(origin, dirs: np.ndarray, box: OrientedBox3D):
    """Entry distance and hit face per ray (inf / -1 on a miss)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    o = R.T @ (np.asarray(origin, dtype=np.float64) - np.asarray(box.center))
    d = dirs @ R  # rows are R^T d
    half = 0.5 * np.asarray(box.dims)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    tmin = np.fmin(t1, t2)
    tmax = np.fmax(t1, t2)
    # rays parallel to a slab: inside -> unconstrained, outside -> miss
    par = d == 0
    inside_slab = np.abs(o) <= half
    tmin = np.where(par, np.where(inside_slab, -np.inf, np.inf), tmin)
    tmax = np.where(par, np.where(inside_slab, np.inf, -np.inf), tmax)
    near = tmin.max(axis=1)
    far = tmax.min(axis=1)
    face = np.argmax(tmin, axis=1)
    hit = (near <= far) & (near > 0)
    return np.where(hit, near, np.inf), np.where(hit, face, -1)


def cast_rays(origin, dirs: np.ndarray, boxes, plane: GroundPlane):
    """First hit along each ray against boxes and the ground.

    Returns ``(t, surface_id, face)``; ``surface_id`` is a box index,
    ``GROUND_ID`` or ``SKY_ID``.
    """
    origin = np.asarray(origin, dtype=np.float64)
    n = np.asarray(plane.normal)
    denom = dirs @ n
    h0 = float(plane.height(origin))
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = -h0 / denom
    tg = np.where((denom < 0) & (tg > 0), tg, np.inf)
    best_t = tg
    ids = np.where(np.isfinite(tg), GROUND_ID, SKY_ID)
    faces = np.full(len(dirs), -1)
    for i, box in enumerate(boxes):
        t, face = ray_box_intersect(origin, dirs, box)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        ids = np.where(closer, i, ids)
        faces = np.where(closer, face, faces)
    return best_t, ids, faces


def lidar_directions(spec: SceneSpec) -> np.ndarray:
    el = np.radians(np.linspace(spec.elevation_range[0], spec.elevation_range[1], spec.lidar_rings))
    a0, a1 = np.radians(spec.azimuth_range)
    full = math.isclose(a1 - a0, 2 * math.pi)
    az = np.linspace(a0, a1, spec.lidar_azimuth_steps, endpoint=not full)
    E, A = np.meshgrid(el, az, indexing="ij")
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def camera_rays(calib: CalibrationSet, image_size):
    """Origin (LIDAR frame) and per-pixel-centre directions scaled to unit camera depth."""
    W, H = image_size
    P = calib.P2
    u, v = np.meshgrid(np.arange(W) + 0.5, np.arange(H) + 0.5)
    uv = np.stack([u, v], axis=-1).reshape(-1, 2)
    pts_rect = calib.backproject(uv, np.ones(len(uv)))
    origin_rect = calib.backproject(np.array([[P[0, 2], P[1, 2]]]), np.zeros(1))[0]
    origin = calib.rect_to_lidar(origin_rect)
    dirs = calib.rect_to_lidar(pts_rect) - origin
    return origin, dirs


# ---------------------------------------------------------------------------
# scene generation
# ---------------------------------------------------------------------------

def _sample_dims(rng, ranges):
    return tuple(float(rng.uniform(lo, hi)) for lo, hi in ranges)


def _lateral_limit(spec: SceneSpec, x: float) -> float:
    half_fov = math.atan2(spec.image_size[0] / 2.0, spec.focal)
    return max(x * math.tan(half_fov) - spec.lateral_margin, 0.0)


def _inflated(box: OrientedBox3D, margin: float) -> OrientedBox3D:
    l, w, h = box.dims
    return OrientedBox3D(box.center, (l + 2 * margin, w + 2 * margin, h), box.yaw)


def _free(box, placed, margin=0.3) -> bool:
    big = _inflated(box, margin)
    return all(bev_iou(big, _inflated(p, margin)) == 0.0 for p in placed)


def _visible(box, calib, spec) -> bool:
    try:
        project_box_to_image(box, calib, spec.image_size)
    except GeometryError:
        return False
    return True


def _place(rng, spec, dims, placed, calib, sampler, attempts=1000) -> OrientedBox3D:
    for _ in range(attempts):
        x, y, yaw = sampler()
        box = OrientedBox3D((x, y, -spec.sensor_height + dims[2] / 2.0), dims, yaw)
        if _free(box, placed) and _visible(box, calib, spec):
            return box
    raise PlacementFailure(f"could not place box of dims {dims} after {attempts} attempts")


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    calib = make_calibration(spec)
    plane = make_plane(spec)
    classes = list(spec.class_mix)
    probs = np.array([spec.class_mix[c] for c in classes], dtype=np.float64)
    probs = probs / probs.sum()

    def uniform_site():
        x = float(rng.uniform(*spec.x_range))
        lim = _lateral_limit(spec, x)
        return x, float(rng.uniform(-lim, lim)), float(rng.uniform(-math.pi, math.pi))

    gts, placed = [], []
    for _ in range(spec.num_objects):
        cls = classes[int(rng.choice(len(classes), p=probs))]
        box = _place(rng, spec, _sample_dims(rng, spec.dims[cls]), placed, calib, uniform_site)
        placed.append(box)
        gts.append(GroundTruth(box, cls))

    clutter = []
    for _ in range(spec.clutter):
        dims = _sample_dims(rng, spec.clutter_dims)
        if gts and rng.uniform() < spec.clutter_near_objects:
            anchor = gts[int(rng.integers(len(gts)))].box

            def near_site(anchor=anchor):
                ax, ay, _ = anchor.center
                r = math.hypot(ax, ay)
                scale = float(rng.uniform(0.45, 1.8)) * r
                scale = max(scale, spec.x_range[0] * 0.6)
                lat = float(rng.normal(0.0, 1.0))
                x = ax / r * scale - ay / r * lat
                y = ay / r * scale + ax / r * lat
                return x, y, float(rng.uniform(-math.pi, math.pi))

            sampler = near_site
        else:
            sampler = uniform_site
        box = _place(rng, spec, dims, placed, calib, sampler)
        placed.append(box)
        clutter.append(box)

    surfaces = [g.box for g in gts] + clutter

    # LIDAR
    dirs = lidar_directions(spec)
    t, ids, _ = cast_rays(np.zeros(3), dirs, surfaces, plane)
    keep = np.isfinite(t) & (t <= spec.max_range)
    pts = dirs[keep] * t[keep][:, None]
    refl = np.where(ids[keep] >= 0, np.where(ids[keep] < len(gts), 0.6, 0.35), 0.1)
    cloud = np.column_stack([pts, refl])

    # camera
    W, H = spec.image_size
    origin, cdirs = camera_rays(calib, spec.image_size)
    ct, cids, cfaces = cast_rays(origin, cdirs, surfaces, plane)
    dense = ct.reshape(H, W)
    hit_ids = cids.reshape(H, W)
    image = _shade(rng, spec, gts, clutter, cids, cfaces, ct, H, W)
    return SyntheticScene(cloud, image, gts, clutter, calib, plane, dense, hit_ids, spec)


_FACE_SHADE = np.array([0.85, 0.7, 1.0])  # x faces, y faces, z faces


def _shade(rng, spec, gts, clutter, ids, faces, t, H, W) -> np.ndarray:
    img = np.zeros((H * W, 3))
    sky = ids == SKY_ID
    ground = ids == GROUND_ID
    noise = rng.normal(0.0, 1.0, size=(H * W, 1))
    img[sky] = np.array([150.0, 180.0, 215.0]) + spec.texture * 0.5 * noise[sky]
    img[ground] = np.array([105.0, 100.0, 95.0]) + spec.texture * noise[ground]
    clutter_colors = rng.uniform(80, 170, size=(max(len(clutter), 1), 3))
    palette = np.array(list(CLASS_COLORS.values()), dtype=np.float64)
    for c in range(len(clutter)):
        if rng.uniform() < spec.clutter_mimic:
            clutter_colors[c] = palette[int(rng.integers(len(palette)))]
    for i in range(len(gts) + len(clutter)):
        sel = ids == i
        if not sel.any():
            continue
        base = np.array(CLASS_COLORS[gts[i].class_name] if i < len(gts)
                        else clutter_colors[i - len(gts)], dtype=np.float64)
        img[sel] = base[None, :] * _FACE_SHADE[faces[sel]][:, None]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8).reshape(H, W, 3)


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

@dataclass
class ProposalSet:
    boxes: list
    scores: np.ndarray
    source: np.ndarray     # index of the ground truth (or clutter box) each proposal came from, -1 if none
    feasible: np.ndarray   # depth_aligned: target geometry reached; other modes: True
    mode: list

    def __len__(self):
        return len(self.boxes)

    def __add__(self, other: "ProposalSet") -> "ProposalSet":
        return ProposalSet(self.boxes + other.boxes,
                           np.concatenate([self.scores, other.scores]),
                           np.concatenate([self.source, other.source]),
                           np.concatenate([self.feasible, other.feasible]),
                           self.mode + other.mode)


def perturb_box(box: OrientedBox3D, rng, jitter: float):
    l, w, h = box.dims
    z = rng.normal(0.0, 1.0, size=6) * jitter
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx, dy = z[0] * l, z[1] * w
    center = (box.center[0] + c * dx - s * dy, box.center[1] + s * dx + c * dy,
              box.center[2] + z[2] * h * 0.2)
    dims = (l * math.exp(0.3 * z[3]), w * math.exp(0.3 * z[4]), h)
    yaw = box.yaw + z[5]
    out = OrientedBox3D(center, dims, (yaw + math.pi) % (2 * math.pi) - math.pi if jitter else box.yaw)
    return out, float(np.sum(z * z))


def camera_center(calib: CalibrationSet) -> np.ndarray:
    return calib.rect_to_lidar(calib.backproject(np.array([[calib.P2[0, 2], calib.P2[1, 2]]]),
                                                 np.zeros(1))[0])


def depth_aligned_proposal(gt: OrientedBox3D, calib: CalibrationSet, factor: float) -> OrientedBox3D:
    """Copy of ``gt`` slid along the camera ray through its centre by ``factor`` box lengths."""
    cam = camera_center(calib)
    ray = np.asarray(gt.center) - cam
    ray /= np.linalg.norm(ray)
    d = factor * max(gt.dims[0], gt.dims[1]) * ray
    return gt.translated(*d)


def view_ious(a: OrientedBox3D, b: OrientedBox3D, calib, image_size):
    bev = bev_iou(a, b)
    try:
        img = image_iou(project_box_to_image(a, calib, image_size).bbox,
                        project_box_to_image(b, calib, image_size).bbox)
    except GeometryError:
        img = 0.0
    return bev, img


DEPTH_ALIGNED_FACTORS = np.concatenate([np.linspace(0.4, 2.5, 22), -np.linspace(0.4, 2.5, 22)])


def generate_proposals(scene: SyntheticScene, per_gt: int, mode: str, seed: Optional[int] = None,
                       jitter: float = 0.15, count: Optional[int] = None) -> ProposalSet:
    """Proposals around ground truths (``perturb``, ``depth_aligned``), around
    clutter boxes (``clutter``) or anywhere in view (``random``, ``count`` boxes)."""
    rng = np.random.default_rng(scene.spec.seed * 7919 + 17 if seed is None else seed)
    boxes, scores, source, feasible = [], [], [], []
    if mode in ("perturb", "clutter"):
        anchors = [g.box for g in scene.gts] if mode == "perturb" else list(scene.clutter)
        for j, gt in enumerate(anchors):
            for _ in range(per_gt):
                box, mag = perturb_box(gt, rng, jitter)
                boxes.append(box)
                scores.append(math.exp(-0.5 * mag))
                source.append(j)
                feasible.append(True)
    elif mode == "depth_aligned":
        for j, g in enumerate(scene.gts):
            cands = []
            for f in DEPTH_ALIGNED_FACTORS:
                box = depth_aligned_proposal(g.box, scene.calib, float(f))
                if not _visible(box, scene.calib, scene.spec):
                    continue
                bev, img = view_ious(box, g.box, scene.calib, scene.image_size)
                cands.append((box, bev, img))
            ok = [c for c in cands if c[1] < 0.3 and c[2] > 0.7]
            if ok:
                pick = rng.permutation(len(ok))[:per_gt]
                chosen = [(ok[i][0], True) for i in sorted(pick)]
            elif cands:
                best = max(cands, key=lambda c: min(0.3 - c[1], c[2] - 0.7))
                chosen = [(best[0], False)]
            else:
                chosen = []
            for box, flag in chosen:
                boxes.append(box)
                scores.append(float(rng.uniform(0.5, 1.0)))
                source.append(j)
                feasible.append(flag)
    elif mode == "random":
        n = per_gt * max(len(scene.gts), 1) if count is None else count
        classes = list(scene.spec.class_mix)
        for _ in range(n):
            for _attempt in range(1000):
                cls = classes[int(rng.integers(len(classes)))]
                dims = _sample_dims(rng, scene.spec.dims[cls])
                x = float(rng.uniform(*scene.spec.x_range))
                lim = _lateral_limit(scene.spec, x)
                y = float(rng.uniform(-lim, lim))
                box = OrientedBox3D((x, y, -scene.spec.sensor_height + dims[2] / 2), dims,
                                    float(rng.uniform(-math.pi, math.pi)))
                if _visible(box, scene.calib, scene.spec):
                    break
            boxes.append(box)
            scores.append(float(rng.uniform(0.0, 0.5)))
            source.append(-1)
            feasible.append(True)
    else:
        raise ValueError(f"unknown proposal mode {mode!r}")
    return ProposalSet(boxes, np.asarray(scores, dtype=np.float64), np.asarray(source, dtype=np.int64),
                       np.asarray(feasible, dtype=bool), [mode] * len(boxes))


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def silhouette_mask_oracle(scene: SyntheticScene, proposal: OrientedBox3D,
                           cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    """Mask from the dense depth render: cell median inside the widened box depth span."""
    proj = project_box_to_image(proposal, scene.calib, scene.image_size)
    grid = crop_resize_depth_nearest(scene.dense_depth, proj.bbox, cfg)
    k, n = cfg.k, cfg.n
    out = np.zeros((k, k), dtype=np.uint8)
    for i in range(k):
        for j in range(k):
            med = float(np.median(grid[i * n:(i + 1) * n, j * n:(j + 1) * n]))
            out[i, j] = proj.d_min - cfg.eps1 <= med <= proj.d_max + cfg.eps1
    return out


def surface_distance(points: np.ndarray, scene: SyntheticScene) -> np.ndarray:
    """Distance from each point to the nearest generated surface (boxes and ground)."""
    pts = np.asarray(points, dtype=np.float64)[:, :3]
    best = np.abs(scene.plane.height(pts))
    for box in scene.surfaces:
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        local = (pts - np.asarray(box.center)) @ R
        half = 0.5 * np.asarray(box.dims)
        q = np.abs(local) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        best = np.minimum(best, np.abs(outside + inside))
    return best


def object_occlusion(scene: SyntheticScene, index: int) -> int:
    """KITTI-style occlusion level from the fraction of the box's projected pixels it owns."""
    try:
        proj = project_box_to_image(scene.gts[index].box, scene.calib, scene.image_size)
    except GeometryError:
        return 3
    l, t, r, b = proj.bbox
    region = scene.hit_ids[int(t):int(math.ceil(b)), int(l):int(math.ceil(r))]
    if region.size == 0:
        return 3
    # a box covers roughly 70 % of its own 2D hull when unoccluded
    own = float((region == index).mean()) / 0.7
    return 0 if own > 0.8 else 1 if own > 0.5 else 2 if own > 0.2 else 3


def truncation(box: OrientedBox3D, calib, image_size) -> float:
    full = project_box_to_image(box, calib, None).bbox
    clipped = project_box_to_image(box, calib, image_size).bbox
    return float(1.0 - clipped.area / full.area) if full.area > 0 else 1.0


def scene_corners_depth(box: OrientedBox3D, calib) -> np.ndarray:
    return calib.lidar_to_rect(box_corners_3d(box))[:, 2]


def scene_labels(scene: SyntheticScene) -> list:
    """KITTI labels for the scene's ground truths, with truncation and occlusion filled in."""
    labels = []
    for i, g in enumerate(scene.gts):
        labels.append(box_to_label(g.box, scene.calib, g.class_name, image_size=scene.image_size,
                                   truncation=round(truncation(g.box, scene.calib, scene.image_size), 2),
                                   occlusion=object_occlusion(scene, i)))
    return labels


@dataclass
class DepthAlignedFixture:
    calib: CalibrationSet
    plane: GroundPlane
    image_size: tuple
    gt: GroundTruth
    proposals: dict   # name -> OrientedBox3D


def depth_aligned_fixture() -> DepthAlignedFixture:
    """A car 32 m ahead with three proposals: A nearly aligned, B and C slid
    0.6 and 1.2 box lengths back along the camera ray through its centre."""
    spec = SceneSpec()
    calib = make_calibration(spec)
    gt = OrientedBox3D((32.0, 1.5, -spec.sensor_height + 0.75), (3.9, 1.6, 1.5), 0.25)
    props = {
        "A": gt.translated(0.2, 0.1),
        "B": depth_aligned_proposal(gt, calib, 0.6),
        "C": depth_aligned_proposal(gt, calib, 1.2),
    }
    return DepthAlignedFixture(calib, make_plane(spec), spec.image_size, GroundTruth(gt, "Car"), props)
