"""Synthetic datasets, evaluation and the two header ablations (sub-loss weight, masking)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import maximum_filter
from threadpoolctl import threadpool_limits

from .bev import BevConfig, BevMap, bilinear_crop_resize, crop_resize_bev, rasterize
from .box_codec import CornerEncoding, decode_box, encode_box, encode_orientation
from .errors import GeometryError
from .fgmask import MaskConfig, build_sparse_depth_map, foreground_mask
from .geometry import bev_iou, image_iou, project_box_to_image
from .labeling import assign_labels, sample_minibatch
from .synth import SceneSpec, generate_proposals, generate_scene
from .toy_header import Dataset, HeaderConfig, ToyHeaderModel, TrainConfig, forward, train

CLASS_NAMES = ("Car", "Pedestrian", "Cyclist")

# 2,000 steps is far shorter than a full detector schedule; at 1e-4 the
# fusion head is still under-trained when the run ends (see README).
EXPERIMENT_LR = 5e-4


def experiment_train_config(**overrides) -> TrainConfig:
    return replace(TrainConfig(lr=EXPERIMENT_LR), **overrides)


@dataclass(frozen=True)
class ProposalMix:
    perturb_per_gt: int = 4
    perturb_jitter: float = 0.15
    depth_aligned_per_gt: int = 6
    random_count: int = 12
    clutter_per_box: int = 2


@dataclass(frozen=True)
class DatasetSpec:
    scene: SceneSpec = field(default_factory=SceneSpec)
    train_scenes: int = 120
    test_scenes: int = 40
    rois_per_scene: int = 32
    proposals: ProposalMix = field(default_factory=ProposalMix)
    bev_pool: int = 5          # max-pool window applied to the BEV map before cropping
    seed: int = 0


def default_spec(clutter: int = 2, seed: int = 0) -> DatasetSpec:
    return DatasetSpec(scene=SceneSpec(num_objects=4, clutter=clutter), seed=seed)


def clutter_heavy_spec(seed: int = 0) -> DatasetSpec:
    return DatasetSpec(scene=SceneSpec(num_objects=4, clutter=8, clutter_near_objects=0.9, clutter_mimic=1.0),
                       seed=seed)


def clutter_free_spec(seed: int = 0) -> DatasetSpec:
    return default_spec(clutter=0, seed=seed)


def scene_proposals(scene, mix: ProposalMix, seed: int):
    props = generate_proposals(scene, mix.perturb_per_gt, "perturb", seed=seed, jitter=mix.perturb_jitter)
    props = props + generate_proposals(scene, mix.depth_aligned_per_gt, "depth_aligned", seed=seed + 1)
    props = props + generate_proposals(scene, 0, "random", seed=seed + 2, count=mix.random_count)
    if scene.clutter and mix.clutter_per_box:
        props = props + generate_proposals(scene, mix.clutter_per_box, "clutter", seed=seed + 3,
                                           jitter=mix.perturb_jitter)
    return props


def pooled_bev(scene, cfg: BevConfig, pool: int) -> BevMap:
    bev = rasterize(scene.cloud, scene.plane, cfg)
    cells = bev.cells if pool <= 1 else maximum_filter(bev.cells, size=(pool, pool, 1), mode="constant")
    return BevMap(cells, bev.counts, bev.config)


def scene_rows(scene, spec: DatasetSpec, seed: int, select: bool,
               bev_cfg: BevConfig = BevConfig(), mask_cfg: MaskConfig = MaskConfig()) -> Dataset:
    """Header inputs and targets for one scene's proposals.

    Proposals that do not project into the image or miss the BEV extents
    are dropped. With ``select`` the rows are reduced to the scene's
    mini-batch selection.
    """
    k = mask_cfg.k
    bev = pooled_bev(scene, bev_cfg, spec.bev_pool)
    props = scene_proposals(scene, spec.proposals, seed)
    keep, projs, crops = [], [], []
    for i, b in enumerate(props.boxes):
        try:
            proj = project_box_to_image(b, scene.calib, scene.image_size)
            crop = crop_resize_bev(bev, b, k)
        except GeometryError:
            continue
        keep.append(i)
        projs.append(proj)
        crops.append(crop)
    boxes = [props.boxes[i] for i in keep]
    scores = props.scores[keep]
    modes = [props.mode[i] for i in keep]
    labels = assign_labels(boxes, scene.gts, scene.calib, scene.image_size)
    if select:
        rows = sample_minibatch(labels, scores, size=spec.rois_per_scene, seed=seed).indices
    else:
        rows = np.arange(len(boxes))

    depth = build_sparse_depth_map(scene.cloud, scene.calib, scene.image_size)
    image = scene.image.astype(np.float64) / 255.0
    cls_bev = labels.class_targets("bev", CLASS_NAMES)[rows]
    cls_img = labels.class_targets("img", CLASS_NAMES)[rows]
    n = len(rows)
    img_f = np.zeros((n, k, k, 3))
    bev_f = np.zeros((n, k, k, bev_cfg.num_channels))
    masks = np.zeros((n, k, k), dtype=np.uint8)
    reg_bev = np.zeros((n, 10))
    reg_img = np.zeros((n, 10))
    ang = np.zeros((n, 2))
    gt_bev, gt_img = [], []
    for r, i in enumerate(rows):
        box, proj = boxes[i], projs[i]
        l, t, rr, b = proj.bbox[:4]
        img_f[r] = bilinear_crop_resize(image, t, l, b, rr, k, k)
        bev_f[r] = crops[i]
        masks[r] = foreground_mask(depth, proj.bbox, proj.d_min, proj.d_max, mask_cfg)
        lb, li = labels.bev[i], labels.img[i]
        gb = scene.gts[lb.matched_gt].box if cls_bev[r] > 0 else None
        gi = scene.gts[li.matched_gt].box if cls_img[r] > 0 else None
        if gb is not None:
            reg_bev[r] = encode_box(gb, box, scene.plane).to_vector()
            ang[r] = encode_orientation(gb.yaw)
        if gi is not None:
            reg_img[r] = encode_box(gi, box, scene.plane).to_vector()
        gt_bev.append(gb)
        gt_img.append(gi)
    meta = {
        "proposal": [boxes[i] for i in rows],
        "gt_bev": gt_bev,
        "gt_img": gt_img,
        "mode": [modes[i] for i in rows],
        "calib": [scene.calib] * n,
        "plane": [scene.plane] * n,
    }
    return Dataset(img_f, bev_f, masks, cls_bev, cls_img, reg_bev, reg_img, ang, meta)


@dataclass
class SplitData:
    train: Dataset
    test: Dataset
    spec: DatasetSpec


def build_split(spec: DatasetSpec) -> SplitData:
    """Training rows (mini-batch selections) and held-out rows (all proposals) from disjoint scenes."""
    parts_train, parts_test = [], []
    base = spec.seed * 100_003
    for s in range(spec.train_scenes + spec.test_scenes):
        scene = generate_scene(replace(spec.scene, seed=base + s))
        is_train = s < spec.train_scenes
        part = scene_rows(scene, spec, seed=base + s, select=is_train)
        (parts_train if is_train else parts_test).append(part)
    return SplitData(Dataset.concat(parts_train), Dataset.concat(parts_test), spec)


# ---------------------------------------------------------------------------
# evaluation and reports
# ---------------------------------------------------------------------------

def _accuracy(scores, targets) -> float:
    active = targets >= 0
    if not active.any():
        return float("nan")
    return float(np.mean(np.argmax(scores[active], axis=1) == targets[active]))


def _decoded_iou(data: Dataset, enc, positive, view, orient=None) -> float:
    ious = []
    gts = data.meta["gt_bev" if view == "bev" else "gt_img"]
    for r in np.flatnonzero(positive):
        prop, gt, plane = data.meta["proposal"][r], gts[r], data.meta["plane"][r]
        try:
            box = decode_box_vector(enc[r], prop, plane, None if orient is None else orient[r])
            if view == "bev":
                ious.append(bev_iou(box, gt))
            else:
                calib = data.meta["calib"][r]
                ious.append(image_iou(project_box_to_image(box, calib).bbox,
                                      project_box_to_image(gt, calib).bbox))
        except GeometryError:
            ious.append(0.0)
    return float(np.mean(ious)) if ious else float("nan")


def decode_box_vector(vec, proposal, plane, orientation=None):
    return decode_box(CornerEncoding.from_vector(vec), proposal, plane, orientation)


def evaluate(model: ToyHeaderModel, data: Dataset, use_mask: bool = True) -> dict:
    """Per-branch classification accuracy (each against its own view's labels)
    and mean IoU of decoded boxes on that view's positives."""
    out = forward(model, data.img, data.bev, data.mask if use_mask else None)
    res = {
        "acc_fusion": _accuracy(out.y_fusion, data.cls_bev),
        "acc_image": _accuracy(out.y_img, data.cls_img),
        "acc_bev": _accuracy(out.y_bev, data.cls_bev),
    }
    if "proposal" in data.meta:
        res["iou_fusion"] = _decoded_iou(data, out.s_fusion, data.cls_bev > 0, "bev", out.a_fusion)
        res["iou_image"] = _decoded_iou(data, out.s_img, data.cls_img > 0, "img")
    return res


@dataclass
class ExperimentReport:
    kind: str             # "lambda" or "mask"
    setting: str          # e.g. "ratio=1" or "mask=on"
    seeds: list
    metrics: list         # one dict per seed
    loss_curves: list     # one array per seed

    def mean(self, key: str) -> float:
        return float(np.nanmean([m[key] for m in self.metrics]))

    def rows(self):
        for seed, m in zip(self.seeds, self.metrics):
            for key, value in m.items():
                branch, metric = _split_metric(key)
                yield {"branch": branch, "metric": metric, "setting": self.setting,
                       "seed": seed, "value": value}


def _split_metric(key):
    metric, branch = key.split("_", 1)
    return branch, metric


def _run(split: SplitData, cfgs, kind: str, setting: str, header: HeaderConfig) -> ExperimentReport:
    metrics, curves = [], []
    with threadpool_limits(limits=1):
        for cfg in cfgs:
            model = ToyHeaderModel.init(header, seed=cfg.seed)
            res = train(model, split.train, cfg)
            metrics.append(evaluate(res.model, split.test, cfg.use_mask))
            curves.append(res.losses)
    return ExperimentReport(kind, setting, [c.seed for c in cfgs], metrics, curves)


def run_lambda_ablation(split: SplitData, seeds: Sequence[int], ratios=(0.001, 1.0),
                        base: TrainConfig = TrainConfig(), header: HeaderConfig = HeaderConfig()):
    """One report per ratio; identical data and seeds, only the sub-loss weight differs."""
    return [_run(split, [replace(base, seed=s, ratio=r) for s in seeds], "lambda", f"ratio={r:g}", header)
            for r in ratios]


def run_mask_ablation(split: SplitData, seeds: Sequence[int], base: TrainConfig = TrainConfig(),
                      header: HeaderConfig = HeaderConfig()):
    """Mask-on and mask-off reports with matched seeds."""
    return [_run(split, [replace(base, seed=s, use_mask=on) for s in seeds], "mask",
                 "mask=on" if on else "mask=off", header)
            for on in (True, False)]


def summarize(reports: Sequence[ExperimentReport]) -> dict:
    summary = {"kind": reports[0].kind, "settings": {}}
    for rep in reports:
        keys = rep.metrics[0].keys()
        summary["settings"][rep.setting] = {k: rep.mean(k) for k in keys}
    if len(reports) == 2:
        a, b = reports
        summary["delta"] = {k: b.mean(k) - a.mean(k) for k in a.metrics[0]}
        summary["delta_of"] = f"{b.setting} minus {a.setting}"
    return summary


def write_reports(reports: Sequence[ExperimentReport], out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["branch", "metric", "setting", "seed", "value"])
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                w.writerow(row)
    with open(out / "loss_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "seed", "step", "loss"])
        for rep in reports:
            for seed, curve in zip(rep.seeds, rep.loss_curves):
                for step, v in enumerate(curve):
                    w.writerow([rep.setting, seed, step, repr(float(v))])
    summary = summarize(reports)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return summary


def _json_default(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    return str(o)
