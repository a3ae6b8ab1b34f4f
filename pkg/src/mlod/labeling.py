"""Per-view proposal labeling, mini-batch selection, discrepancy counts and AP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import GeometryError, UnknownClass
from .geometry import OrientedBox3D, bev_iou, image_iou, project_box_to_image

POSITIVE, NEGATIVE, IGNORE = "positive", "negative", "ignore"
VIEWS = ("bev", "img")


@dataclass(frozen=True)
class ViewThreshold:
    """Positive above ``pos_min``, negative below ``neg_max``, ignored in between.

    The ``*_inclusive`` flags decide whether the boundary value itself
    qualifies ("at least" vs "larger than").
    """

    pos_min: float
    neg_max: float
    pos_inclusive: bool = True
    neg_inclusive: bool = True

    def __post_init__(self):
        if self.neg_max > self.pos_min:
            raise ValueError(f"neg_max {self.neg_max} exceeds pos_min {self.pos_min}")

    def state(self, iou: float) -> str:
        pos = iou >= self.pos_min if self.pos_inclusive else iou > self.pos_min
        if pos:
            return POSITIVE
        neg = iou <= self.neg_max if self.neg_inclusive else iou < self.neg_max
        return NEGATIVE if neg else IGNORE


class ThresholdTable(dict):
    """``{class_name: {"bev": ViewThreshold, "img": ViewThreshold}}``."""

    def lookup(self, class_name: str, view: str) -> ViewThreshold:
        try:
            return self[class_name][view]
        except KeyError:
            raise UnknownClass(class_name) from None


def default_threshold_table() -> ThresholdTable:
    # car: "larger than 0.65/0.7" positive, "less than 0.55/0.5" negative
    car = {"bev": ViewThreshold(0.65, 0.55, pos_inclusive=False, neg_inclusive=False),
           "img": ViewThreshold(0.70, 0.50, pos_inclusive=False, neg_inclusive=False)}
    # pedestrian/cyclist: "at least 0.45/0.6" positive, "no more than 0.4/0.4" negative
    small = {"bev": ViewThreshold(0.45, 0.40), "img": ViewThreshold(0.60, 0.40)}
    return ThresholdTable(Car=car, Pedestrian=dict(small), Cyclist=dict(small))


class GroundTruth(NamedTuple):
    box: OrientedBox3D
    class_name: str


@dataclass
class ViewLabel:
    state: str
    iou: float
    matched_gt: Optional[int] = None
    class_name: Optional[str] = None

    @property
    def is_positive(self):
        return self.state == POSITIVE


@dataclass
class ProposalLabelSet:
    bev: list = field(default_factory=list)
    img: list = field(default_factory=list)

    def __len__(self):
        return len(self.bev)

    def states(self, view: str) -> np.ndarray:
        return np.array([lab.state for lab in getattr(self, view)], dtype=object)

    def class_targets(self, view: str, class_names: Sequence[str]) -> np.ndarray:
        """Integer targets: 0 background, 1.. class index + 1, -1 ignore."""
        out = np.empty(len(self), dtype=np.int64)
        for i, lab in enumerate(getattr(self, view)):
            if lab.state == POSITIVE:
                out[i] = list(class_names).index(lab.class_name) + 1
            elif lab.state == NEGATIVE:
                out[i] = 0
            else:
                out[i] = -1
        return out


def _label_view(ious: np.ndarray, gts, table, view) -> list:
    labels = []
    for row in ious:
        if len(gts) == 0:
            labels.append(ViewLabel(NEGATIVE, 0.0))
            continue
        j = int(np.argmax(row))
        iou = float(row[j])
        cls = gts[j].class_name
        state = table.lookup(cls, view).state(iou)
        labels.append(ViewLabel(state, iou, j if iou > 0 else None,
                                cls if state == POSITIVE else None))
    return labels


def project_all(boxes, calib, image_size):
    """Projected 2D boxes; ``None`` where a box cannot be projected."""
    out = []
    for b in boxes:
        try:
            out.append(project_box_to_image(b, calib, image_size).bbox)
        except GeometryError:
            out.append(None)
    return out


def assign_labels(proposals: Sequence[OrientedBox3D], gts: Sequence[GroundTruth],
                  calib, image_size, table: Optional[ThresholdTable] = None) -> ProposalLabelSet:
    """Label every proposal independently in BEV and in the image.

    Each view compares against its best-overlapping ground truth and applies
    that ground truth's class thresholds. ``DontCare`` ground truths are
    dropped. Proposals that cannot be projected are ignored in the image view.
    """
    table = default_threshold_table() if table is None else table
    gts = [g for g in gts if g.class_name != "DontCare"]
    for g in gts:
        table.lookup(g.class_name, "bev")

    bev = np.zeros((len(proposals), len(gts)))
    for i, p in enumerate(proposals):
        for j, g in enumerate(gts):
            bev[i, j] = bev_iou(p, g.box)

    p2d = project_all(proposals, calib, image_size)
    g2d = project_all([g.box for g in gts], calib, image_size)
    img = np.zeros((len(proposals), len(gts)))
    for i, pb in enumerate(p2d):
        for j, gb in enumerate(g2d):
            if pb is not None and gb is not None:
                img[i, j] = image_iou(pb, gb)

    labels = ProposalLabelSet(_label_view(bev, gts, table, "bev"),
                              _label_view(img, gts, table, "img"))
    for i, pb in enumerate(p2d):
        if pb is None:
            labels.img[i] = ViewLabel(IGNORE, 0.0)
    return labels


@dataclass
class MiniBatch:
    indices: np.ndarray             # selected proposal indices
    image_participants: np.ndarray  # bool per selected index: non-ignore in image view

    def __len__(self):
        return len(self.indices)


def _by_score(idx: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # descending score, ties broken by ascending index
    return idx[np.lexsort((idx, -scores[idx]))]


def sample_minibatch(labels: ProposalLabelSet, rpn_scores, size: int = 1024, seed: int = 0) -> MiniBatch:
    """BEV-positives first, then the highest-scoring BEV-negatives up to ``size``.

    If positives alone exceed ``size`` a seeded random subset of them is kept.
    The image-view sub-loss later runs only on members non-ignore in that view.
    """
    scores = np.asarray(rpn_scores, dtype=np.float64)
    bev = labels.states("bev")
    pos = np.flatnonzero(bev == POSITIVE)
    neg = np.flatnonzero(bev == NEGATIVE)
    if len(pos) > size:
        rng = np.random.default_rng(seed)
        pos = np.sort(rng.choice(pos, size=size, replace=False))
    pos = _by_score(pos, scores)
    neg = _by_score(neg, scores)[: max(size - len(pos), 0)]
    chosen = np.concatenate([pos, neg]).astype(np.int64)
    img = labels.states("img")
    participants = img[chosen] != IGNORE if len(chosen) else np.zeros(0, dtype=bool)
    return MiniBatch(chosen, np.asarray(participants, dtype=bool))


def discrepancy_stats(labels: ProposalLabelSet) -> dict:
    counts = dict(bev_neg_img_pos=0, bev_pos_img_neg=0, agree_pos=0, agree_neg=0, any_ignore=0)
    for b, m in zip(labels.bev, labels.img):
        if b.state == IGNORE or m.state == IGNORE:
            counts["any_ignore"] += 1
        elif b.state == NEGATIVE and m.state == POSITIVE:
            counts["bev_neg_img_pos"] += 1
        elif b.state == POSITIVE and m.state == NEGATIVE:
            counts["bev_pos_img_neg"] += 1
        elif b.state == POSITIVE:
            counts["agree_pos"] += 1
        else:
            counts["agree_neg"] += 1
    return counts


# ---------------------------------------------------------------------------
# average precision
# ---------------------------------------------------------------------------

# KITTI difficulty limits: min 2D height (px), max occlusion, max truncation
DIFFICULTY = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}

# matching thresholds used for evaluation
AP_IOU_THRESHOLD = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}


def meets_difficulty(label, level: str) -> bool:
    min_h, max_occ, max_trunc = DIFFICULTY[level]
    left, top, right, bottom = label.bbox2d
    return (bottom - top >= min_h and label.occlusion <= max_occ
            and label.truncation <= max_trunc)


class ScoredBox(NamedTuple):
    box: object        # OrientedBox3D, or a 2D box for the image view
    score: float
    frame: int = 0


class EvalBox(NamedTuple):
    box: object
    frame: int = 0
    ignore: bool = False


_IOU = {"bev": bev_iou, "3d-as-bev-proxy": bev_iou, "image": image_iou}


def match_detections(detections: Sequence[ScoredBox], gts: Sequence[EvalBox],
                     iou_threshold: float, view: str = "bev", det_ignore=None):
    """Greedy score-descending matching.

    Returns per-detection outcome in score order (1 TP, 0 FP, -1 ignored)
    and the number of non-ignored ground truths.
    """
    iou_fn = _IOU[view]
    det_ignore = np.zeros(len(detections), bool) if det_ignore is None else np.asarray(det_ignore, bool)
    scores = np.array([d.score for d in detections], dtype=np.float64)
    order = np.lexsort((np.arange(len(detections)), -scores)) if len(detections) else np.zeros(0, int)
    by_frame = {}
    for j, g in enumerate(gts):
        by_frame.setdefault(g.frame, []).append(j)
    used = np.zeros(len(gts), dtype=bool)
    outcome = np.empty(len(order), dtype=np.int64)
    for rank, i in enumerate(order):
        d = detections[i]
        best, best_j = -1.0, -1
        for j in by_frame.get(d.frame, []):
            if used[j]:
                continue
            iou = iou_fn(d.box, gts[j].box)
            if iou > best:
                best, best_j = iou, j
        if best_j >= 0 and best >= iou_threshold:
            used[best_j] = True
            outcome[rank] = -1 if gts[best_j].ignore else 1
        else:
            outcome[rank] = -1 if det_ignore[i] else 0
    n_pos = sum(1 for g in gts if not g.ignore)
    return outcome, n_pos


def interpolated_ap(precision: np.ndarray, recall: np.ndarray, points: int = 40) -> float:
    ap = 0.0
    for r in np.arange(1, points + 1) / points:
        above = precision[recall >= r - 1e-12]
        ap += above.max() if above.size else 0.0
    return ap / points


def average_precision(detections: Sequence[ScoredBox], gts: Sequence[EvalBox],
                      iou_threshold: float, view: str = "bev", det_ignore=None,
                      points: int = 40) -> float:
    """40-point interpolated AP; NaN when no ground truth counts."""
    outcome, n_pos = match_detections(detections, gts, iou_threshold, view, det_ignore)
    if n_pos == 0:
        return float("nan")
    kept = outcome[outcome >= 0]
    if kept.size == 0:
        return 0.0
    tp = np.cumsum(kept == 1)
    fp = np.cumsum(kept == 0)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(interpolated_ap(precision, recall, points))
