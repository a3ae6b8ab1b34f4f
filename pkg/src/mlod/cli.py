"""Command-line entry point: ``mlod <command> [options]``.

Frames follow the KITTI directory layout under a root directory::

    velodyne/<id>.bin  calib/<id>.txt  label_2/<id>.txt  planes/<id>.txt
    image_2/<id>.png   proposals/<id>.txt (KITTI result format)

Exit codes: 0 ok, 2 input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import kitti_io
from .augment import (draw_alphas, fit_pca_basis, flip_calibration, flip_cloud, flip_image, flip_label,
                      pca_jitter)
from .bev import BevConfig, encode_grid, rasterize
from .errors import GeometryError, MlodError, NonFiniteLoss, ParseError
from .experiments import (DatasetSpec, ProposalMix, build_split, clutter_free_spec, clutter_heavy_spec,
                          default_spec, EXPERIMENT_LR, run_lambda_ablation, run_mask_ablation, write_reports)
from .fgmask import MaskConfig, build_sparse_depth_map, cell_medians, compute_mask, crop_resize_depth_nearest
from .geometry import project_box_to_image
from .labeling import (AP_IOU_THRESHOLD, DIFFICULTY, EvalBox, GroundTruth, ScoredBox, assign_labels,
                       average_precision, discrepancy_stats, meets_difficulty)
from .synth import SceneSpec, generate_proposals, generate_scene, scene_labels
from .toy_header import TrainConfig

log = logging.getLogger("mlod")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

DISCREPANCY_COLUMNS = ["frame", "proposals", "bev_neg_img_pos", "bev_pos_img_neg",
                       "agree_pos", "agree_neg", "any_ignore"]


class InputError(Exception):
    """Bad path, file or configuration; reported with exit code 2."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

CONFIG_SECTIONS = {
    "bev": BevConfig,
    "mask": MaskConfig,
    "scene": SceneSpec,
    "train": TrainConfig,
    "dataset": DatasetSpec,
    "proposals": ProposalMix,
}
RUN_KEYS = {"seed": int}


def _coerce(text: str, default, name: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.replace(",", " ").split())
        if isinstance(default, dict):
            return {k.strip(): float(v) for k, v in (item.split(":") for item in text.split(",") if item.strip())}
        return text
    except ValueError:
        raise InputError(f"config key {name!r}: cannot parse {text!r}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, dict):
        return ", ".join(f"{k}: {v!r}" for k, v in value.items())
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclasses.dataclass
class RunConfig:
    """Parameter sets for every section plus the global seed."""

    sections: dict
    seed: int = 0

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({name: {} for name in CONFIG_SECTIONS})

    @classmethod
    def load(cls, path=None) -> "RunConfig":
        cfg = cls.defaults()
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise InputError(f"{p}: config file not found")
            parser = configparser.ConfigParser()
            parser.optionxform = str
            try:
                parser.read_string(p.read_text())
            except configparser.Error as exc:
                raise InputError(f"{p}: {exc}") from None
            for section in parser.sections():
                if section == "run":
                    for key, text in parser[section].items():
                        if key not in RUN_KEYS:
                            raise InputError(f"{p}: unknown key {key!r} in [run]")
                        cfg.seed = _coerce(text, 0, key)
                    continue
                if section not in CONFIG_SECTIONS:
                    raise InputError(f"{p}: unknown section [{section}]")
                known = {f.name: f for f in dataclasses.fields(CONFIG_SECTIONS[section])}
                for key, text in parser[section].items():
                    if key not in known or key in ("scene", "proposals"):
                        raise InputError(f"{p}: unknown key {key!r} in [{section}]")
                    default = getattr(CONFIG_SECTIONS[section](), key)
                    cfg.sections[section][key] = _coerce(text, default, key)
        env = os.environ.get("MLOD_SEED")
        if env is not None:
            try:
                cfg.seed = int(env)
            except ValueError:
                raise InputError(f"MLOD_SEED={env!r} is not an integer") from None
        return cfg

    def build(self, section: str, **overrides):
        kwargs = dict(self.sections.get(section, {}))
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return CONFIG_SECTIONS[section](**kwargs)
        except (TypeError, ValueError) as exc:
            raise InputError(f"[{section}] {exc}") from None

    def dump(self, resolved: dict) -> str:
        """INI text of every resolved section (all fields, not just overrides)."""
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser["run"] = {"seed": str(self.seed)}
        for name, obj in resolved.items():
            parser[name] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                            if not dataclasses.is_dataclass(getattr(obj, f.name))}
        from io import StringIO
        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(out: Path, run: RunConfig, resolved: dict):
    (out / "config.ini").write_text(run.dump(resolved))


# ---------------------------------------------------------------------------
# frame access
# ---------------------------------------------------------------------------

def _require(path: Path) -> Path:
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    return path


def _parse(path: Path, fn):
    try:
        return fn(_require(path).read_text())
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_cloud(root: Path, frame: str) -> np.ndarray:
    path = _require(root / "velodyne" / f"{frame}.bin")
    try:
        return kitti_io.parse_point_cloud(path.read_bytes())
    except ParseError as exc:
        raise InputError(f"{path}: {exc}") from None


def read_calib(root: Path, frame: str):
    return _parse(root / "calib" / f"{frame}.txt", kitti_io.parse_calibration)


def read_plane_lidar(root: Path, frame: str, calib):
    plane = _parse(root / "planes" / f"{frame}.txt", kitti_io.parse_ground_plane)
    return kitti_io.plane_to_lidar(plane, calib)


def read_labels(path: Path):
    return _parse(path, kitti_io.parse_labels)


def read_image(path: Path) -> np.ndarray:
    _require(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_png(path: Path, array: np.ndarray):
    Image.fromarray(np.ascontiguousarray(array)).save(path)


def frame_ids(root: Path, sub: str = "velodyne", ext: str = ".bin") -> list:
    d = root / sub
    if not d.is_dir():
        raise InputError(f"{d}: directory not found")
    return sorted(p.stem for p in d.glob(f"*{ext}"))


def export_frame(root: Path, frame: str, scene, proposals=None):
    """Write a synthetic scene in the KITTI layout."""
    for sub in ("velodyne", "calib", "label_2", "planes", "image_2", "proposals"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    (root / "velodyne" / f"{frame}.bin").write_bytes(kitti_io.write_point_cloud(scene.cloud))
    (root / "calib" / f"{frame}.txt").write_text(kitti_io.write_calibration(scene.calib))
    (root / "label_2" / f"{frame}.txt").write_text(kitti_io.write_labels(scene_labels(scene)))
    plane_rect = kitti_io.plane_to_rect(scene.plane, scene.calib)
    (root / "planes" / f"{frame}.txt").write_text(kitti_io.write_ground_plane(plane_rect))
    write_png(root / "image_2" / f"{frame}.png", scene.image)
    if proposals is not None:
        dets = [(b, scene.gts[s].class_name if s >= 0 and m != "clutter" else "Car", sc)
                for b, s, sc, m in zip(proposals.boxes, proposals.source, proposals.scores, proposals.mode)]
        (root / "proposals" / f"{frame}.txt").write_text(
            kitti_io.write_detections(dets, scene.calib, scene.image_size))


def _parallel(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _channel_png(channel: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(np.rint(channel / scale * 255.0), 0, 255).astype(np.uint8)


def cmd_bev(args, run: RunConfig) -> int:
    root = Path(args.frame_root)
    cfg = run.build("bev")
    cloud = read_cloud(root, args.id)
    calib = read_calib(root, args.id)
    plane = read_plane_lidar(root, args.id, calib)
    out = _prepare_out(args.out)
    bev = rasterize(cloud, plane, cfg)
    top = cfg.height_range[1]
    for c in range(cfg.num_channels):
        name = f"density" if c == cfg.num_slices else f"height{c}"
        scale = 1.0 if c == cfg.num_slices else top
        write_png(out / f"{args.id}_{name}.png", _channel_png(bev.cells[:, :, c], scale))
    (out / f"{args.id}_bev.bin").write_bytes(encode_grid(bev.cells))
    _write_config(out, run, {"bev": cfg})
    log.info("wrote %d channel images and %s", cfg.num_channels, out / f"{args.id}_bev.bin")
    return EXIT_OK


def read_proposals(path: Path, calib):
    labels = read_labels(path)
    boxes = [kitti_io.label_to_box(lab, calib) for lab in labels]
    scores = np.array([1.0 if lab.score is None else lab.score for lab in labels])
    return labels, boxes, scores


def mask_overlay(image: np.ndarray, bbox, mask: np.ndarray) -> np.ndarray:
    """Pixel crop covering ``bbox`` with masked-out cells dimmed by 70 %."""
    H, W = image.shape[:2]
    l, t, r, b = bbox[:4]
    x0, y0 = int(np.floor(l)), int(np.floor(t))
    x1, y1 = min(int(np.ceil(r)), W), min(int(np.ceil(b)), H)
    crop = image[y0:y1, x0:x1].astype(np.float64)
    k = mask.shape[0]
    rows = np.clip(np.floor((np.arange(y0, y1) + 0.5 - t) / (b - t) * k), 0, k - 1).astype(int)
    cols = np.clip(np.floor((np.arange(x0, x1) + 0.5 - l) / (r - l) * k), 0, k - 1).astype(int)
    keep = mask[np.ix_(rows, cols)] != 0
    crop = np.where(keep[..., None], crop, crop * 0.3)
    return np.clip(np.rint(crop), 0, 255).astype(np.uint8)


def cmd_mask(args, run: RunConfig) -> int:
    root = Path(args.frame_root)
    cfg = run.build("mask")
    calib = read_calib(root, args.id)
    cloud = read_cloud(root, args.id)
    image = read_image(root / "image_2" / f"{args.id}.png")
    prop_path = Path(args.proposals) if args.proposals else root / "proposals" / f"{args.id}.txt"
    _, boxes, _ = read_proposals(prop_path, calib)
    out = _prepare_out(args.out)
    size = (image.shape[1], image.shape[0])
    depth = build_sparse_depth_map(cloud, calib, size)
    k = cfg.k
    with open(out / f"{args.id}_masks.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["proposal", "d_min", "d_max"] + [f"m{i}_{j}" for i in range(k) for j in range(k)])
        for idx, box in enumerate(boxes):
            try:
                proj = project_box_to_image(box, calib, size)
            except GeometryError as exc:
                log.warning("proposal %d skipped: %s", idx, exc)
                continue
            med = cell_medians(crop_resize_depth_nearest(depth, proj.bbox, cfg), cfg)
            mask = compute_mask(med, proj.d_min, proj.d_max, cfg)
            w.writerow([idx, repr(proj.d_min), repr(proj.d_max)] + [int(v) for v in mask.ravel()])
            write_png(out / f"{args.id}_overlay_{idx:03d}.png", mask_overlay(image, proj.bbox, mask))
    _write_config(out, run, {"mask": cfg})
    return EXIT_OK


def label_stats_rows(root: Path, ids, proposals_dir: Path, threads: int = 1):
    def one(frame):
        calib = read_calib(root, frame)
        gts = [GroundTruth(kitti_io.label_to_box(lab, calib), lab.class_name)
               for lab in read_labels(root / "label_2" / f"{frame}.txt") if not lab.is_dontcare]
        image = read_image(root / "image_2" / f"{frame}.png")
        _, boxes, _ = read_proposals(proposals_dir / f"{frame}.txt", calib)
        labels = assign_labels(boxes, gts, calib, (image.shape[1], image.shape[0]))
        return {"frame": frame, "proposals": len(boxes), **discrepancy_stats(labels)}

    rows = _parallel(one, ids, threads)
    total = {"frame": "ALL"}
    for col in DISCREPANCY_COLUMNS[1:]:
        total[col] = sum(r[col] for r in rows)
    return rows + [total]


def cmd_label_stats(args, run: RunConfig) -> int:
    root = Path(args.frame_root)
    ids = args.ids or frame_ids(root)
    prop_dir = Path(args.proposals_dir) if args.proposals_dir else root / "proposals"
    rows = label_stats_rows(root, ids, prop_dir, args.threads)
    out = _prepare_out(args.out)
    with open(out / "discrepancy.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DISCREPANCY_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    _write_config(out, run, {})
    return EXIT_OK


def cmd_gen_scenes(args, run: RunConfig) -> int:
    spec = run.build("scene", num_objects=args.objects, clutter=args.clutter)
    out = _prepare_out(args.out)
    base = run.seed if args.seed is None else args.seed

    def one(i):
        scene = generate_scene(dataclasses.replace(spec, seed=base + i))
        props = generate_proposals(scene, args.per_gt, "perturb", seed=base + i)
        props = props + generate_proposals(scene, args.per_gt, "depth_aligned", seed=base + i)
        props = props + generate_proposals(scene, 0, "random", seed=base + i, count=args.random)
        export_frame(out, f"{i:06d}", scene, props)

    _parallel(one, range(args.count), args.threads)
    _write_config(out, run, {"scene": dataclasses.replace(spec, seed=base)})
    log.info("wrote %d frames to %s", args.count, out)
    return EXIT_OK


def cmd_experiment(args, run: RunConfig) -> int:
    kind = args.kind
    if kind == "lambda":
        spec = default_spec(seed=run.seed)
    elif args.clutter == "free":
        spec = clutter_free_spec(seed=run.seed)
    else:
        spec = clutter_heavy_spec(seed=run.seed)
    if run.sections["scene"]:
        spec = dataclasses.replace(spec, scene=dataclasses.replace(spec.scene, **run.sections["scene"]))
    if run.sections["proposals"]:
        spec = dataclasses.replace(spec, proposals=run.build("proposals"))
    if run.sections["dataset"]:
        spec = dataclasses.replace(spec, **run.sections["dataset"])
    base = run.build("train", lr=EXPERIMENT_LR if "lr" not in run.sections["train"] else None)
    seeds = list(range(args.seeds))
    out = _prepare_out(args.out)
    split = build_split(spec)
    if kind == "lambda":
        reports = run_lambda_ablation(split, seeds, base=base)
    else:
        reports = run_mask_ablation(split, seeds, base=base)
    summary = write_reports(reports, out)
    _write_config(out, run, {"dataset": spec, "scene": spec.scene, "proposals": spec.proposals,
                             "train": base})
    print(json.dumps(summary["delta"], indent=2, sort_keys=True))
    return EXIT_OK


def _eval_boxes(root: Path, frame: str, cls: str, level: str, det_dir: Path, view: str):
    calib = read_calib(root, frame)
    fid = int(frame) if frame.isdigit() else hash(frame)
    gts = []
    for lab in read_labels(root / "label_2" / f"{frame}.txt"):
        if lab.class_name != cls:
            continue
        box = kitti_io.label_to_box(lab, calib) if view == "bev" else lab.bbox2d
        gts.append(EvalBox(box, fid, ignore=not meets_difficulty(lab, level)))
    dets, det_ignore = [], []
    path = det_dir / f"{frame}.txt"
    if path.is_file():
        for lab in read_labels(path):
            if lab.class_name != cls:
                continue
            box = kitti_io.label_to_box(lab, calib) if view == "bev" else lab.bbox2d
            dets.append(ScoredBox(box, 1.0 if lab.score is None else lab.score, fid))
            det_ignore.append(lab.bbox2d[3] - lab.bbox2d[1] < DIFFICULTY[level][0])
    return gts, dets, det_ignore


def eval_ap_rows(root: Path, det_dir: Path, cls: str, ids):
    rows = []
    thr = AP_IOU_THRESHOLD[cls]
    for view in ("bev", "image"):
        for level in DIFFICULTY:
            gts, dets, ign = [], [], []
            for frame in ids:
                g, d, i = _eval_boxes(root, frame, cls, level, det_dir, view)
                gts += g
                dets += d
                ign += i
            ap = average_precision(dets, gts, thr, view=view, det_ignore=ign)
            rows.append({"class": cls, "view": view, "difficulty": level, "iou_threshold": thr,
                         "ap": ap, "detections": len(dets), "ground_truths": sum(not g.ignore for g in gts)})
    return rows


def cmd_eval_ap(args, run: RunConfig) -> int:
    root = Path(args.frame_root)
    if args.cls not in AP_IOU_THRESHOLD:
        raise InputError(f"unknown class {args.cls!r}; expected one of {sorted(AP_IOU_THRESHOLD)}")
    det_dir = Path(args.detections)
    if not det_dir.is_dir():
        raise InputError(f"{det_dir}: directory not found")
    ids = args.ids or frame_ids(root, "label_2", ".txt")
    rows = eval_ap_rows(root, det_dir, args.cls, ids)
    out = _prepare_out(args.out)
    with open(out / f"ap_{args.cls}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['class']:<10} {r['view']:<6} {r['difficulty']:<9} AP={r['ap']:.4f}")
    return EXIT_OK


def cmd_flip(args, run: RunConfig) -> int:
    root = Path(args.frame_root)
    out = _prepare_out(args.out)
    ids = args.ids or frame_ids(root)
    for frame in ids:
        cloud = read_cloud(root, frame)
        calib = read_calib(root, frame)
        image = read_image(root / "image_2" / f"{frame}.png")
        width = image.shape[1]
        for sub in ("velodyne", "calib", "image_2", "label_2", "planes"):
            (out / sub).mkdir(exist_ok=True)
        (out / "velodyne" / f"{frame}.bin").write_bytes(kitti_io.write_point_cloud(flip_cloud(cloud)))
        (out / "calib" / f"{frame}.txt").write_text(kitti_io.write_calibration(flip_calibration(calib, width)))
        write_png(out / "image_2" / f"{frame}.png", flip_image(image))
        label_path = root / "label_2" / f"{frame}.txt"
        if label_path.is_file():
            labels = [flip_label(lab, width) for lab in read_labels(label_path)]
            (out / "label_2" / f"{frame}.txt").write_text(kitti_io.write_labels(labels))
        plane_path = root / "planes" / f"{frame}.txt"
        if plane_path.is_file():
            p = _parse(plane_path, kitti_io.parse_ground_plane)
            a, b, c = p.normal
            flipped = kitti_io.GroundPlane((-a, b, c), p.offset)
            (out / "planes" / f"{frame}.txt").write_text(kitti_io.write_ground_plane(flipped))
    return EXIT_OK


def cmd_jitter(args, run: RunConfig) -> int:
    root = Path(args.frame_root)
    ids = args.ids or frame_ids(root, "image_2", ".png")
    images = [read_image(root / "image_2" / f"{f}.png") for f in ids]
    if not images:
        raise InputError(f"{root / 'image_2'}: no images")
    basis = fit_pca_basis(images)
    rng = np.random.default_rng(run.seed if args.seed is None else args.seed)
    out = _prepare_out(args.out)
    for frame, im in zip(ids, images):
        jittered = pca_jitter(im, basis, draw_alphas(rng, args.sigma))
        write_png(out / f"{frame}.png", np.rint(jittered).astype(np.uint8))
    (out / "pca_basis.json").write_text(json.dumps({
        "eigenvalues": basis.eigenvalues.tolist(), "eigenvectors": basis.eigenvectors.tolist(),
        "scale": basis.scale}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlod", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI file with [run], [bev], [mask], [scene], [train], [dataset], [proposals]")
    p.add_argument("--threads", type=int, default=1, help="frame-level worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def frame_cmd(name, help_, with_id=True):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("frame_root", help="directory holding velodyne/, calib/, ... subdirectories")
        if with_id:
            sp.add_argument("--id", required=True, help="frame id, e.g. 000042")
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    frame_cmd("bev", "rasterize a frame to BEV channel images and a binary grid")
    sp = frame_cmd("mask", "foreground masks (CSV) and overlays for a frame's proposals")
    sp.add_argument("--proposals", help="proposal file (default: <root>/proposals/<id>.txt)")
    sp = frame_cmd("label-stats", "per-view label discrepancy counts", with_id=False)
    sp.add_argument("--ids", nargs="*")
    sp.add_argument("--proposals-dir")
    sp = sub.add_parser("gen-scenes", help="write synthetic frames in the KITTI layout")
    sp.add_argument("--out", required=True)
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--objects", type=int)
    sp.add_argument("--clutter", type=int)
    sp.add_argument("--per-gt", type=int, default=3)
    sp.add_argument("--random", type=int, default=10)
    sp = sub.add_parser("experiment", help="sub-loss weight or mask ablation of the toy header")
    sp.add_argument("--kind", choices=("lambda", "mask"), required=True)
    sp.add_argument("--clutter", choices=("heavy", "free"), default="heavy", help="mask ablation dataset")
    sp.add_argument("--seeds", type=int, default=5)
    sp.add_argument("--out", required=True)
    sp = frame_cmd("eval-ap", "AP per difficulty for one class", with_id=False)
    sp.add_argument("--detections", required=True, help="directory of KITTI result files")
    sp.add_argument("--class", dest="cls", default="Car")
    sp.add_argument("--ids", nargs="*")
    sp = frame_cmd("flip", "mirror frames laterally", with_id=False)
    sp.add_argument("--ids", nargs="*")
    sp = frame_cmd("jitter", "PCA colour jitter of frame images", with_id=False)
    sp.add_argument("--ids", nargs="*")
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--seed", type=int)
    return p


COMMANDS = {
    "bev": cmd_bev, "mask": cmd_mask, "label-stats": cmd_label_stats, "gen-scenes": cmd_gen_scenes,
    "experiment": cmd_experiment, "eval-ap": cmd_eval_ap, "flip": cmd_flip, "jitter": cmd_jitter,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        run = RunConfig.load(args.config)
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        return COMMANDS[args.command](args, run)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except NonFiniteLoss as exc:
        log.error("non-finite loss at step %d", exc.step)
        return EXIT_NUMERIC
    except MlodError as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
