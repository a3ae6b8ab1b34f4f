"""Foreground-mask ablation on the clutter-heavy and clutter-free datasets.

    python3 scripts/run_mask_ablation.py --seeds 5 --out runs/mask
"""
import argparse
import json
from pathlib import Path

from mlod.experiments import (build_split, clutter_free_spec, clutter_heavy_spec, experiment_train_config,
                              run_mask_ablation, write_reports)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="runs/mask")
    args = ap.parse_args()

    seeds = list(range(args.seeds))
    for name, spec in (("heavy", clutter_heavy_spec()), ("free", clutter_free_spec())):
        reports = run_mask_ablation(build_split(spec), seeds, base=experiment_train_config())
        summary = write_reports(reports, Path(args.out) / name)
        print(name, json.dumps(summary["delta"], sort_keys=True))


if __name__ == "__main__":
    main()
