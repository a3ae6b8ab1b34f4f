"""Sub-loss weight ablation on the default synthetic dataset.

    python3 scripts/run_lambda_ablation.py --seeds 5 --out runs/lambda
"""
import argparse
import json
from dataclasses import replace

from mlod.experiments import (build_split, default_spec, experiment_train_config, run_lambda_ablation,
                              write_reports)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--lr", type=float, help="override the experiment learning rate")
    ap.add_argument("--depth-aligned", type=int, help="depth-aligned proposals per gt")
    ap.add_argument("--out", default="runs/lambda")
    args = ap.parse_args()

    spec = default_spec()
    if args.depth_aligned is not None:
        spec = replace(spec, proposals=replace(spec.proposals, depth_aligned_per_gt=args.depth_aligned))
    base = experiment_train_config(**({"lr": args.lr} if args.lr else {}))
    reports = run_lambda_ablation(build_split(spec), list(range(args.seeds)), base=base)
    summary = write_reports(reports, args.out)
    print(json.dumps(summary["settings"], indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
