"""Learning-rate sweep behind the experiment default: image and fusion accuracy
at both sub-loss ratios for each rate.

    python3 scripts/lr_sweep.py --rates 1e-4 3e-4 5e-4 1e-3 --seeds 3
"""
import argparse
from dataclasses import replace

from mlod.experiments import build_split, default_spec, experiment_train_config, run_lambda_ablation, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", type=float, nargs="+", default=[1e-4, 3e-4, 5e-4, 1e-3])
    ap.add_argument("--depth-aligned", type=int, nargs="+", default=[6])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    print("depth_aligned lr img_lo img_hi fus_lo fus_hi")
    for per_gt in args.depth_aligned:
        spec = default_spec()
        spec = replace(spec, proposals=replace(spec.proposals, depth_aligned_per_gt=per_gt))
        split = build_split(spec)
        for lr in args.rates:
            s = summarize(run_lambda_ablation(split, list(range(args.seeds)),
                                              base=experiment_train_config(lr=lr)))["settings"]
            lo, hi = s["ratio=0.001"], s["ratio=1"]
            print(f"{per_gt} {lr:g} {lo['acc_image']:.4f} {hi['acc_image']:.4f} "
                  f"{lo['acc_fusion']:.4f} {hi['acc_fusion']:.4f}", flush=True)


if __name__ == "__main__":
    main()
