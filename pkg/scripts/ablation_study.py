"""Every loss variant over one or more seeds, tabulated.

Which ingredients matter: the confidence mask, the distillation anchor, its
weight, the strong-view route, and the choice of teacher. All variants per
seed reuse one pretrained source model.

    python3 scripts/ablation_study.py --seeds 1 2 3 --csv ablation.csv
"""

import argparse
import dataclasses
import statistics
import sys
import time

from driftlab.config import default_config
from driftlab.losses import VARIANTS
from driftlab.metrics import mean_adaptation_accuracy, mean_forgetting
from driftlab.trainer import materialize_sequence, pretrain_source, run_sequence


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1])
    ap.add_argument("--csv", default=None, help="also write rows to this file")
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    results = {v: [] for v in VARIANTS}
    for seed in args.seeds:
        base = default_config()
        base = dataclasses.replace(
            base, run=dataclasses.replace(base.run, seed=seed)
        )
        seq = materialize_sequence(base)
        pre = pretrain_source(base, seq.source)
        for variant in VARIANTS:
            exp = dataclasses.replace(
                base, run=dataclasses.replace(base.run, variant=variant)
            )
            led = run_sequence(exp, pretrained=pre)
            acc, fgt = mean_adaptation_accuracy(led), mean_forgetting(led)
            results[variant].append((seed, acc, fgt))
            print(f"[seed {seed}] {variant:<14} acc {acc:.4f} "
                  f"forget {fgt:+.4f}", file=sys.stderr)

    multi = len(args.seeds) > 1
    label = "median_acc" if multi else "mean_acc"
    print(f"{'variant':<14} {label:>10} {'forget':>8}")
    for variant in VARIANTS:
        accs = [a for _, a, _ in results[variant]]
        fgts = [f for _, _, f in results[variant]]
        print(f"{variant:<14} {statistics.median(accs):>10.4f} "
              f"{statistics.median(fgts):>+8.4f}")
    n = sum(len(v) for v in results.values())
    print(f"\n{n} runs in {time.perf_counter() - t0:.1f}s")

    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("seed,variant,mean_accuracy,mean_forgetting\n")
            for variant in VARIANTS:
                for seed, acc, fgt in results[variant]:
                    fh.write(f"{seed},{variant},{acc!r},{fgt!r}\n")
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
