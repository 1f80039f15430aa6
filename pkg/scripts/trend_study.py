"""Attentive + distilled adaptation vs plain self-training across seeds.

Runs the default engine and the bare pseudo-label baseline over the same
pretrained source models and prints per-seed accuracy and forgetting plus
medians. One pretrain per seed is shared by both variants.

    python3 scripts/trend_study.py --seeds 1 2 3 4 5 --csv trend.csv
"""

import argparse
import dataclasses
import statistics
import sys
import time

from driftlab.config import default_config
from driftlab.metrics import mean_adaptation_accuracy, mean_forgetting
from driftlab.trainer import materialize_sequence, pretrain_source, run_sequence


def run_variant(base, variant, pre):
    exp = dataclasses.replace(
        base, run=dataclasses.replace(base.run, variant=variant)
    )
    led = run_sequence(exp, pretrained=pre)
    return mean_adaptation_accuracy(led), mean_forgetting(led)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--variants", nargs="+", default=["ACLS_ADIS", "CLS"])
    ap.add_argument("--csv", default=None, help="also write rows to this file")
    args = ap.parse_args(argv)

    t0 = time.perf_counter()
    rows = []
    for seed in args.seeds:
        base = default_config()
        base = dataclasses.replace(
            base, run=dataclasses.replace(base.run, seed=seed)
        )
        seq = materialize_sequence(base)
        pre = pretrain_source(base, seq.source)
        print(f"[seed {seed}] source test accuracy "
              f"{pre['source_test_accuracy']:.4f}", file=sys.stderr)
        for variant in args.variants:
            acc, fgt = run_variant(base, variant, pre)
            rows.append((seed, variant, acc, fgt))
            print(f"[seed {seed}] {variant:<14} acc {acc:.4f} "
                  f"forget {fgt:+.4f}", file=sys.stderr)

    print(f"{'seed':>4}  {'variant':<14} {'mean_acc':>8} {'mean_forget':>11}")
    for seed, variant, acc, fgt in rows:
        print(f"{seed:>4}  {variant:<14} {acc:>8.4f} {fgt:>+11.4f}")
    print()
    for variant in args.variants:
        accs = [a for s, v, a, f in rows if v == variant]
        fgts = [f for s, v, a, f in rows if v == variant]
        print(f"median {variant:<14} acc {statistics.median(accs):.4f} "
              f"forget {statistics.median(fgts):+.4f}")
    print(f"\n{len(rows)} runs in {time.perf_counter() - t0:.1f}s")

    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("seed,variant,mean_accuracy,mean_forgetting\n")
            for seed, variant, acc, fgt in rows:
                fh.write(f"{seed},{variant},{acc!r},{fgt!r}\n")
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
