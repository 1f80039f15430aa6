"""Command-line orchestrator.

Subcommands: pretrain, run, ablate, gradcheck, report. One JSON config
file plus a few overriding flags; every output artifact is a pure
function of (config, seed) when threads=1.

Exit codes: 0 success; 1 I/O trouble; 2 invalid config or arguments;
3 numeric failure; 4 pseudo-label refinement failure; 5 gradient check
failed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .augment import AugmentPolicy, apply_policy
from .config import (
    ExperimentConfig,
    config_digest,
    default_config,
    load_config,
)
from .errors import (
    ConfigError,
    DriftlabError,
    IngestError,
    NumericError,
    RefinementError,
)
from .losses import VARIANTS, ThresholdSchedule, combined_loss
from .metrics import (
    ledger_from_doc,
    mean_adaptation_accuracy,
    mean_forgetting,
)
from .netcore import (
    backward_through_head,
    extractor_arrays,
    forward,
    grad_check,
    init_classifier,
    init_extractor,
    classifier_logits,
    model_forward,
    softmax,
)
from .persist import atomic_write_text, load_json, save_json
from .seeding import mix64, rng_from
from .trainer import (
    load_checkpoint,
    materialize_sequence,
    pretrain_digest,
    pretrain_source,
    run_sequence,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_REFINE = 4
EXIT_GRADCHECK = 5

GRADCHECK_TOL = 1e-5
# finite differences are meaningless within this distance of a confidence
# threshold (the pass-count indicator is discontinuous there)
THRESHOLD_GAP = 1e-3


def _load_exp(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else default_config()
    import dataclasses

    if getattr(args, "seed", None) is not None:
        exp = dataclasses.replace(
            exp, run=dataclasses.replace(exp.run, seed=args.seed)
        )
    if getattr(args, "variant", None) is not None:
        name = args.variant.upper()
        if name not in VARIANTS:
            raise ConfigError(
                f"unknown variant {args.variant!r}; choose from {', '.join(VARIANTS)}"
            )
        exp = dataclasses.replace(
            exp, run=dataclasses.replace(exp.run, variant=name)
        )
    threads = getattr(args, "threads", None)
    if threads is None and os.environ.get("DRIFTLAB_THREADS"):
        raw = os.environ["DRIFTLAB_THREADS"]
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"DRIFTLAB_THREADS must be an integer, got {raw!r}")
    if threads is not None:
        if threads < 1:
            raise ConfigError(f"threads must be >= 1, got {threads}")
        exp = dataclasses.replace(exp, threads=threads)
    return exp


def _pretrain_path(out: str) -> str:
    return os.path.join(out, "pretrain.json")


def _obtain_pretrain(exp: ExperimentConfig, out: str, progress: bool = True) -> dict:
    """Reuse {out}/pretrain.json when it matches this config, else train."""
    path = _pretrain_path(out)
    if os.path.exists(path):
        doc = load_json(path)
        if doc.get("pretrain_digest") == pretrain_digest(exp):
            return doc
    seq = materialize_sequence(exp)
    ck = pretrain_source(exp, seq.source)
    save_json(path, ck)
    if progress:
        print(
            f"[driftlab] pretrained: source test accuracy "
            f"{ck['source_test_accuracy']:.4f}",
            file=sys.stderr,
        )
    return ck


def cmd_pretrain(args) -> int:
    exp = _load_exp(args)
    os.makedirs(args.out, exist_ok=True)
    seq = materialize_sequence(exp)
    ck = pretrain_source(exp, seq.source)
    save_json(_pretrain_path(args.out), ck)
    print(
        f"pretrain: source test accuracy {ck['source_test_accuracy']:.4f} "
        f"-> {_pretrain_path(args.out)}"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    exp = _load_exp(args)
    os.makedirs(args.out, exist_ok=True)
    if args.resume:
        ck = load_checkpoint(args.resume)
        ledger = run_sequence(exp, out_dir=args.out, resume=ck, progress=True)
    else:
        pre = _obtain_pretrain(exp, args.out)
        ledger = run_sequence(exp, out_dir=args.out, pretrained=pre, progress=True)
    print(
        f"run [{ledger.variant} seed {ledger.seed}]: "
        f"mean accuracy {mean_adaptation_accuracy(ledger):.4f}, "
        f"mean forgetting {mean_forgetting(ledger):+.4f}"
    )
    return EXIT_OK


def cmd_ablate(args) -> int:
    exp = _load_exp(args)
    os.makedirs(args.out, exist_ok=True)
    import dataclasses

    pre = _obtain_pretrain(exp, args.out)
    for variant in VARIANTS:
        vdir = os.path.join(args.out, variant.lower())
        os.makedirs(vdir, exist_ok=True)
        e2 = dataclasses.replace(
            exp, run=dataclasses.replace(exp.run, variant=variant)
        )
        run_sequence(e2, out_dir=vdir, pretrained=pre, progress=False)
        print(f"[driftlab] ablate: {variant} done", file=sys.stderr)
    # the table is recomputed from the emitted ledgers, not from in-memory
    # state, so it stays honest about what was written
    lines = ["variant,mean_accuracy,mean_forgetting"]
    for variant in VARIANTS:
        led = ledger_from_doc(
            load_json(os.path.join(args.out, variant.lower(), "ledger.json"))
        )
        lines.append(
            f"{variant},{mean_adaptation_accuracy(led)!r},{mean_forgetting(led)!r}"
        )
    atomic_write_text(os.path.join(args.out, "ablation.csv"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _gradcheck_trial(variant: str, seed: int, trial: int):
    """One random end-to-end configuration: views -> forward -> loss.

    Returns (evaluator, arrays) for grad_check, or None when the drawn
    confidences sit too close to a threshold for finite differences.
    """
    rng = rng_from(seed, "gradcheck", variant, trial)
    k = int(rng.integers(2, 6))
    n = int(rng.integers(2, 9))
    d_in = int(rng.integers(3, 7))
    h1, h2 = int(rng.integers(4, 9)), int(rng.integers(4, 9))
    d_feat = int(rng.integers(3, 7))
    alpha = float(rng.uniform(0.0, 10.0))
    temperature = float(rng.uniform(0.5, 4.0))
    taus = ThresholdSchedule((0.1, 0.5))

    theta = init_extractor(
        (d_in, h1, h2, d_feat), activation="tanh",
        seed=mix64(seed, "gradcheck_theta", variant, trial),
    )
    teacher = init_extractor(
        (d_in, h1, h2, d_feat), activation="tanh",
        seed=mix64(seed, "gradcheck_teacher", variant, trial),
    )
    phi = init_classifier(
        d_feat, k, seed=mix64(seed, "gradcheck_phi", variant, trial)
    )
    X = rng.normal(size=(n, d_in))
    labels = rng.integers(0, k, size=n)
    weak_pol = AugmentPolicy(kind="weak", noise_sigma=0.02, scale_low=0.97,
                             scale_high=1.03, mask_fraction=0.0, shift_bound=0.0)
    strong_pol = AugmentPolicy(kind="strong", noise_sigma=0.1, scale_low=0.9,
                               scale_high=1.1, mask_fraction=0.1, shift_bound=0.1)
    weak = np.stack(
        [apply_policy(X[i], weak_pol, mix64(seed, "gc_w", variant, trial, i))
         for i in range(n)]
    )
    strong = np.stack(
        [apply_policy(X[i], strong_pol, mix64(seed, "gc_s", variant, trial, i))
         for i in range(n)]
    )
    teacher_logits = None
    if variant != "CLS":
        t_feats, _ = forward(teacher, weak)
        teacher_logits = classifier_logits(phi, t_feats)

    def evaluator():
        s_logits, _, s_trace = model_forward(theta, phi, strong)
        w_logits, _, w_trace = model_forward(theta, phi, weak)
        br, grads = combined_loss(
            variant, alpha, temperature, s_logits, w_logits,
            teacher_logits, labels, taus,
        )
        g_s = backward_through_head(theta, phi, s_trace, grads["strong"])
        g_w = backward_through_head(theta, phi, w_trace, grads["weak"])
        return br.total, [a + b for a, b in zip(g_s, g_w)]

    # reject draws whose confidences graze a threshold (non-differentiable)
    s_logits, _, _ = model_forward(theta, phi, strong)
    w_logits, _, _ = model_forward(theta, phi, weak)
    for logits in (s_logits, w_logits):
        conf = softmax(logits).max(axis=1)
        for tau in taus.taus:
            if np.any(np.abs(conf - tau) < THRESHOLD_GAP):
                return None
    return evaluator, extractor_arrays(theta)


def run_gradcheck(seed: int, trials: int, inject_sign_flip: bool = False):
    """Check every variant over ~trials random configs total.

    Returns (ok, worst) where worst is a dict describing the largest
    relative error seen.
    """
    if trials < 1:
        raise ConfigError(f"--trials must be >= 1, got {trials}")
    per_variant = max(1, -(-trials // len(VARIANTS)))
    worst = {"rel_err": -1.0, "variant": None}
    checked = 0
    for variant in VARIANTS:
        done = 0
        trial = 0
        while done < per_variant:
            built = _gradcheck_trial(variant, seed, trial)
            trial += 1
            if built is None:
                continue
            evaluator, arrays = built
            if inject_sign_flip:
                inner = evaluator

                def evaluator(_inner=inner):
                    loss, grads = _inner()
                    grads = [g.copy() for g in grads]
                    grads[0] = -grads[0]
                    return loss, grads

            report = grad_check(
                evaluator, arrays, eps=1e-5, max_coords=50,
                seed=mix64(seed, "gc_coords", variant, trial),
            )
            done += 1
            checked += 1
            if report.max_rel_err > worst["rel_err"]:
                worst = {
                    "rel_err": report.max_rel_err,
                    "variant": variant,
                    "array": report.worst_array,
                    "flat_index": report.worst_flat_index,
                    "analytic": report.worst_analytic,
                    "numeric": report.worst_numeric,
                }
    return worst["rel_err"] < GRADCHECK_TOL, worst, checked


def cmd_gradcheck(args) -> int:
    ok, worst, checked = run_gradcheck(
        args.seed if args.seed is not None else 0,
        args.trials,
        inject_sign_flip=args.inject_sign_flip,
    )
    print(
        f"gradcheck: {checked} configurations, worst rel err "
        f"{worst['rel_err']:.3e} (variant {worst['variant']}, array "
        f"{worst['array']}, flat index {worst['flat_index']}, analytic "
        f"{worst['analytic']:.6e}, numeric {worst['numeric']:.6e})"
    )
    if not ok:
        print(
            f"gradcheck FAILED: rel err {worst['rel_err']:.3e} >= {GRADCHECK_TOL}"
            f" in variant {worst['variant']}",
            file=sys.stderr,
        )
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_report(args) -> int:
    path = os.path.join(args.out, "ledger.json")
    ledger = ledger_from_doc(load_json(path))
    print(f"variant {ledger.variant}, seed {ledger.seed}")
    for s in ledger.steps:
        accs = "  ".join(f"{d}={v:.4f}" for d, v in sorted(s.seen_accuracies.items()))
        print(f"  {s.step:>2}  {s.domain_id}:{s.half}  {accs}")
    print(f"mean adaptation accuracy: {mean_adaptation_accuracy(ledger):.4f}")
    if len(ledger.steps) >= 2:
        print(f"mean forgetting: {mean_forgetting(ledger):+.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftlab",
        description="continual adaptation over drifting domains, desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=True, resume=False):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        if variant:
            p.add_argument("--variant", default=None, help="override loss variant")
        if resume:
            p.add_argument("--resume", default=None, help="run checkpoint to continue")
        p.add_argument("--threads", type=int, default=None,
                       help="evaluation threads (default: DRIFTLAB_THREADS or 1)")
        p.add_argument("--out", default="driftlab_out", help="output directory")

    common(sub.add_parser("pretrain", help="train the frozen source model"))
    common(sub.add_parser("run", help="adapt through the domain sequence"),
           resume=True)
    common(sub.add_parser("ablate", help="run all loss variants and tabulate"),
           variant=False)
    g = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--trials", type=int, default=100,
                   help="total random configurations (spread over variants)")
    g.add_argument("--inject-sign-flip", action="store_true",
                   help=argparse.SUPPRESS)
    r = sub.add_parser("report", help="summarize an emitted ledger")
    r.add_argument("--out", default="driftlab_out",
                   help="directory holding ledger.json")
    return parser


COMMANDS = {
    "pretrain": cmd_pretrain,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"driftlab: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RefinementError as e:
        print(f"driftlab: refinement error: {e}", file=sys.stderr)
        return EXIT_REFINE
    except NumericError as e:
        print(f"driftlab: numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestError, OSError) as e:
        print(f"driftlab: i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except DriftlabError as e:
        print(f"driftlab: error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
