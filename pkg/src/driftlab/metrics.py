"""Accuracy evaluation, adaptation/forgetting metrics, report emission.

The ledger is the run's complete record: per adaptation step it stores the
accuracy of the just-adapted model on every domain seen so far, the
accuracy on the step's own domain (a_t), per-epoch loss summaries, and a
flat event log (snapshots, regenerations, lr changes, freeze checks).

Two summary numbers come out of it:
  mean adaptation accuracy = mean over steps of a_t
  mean forgetting          = mean over steps t >= 2 of the mean accuracy
                             drop, between model_{t-1} and model_t, on
                             domains seen strictly before step t
Negative forgetting means the run kept improving on old domains.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domainstream import Dataset
from .errors import EmptyInputError, LedgerError
from .netcore import ClassifierParams, ExtractorParams, model_forward
from .persist import atomic_write_text, save_json


@dataclass
class StepRecord:
    step: int  # 1-based
    domain_id: str
    half: int
    adapt_accuracy: float  # a_t: accuracy on this step's domain, post-adapt
    seen_accuracies: dict[str, float]
    extra_accuracies: dict[str, float] = field(default_factory=dict)
    epoch_losses: list[dict] = field(default_factory=list)


@dataclass
class MetricsLedger:
    variant: str
    seed: int
    config_digest: str
    steps: list[StepRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def add_event(self, type_: str, step: int, epoch: int, **info) -> None:
        self.events.append(
            {"type": type_, "step": step, "epoch": epoch, "info": info}
        )

    def events_of(self, type_: str) -> list[dict]:
        return [e for e in self.events if e["type"] == type_]


def _count_correct(theta, phi, X, y) -> int:
    logits, _, _ = model_forward(theta, phi, X)
    # np.argmax takes the first maximum: ties predict the lowest index
    preds = np.argmax(logits, axis=1)
    return int((preds == y).sum())


def evaluate(
    theta: ExtractorParams,
    phi: ClassifierParams,
    testset: Dataset,
    threads: int = 1,
) -> float:
    """Top-1 accuracy with the identity transform (no augmentation).

    With threads > 1 the test set is chunked and per-chunk correct counts
    (integers) are summed, so the result is independent of thread count
    and chunk order.
    """
    if testset.n == 0:
        raise EmptyInputError("cannot evaluate on an empty test set")
    if threads <= 1 or testset.n < 2 * threads:
        return _count_correct(theta, phi, testset.X, testset.y) / testset.n
    chunks = np.array_split(np.arange(testset.n), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        counts = list(
            pool.map(
                lambda c: _count_correct(theta, phi, testset.X[c], testset.y[c]),
                chunks,
            )
        )
    return int(np.sum(counts)) / testset.n


def mean_adaptation_accuracy(ledger: MetricsLedger) -> float:
    if not ledger.steps:
        raise LedgerError("ledger has no adaptation steps")
    return float(np.mean([s.adapt_accuracy for s in ledger.steps]))


def seen_before(ledger: MetricsLedger, t: int) -> list[str]:
    """Domain ids adapted at steps strictly before t, in first-seen order."""
    seen: list[str] = []
    for s in ledger.steps:
        if s.step >= t:
            break
        if s.domain_id not in seen:
            seen.append(s.domain_id)
    return seen


def mean_forgetting(ledger: MetricsLedger) -> float:
    """Mean accuracy drop on previously seen domains across transitions."""
    if len(ledger.steps) < 2:
        raise LedgerError(
            f"mean forgetting needs >= 2 steps, ledger has {len(ledger.steps)}"
        )
    by_step = {s.step: s for s in ledger.steps}
    per_transition = []
    for t in sorted(by_step)[1:]:
        prev, cur = by_step[t - 1], by_step[t]
        drops = []
        for dom in seen_before(ledger, t):
            if dom not in prev.seen_accuracies or dom not in cur.seen_accuracies:
                raise LedgerError(
                    f"step {t}: missing accuracy for seen domain {dom!r}"
                )
            drops.append(prev.seen_accuracies[dom] - cur.seen_accuracies[dom])
        per_transition.append(float(np.mean(drops)))
    return float(np.mean(per_transition))


def step_to_doc(s: StepRecord) -> dict:
    return {
        "step": s.step,
        "domain_id": s.domain_id,
        "half": s.half,
        "adapt_accuracy": s.adapt_accuracy,
        "seen_accuracies": dict(s.seen_accuracies),
        "extra_accuracies": dict(s.extra_accuracies),
        "epoch_losses": [dict(e) for e in s.epoch_losses],
    }


def ledger_to_doc(ledger: MetricsLedger) -> dict:
    return {
        "variant": ledger.variant,
        "seed": ledger.seed,
        "config_digest": ledger.config_digest,
        "steps": [step_to_doc(s) for s in ledger.steps],
        "events": [dict(e) for e in ledger.events],
    }


def ledger_from_doc(doc: dict) -> MetricsLedger:
    try:
        steps = [
            StepRecord(
                step=int(s["step"]),
                domain_id=s["domain_id"],
                half=int(s["half"]),
                adapt_accuracy=float(s["adapt_accuracy"]),
                seen_accuracies={k: float(v) for k, v in s["seen_accuracies"].items()},
                extra_accuracies={
                    k: float(v) for k, v in s.get("extra_accuracies", {}).items()
                },
                epoch_losses=[dict(e) for e in s.get("epoch_losses", [])],
            )
            for s in doc["steps"]
        ]
        return MetricsLedger(
            variant=doc["variant"],
            seed=int(doc["seed"]),
            config_digest=doc["config_digest"],
            steps=steps,
            events=[dict(e) for e in doc["events"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise LedgerError(f"malformed ledger document: {exc}") from exc


def emit_report(ledger: MetricsLedger, path: str, format: str = "csv") -> None:
    """Write the ledger as CSV (accuracy table + summaries) or full JSON.

    CSV floats use repr so a reparse reproduces the exact values.
    """
    if format == "json":
        save_json(path, ledger_to_doc(ledger))
        return
    if format != "csv":
        raise LedgerError(f"unknown report format {format!r}")
    lines = ["step,domain,metric,value"]
    for s in sorted(ledger.steps, key=lambda r: r.step):
        for dom in sorted(s.seen_accuracies):
            lines.append(f"{s.step},{dom},accuracy,{s.seen_accuracies[dom]!r}")
        for dom in sorted(s.extra_accuracies):
            lines.append(
                f"{s.step},{dom},curve_accuracy,{s.extra_accuracies[dom]!r}"
            )
        lines.append(f"{s.step},{s.domain_id},adapt_accuracy,{s.adapt_accuracy!r}")
    if ledger.steps:
        lines.append(
            f"summary,,mean_adaptation_accuracy,{mean_adaptation_accuracy(ledger)!r}"
        )
    if len(ledger.steps) >= 2:
        lines.append(f"summary,,mean_forgetting,{mean_forgetting(ledger)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def parse_report_csv(path: str) -> dict:
    """Reparse an emitted CSV into plain tables (the round-trip oracle)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "step,domain,metric,value":
        raise LedgerError(f"{path}: not a ledger CSV")
    accuracy: dict[tuple[int, str], float] = {}
    curve: dict[tuple[int, str], float] = {}
    adapt: dict[int, tuple[str, float]] = {}
    summary: dict[str, float] = {}
    for line in lines[1:]:
        step_s, dom, metric, value = line.split(",")
        if step_s == "summary":
            summary[metric] = float(value)
            continue
        step = int(step_s)
        if metric == "accuracy":
            accuracy[(step, dom)] = float(value)
        elif metric == "curve_accuracy":
            curve[(step, dom)] = float(value)
        elif metric == "adapt_accuracy":
            adapt[step] = (dom, float(value))
        else:
            raise LedgerError(f"{path}: unknown metric {metric!r}")
    return {
        "accuracy": accuracy,
        "curve_accuracy": curve,
        "adapt_accuracy": adapt,
        "summary": summary,
    }
