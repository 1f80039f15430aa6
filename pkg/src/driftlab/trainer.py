"""Continual adaptation loop: pretrain, per-domain epochs, sequence runs.

The protocol per adaptation step, each epoch:
  (a) draw the epoch's weak view of every pool sample (seeded, stateless);
  (b) cache the frozen teacher's outputs on those weak views;
  (c) on the regeneration schedule, snapshot the current extractor and
      rebuild pseudo labels from the snapshot's centroids;
  (d) sweep seeded minibatches: strong views, combined loss, backprop
      through the frozen head, momentum SGD on the extractor only;
  (e) decay the lr once at the configured epoch (fresh schedule per domain).

The classifier head and the source extractor never change after
pretraining; their serialized digests are checked at every domain
boundary. All randomness is derived from (seed, structural coordinates),
so a run interrupted at any domain boundary and resumed from its
checkpoint reproduces the uninterrupted ledger byte for byte.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass

import numpy as np

from .augment import apply_policy, interpolate_policy, view_seed
from .config import ExperimentConfig, config_digest, config_to_doc
from .domainstream import (
    DomainData,
    SequenceEntry,
    SequenceSpec,
    _split_halves,
    build_sequence,
    load_external,
)
from .errors import ConfigError, FreezeViolationError, IngestError, NumericError
from .losses import ThresholdSchedule, combined_loss
from .metrics import (
    MetricsLedger,
    StepRecord,
    emit_report,
    evaluate,
    ledger_from_doc,
    ledger_to_doc,
)
from .netcore import (
    ClassifierParams,
    ExtractorParams,
    OptimizerState,
    SGDConfig,
    backward_through_head,
    classifier_arrays,
    classifier_from_doc,
    classifier_grads,
    classifier_to_doc,
    clone_extractor,
    extractor_arrays,
    extractor_from_doc,
    extractor_to_doc,
    forward,
    classifier_logits,
    init_classifier,
    init_extractor,
    init_optimizer,
    model_forward,
    optimizer_from_doc,
    optimizer_to_doc,
    sgd_step,
    softmax,
)
from .persist import dumps_canonical, load_json, save_json, sha256_text
from .pseudolabel import compute_centroids, refine_labels
from .seeding import mix64, rng_from


@dataclass
class AdaptState:
    """Everything the adaptation loop owns between steps."""

    theta: ExtractorParams  # adapting extractor
    phi: ClassifierParams  # frozen head
    theta_source: ExtractorParams  # frozen source extractor
    theta_snapshot: ExtractorParams  # pseudo-label generator
    theta_prev_domain: ExtractorParams  # end of previous step
    opt: OptimizerState
    step_t: int  # completed adaptation steps


def _digest(doc: dict) -> str:
    return sha256_text(dumps_canonical(doc))


def theta_digest(params: ExtractorParams) -> str:
    return _digest(extractor_to_doc(params))


def phi_digest(clf: ClassifierParams) -> str:
    return _digest(classifier_to_doc(clf))


def pretrain_digest(exp: ExperimentConfig) -> str:
    """Digest of the config parts a pretrained checkpoint depends on.

    Excludes the adaptation settings so one pretrain can serve every loss
    variant in an ablation under the same seed.
    """
    doc = config_to_doc(exp)
    return _digest(
        {
            "stream": doc["stream"],
            "net": doc["net"],
            "pretrain": doc["pretrain"],
            "seed": exp.run.seed,
            "manifest": doc["manifest"],
        }
    )


def pretrain_source(exp: ExperimentConfig, source: DomainData) -> dict:
    """Train extractor and head jointly on labeled source data.

    Mean cross-entropy against smoothed targets, momentum SGD over both
    parameter sets. Smoothing keeps the logit gaps finite so that max-prob
    confidence degrades gracefully off the source distribution.
    Returns the pretrain checkpoint document (serializable as-is).
    """
    net, pre = exp.net, exp.pretrain
    seed = exp.run.seed
    X, y = source.train.X, source.train.y
    n, d_in = X.shape
    k = int(y.max()) + 1
    theta = init_extractor(
        (d_in, *net.hidden, net.feature_dim),
        activation=net.activation,
        seed=mix64(seed, "pretrain_theta"),
    )
    phi = init_classifier(net.feature_dim, k, seed=mix64(seed, "pretrain_phi"))
    arrays = extractor_arrays(theta) + classifier_arrays(phi)
    opt = init_optimizer(arrays)
    sgd = SGDConfig(
        lr=pre.lr,
        momentum=pre.momentum,
        weight_decay=pre.weight_decay,
        nesterov=pre.nesterov,
    )
    eps = pre.label_smoothing
    off = eps / (k - 1) if k > 1 else 0.0
    history = []
    for epoch in range(pre.epochs):
        perm = rng_from(seed, "pretrain_batches", epoch).permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, pre.batch_size)):
            idx = perm[start : start + pre.batch_size]
            logits, feats, trace = model_forward(theta, phi, X[idx])
            probs = softmax(logits)
            targets = np.full((idx.size, k), off)
            targets[np.arange(idx.size), y[idx]] = 1.0 - eps
            logp = np.log(np.maximum(probs, 1e-30))
            loss = float(-(targets * logp).sum(axis=1).mean())
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite pretrain loss at epoch {epoch} batch {b}"
                )
            d_logits = (probs - targets) / idx.size
            grads = backward_through_head(theta, phi, trace, d_logits)
            grads += classifier_grads(feats, d_logits)
            sgd_step(arrays, grads, opt, sgd)
            batch_losses.append(loss)
        history.append(float(np.mean(batch_losses)))
    acc = evaluate(theta, phi, source.test, threads=exp.threads)
    return {
        "kind": "pretrain",
        "theta": extractor_to_doc(theta),
        "phi": classifier_to_doc(phi),
        "history": history,
        "source_test_accuracy": acc,
        "pretrain_digest": pretrain_digest(exp),
    }


def _weak_views(X, seed, domain_key, epoch, policy):
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        out[i] = apply_policy(
            X[i], policy, view_seed(seed, domain_key, epoch, i, "weak")
        )
    return out


def adapt_domain(
    state: AdaptState,
    entry: SequenceEntry,
    exp: ExperimentConfig,
    ledger: MetricsLedger,
) -> list[dict]:
    """One adaptation step over entry's train pool; mutates state in place.

    Returns per-epoch loss summaries for the step record. Ledger gains
    domain_start / snapshot / regen / lr_change / domain_end events.
    """
    run = exp.run
    t = state.step_t + 1
    key = f"{entry.domain_id}:{entry.half}"
    X = entry.train.X
    n = X.shape[0]
    taus = ThresholdSchedule(tuple(run.taus))
    strong_policy = interpolate_policy(
        exp.weak_policy, exp.strong_policy, run.strong_magnitude
    )
    sgd = SGDConfig(
        lr=run.lr,
        momentum=run.momentum,
        weight_decay=run.weight_decay,
        nesterov=run.nesterov,
    )
    if run.reset_optimizer_per_domain:
        state.opt = init_optimizer(extractor_arrays(state.theta))
    teacher_theta = (
        state.theta_prev_domain
        if run.variant == "ACLS_ADISPRIME"
        else state.theta_source
    )
    needs_teacher = run.variant != "CLS"
    ledger.add_event(
        "domain_start", t, -1, domain=entry.domain_id, half=entry.half, lr=run.lr
    )

    labels = None
    epoch_summaries = []
    for epoch in range(run.epochs_per_domain):
        lr_e = (
            run.lr
            if epoch < run.lr_decay_epoch
            else run.lr * run.lr_decay_factor
        )
        if epoch == run.lr_decay_epoch:
            ledger.add_event("lr_change", t, epoch, lr=lr_e)
        weak = _weak_views(X, run.seed, key, epoch, exp.weak_policy)
        teacher_logits = None
        if needs_teacher:
            teacher_logits, _, _ = model_forward(teacher_theta, state.phi, weak)
        if epoch % run.regen_period == 0:
            state.theta_snapshot = clone_extractor(state.theta)
            snap = theta_digest(state.theta_snapshot)
            ledger.add_event("snapshot", t, epoch, digest=snap)
            feats, _ = forward(state.theta_snapshot, weak)
            probs = softmax(classifier_logits(state.phi, feats))
            cset = compute_centroids(feats, probs)
            labels = refine_labels(
                feats,
                cset,
                rounds=run.refine_rounds,
                source_epoch=epoch,
                generator=snap,
            )
            ledger.add_event(
                "regen", t, epoch, digest=snap, n_active=cset.n_active
            )

        perm = rng_from(run.seed, "batches", key, epoch).permutation(n)
        sums = {"l_acls": 0.0, "l_adis": 0.0, "total": 0.0}
        pass_counts = None
        n_batches = 0
        for b, start in enumerate(range(0, n, run.batch_size)):
            idx = perm[start : start + run.batch_size]
            strong = np.stack(
                [
                    apply_policy(
                        X[i],
                        strong_policy,
                        view_seed(run.seed, key, epoch, int(i), "strong"),
                    )
                    for i in idx
                ]
            )
            s_logits, _, s_trace = model_forward(state.theta, state.phi, strong)
            w_logits, _, w_trace = model_forward(state.theta, state.phi, weak[idx])
            br, grads = combined_loss(
                run.variant,
                run.alpha,
                run.temperature,
                s_logits,
                w_logits,
                teacher_logits[idx] if needs_teacher else None,
                labels.labels[idx],
                taus,
            )
            if not np.isfinite(br.total):
                raise NumericError(
                    f"non-finite loss at step {t} ({key}) epoch {epoch} batch {b}"
                )
            g_strong = backward_through_head(
                state.theta, state.phi, s_trace, grads["strong"]
            )
            g_weak = backward_through_head(
                state.theta, state.phi, w_trace, grads["weak"]
            )
            grads_theta = [a + c for a, c in zip(g_strong, g_weak)]
            sgd_step(extractor_arrays(state.theta), grads_theta, state.opt, sgd, lr=lr_e)
            sums["l_acls"] += br.l_acls
            sums["l_adis"] += br.l_adis
            sums["total"] += br.total
            if pass_counts is None:
                pass_counts = list(br.pass_counts)
            else:
                pass_counts = [a + c for a, c in zip(pass_counts, br.pass_counts)]
            n_batches += 1
        epoch_summaries.append(
            {
                "epoch": epoch,
                "l_acls": sums["l_acls"] / n_batches,
                "l_adis": sums["l_adis"] / n_batches,
                "total": sums["total"] / n_batches,
                "alpha": run.alpha if run.variant != "CLS" else 0.0,
                "temperature": run.temperature,
                "variant": run.variant,
                "pass_counts": pass_counts,
                "lr": lr_e,
            }
        )

    state.theta_prev_domain = clone_extractor(state.theta)
    state.step_t = t
    ledger.add_event("domain_end", t, run.epochs_per_domain - 1,
                     theta=theta_digest(state.theta))
    return epoch_summaries


def state_to_doc(state: AdaptState) -> dict:
    return {
        "theta": extractor_to_doc(state.theta),
        "phi": classifier_to_doc(state.phi),
        "theta_source": extractor_to_doc(state.theta_source),
        "theta_snapshot": extractor_to_doc(state.theta_snapshot),
        "theta_prev_domain": extractor_to_doc(state.theta_prev_domain),
        "opt": optimizer_to_doc(state.opt),
        "step_t": state.step_t,
    }


def state_from_doc(doc: dict) -> AdaptState:
    return AdaptState(
        theta=extractor_from_doc(doc["theta"]),
        phi=classifier_from_doc(doc["phi"]),
        theta_source=extractor_from_doc(doc["theta_source"]),
        theta_snapshot=extractor_from_doc(doc["theta_snapshot"]),
        theta_prev_domain=extractor_from_doc(doc["theta_prev_domain"]),
        opt=optimizer_from_doc(doc["opt"]),
        step_t=int(doc["step_t"]),
    )


def materialize_sequence(exp: ExperimentConfig) -> SequenceSpec:
    """Synthetic benchmark by default; external CSV domains via manifest."""
    if exp.manifest is None:
        return build_sequence(exp.stream, exp.run.seed)
    domains = load_external(exp.manifest)
    if len(domains) < 3:
        raise IngestError(
            "external mode needs >= 3 domains: the first is the labeled "
            f"source, the rest are targets (got {len(domains)})"
        )
    source, targets = domains[0], domains[1:]
    halves_by_domain = {
        d.domain_id: _split_halves(d.train, exp.stream.halves, exp.run.seed)
        for d in targets
    }
    entries = [
        SequenceEntry(domain_id=d.domain_id, half=h + 1,
                      train=halves_by_domain[d.domain_id][h])
        for h in range(exp.stream.halves)
        for d in targets
    ]
    return SequenceSpec(
        entries=entries,
        domain_tests={d.domain_id: d.test for d in targets},
        source=source,
        domain_order=[d.domain_id for d in targets],
    )


def _checkpoint_doc(exp, state, ledger, freeze, completed) -> dict:
    return {
        "kind": "run",
        "config_digest": ledger.config_digest,
        "state": state_to_doc(state),
        "ledger": ledger_to_doc(ledger),
        "freeze": dict(freeze),
        "completed_steps": completed,
    }


def load_checkpoint(path: str) -> dict:
    doc = load_json(path)
    if not isinstance(doc, dict) or doc.get("kind") not in ("run", "pretrain"):
        raise IngestError(f"{path}: not a driftlab checkpoint")
    return doc


def run_sequence(
    exp: ExperimentConfig,
    out_dir: str | None = None,
    pretrained: dict | None = None,
    resume: dict | None = None,
    progress: bool = False,
) -> MetricsLedger:
    """Drive the full sequence; returns the completed ledger.

    With out_dir set, writes a checkpoint after every step plus final
    ledger.json / ledger.csv, all atomically. `pretrained` short-circuits
    source training with an existing pretrain checkpoint; `resume`
    continues a run checkpoint (the remaining steps reproduce the
    uninterrupted run exactly).
    """
    digest = config_digest(exp)
    seq = materialize_sequence(exp)

    if resume is not None:
        if resume.get("kind") != "run":
            raise ConfigError("resume checkpoint is not a run checkpoint")
        if resume["config_digest"] != digest:
            raise ConfigError(
                "resume checkpoint was produced under a different config "
                f"(digest {resume['config_digest'][:12]} vs {digest[:12]})"
            )
        state = state_from_doc(resume["state"])
        ledger = ledger_from_doc(resume["ledger"])
        freeze = dict(resume["freeze"])
        start = int(resume["completed_steps"])
    else:
        ck = pretrained if pretrained is not None else pretrain_source(exp, seq.source)
        if ck.get("kind") != "pretrain":
            raise ConfigError("pretrained checkpoint is not a pretrain checkpoint")
        if ck["pretrain_digest"] != pretrain_digest(exp):
            raise ConfigError(
                "pretrained checkpoint does not match this config's "
                "stream/net/pretrain settings"
            )
        theta0 = extractor_from_doc(ck["theta"])
        phi = classifier_from_doc(ck["phi"])
        state = AdaptState(
            theta=clone_extractor(theta0),
            phi=phi,
            theta_source=theta0,
            theta_snapshot=clone_extractor(theta0),
            theta_prev_domain=clone_extractor(theta0),
            opt=init_optimizer(extractor_arrays(theta0)),
            step_t=0,
        )
        ledger = MetricsLedger(
            variant=exp.run.variant, seed=exp.run.seed, config_digest=digest
        )
        ledger.add_event(
            "pretrain", 0, -1,
            source_test_accuracy=ck["source_test_accuracy"],
            pretrain_digest=ck["pretrain_digest"],
        )
        freeze = {"phi": phi_digest(phi), "theta_source": theta_digest(theta0)}
        ledger.add_event("freeze_baseline", 0, -1, **freeze)
        start = 0

    for i in range(start, len(seq.entries)):
        entry = seq.entries[i]
        epoch_losses = adapt_domain(state, entry, exp, ledger)
        t = state.step_t
        if phi_digest(state.phi) != freeze["phi"]:
            raise FreezeViolationError(f"classifier head changed by step {t}")
        if theta_digest(state.theta_source) != freeze["theta_source"]:
            raise FreezeViolationError(f"source extractor changed by step {t}")
        ledger.add_event("freeze_check", t, -1, ok=True)

        seen: list[str] = []
        for e in seq.entries[: i + 1]:
            if e.domain_id not in seen:
                seen.append(e.domain_id)
        seen_accs = {
            dom: evaluate(state.theta, state.phi, seq.domain_tests[dom], exp.threads)
            for dom in seen
        }
        extra = {}
        if exp.run.eval_all_domains:
            extra = {
                dom: evaluate(state.theta, state.phi, test, exp.threads)
                for dom, test in seq.domain_tests.items()
                if dom not in seen
            }
        ledger.steps.append(
            StepRecord(
                step=t,
                domain_id=entry.domain_id,
                half=entry.half,
                adapt_accuracy=seen_accs[entry.domain_id],
                seen_accuracies=seen_accs,
                extra_accuracies=extra,
                epoch_losses=epoch_losses,
            )
        )
        if progress:
            accs = " ".join(f"{d}={a:.3f}" for d, a in seen_accs.items())
            print(
                f"[driftlab] step {t}/{len(seq.entries)} "
                f"{entry.domain_id} half {entry.half}: {accs}",
                file=sys.stderr,
            )
        if out_dir is not None:
            save_json(
                os.path.join(out_dir, f"checkpoint_step{t:02d}.json"),
                _checkpoint_doc(exp, state, ledger, freeze, t),
            )

    if out_dir is not None:
        save_json(
            os.path.join(out_dir, "checkpoint_final.json"),
            _checkpoint_doc(exp, state, ledger, freeze, len(seq.entries)),
        )
        emit_report(ledger, os.path.join(out_dir, "ledger.json"), "json")
        emit_report(ledger, os.path.join(out_dir, "ledger.csv"), "csv")
    return ledger
