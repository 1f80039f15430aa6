"""Adaptation objectives: attentive masked CE, softened distillation, combos.

The classification term weights each sample's cross-entropy by how many
confidence thresholds its prediction clears, so shaky pseudo labels are
soft-muted instead of hard-dropped. The distillation term pulls the student
toward a frozen teacher through temperature-softened KL. Variants wire
these two terms to weak or strong views per an ablation table.

Every loss returns (scalar, d(loss)/d(logits)); gradients are exact for
softmax-produced probability inputs and are finite-difference checked in
the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .netcore import softmax
from .pseudolabel import PseudoLabelSet

LOG_FLOOR = 1e-30  # keeps log finite on degenerate probability rows

VARIANTS = (
    "ACLS_ADIS",
    "ACLS_DIS",
    "CLS_DIS",
    "CLS",
    "ACLS_ADIS_M1",
    "ACLS_DIS_A10",
    "ACLS_ADISPRIME",
)


@dataclass(frozen=True)
class ThresholdSchedule:
    """Strictly increasing confidence thresholds in [0, 1)."""

    taus: tuple[float, ...] = (0.1, 0.5)

    def __post_init__(self):
        if len(self.taus) == 0:
            raise ConfigError("need at least one threshold")
        if any(t < 0.0 or t >= 1.0 for t in self.taus):
            raise ConfigError(f"thresholds must lie in [0, 1), got {self.taus}")
        if any(b <= a for a, b in zip(self.taus, self.taus[1:])):
            raise ConfigError(f"thresholds must be strictly increasing, got {self.taus}")

    @property
    def m(self) -> int:
        return len(self.taus)


@dataclass
class LossBreakdown:
    l_acls: float
    l_adis: float
    total: float
    pass_counts: list[int] = field(default_factory=list)
    alpha: float = 0.0
    temperature: float = 1.0
    variant: str = "ACLS_ADIS"


def attentive_ce(
    student_probs: np.ndarray,
    pseudo_labels: PseudoLabelSet | np.ndarray,
    confidences: np.ndarray,
    taus: ThresholdSchedule,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Confidence-weighted cross-entropy against pseudo labels.

    Sample weight w_i counts thresholds passed with STRICT inequality
    (conf == tau does not pass). Returns (loss, dLogits, pass_counts) with
    loss = (1/n) sum_i w_i * CE_i and dLogits_i = (w_i/n)(p_i - onehot_i),
    the exact gradient when probs came from a temperature-1 softmax.
    """
    probs = np.asarray(student_probs, dtype=np.float64)
    labels = pseudo_labels.labels if isinstance(pseudo_labels, PseudoLabelSet) else pseudo_labels
    labels = np.asarray(labels)
    conf = np.asarray(confidences, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError(f"expected (n, k) probabilities, got {probs.shape}")
    n, k = probs.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if conf.shape != (n,):
        raise ShapeError(f"expected {n} confidences, got shape {conf.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ConfigError(f"labels must lie in [0, {k}), got range "
                          f"[{labels.min()}, {labels.max()}]")

    tau_arr = np.asarray(taus.taus)
    passes = conf[:, None] > tau_arr[None, :]  # strict
    weights = passes.sum(axis=1).astype(np.float64)
    pass_counts = passes.sum(axis=0).astype(np.int64)

    picked = probs[np.arange(n), labels]
    ce = -np.log(np.maximum(picked, LOG_FLOOR))
    loss = float(np.sum(weights * ce) / n)

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits *= (weights / n)[:, None]
    return loss, d_logits, pass_counts


def kl_distill(
    teacher_logits: np.ndarray,
    student_logits: np.ndarray,
    temperature: float = 2.0,
) -> tuple[float, np.ndarray]:
    """Mean KL(softened teacher || softened student); teacher is constant.

    dStudent = (1/(n*T)) (q - p) with p the teacher's and q the student's
    softened rows. No extra T^2 rescale is applied; the combined-loss
    trade-off weight absorbs overall scale.
    """
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise ShapeError(f"logit shapes differ: {t.shape} vs {s.shape}")
    n = t.shape[0]
    p = softmax(t, temperature)
    q = softmax(s, temperature)
    ratio = np.log(np.maximum(p, LOG_FLOOR)) - np.log(np.maximum(q, LOG_FLOOR))
    loss = float(np.sum(p * ratio) / n)
    d_student = (q - p) / (n * temperature)
    return loss, d_student


def _needs_teacher(variant: str) -> bool:
    return variant != "CLS"


def combined_loss(
    variant: str,
    alpha: float,
    temperature: float,
    strong_logits: np.ndarray,
    weak_logits: np.ndarray,
    teacher_logits: np.ndarray | None,
    pseudo_labels: PseudoLabelSet | np.ndarray,
    taus: ThresholdSchedule,
) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    """Classification + alpha * distillation, wired per ablation variant.

    Rows differ in three switches: which view feeds the classification term
    (and its confidences), which view the distillation student uses, and
    forced overrides of alpha or the threshold schedule:

      ACLS_ADIS      cls strong, distill strong (default)
      ACLS_DIS       cls strong, distill weak
      CLS_DIS        cls weak (unmasked), distill weak
      CLS            cls weak (unmasked) only, alpha forced 0
      ACLS_ADIS_M1   as ACLS_ADIS with taus forced (0.0,)
      ACLS_DIS_A10   as ACLS_DIS with alpha forced 10
      ACLS_ADISPRIME as ACLS_ADIS; caller passes the previous-domain model
                     as teacher instead of the source model

    Confidence always comes from the same view as the classification term.
    Returned grads dict has one entry per view name; unused views get zero
    arrays of matching shape.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown loss variant {variant!r}, expected one of {VARIANTS}")
    strong = np.asarray(strong_logits, dtype=np.float64)
    weak = np.asarray(weak_logits, dtype=np.float64)
    if strong.shape != weak.shape or strong.ndim != 2:
        raise ShapeError(f"view logit shapes differ: {strong.shape} vs {weak.shape}")
    if _needs_teacher(variant):
        if teacher_logits is None:
            raise ConfigError(f"variant {variant} requires teacher logits")
        teacher = np.asarray(teacher_logits, dtype=np.float64)
        if teacher.shape != strong.shape:
            raise ShapeError(
                f"teacher logits {teacher.shape} vs student {strong.shape}"
            )
    else:
        teacher = None

    if variant in ("CLS_DIS", "CLS", "ACLS_ADIS_M1"):
        taus = ThresholdSchedule((0.0,))
    if variant == "CLS":
        alpha = 0.0
    elif variant == "ACLS_DIS_A10":
        alpha = 10.0

    cls_view = "weak" if variant in ("CLS_DIS", "CLS") else "strong"
    dis_view = "weak" if variant in ("ACLS_DIS", "CLS_DIS", "ACLS_DIS_A10") else "strong"

    views = {"strong": strong, "weak": weak}
    cls_logits = views[cls_view]
    cls_probs = softmax(cls_logits, 1.0)
    conf = cls_probs.max(axis=1)
    l_acls, d_cls, pass_counts = attentive_ce(cls_probs, pseudo_labels, conf, taus)

    grads = {"strong": np.zeros_like(strong), "weak": np.zeros_like(weak)}
    grads[cls_view] += d_cls

    if teacher is None:
        l_adis = 0.0
    else:
        l_adis, d_dis = kl_distill(teacher, views[dis_view], temperature)
        grads[dis_view] += alpha * d_dis

    breakdown = LossBreakdown(
        l_acls=l_acls,
        l_adis=l_adis,
        total=l_acls + alpha * l_adis,
        pass_counts=[int(c) for c in pass_counts],
        alpha=alpha,
        temperature=temperature,
        variant=variant,
    )
    return breakdown, grads
