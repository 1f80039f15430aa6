"""Experiment configuration: dataclasses, JSON codec, schema validation.

A single JSON file drives every run. Missing sections fall back to the
defaults below (which carry the standard hyperparameters: trade-off 5,
distillation temperature 2, thresholds (0.1, 0.5), 10 epochs per domain,
lr 0.001 decayed x0.1 at epoch 5, label regeneration every 5 epochs);
unknown keys are rejected by a shipped JSON schema so typos fail loudly
instead of silently running the defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import jsonschema

from .augment import AugmentPolicy, default_strong_policy, default_weak_policy
from .domainstream import DomainSpec, StreamConfig, default_domain_specs
from .errors import ConfigError, IngestError
from .losses import VARIANTS, ThresholdSchedule
from .netcore import ACTIVATIONS
from .persist import dumps_canonical, sha256_text


@dataclass
class NetConfig:
    hidden: tuple[int, ...] = (32, 24)
    feature_dim: int = 16
    activation: str = "tanh"


@dataclass
class PretrainConfig:
    epochs: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0001
    nesterov: bool = True
    batch_size: int = 64
    # smoothing keeps source logits finite, so max-prob confidence stays
    # informative on shifted domains instead of saturating at 1
    label_smoothing: float = 0.1


@dataclass
class RunConfig:
    variant: str = "ACLS_ADIS"
    alpha: float = 5.0
    temperature: float = 2.0
    taus: tuple[float, ...] = (0.1, 0.5)
    epochs_per_domain: int = 10
    lr: float = 0.001
    lr_decay_epoch: int = 5
    lr_decay_factor: float = 0.1
    regen_period: int = 5
    refine_rounds: int = 1
    batch_size: int = 16
    momentum: float = 0.9
    weight_decay: float = 0.0001
    nesterov: bool = True
    strong_magnitude: float = 1.0
    reset_optimizer_per_domain: bool = True
    eval_all_domains: bool = False
    seed: int = 0


@dataclass
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    net: NetConfig = field(default_factory=NetConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    run: RunConfig = field(default_factory=RunConfig)
    weak_policy: AugmentPolicy = field(default_factory=default_weak_policy)
    strong_policy: AugmentPolicy = field(default_factory=default_strong_policy)
    manifest: str | None = None
    threads: int = 1


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def validate_config(exp: ExperimentConfig) -> None:
    """Semantic checks beyond the JSON schema; names the offending field."""
    r = exp.run
    if r.variant not in VARIANTS:
        raise ConfigError(f"run.variant: unknown variant {r.variant!r}")
    if r.alpha < 0.0:
        raise ConfigError(f"run.alpha: must be >= 0, got {r.alpha}")
    if r.temperature <= 0.0:
        raise ConfigError(f"run.temperature: must be > 0, got {r.temperature}")
    try:
        ThresholdSchedule(tuple(r.taus))
    except ConfigError as exc:
        raise ConfigError(f"run.taus: {exc}") from None
    if r.epochs_per_domain < 1:
        raise ConfigError(
            f"run.epochs_per_domain: must be >= 1, got {r.epochs_per_domain}"
        )
    if r.lr < 0.0:
        raise ConfigError(f"run.lr: must be >= 0, got {r.lr}")
    if r.lr_decay_epoch < 0 or r.lr_decay_factor <= 0.0:
        raise ConfigError("run.lr_decay_epoch/lr_decay_factor: bad schedule")
    if r.regen_period < 1:
        raise ConfigError(f"run.regen_period: must be >= 1, got {r.regen_period}")
    if r.refine_rounds < 1:
        raise ConfigError(f"run.refine_rounds: must be >= 1, got {r.refine_rounds}")
    if r.batch_size < 1:
        raise ConfigError(f"run.batch_size: must be >= 1, got {r.batch_size}")
    if not 0.0 <= r.strong_magnitude <= 1.0:
        raise ConfigError(
            f"run.strong_magnitude: must be in [0, 1], got {r.strong_magnitude}"
        )
    if not 0.0 <= r.momentum < 1.0:
        raise ConfigError(f"run.momentum: must be in [0, 1), got {r.momentum}")
    if r.weight_decay < 0.0:
        raise ConfigError(f"run.weight_decay: must be >= 0, got {r.weight_decay}")
    if r.seed < 0:
        raise ConfigError(f"run.seed: must be >= 0, got {r.seed}")
    p = exp.pretrain
    if p.epochs < 1 or p.batch_size < 1 or p.lr <= 0.0:
        raise ConfigError("pretrain: epochs/batch_size must be >= 1 and lr > 0")
    if not 0.0 <= p.label_smoothing < 1.0:
        raise ConfigError(
            f"pretrain.label_smoothing: must be in [0, 1), got {p.label_smoothing}"
        )
    n = exp.net
    if n.feature_dim < 1 or any(h < 1 for h in n.hidden):
        raise ConfigError("net: hidden widths and feature_dim must be >= 1")
    if n.activation not in ACTIVATIONS:
        raise ConfigError(f"net.activation: unknown activation {n.activation!r}")
    if exp.threads < 1:
        raise ConfigError(f"threads: must be >= 1, got {exp.threads}")
    # StreamConfig and policies validate themselves in __post_init__


def _spec_to_doc(spec: DomainSpec) -> dict:
    def seq(v):
        return list(v) if isinstance(v, tuple) else v

    return {
        "rotations": [list(r) for r in spec.rotations],
        "scale": seq(spec.scale),
        "bias": seq(spec.bias),
        "noise_sigma": spec.noise_sigma,
        "difficulty": spec.difficulty,
    }


def _spec_from_doc(doc: dict) -> DomainSpec:
    def seq(v):
        return tuple(float(x) for x in v) if isinstance(v, list) else float(v)

    return DomainSpec(
        rotations=tuple((int(i), int(j), float(a)) for i, j, a in doc["rotations"]),
        scale=seq(doc["scale"]),
        bias=seq(doc["bias"]),
        noise_sigma=float(doc["noise_sigma"]),
        difficulty=str(doc["difficulty"]),
    )


def _policy_to_doc(p: AugmentPolicy) -> dict:
    return asdict(p)


def _policy_from_doc(doc: dict) -> AugmentPolicy:
    return AugmentPolicy(**doc)


def config_to_doc(exp: ExperimentConfig) -> dict:
    s = exp.stream
    return {
        "stream": {
            "k": s.k,
            "d_in": s.d_in,
            "n_per_class": s.n_per_class,
            "class_sep": s.class_sep,
            "sigma": s.sigma,
            "domains": list(s.domains),
            "specs": {name: _spec_to_doc(sp) for name, sp in sorted(s.specs.items())},
            "source_domain": s.source_domain,
            "halves": s.halves,
        },
        "net": {
            "hidden": list(exp.net.hidden),
            "feature_dim": exp.net.feature_dim,
            "activation": exp.net.activation,
        },
        "pretrain": asdict(exp.pretrain),
        "run": {**asdict(exp.run), "taus": list(exp.run.taus)},
        "weak_policy": _policy_to_doc(exp.weak_policy),
        "strong_policy": _policy_to_doc(exp.strong_policy),
        "manifest": exp.manifest,
        "threads": exp.threads,
    }


_schema_cache: dict[str, dict] = {}


def load_schema(name: str) -> dict:
    if name not in _schema_cache:
        text = (
            resources.files("driftlab").joinpath("schemas", f"{name}.schema.json")
        ).read_text(encoding="utf-8")
        _schema_cache[name] = json.loads(text)
    return _schema_cache[name]


def validate_doc(doc: dict, schema_name: str) -> None:
    schema = load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}")


def config_from_doc(doc: dict) -> ExperimentConfig:
    """Overlay a (possibly partial) validated document onto the defaults."""
    validate_doc(doc, "config")
    exp = default_config()

    if "stream" in doc:
        s = doc["stream"]
        base = exp.stream
        specs = (
            {name: _spec_from_doc(sp) for name, sp in s["specs"].items()}
            if "specs" in s
            else default_domain_specs(int(s.get("d_in", base.d_in)))
        )
        stream = StreamConfig(
            k=int(s.get("k", base.k)),
            d_in=int(s.get("d_in", base.d_in)),
            n_per_class=int(s.get("n_per_class", base.n_per_class)),
            class_sep=float(s.get("class_sep", base.class_sep)),
            sigma=float(s.get("sigma", base.sigma)),
            domains=tuple(s.get("domains", base.domains)),
            specs=specs,
            source_domain=str(s.get("source_domain", base.source_domain)),
            halves=int(s.get("halves", base.halves)),
        )
        exp = replace(exp, stream=stream)
    if "net" in doc:
        n = doc["net"]
        exp = replace(
            exp,
            net=NetConfig(
                hidden=tuple(int(h) for h in n.get("hidden", exp.net.hidden)),
                feature_dim=int(n.get("feature_dim", exp.net.feature_dim)),
                activation=str(n.get("activation", exp.net.activation)),
            ),
        )
    if "pretrain" in doc:
        exp = replace(exp, pretrain=replace(exp.pretrain, **doc["pretrain"]))
    if "run" in doc:
        r = dict(doc["run"])
        if "taus" in r:
            r["taus"] = tuple(float(t) for t in r["taus"])
        exp = replace(exp, run=replace(exp.run, **r))
    if "weak_policy" in doc:
        exp = replace(exp, weak_policy=_policy_from_doc(doc["weak_policy"]))
    if "strong_policy" in doc:
        exp = replace(exp, strong_policy=_policy_from_doc(doc["strong_policy"]))
    if "manifest" in doc:
        exp = replace(exp, manifest=doc["manifest"])
    if "threads" in doc:
        exp = replace(exp, threads=int(doc["threads"]))

    validate_config(exp)
    return exp


def config_digest(exp: ExperimentConfig) -> str:
    doc = config_to_doc(exp)
    # thread count changes evaluation scheduling, never results, so it must
    # not invalidate checkpoints written under a different setting
    doc.pop("threads", None)
    return sha256_text(dumps_canonical(doc))


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    except OSError as exc:
        raise IngestError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return config_from_doc(doc)


def save_config(path: str, exp: ExperimentConfig) -> None:
    from .persist import atomic_write_text

    atomic_write_text(path, json.dumps(config_to_doc(exp), indent=2) + "\n")
