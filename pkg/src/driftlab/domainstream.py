"""Synthetic shifting-domain benchmark and external dataset ingestion.

A base classification task (Gaussian blobs around well-separated means) is
pushed through per-domain affine-plus-noise transforms to create a stream
of covariate-shifted targets. Each domain's train pool is split into two
equal halves, and the default visitation order cycles all domains' first
halves before any second half, so every domain is revisited once.

Labels ride along for evaluation and source pretraining only; the
adaptation loop never reads them.

External data comes in as CSV (header `label,f0,...,f{d-1}`) listed in a
JSON manifest; emitted CSV round-trips bit-exactly because floats are
written with shortest round-trip repr.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestError, ShapeError
from .seeding import rng_from


@dataclass
class Dataset:
    X: np.ndarray  # (n, d_in)
    y: np.ndarray  # (n,) int, in [0, k)
    split: str  # train | test
    domain_id: str

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise ShapeError(
                f"expected (n, d) X and (n,) y, got {self.X.shape}, {self.y.shape}"
            )
        if self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(
                f"{self.X.shape[0]} rows vs {self.y.shape[0]} labels"
            )
        if self.X.shape[0] == 0:
            raise ConfigError(f"dataset {self.domain_id}/{self.split} is empty")
        if self.split not in ("train", "test"):
            raise ConfigError(f"split must be train or test, got {self.split!r}")

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class DomainData:
    """Train and test splits of one domain."""

    train: Dataset
    test: Dataset
    domain_id: str


@dataclass(frozen=True)
class DomainSpec:
    """Invertible shift: X' = rotate(X * scale) + bias + noise.

    Rotations are (i, j, angle) plane rotations applied in order, so the
    inverse is the reversed list with negated angles.
    """

    rotations: tuple[tuple[int, int, float], ...] = ()
    scale: tuple[float, ...] | float = 1.0
    bias: tuple[float, ...] | float = 0.0
    noise_sigma: float = 0.0
    difficulty: str = "moderate"

    def __post_init__(self):
        scales = self.scale if isinstance(self.scale, tuple) else (self.scale,)
        if any(s <= 0.0 for s in scales):
            raise ConfigError(f"scale factors must be positive, got {self.scale}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        for i, j, _ in self.rotations:
            if i == j or i < 0 or j < 0:
                raise ConfigError(f"bad rotation plane ({i}, {j})")


@dataclass
class SequenceEntry:
    domain_id: str
    half: int  # 1 or 2
    train: Dataset


@dataclass
class SequenceSpec:
    entries: list[SequenceEntry]
    domain_tests: dict[str, Dataset]
    source: DomainData
    domain_order: list[str] = field(default_factory=list)


def _broadcast(value: tuple[float, ...] | float, d: int, name: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        return np.full(d, float(value))
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (d,):
        raise ShapeError(f"{name} has {arr.shape[0]} entries for {d} features")
    return arr


def make_base_task(
    seed: int,
    k: int = 5,
    d_in: int = 16,
    n_per_class: int = 250,
    class_sep: float = 4.0,
    sigma: float = 1.0,
    domain_id: str = "base",
) -> DomainData:
    """Gaussian blobs around class means on a sphere of radius class_sep.

    Means are rejection-sampled until all pairwise distances reach
    class_sep; samples get an 80/20 stratified train/test split by seeded
    shuffle, so class balance is exact in both splits.
    """
    if k < 2 or d_in < 2 or n_per_class < 2 or class_sep <= 0.0:
        raise ConfigError(
            f"need k >= 2, d_in >= 2, n_per_class >= 2, class_sep > 0; "
            f"got k={k} d_in={d_in} n_per_class={n_per_class} sep={class_sep}"
        )
    rng = rng_from(seed, "base_task")
    means: list[np.ndarray] = []
    attempts = 0
    while len(means) < k:
        attempts += 1
        if attempts > 1000 * k:
            raise ConfigError(
                f"cannot place {k} means at pairwise distance >= {class_sep} "
                f"on a radius-{class_sep} sphere in {d_in} dimensions"
            )
        cand = rng.normal(size=d_in)
        cand = cand / np.linalg.norm(cand) * class_sep
        if all(np.linalg.norm(cand - m) >= class_sep for m in means):
            means.append(cand)

    xs, ys = [], []
    for c in range(k):
        xs.append(means[c] + sigma * rng.normal(size=(n_per_class, d_in)))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    X = np.vstack(xs)
    y = np.concatenate(ys)

    n_test_pc = max(1, int(round(0.2 * n_per_class)))
    train_idx, test_idx = [], []
    for c in range(k):
        order = np.flatnonzero(y == c)
        order = order[rng_from(seed, "split", c).permutation(order.size)]
        test_idx.append(order[:n_test_pc])
        train_idx.append(order[n_test_pc:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    return DomainData(
        train=Dataset(X[tr], y[tr], "train", domain_id),
        test=Dataset(X[te], y[te], "test", domain_id),
        domain_id=domain_id,
    )


def _rotate(X: np.ndarray, rotations, inverse: bool = False) -> np.ndarray:
    out = X.copy()
    d = X.shape[1]
    seq = tuple(reversed(rotations)) if inverse else rotations
    for i, j, angle in seq:
        if i >= d or j >= d:
            raise ShapeError(f"rotation plane ({i}, {j}) out of range for d={d}")
        a = -angle if inverse else angle
        c, s = np.cos(a), np.sin(a)
        xi = out[:, i].copy()
        xj = out[:, j].copy()
        out[:, i] = c * xi - s * xj
        out[:, j] = s * xi + c * xj
    return out


def apply_domain_shift(
    ds: Dataset, spec: DomainSpec, seed: int, domain_id: str | None = None
) -> Dataset:
    """X' = rotate(X * scale) + bias + seeded Gaussian noise; labels kept."""
    d = ds.X.shape[1]
    scale = _broadcast(spec.scale, d, "scale")
    bias = _broadcast(spec.bias, d, "bias")
    X = _rotate(ds.X * scale, spec.rotations)
    X = X + bias
    if spec.noise_sigma > 0.0:
        X = X + rng_from(seed, "shift_noise", ds.split).normal(
            0.0, spec.noise_sigma, size=X.shape
        )
    return Dataset(X, ds.y.copy(), ds.split, domain_id or ds.domain_id)


def invert_domain_shift(ds: Dataset, spec: DomainSpec) -> Dataset:
    """Analytic inverse of the noiseless part of apply_domain_shift."""
    d = ds.X.shape[1]
    scale = _broadcast(spec.scale, d, "scale")
    bias = _broadcast(spec.bias, d, "bias")
    X = _rotate(ds.X - bias, spec.rotations, inverse=True) / scale
    return Dataset(X, ds.y.copy(), ds.split, ds.domain_id)


def default_domain_specs(d_in: int = 16) -> dict[str, DomainSpec]:
    """Three targets of increasing difficulty plus the near-identity source.

    `murk` is the hard domain: heavy offset and noise intended to knock a
    source-pretrained model down by tens of points.
    """
    half = d_in // 2
    stretch_scale = tuple(2.1 if i % 2 == 0 else 0.4 for i in range(d_in))
    murk_bias = tuple(1.2 if i < half else -1.2 for i in range(d_in))
    return {
        "base": DomainSpec(
            rotations=((0, 1, 0.05),),
            scale=1.0,
            bias=0.0,
            noise_sigma=0.05,
            difficulty="source",
        ),
        "tilt": DomainSpec(
            rotations=(
                (0, 1, 1.3),
                (2, 3, 1.2),
                (4, 5, 1.1),
                (6, 7, 1.0),
                (8, 9, 0.9),
                (10, 11, 0.8),
                (12, 13, 0.7),
            ),
            scale=1.0,
            bias=0.6,
            noise_sigma=0.7,
            difficulty="moderate",
        ),
        "stretch": DomainSpec(
            rotations=((1, 2, 1.0), (5, 6, 0.9), (9, 10, 0.8), (13, 14, 0.7), (3, 4, 0.6)),
            scale=stretch_scale,
            bias=-0.6,
            noise_sigma=0.8,
            difficulty="moderate",
        ),
        "murk": DomainSpec(
            rotations=((0, 2, 0.9), (1, 3, 0.8), (4, 6, 0.7)),
            scale=0.85,
            bias=murk_bias,
            noise_sigma=1.1,
            difficulty="hard",
        ),
    }


@dataclass
class StreamConfig:
    """Benchmark layout: base task shape plus the target-domain lineup."""

    k: int = 5
    d_in: int = 16
    n_per_class: int = 250
    class_sep: float = 4.0
    sigma: float = 1.0
    domains: tuple[str, ...] = ("tilt", "stretch", "murk")
    specs: dict[str, DomainSpec] = field(default_factory=dict)
    source_domain: str = "base"
    halves: int = 2

    def __post_init__(self):
        if not self.specs:
            self.specs = default_domain_specs(self.d_in)
        if len(self.domains) < 2:
            raise ConfigError("need at least 2 target domains")
        if len(set(self.domains)) != len(self.domains):
            raise ConfigError(f"duplicate domain ids in {self.domains}")
        missing = [d for d in (*self.domains, self.source_domain) if d not in self.specs]
        if missing:
            raise ConfigError(f"no DomainSpec for {missing}")
        if self.halves < 1:
            raise ConfigError(f"halves must be >= 1, got {self.halves}")


def _split_halves(ds: Dataset, halves: int, seed: int) -> list[Dataset]:
    perm = rng_from(seed, "halves", ds.domain_id).permutation(ds.n)
    parts = np.array_split(perm, halves)  # sizes differ by <= 1
    return [
        Dataset(ds.X[p], ds.y[p], "train", ds.domain_id) for p in parts
    ]


def build_sequence(config: StreamConfig, seed: int) -> SequenceSpec:
    """Materialize the benchmark: source domain, shifted targets, halves.

    Entry order is all domains' half 1 in lineup order, then all half 2
    (and so on for more halves), so each domain is revisited after every
    other domain has intervened.
    """
    base = make_base_task(
        seed,
        k=config.k,
        d_in=config.d_in,
        n_per_class=config.n_per_class,
        class_sep=config.class_sep,
        sigma=config.sigma,
    )
    src_spec = config.specs[config.source_domain]
    source = DomainData(
        train=apply_domain_shift(
            base.train, src_spec, seed, domain_id=config.source_domain
        ),
        test=apply_domain_shift(
            base.test, src_spec, seed, domain_id=config.source_domain
        ),
        domain_id=config.source_domain,
    )

    halves_by_domain: dict[str, list[Dataset]] = {}
    domain_tests: dict[str, Dataset] = {}
    for dom in config.domains:
        spec = config.specs[dom]
        shift_seed = rng_from(seed, "domain", dom).integers(0, 2**63)
        train = apply_domain_shift(base.train, spec, shift_seed, domain_id=dom)
        test = apply_domain_shift(base.test, spec, shift_seed, domain_id=dom)
        halves_by_domain[dom] = _split_halves(train, config.halves, seed)
        domain_tests[dom] = test

    entries = [
        SequenceEntry(domain_id=dom, half=h + 1, train=halves_by_domain[dom][h])
        for h in range(config.halves)
        for dom in config.domains
    ]
    return SequenceSpec(
        entries=entries,
        domain_tests=domain_tests,
        source=source,
        domain_order=list(config.domains),
    )


def save_domain_csv(path: str, ds: Dataset) -> None:
    """Emit `label,f0,...` rows with round-trip exact float text."""
    d = ds.X.shape[1]
    header = "label," + ",".join(f"f{i}" for i in range(d))
    lines = [header]
    for i in range(ds.n):
        lines.append(
            f"{int(ds.y[i])}," + ",".join(repr(float(v)) for v in ds.X[i])
        )
    from .persist import atomic_write_text

    atomic_write_text(path, "\n".join(lines) + "\n")


def load_domain_csv(path: str, k: int, d_in: int, split: str, domain_id: str) -> Dataset:
    if not os.path.exists(path):
        raise IngestError(f"{path}: file not found")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise IngestError(f"{path}: empty file")
    expected_header = "label," + ",".join(f"f{i}" for i in range(d_in))
    if lines[0].strip() != expected_header:
        raise IngestError(
            f"{path} line 1: bad header, expected {expected_header!r}"
        )
    xs, ys = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d_in + 1:
            raise IngestError(
                f"{path} line {lineno}: expected {d_in + 1} cells, got {len(cells)}"
            )
        try:
            label = int(cells[0])
        except ValueError:
            raise IngestError(
                f"{path} line {lineno}: label {cells[0]!r} is not an integer"
            ) from None
        if not 0 <= label < k:
            raise IngestError(
                f"{path} line {lineno}: label out of range (got {label}, k={k})"
            )
        try:
            row = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise IngestError(f"{path} line {lineno}: non-numeric cell ({exc})") from None
        xs.append(row)
        ys.append(label)
    if not xs:
        raise IngestError(f"{path}: no data rows")
    return Dataset(
        np.array(xs, dtype=np.float64),
        np.array(ys, dtype=np.int64),
        split,
        domain_id,
    )


def load_external(manifest_path: str) -> list[DomainData]:
    """Load domains per a JSON manifest: {k, d_in, domains: [...]}"""
    from .persist import load_json

    if not os.path.exists(manifest_path):
        raise IngestError(f"{manifest_path}: file not found")
    doc = load_json(manifest_path)
    for key in ("k", "d_in", "domains"):
        if key not in doc:
            raise IngestError(f"{manifest_path}: missing key {key!r}")
    k, d_in = int(doc["k"]), int(doc["d_in"])
    if k < 2 or d_in < 1:
        raise IngestError(f"{manifest_path}: need k >= 2 and d_in >= 1")
    if not isinstance(doc["domains"], list) or not doc["domains"]:
        raise IngestError(f"{manifest_path}: domains must be a nonempty list")
    base_dir = os.path.dirname(os.path.abspath(manifest_path))
    out = []
    for i, entry in enumerate(doc["domains"]):
        for key in ("domain_id", "train_csv", "test_csv"):
            if key not in entry:
                raise IngestError(
                    f"{manifest_path}: domains[{i}] missing key {key!r}"
                )
        dom = str(entry["domain_id"])

        def _resolve(p):
            return p if os.path.isabs(p) else os.path.join(base_dir, p)

        out.append(
            DomainData(
                train=load_domain_csv(
                    _resolve(entry["train_csv"]), k, d_in, "train", dom
                ),
                test=load_domain_csv(
                    _resolve(entry["test_csv"]), k, d_in, "test", dom
                ),
                domain_id=dom,
            )
        )
    ids = [d.domain_id for d in out]
    if len(set(ids)) != len(ids):
        raise IngestError(f"{manifest_path}: duplicate domain ids {ids}")
    return out
