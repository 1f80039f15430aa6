"""Centroid-based pseudo-label refinement.

Labels for an unlabeled target batch are produced in two moves: soft
prediction mass weights a centroid per class, then each sample is
reassigned to its nearest active centroid under cosine distance. Classes
that receive (almost) no probability mass are marked inactive and excluded
from assignment instead of contributing a zero centroid.

Centroid accumulation runs sample by sample in fixed order. That keeps the
reduction order independent of BLAS blocking, so one-hot probability rows
collapse to per-class arithmetic means bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateVectorError,
    EmptyInputError,
    InvalidDistributionError,
    RefinementError,
    ShapeError,
)

# classes below this total probability mass get no centroid
INACTIVE_MASS = 1e-12

# vectors below this norm have no usable direction
DEGENERATE_NORM = 1e-12


@dataclass
class CentroidSet:
    """Per-class feature centroids; inactive rows hold no meaningful value."""

    centroids: np.ndarray  # (k, d_feat)
    active: np.ndarray  # (k,) bool
    mass: np.ndarray  # (k,) total probability mass per class

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())


@dataclass
class PseudoLabelSet:
    """Refined hard labels plus provenance of the model that produced them."""

    labels: np.ndarray  # (n,) int
    source_epoch: int = -1
    generator: str = ""

    def __len__(self) -> int:
        return self.labels.shape[0]


def _check_prob_rows(probs: np.ndarray, tol: float) -> None:
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InvalidDistributionError(
            f"probability row {i} sums to {sums[i]:.12g}, expected 1 within {tol:g}"
        )
    if np.any(probs < 0.0):
        raise InvalidDistributionError("probability entries must be nonnegative")


def compute_centroids(features: np.ndarray, probs: np.ndarray) -> CentroidSet:
    """Soft-weighted class centroids c_k = sum_i p_ik f_i / sum_i p_ik.

    Accumulates sequentially over samples in row order (required for the
    one-hot-reduces-to-class-mean exactness; see module docstring).
    """
    features = np.asarray(features, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if features.ndim != 2 or probs.ndim != 2:
        raise ShapeError(
            f"expected 2-d features and probs, got {features.shape} and {probs.shape}"
        )
    if features.shape[0] == 0:
        raise EmptyInputError("cannot compute centroids from zero samples")
    if features.shape[0] != probs.shape[0]:
        raise ShapeError(
            f"{features.shape[0]} feature rows vs {probs.shape[0]} probability rows"
        )
    _check_prob_rows(probs, tol=1e-9)

    n, d = features.shape
    k = probs.shape[1]
    weighted = np.zeros((k, d))
    mass = np.zeros(k)
    for i in range(n):
        mass += probs[i]
        weighted += probs[i][:, None] * features[i][None, :]
    active = mass >= INACTIVE_MASS
    centroids = np.zeros((k, d))
    if np.any(active):
        centroids[active] = weighted[active] / mass[active][:, None]
    return CentroidSet(centroids=centroids, active=active, mass=mass)


def cosine_distance(u: np.ndarray, v: np.ndarray) -> float:
    """1 - cos(u, v), in [0, 2]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"expected equal-length vectors, got {u.shape} and {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= DEGENERATE_NORM or nv <= DEGENERATE_NORM:
        raise DegenerateVectorError(
            f"cosine distance undefined for near-zero vectors (norms {nu:g}, {nv:g})"
        )
    return 1.0 - float(np.dot(u, v)) / (nu * nv)


def _assign(features: np.ndarray, centroids: CentroidSet) -> np.ndarray:
    active_idx = np.flatnonzero(centroids.active)
    if active_idx.size == 0:
        raise RefinementError("no active centroids to assign against")
    # per-pair scalar distances, not a matmul: keeps the arithmetic identical
    # to cosine_distance so an exhaustive-scan oracle matches label for label
    # even on ulp-level ties (strict < keeps the lowest active class)
    labels = np.empty(features.shape[0], dtype=np.int64)
    for i in range(features.shape[0]):
        best_c, best_d = -1, np.inf
        for c in active_idx:
            d = cosine_distance(features[i], centroids.centroids[c])
            if d < best_d:
                best_c, best_d = int(c), d
        labels[i] = best_c
    return labels


def refine_labels(
    features: np.ndarray,
    centroids: CentroidSet,
    rounds: int = 1,
    source_epoch: int = -1,
    generator: str = "",
) -> PseudoLabelSet:
    """Nearest-active-centroid assignment under cosine distance.

    With rounds > 1, centroids are recomputed from the one-hot assignment
    and assignment repeats, converging toward a cosine k-means refinement.
    Equal distances break toward the lowest class index.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"expected (n, d_feat) features, got {features.shape}")
    if features.shape[0] == 0:
        raise EmptyInputError("cannot refine labels for zero samples")
    if int(rounds) < 1:
        raise RefinementError(f"rounds must be >= 1, got {rounds}")
    k = centroids.n_classes
    labels = _assign(features, centroids)
    for _ in range(int(rounds) - 1):
        onehot = np.zeros((features.shape[0], k))
        onehot[np.arange(features.shape[0]), labels] = 1.0
        labels = _assign(features, compute_centroids(features, onehot))
    return PseudoLabelSet(
        labels=labels.astype(np.int64), source_epoch=source_epoch, generator=generator
    )


def confidence(prob_row: np.ndarray) -> float:
    """Max entry of one probability row."""
    prob_row = np.asarray(prob_row, dtype=np.float64)
    if prob_row.ndim != 1:
        raise ShapeError(f"expected a single probability row, got {prob_row.shape}")
    s = float(prob_row.sum())
    if abs(s - 1.0) > 1e-6 or np.any(prob_row < 0.0):
        raise InvalidDistributionError(
            f"not a probability vector (sum {s:.9g}, min {prob_row.min():.3g})"
        )
    return float(prob_row.max())


def confidence_vector(probs: np.ndarray) -> np.ndarray:
    """Row-wise max of a probability matrix, validated like `confidence`."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ShapeError(f"expected (n, k) probabilities, got {probs.shape}")
    _check_prob_rows(probs, tol=1e-6)
    return probs.max(axis=1)
