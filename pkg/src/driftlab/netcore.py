"""Feature extractor, linear classifier head, and hand-rolled autodiff.

The model is a small fully connected extractor (activation on every layer
except the last, which stays linear so features are unbounded) feeding a
single linear classification head. During adaptation the head is frozen and
only extractor parameters receive gradients; during source pretraining both
are trained.

Everything is float64 numpy. Gradients are derived by hand and validated
against central finite differences (`grad_check`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .persist import decode_array, encode_array
from .seeding import rng_from


def _dtanh(pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    return 1.0 - post * post


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _dsoftplus(pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    # sigmoid via tanh, stable for large |pre|
    return 0.5 * (1.0 + np.tanh(0.5 * pre))


ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, _dtanh),
    "softplus": (_softplus, _dsoftplus),
}


def _activation(name: str) -> tuple[Callable, Callable]:
    if name not in ACTIVATIONS:
        raise ConfigError(
            f"unknown activation {name!r}, expected one of {sorted(ACTIVATIONS)}"
        )
    return ACTIVATIONS[name]


@dataclass
class ExtractorParams:
    """MLP feature extractor. weights[l] is (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]


@dataclass
class ClassifierParams:
    """Linear head: logits = f @ weight + bias."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]


@dataclass
class ForwardTrace:
    """Per-layer cache from a forward pass, consumed by `backward`."""

    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def init_extractor(
    sizes: Sequence[int], activation: str = "tanh", seed: int = 0
) -> ExtractorParams:
    """Gaussian init with std 1/sqrt(fan_in), zero biases.

    `sizes` lists layer widths input first, e.g. (12, 32, 16) builds two
    weight matrices and yields 16-d features.
    """
    if len(sizes) < 2:
        raise ConfigError(f"need at least input and output widths, got {sizes!r}")
    if any(int(s) <= 0 for s in sizes):
        raise ConfigError(f"layer widths must be positive, got {sizes!r}")
    _activation(activation)
    rng = rng_from(seed, "init_extractor")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        std = 1.0 / np.sqrt(fan_in)
        weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ExtractorParams(weights=weights, biases=biases, activation=activation)


def init_classifier(feature_dim: int, n_classes: int, seed: int = 0) -> ClassifierParams:
    if feature_dim <= 0 or n_classes <= 1:
        raise ConfigError(
            f"need feature_dim > 0 and n_classes > 1, got {feature_dim}, {n_classes}"
        )
    rng = rng_from(seed, "init_classifier")
    std = 1.0 / np.sqrt(feature_dim)
    weight = rng.normal(0.0, std, size=(feature_dim, n_classes))
    return ClassifierParams(weight=weight, bias=np.zeros(n_classes))


def forward(params: ExtractorParams, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run the extractor; returns (features, trace). Final layer is linear."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected (n, d) inputs, got shape {x.shape}")
    if x.shape[1] != params.input_dim:
        raise ShapeError(
            f"input has {x.shape[1]} features, extractor expects {params.input_dim}"
        )
    act, _ = _activation(params.activation)
    trace = ForwardTrace(x=x)
    h = x
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ w + b
        post = pre if l == last else act(pre)
        trace.pre.append(pre)
        trace.post.append(post)
        h = post
    return h, trace


def classifier_logits(clf: ClassifierParams, features: np.ndarray) -> np.ndarray:
    if features.shape[1] != clf.weight.shape[0]:
        raise ShapeError(
            f"features are {features.shape[1]}-d, head expects {clf.weight.shape[0]}"
        )
    return features @ clf.weight + clf.bias


def model_forward(
    params: ExtractorParams, clf: ClassifierParams, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ForwardTrace]:
    """Full pass; returns (logits, features, trace)."""
    features, trace = forward(params, x)
    return classifier_logits(clf, features), features, trace


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row softmax of logits / temperature.

    Scaling happens before the max-subtraction stabilizer, so
    softmax(z, T) and softmax(z / T, 1) are bit-identical.
    """
    if temperature <= 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def backward(
    params: ExtractorParams, trace: ForwardTrace, d_features: np.ndarray
) -> list[np.ndarray]:
    """Backprop d(loss)/d(features) to extractor grads.

    Returns grads flat as [dW0, db0, dW1, db1, ...], matching
    `extractor_arrays` order.
    """
    _, dact = _activation(params.activation)
    if d_features.shape != trace.post[-1].shape:
        raise ShapeError(
            f"d_features shape {d_features.shape} != features shape {trace.post[-1].shape}"
        )
    grads: list[np.ndarray] = []
    d_post = d_features
    last = params.n_layers - 1
    for l in range(last, -1, -1):
        d_pre = d_post if l == last else d_post * dact(trace.pre[l], trace.post[l])
        below = trace.x if l == 0 else trace.post[l - 1]
        grads.append(d_pre.sum(axis=0))  # db_l
        grads.append(below.T @ d_pre)  # dW_l
        if l > 0:
            d_post = d_pre @ params.weights[l].T
    grads.reverse()
    return grads


def backward_through_head(
    params: ExtractorParams,
    clf: ClassifierParams,
    trace: ForwardTrace,
    d_logits: np.ndarray,
) -> list[np.ndarray]:
    """Extractor grads for a loss expressed in d(loss)/d(logits).

    The head is treated as frozen: its own grads are not produced here.
    """
    return backward(params, trace, d_logits @ clf.weight.T)


def classifier_grads(
    features: np.ndarray, d_logits: np.ndarray
) -> list[np.ndarray]:
    """Head grads [dW, db] for source pretraining."""
    return [features.T @ d_logits, d_logits.sum(axis=0)]


def extractor_arrays(params: ExtractorParams) -> list[np.ndarray]:
    """Trainable arrays, flat [W0, b0, W1, b1, ...]; views, not copies."""
    out: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        out.append(w)
        out.append(b)
    return out


def classifier_arrays(clf: ClassifierParams) -> list[np.ndarray]:
    return [clf.weight, clf.bias]


@dataclass
class SGDConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0001
    nesterov: bool = True


@dataclass
class OptimizerState:
    """Momentum buffers, one per trainable array, same order."""

    velocities: list[np.ndarray]


def init_optimizer(arrays: Sequence[np.ndarray]) -> OptimizerState:
    return OptimizerState(velocities=[np.zeros_like(a) for a in arrays])


def sgd_step(
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: OptimizerState,
    cfg: SGDConfig,
    lr: float | None = None,
) -> None:
    """In-place momentum SGD update.

    Per array: d = g + wd * p; v <- momentum * v + d; with nesterov the
    applied direction is d + momentum * v, otherwise v; p <- p - lr * d.
    `lr` overrides cfg.lr so schedules do not mutate the config.
    """
    if len(arrays) != len(grads) or len(arrays) != len(state.velocities):
        raise ShapeError(
            f"got {len(arrays)} params, {len(grads)} grads, "
            f"{len(state.velocities)} velocity buffers"
        )
    step = cfg.lr if lr is None else lr
    for p, g, v in zip(arrays, grads, state.velocities):
        if p.shape != g.shape:
            raise ShapeError(f"param shape {p.shape} != grad shape {g.shape}")
        d = g + cfg.weight_decay * p
        if cfg.momentum != 0.0:
            v *= cfg.momentum
            v += d
            d = d + cfg.momentum * v if cfg.nesterov else v
        p -= step * d


def assert_finite(name: str, *arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values in {name}")


@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    n_coords: int
    worst_array: int
    worst_flat_index: int
    worst_analytic: float
    worst_numeric: float


def grad_check(
    evaluator: Callable[[], tuple[float, list[np.ndarray]]],
    arrays: Sequence[np.ndarray],
    eps: float = 1e-5,
    max_coords: int = 50,
    seed: int = 0,
) -> GradCheckReport:
    """Central-difference check of an analytic gradient.

    `evaluator` recomputes (loss, grads) from the current contents of
    `arrays`; coordinates are perturbed in place and restored. Error is
    measured as |a - n| / max(1, |a|, |n|), which behaves like absolute
    error near zero and relative error for large gradients. Arrays larger
    than `max_coords` are subsampled at seeded random coordinates.
    """
    if eps <= 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")
    _, analytic = evaluator()
    if len(analytic) != len(arrays):
        raise ShapeError(
            f"evaluator returned {len(analytic)} grads for {len(arrays)} arrays"
        )
    errs: list[float] = []
    worst = (-1.0, 0, 0, 0.0, 0.0)
    for ai, (p, g) in enumerate(zip(arrays, analytic)):
        if p.shape != g.shape:
            raise ShapeError(f"grad {ai} shape {g.shape} != param shape {p.shape}")
        flat_p = p.reshape(-1)
        flat_g = np.asarray(g, dtype=np.float64).reshape(-1)
        if flat_p.size <= max_coords:
            coords = np.arange(flat_p.size)
        else:
            coords = rng_from(seed, "grad_check", ai).choice(
                flat_p.size, size=max_coords, replace=False
            )
        for ci in coords:
            orig = flat_p[ci]
            flat_p[ci] = orig + eps
            loss_plus, _ = evaluator()
            flat_p[ci] = orig - eps
            loss_minus, _ = evaluator()
            flat_p[ci] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * eps)
            a = float(flat_g[ci])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            errs.append(err)
            if err > worst[0]:
                worst = (err, ai, int(ci), a, float(numeric))
    if not errs:
        raise ConfigError("no coordinates checked, arrays are empty")
    return GradCheckReport(
        max_rel_err=float(max(errs)),
        mean_rel_err=float(np.mean(errs)),
        n_coords=len(errs),
        worst_array=worst[1],
        worst_flat_index=worst[2],
        worst_analytic=worst[3],
        worst_numeric=worst[4],
    )


def extractor_to_doc(params: ExtractorParams) -> dict:
    return {
        "activation": params.activation,
        "weights": [encode_array(w) for w in params.weights],
        "biases": [encode_array(b) for b in params.biases],
    }


def extractor_from_doc(doc: dict) -> ExtractorParams:
    return ExtractorParams(
        weights=[decode_array(d) for d in doc["weights"]],
        biases=[decode_array(d) for d in doc["biases"]],
        activation=doc["activation"],
    )


def classifier_to_doc(clf: ClassifierParams) -> dict:
    return {"weight": encode_array(clf.weight), "bias": encode_array(clf.bias)}


def classifier_from_doc(doc: dict) -> ClassifierParams:
    return ClassifierParams(
        weight=decode_array(doc["weight"]), bias=decode_array(doc["bias"])
    )


def optimizer_to_doc(state: OptimizerState) -> dict:
    return {"velocities": [encode_array(v) for v in state.velocities]}


def optimizer_from_doc(doc: dict) -> OptimizerState:
    return OptimizerState(velocities=[decode_array(v) for v in doc["velocities"]])


def clone_extractor(params: ExtractorParams) -> ExtractorParams:
    return ExtractorParams(
        weights=[w.copy() for w in params.weights],
        biases=[b.copy() for b in params.biases],
        activation=params.activation,
    )
