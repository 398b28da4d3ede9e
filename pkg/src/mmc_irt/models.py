"""Nominal response (NR) and monotone multiple choice (MMC) item response functions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels

THETA_BOUNDS = (-10.0, 10.0)
PROB_FLOOR = 1e-10
LOG_FLOOR = float(np.log(PROB_FLOOR))
FORMAT_VERSION = 1


class ModelError(ValueError):
    """Invalid model parameters."""


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def softmax(z, mask=None, axis=-1):
    """Overflow-safe softmax; masked-out entries get probability 0."""
    z = np.asarray(z, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z, mask=None, axis=-1):
    z = np.asarray(z, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    zmax = np.max(z, axis=axis, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=axis, keepdims=True))
    return z - lse


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise ModelError("non-finite parameters")


# single-item API --------------------------------------------------------------


@dataclass
class NrItemParams:
    a: np.ndarray
    b: np.ndarray


def nr_probs(params: NrItemParams, theta):
    """Option probabilities of one NR item; scalar theta -> (M,), vector -> (N, M)."""
    a = np.asarray(params.a, dtype=float)
    b = np.asarray(params.b, dtype=float)
    _check_finite(a, b)
    theta = np.asarray(theta, dtype=float)
    return softmax(theta[..., None] * a + b)


@dataclass
class MonotoneSubnet:
    """Monotone network theta -> delta with three neurons per layer.

    ``weights`` holds the raw (pre-softplus) weights: shape (3,) for the first
    layer and (3, 3) afterwards; ``biases`` holds one (3,) vector per layer.
    """

    weights: list
    biases: list

    @property
    def depth(self) -> int:
        return len(self.weights)

    def effective_weights(self):
        return [softplus(np.asarray(w, dtype=float)) for w in self.weights]

    def __call__(self, theta):
        return monotone_forward(self, theta)


def monotone_forward(net: MonotoneSubnet, theta):
    """delta(theta): scalar in, scalar out; vector in, vector out."""
    theta = np.asarray(theta, dtype=float)
    flat = np.atleast_1d(theta)
    weights = [w[None, None] for w in net.effective_weights()]
    biases = [np.asarray(b, dtype=float)[None, None] for b in net.biases]
    delta = kernels.subnet_forward(flat, weights, biases)[:, 0, 0]
    return delta.reshape(theta.shape) if theta.ndim else float(delta[0])


@dataclass
class MmcItemParams:
    tau: float
    b: np.ndarray
    subnets: list


def mmc_probs(params: MmcItemParams, correct: int, theta):
    """Option probabilities of one MMC item.

    Distractors use ``tau * delta_m + b_m``; the keyed option uses
    ``tau * sum_t delta_t + b_correct``.
    """
    b = np.asarray(params.b, dtype=float)
    _check_finite(b, np.asarray(params.tau, dtype=float))
    theta = np.asarray(theta, dtype=float)
    deltas = np.stack([np.asarray(net(theta), dtype=float) for net in params.subnets], axis=-1)
    shaped = deltas.copy()
    shaped[..., correct] = deltas.sum(axis=-1)
    return softmax(params.tau * shaped + b)


# batched models ---------------------------------------------------------------


def option_mask(categories) -> np.ndarray:
    categories = np.asarray(categories, dtype=np.int64)
    return np.arange(categories.max())[None, :] < categories[:, None]


def correct_sum_map(categories, correct) -> np.ndarray:
    """Linear map (J, M, M) turning per-option deltas into MMC predictor shapes.

    Column ``m`` of item ``j`` picks ``delta_m`` for distractors and sums all
    valid deltas for the keyed option; padded options map to zero.
    """
    mask = option_mask(categories)
    j_count, m_max = mask.shape
    out = np.zeros((j_count, m_max, m_max))
    for j in range(j_count):
        valid = mask[j]
        out[j][np.diag_indices(m_max)] = valid
        out[j, :, correct[j]] = valid
    return out


@dataclass
class IrtModel:
    categories: np.ndarray
    correct: np.ndarray
    bounds: tuple = THETA_BOUNDS
    missing_as_category: bool = False
    variant = "base"

    def __post_init__(self):
        self.categories = np.asarray(self.categories, dtype=np.int64)
        self.correct = np.asarray(self.correct, dtype=np.int64)
        self.bounds = (float(self.bounds[0]), float(self.bounds[1]))
        if not self.bounds[0] < self.bounds[1]:
            raise ModelError("theta bounds must be increasing")
        self.mask = option_mask(self.categories)

    @property
    def n_items(self) -> int:
        return len(self.categories)

    @property
    def n_options(self) -> np.ndarray:
        return self.categories - 1 if self.missing_as_category else self.categories.copy()

    def logits(self, theta) -> np.ndarray:
        raise NotImplementedError

    def probs(self, theta) -> np.ndarray:
        """(N, J, max M) option probabilities; padded options are 0."""
        return softmax(self.logits(np.atleast_1d(theta)), self.mask)

    def log_probs(self, theta) -> np.ndarray:
        """Log-probabilities floored at log(1e-10); padded options are -inf."""
        lp = log_softmax(self.logits(np.atleast_1d(theta)), self.mask)
        return np.where(self.mask, np.maximum(lp, LOG_FLOOR), -np.inf)

    def item_probs(self, item: int, theta) -> np.ndarray:
        p = self.probs(theta)[:, item, : self.categories[item]]
        return p

    def loglik(self, theta, codes) -> np.ndarray:
        """Per-person sum of floored log-probabilities of the observed codes."""
        codes = np.asarray(codes, dtype=np.int64)
        lp = self.log_probs(theta)
        return np.take_along_axis(lp, codes[:, :, None], axis=2)[:, :, 0].sum(axis=1)

    def log_prob_table(self, grid) -> np.ndarray:
        """(G, sum M_j) floored log-probabilities in one-hot column order."""
        lp = self.log_probs(np.asarray(grid, dtype=float))
        return lp[:, self.mask]

    def n_parameters(self) -> int:
        raise NotImplementedError

    def freeze(self):
        for value in vars(self).values():
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            elif isinstance(value, list):
                for v in value:
                    if isinstance(v, np.ndarray):
                        v.setflags(write=False)
        return self

    # serialization
    def _params_dict(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": "mmc-irt-model",
            "version": FORMAT_VERSION,
            "variant": self.variant,
            "bounds": list(self.bounds),
            "categories": self.categories.tolist(),
            "correct": self.correct.tolist(),
            "missing_as_category": bool(self.missing_as_category),
            "params": self._params_dict(),
        }


@dataclass
class NrModel(IrtModel):
    a: np.ndarray = None
    b: np.ndarray = None
    variant = "nr"

    def __post_init__(self):
        super().__post_init__()
        shape = self.mask.shape
        self.a = np.zeros(shape) if self.a is None else np.array(self.a, dtype=float)
        self.b = np.zeros(shape) if self.b is None else np.array(self.b, dtype=float)
        if self.a.shape != shape or self.b.shape != shape:
            raise ModelError(f"NR parameters must have shape {shape}")
        _check_finite(self.a, self.b)

    def logits(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[:, None, None] * self.a[None] + self.b[None]

    def item(self, j: int) -> NrItemParams:
        m = self.categories[j]
        return NrItemParams(self.a[j, :m].copy(), self.b[j, :m].copy())

    def n_parameters(self) -> int:
        return int(2 * self.categories.sum())

    def _params_dict(self):
        return {"a": self.a.tolist(), "b": self.b.tolist()}


@dataclass
class MmcModel(IrtModel):
    """MMC model; subnet weights are stored raw (pre-softplus).

    ``weights[0]`` has shape (J, M, 3), deeper ``weights[l]`` (J, M, 3, 3);
    ``biases[l]`` has shape (J, M, 3).
    """

    tau: np.ndarray = None
    b: np.ndarray = None
    weights: list = field(default=None)
    biases: list = field(default=None)
    variant = "mmc"

    def __post_init__(self):
        super().__post_init__()
        j_count, m_max = self.mask.shape
        self.tau = np.ones(j_count) if self.tau is None else np.array(self.tau, dtype=float)
        self.b = np.zeros((j_count, m_max)) if self.b is None else np.array(self.b, dtype=float)
        if self.weights is None:
            self.weights = [np.full((j_count, m_max, 3), -30.0)]
        if self.biases is None:
            self.biases = [np.zeros((j_count, m_max, 3)) for _ in self.weights]
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(c, dtype=float) for c in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ModelError("need one bias array per subnet layer")
        expected = [(j_count, m_max, 3)] + [(j_count, m_max, 3, 3)] * (len(self.weights) - 1)
        if [w.shape for w in self.weights] != expected:
            raise ModelError("subnet weight shapes do not match the item layout")
        if any(c.shape != (j_count, m_max, 3) for c in self.biases):
            raise ModelError("subnet bias shapes do not match the item layout")
        _check_finite(self.tau, self.b, *self.weights, *self.biases)
        self.sum_map = correct_sum_map(self.categories, self.correct)

    @property
    def depth(self) -> int:
        return len(self.weights)

    def deltas(self, theta) -> np.ndarray:
        eff = [softplus(w) for w in self.weights]
        return kernels.subnet_forward(np.asarray(theta, dtype=float), eff, self.biases)

    def logits(self, theta):
        delta = self.deltas(theta)
        shaped = np.einsum("bjt,jtm->bjm", delta, self.sum_map)
        return self.tau[None, :, None] * shaped + self.b[None]

    def item(self, j: int) -> MmcItemParams:
        m = self.categories[j]
        nets = [
            MonotoneSubnet([w[j, k].copy() for w in self.weights], [c[j, k].copy() for c in self.biases])
            for k in range(m)
        ]
        return MmcItemParams(float(self.tau[j]), self.b[j, :m].copy(), nets)

    def n_parameters(self) -> int:
        per_option = 1 + 6 + 12 * (self.depth - 1)
        return int(per_option * self.categories.sum() + self.n_items)

    def _params_dict(self):
        return {
            "tau": self.tau.tolist(),
            "b": self.b.tolist(),
            "weights_raw": [w.tolist() for w in self.weights],
            "biases": [c.tolist() for c in self.biases],
        }


def model_probs(model: IrtModel, theta) -> np.ndarray:
    return model.probs(theta)


def model_from_dict(d: dict) -> IrtModel:
    if d.get("format") != "mmc-irt-model":
        raise ModelError("not a serialized model")
    if d.get("version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {d.get('version')}")
    common = dict(
        categories=d["categories"],
        correct=d["correct"],
        bounds=tuple(d["bounds"]),
        missing_as_category=d["missing_as_category"],
    )
    p = d["params"]
    if d["variant"] == "nr":
        return NrModel(**common, a=p["a"], b=p["b"])
    if d["variant"] == "mmc":
        return MmcModel(**common, tau=p["tau"], b=p["b"], weights=p["weights_raw"], biases=p["biases"])
    raise ModelError(f"unknown variant {d['variant']!r}")


def save_model(model: IrtModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> IrtModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
