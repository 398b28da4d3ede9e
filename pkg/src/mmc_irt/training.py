"""Autoencoder construction and AMSGrad mini-batch training."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import AutoencoderLayout, NumericError, ParamStore, forward_nll, loss_and_grad
from .data import ResponseMatrix, one_hot, one_hot_codes
from .models import IrtModel, MmcModel, NrModel, model_from_dict, softplus, softplus_inverse
from ._subnet_py import elu

log = logging.getLogger(__name__)

VARIANTS = ("nr", "mmc")


class FitError(RuntimeError):
    """Training diverged."""


@dataclass
class Hyperparams:
    learning_rate: float = 0.04
    batch_size: int = 128
    epochs: int = 200
    hidden_layers: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: int = 20
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.hidden_layers < 1:
            raise ValueError("hidden_layers must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> Hyperparams:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> Hyperparams:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Encoder:
    """One ELU hidden layer followed by a linear map to a clipped scalar."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    bounds: tuple = (-10.0, 10.0)

    @property
    def input_width(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.W1.shape[1]

    def raw(self, batch: np.ndarray) -> np.ndarray:
        return (elu(batch @ self.W1 + self.b1) @ self.W2 + self.b2)[:, 0]

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        out = np.clip(self.raw(batch), *self.bounds)
        if not np.all(np.isfinite(out)):
            raise NumericError("encoder produced non-finite output")
        return out

    def to_dict(self) -> dict:
        return {
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2.tolist(),
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Encoder:
        return cls(
            np.array(d["W1"], dtype=float).reshape(-1, len(d["b1"])),
            np.array(d["b1"], dtype=float),
            np.array(d["W2"], dtype=float).reshape(-1, 1),
            np.array(d["b2"], dtype=float),
            tuple(d["bounds"]),
        )


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    v_max: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> OptimizerState:
        return cls(np.zeros(size), np.zeros(size), np.zeros(size))


def amsgrad_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
    """One AMSGrad update of ``params`` in place (bias-corrected, max of second moments)."""
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * grads * grads
    np.maximum(state.v_max, state.v, out=state.v_max)
    bias1 = 1.0 - beta1**state.step
    bias2 = 1.0 - beta2**state.step
    denom = np.sqrt(state.v_max) / np.sqrt(bias2) + eps
    params -= (lr / bias1) * state.m / denom
    return params


@dataclass
class FittedModel:
    """A frozen IRT model plus, for autoencoder fits, its encoder."""

    model: IrtModel
    encoder: Encoder | None = None
    fitter: str = "ae"
    hyperparams: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": "mmc-irt-fit",
            "version": 1,
            "fitter": self.fitter,
            "model": self.model.to_dict(),
            "encoder": None if self.encoder is None else self.encoder.to_dict(),
            "hyperparams": self.hyperparams,
        }

    @classmethod
    def from_dict(cls, d: dict) -> FittedModel:
        if d.get("format") != "mmc-irt-fit":
            raise ValueError("not a serialized fitted model")
        enc = None if d.get("encoder") is None else Encoder.from_dict(d["encoder"])
        model = model_from_dict(d["model"]).freeze()
        return cls(model, enc, d.get("fitter", "ae"), d.get("hyperparams", {}))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> FittedModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def write_log_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if self.fitter == "mml":
                writer.writerow(["iteration", "marginal_loglik"])
                for row in self.log:
                    writer.writerow([row["iteration"], repr(row["marginal_loglik"])])
            else:
                writer.writerow(["epoch", "train_nll", "val_nll"])
                for row in self.log:
                    val = "" if row["val_nll"] is None else repr(row["val_nll"])
                    writer.writerow([row["epoch"], repr(row["train_nll"]), val])


def layout_for(variant: str, rm: ResponseMatrix, hp: Hyperparams, bounds=(-10.0, 10.0)) -> AutoencoderLayout:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    return AutoencoderLayout(
        variant,
        tuple(int(m) for m in rm.categories),
        tuple(int(c) for c in rm.correct),
        hp.hidden_layers,
        tuple(bounds),
    )


def _glorot(rng, fan_in, fan_out, shape):
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def init_params(layout: AutoencoderLayout, seed) -> ParamStore:
    rng = np.random.default_rng(seed)
    params = ParamStore(layout.param_shapes())
    d, h = layout.width, layout.hidden
    params["enc.W1"] = _glorot(rng, d, h, (d, h))
    params["enc.W2"] = _glorot(rng, h, 1, (h, 1))
    mask = layout.mask
    if layout.variant == "nr":
        cats = np.asarray(layout.categories)
        r = np.sqrt(6.0 / (1.0 + cats))[:, None]
        params["dec.a"] = rng.uniform(-1.0, 1.0, size=mask.shape) * r * mask
    else:
        params["dec.tau"] = np.ones(len(layout.categories))
        offset = softplus_inverse(0.05)
        for layer in range(layout.n_layers):
            shape = params.shapes[f"dec.w{layer}"]
            params[f"dec.w{layer}"] = rng.normal(0.0, 0.01, size=shape) + offset
    return params


def encoder_from_params(params: ParamStore, layout: AutoencoderLayout) -> Encoder:
    return Encoder(
        params["enc.W1"].copy(), params["enc.b1"].copy(), params["enc.W2"].copy(),
        params["enc.b2"].copy(), layout.bounds,
    )


def model_from_params(params: ParamStore, layout: AutoencoderLayout, missing_as_category=False) -> IrtModel:
    common = dict(
        categories=np.array(layout.categories),
        correct=np.array(layout.correct),
        bounds=layout.bounds,
        missing_as_category=missing_as_category,
    )
    if layout.variant == "nr":
        return NrModel(**common, a=params["dec.a"].copy(), b=params["dec.b"].copy())
    return MmcModel(
        **common,
        tau=params["dec.tau"].copy(),
        b=params["dec.b"].copy(),
        weights=[params[f"dec.w{k}"].copy() for k in range(layout.n_layers)],
        biases=[params[f"dec.c{k}"].copy() for k in range(layout.n_layers)],
    )


def standardize_scale(params: ParamStore, layout: AutoencoderLayout, batch: np.ndarray) -> None:
    """Rescale the latent trait to mean 0, SD 1 over ``batch`` without changing any IRF.

    The encoder output map absorbs the affine change and the decoder's first
    layer (NR slopes/intercepts or the first subnet layer) absorbs its inverse.
    """
    raw = (elu(batch @ params["enc.W1"] + params["enc.b1"]) @ params["enc.W2"] + params["enc.b2"])[:, 0]
    mu, sigma = float(raw.mean()), float(raw.std())
    if not np.isfinite(sigma) or sigma <= 1e-12:
        return
    params["enc.W2"] = params["enc.W2"] / sigma
    params["enc.b2"] = (params["enc.b2"] - mu) / sigma
    if layout.variant == "nr":
        a = params["dec.a"].copy()
        params["dec.b"] = params["dec.b"] + a * mu
        params["dec.a"] = a * sigma
    else:
        raw_w = params["dec.w0"].copy()
        eff = softplus(raw_w)
        params["dec.c0"] = params["dec.c0"] + eff * mu
        # softplus(x) ~ exp(x) far in the left tail, where the inverse underflows
        params["dec.w0"] = np.where(raw_w < -30.0, raw_w + np.log(sigma), softplus_inverse(eff * sigma))


def params_from_fitted(fitted: FittedModel) -> tuple[ParamStore, AutoencoderLayout]:
    """Rebuild the flat parameter vector of an autoencoder fit."""
    m = fitted.model
    layout = AutoencoderLayout(
        m.variant, tuple(int(c) for c in m.categories), tuple(int(c) for c in m.correct),
        m.depth if m.variant == "mmc" else int(fitted.hyperparams.get("hidden_layers", 1)), m.bounds,
    )
    params = ParamStore(layout.param_shapes())
    enc = fitted.encoder
    params["enc.W1"], params["enc.b1"], params["enc.W2"], params["enc.b2"] = enc.W1, enc.b1, enc.W2, enc.b2
    if m.variant == "nr":
        params["dec.a"], params["dec.b"] = m.a, m.b
    else:
        params["dec.tau"], params["dec.b"] = m.tau, m.b
        for k in range(m.depth):
            params[f"dec.w{k}"], params[f"dec.c{k}"] = m.weights[k], m.biases[k]
    return params, layout


def build_autoencoder(variant: str, rm: ResponseMatrix, hp: Hyperparams, seed=None):
    """(Encoder, IrtModel, ParamStore) at their initial values."""
    layout = layout_for(variant, rm, hp)
    params = init_params(layout, hp.seed if seed is None else seed)
    return (
        encoder_from_params(params, layout),
        model_from_params(params, layout, rm.missing_as_category),
        params,
    )


def fit(variant: str, train: ResponseMatrix, hp: Hyperparams | None = None,
        bounds=(-10.0, 10.0), standardize: bool = True) -> FittedModel:
    """Train an autoencoder whose decoder is an NR or MMC model.

    A ``val_fraction`` share of the rows is held out for early stopping when
    there are at least 20 rows; the returned parameters are those of the epoch
    with the lowest validation NLL (training NLL without a validation split).
    With ``standardize`` the latent scale is then shifted and stretched to mean
    0, SD 1 over the training rows, which leaves every fitted probability intact.
    """
    hp = hp or Hyperparams()
    if train.n_persons == 0:
        raise ValueError("cannot fit an empty response matrix")
    layout = layout_for(variant, train, hp, bounds)
    params = init_params(layout, hp.seed)
    state = OptimizerState.zeros(len(params))

    x_all = one_hot(train)
    codes_all = np.asarray(train.codes)
    n = train.n_persons
    rng = np.random.default_rng([hp.seed, 1])
    order = rng.permutation(n)
    n_val = int(round(hp.val_fraction * n)) if n >= 20 and hp.val_fraction > 0 else 0
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])

    def mean_nll(idx):
        return forward_nll(params, x_all[idx], codes_all[idx], layout) / len(idx)

    history = [{"epoch": 0, "train_nll": mean_nll(train_idx), "val_nll": mean_nll(val_idx) if n_val else None}]
    best = (history[0]["val_nll"] if n_val else history[0]["train_nll"], params.vector.copy(), 0)
    stale = 0
    for epoch in range(1, hp.epochs + 1):
        perm = np.random.default_rng([hp.seed, 2, epoch]).permutation(train_idx)
        total = 0.0
        try:
            for start in range(0, len(perm), hp.batch_size):
                rows = perm[start : start + hp.batch_size]
                loss, grads, _ = loss_and_grad(params, x_all[rows], codes_all[rows], layout)
                amsgrad_step(state, params.vector, grads, hp.learning_rate, hp.beta1, hp.beta2, hp.eps)
                total += loss
            if not np.all(np.isfinite(params.vector)):
                raise NumericError("non-finite parameters")
            val = mean_nll(val_idx) if n_val else None
        except (NumericError, FloatingPointError) as exc:
            raise FitError(f"training diverged at epoch {epoch}: {exc}") from exc
        train_nll = total / len(train_idx)
        history.append({"epoch": epoch, "train_nll": train_nll, "val_nll": val})
        score = val if n_val else train_nll
        if score < best[0]:
            best = (score, params.vector.copy(), epoch)
            stale = 0
        else:
            stale += 1
            if stale >= hp.patience:
                log.debug("early stop at epoch %d (best %d)", epoch, best[2])
                break
    params.vector[:] = best[1]
    if standardize:
        standardize_scale(params, layout, x_all)
    model = model_from_params(params, layout, train.missing_as_category).freeze()
    encoder = encoder_from_params(params, layout)
    info = asdict(hp)
    info.update(variant=variant, best_epoch=best[2])
    return FittedModel(model, encoder, "ae", info, history)


def encode(fitted: FittedModel, rm: ResponseMatrix) -> np.ndarray:
    return fitted.encoder(one_hot_codes(rm.codes, rm.categories))
