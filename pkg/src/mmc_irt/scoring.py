"""Latent trait estimation: encoder pass-through (NN) and bounded maximum likelihood (ML)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ResponseMatrix, one_hot_codes
from .models import IrtModel

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class ItemMismatchError(ValueError):
    """Response data does not match the items of the model."""


@dataclass(frozen=True)
class ThetaEstimates:
    theta: np.ndarray
    method: str
    model_variant: str = ""

    def __len__(self):
        return len(self.theta)


def _model_of(fitted) -> IrtModel:
    return fitted if isinstance(fitted, IrtModel) else fitted.model


def check_items(model: IrtModel, rm: ResponseMatrix) -> None:
    if rm.n_items != model.n_items or not np.array_equal(rm.categories, model.categories):
        raise ItemMismatchError("response data items do not match the fitted model")
    if not np.array_equal(rm.correct, model.correct):
        raise ItemMismatchError("answer key differs from the fitted model")


def score_nn(fitted, rm: ResponseMatrix) -> ThetaEstimates:
    """Encoder estimates; only available for autoencoder fits."""
    model = _model_of(fitted)
    check_items(model, rm)
    encoder = getattr(fitted, "encoder", None)
    if encoder is None:
        raise ValueError("NN scoring needs an autoencoder fit; use ML scoring")
    theta = encoder(one_hot_codes(rm.codes, rm.categories))
    return ThetaEstimates(theta, "NN", model.variant)


def grid_loglik(model: IrtModel, codes: np.ndarray, grid: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """(N, G) per-person log-likelihood at each grid point."""
    table = model.log_prob_table(grid).T  # (sum M_j, G)
    out = np.empty((codes.shape[0], len(grid)))
    for start in range(0, codes.shape[0], chunk):
        rows = slice(start, start + chunk)
        out[rows] = one_hot_codes(codes[rows], model.categories) @ table
    return out


def ml_theta(model: IrtModel, codes, grid_size: int = 201, tol: float = 1e-9,
             max_iter: int = 100) -> np.ndarray:
    """Bounded ML estimates: grid scan, then golden-section search on the bracket.

    The bracket is the pair of grid cells around the best grid point. The
    refined point replaces the grid point only if its likelihood is strictly
    higher, so a likelihood increasing towards a bound returns the bound itself.
    Ties between grid points resolve to the lowest theta.
    """
    codes = np.asarray(codes, dtype=np.int64)
    n = codes.shape[0]
    if n == 0:
        return np.zeros(0)
    lo, hi = model.bounds
    grid = np.linspace(lo, hi, grid_size)
    ll = grid_loglik(model, codes, grid)
    k = np.argmax(ll, axis=1)
    best_theta = grid[k]
    best_ll = ll[np.arange(n), k]
    a = grid[np.maximum(k - 1, 0)]
    b = grid[np.minimum(k + 1, grid_size - 1)]

    def f(theta):
        return model.loglik(theta, codes)

    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if np.max(b - a) < tol:
            break
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
        f_new = f(new)
        c, d, fc, fd = (
            np.where(left, new, d),
            np.where(left, c, new),
            np.where(left, f_new, fd),
            np.where(left, fc, f_new),
        )
    x = 0.5 * (a + b)
    fx = f(x)
    better = fx > f(best_theta)
    return np.where(better, x, best_theta)


def score_ml(fitted, rm: ResponseMatrix, grid_size: int = 201) -> ThetaEstimates:
    model = _model_of(fitted)
    check_items(model, rm)
    return ThetaEstimates(ml_theta(model, rm.codes, grid_size), "ML", model.variant)


def score(fitted, rm: ResponseMatrix, method: str = "ml") -> ThetaEstimates:
    method = method.lower()
    if method == "ml":
        return score_ml(fitted, rm)
    if method == "nn":
        return score_nn(fitted, rm)
    raise ValueError(f"unknown scoring method {method!r}")


def person_loglik(fitted, rm: ResponseMatrix, theta) -> np.ndarray:
    return _model_of(fitted).loglik(np.asarray(theta, dtype=float), rm.codes)
