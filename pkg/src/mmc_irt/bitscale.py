"""Bit scales: entropy-based ratio scales for any fitted IRT model."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .models import IrtModel
from .scoring import GOLDEN, _model_of, ml_theta


def surprisal(p):
    """-log2(p) in bits; p = 0 gives +inf."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        out = -np.log2(p) + 0.0
    return float(out) if out.ndim == 0 else out


def entropy_of(p, axis=-1):
    """Shannon entropy in bits with 0 * log 0 taken as 0."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=axis) + 0.0


def entropy(model: IrtModel, item: int, theta):
    """H_j(theta) in bits; scalar theta gives a float."""
    theta = np.asarray(theta, dtype=float)
    h = entropy_of(model.probs(np.atleast_1d(theta))[:, item, :])
    return float(h[0]) if theta.ndim == 0 else h


def entropy_curves(model: IrtModel, grid) -> np.ndarray:
    """(G, J) item entropies along a theta grid."""
    return entropy_of(model.probs(np.asarray(grid, dtype=float)))


def cumulative_variation(values, axis=0) -> np.ndarray:
    """Running total variation sum |v[s+1] - v[s]|, starting at 0."""
    values = np.asarray(values, dtype=float)
    steps = np.abs(np.diff(values, axis=axis))
    shape = list(steps.shape)
    shape[axis] = 1
    return np.concatenate([np.zeros(shape), np.cumsum(steps, axis=axis)], axis=axis)


def guessing_codes(model: IrtModel, n: int, seed) -> np.ndarray:
    """Uniformly random choices among each item's real (non-missing) options."""
    rng = np.random.default_rng(seed)
    opts = model.n_options
    return np.floor(rng.random((n, model.n_items)) * opts[None, :]).astype(np.int64)


def calibrate_theta0(fitted, n_guessers: int = 1000, seed=0) -> float:
    """Median ML score of simulated test takers guessing uniformly on every item."""
    model = _model_of(fitted)
    theta = ml_theta(model, guessing_codes(model, n_guessers, seed))
    return float(np.median(theta))


@dataclass(frozen=True)
class BitScaleTable:
    grid: np.ndarray
    item_bits: np.ndarray
    theta0: float
    item_ids: tuple = ()

    @property
    def total(self) -> np.ndarray:
        return self.item_bits.sum(axis=1)

    def to_csv(self, path) -> None:
        ids = self.item_ids or tuple(f"item{j}" for j in range(self.item_bits.shape[1]))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["theta", *[f"B_{i}" for i in ids], "B"])
            for t, row, tot in zip(self.grid, self.item_bits, self.total):
                writer.writerow([repr(float(t)), *[repr(float(v)) for v in row], repr(float(tot))])


def _refined_steps(model: IrtModel, grid: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Per-cell variation of H with interior extrema located by golden section.

    A plain grid clips the top of every peak and the bottom of every trough;
    locating the turning point inside its two cells removes that bias.
    """
    steps = np.abs(np.diff(h, axis=0))
    if len(grid) < 3:
        return steps
    dh = np.diff(h, axis=0)
    turn = dh[:-1] * dh[1:] < 0
    k, item = np.nonzero(turn)
    if k.size == 0:
        return steps
    k = k + 1
    sign = np.where(dh[k - 1, item] > 0, 1.0, -1.0)

    def f(t):
        return sign * entropy_of(model.probs(t)[np.arange(t.size), item])

    a, b = grid[k - 1].copy(), grid[k + 1].copy()
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(60):
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
    t = 0.5 * (a + b)
    h_star = sign * f(t)
    keep = sign * h_star > sign * h[k, item]
    k, item, t, h_star = k[keep], item[keep], t[keep], h_star[keep]
    # the extremum falls in cell (k-1, k) or (k, k+1)
    cell = np.where(t < grid[k], k - 1, k)
    steps[cell, item] = np.abs(h_star - h[cell, item]) + np.abs(h[cell + 1, item] - h_star)
    return steps


def build_bitscale(fitted, theta0: float, grid_size: int = 1001, item_ids=()) -> BitScaleTable:
    """Tabulate item bit scores over the model's theta bounds.

    The uniform grid gets theta0 inserted; B_j is the total variation of H_j
    from theta0 upward, with turning points refined, and zero below it.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    model = _model_of(fitted)
    lo, hi = model.bounds
    if not lo <= theta0 <= hi:
        raise ValueError("theta0 lies outside the model's theta bounds")
    grid = np.union1d(np.linspace(lo, hi, grid_size), [theta0])
    start = int(np.searchsorted(grid, theta0))
    h = entropy_curves(model, grid)
    steps = _refined_steps(model, grid[start:], h[start:])
    bits = np.zeros_like(h)
    bits[start + 1:] = np.cumsum(steps, axis=0)
    for arr in (grid, bits):
        arr.setflags(write=False)
    return BitScaleTable(grid, bits, float(theta0), tuple(item_ids))


def bit_score(table: BitScaleTable, theta):
    """Per-item and total bit scores by linear interpolation in the table."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    items = np.stack(
        [np.interp(theta, table.grid, table.item_bits[:, j]) for j in range(table.item_bits.shape[1])],
        axis=1,
    )
    return items, items.sum(axis=1)


def resolve_theta0(fitted, mode: str = "guessing", n_guessers: int = 1000, seed=0) -> float:
    """``guessing`` calibrates on simulated guessers; ``lower`` anchors at the lower bound."""
    if mode == "guessing":
        return calibrate_theta0(fitted, n_guessers, seed)
    if mode == "lower":
        return float(_model_of(fitted).bounds[0])
    raise ValueError(f"unknown theta0 mode {mode!r}")
