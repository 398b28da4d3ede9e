"""Held-out fit measures, residual diagnostics and cross-validated grid search."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ResponseMatrix, SplitSpec, folds
from .models import LOG_FLOOR
from .scoring import _model_of, check_items, score
from .training import FitError, Hyperparams, fit

log = logging.getLogger(__name__)

SR_CLAMP = 1e-6


def _theta(fitted, rm, method, theta=None):
    if theta is not None:
        return np.asarray(theta, dtype=float)
    return score(fitted, rm, method).theta


def response_logprobs(fitted, test: ResponseMatrix, method: str = "ml", theta=None) -> np.ndarray:
    """(N, J) floored log-probabilities of the observed responses."""
    model = _model_of(fitted)
    check_items(model, test)
    th = _theta(fitted, test, method, theta)
    lp = model.log_probs(th)
    return np.take_along_axis(lp, np.asarray(test.codes)[:, :, None], axis=2)[:, :, 0]


def holdout_loglik(fitted, test: ResponseMatrix, method: str = "ml", theta=None) -> float:
    """Mean over persons of the summed log-likelihood of their responses."""
    return float(response_logprobs(fitted, test, method, theta).sum(axis=1).mean())


def per_response_residuals(fitted, test: ResponseMatrix, method: str = "ml", theta=None) -> np.ndarray:
    """1 - probability of the observed response, shape (N, J)."""
    return 1.0 - np.exp(np.maximum(response_logprobs(fitted, test, method, theta), LOG_FLOOR))


@dataclass
class GroupedResiduals:
    observed: np.ndarray  # P_gjm, (G, J, M)
    expected: np.ndarray  # p_gjm
    group_sizes: np.ndarray
    mask: np.ndarray

    @property
    def raw(self) -> np.ndarray:
        return np.where(self.mask[None], self.observed - self.expected, 0.0)

    @property
    def standardized(self) -> np.ndarray:
        p = np.clip(self.expected, SR_CLAMP, 1.0 - SR_CLAMP)
        sd = np.sqrt(p * (1.0 - p) / self.group_sizes[:, None, None])
        return np.where(self.mask[None], self.raw / sd, 0.0)

    def rows(self, item_ids=None):
        """Long-format rows (group, item, option, P, p, R, SR)."""
        g_count, j_count, m_max = self.observed.shape
        ids = item_ids or [str(j) for j in range(j_count)]
        raw, sr = self.raw, self.standardized
        for g in range(g_count):
            for j in range(j_count):
                for m in range(m_max):
                    if self.mask[j, m]:
                        yield (g + 1, ids[j], m, self.observed[g, j, m], self.expected[g, j, m], raw[g, j, m], sr[g, j, m])

    def to_csv(self, path, item_ids=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["group", "item", "option", "P", "p", "R", "SR"])
            for g, item, m, big_p, p, r, sr in self.rows(item_ids):
                writer.writerow([g, item, m, repr(float(big_p)), repr(float(p)), repr(float(r)), repr(float(sr))])


def theta_groups(theta, groups: int) -> list[np.ndarray]:
    """Persons sorted by theta (stable on ties) and cut into near-equal groups."""
    order = np.argsort(np.asarray(theta), kind="stable")
    return np.array_split(order, groups)


def grouped_residuals(fitted, test: ResponseMatrix, groups: int = 10, method: str = "ml",
                      theta=None) -> GroupedResiduals:
    model = _model_of(fitted)
    check_items(model, test)
    if test.n_persons < groups:
        raise ValueError(f"{test.n_persons} persons cannot fill {groups} groups")
    th = _theta(fitted, test, method, theta)
    probs = model.probs(th)
    codes = np.asarray(test.codes)
    m_max = model.mask.shape[1]
    observed = np.zeros((groups, model.n_items, m_max))
    expected = np.zeros_like(observed)
    sizes = np.zeros(groups)
    for g, members in enumerate(theta_groups(th, groups)):
        sizes[g] = len(members)
        onehot = codes[members][:, :, None] == np.arange(m_max)[None, None, :]
        observed[g] = onehot.mean(axis=0)
        expected[g] = probs[members].mean(axis=0)
    return GroupedResiduals(observed, expected, sizes, model.mask)


@dataclass
class FitReport:
    method: str
    mean_loglik: float
    item_loglik: list
    mean_residual: float
    grouped: GroupedResiduals | None = None
    residuals: np.ndarray | None = None

    def to_dict(self, item_ids=None) -> dict:
        ids = item_ids or [str(j) for j in range(len(self.item_loglik))]
        out = {
            "method": self.method,
            "mean_loglik": self.mean_loglik,
            "item_loglik": dict(zip(ids, self.item_loglik)),
            "mean_residual": self.mean_residual,
        }
        if self.grouped is not None:
            out["group_sizes"] = self.grouped.group_sizes.astype(int).tolist()
            out["mean_abs_grouped_residual"] = float(np.abs(self.grouped.raw[:, self.grouped.mask]).mean())
            out["mean_abs_standardized_residual"] = float(
                np.abs(self.grouped.standardized[:, self.grouped.mask]).mean()
            )
        return out

    def to_json(self, path, item_ids=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(item_ids), fh, indent=2)


def evaluate(fitted, test: ResponseMatrix, method: str = "ml", groups: int = 10) -> FitReport:
    th = _theta(fitted, test, method)
    lp = response_logprobs(fitted, test, method, th)
    resid = 1.0 - np.exp(lp)
    grouped = grouped_residuals(fitted, test, groups, method, th) if test.n_persons >= groups else None
    return FitReport(
        method.upper(),
        float(lp.sum(axis=1).mean()),
        lp.mean(axis=0).tolist(),
        float(resid.mean()),
        grouped,
        resid,
    )


# cross-validation --------------------------------------------------------------

DEFAULT_BATCHES = (32, 64, 128, 256)
DEFAULT_RATES = (0.02, 0.04, 0.08, 0.12)
DEFAULT_LAYERS = (1, 3, 5, 7)


def default_grid(variant: str) -> list[dict]:
    layers = DEFAULT_LAYERS if variant == "mmc" else (1,)
    return [
        {"learning_rate": lr, "batch_size": bs, "hidden_layers": hl}
        for bs, lr, hl in itertools.product(DEFAULT_BATCHES, DEFAULT_RATES, layers)
    ]


@dataclass
class CvResult:
    point: dict
    fold_ml: list = field(default_factory=list)
    fold_nn: list = field(default_factory=list)
    failures: int = 0

    @property
    def mean_ml(self) -> float:
        return float(np.mean(self.fold_ml)) if self.fold_ml else float("-inf")

    @property
    def mean_nn(self) -> float:
        return float(np.mean(self.fold_nn)) if self.fold_nn else float("-inf")


def _cv_task(task):
    variant, train, hp, tr, ho = task
    try:
        fitted = fit(variant, train.subset(rows=tr), hp)
    except FitError as exc:
        return None, str(exc)
    hold = train.subset(rows=ho)
    return (holdout_loglik(fitted, hold, "ml"), holdout_loglik(fitted, hold, "nn")), None


def cross_validate(variant: str, train: ResponseMatrix, grid=None, n_folds: int = 5, seed: int = 0,
                   base: Hyperparams | None = None, threads: int = 1) -> list[CvResult]:
    """K-fold evaluation of every grid point, best mean ML holdout log-likelihood first.

    Diverging folds are counted in ``failures`` and left out of the means.
    """
    grid = default_grid(variant) if grid is None else list(grid)
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    base = base or Hyperparams(seed=seed)
    parts = folds(train, SplitSpec(seed=seed, fold_count=n_folds))
    tasks = [
        (variant, train, Hyperparams.from_dict({**asdict(base), **point}), tr, ho)
        for point in grid for tr, ho in parts
    ]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outcomes = list(ex.map(_cv_task, tasks))
    else:
        outcomes = [_cv_task(t) for t in tasks]
    results = []
    for i, point in enumerate(grid):
        res = CvResult(dict(point))
        for k in range(n_folds):
            scores, err = outcomes[i * n_folds + k]
            if scores is None:
                log.warning("grid point %s fold %d failed: %s", point, k, err)
                res.failures += 1
            else:
                res.fold_ml.append(scores[0])
                res.fold_nn.append(scores[1])
        results.append(res)
    order = sorted(range(len(results)), key=lambda i: (-results[i].mean_ml, i))
    return [results[i] for i in order]


def write_cv_csv(results, path) -> None:
    keys = sorted({k for r in results for k in r.point})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", *keys, "mean_loglik_ml", "mean_loglik_nn", "folds_ok", "failures"])
        for rank, r in enumerate(results, start=1):
            writer.writerow([rank, *[r.point.get(k, "") for k in keys], repr(r.mean_ml), repr(r.mean_nn),
                             len(r.fold_ml), r.failures])
