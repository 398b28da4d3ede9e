"""Synthetic response generation and the resample-fit-evaluate simulation harness."""

from __future__ import annotations

import csv
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .autodiff import NumericError
from .baseline_mml import ConvergenceWarning, mml_fit_nr
from .data import ResponseMatrix, sample_indices
from .evaluation import response_logprobs
from .models import THETA_BOUNDS, IrtModel, NrModel, softmax
from .training import FitError, Hyperparams, fit

log = logging.getLogger(__name__)

MODELS = ("mmc-ae", "nr-ae", "nr-mml")


class SpecError(ValueError):
    """Invalid generator specification."""


@dataclass
class TabulatedModel(IrtModel):
    """Option probabilities tabulated on a theta grid, linearly interpolated.

    Outside the grid the end rows are used.
    """

    grid: np.ndarray = None
    table: np.ndarray = None  # (G, J, M)
    variant = "tabulated"

    def __post_init__(self):
        super().__post_init__()
        self.grid = np.asarray(self.grid, dtype=float)
        self.table = np.asarray(self.table, dtype=float)
        if self.table.shape != (len(self.grid), *self.mask.shape):
            raise SpecError("table shape does not match grid and items")
        if np.any(np.diff(self.grid) <= 0):
            raise SpecError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.table)) or np.any(self.table < 0):
            raise SpecError("tabulated probabilities must be finite and non-negative")
        if np.any(self.table[:, ~self.mask] != 0):
            raise SpecError("padded options must have zero probability")
        if not np.allclose(self.table.sum(axis=2), 1.0, atol=1e-9):
            raise SpecError("tabulated probabilities must sum to 1")

    def probs(self, theta) -> np.ndarray:
        theta = np.clip(np.atleast_1d(np.asarray(theta, dtype=float)), self.grid[0], self.grid[-1])
        k = np.clip(np.searchsorted(self.grid, theta, side="right") - 1, 0, len(self.grid) - 2)
        w = ((theta - self.grid[k]) / (self.grid[k + 1] - self.grid[k]))[:, None, None]
        return (1.0 - w) * self.table[k] + w * self.table[k + 1]

    def logits(self, theta) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.mask, np.log(self.probs(theta)), -np.inf)

    def n_parameters(self) -> int:
        return int(self.table[:, self.mask].size)

    def _params_dict(self):
        return {"grid": self.grid.tolist(), "table": self.table.tolist()}


def tabulate(model: IrtModel, grid) -> TabulatedModel:
    grid = np.asarray(grid, dtype=float)
    return TabulatedModel(model.categories, model.correct, model.bounds, model.missing_as_category,
                          grid=grid, table=model.probs(grid))


@dataclass(frozen=True)
class GeneratorSpec:
    n_items: int = 20
    n_options: int | tuple = 4
    latent: str = "skewed"
    family: str = "tabulated"
    missing_rate: float = 0.0
    item_seed: int = 0
    true_model: IrtModel | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.latent not in ("normal", "skewed"):
            raise SpecError(f"unknown latent distribution {self.latent!r}")
        if self.family not in ("nr", "tabulated"):
            raise SpecError(f"unknown item family {self.family!r}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise SpecError("missing_rate must lie in [0, 1)")
        if self.true_model is None:
            if self.n_items < 1:
                raise SpecError("n_items must be positive")
            if np.any(np.asarray(self.option_counts) < 2):
                raise SpecError("every item needs at least two options")

    @property
    def option_counts(self) -> np.ndarray:
        if np.ndim(self.n_options) == 0:
            return np.full(self.n_items, int(self.n_options))
        counts = np.asarray(self.n_options, dtype=np.int64)
        if counts.shape != (self.n_items,):
            raise SpecError("n_options needs one entry per item")
        return counts


def sample_latent(kind: str, n: int, rng) -> np.ndarray:
    if kind == "normal":
        return rng.standard_normal(n)
    # right-skewed two-component mixture
    upper = rng.random(n) < 0.3
    return np.where(upper, rng.normal(1.0, 1.1, n), rng.normal(-0.45, 0.7, n))


def _nr_items(counts, rng):
    j_count, m_max = len(counts), int(counts.max())
    mask = np.arange(m_max)[None, :] < counts[:, None]
    correct = rng.integers(0, counts)
    a = np.where(mask, rng.normal(-0.5, 0.6, (j_count, m_max)), 0.0)
    b = np.where(mask, rng.normal(0.0, 0.8, (j_count, m_max)), 0.0)
    a[np.arange(j_count), correct] = rng.uniform(0.8, 2.0, j_count)
    return correct, a, b


def _tabulated_items(counts, rng, grid):
    """Asymmetric-logistic correct curves with a guessing floor; distractors share the rest."""
    j_count, m_max = len(counts), int(counts.max())
    mask = np.arange(m_max)[None, :] < counts[:, None]
    correct = rng.integers(0, counts)
    g = rng.uniform(0.05, 0.25, j_count)
    slope = rng.uniform(1.0, 2.5, j_count)
    loc = rng.normal(0.0, 1.0, j_count)
    shape = np.exp(rng.uniform(np.log(0.3), np.log(3.0), j_count))
    p_correct = g + (1.0 - g) * expit(slope * (grid[:, None] - loc)) ** shape  # (G, J)
    lin = rng.normal(-0.3, 0.6, (j_count, m_max))
    bump_h = rng.uniform(0.0, 2.5, (j_count, m_max))
    bump_mu = rng.normal(0.0, 1.0, (j_count, m_max))
    bump_w = rng.uniform(0.4, 1.2, (j_count, m_max))
    offset = rng.normal(0.0, 0.5, (j_count, m_max))
    t = grid[:, None, None]
    z = lin * t + bump_h * np.exp(-0.5 * ((t - bump_mu) / bump_w) ** 2) + offset
    z = np.where(mask[None], z, -np.inf)
    z[:, np.arange(j_count), correct] = -np.inf
    share = softmax(z, axis=2)
    table = share * (1.0 - p_correct)[:, :, None]
    table[:, np.arange(j_count), correct] = p_correct
    return correct, table


def _with_missing(model: IrtModel, rate: float, grid) -> TabulatedModel:
    """Append a missing category whose probability decreases with theta."""
    probs = model.probs(grid)
    q = rate * 2.0 * expit(-grid)[:, None] * np.ones(model.n_items)[None]
    q = np.minimum(q, 0.95)
    g_count, j_count, m_max = probs.shape
    counts = model.categories + 1
    table = np.zeros((g_count, j_count, m_max + 1))
    table[:, :, :m_max] = probs * (1.0 - q)[:, :, None]
    table[:, np.arange(j_count), model.categories] = q
    return TabulatedModel(counts, model.correct, model.bounds, True, grid=grid, table=table)


def true_model(spec: GeneratorSpec) -> IrtModel:
    """The generating model; fixed by ``item_seed`` so every draw shares the items."""
    grid = np.linspace(*THETA_BOUNDS, 2001)
    if spec.true_model is not None:
        model = spec.true_model
    else:
        rng = np.random.default_rng([spec.item_seed, 11])
        counts = spec.option_counts
        if spec.family == "nr":
            correct, a, b = _nr_items(counts, rng)
            model = NrModel(counts, correct, a=a, b=b)
        else:
            correct, table = _tabulated_items(counts, rng, grid)
            model = TabulatedModel(counts, correct, grid=grid, table=table)
    if spec.missing_rate > 0:
        if model.missing_as_category:
            raise SpecError("true model already has a missing category")
        model = _with_missing(model, spec.missing_rate, grid)
    return model


def sample_responses(model: IrtModel, theta, rng) -> np.ndarray:
    """One categorical draw per person and item from the model's probabilities."""
    p = model.probs(np.asarray(theta, dtype=float))
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise SpecError("model produced invalid probabilities")
    u = rng.random(p.shape[:2])[:, :, None]
    codes = (np.cumsum(p, axis=2) <= u).sum(axis=2)
    return np.minimum(codes, model.categories[None, :] - 1)


def generate(spec: GeneratorSpec, n: int, seed) -> ResponseMatrix:
    """N synthetic test takers; the true theta travels with the matrix."""
    model = true_model(spec)
    rng = np.random.default_rng(seed)
    theta = sample_latent(spec.latent, n, rng)
    codes = sample_responses(model, theta, rng)
    return ResponseMatrix(
        codes, model.categories, model.correct, tuple(f"item{j + 1}" for j in range(model.n_items)),
        missing_as_category=model.missing_as_category, theta=theta,
    )


def fixed_item_subsets(n_full: int, lengths, seed) -> dict[int, np.ndarray]:
    """Nested random item subsets, one per test length (smaller inside larger)."""
    lengths = list(lengths)
    if lengths != sorted(lengths):
        raise ValueError("lengths must be sorted ascending")
    if lengths and (lengths[0] < 1 or lengths[-1] > n_full):
        raise ValueError(f"lengths must lie in 1..{n_full}")
    perm = np.random.default_rng(seed).permutation(n_full)
    return {length: np.sort(perm[:length]) for length in lengths}


# simulation harness --------------------------------------------------------------


@dataclass
class SimConfig:
    lengths: tuple = (20,)
    sample_sizes: tuple = (1000,)
    replications: int = 20
    source: ResponseMatrix | GeneratorSpec = field(default_factory=GeneratorSpec)
    pool_size: int = 10000
    seed: int = 0
    models: tuple = MODELS
    hyperparams: dict = field(default_factory=dict)  # model name -> Hyperparams overrides
    threads: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models: {sorted(unknown)}")
        n_items = self.source.n_items if isinstance(self.source, ResponseMatrix) else None
        if n_items is not None and max(self.lengths) > n_items:
            raise ValueError("test length exceeds the number of items in the source")


@dataclass
class Cell:
    length: int
    n: int
    model: str
    scoring: str
    values: list = field(default_factory=list)  # (replication, loglik, residual)
    failures: int = 0

    @property
    def count(self) -> int:
        return len(self.values)

    def _stat(self, col):
        vals = np.array([v[col] for v in self.values])
        if len(vals) == 0:
            return float("nan"), float("nan")
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return float(vals.mean()), se

    @property
    def loglik(self):
        return self._stat(1)

    @property
    def residual(self):
        return self._stat(2)

    @property
    def se_undefined(self) -> bool:
        return self.count < 2


@dataclass
class SimResult:
    cells: dict  # (length, n, model, scoring) -> Cell

    def cell(self, length, n, model, scoring="ML") -> Cell:
        return self.cells[(length, n, model, scoring)]

    def to_rows(self):
        keys = sorted({k[:3] for k in self.cells}, key=lambda k: (k[1], k[0], MODELS.index(k[2])))
        for length, n, model in keys:
            row = {"n": n, "items": length, "model": model}
            for scoring in ("ML", "NN"):
                c = self.cells.get((length, n, model, scoring))
                tag = scoring
                if c is None or c.count == 0:
                    row.update({f"loglik_{tag}": "", f"resid_{tag}": "", f"se_loglik_{tag}": "",
                                f"se_resid_{tag}": ""})
                    continue
                (ll, ll_se), (rs, rs_se) = c.loglik, c.residual
                row.update({f"loglik_{tag}": repr(ll), f"resid_{tag}": repr(rs),
                            f"se_loglik_{tag}": repr(ll_se), f"se_resid_{tag}": repr(rs_se)})
            ml = self.cells[(length, n, model, "ML")]
            row.update(reps=ml.count, failures=ml.failures, se_undefined=int(ml.se_undefined))
            yield row

    def to_csv(self, path) -> None:
        cols = ["n", "items", "model", "loglik_ML", "loglik_NN", "resid_ML", "resid_NN",
                "se_loglik_ML", "se_loglik_NN", "se_resid_ML", "se_resid_NN", "reps", "failures", "se_undefined"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow(row)


def _fit_one(name: str, train: ResponseMatrix, hp: Hyperparams):
    if name == "nr-mml":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return mml_fit_nr(train)
    return fit(name.split("-")[0], train, hp)


def _replicate(task):
    """One (length, n, replication): sample, fit every model, evaluate on the complement."""
    pool, items, length, n, r, cfg_seed, models, hp_overrides = task
    rng = np.random.default_rng([cfg_seed, length, n, r])
    chosen, rest = sample_indices(pool.n_persons, n, rng)
    data = pool.subset(items=items)
    train, test = data.subset(rows=chosen), data.subset(rows=rest)
    fit_seed = int(rng.integers(2**31))
    out = []
    for name in models:
        hp = Hyperparams.from_dict({"seed": fit_seed, **hp_overrides.get(name, {})})
        try:
            fitted = _fit_one(name, train, hp)
        except (FitError, NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed at length=%d n=%d rep=%d: %s", name, length, n, r, exc)
            out.append((name, None))
            continue
        scores = {}
        for scoring in ("ML", "NN") if fitted.encoder is not None else ("ML",):
            lp = response_logprobs(fitted, test, scoring.lower())
            resid = 1.0 - np.exp(lp)
            scores[scoring] = (float(lp.mean()), float(resid.mean()))
        out.append((name, scores))
    return length, n, r, out


def run_simulation(cfg: SimConfig) -> SimResult:
    """Resample n test takers, fit each model, score the complement; repeat and average.

    Log-likelihoods and residuals are per-response means over the complement.
    Failed fits are counted and left out of that cell.
    """
    if isinstance(cfg.source, ResponseMatrix):
        pool = cfg.source
    else:
        pool = generate(cfg.source, cfg.pool_size, [cfg.seed, 97])
    if max(cfg.sample_sizes) >= pool.n_persons:
        raise ValueError("sample size must leave a non-empty complement")
    subsets = fixed_item_subsets(pool.n_items, sorted(cfg.lengths), [cfg.seed, 13])
    tasks = [
        (pool, subsets[length], length, n, r, cfg.seed, tuple(cfg.models), cfg.hyperparams)
        for length in sorted(cfg.lengths) for n in sorted(cfg.sample_sizes) for r in range(cfg.replications)
    ]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(_replicate, tasks))
    else:
        results = [_replicate(t) for t in tasks]
    cells = {}
    for length, n, r, out in sorted(results, key=lambda t: t[:3]):
        for name, scores in out:
            for scoring in ("ML", "NN") if name != "nr-mml" else ("ML",):
                cell = cells.setdefault((length, n, name, scoring), Cell(length, n, name, scoring))
                if scores is None:
                    cell.failures += 1
                else:
                    ll, rs = scores[scoring]
                    cell.values.append((r, ll, rs))
    return SimResult(cells)
