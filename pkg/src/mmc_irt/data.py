"""Response data: loading, validation, one-hot encoding, splitting and resampling."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

MISSING = -1


class DataError(ValueError):
    """Raised for malformed or inconsistent response data."""


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """N x J integer response codes with per-item category counts.

    ``categories[j]`` counts every category of item ``j``, including the
    trailing missing category when ``missing_as_category`` is set.
    """

    codes: np.ndarray
    categories: np.ndarray
    correct: np.ndarray
    item_ids: tuple[str, ...]
    missing_as_category: bool = False
    person_ids: tuple[str, ...] | None = None
    theta: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        codes = np.array(self.codes, dtype=np.int64, copy=True)
        if codes.ndim != 2:
            raise DataError("codes must be a 2-d array")
        categories = np.array(self.categories, dtype=np.int64, copy=True)
        correct = np.array(self.correct, dtype=np.int64, copy=True)
        n, j = codes.shape
        if categories.shape != (j,) or correct.shape != (j,):
            raise DataError("categories and correct must have one entry per item")
        if len(self.item_ids) != j:
            raise DataError("item_ids must have one entry per item")
        if np.any(categories < 2):
            raise DataError("every item needs at least two categories")
        n_options = categories - 1 if self.missing_as_category else categories
        if np.any(correct < 0) or np.any(correct >= n_options):
            raise DataError("correct option outside the item's options")
        missing = codes == MISSING
        if self.missing_as_category and missing.any():
            raise DataError("missing sentinel left in data encoded with a missing category")
        if not self.missing_as_category and missing.any():
            raise DataError("missing responses present but missing_as_category is off")
        if np.any(codes < 0) or np.any(codes >= categories[None, :]):
            raise DataError("out-of-range code")
        if self.person_ids is not None and len(self.person_ids) != n:
            raise DataError("person_ids must have one entry per row")
        for arr in (codes, categories, correct):
            arr.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "categories", categories)
        object.__setattr__(self, "correct", correct)
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if self.theta is not None:
            theta = np.array(self.theta, dtype=float, copy=True)
            theta.setflags(write=False)
            object.__setattr__(self, "theta", theta)

    @property
    def n_persons(self) -> int:
        return self.codes.shape[0]

    @property
    def n_items(self) -> int:
        return self.codes.shape[1]

    @property
    def n_options(self) -> np.ndarray:
        """Number of real (non-missing) response options per item."""
        return self.categories - 1 if self.missing_as_category else self.categories.copy()

    @property
    def width(self) -> int:
        return int(self.categories.sum())

    def subset(self, rows=None, items=None) -> ResponseMatrix:
        """Row and/or item subset; the person/true-theta metadata follows the rows."""
        rows = np.arange(self.n_persons) if rows is None else np.asarray(rows, dtype=np.int64)
        items = np.arange(self.n_items) if items is None else np.asarray(items, dtype=np.int64)
        pids = None if self.person_ids is None else tuple(self.person_ids[i] for i in rows)
        return ResponseMatrix(
            codes=self.codes[np.ix_(rows, items)],
            categories=self.categories[items],
            correct=self.correct[items],
            item_ids=tuple(self.item_ids[i] for i in items),
            missing_as_category=self.missing_as_category,
            person_ids=pids,
            theta=None if self.theta is None else self.theta[rows],
        )

    def __eq__(self, other):
        if not isinstance(other, ResponseMatrix):
            return NotImplemented
        return (
            np.array_equal(self.codes, other.codes)
            and np.array_equal(self.categories, other.categories)
            and np.array_equal(self.correct, other.correct)
            and self.item_ids == other.item_ids
            and self.missing_as_category == other.missing_as_category
            and self.person_ids == other.person_ids
        )

    __hash__ = None

    def ids(self) -> tuple[str, ...]:
        if self.person_ids is not None:
            return self.person_ids
        return tuple(str(i) for i in range(self.n_persons))


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    fold_count: int = 5

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.fold_count < 2:
            raise ValueError("fold_count must be at least 2")


def block_offsets(categories) -> np.ndarray:
    """Start index of every item's block in the concatenated one-hot layout."""
    categories = np.asarray(categories, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(categories)[:-1]])


def one_hot(rm: ResponseMatrix, rows=None) -> np.ndarray:
    """Concatenated per-item one-hot blocks, shape ``(len(rows), sum(M_j))``."""
    codes = rm.codes if rows is None else rm.codes[np.asarray(rows, dtype=np.int64)]
    return one_hot_codes(codes, rm.categories)


def one_hot_codes(codes: np.ndarray, categories) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    offsets = block_offsets(categories)
    out = np.zeros((codes.shape[0], int(np.sum(categories))))
    rows = np.repeat(np.arange(codes.shape[0]), codes.shape[1])
    out[rows, (codes + offsets[None, :]).ravel()] = 1.0
    return out


def decode(batch: np.ndarray, categories) -> np.ndarray:
    """Inverse of :func:`one_hot_codes`."""
    offsets = block_offsets(categories)
    return np.stack(
        [np.argmax(batch[:, o : o + m], axis=1) for o, m in zip(offsets, categories)], axis=1
    )


def _read_key(path) -> dict[str, tuple[int, int | None]]:
    key = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"item", "correct"} <= set(reader.fieldnames):
            raise DataError(f"{path}: key file needs 'item' and 'correct' columns")
        for line, row in enumerate(reader, start=2):
            n_opt = row.get("n_options")
            try:
                key[row["item"].strip()] = (
                    int(row["correct"]),
                    int(n_opt) if n_opt not in (None, "") else None,
                )
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}:{line}: malformed key row ({exc})") from None
    return key


def load_csv(path, key_path, missing_as_category: bool = False) -> ResponseMatrix:
    """Read a response CSV plus an answer-key CSV.

    The response file has a header of item ids and one row of integer codes per
    test taker; blank cells and ``-1`` mark missing responses. The key file has
    columns ``item, correct`` and optionally ``n_options``; without
    ``n_options`` the option count is taken from the largest observed code.
    """
    key = _read_key(key_path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: malformed row length {len(row)} != {len(header)}")
            parsed = []
            for cell in row:
                cell = cell.strip()
                if cell == "":
                    parsed.append(MISSING)
                    continue
                try:
                    parsed.append(int(cell))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-integer code {cell!r}") from None
            rows.append(parsed)
    unknown = sorted(set(key) - set(header))
    if unknown:
        raise DataError(f"unknown item in key: {unknown[0]}")
    absent = [h for h in header if h not in key]
    if absent:
        raise DataError(f"item without answer key: {absent[0]}")
    codes = np.array(rows, dtype=np.int64).reshape(len(rows), len(header))
    if np.any(codes < MISSING):
        raise DataError("out-of-range code")
    correct = np.array([key[h][0] for h in header], dtype=np.int64)
    n_options = []
    for j, h in enumerate(header):
        declared = key[h][1]
        n_options.append(declared if declared is not None else max(int(codes[:, j].max()) + 1, 2))
    n_options = np.array(n_options, dtype=np.int64)
    if np.any(codes >= n_options[None, :]):
        raise DataError("out-of-range code")
    if missing_as_category:
        codes = np.where(codes == MISSING, n_options[None, :], codes)
        categories = n_options + 1
    else:
        if np.any(codes == MISSING):
            raise DataError("missing responses present; enable the missing category to keep them")
        categories = n_options
    return ResponseMatrix(codes, categories, correct, tuple(header), missing_as_category)


def write_csv(rm: ResponseMatrix, path, key_path=None) -> None:
    """Write responses (missing category back to blank) and optionally the key."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(rm.item_ids)
        miss = rm.categories - 1
        for row in rm.codes:
            if rm.missing_as_category:
                writer.writerow(["" if c == m else int(c) for c, m in zip(row, miss)])
            else:
                writer.writerow([int(c) for c in row])
    if key_path is not None:
        with open(key_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["item", "correct", "n_options"])
            for item, c, m in zip(rm.item_ids, rm.correct, rm.n_options):
                writer.writerow([item, int(c), int(m)])


def _permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def split(rm: ResponseMatrix, spec: SplitSpec = SplitSpec()) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test row indices; ``round(N * train_fraction)`` rows go to train."""
    n = rm.n_persons
    if n < 2:
        raise DataError("need at least two persons to split")
    n_train = min(max(int(round(n * spec.train_fraction)), 1), n - 1)
    perm = _permutation(n, spec.seed)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def folds(rm: ResponseMatrix, spec: SplitSpec = SplitSpec()) -> list[tuple[np.ndarray, np.ndarray]]:
    """K-fold (train, holdout) index pairs; the first ``N mod K`` folds get one extra row."""
    n = rm.n_persons
    if n < spec.fold_count:
        raise DataError(f"N={n} is smaller than fold_count={spec.fold_count}")
    parts = np.array_split(_permutation(n, spec.seed), spec.fold_count)
    out = []
    for k, hold in enumerate(parts):
        train = np.concatenate([p for i, p in enumerate(parts) if i != k])
        out.append((np.sort(train), np.sort(hold)))
    return out


def sample_indices(n_total: int, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Indices of ``n`` sampled rows and of the remaining rows."""
    if n < 0 or n > n_total:
        raise DataError(f"cannot sample {n} rows out of {n_total}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n_total, size=n, replace=False))
    rest = np.setdiff1d(np.arange(n_total), chosen, assume_unique=True)
    return chosen, rest


def sample_without_replacement(rm: ResponseMatrix, n: int, seed) -> tuple[ResponseMatrix, ResponseMatrix]:
    """Sample ``n`` test takers; the complement is every row not sampled."""
    chosen, rest = sample_indices(rm.n_persons, n, seed)
    return rm.subset(rows=chosen), rm.subset(rows=rest)
