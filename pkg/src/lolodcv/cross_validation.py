"""Level-aware folds, cross-validated deviance curves and penalty selection."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import DataError, DegenerateError
from .features import Dataset, DesignMatrix, _open_text
from .glm_poisson import _check_y, unit_deviance
from .lasso_path import LambdaGrid, LassoPath, _matrix, fit_path

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """Ordered map, threaded when ``jobs > 1``.

    The coordinate-descent kernel releases the GIL, so threads give real
    concurrency; results come back in input order either way.
    """
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class FoldPlan:
    """Fold index (0..n_folds-1) of every observation."""

    assignment: np.ndarray
    n_folds: int
    level_key: str | None = None
    seed: int = 0
    fold_levels: tuple[tuple[str, ...], ...] = ()

    def split(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.assignment == k
        return np.flatnonzero(~test), np.flatnonzero(test)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.n_folds)


def folds_from_levels(levels: Sequence, n_folds: int, seed: int = 0, order: Sequence | None = None) -> tuple[np.ndarray, tuple]:
    """Assign whole levels to folds.

    With as many folds as levels each fold holds one level, in ``order``
    (default: sorted labels).  With fewer folds the levels are shuffled by
    ``seed`` and dealt round-robin.
    """
    levels = np.asarray(levels, dtype=object)
    present = set(levels.tolist())
    order = [lv for lv in (order if order is not None else sorted(present)) if lv in present]
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    if n_folds > len(order):
        raise DataError(f"{n_folds} folds requested but only {len(order)} distinct levels")
    if n_folds == len(order):
        dealt = order
    else:
        perm = np.random.default_rng(seed).permutation(len(order))
        dealt = [order[i] for i in perm]
    fold_of = {lv: i % n_folds for i, lv in enumerate(dealt)}
    assignment = np.array([fold_of[lv] for lv in levels], dtype=np.int64)
    members = tuple(tuple(lv for lv in dealt if fold_of[lv] == k) for k in range(n_folds))
    return assignment, members


def build_folds(dataset: Dataset, level_key: str | None, n_folds: int, seed: int = 0) -> FoldPlan:
    """Fold plan over the rows of ``dataset``.

    ``level_key`` keeps every level of that nominal variable inside one fold;
    ``n_folds`` equal to the number of levels is leave-one-level-out.  Without
    a level key rows are partitioned at random by ``seed``.
    """
    if n_folds < 2:
        raise DataError("need at least 2 folds")
    if level_key is None:
        n = dataset.n
        if n_folds > n:
            raise DataError(f"{n_folds} folds for {n} observations")
        perm = np.random.default_rng(seed).permutation(n)
        assignment = np.empty(n, dtype=np.int64)
        assignment[perm] = np.arange(n) % n_folds
        return FoldPlan(assignment, n_folds, None, seed)
    spec = dataset.spec(level_key)
    if not spec.is_nominal:
        raise DataError(f"level key {level_key!r} must be nominal")
    assignment, members = folds_from_levels(dataset.columns[level_key], n_folds, seed, order=spec.levels)
    return FoldPlan(assignment, n_folds, level_key, seed, members)


@dataclass(frozen=True)
class CvCurve:
    grid: LambdaGrid
    mean_score: np.ndarray
    score_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    lambda_1se_literal: float
    fold_scores: np.ndarray
    folds_used: tuple[int, ...]
    path: LassoPath | None = None

    @property
    def n_effective(self) -> int:
        return len(self.folds_used)

    @property
    def index_min(self) -> int:
        return self.grid.index(self.lambda_min)

    @property
    def index_1se(self) -> int:
        return self.grid.index(self.lambda_1se)


def _argmin_largest(values: np.ndarray, scores: np.ndarray) -> int:
    best = scores.min()
    ties = np.flatnonzero(scores == best)
    return int(ties[np.argmax(values[ties])])


def select_lambda(grid_values, mean_score, score_se) -> tuple[float, float]:
    """``(lambda_min, lambda_1se)`` from a CV curve.

    lambda_min minimizes the mean score; lambda_1se is the largest penalty
    whose mean score is within one standard error of that minimum.  Ties go
    to the larger penalty.  Non-finite scores are ignored.
    """
    values = np.asarray(grid_values, dtype=float)
    m = np.asarray(mean_score, dtype=float)
    se = np.asarray(score_se, dtype=float)
    ok = np.isfinite(m)
    if not ok.any():
        raise DegenerateError("no finite cross-validation score")
    m = np.where(ok, m, np.inf)
    i = _argmin_largest(values, m)
    within = np.flatnonzero(m <= m[i] + se[i])
    j = int(within[np.argmax(values[within])])
    return float(values[i]), float(values[j])


def select_lambda_literal(grid_values, mean_score, score_se) -> float:
    """Minimizer of ``score + se`` (kept as a diagnostic next to lambda_1se)."""
    values = np.asarray(grid_values, dtype=float)
    s = np.asarray(mean_score, dtype=float) + np.asarray(score_se, dtype=float)
    s = np.where(np.isfinite(s), s, np.inf)
    if not np.isfinite(s).any():
        raise DegenerateError("no finite cross-validation score")
    return float(values[_argmin_largest(values, s)])


def _fold_scores(X, y, train, test, grid, solver_opts):
    path = fit_path(X[train], y[train], grid, **solver_opts)
    eta = path.intercepts[:, None] + path.betas @ X[test].T
    mu = np.exp(eta)
    return unit_deviance(y[test][None, :], mu).mean(axis=1)


def cv_curve(
    design,
    y,
    folds: FoldPlan,
    grid: LambdaGrid,
    *,
    jobs: int = 1,
    full_path: bool = True,
    **solver_opts,
) -> CvCurve:
    """Held-out Poisson deviance per observation at every grid value.

    ``grid`` must come from the whole training set so scores line up across
    folds.  Folds whose training part has an all-zero response are skipped
    with a warning.  With ``full_path`` the path on all rows is attached so
    active sets at the selected penalties are available.
    """
    X = _matrix(design)
    y = _check_y(y, X.shape[0])
    if folds.assignment.shape[0] != X.shape[0]:
        raise DataError("fold plan and design have different row counts")
    usable = []
    for k in range(folds.n_folds):
        train, test = folds.split(k)
        if not test.size:
            continue
        if not np.any(y[train]):
            log.warning("cv fold %d skipped: training response is all zero", k)
            continue
        usable.append((k, train, test))
    if not usable:
        raise DegenerateError("no usable cross-validation fold")
    scores = parallel_map(lambda u: _fold_scores(X, y, u[1], u[2], grid, solver_opts), usable, jobs)
    fold_scores = np.vstack(scores)
    kept = len(usable)
    mean = fold_scores.mean(axis=0)
    se = fold_scores.std(axis=0, ddof=1) / np.sqrt(kept) if kept > 1 else np.zeros(grid.count)
    if kept < folds.n_folds:
        log.warning("cv: %d of %d folds used", kept, folds.n_folds)
    lam_min, lam_1se = select_lambda(grid.values, mean, se)
    literal = select_lambda_literal(grid.values, mean, se)
    path = fit_path(design, y, grid, **solver_opts) if full_path else None
    return CvCurve(
        grid=grid,
        mean_score=mean,
        score_se=se,
        lambda_min=lam_min,
        lambda_1se=lam_1se,
        lambda_1se_literal=literal,
        fold_scores=fold_scores,
        folds_used=tuple(k for k, _, _ in usable),
        path=path,
    )


def write_curve(curve: CvCurve, dest) -> None:
    """Rows of (lambda, mean_score, score_se, n_active) plus a footer record."""
    n_active = curve.path.n_active() if curve.path is not None else np.full(curve.grid.count, -1)
    with _open_text(dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "mean_score", "score_se", "n_active"])
        for lam, m, s, a in zip(curve.grid.values, curve.mean_score, curve.score_se, n_active):
            writer.writerow([repr(float(lam)), repr(float(m)), repr(float(s)), int(a)])
        writer.writerow(["#selected", f"lambda_min={curve.lambda_min!r}", f"lambda_1se={curve.lambda_1se!r}",
                         f"lambda_1se_literal={curve.lambda_1se_literal!r}"])
