"""Leave-one-level-out double cross-validation.

The outer loop holds out one level (by default one village) at a time.  On
the remaining rows it rebuilds the design from scratch (quantile edges and
scaling included), runs a full inner cross-validation over a penalty grid
fitted on those rows, refits an unpenalized Poisson GLM on the groups active
at lambda_min and at lambda_1se, and predicts the held-out level with each
refit.  Which groups were active at every outer step is kept in a presence
matrix.

Also here: re-predicting with a fixed set of groups by leave-one-level-out
CV, and a backward-elimination GLM baseline.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import chi2

from .cross_validation import FoldPlan, build_folds, cv_curve, parallel_map
from .errors import DataError, NumericalError
from .features import Dataset, DesignMatrix, build_design, canonical_groups, main_effect_variables, normalize_scenario
from .glm_poisson import Coefficients, fit_irls, predict_mu, unit_deviance
from .lasso_path import build_grid, default_min_ratio, lambda_max

log = logging.getLogger(__name__)

RULES = ("lambda_min", "lambda_1se")
DEFAULT_SEED = 2015
DEFAULT_WHITELIST = ("Season:NDVI",)


@dataclass(frozen=True)
class DcvConfig:
    """Settings of one LOLO-DCV run.

    ``outer_key`` defaults to the schema's fixed-effect-group variable
    (village).  ``outer_folds=None`` means one fold per level.  The inner CV
    groups by ``inner_key`` (default: the outer key) into
    ``min(9, levels left)`` folds unless ``inner_folds`` is given; set
    ``inner_random=True`` for a plain random row partition instead.
    """

    outer_key: str | None = None
    outer_folds: int | None = None
    inner_key: str | None = None
    inner_folds: int | None = None
    inner_random: bool = False
    grid_count: int = 100
    grid_min_ratio: float | None = None
    interactions: bool = True
    seed: int = DEFAULT_SEED
    jobs: int = 1


@dataclass(frozen=True)
class FoldRecord:
    fold: int
    levels: tuple[str, ...]
    test_index: np.ndarray
    n_train: int
    lambda_min: float
    lambda_1se: float
    lambda_1se_literal: float
    active: dict
    coefficients: dict
    columns: tuple[str, ...]
    predictions: dict
    cv_score: dict
    failed: bool = False
    message: str = ""

    def test_deviance(self, y: np.ndarray, rule: str) -> float:
        """Mean held-out deviance of this fold's predictions."""
        yt = y[self.test_index]
        return float(unit_deviance(yt, np.maximum(self.predictions[rule], 1e-300)).mean())


@dataclass(frozen=True)
class PresenceMatrix:
    """0/1 matrix (outer steps x groups) for each penalty rule."""

    groups: tuple[str, ...]
    steps: tuple[str, ...]
    matrices: dict

    def __getitem__(self, rule: str) -> np.ndarray:
        return self.matrices[rule]

    def frequencies(self, rule: str) -> np.ndarray:
        m = self.matrices[rule]
        return 100.0 * m.sum(axis=0) / m.shape[0]


@dataclass(frozen=True)
class DcvResult:
    scenario: str
    config: DcvConfig
    outer_key: str
    folds: list
    y: np.ndarray
    fold_id: np.ndarray
    predictions: dict
    presence: PresenceMatrix
    failed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def yhat_min(self) -> np.ndarray:
        return self.predictions["lambda_min"]

    @property
    def yhat_1se(self) -> np.ndarray:
        return self.predictions["lambda_1se"]


def default_level_key(dataset: Dataset) -> str:
    for role in ("fixed-effect-group", "level-key"):
        for v in dataset.schema:
            if v.role == role:
                return v.name
    raise DataError("no level variable in schema; pass an explicit level key")


def _derived_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def debias_refit(design: DesignMatrix, y, active: Sequence[str]) -> Coefficients:
    """Unpenalized Poisson fit on the columns of ``active`` groups plus the
    intercept, returned in the original (unstandardized) frame."""
    cols = design.columns_of(active) if active else np.empty(0, dtype=np.int64)
    fit = fit_irls(design, y, cols)
    return fit.coefficients.to_frame("original", design)


def _outer_fold(dataset: Dataset, scenario: str, config: DcvConfig, plan: FoldPlan, k: int) -> FoldRecord:
    train, test = plan.split(k)
    ea, et = dataset.take(train), dataset.take(test)
    y_a = ea.y
    levels = plan.fold_levels[k] if plan.fold_levels else ()
    try:
        design = build_design(ea, scenario, interactions=config.interactions)
        lmax = lambda_max(design, y_a)
        if lmax <= 0:
            raise NumericalError("degenerate training response")
        ratio = config.grid_min_ratio or default_min_ratio(design.n, design.p)
        grid = build_grid(lmax, config.grid_count, ratio)
        if config.inner_random:
            inner_key, n_levels = None, ea.n
        else:
            inner_key = config.inner_key or plan.level_key
            n_levels = len(set(ea.columns[inner_key].tolist()))
        n_inner = config.inner_folds or min(9, n_levels)
        inner = build_folds(ea, inner_key, n_inner, _derived_seed(config.seed, k))
        curve = cv_curve(design, y_a, inner, grid)
        test_design = design.transform(et)
        lams = {"lambda_min": curve.lambda_min, "lambda_1se": curve.lambda_1se}
        active, coefs, preds, scores = {}, {}, {}, {}
        for rule, lam in lams.items():
            idx = grid.index(lam)
            active[rule] = curve.path.active_set(idx)
            coefs[rule] = debias_refit(design, y_a, active[rule])
            preds[rule] = predict_mu(coefs[rule], test_design)
            scores[rule] = float(curve.mean_score[idx])
        return FoldRecord(
            fold=k,
            levels=levels,
            test_index=test,
            n_train=len(train),
            lambda_min=curve.lambda_min,
            lambda_1se=curve.lambda_1se,
            lambda_1se_literal=curve.lambda_1se_literal,
            active=active,
            coefficients=coefs,
            columns=tuple(design.columns),
            predictions=preds,
            cv_score=scores,
        )
    except NumericalError as exc:
        log.warning("outer fold %d failed (%s); using intercept-only predictions", k, exc)
        mean = float(y_a.mean())
        pred = np.full(len(test), mean)
        nan = float("nan")
        return FoldRecord(
            fold=k,
            levels=levels,
            test_index=test,
            n_train=len(train),
            lambda_min=nan,
            lambda_1se=nan,
            lambda_1se_literal=nan,
            active={r: () for r in RULES},
            coefficients={r: None for r in RULES},
            columns=(),
            predictions={r: pred.copy() for r in RULES},
            cv_score={r: nan for r in RULES},
            failed=True,
            message=str(exc),
        )
    except DataError as exc:
        raise DataError(f"outer fold {k} ({', '.join(levels)}): {exc}") from exc


def _outer_plan(dataset: Dataset, config: DcvConfig) -> FoldPlan:
    key = config.outer_key or default_level_key(dataset)
    n_levels = len(set(dataset.columns[key].tolist()))
    if n_levels < 3:
        raise DataError(f"outer level key {key!r} has {n_levels} levels; need at least 3")
    return build_folds(dataset, key, config.outer_folds or n_levels, config.seed)


def run_lolo_dcv(dataset: Dataset, scenario: str, config: DcvConfig | None = None) -> DcvResult:
    """Run the double cross-validation and assemble hold-out predictions."""
    config = config or DcvConfig()
    scenario = normalize_scenario(scenario)
    main_effect_variables(dataset.schema, scenario)
    plan = _outer_plan(dataset, config)
    records = parallel_map(lambda k: _outer_fold(dataset, scenario, config, plan, k), range(plan.n_folds), config.jobs)
    n = dataset.n
    preds = {r: np.full(n, np.nan) for r in RULES}
    seen = np.zeros(n, dtype=np.int64)
    failed = np.zeros(n, dtype=bool)
    for rec in records:
        seen[rec.test_index] += 1
        failed[rec.test_index] = rec.failed
        for r in RULES:
            preds[r][rec.test_index] = rec.predictions[r]
    if np.any(seen != 1):
        raise AssertionError("outer folds do not partition the observations")
    groups = tuple(canonical_groups(dataset.schema, scenario, config.interactions))
    pos = {g: i for i, g in enumerate(groups)}
    mats = {}
    for r in RULES:
        m = np.zeros((len(records), len(groups)), dtype=np.int64)
        for i, rec in enumerate(records):
            for g in rec.active[r]:
                m[i, pos[g]] = 1
        mats[r] = m
    steps = tuple("|".join(rec.levels) or str(rec.fold) for rec in records)
    return DcvResult(
        scenario=scenario,
        config=config,
        outer_key=plan.level_key,
        folds=records,
        y=dataset.y.copy(),
        fold_id=plan.assignment.copy(),
        predictions=preds,
        presence=PresenceMatrix(groups, steps, mats),
        failed=failed,
    )


# ---------------------------------------------------------------------------
# Fixed-set refits
# ---------------------------------------------------------------------------


def level_cv_predict(
    dataset: Dataset,
    scenario: str,
    groups: Sequence[str],
    outer_key: str | None = None,
    outer_folds: int | None = None,
    seed: int = DEFAULT_SEED,
    jobs: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Hold-out predictions of an unpenalized GLM on a fixed set of groups.

    Each outer fold rebuilds the design on its training rows only.  A group
    that cannot be formed on some training part (all its columns constant)
    is left out of that fold's model.  Returns (predictions, fold index).
    """
    scenario = normalize_scenario(scenario)
    config = DcvConfig(outer_key=outer_key, outer_folds=outer_folds, seed=seed)
    plan = _outer_plan(dataset, config)
    groups = list(dict.fromkeys(groups))
    pairs = [g for g in groups if ":" in g]

    def one(k):
        train, test = plan.split(k)
        ea, et = dataset.take(train), dataset.take(test)
        if not groups:
            return test, np.full(len(test), ea.y.mean())
        design = build_design(ea, scenario, interactions=False, pairs=pairs or None)
        present = [g for g in groups if g in design.groups]
        missing = sorted(set(groups) - set(present))
        if missing:
            log.warning("fold %d: group(s) %s unavailable on the training rows", k, missing)
        coef = debias_refit(design, ea.y, present)
        return test, predict_mu(coef, design.transform(et))

    yhat = np.full(dataset.n, np.nan)
    for test, pred in parallel_map(one, range(plan.n_folds), jobs):
        yhat[test] = pred
    return yhat, plan.assignment.copy()


@dataclass(frozen=True)
class BaselineResult:
    selected: tuple[str, ...]
    predictions: np.ndarray
    fold_id: np.ndarray
    history: tuple[tuple[str, float], ...]
    initial: tuple[str, ...]


def _lr_pvalue(design, y, current, group, full_fit):
    reduced = [g for g in current if g != group]
    cols = design.columns_of(reduced) if reduced else np.empty(0, dtype=np.int64)
    red_fit = fit_irls(design, y, cols)
    df = len(set(design.columns_of([group]).tolist()) & set(full_fit.columns.tolist()))
    if df == 0:
        return 1.0
    stat = max(red_fit.deviance - full_fit.deviance, 0.0)
    return float(chi2.sf(stat, df))


def backward_glm_baseline(
    dataset: Dataset,
    scenario: str,
    alpha: float = 0.05,
    interactions: Sequence[str] = DEFAULT_WHITELIST,
    outer_key: str | None = None,
    seed: int = DEFAULT_SEED,
    jobs: int = 1,
) -> BaselineResult:
    """Backward elimination by likelihood-ratio tests, then level CV.

    Starts from all main effects plus the whitelisted interactions that exist
    in the scenario.  Each round refits the model, computes the LR p-value of
    every removable term and drops the least significant one if its p-value
    exceeds ``alpha``.  A main effect stays while an interaction containing it
    is in the model.
    """
    if not 0 < alpha <= 1:
        raise DataError("alpha must lie in (0, 1]")
    scenario = normalize_scenario(scenario)
    mains = [v.name for v in main_effect_variables(dataset.schema, scenario)]
    pairs = []
    for pair in interactions:
        a, b = pair.split(":")
        if a in mains and b in mains:
            pairs.append(pair)
        else:
            log.info("baseline: interaction %s not available in scenario %s", pair, scenario)
    design = build_design(dataset, scenario, interactions=False, pairs=pairs or None)
    y = dataset.y
    current = list(design.group_names)
    full = fit_irls(design, y, design.columns_of(current))
    if full.dropped:
        # dependent columns carry no degrees of freedom in the LR tests below
        log.warning("baseline: initial model is rank deficient; columns %s dropped", list(full.dropped))
    initial = tuple(current)
    history = []
    while current:
        inter = [g for g in current if ":" in g]
        removable = [g for g in current if ":" in g or not any(g in i.split(":") for i in inter)]
        pvals = [(_lr_pvalue(design, y, current, g, full), g) for g in removable]
        worst_p, worst = max(pvals, key=lambda t: t[0])
        if worst_p <= alpha:
            break
        current.remove(worst)
        history.append((worst, worst_p))
        cols = design.columns_of(current) if current else np.empty(0, dtype=np.int64)
        full = fit_irls(design, y, cols)
    yhat, fold_id = level_cv_predict(dataset, scenario, current, outer_key=outer_key, seed=seed, jobs=jobs)
    return BaselineResult(tuple(current), yhat, fold_id, tuple(history), initial)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_dcv_result(result: DcvResult, outdir) -> None:
    """Write predictions, presence matrices, the fold log and a config echo."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_rows(
        outdir / "predictions.csv",
        ["row_id", "y", "yhat_min", "yhat_1se", "fold", "failed"],
        [
            [i, int(result.y[i]), _fmt(result.yhat_min[i]), _fmt(result.yhat_1se[i]), int(result.fold_id[i]), int(result.failed[i])]
            for i in range(len(result.y))
        ],
    )
    for rule, suffix in (("lambda_min", "min"), ("lambda_1se", "1se")):
        m = result.presence[rule]
        _write_rows(
            outdir / f"presence_{suffix}.csv",
            ["step"] + list(result.presence.groups),
            [[step] + m[i].tolist() for i, step in enumerate(result.presence.steps)],
        )
    rows = []
    for rec in result.folds:
        rows.append([
            rec.fold,
            "|".join(rec.levels),
            rec.n_train,
            len(rec.test_index),
            _fmt(rec.lambda_min),
            _fmt(rec.lambda_1se),
            _fmt(rec.lambda_1se_literal),
            _fmt(rec.cv_score["lambda_min"]),
            _fmt(rec.cv_score["lambda_1se"]),
            _fmt(rec.test_deviance(result.y, "lambda_min")),
            _fmt(rec.test_deviance(result.y, "lambda_1se")),
            "|".join(rec.active["lambda_min"]),
            "|".join(rec.active["lambda_1se"]),
            int(rec.failed),
            rec.message,
        ])
    _write_rows(
        outdir / "folds.csv",
        ["fold", "levels", "n_train", "n_test", "lambda_min", "lambda_1se", "lambda_1se_literal",
         "cv_score_min", "cv_score_1se", "test_deviance_min", "test_deviance_1se",
         "active_min", "active_1se", "failed", "message"],
        rows,
    )
    with open(outdir / "config.txt", "w", encoding="utf-8") as fh:
        fh.write(f"scenario={result.scenario}\n")
        fh.write(f"outer_key={result.outer_key}\n")
        for key, value in asdict(result.config).items():
            if key != "jobs":
                fh.write(f"{key}={value}\n")
