"""L1-penalized Poisson regression along a decreasing penalty grid.

For a fixed penalty ``lam`` the solver minimizes

    (1/n) * sum(mu_i - y_i * eta_i) + lam * ||beta||_1,   eta = b0 + X beta

(the intercept is not penalized) by an outer IRLS loop: each pass builds the
weighted least-squares approximation of the smooth part at the current
iterate and solves its lasso problem by cyclic coordinate descent with soft
thresholding.  A backtracking line search on the exact objective guards the
outer step.  The penalty is scaled by ``1/n`` so one grid is comparable across
folds of different sizes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConvergenceError, DataError, DegenerateError, NumericalError
from .features import DesignMatrix, _open_text
from .glm_poisson import Coefficients, _check_y, deviance

log = logging.getLogger(__name__)

ETA_CLAMP = 30.0
WEIGHT_FLOOR = 1e-10
CD_TOL = 1e-9
KKT_TOL = 1e-7
ACTIVE_SWEEPS = 100_000


# ---------------------------------------------------------------------------
# Coordinate-descent kernel
# ---------------------------------------------------------------------------


@numba.njit(cache=True, nogil=True, fastmath={"reassoc", "contract", "nsz", "arcp"})
def _sweep(X, w, r, beta, xv, lam, inv_n, sw, b0, idx, n_idx):
    n = X.shape[0]
    dmax = 0.0
    for k in range(n_idx):
        j = idx[k]
        v = xv[j]
        if v <= 1e-14:
            continue
        old = beta[j]
        g = 0.0
        for i in range(n):
            g += w[i] * X[i, j] * r[i]
        g = g * inv_n + v * old
        if g > lam:
            new = (g - lam) / v
        elif g < -lam:
            new = (g + lam) / v
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            beta[j] = new
            for i in range(n):
                r[i] -= d * X[i, j]
            # change in gradient units; never looser than the raw change
            dg = abs(d) * max(1.0, v)
            if dg > dmax:
                dmax = dg
    # unpenalized intercept
    s = 0.0
    for i in range(n):
        s += w[i] * r[i]
    d0 = s / sw
    if d0 != 0.0:
        for i in range(n):
            r[i] -= d0
        b0 += d0
        dg = abs(d0) * max(1.0, sw * inv_n)
        if dg > dmax:
            dmax = dg
    return b0, dmax


@numba.njit(cache=True, nogil=True, fastmath={"reassoc", "contract", "nsz", "arcp"})
def _cd_weighted_lasso(X, z, w, lam, b0, beta, tol, max_cycles, max_active_sweeps):
    """Minimize (1/2n) sum w (z - b0 - X beta)^2 + lam |beta|_1 in place.

    Alternates one full cycle with sweeps over the current nonzero set until
    the largest coefficient change of a full cycle, times max(1, curvature)
    of its coordinate, is below ``tol``.  At most
    ``max_cycles`` full cycles, each followed by up to ``max_active_sweeps``
    active-set sweeps.  Returns (b0, full cycles, converged).
    """
    n, p = X.shape
    inv_n = 1.0 / n
    r = z.copy()
    for i in range(n):
        r[i] -= b0
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= beta[j] * X[i, j]
    xv = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += w[i] * X[i, j] * X[i, j]
        xv[j] = acc * inv_n
    sw = 0.0
    for i in range(n):
        sw += w[i]
    full = np.arange(p)
    act = np.empty(p, dtype=np.int64)
    cycles = 0
    while cycles < max_cycles:
        b0, dmax = _sweep(X, w, r, beta, xv, lam, inv_n, sw, b0, full, p)
        cycles += 1
        if dmax < tol:
            return b0, cycles, True
        n_act = 0
        for j in range(p):
            if beta[j] != 0.0:
                act[n_act] = j
                n_act += 1
        for _ in range(max_active_sweeps):
            b0, dmax = _sweep(X, w, r, beta, xv, lam, inv_n, sw, b0, act, n_act)
            if dmax < tol:
                break
    return b0, cycles, False


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LambdaGrid:
    values: np.ndarray
    lambda_max: float
    count: int
    min_ratio: float

    def __len__(self) -> int:
        return self.count

    def index(self, lam: float) -> int:
        hits = np.flatnonzero(self.values == lam)
        if not hits.size:
            raise DataError(f"{lam!r} is not a grid value")
        return int(hits[0])


def default_min_ratio(n: int, p: int) -> float:
    return 0.01 if n > p else 0.05


def build_grid(lambda_max: float, count: int = 100, min_ratio: float = 0.01) -> LambdaGrid:
    """Log-uniform grid from ``lambda_max`` down to ``lambda_max * min_ratio``."""
    if not lambda_max > 0 or not np.isfinite(lambda_max):
        raise DataError(f"lambda_max must be positive, got {lambda_max!r}")
    if count < 2:
        raise DataError("grid needs at least 2 points")
    if not 0 < min_ratio < 1:
        raise DataError("min_ratio must lie in (0, 1)")
    values = lambda_max * min_ratio ** (np.arange(count) / (count - 1))
    return LambdaGrid(values=values, lambda_max=float(lambda_max), count=int(count), min_ratio=float(min_ratio))


def _matrix(design) -> np.ndarray:
    X = design.values if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)
    return np.asfortranarray(X, dtype=float)


def lambda_max(design, y) -> float:
    """Smallest penalty at which the intercept-only fit satisfies the KKT
    conditions: ``max_j |x_j'(y - ybar)| / n``.  Zero for an all-zero response.
    """
    X = _matrix(design)
    y = _check_y(y, X.shape[0])
    if not np.any(y):
        log.warning("lambda_max: response is identically zero; the path is degenerate")
        return 0.0
    if X.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / X.shape[0])


# ---------------------------------------------------------------------------
# Single-penalty solver
# ---------------------------------------------------------------------------


def penalized_objective(coefficients: Coefficients, design, y, lam: float) -> float:
    """(1/n) negative log-likelihood (without the log y! constant) + lam |beta|_1."""
    X = _matrix(design)
    y = np.asarray(y, dtype=float)
    return _objective(X, y, coefficients.intercept, coefficients.beta, lam)


def _objective(X, y, b0, beta, lam):
    eta = b0 + X @ beta
    with np.errstate(over="ignore"):
        mu = np.exp(eta)
    return float(np.mean(mu - y * eta) + lam * np.sum(np.abs(beta)))


def kkt_violation(coefficients: Coefficients, design, y, lam: float) -> float:
    """Largest violation of the subgradient optimality conditions.

    With ``g = -(1/n) X'(y - mu)``: zero coefficients need ``|g_j| <= lam``,
    nonzero ones ``g_j = -lam * sign(beta_j)``, and the intercept score must
    vanish.
    """
    X = _matrix(design)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    resid = y - np.exp(coefficients.intercept + X @ coefficients.beta)
    g = -(X.T @ resid) / n
    beta = coefficients.beta
    nz = beta != 0
    viol = np.where(nz, np.abs(g + lam * np.sign(beta)), np.maximum(np.abs(g) - lam, 0.0))
    return float(max(abs(resid.sum()) / n, viol.max(initial=0.0)))


def _solve(X, y, lam, b0, beta, lmax, max_outer, max_inner, tol):
    n = X.shape[0]
    ybar = y.mean()
    if lam >= lmax:
        return float(np.log(ybar)), np.zeros(X.shape[1]), 0
    beta = np.array(beta, dtype=float)
    obj = _objective(X, y, b0, beta, lam)
    clamp_warned = False
    viol = np.inf
    for it in range(1, max_outer + 1):
        eta = b0 + X @ beta
        if not clamp_warned and np.any(np.abs(eta) > ETA_CLAMP):
            log.warning("linear predictor clamped to [-%g, %g] inside IRLS", ETA_CLAMP, ETA_CLAMP)
            clamp_warned = True
        eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
        mu = np.exp(eta)
        w = np.maximum(mu, WEIGHT_FLOOR)
        z = eta + (y - mu) / w
        if not np.all(np.isfinite(z)):
            raise NumericalError("non-finite working response")
        new_beta = beta.copy()
        new_b0, _, ok = _cd_weighted_lasso(X, z, w, lam, b0, new_beta, tol, max_inner, ACTIVE_SWEEPS)
        if not ok:
            raise ConvergenceError(f"coordinate descent did not converge in {max_inner} cycles (lambda={lam:g})")
        step_b0, step_beta = new_b0 - b0, new_beta - beta
        t = 1.0
        for _ in range(40):
            cb0, cbeta = b0 + t * step_b0, beta + t * step_beta
            cobj = _objective(X, y, cb0, cbeta, lam)
            if cobj <= obj + 1e-13 * (1.0 + abs(obj)):
                break
            t *= 0.5
        else:
            cb0, cbeta, cobj = b0, beta, obj
        change = max(abs(cb0 - b0), float(np.max(np.abs(cbeta - beta), initial=0.0)))
        b0, beta, obj = cb0, cbeta, cobj
        viol = kkt_violation(Coefficients(b0, beta), X, y, lam)
        if viol < 0.5 * KKT_TOL or change < 1e-13:
            break
    if viol > KKT_TOL:
        raise ConvergenceError(f"KKT violation {viol:.2e} after {it} IRLS passes (lambda={lam:g})")
    return float(b0), beta, it


def fit_penalized(
    design,
    y,
    lam: float,
    warm_start: Coefficients | None = None,
    *,
    max_outer: int = 100,
    max_inner: int = 1000,
    tol: float = CD_TOL,
) -> Coefficients:
    """Solve the L1-penalized Poisson problem at one penalty value.

    Returns standardized-frame coefficients satisfying the KKT conditions to
    within 1e-7 (see :func:`kkt_violation`); raises
    :class:`ConvergenceError` otherwise.
    """
    if lam < 0:
        raise DataError("penalty must be nonnegative")
    X = _matrix(design)
    y = _check_y(y, X.shape[0])
    if not np.any(y):
        raise DegenerateError("response is identically zero")
    lmax = lambda_max(X, y)
    if warm_start is None:
        b0, beta = float(np.log(y.mean())), np.zeros(X.shape[1])
    else:
        if warm_start.frame != "standardized":
            raise DataError("warm start must be in the standardized frame")
        b0, beta = warm_start.intercept, warm_start.beta
    b0, beta, _ = _solve(X, y, lam, b0, beta, lmax, max_outer, max_inner, tol)
    return Coefficients(b0, beta, "standardized")


# ---------------------------------------------------------------------------
# Path
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LassoPath:
    """Solutions on every grid value, largest penalty first."""

    grid: LambdaGrid
    intercepts: np.ndarray
    betas: np.ndarray
    group_names: tuple[str, ...]
    column_groups: np.ndarray
    train_deviance: np.ndarray

    def coefficients(self, index: int) -> Coefficients:
        return Coefficients(float(self.intercepts[index]), self.betas[index].copy(), "standardized")

    def active_set(self, index: int) -> tuple[str, ...]:
        """Groups with at least one nonzero coefficient at grid point ``index``."""
        gids = np.unique(self.column_groups[self.betas[index] != 0])
        return tuple(self.group_names[g] for g in gids)

    @property
    def active_sets(self) -> list[tuple[str, ...]]:
        return [self.active_set(i) for i in range(self.grid.count)]

    def n_active(self) -> np.ndarray:
        return np.array([len(self.active_set(i)) for i in range(self.grid.count)])

    def group_norms(self, index: int) -> np.ndarray:
        out = np.zeros(len(self.group_names))
        np.add.at(out, self.column_groups, self.betas[index] ** 2)
        return np.sqrt(out)


def _groups_of(design, p):
    if isinstance(design, DesignMatrix):
        return tuple(design.group_names), design.column_groups
    return tuple(f"x{j}" for j in range(p)), np.arange(p)


def fit_path(design, y, grid: LambdaGrid, **solver_opts) -> LassoPath:
    """Warm-started solutions over ``grid`` (largest penalty first)."""
    X = _matrix(design)
    y = _check_y(y, X.shape[0])
    if not np.any(y):
        raise DegenerateError("response is identically zero")
    n, p = X.shape
    lmax = lambda_max(X, y)
    max_outer = solver_opts.get("max_outer", 100)
    max_inner = solver_opts.get("max_inner", 1000)
    tol = solver_opts.get("tol", CD_TOL)
    intercepts = np.empty(grid.count)
    betas = np.empty((grid.count, p))
    dev = np.empty(grid.count)
    b0, beta = float(np.log(y.mean())), np.zeros(p)
    for i, lam in enumerate(grid.values):
        try:
            b0, beta, _ = _solve(X, y, lam, b0, beta, lmax, max_outer, max_inner, tol)
        except NumericalError as exc:
            raise type(exc)(f"grid index {i}: {exc}") from exc
        intercepts[i] = b0
        betas[i] = beta
        dev[i] = deviance(y, np.exp(b0 + X @ beta))
    names, col_groups = _groups_of(design, p)
    return LassoPath(grid, intercepts, betas, names, col_groups, dev)


def write_path(path: LassoPath, dest) -> None:
    """One row per (lambda, group) with the group's coefficient L2 norm."""
    with _open_text(dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda_index", "lambda", "group", "coef_norm"])
        for i, lam in enumerate(path.grid.values):
            norms = path.group_norms(i)
            for name, v in zip(path.group_names, norms):
                writer.writerow([i, repr(float(lam)), name, repr(float(v))])
