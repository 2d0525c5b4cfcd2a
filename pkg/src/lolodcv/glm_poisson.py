"""Unpenalized Poisson log-linear model.

The rate of observation i is ``mu_i = exp(intercept + x_i . beta)``.  Fitting
uses Fisher scoring (IRLS, identical to Newton-Raphson for the canonical log
link) with step halving.

Deviance here is the textbook Poisson deviance against the saturated model,
``2 * sum(y log(y/mu) - (y - mu))``.  It differs from a "saturated
log-likelihood is zero" convention only by a constant that depends on ``y``
alone, so any argmin over models fitted to the same data is unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import DataError, NumericalError
from .features import DesignMatrix

log = logging.getLogger(__name__)

FRAMES = ("standardized", "original")


@dataclass(frozen=True)
class Coefficients:
    """Intercept plus one slope per design column.

    ``frame`` says whether the slopes apply to the standardized columns
    (``DesignMatrix.values``) or the unstandardized ones (``DesignMatrix.raw``).
    """

    intercept: float
    beta: np.ndarray
    frame: str = "standardized"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise DataError(f"unknown coefficient frame {self.frame!r}")
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))

    @classmethod
    def null(cls, p: int, intercept: float = 0.0, frame: str = "standardized") -> "Coefficients":
        return cls(float(intercept), np.zeros(p), frame)

    def to_frame(self, frame: str, design: DesignMatrix) -> "Coefficients":
        """Re-express the same linear predictor in another scale frame."""
        if frame == self.frame:
            return self
        if len(self.beta) != design.p:
            raise DataError(f"{len(self.beta)} coefficients for a {design.p}-column design")
        if frame == "original":
            beta = self.beta / design.scale
            intercept = self.intercept - float(np.dot(beta, design.center))
        else:
            beta = self.beta * design.scale
            intercept = self.intercept + float(np.dot(self.beta, design.center))
        return Coefficients(intercept, beta, frame)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta)


@dataclass(frozen=True)
class FitResult:
    coefficients: Coefficients
    log_likelihood: float
    deviance: float
    iterations: int
    converged: bool
    columns: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    dropped: tuple[int, ...] = ()


def _matrix(design, frame: str = "standardized") -> np.ndarray:
    if isinstance(design, DesignMatrix):
        return design.values if frame == "standardized" else design.raw
    return np.asarray(design, dtype=float)


def _check_y(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != n:
        raise DataError(f"response length {y.shape} does not match {n} design rows")
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise DataError("response must be a nonnegative count")
    return y


def linear_predictor(coefficients: Coefficients, design) -> np.ndarray:
    X = _matrix(design, coefficients.frame)
    if X.shape[1] != len(coefficients.beta):
        raise DataError(f"{len(coefficients.beta)} coefficients for a {X.shape[1]}-column design")
    return coefficients.intercept + X @ coefficients.beta


def predict_mu(coefficients: Coefficients, design) -> np.ndarray:
    """Fitted Poisson rates ``exp(intercept + X beta)``."""
    return np.exp(linear_predictor(coefficients, design))


def log_likelihood(coefficients: Coefficients, design, y) -> float:
    """Full Poisson log-likelihood, ``sum(y*eta - exp(eta) - log(y!))``."""
    eta = linear_predictor(coefficients, design)
    y = _check_y(y, eta.shape[0])
    with np.errstate(over="ignore"):
        mu = np.exp(eta)
    bad = np.flatnonzero(~np.isfinite(mu) | ~np.isfinite(eta))
    if bad.size:
        raise NumericalError(f"non-finite linear predictor at row {int(bad[0])}")
    return float(np.sum(y * eta - mu - gammaln(y + 1.0)))


def score(coefficients: Coefficients, design, y) -> tuple[float, np.ndarray]:
    """Gradient of :func:`log_likelihood` w.r.t. (intercept, beta)."""
    X = _matrix(design, coefficients.frame)
    resid = np.asarray(y, dtype=float) - predict_mu(coefficients, design)
    return float(resid.sum()), X.T @ resid


def saturated_log_likelihood(y) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.sum(xlogy(y, y) - y - gammaln(y + 1.0)))


def deviance(y, mu) -> float:
    """Poisson deviance ``2 * sum(y log(y/mu) - (y - mu))`` with 0 log 0 = 0."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise DataError("y and mu lengths differ")
    if np.any(~(mu > 0)):
        raise DataError("deviance needs strictly positive fitted means")
    return float(2.0 * np.sum(xlogy(y, y) - xlogy(y, mu) - (y - mu)))


def unit_deviance(y, mu) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    return 2.0 * (xlogy(y, y) - xlogy(y, mu) - (y - mu))


def independent_columns(X: np.ndarray, rtol: float = 1e-7) -> tuple[list[int], list[int]]:
    """Split columns into a linearly independent leading set and the rest.

    Columns are scanned in order together with an implicit intercept; a
    column whose residual after projection on the columns already kept is
    below ``rtol`` times its norm is reported as dependent.
    """
    n, p = X.shape
    Q = np.empty((n, p + 1))
    Q[:, 0] = 1.0 / np.sqrt(n)
    k = 1
    keep, drop = [], []
    for j in range(p):
        x = X[:, j]
        norm = np.linalg.norm(x)
        r = x.copy()
        for _ in range(2):
            r -= Q[:, :k] @ (Q[:, :k].T @ r)
        rn = np.linalg.norm(r)
        if norm == 0.0 or rn <= rtol * norm:
            drop.append(j)
            continue
        Q[:, k] = r / rn
        k += 1
        keep.append(j)
    return keep, drop


def fit_irls(
    design,
    y,
    columns=None,
    *,
    max_iter: int = 100,
    tol: float = 1e-10,
    grad_tol: float = 1e-8,
) -> FitResult:
    """Maximum-likelihood Poisson fit on the intercept plus ``columns``.

    Works in the standardized frame.  Linearly dependent columns among the
    requested ones are dropped (trailing ones first) and listed in
    ``FitResult.dropped``; their coefficients are zero.  Iteration stops when
    the relative deviance change falls below ``tol`` or the score max-norm
    below ``grad_tol``, capped at ``max_iter``.
    """
    X = _matrix(design)
    n, p = X.shape
    y = _check_y(y, n)
    cols = np.arange(p) if columns is None else np.unique(np.asarray(columns, dtype=np.int64))
    if cols.size and (cols.min() < 0 or cols.max() >= p):
        raise DataError("active column index out of range")
    keep, drop = independent_columns(X[:, cols])
    dropped = tuple(int(cols[j]) for j in drop)
    if dropped:
        log.warning("fit_irls: dropping %d linearly dependent column(s) %s", len(dropped), list(dropped))
    used = cols[keep]
    if n <= used.size + 1:
        log.warning("fit_irls: %d observations for %d parameters", n, used.size + 1)
    A = np.column_stack([np.ones(n), X[:, used]])
    theta = np.zeros(A.shape[1])
    theta[0] = np.log(y.mean() + 0.1)
    eta = A @ theta
    mu = np.exp(eta)
    dev = deviance(y, mu)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = mu
        if not np.all(np.isfinite(w)):
            raise NumericalError("IRLS diverged: non-finite working weights")
        z = eta + (y - mu) / w
        sw = np.sqrt(w)
        target, *_ = np.linalg.lstsq(A * sw[:, None], z * sw, rcond=None)
        step = target - theta
        for _ in range(40):
            cand = theta + step
            eta_c = A @ cand
            with np.errstate(over="ignore"):
                mu_c = np.exp(eta_c)
            if np.all(np.isfinite(mu_c)) and np.all(mu_c > 0):
                dev_c = deviance(y, mu_c)
                if dev_c <= dev + 1e-12 * (abs(dev) + 1.0):
                    break
            step = step / 2.0
        else:
            raise NumericalError("IRLS step halving failed to decrease the deviance")
        rel = abs(dev - dev_c) / (abs(dev_c) + 0.1)
        theta, eta, mu, dev = cand, eta_c, mu_c, dev_c
        grad = A.T @ (y - mu)
        if rel < tol or np.max(np.abs(grad)) < grad_tol:
            converged = True
            break
    if not converged:
        log.warning("fit_irls: no convergence after %d iterations", max_iter)
    beta = np.zeros(p)
    beta[used] = theta[1:]
    coef = Coefficients(float(theta[0]), beta, "standardized")
    return FitResult(
        coefficients=coef,
        log_likelihood=log_likelihood(coef, X, y),
        deviance=dev,
        iterations=it,
        converged=converged,
        columns=used,
        dropped=dropped,
    )
