"""Prediction-quality criteria, frequent variables and summary tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import DataError
from .glm_poisson import unit_deviance

TABLE_COLUMNS = ("Method", "Mean", "Deviance", "Std", "Absolute risk", "Prediction Power (%)")
EXTRA_COLUMN = "Quadratic risk (extra)"
DEFAULT_THRESHOLD = 80.0


@dataclass(frozen=True)
class QualityReport:
    method: str
    mean: float
    deviance: float
    std: float
    absolute_risk: float
    prediction_power: float
    quadratic_risk: float = float("nan")

    def row(self) -> tuple[float, ...]:
        return (self.mean, self.deviance, self.std, self.absolute_risk, self.prediction_power)


def prediction_accuracy(y, yhat) -> np.ndarray:
    """1 where ``-0.5 <= y - yhat <= 0.5`` (both ends inclusive), else 0."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DataError("y and yhat lengths differ")
    d = y - yhat
    return ((d >= -0.5) & (d <= 0.5)).astype(np.int64)


def prediction_power(y, yhat) -> float:
    hits = prediction_accuracy(y, yhat)
    return 100.0 * int(np.count_nonzero(hits)) / hits.size


def holdout_deviance(y, yhat) -> float:
    """Mean Poisson deviance per observation of assembled hold-out predictions."""
    return float(unit_deviance(y, yhat).mean())


def quality_summary(y, yhat, deviance: float | None = None, label: str = "") -> QualityReport:
    """Mean, deviance, std = sqrt(deviance), absolute risk and prediction power.

    ``deviance`` defaults to :func:`holdout_deviance` of the predictions.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.size == 0:
        raise DataError("no observations to summarize")
    if deviance is None:
        deviance = holdout_deviance(y, yhat)
    if deviance < 0:
        raise DataError("deviance must be nonnegative")
    return QualityReport(
        method=label,
        mean=float(yhat.mean()),
        deviance=float(deviance),
        std=float(np.sqrt(deviance)),
        absolute_risk=float(np.mean(np.abs(y - yhat))),
        prediction_power=prediction_power(y, yhat),
        quadratic_risk=float(np.mean((y - yhat) ** 2)),
    )


@dataclass(frozen=True)
class FrequentVariableSet:
    lambda_rule: str
    threshold: float
    members: tuple[str, ...]
    frequencies: dict


def group_frequencies(presence, rule: str) -> dict:
    m = np.asarray(presence[rule])
    if m.shape[0] == 0:
        raise DataError("presence matrix has no rows")
    freq = 100.0 * m.sum(axis=0) / m.shape[0]
    return dict(zip(presence.groups, freq.tolist()))


def frequent_variables(presence, lambda_rule: str, s: float = DEFAULT_THRESHOLD) -> FrequentVariableSet:
    """Groups present in at least ``s`` percent of the outer steps."""
    if not 1 <= s <= 100:
        raise DataError("threshold s must lie in [1, 100]")
    m = np.asarray(presence[lambda_rule])
    if m.shape[0] == 0:
        raise DataError("presence matrix has no rows")
    counts = m.sum(axis=0)
    rows = m.shape[0]
    # count / rows * 100 >= s, compared without division
    chosen = [g for g, c in zip(presence.groups, counts) if 100 * int(c) >= s * rows]
    freqs = {g: 100.0 * int(c) / rows for g, c in zip(presence.groups, counts) if g in chosen}
    return FrequentVariableSet(lambda_rule, float(s), tuple(chosen), freqs)


def frequency_plot_data(presence, rule: str) -> list[tuple[str, float]]:
    """(group, frequency %) sorted by decreasing frequency, ties alphabetical."""
    freq = group_frequencies(presence, rule)
    return sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))


def emit_frequency_plot_data(presence, rule: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "frequency"])
    for g, f in frequency_plot_data(presence, rule):
        writer.writerow([g, _round2(f)])
    return buf.getvalue()


def _round2(x: float) -> str:
    if not np.isfinite(x):
        return "nan"
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def emit_summary_table(reports, fmt: str = "text", extra: bool = False) -> str:
    """Format reports with the columns Method, Mean, Deviance, Std, Absolute
    risk, Prediction Power (%), values rounded half-up to 2 decimals.

    ``fmt`` is ``"text"`` (aligned), ``"csv"`` or ``"latex"`` (``&``-separated
    rows).  ``extra`` appends the quadratic-risk column.
    """
    header = list(TABLE_COLUMNS) + ([EXTRA_COLUMN] if extra else [])
    rows = []
    for r in reports:
        vals = list(r.row()) + ([r.quadratic_risk] if extra else [])
        rows.append([r.method] + [_round2(v) for v in vals])
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    if fmt == "latex":
        lines = [" & ".join(header) + r" \\"]
        lines += [" & ".join(row) + r" \\" for row in rows]
        return "\n".join(lines) + "\n"
    if fmt != "text":
        raise DataError(f"unknown table format {fmt!r}")
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    lines = []
    for row in [header] + rows:
        cells = [str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i]) for i, c in enumerate(row)]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def parse_summary_table(text: str) -> list[QualityReport]:
    """Inverse of :func:`emit_summary_table` for the ``csv`` format."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header[:6]) != TABLE_COLUMNS:
        raise DataError("not a summary table")
    out = []
    for row in reader:
        vals = [float(v) for v in row[1:]]
        quad = vals[5] if len(vals) > 5 else float("nan")
        out.append(QualityReport(row[0], *vals[:5], quadratic_risk=quad))
    return out
