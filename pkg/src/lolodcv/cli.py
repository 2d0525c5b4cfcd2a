"""Command-line entry point: ``lolo-dcv <command> [options]``.

Commands
--------
expand    encode a dataset and write the design matrix and its group map
cv        one level-aware cross-validation over the whole dataset
dcv       the full leave-one-level-out double CV with reports
baseline  backward-elimination GLM baseline
synth     simulate a survey campaign with a known sparse model
report    re-tabulate a finished ``dcv`` output directory

Options may also come from ``--config FILE`` (flat ``key=value`` lines, keys
named like the long flags); flags given on the command line win.  Every
command writes into a temporary directory next to ``--out`` and renames it
once all work is done.

Exit status is 0 on success, 2 for input or configuration errors and 3 for
numerical failures.  ``LOLO_DCV_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cross_validation import build_folds, cv_curve, write_curve
from .dcv import (
    DEFAULT_SEED,
    DEFAULT_WHITELIST,
    RULES,
    DcvConfig,
    PresenceMatrix,
    _outer_plan,
    backward_glm_baseline,
    default_level_key,
    level_cv_predict,
    run_lolo_dcv,
    write_dcv_result,
)
from .errors import DataError, DegenerateError, NumericalError
from .features import build_design, load_dataset, read_schema, write_dataset, write_design, write_schema
from .lasso_path import build_grid, default_min_ratio, lambda_max, write_path
from .metrics import (
    DEFAULT_THRESHOLD,
    emit_frequency_plot_data,
    emit_summary_table,
    frequent_variables,
    quality_summary,
)
from .synth import generate, write_truth

log = logging.getLogger("lolodcv")

SCENARIO_CHOICES = ("original", "original-village", "recoded", "recoded-village")
_LABELS = {"lambda_min": "LOLO DCV lambda_min", "lambda_1se": "LOLO DCV lambda_1se"}
_FREQ_LABELS = {"lambda_min": "Var freq lambda_min", "lambda_1se": "Var freq lambda_1se"}
_SUFFIX = {"lambda_min": "min", "lambda_1se": "1se"}


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_data_options(p: argparse.ArgumentParser, scenario: bool = True) -> None:
    p.add_argument("--input", help="data CSV")
    p.add_argument("--schema", help="schema CSV (name,kind,role,levels,recode)")
    if scenario:
        p.add_argument("--scenario", choices=SCENARIO_CHOICES)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=_positive_int, help="worker threads (default: one per outer fold, capped at the CPU count)")


def _add_cv_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--level-key", help="level variable kept whole inside folds")
    p.add_argument("--folds", type=_positive_int, help="number of folds (default: one per level)")
    p.add_argument("--grid-count", type=_positive_int)
    p.add_argument("--grid-min-ratio", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lolo-dcv", description="Leave-one-level-out double CV for penalized Poisson regression.")
    sub = parser.add_subparsers(dest="command", required=True)
    parser.subcommands = sub.choices

    p = sub.add_parser("expand", help="write the design matrix and group map")
    _add_data_options(p)
    _add_common(p)
    p.add_argument("--no-interactions", action="store_true", default=None, help="main effects only")

    p = sub.add_parser("cv", help="single cross-validation over all rows")
    _add_data_options(p)
    _add_common(p)
    _add_cv_options(p)

    p = sub.add_parser("dcv", help="leave-one-level-out double cross-validation")
    _add_data_options(p)
    _add_common(p)
    _add_cv_options(p)
    p.add_argument("--inner-folds", type=_positive_int)
    p.add_argument("--threshold", type=float, help="frequent-variable threshold s in percent (default 80)")

    p = sub.add_parser("baseline", help="backward-elimination GLM baseline")
    _add_data_options(p)
    _add_common(p)
    p.add_argument("--level-key")
    p.add_argument("--alpha", type=float)
    p.add_argument("--interactions", help="comma-separated whitelist of A:B terms (default Season:NDVI)")

    p = sub.add_parser("synth", help="simulate a survey campaign")
    _add_common(p)
    p.add_argument("--n-levels", type=_positive_int)
    p.add_argument("--houses-per-level", type=_positive_int)
    p.add_argument("--surveys", type=_positive_int)
    p.add_argument("--support", help="comma-separated true terms, e.g. Rainfall,NDVI,Rainfall:NDVI")
    p.add_argument("--effects", help="comma-separated coefficients on the standardized scale")
    p.add_argument("--intercept", type=float)

    p = sub.add_parser("report", help="re-tabulate a dcv output directory")
    p.add_argument("--config")
    p.add_argument("--input", help="dcv output directory")
    p.add_argument("--out", help="directory for the report (default: <input>-report)")
    p.add_argument("--threshold", type=float)
    return parser


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "scenario": "original",
    "seed": DEFAULT_SEED,
    "grid_count": 100,
    "threshold": DEFAULT_THRESHOLD,
    "alpha": 0.05,
    "n_levels": 9,
    "houses_per_level": 4,
    "surveys": 8,
    "intercept": float(np.log(3.75)),
    "support": "",
    "effects": "",
    "no_interactions": False,
}


def read_config_file(path: str | os.PathLike) -> dict:
    """Parse flat ``key=value`` lines; ``#`` starts a comment, dashes in keys
    are read as underscores."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_options(parser: argparse.ArgumentParser, args: argparse.Namespace) -> argparse.Namespace:
    """Merge defaults < config file < command-line flags."""
    merged = vars(args).copy()
    if args.config:
        known = {a.dest: a for a in parser.subcommands[args.command]._actions}
        for key, raw in read_config_file(args.config).items():
            if key not in known or key in ("config", "help"):
                raise DataError(f"unknown config key {key!r} for command {args.command}")
            if merged.get(key) is not None:
                continue
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                merged[key] = raw.lower() in ("1", "true", "yes", "on")
                continue
            try:
                value = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise DataError(f"config key {key}: {exc}") from exc
            if action.choices and value not in action.choices:
                raise DataError(f"config key {key}: {value!r} not one of {list(action.choices)}")
            merged[key] = value
    for key, value in _DEFAULTS.items():
        if key in merged and merged[key] is None:
            merged[key] = value
    return argparse.Namespace(**merged)


def _require(opts, *names):
    for name in names:
        value = getattr(opts, name, None)
        if value is None:
            raise DataError(f"--{name.replace('_', '-')} is required")


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {path}")
    return p


def _load(opts):
    _require(opts, "input", "schema")
    schema = read_schema(_existing(opts.schema, "schema"))
    return load_dataset(_existing(opts.input, "input"), schema)


def _jobs(opts, n_folds: int) -> int:
    if opts.jobs is not None:
        return opts.jobs
    return max(1, min(n_folds, os.cpu_count() or 1))


@contextmanager
def atomic_directory(target: str | os.PathLike):
    """Yield a scratch directory that replaces ``target`` on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        backup = target.with_name(f".{target.name}.old")
        shutil.rmtree(backup, ignore_errors=True)
        target.rename(backup)
        tmp.rename(target)
        shutil.rmtree(backup, ignore_errors=True)
    else:
        tmp.rename(target)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_expand(opts) -> int:
    dataset = _load(opts)
    design = build_design(dataset, opts.scenario, interactions=not opts.no_interactions)
    print(f"{len(design.groups)} groups")
    print(f"{design.p} columns")
    if opts.out:
        with atomic_directory(opts.out) as tmp:
            write_design(design, tmp / "design.csv", tmp / "groups.csv")
    return 0


def cmd_cv(opts) -> int:
    _require(opts, "out")
    dataset = _load(opts)
    key = opts.level_key or default_level_key(dataset)
    n_levels = len(set(dataset.columns[key].tolist()))
    plan = build_folds(dataset, key, opts.folds or n_levels, opts.seed)
    design = build_design(dataset, opts.scenario)
    lmax = lambda_max(design, dataset.y)
    if lmax <= 0:
        raise DegenerateError("response is identically zero; the penalty path is empty")
    grid = build_grid(lmax, opts.grid_count, opts.grid_min_ratio or default_min_ratio(design.n, design.p))
    curve = cv_curve(design, dataset.y, plan, grid, jobs=_jobs(opts, plan.n_folds))
    with atomic_directory(opts.out) as tmp:
        write_curve(curve, tmp / "curve.csv")
        write_path(curve.path, tmp / "path.csv")
        with open(tmp / "selected.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["rule", "lambda", "active"])
            for rule, lam in (("lambda_min", curve.lambda_min), ("lambda_1se", curve.lambda_1se)):
                writer.writerow([rule, repr(lam), "|".join(curve.path.active_set(grid.index(lam)))])
    print(f"lambda_min={curve.lambda_min:.6g} lambda_1se={curve.lambda_1se:.6g}")
    return 0


def _frequency_rows(dataset, result, threshold, jobs):
    reports, members = [], {}
    for rule in RULES:
        fv = frequent_variables(result.presence, rule, threshold)
        members[rule] = fv.members
        yhat, _ = level_cv_predict(
            dataset,
            result.scenario,
            fv.members,
            outer_key=result.outer_key,
            outer_folds=result.config.outer_folds,
            seed=result.config.seed,
            jobs=jobs,
        )
        reports.append(quality_summary(dataset.y, yhat, label=_FREQ_LABELS[rule]))
    return reports, members


def _write_reports(outdir: Path, reports, presence: PresenceMatrix, members: dict, threshold: float) -> None:
    (outdir / "summary.txt").write_text(emit_summary_table(reports, "text", extra=True), encoding="utf-8")
    (outdir / "summary.csv").write_text(emit_summary_table(reports, "csv", extra=True), encoding="utf-8")
    for rule in RULES:
        suffix = _SUFFIX[rule]
        (outdir / f"frequency_{suffix}.csv").write_text(emit_frequency_plot_data(presence, rule), encoding="utf-8")
    with open(outdir / "frequent_variables.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rule", "threshold", "group"])
        for rule in RULES:
            for g in members[rule]:
                writer.writerow([rule, repr(float(threshold)), g])


def cmd_dcv(opts) -> int:
    _require(opts, "out")
    dataset = _load(opts)
    base = DcvConfig(
        outer_key=opts.level_key,
        outer_folds=opts.folds,
        inner_folds=opts.inner_folds,
        grid_count=opts.grid_count,
        grid_min_ratio=opts.grid_min_ratio,
        seed=opts.seed,
    )
    plan = _outer_plan(dataset, base)
    jobs = _jobs(opts, plan.n_folds)
    result = run_lolo_dcv(dataset, opts.scenario, replace(base, jobs=jobs))
    reports = [quality_summary(result.y, result.predictions[r], label=_LABELS[r]) for r in RULES]
    freq_reports, members = _frequency_rows(dataset, result, opts.threshold, jobs)
    reports += freq_reports
    with atomic_directory(opts.out) as tmp:
        write_dcv_result(result, tmp)
        _write_reports(tmp, reports, result.presence, members, opts.threshold)
    sys.stdout.write(emit_summary_table(reports, "text"))
    n_failed = sum(rec.failed for rec in result.folds)
    if n_failed:
        log.warning("%d outer fold(s) fell back to intercept-only predictions", n_failed)
    return 0


def cmd_baseline(opts) -> int:
    _require(opts, "out")
    dataset = _load(opts)
    whitelist = tuple(s.strip() for s in opts.interactions.split(",") if s.strip()) if opts.interactions else DEFAULT_WHITELIST
    res = backward_glm_baseline(
        dataset,
        opts.scenario,
        alpha=opts.alpha,
        interactions=whitelist,
        outer_key=opts.level_key,
        seed=opts.seed,
        jobs=opts.jobs or 1,
    )
    report = quality_summary(dataset.y, res.predictions, label="B-GLM")
    with atomic_directory(opts.out) as tmp:
        (tmp / "summary.txt").write_text(emit_summary_table([report], "text", extra=True), encoding="utf-8")
        (tmp / "summary.csv").write_text(emit_summary_table([report], "csv", extra=True), encoding="utf-8")
        with open(tmp / "baseline.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "removed", "p_value"])
            for i, (g, pv) in enumerate(res.history):
                writer.writerow([i + 1, g, repr(pv)])
        (tmp / "selected.txt").write_text("".join(f"{g}\n" for g in res.selected), encoding="utf-8")
        with open(tmp / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row_id", "y", "yhat", "fold"])
            for i, (y, yh, f) in enumerate(zip(dataset.y, res.predictions, res.fold_id)):
                writer.writerow([i, int(y), repr(float(yh)), int(f)])
    sys.stdout.write(emit_summary_table([report], "text"))
    return 0


def _split_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def cmd_synth(opts) -> int:
    _require(opts, "out")
    support = _split_list(opts.support)
    try:
        effects = [float(x) for x in _split_list(opts.effects)]
    except ValueError as exc:
        raise DataError(f"--effects: {exc}") from exc
    data = generate(
        n_levels=opts.n_levels,
        houses_per_level=opts.houses_per_level,
        surveys=opts.surveys,
        support=support,
        effects=effects,
        intercept=opts.intercept,
        seed=opts.seed,
    )
    with atomic_directory(opts.out) as tmp:
        write_dataset(data.dataset, tmp / "data.csv")
        write_schema(data.dataset.schema, tmp / "schema.csv")
        write_truth(data.truth, tmp / "truth.csv")
    print(f"{data.dataset.n} observations written to {opts.out}")
    return 0


def _read_presence(path: Path) -> tuple[tuple[str, ...], tuple[str, ...], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "step":
        raise DataError(f"{path} is not a presence matrix")
    groups = tuple(rows[0][1:])
    steps = tuple(r[0] for r in rows[1:])
    m = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64).reshape(len(steps), len(groups))
    return groups, steps, m


def cmd_report(opts) -> int:
    _require(opts, "input")
    src = _existing(opts.input, "dcv directory")
    mats = {}
    groups = steps = ()
    for rule in RULES:
        groups, steps, mats[rule] = _read_presence(_existing(src / f"presence_{_SUFFIX[rule]}.csv", "presence file"))
    presence = PresenceMatrix(groups, steps, mats)
    with open(_existing(src / "predictions.csv", "predictions file"), newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    y = np.array([float(r["y"]) for r in rows])
    reports = [
        quality_summary(y, np.array([float(r[f"yhat_{_SUFFIX[rule]}"]) for r in rows]), label=_LABELS[rule])
        for rule in RULES
    ]
    members = {rule: frequent_variables(presence, rule, opts.threshold).members for rule in RULES}
    with atomic_directory(opts.out or src.with_name(src.name + "-report")) as tmp:
        _write_reports(tmp, reports, presence, members, opts.threshold)
    sys.stdout.write(emit_summary_table(reports, "text"))
    for rule in RULES:
        print(f"frequent ({rule}, s={opts.threshold:g}): {', '.join(members[rule]) or '(none)'}")
    return 0


COMMANDS = {
    "expand": cmd_expand,
    "cv": cmd_cv,
    "dcv": cmd_dcv,
    "baseline": cmd_baseline,
    "synth": cmd_synth,
    "report": cmd_report,
}


def _configure_logging() -> None:
    level = os.environ.get("LOLO_DCV_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve_options(parser, args)
        if getattr(opts, "scenario", None):
            opts.scenario = opts.scenario.replace("-", "+")
        return COMMANDS[opts.command](opts)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
