"""Survey ingestion, quantile recoding and design-matrix construction.

A schema is a list of :class:`VariableSpec` records.  Data are read from
comma-separated text with a header row and validated cell by cell against the
schema.  :func:`encode_design` turns a :class:`Dataset` into a standardized
:class:`DesignMatrix` for one of the four variable scenarios, and
:func:`expand_interactions` appends every pairwise interaction block.

Every design remembers how it was built (column terms, quantile edges,
centering and scaling), so :meth:`DesignMatrix.transform` can encode held-out
rows with constants learned on the training rows only.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from itertools import combinations
from os import PathLike
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO, Union

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

KINDS = ("nominal", "discrete", "continuous")
ROLES = ("response", "explanatory", "level-key", "fixed-effect-group")
SCENARIOS = ("original", "original+village", "recoded", "recoded+village")
SCHEMA_FIELDS = ("name", "kind", "role", "levels", "recode")

_KIND_ALIASES = {
    "numeric-discrete": "discrete",
    "numeric-continuous": "continuous",
}

Source = Union[str, PathLike, TextIO]
# One design column is a product of factors; a factor is (variable, level) for
# a dummy indicator or (variable, None) for a numeric passthrough.
Factor = tuple[str, Union[str, None]]
Term = tuple[Factor, ...]


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableSpec:
    """Declared type and role of one survey variable.

    Parameters
    ----------
    name : str
        Column name in the data header.
    kind : {"nominal", "discrete", "continuous"}
        ``numeric-discrete`` / ``numeric-continuous`` are accepted aliases.
    role : {"response", "explanatory", "level-key", "fixed-effect-group"}
    levels : tuple of str
        Ordered labels of a nominal variable; the first is the reference.
    recode : int, optional
        Number of quantile classes used by the recoded scenarios.
    """

    name: str
    kind: str
    role: str = "explanatory"
    levels: tuple[str, ...] = ()
    recode: int | None = None

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if not self.name.strip() or any(c in self.name for c in ":[]|,"):
            raise DataError(f"invalid variable name {self.name!r} (':[]|,' are reserved)")
        if kind not in KINDS:
            raise DataError(f"{self.name}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise DataError(f"{self.name}: unknown role {self.role!r}")
        if kind == "nominal":
            if len(set(self.levels)) < 2 or len(set(self.levels)) != len(self.levels):
                raise DataError(f"{self.name}: nominal variables need >= 2 distinct levels")
        elif self.levels:
            raise DataError(f"{self.name}: only nominal variables declare levels")
        if self.role in ("level-key", "fixed-effect-group") and kind != "nominal":
            raise DataError(f"{self.name}: {self.role} variables must be nominal")
        if self.role == "response" and kind != "discrete":
            raise DataError(f"{self.name}: the response must be numeric-discrete")
        if self.recode is not None:
            if kind == "nominal":
                raise DataError(f"{self.name}: only numeric variables can be recoded")
            if self.recode not in (3, 4):
                raise DataError(f"{self.name}: recode must use 3 or 4 quantile classes")

    @property
    def is_nominal(self) -> bool:
        return self.kind == "nominal"


def validate_schema(schema: Sequence[VariableSpec]) -> tuple[VariableSpec, ...]:
    schema = tuple(schema)
    names = [v.name for v in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DataError(f"duplicate variable names in schema: {dupes}")
    responses = [v.name for v in schema if v.role == "response"]
    if len(responses) != 1:
        raise DataError(f"schema must declare exactly one response, found {responses}")
    return schema


def _open_text(source: Source, mode: str = "r"):
    if hasattr(source, "read") or hasattr(source, "write"):
        return _NoClose(source)
    return open(Path(source), mode, newline="", encoding="utf-8")


class _NoClose:
    """Context manager that leaves a caller-owned stream open."""

    def __init__(self, stream):
        self.stream = stream

    def __enter__(self):
        return self.stream

    def __exit__(self, *exc):
        return False


def read_schema(source: Source) -> tuple[VariableSpec, ...]:
    """Read a schema file: CSV with header ``name,kind,role,levels,recode``.

    ``levels`` is a ``|``-separated list (empty for numeric variables) and
    ``recode`` is empty or the number of quantile classes.
    """
    try:
        with _open_text(source) as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise DataError("schema file is empty")
            missing = set(SCHEMA_FIELDS[:3]) - {f.strip() for f in reader.fieldnames}
            if missing:
                raise DataError(f"schema header lacks fields {sorted(missing)}")
            specs = []
            for lineno, rec in enumerate(reader, start=2):
                rec = {k.strip(): (v or "").strip() for k, v in rec.items() if k}
                levels = tuple(s.strip() for s in rec.get("levels", "").split("|") if s.strip())
                recode = rec.get("recode", "")
                try:
                    specs.append(
                        VariableSpec(
                            name=rec["name"],
                            kind=rec["kind"],
                            role=rec["role"] or "explanatory",
                            levels=levels,
                            recode=int(recode) if recode else None,
                        )
                    )
                except ValueError as exc:
                    raise DataError(f"schema line {lineno}: {exc}") from None
    except OSError as exc:
        raise DataError(f"cannot read schema: {exc}") from None
    return validate_schema(specs)


def write_schema(schema: Sequence[VariableSpec], dest: Source) -> None:
    with _open_text(dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCHEMA_FIELDS)
        for v in schema:
            writer.writerow([v.name, v.kind, v.role, "|".join(v.levels), v.recode or ""])


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Column-oriented survey table validated against its schema.

    Nominal columns hold string labels (object arrays); numeric columns are
    float64.  ``recodings`` maps recoded variable names to their quantile
    edges.
    """

    schema: tuple[VariableSpec, ...]
    columns: Mapping[str, np.ndarray]
    recodings: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values())))

    def spec(self, name: str) -> VariableSpec:
        for v in self.schema:
            if v.name == name:
                return v
        raise DataError(f"unknown variable {name!r}")

    @property
    def response(self) -> str:
        return next(v.name for v in self.schema if v.role == "response")

    @property
    def y(self) -> np.ndarray:
        return self.columns[self.response]

    def take(self, index) -> "Dataset":
        """Row subset (boolean mask or integer indices)."""
        return replace(self, columns={k: v[index] for k, v in self.columns.items()})

    def replace_variable(self, spec: VariableSpec, values: np.ndarray) -> "Dataset":
        schema = tuple(spec if v.name == spec.name else v for v in self.schema)
        columns = dict(self.columns)
        columns[spec.name] = values
        return replace(self, schema=schema, columns=columns)


def _parse_cell(spec: VariableSpec, cell: str, row: int):
    where = f"row {row}, column {spec.name!r}"
    if cell == "":
        raise DataError(f"missing value at {where}")
    if spec.is_nominal:
        if cell not in spec.levels:
            raise DataError(f"value {cell!r} at {where} is not a declared level {list(spec.levels)}")
        return cell
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"unparseable {spec.kind} value {cell!r} at {where}") from None
    if not np.isfinite(value):
        raise DataError(f"non-finite value {cell!r} at {where}")
    if spec.kind == "discrete" and not value.is_integer():
        raise DataError(f"non-integer discrete value {cell!r} at {where}")
    if spec.role == "response" and value < 0:
        raise DataError(f"response must be a nonnegative count ({cell!r} at {where})")
    return value


def load_dataset(source: Source, schema: Sequence[VariableSpec]) -> Dataset:
    """Parse delimited text into a :class:`Dataset`.

    Raises :class:`DataError` for unknown or missing columns, unparseable
    cells, undeclared nominal levels, missing values and negative counts.
    """
    schema = validate_schema(schema)
    by_name = {v.name: v for v in schema}
    with _open_text(source) as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("data file is empty") from None
        unknown = [h for h in header if h not in by_name]
        if unknown:
            raise DataError(f"unknown column(s) {unknown} not in schema")
        absent = [v.name for v in schema if v.name not in header]
        if absent:
            raise DataError(f"schema variable(s) {absent} missing from data header")
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in data header")
        cells: dict[str, list] = {h: [] for h in header}
        for row, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"row {row} has {len(record)} cells, expected {len(header)}")
            for name, cell in zip(header, record):
                cells[name].append(_parse_cell(by_name[name], cell.strip(), row))
    if not cells[header[0]]:
        raise DataError("data file has no rows")
    columns = {}
    for v in schema:
        dtype = object if v.is_nominal else float
        columns[v.name] = np.array(cells[v.name], dtype=dtype)
    return Dataset(schema=schema, columns=columns)


def write_dataset(dataset: Dataset, dest: Source) -> None:
    with _open_text(dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        names = [v.name for v in dataset.schema]
        writer.writerow(names)
        cols = []
        for v in dataset.schema:
            col = dataset.columns[v.name]
            if v.is_nominal:
                cols.append(col)
            elif v.kind == "discrete":
                cols.append([str(int(x)) for x in col])
            else:
                cols.append([repr(float(x)) for x in col])
        writer.writerows(zip(*cols))


# ---------------------------------------------------------------------------
# Quantile recoding
# ---------------------------------------------------------------------------


def quantile_edges(values: np.ndarray, bins: int) -> np.ndarray:
    """Nearest-rank quantile cut points (``bins - 1`` of them).

    The k-th edge is the order statistic of rank ``ceil(k * n / bins)``.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if np.unique(x).size < bins:
        raise DataError(f"degenerate quantiles: fewer than {bins} distinct values")
    n = x.size
    ranks = [-(-k * n // bins) for k in range(1, bins)]
    return x[np.array(ranks) - 1]


def assign_bins(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin labels ``Q1..Qb``; a value equal to an edge goes to the lower bin."""
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="left")
    return np.array([f"Q{i + 1}" for i in idx], dtype=object)


def apply_recoding(dataset: Dataset, variable: str, edges: np.ndarray) -> Dataset:
    spec = dataset.spec(variable)
    if spec.is_nominal:
        raise DataError(f"{variable} is not numeric and cannot be recoded")
    bins = len(edges) + 1
    new_spec = replace(spec, kind="nominal", levels=tuple(f"Q{i}" for i in range(1, bins + 1)), recode=None)
    out = dataset.replace_variable(new_spec, assign_bins(dataset.columns[variable], edges))
    recodings = dict(dataset.recodings)
    recodings[variable] = np.asarray(edges, dtype=float)
    return replace(out, recodings=recodings)


def recode_quartiles(dataset: Dataset, variable: str, bins: int) -> Dataset:
    """Replace a numeric variable by ``bins`` quantile classes (3 or 4)."""
    spec = dataset.spec(variable)
    if spec.is_nominal:
        raise DataError(f"{variable} is not numeric and cannot be recoded")
    if bins not in (3, 4):
        raise DataError("bins must be 3 or 4")
    return apply_recoding(dataset, variable, quantile_edges(dataset.columns[variable], bins))


# ---------------------------------------------------------------------------
# Design matrix
# ---------------------------------------------------------------------------


def standardize(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center to mean 0 and scale to unit sample (ddof=1) standard deviation."""
    raw = np.asarray(raw, dtype=float)
    center = raw.mean(axis=0)
    scale = raw.std(axis=0, ddof=1)
    return (raw - center) / scale, center, scale


def normalize_scenario(scenario: str) -> str:
    s = scenario.strip().lower().replace("-", "+").replace("_", "+")
    if s not in SCENARIOS:
        raise DataError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return s


def term_name(term: Term) -> str:
    return ":".join(var if level is None else f"{var}[{level}]" for var, level in term)


def _term_column(dataset: Dataset, term: Term, offsets: tuple[float, ...] | None = None) -> np.ndarray:
    col = np.ones(dataset.n)
    for k, (var, level) in enumerate(term):
        values = dataset.columns[var]
        if level is None:
            x = values.astype(float)
        else:
            x = (values == level).astype(float)
        if offsets is not None:
            x = x - offsets[k]
        col = col * x
    return col


@dataclass(frozen=True)
class DesignMatrix:
    """Standardized design with a column-to-group map.

    ``values`` is the standardized n x p matrix, ``raw`` the same columns
    before centering and scaling.  ``groups`` maps each main-effect variable
    or interaction pair (``"A:B"``) to its contiguous column block.  The
    intercept is implicit.

    ``offsets`` holds, per column, the centers subtracted from each factor
    before multiplying (``None`` for main-effect columns).
    """

    values: np.ndarray
    raw: np.ndarray
    terms: tuple[Term, ...]
    groups: Mapping[str, slice]
    center: np.ndarray
    scale: np.ndarray
    scenario: str = "original"
    recodings: Mapping[str, np.ndarray] = field(default_factory=dict)
    offsets: tuple = ()

    def __post_init__(self):
        if not self.offsets:
            object.__setattr__(self, "offsets", (None,) * len(self.terms))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def columns(self) -> list[str]:
        return [term_name(t) for t in self.terms]

    @property
    def group_names(self) -> list[str]:
        return list(self.groups)

    @property
    def main_groups(self) -> list[str]:
        return [g for g in self.groups if ":" not in g]

    @property
    def column_groups(self) -> np.ndarray:
        """Integer group index of every column, in ``groups`` order."""
        out = np.empty(self.p, dtype=np.int64)
        for i, sl in enumerate(self.groups.values()):
            out[sl] = i
        return out

    def sources(self, column: int) -> tuple[str, ...]:
        """Source variables of a column, decoded from its term."""
        return tuple(var for var, _ in self.terms[column])

    def group_of(self, column: int) -> str:
        for name, sl in self.groups.items():
            if sl.start <= column < sl.stop:
                return name
        raise IndexError(column)

    def columns_of(self, groups: Iterable[str]) -> np.ndarray:
        idx = []
        for g in groups:
            if g not in self.groups:
                raise DataError(f"unknown group {g!r}")
            sl = self.groups[g]
            idx.extend(range(sl.start, sl.stop))
        return np.array(sorted(idx), dtype=np.int64)

    def select(self, groups: Iterable[str]) -> "DesignMatrix":
        """Sub-design holding only ``groups`` (kept in their original order)."""
        wanted = set(groups)
        unknown = wanted - set(self.groups)
        if unknown:
            raise DataError(f"unknown group(s) {sorted(unknown)}")
        keep, new_groups, start = [], {}, 0
        for name, sl in self.groups.items():
            if name in wanted:
                keep.extend(range(sl.start, sl.stop))
                new_groups[name] = slice(start, start + sl.stop - sl.start)
                start += sl.stop - sl.start
        keep = np.array(keep, dtype=np.int64)
        return replace(
            self,
            values=self.values[:, keep],
            raw=self.raw[:, keep],
            terms=tuple(self.terms[i] for i in keep),
            groups=new_groups,
            center=self.center[keep],
            scale=self.scale[keep],
            offsets=tuple(self.offsets[i] for i in keep),
        )

    def transform(self, dataset: Dataset) -> "DesignMatrix":
        """Encode new rows with this design's recoding edges and scaling."""
        for var, edges in self.recodings.items():
            if not dataset.spec(var).is_nominal:
                dataset = apply_recoding(dataset, var, edges)
        if self.terms:
            raw = np.column_stack([_term_column(dataset, t, o) for t, o in zip(self.terms, self.offsets)])
        else:
            raw = np.empty((dataset.n, 0))
        return replace(self, raw=raw, values=(raw - self.center) / self.scale)


def _build(raw_cols, terms, blocks, label):
    """Drop constant columns and assemble contiguous group slices.

    Returns the kept columns, their indices into the inputs and the groups.
    """
    keep_cols, keep_terms, groups = [], [], {}
    for name, idx in blocks:
        start = len(keep_cols)
        for j in idx:
            col = raw_cols[j]
            if np.ptp(col) == 0.0:
                log.warning("%s: dropping constant column %s", label, term_name(terms[j]))
                continue
            keep_cols.append(col)
            keep_terms.append(j)
        if len(keep_cols) > start:
            groups[name] = slice(start, len(keep_cols))
        else:
            log.warning("%s: group %s has no non-constant column and is dropped", label, name)
    return keep_cols, keep_terms, groups


def main_effect_variables(schema: Sequence[VariableSpec], scenario: str) -> list[VariableSpec]:
    scenario = normalize_scenario(scenario)
    village = scenario.endswith("+village")
    mains = [
        v for v in schema
        if v.role == "explanatory" or (village and v.role == "fixed-effect-group")
    ]
    if village and not any(v.role == "fixed-effect-group" for v in schema):
        raise DataError(f"scenario {scenario!r} needs a fixed-effect-group (village) variable")
    return mains


def encode_design(dataset: Dataset, scenario: str = "original") -> DesignMatrix:
    """Dummy-code nominals (first level is the reference), pass numerics through,
    then standardize every column.

    In the ``recoded`` scenarios every variable with a ``recode`` count is
    first replaced by its quantile classes computed on ``dataset``.
    Constant columns (for instance a level that never occurs) are dropped with
    a warning.
    """
    scenario = normalize_scenario(scenario)
    mains = main_effect_variables(dataset.schema, scenario)
    if scenario.startswith("recoded"):
        for v in mains:
            if v.recode is not None:
                dataset = recode_quartiles(dataset, v.name, v.recode)
    terms: list[Term] = []
    blocks = []
    for v in mains:
        spec = dataset.spec(v.name)
        start = len(terms)
        if spec.is_nominal:
            terms.extend(((spec.name, level),) for level in spec.levels[1:])
        else:
            terms.append(((spec.name, None),))
        blocks.append((spec.name, range(start, len(terms))))
    raw_cols = [_term_column(dataset, t) for t in terms]
    cols, kept, groups = _build(raw_cols, terms, blocks, "encode_design")
    kept_terms = [terms[j] for j in kept]
    raw = np.column_stack(cols) if cols else np.empty((dataset.n, 0))
    values, center, scale = standardize(raw)
    return DesignMatrix(
        values=values,
        raw=raw,
        terms=tuple(kept_terms),
        groups=groups,
        center=center,
        scale=scale,
        scenario=scenario,
        recodings=dict(dataset.recodings),
    )


def _pair_list(design: DesignMatrix, pairs) -> list[tuple[str, str]]:
    mains = design.main_groups
    if pairs is None:
        return list(combinations(mains, 2))
    order = {g: i for i, g in enumerate(mains)}
    out = []
    for pair in pairs:
        a, b = pair.split(":") if isinstance(pair, str) else pair
        if a not in order or b not in order or a == b:
            raise DataError(f"invalid interaction pair {a}:{b}")
        out.append((a, b) if order[a] < order[b] else (b, a))
    return sorted(set(out), key=lambda ab: (order[ab[0]], order[ab[1]]))


def expand_interactions(design: DesignMatrix, pairs=None) -> DesignMatrix:
    """Append one interaction group per unordered pair of main-effect groups.

    Interaction columns are the elementwise products of the two blocks'
    dummy/numeric columns, each first centered at its mean in this design,
    and are standardized afterwards; a nominal(L1) by nominal(L2) pair
    therefore gives (L1-1)(L2-1) columns.  Centering before the product keeps
    an interaction from duplicating its main effects when a factor is far
    from zero (e.g. a positive-valued index).  ``pairs`` restricts the
    expansion to selected ``"A:B"`` pairs.
    """
    if len(design.main_groups) < 2:
        raise DataError("interaction expansion needs at least 2 main-effect groups")
    if any(o is not None for o in design.offsets):
        raise DataError("design already holds interaction columns")
    raw_cols, terms, offsets, blocks = [], [], [], []
    for a, b in _pair_list(design, pairs):
        name = f"{a}:{b}"
        start = len(terms)
        sa, sb = design.groups[a], design.groups[b]
        for i in range(sa.start, sa.stop):
            for j in range(sb.start, sb.stop):
                ci, cj = float(design.center[i]), float(design.center[j])
                raw_cols.append((design.raw[:, i] - ci) * (design.raw[:, j] - cj))
                terms.append(design.terms[i] + design.terms[j])
                offsets.append((ci, cj))
        blocks.append((name, range(start, len(terms))))
    cols, kept, new_groups = _build(raw_cols, terms, blocks, "expand_interactions")
    if not cols:
        return design
    inter_raw = np.column_stack(cols)
    inter_values, center, scale = standardize(inter_raw)
    offset = design.p
    groups = dict(design.groups)
    for name, sl in new_groups.items():
        groups[name] = slice(sl.start + offset, sl.stop + offset)
    return replace(
        design,
        values=np.hstack([design.values, inter_values]),
        raw=np.hstack([design.raw, inter_raw]),
        terms=design.terms + tuple(terms[j] for j in kept),
        groups=groups,
        center=np.concatenate([design.center, center]),
        scale=np.concatenate([design.scale, scale]),
        offsets=tuple(design.offsets) + tuple(offsets[j] for j in kept),
    )


def build_design(dataset: Dataset, scenario: str, interactions: bool = True, pairs=None) -> DesignMatrix:
    """Encode then, optionally, expand interactions (all pairs or ``pairs``)."""
    design = encode_design(dataset, scenario)
    if interactions or pairs:
        if len(design.main_groups) >= 2:
            design = expand_interactions(design, pairs)
    return design


def canonical_groups(schema: Sequence[VariableSpec], scenario: str, interactions: bool = True) -> list[str]:
    """Group names a scenario can produce, before any column is dropped."""
    mains = [v.name for v in main_effect_variables(schema, scenario)]
    if not interactions:
        return mains
    return mains + [f"{a}:{b}" for a, b in combinations(mains, 2)]


def write_design(design: DesignMatrix, values_dest: Source, groups_dest: Source) -> None:
    """Export the standardized matrix and the column/group map as CSV."""
    with _open_text(values_dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(design.columns)
        for row in design.values:
            writer.writerow([repr(float(x)) for x in row])
    with _open_text(groups_dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["column_index", "column", "group", "center", "scale"])
        for j, name in enumerate(design.columns):
            writer.writerow([j, name, design.group_of(j), repr(float(design.center[j])), repr(float(design.scale[j]))])


def read_group_map(source: Source) -> list[tuple[str, str]]:
    """(column, group) pairs from an exported group map."""
    with _open_text(source) as fh:
        return [(r["column"], r["group"]) for r in csv.DictReader(fh)]


def dataset_from_text(text: str, schema: Sequence[VariableSpec]) -> Dataset:
    return load_dataset(io.StringIO(text), schema)
