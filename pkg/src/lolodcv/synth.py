"""Synthetic village -> house -> survey count data with a known sparse model.

The generated schema mirrors the entomological survey layout: 16 explanatory
variables (house characteristics and per-survey weather), a village
fixed-effect variable, a house identifier and the mosquito count response.

The log-rate is ``intercept + sum(effect_t * z_t)`` where ``z_t`` is the
sample-standardized value of a main effect (nominal variables use their
standardized level index) or the product of two such values for an
interaction ``"A:B"``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .features import Dataset, VariableSpec, _open_text, validate_schema

RESPONSE = "Anopheles"

_BINARY = {
    "Repellent": ("No", "Yes"),
    "BedNet": ("No", "Yes"),
    "Roof": ("Tole", "Paille"),
    "Utensils": ("No", "Yes"),
    "Works": ("No", "Yes"),
    "Soil": ("Dry", "Humid"),
    "Watercourse": ("No", "Yes"),
}


def survey_schema(n_levels: int = 9, houses_per_level: int = 4) -> tuple[VariableSpec, ...]:
    villages = tuple(f"V{v + 1}" for v in range(n_levels))
    houses = tuple(f"V{v + 1}H{h + 1}" for v in range(n_levels) for h in range(houses_per_level))
    specs = [
        VariableSpec("Village", "nominal", "fixed-effect-group", villages),
        VariableSpec("House", "nominal", "level-key", houses),
    ]
    specs += [VariableSpec(name, "nominal", "explanatory", levels) for name, levels in _BINARY.items()]
    specs += [
        VariableSpec("MajorityClass", "nominal", "explanatory", ("1", "4", "7")),
        VariableSpec("Season", "nominal", "explanatory", ("1", "2", "3", "4")),
        VariableSpec("RainyDN10", "discrete", "explanatory", recode=3),
        VariableSpec("RainyDN", "discrete", "explanatory"),
        VariableSpec("Fragmentation", "discrete", "explanatory", recode=4),
        VariableSpec("Openings", "discrete", "explanatory", recode=4),
        VariableSpec("Inhabitants", "discrete", "explanatory", recode=3),
        VariableSpec("Rainfall", "continuous", "explanatory", recode=4),
        VariableSpec("NDVI", "continuous", "explanatory", recode=4),
        VariableSpec(RESPONSE, "discrete", "response"),
    ]
    return validate_schema(specs)


@dataclass(frozen=True)
class SyntheticData:
    dataset: Dataset
    truth: dict
    linear_predictor: np.ndarray


def _standardized(values: np.ndarray, spec: VariableSpec) -> np.ndarray:
    if spec.is_nominal:
        index = {lv: i for i, lv in enumerate(spec.levels)}
        values = np.array([index[v] for v in values], dtype=float)
    sd = values.std(ddof=1)
    if sd == 0:
        return np.zeros_like(values, dtype=float)
    return (values - values.mean()) / sd


def generate(
    n_levels: int = 9,
    houses_per_level: int = 4,
    surveys: int = 8,
    support: Sequence[str] = (),
    effects: Sequence[float] = (),
    intercept: float = float(np.log(3.75)),
    seed: int = 0,
    village_sd: float = 0.0,
) -> SyntheticData:
    """Simulate one survey campaign.

    ``support`` names main effects or ``"A:B"`` interactions of the
    explanatory variables; ``effects`` gives their coefficients on the
    standardized scale.  ``village_sd`` adds a normal village-level offset to
    the log-rate (0 by default).
    """
    if len(support) != len(effects):
        raise DataError("support and effects must have the same length")
    if n_levels < 1 or houses_per_level < 1 or surveys < 1:
        raise DataError("n_levels, houses_per_level and surveys must be positive")
    schema = survey_schema(n_levels, houses_per_level)
    by_name = {v.name: v for v in schema}
    explanatory = {v.name for v in schema if v.role == "explanatory"}
    for term in support:
        parts = term.split(":")
        if len(parts) > 2 or any(p not in explanatory for p in parts) or (len(parts) == 2 and parts[0] == parts[1]):
            raise DataError(f"unknown support term {term!r}")

    rng = np.random.default_rng(seed)
    n_houses = n_levels * houses_per_level
    n = n_houses * surveys
    village_idx = np.repeat(np.arange(n_levels), houses_per_level * surveys)
    house_idx = np.repeat(np.arange(n_houses), surveys)
    survey_idx = np.tile(np.arange(surveys), n_houses)

    cols: dict[str, np.ndarray] = {
        "Village": np.array(by_name["Village"].levels, dtype=object)[village_idx],
        "House": np.array(by_name["House"].levels, dtype=object)[house_idx],
    }
    # house-level characteristics
    for name, levels in _BINARY.items():
        draw = rng.integers(0, 2, size=n_houses)
        cols[name] = np.array(levels, dtype=object)[draw][house_idx]
    cols["MajorityClass"] = np.array(("1", "4", "7"), dtype=object)[rng.integers(0, 3, size=n_houses)][house_idx]
    cols["Fragmentation"] = rng.integers(26, 72, size=n_houses).astype(float)[house_idx]
    cols["Openings"] = rng.integers(1, 6, size=n_houses).astype(float)[house_idx]
    cols["Inhabitants"] = rng.integers(1, 9, size=n_houses).astype(float)[house_idx]
    cols["NDVI"] = np.round(rng.uniform(115.2, 159.5, size=n_houses), 1)[house_idx]
    # weather is shared by the houses of a village during one survey round
    cell = village_idx * surveys + survey_idx
    n_cells = n_levels * surveys
    cols["Season"] = np.array(("1", "2", "3", "4"), dtype=object)[survey_idx % 4]
    cols["RainyDN10"] = rng.binomial(9, 0.4, size=n_cells).astype(float)[cell]
    cols["RainyDN"] = rng.binomial(3, 0.3, size=n_cells).astype(float)[cell]
    cols["Rainfall"] = np.round(np.minimum(rng.gamma(2.0, 8.0, size=n_cells), 82.0), 1)[cell]

    eta = np.full(n, float(intercept))
    for term, beta in zip(support, effects):
        z = np.ones(n)
        for part in term.split(":"):
            z = z * _standardized(cols[part], by_name[part])
        eta += float(beta) * z
    if village_sd > 0:
        eta += rng.normal(0.0, village_sd, size=n_levels)[village_idx]
    cols[RESPONSE] = rng.poisson(np.exp(eta)).astype(float)

    columns = {v.name: cols[v.name] for v in schema}
    truth = {"(intercept)": float(intercept)}
    truth.update({t: float(b) for t, b in zip(support, effects)})
    return SyntheticData(Dataset(schema, columns), truth, eta)


def write_truth(truth: Mapping[str, float], dest) -> None:
    with _open_text(dest, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["term", "coefficient"])
        for term, beta in truth.items():
            writer.writerow([term, repr(float(beta))])
