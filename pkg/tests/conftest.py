import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lolodcv.features import Dataset, VariableSpec, validate_schema
from lolodcv.synth import generate

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def poisson_problem(rng, n, p, scale=0.3, intercept=0.5):
    X = rng.standard_normal((n, p))
    beta = rng.standard_normal(p) * scale
    y = rng.poisson(np.exp(intercept + X @ beta)).astype(float)
    return X, y, beta


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_schema():
    return validate_schema([
        VariableSpec("Village", "nominal", "fixed-effect-group", ("A", "B", "C", "D")),
        VariableSpec("Season", "nominal", "explanatory", ("1", "2", "3", "4")),
        VariableSpec("Roof", "nominal", "explanatory", ("Tole", "Paille")),
        VariableSpec("Rain", "continuous", "explanatory", recode=4),
        VariableSpec("Count", "discrete", "response"),
    ])


@pytest.fixture
def small_dataset(small_schema):
    rng = np.random.default_rng(7)
    n = 80
    village = np.array(["A", "B", "C", "D"], dtype=object)[np.repeat(np.arange(4), 20)]
    season = np.array(["1", "2", "3", "4"], dtype=object)[np.tile(np.arange(4), 20)]
    roof = np.array(["Tole", "Paille"], dtype=object)[rng.integers(0, 2, n)]
    rain = np.round(rng.gamma(2.0, 5.0, n), 1)
    y = rng.poisson(np.exp(0.8 + 0.05 * (rain - rain.mean()))).astype(float)
    cols = {"Village": village, "Season": season, "Roof": roof, "Rain": rain, "Count": y}
    return Dataset(small_schema, cols)


@pytest.fixture(scope="session")
def survey_data():
    return generate(support=("Rainfall", "NDVI", "Rainfall:NDVI"), effects=(0.5, 0.5, 0.3), seed=0)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for i in sorted(lines):
        terminalreporter.write_line(lines[i])
