import io

import numpy as np
import pytest

from lolodcv.errors import DataError
from lolodcv.glm_poisson import fit_irls
from lolodcv.synth import RESPONSE, generate, survey_schema, write_truth


class TestGenerator:
    def test_layout(self):
        data = generate(seed=0)
        ds = data.dataset
        assert ds.n == 9 * 4 * 8
        assert len(set(ds.columns["Village"])) == 9
        assert len(set(ds.columns["House"])) == 36
        # house characteristics are constant within a house
        for h in set(ds.columns["House"]):
            rows = ds.columns["House"] == h
            assert len(set(ds.columns["Roof"][rows])) == 1
            assert len(set(ds.columns["NDVI"][rows])) == 1

    def test_weather_shared_within_village_round(self):
        ds = generate(seed=1).dataset
        v1 = ds.columns["Village"] == "V1"
        rain = ds.columns["Rainfall"][v1].reshape(4, 8)
        assert np.all(rain == rain[0])

    def test_seed_determinism(self):
        a = generate(support=("NDVI",), effects=(0.5,), seed=9)
        b = generate(support=("NDVI",), effects=(0.5,), seed=9)
        for name in a.dataset.columns:
            assert np.array_equal(a.dataset.columns[name], b.dataset.columns[name])
        assert not np.array_equal(a.dataset.y, generate(support=("NDVI",), effects=(0.5,), seed=10).dataset.y)

    def test_null_model_mean(self):
        mu = 3.75
        inside = 0
        for seed in range(20):
            y = generate(seed=seed).dataset.y
            se = np.sqrt(mu / y.size)
            inside += abs(y.mean() - mu) <= 3 * se
        assert inside == 20

    def test_unit_effect_gives_rate_ratio_e(self):
        data = generate(n_levels=20, houses_per_level=10, surveys=8, support=("Fragmentation",), effects=(1.0,),
                        intercept=0.5, seed=3)
        x = data.dataset.columns["Fragmentation"]
        z = ((x - x.mean()) / x.std(ddof=1))[:, None]
        slope = fit_irls(z, data.dataset.y).coefficients.beta[0]
        assert np.exp(slope) == pytest.approx(np.e, rel=0.05)
        # quartile means climb with the variable
        q = np.quantile(z[:, 0], [0.25, 0.5, 0.75])
        means = [data.dataset.y[np.searchsorted(q, z[:, 0]) == k].mean() for k in range(4)]
        assert means == sorted(means)

    def test_interaction_effect_in_linear_predictor(self):
        data = generate(support=("Rainfall:NDVI",), effects=(0.7,), seed=2)
        eta = data.linear_predictor
        assert not np.allclose(eta, eta[0])
        assert data.truth == {"(intercept)": pytest.approx(np.log(3.75)), "Rainfall:NDVI": 0.7}

    @pytest.mark.parametrize("support", [("Unknown",), ("Village",), ("NDVI:NDVI",), ("A:B:C",)])
    def test_unknown_support(self, support):
        with pytest.raises(DataError):
            generate(support=support, effects=(1.0,))

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            generate(support=("NDVI",), effects=())

    def test_schema_has_sixteen_mains(self):
        schema = survey_schema()
        assert sum(v.role == "explanatory" for v in schema) == 16
        assert [v.name for v in schema if v.role == "response"] == [RESPONSE]

    def test_truth_file(self):
        buf = io.StringIO()
        write_truth({"(intercept)": 1.0, "NDVI": 0.5}, buf)
        assert buf.getvalue() == "term,coefficient\n(intercept),1.0\nNDVI,0.5\n"
