import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from flowconvgru.analysis import EvalReport, ha_predict
from flowconvgru.estimators import FlowConvGRURegressor, HistoricalAverage
from conftest import random_flow


def make_sequence(rng, n_intervals=9, m=2, k=2):
    volumes = rng.uniform(0, 15, size=(n_intervals, m, k, 2))
    flows = [random_flow(rng, m * k, density=0.6, allow_empty=False) for _ in range(n_intervals)]
    return volumes, flows


def small_regressor(**kw):
    base = dict(layers=1, hidden=4, history=2, epochs=2, batch_size=4, seed=3)
    base.update(kw)
    return FlowConvGRURegressor(**base)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        est = small_regressor(variant="nc", learning_rate=1e-3)
        params = est.get_params()
        assert params["layers"] == 1
        assert params["variant"] == "nc"
        assert params["learning_rate"] == 1e-3
        rebuilt = FlowConvGRURegressor(**params)
        assert rebuilt.get_params() == params

    def test_set_params(self):
        est = small_regressor()
        est.set_params(hidden=8, epochs=5)
        assert est.hidden == 8 and est.epochs == 5

    def test_clone_drops_fitted_state(self, rng):
        volumes, flows = make_sequence(rng)
        est = small_regressor().fit(volumes, flows)
        copy = clone(est)
        assert copy.get_params() == est.get_params()
        with pytest.raises(NotFittedError):
            copy.predict(volumes, flows)

    def test_predict_before_fit_raises(self, rng):
        volumes, flows = make_sequence(rng)
        with pytest.raises(NotFittedError):
            small_regressor().predict(volumes, flows)


class TestFlowConvGRURegressor:
    def test_fit_predict_shapes(self, rng):
        volumes, flows = make_sequence(rng, n_intervals=9)
        est = small_regressor().fit(volumes, flows)
        preds = est.predict(volumes, flows)
        assert preds.shape == (9 - 2, 2, 2, 2)
        assert np.all(np.isfinite(preds))

    def test_deterministic_given_seed(self, rng):
        volumes, flows = make_sequence(rng)
        a = small_regressor(seed=7).fit(volumes, flows).predict(volumes, flows)
        b = small_regressor(seed=7).fit(volumes, flows).predict(volumes, flows)
        assert np.array_equal(a, b)

    def test_too_short_sequence_rejected(self, rng):
        volumes, flows = make_sequence(rng, n_intervals=2)
        with pytest.raises(ValueError):
            small_regressor(history=2).fit(volumes, flows)

    def test_validation_pair_selects_epoch(self, rng):
        volumes, flows = make_sequence(rng, n_intervals=10)
        val = make_sequence(rng, n_intervals=6)
        est = small_regressor(epochs=3).fit(volumes, flows, validation=val)
        assert 1 <= est.checkpoint_.epoch <= 3

    def test_evaluate_returns_report(self, rng):
        volumes, flows = make_sequence(rng)
        est = small_regressor().fit(volumes, flows)
        report = est.evaluate(volumes, flows)
        assert isinstance(report, EvalReport)
        assert report.n == len(volumes) - est.history
        assert report.rmse >= 0 and report.mae >= 0

    def test_spec_mirrors_hyperparameters(self, rng):
        volumes, flows = make_sequence(rng)
        est = small_regressor(layers=2, hidden=6, variant="nf").fit(volumes, flows)
        assert est.spec_.layers == 2
        assert est.spec_.hidden == 6
        assert est.spec_.variant == "nf"
        assert est.spec_.m == 2 and est.spec_.k == 2


class TestHistoricalAverage:
    def test_matches_ha_predict(self, rng):
        volumes, flows = make_sequence(rng, n_intervals=7)
        est = HistoricalAverage(history=3).fit()
        preds = est.predict(volumes, flows)
        assert preds.shape == (4, 2, 2, 2)
        for w in range(4):
            assert np.allclose(preds[w], ha_predict(volumes[w : w + 3]), atol=1e-12)

    def test_flows_optional(self, rng):
        volumes, _ = make_sequence(rng, n_intervals=6)
        est = HistoricalAverage(history=2).fit()
        preds = est.predict(volumes)
        assert preds.shape == (4, 2, 2, 2)

    def test_evaluate_against_targets(self, rng):
        volumes, _ = make_sequence(rng, n_intervals=6)
        est = HistoricalAverage(history=2).fit()
        report = est.evaluate(volumes)
        preds = est.predict(volumes)
        diff = preds - volumes[2:]
        assert report.rmse == pytest.approx(float(np.sqrt(np.mean(diff**2))), abs=1e-12)
        assert report.n == 4

    def test_clone(self):
        est = HistoricalAverage(history=4)
        assert clone(est).get_params() == {"history": 4}
