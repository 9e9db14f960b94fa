import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from sensindex import harness as hn
from sensindex.errors import ConfigError, DegenerateVariance, TooFewValues
from sensindex.models import get_model


def small(**kw):
    base = dict(model="linear_uniform", estimator="sobol", n=200, reps=200, seed=7)
    base.update(kw)
    return hn.ExperimentSpec(**base)


class TestDiagnostics:
    def test_normal_draws(self):
        ks, skew, kurt = hn.normality_diagnostics(np.random.default_rng(0).standard_normal(10_000))
        assert ks < 1.36 / 100 * 1.5
        assert 0 <= ks <= 1

    def test_constant(self):
        ks, skew, kurt = hn.normality_diagnostics(np.full(200, 0.3))
        assert ks > 0.5 and skew == 0.0

    def test_symmetric(self):
        x = np.random.default_rng(1).standard_normal(500)
        _, skew, _ = hn.normality_diagnostics(np.concatenate([x, -x]))
        assert abs(skew) < 4 * math.sqrt(6 / 1000)

    def test_too_few(self):
        with pytest.raises(TooFewValues):
            hn.normality_diagnostics(np.zeros(99))

    def test_threshold(self):
        assert_allclose(hn.ks_threshold(2000), 1.5 * 1.62762 / math.sqrt(2000), rtol=1e-5)


class TestSpec:
    def test_validation(self):
        with pytest.raises(ConfigError):
            small(reps=99)
        with pytest.raises(ConfigError):
            small(n=49)
        with pytest.raises(ConfigError):
            small(estimator="chatterjee")
        assert small(centering="plain").centering is hn.Centering.PLAIN

    def test_thread_env(self, monkeypatch):
        monkeypatch.setenv("SENSINDEX_THREADS", "3")
        assert hn.worker_count(10) == 3 and hn.worker_count(2) == 2
        monkeypatch.setenv("SENSINDEX_THREADS", "x")
        with pytest.raises(ConfigError):
            hn.worker_count(10)


class TestClt:
    def test_worker_invariance(self, monkeypatch):
        monkeypatch.setenv("SENSINDEX_THREADS", "1")
        a = hn.run_clt_experiment(small())
        monkeypatch.setenv("SENSINDEX_THREADS", "4")
        b = hn.run_clt_experiment(small())
        assert_array_equal(a.estimates, b.estimates)
        assert a.to_dict(with_values=True) == b.to_dict(with_values=True)

    @pytest.mark.parametrize("kind", ["sobol", "cvm"])
    def test_centering_offset(self, kind):
        rep = hn.run_clt_experiment(small(estimator=kind))
        offset = math.sqrt(rep.n) * rep.shift / math.sqrt(rep.sigma2)
        assert_allclose(rep.corrected.mean - rep.plain.mean, offset, rtol=1e-9, atol=1e-12)
        assert_allclose(rep.plain.mean - rep.flipped.mean, offset, rtol=1e-9, atol=1e-12)
        var_y = 1 / 6
        expected = rep.delta_n / (2 * var_y) if kind == "sobol" else 3 * rep.delta_n
        assert_allclose(rep.shift, expected, rtol=1e-10)

    def test_report_shape(self):
        rep = hn.run_clt_experiment(small())
        d = rep.to_dict()
        assert rep.variance > 0 and 0 <= rep.ks <= 1
        assert set(d["passes"]) == {"variance_in_band", "ks_below_threshold", "mean_near_zero"}
        assert "estimates" not in d and d["sign_check"]["closer"] in ("stated", "flipped")

    def test_degenerate(self):
        with pytest.raises(DegenerateVariance):
            hn.run_clt_experiment(small(model="deterministic_monotone"))


class TestSweeps:
    def test_consistency_linear(self):
        sw = hn.consistency_sweep(get_model("linear_uniform"), "sobol", [100, 1000, 10_000], seeds=20)
        assert sw["pass"] and abs(sw["truth"] - 0.5) < 1e-12

    def test_consistency_pure_noise(self):
        sw = hn.consistency_sweep(get_model("pure_noise"), "sobol", [100, 10_000], seeds=20)
        assert sw["rows"][-1]["median_abs_error"] < 0.02

    def test_deterministic_cvm_trend(self):
        sw = hn.consistency_sweep(get_model("deterministic_monotone"), "cvm", [100, 1000, 10_000], seeds=20)
        errs = [r["median_abs_error"] for r in sw["rows"]]
        assert errs[0] > errs[1] > errs[2]
        assert sw["degenerate"] and sw["threshold"] == 0.01

    def test_increasing_ns(self):
        with pytest.raises(ConfigError):
            hn.consistency_sweep(get_model("linear_uniform"), "sobol", [1000, 100])

    def test_delta_study(self):
        st = hn.delta_scaling_study(get_model("step_model"))
        assert st["pass"]
        values = [r["sqrt_n_delta"] for r in st["rows"]]
        assert values[0] > values[-1]
        assert all(r["delta"] == 0.0 for r in hn.delta_scaling_study(get_model("pure_noise"))["rows"])

    def test_deterministic_delta(self):
        st = hn.delta_scaling_study(get_model("deterministic_monotone"))
        rows = st["rows"]
        assert rows[0]["sqrt_n_delta"] > rows[-1]["sqrt_n_delta"]
        assert max(r["n"] * r["delta"] for r in rows) < 1.1
