import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from sensindex import variance as var
from sensindex.errors import DegenerateVariance, InvalidLevel
from sensindex.estimators import cvm_rank_estimate, h
from sensindex.harness import replicate_estimates
from sensindex.models import CATALOGUE, get_model, output_moments
from sensindex.suites import psd_margin, scalar_catalogue

import oracles


def scipy_sigma_trig(a):
    """Sigma0 and Sigma1 of sin(2 pi x) + U[-a, a] by adaptive scipy quadrature."""
    s = lambda x: math.sin(2 * math.pi * x)
    feats = [lambda x: s(x) ** 2, s, lambda x: s(x) ** 2 + a * a / 3]
    mean = [integrate.quad(g, 0, 1, limit=200)[0] for g in feats]
    s0 = np.array([[integrate.quad(lambda x: (feats[i](x) - mean[i]) * (feats[j](x) - mean[j]), 0, 1,
                                   limit=200)[0] for j in range(3)] for i in range(3)])
    v2 = a * a / 3
    vw2 = a ** 4 / 5 - a ** 4 / 9

    def s1(i, j, x):
        c = s(x)
        av = np.array([2 * c, 1.0, 1.0])
        sa = np.outer(av, av)
        sa[0, 0] += v2
        sb = np.empty((3, 3))
        sb[:2, :2] = v2
        sb[:2, 2] = sb[2, :2] = 2 * c * v2
        sb[2, 2] = 4 * c * c * v2 + vw2
        return sa[i, j] * sb[i, j]

    s1m = np.array([[integrate.quad(lambda x: s1(i, j, x), 0, 1, limit=200)[0] for j in range(3)]
                    for i in range(3)])
    return s0, s1m


class TestSobolBlocks:
    def test_linear_uniform_frozen(self):
        m = get_model("linear_uniform")
        assert_allclose(var.sigma0(m, m), oracles.LINEAR_UNIFORM_SIGMA0, rtol=1e-10, atol=1e-14)
        assert_allclose(var.sigma1(m, m), oracles.LINEAR_UNIFORM_SIGMA1, rtol=1e-10, atol=1e-14)
        assert_allclose(var.v_vector(m), [6, -6, -3], rtol=1e-12)
        assert_allclose(var.sobol_asymptotic_variance(m).total, oracles.LINEAR_UNIFORM_SOBOL_SIGMA2, rtol=1e-10)

    def test_linear_uniform_blocks(self):
        m = get_model("linear_uniform")
        x = np.array([0.2, 0.7])
        assert_allclose(var.sigma_a(m, m, x)[:, 1, 1], 1.0)
        assert_allclose(var.sigma_b(m, m, x)[:, 1, 1], 1 / 12, rtol=1e-12)

    def test_trig_against_scipy(self):
        m = get_model("trig_bounded")
        s0, s1 = scipy_sigma_trig(0.5)
        assert_allclose(var.sigma0(m, m), s0, rtol=1e-8, atol=1e-12)
        assert_allclose(var.sigma1(m, m), s1, rtol=1e-8, atol=1e-12)

    def test_pure_noise(self):
        m = get_model("pure_noise")
        assert np.all(var.sigma0(m, m) == 0.0)
        b = var.sobol_asymptotic_variance(m)
        assert b.sigma0_contrib == 0.0
        assert_allclose(b.total, b.sigma1_contrib)
        assert_allclose(b.total, 1.0, rtol=1e-10)
        mom = output_moments(m)
        assert_allclose(var.v_vector(m), np.array([1, -2 * mom["mean"], 0]) / mom["var"], atol=1e-12)

    def test_deterministic(self):
        m = get_model("deterministic_monotone")
        assert np.all(var.sigma_b(m, m, np.linspace(0, 1, 5)) == 0.0)
        assert np.all(var.sigma1(m, m) == 0.0)
        b = var.sobol_asymptotic_variance(m)
        assert b.sigma1_contrib == 0.0
        assert_allclose(b.total, b.v @ b.sigma0 @ b.v, atol=1e-14)
        mom = output_moments(m)
        assert_allclose(b.v, np.array([1, 0, -1]) / mom["var"], atol=1e-10)
        assert b.total < 1e-10

    @pytest.mark.parametrize("name", sorted(CATALOGUE))
    def test_v_is_gradient(self, name):
        m = get_model(name)
        mom = output_moments(m)
        theta = np.array([mom["var_phi"] + mom["mean"] ** 2, mom["mean"], mom["m2"]])
        step = 1e-6
        grad = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = step
            grad.append((h(*(theta + e)) - h(*(theta - e))) / (2 * step))
        assert_allclose(var.v_vector(m), grad, rtol=1e-6, atol=1e-6)

    def test_transpose_symmetry(self):
        f, g = var.components(get_model("linear_noise_pair"))
        assert_allclose(var.sigma0(f, g), var.sigma0(g, f).T, atol=1e-9)
        assert_allclose(var.sigma1(f, g), var.sigma1(g, f).T, atol=1e-9)

    def test_symmetric_for_equal_args(self):
        for m in scalar_catalogue():
            for mat in (var.sigma0(m, m), var.sigma1(m, m)):
                assert_allclose(mat, mat.T, atol=1e-10)

    @settings(max_examples=10)
    @given(st.floats(0.05, 2.0), st.floats(0.05, 1.0), st.floats(0.1, 0.9))
    def test_psd_random_params(self, a, jump, at):
        for m in (get_model("trig_bounded", {"a": a}), get_model("step_model", {"jump": jump, "at": at})):
            assert psd_margin(var.sigma0(m, m)) >= -1e-9
            assert psd_margin(var.sigma1(m, m)) >= -1e-9
            assert var.sobol_asymptotic_variance(m).total >= 0.0


class TestGamma:
    def test_diagonal_reduction(self):
        comps = var.components(get_model("linear_noise_pair"))
        g = var.gamma_matrix(comps)
        for k, c in enumerate(comps):
            assert_allclose(g[k, k], var.sobol_asymptotic_variance(c).total, rtol=1e-10)
        assert_allclose(g, g.T)
        assert psd_margin(g) >= -1e-9

    def test_duplicated(self):
        m = get_model("linear_uniform")
        g = var.gamma_matrix([m, m])
        assert_allclose(g, np.full((2, 2), g[0, 0]), rtol=1e-12)

    def test_limit(self):
        m = get_model("linear_uniform")
        with pytest.raises(ValueError):
            var.gamma_matrix([m] * 5)


class TestDelta:
    def test_pure_noise_zero(self):
        for n in (100, 1000, 10_000):
            assert var.delta_n(get_model("pure_noise"), n).value == 0.0

    @pytest.mark.parametrize("n", [10, 100, 1000])
    def test_linear_closed_form(self, n):
        # E (X_1 - X_N(1))^2 for uniform X: (n - 1) / (n (n + 1))
        d = var.delta_n(get_model("linear_uniform"), n)
        assert abs(d.value - (n - 1) / (n * (n + 1))) < 4 * d.se

    @pytest.mark.parametrize("n", [10, 100, 1000])
    def test_deterministic_cvm_closed_form(self, n):
        d = var.delta_n(get_model("deterministic_monotone"), n, kind="cvm")
        assert abs(d.value - 2 * (n - 1) / (n * (n + 1))) < 4 * d.se

    def test_against_direct_samples(self):
        from sensindex.models import sample_with_noise
        from sensindex.ranking import neighbor_map, sort_permutation
        m, n = get_model("trig_bounded"), 50
        vals = []
        for s in range(4000):
            xs, _ = sample_with_noise(m, n, s)
            nb = neighbor_map(sort_permutation(xs))
            vals.append(np.mean((m.phi(xs) - m.phi(xs[nb])) ** 2))
        direct, se_direct = np.mean(vals), np.std(vals) / np.sqrt(len(vals))
        d = var.delta_n(m, n)
        assert abs(d.value - direct) < 4 * math.hypot(d.se, se_direct)

    def test_reproducible(self):
        m = get_model("step_model")
        assert var.delta_n(m, 500, seed=3) == var.delta_n(m, 500, seed=3)
        assert float(var.delta_n(m, 500, seed=3)) == var.delta_n(m, 500, seed=3).value


class TestCvm:
    grid = (np.arange(32) + 0.5) / 32

    def test_independence_kernels(self):
        t, s = np.meshgrid(self.grid, self.grid, indexing="ij")
        k = var.cvm_kernels(get_model("pure_noise"), t, s)
        m = np.minimum(t, s)
        assert_allclose(k.c_xx, (m + 3 * t * s) * (m - t * s), atol=1e-10)
        assert_allclose(k.c_xy, 2 * s * (m - t * s), atol=1e-10)
        assert_allclose(k.c_yy, m - t * s, atol=1e-12)

    @pytest.mark.parametrize("name", ["linear_uniform", "trig_bounded", "step_model"])
    def test_kernel_symmetries(self, name):
        model = get_model(name)
        ts = model.y_quantile(self.grid[::4])
        t, s = np.meshgrid(ts, ts, indexing="ij")
        k = var.cvm_kernels(model, t, s)
        fy = model.marginal_cdf(ts)
        assert_allclose(np.diag(k.c_yy), fy * (1 - fy), atol=1e-10)
        assert_allclose(k.c_yy, k.c_yy.T, atol=1e-12)
        assert_allclose(k.c_xx, k.c_xx.T, atol=1e-8)
        assert_allclose(k.c_yx, k.c_xy.T, atol=1e-8)

    def test_independence_terms(self):
        b = var.cvm_asymptotic_variance(get_model("pure_noise"))
        assert_allclose([b.xx_term, b.yy_term, b.xy_term], oracles.PURE_NOISE_CVM_TERMS, rtol=1e-9)
        assert_allclose(b.total, oracles.PURE_NOISE_CVM_SIGMA2, rtol=1e-9)

    def test_self_consistency(self):
        pn = get_model("pure_noise")
        a, b = var.cvm_double_integrals(pn, 256), var.cvm_double_integrals(pn, 512)
        tot = lambda v: 36 * (v[0] + v[1] - 2 * v[2])
        assert abs(tot(a) / tot(b) - 1) < 1e-6

    def test_noiseless(self):
        b = var.cvm_asymptotic_variance(get_model("deterministic_monotone"))
        assert b.total == 0.0 and b.closed_form

    def test_stieltjes_fallback(self):
        from dataclasses import replace
        m = get_model("linear_uniform")
        nopdf = replace(m, cond_pdf=None)
        assert_allclose(var.cvm_double_integrals(nopdf, 512), var.cvm_double_integrals(m, 512), rtol=2e-3)

    @pytest.mark.parametrize("name", sorted(CATALOGUE))
    def test_nonnegative(self, name):
        assert var.cvm_asymptotic_variance(get_model(name)).total >= 0.0

    @pytest.mark.slow
    def test_linear_uniform_against_replicates(self):
        m = get_model("linear_uniform")
        est = replicate_estimates(m, "cvm", 2000, 800, seed=21)
        emp = 2000 * np.var(est, ddof=1)
        assert abs(emp / var.cvm_asymptotic_variance(m).total - 1) < 0.2


class TestInterval:
    def test_table_value(self):
        lo, hi = var.confidence_interval(0.3, 1.0, 100, 0.95)
        assert_allclose([0.3 - lo, hi - 0.3], [oracles.Z_975 / 10] * 2, rtol=1e-12)

    def test_degenerate(self):
        assert var.confidence_interval(0.4, 0.0, 10) == (0.4, 0.4)

    def test_widening(self):
        widths = [np.diff(var.confidence_interval(0, 1, 10, lv))[0] for lv in (0.9, 0.99, 0.999)]
        assert widths[0] < widths[1] < widths[2]

    @pytest.mark.parametrize("level", [0.0, 1.0, -0.2, 1.5])
    def test_invalid(self, level):
        with pytest.raises(InvalidLevel):
            var.confidence_interval(0, 1, 10, level)

    def test_quantile(self):
        assert abs(var.normal_quantile(0.975) - oracles.Z_975) < 1e-8


def test_degenerate_v():
    from sensindex.models import GenerativeModel
    flat = GenerativeModel(name="flat", f=lambda x, e: 0 * x + 0 * e[..., 0] + 1.0,
                           phi=lambda x: 0 * np.asarray(x) + 1.0, m2=lambda x: 0 * np.asarray(x) + 1.0)
    with pytest.raises(DegenerateVariance):
        var.v_vector(flat)
