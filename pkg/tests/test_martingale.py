import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sensindex import martingale as mg
from sensindex.errors import BoundViolated
from sensindex.models import CATALOGUE, get_model, sample_with_noise
from sensindex.suites import scalar_catalogue
from sensindex.variance import sigma1


def loop_z(model, xs, eps):
    """Z_j by a plain loop over the sorted path, f_0 taken at the largest x with eps = 0."""
    order = sorted(range(len(xs)), key=lambda i: xs[i])
    f = [float(model(np.array([xs[order[-1]]]), np.zeros((1, model.noise_dim)))[0])]
    f += [float(model(np.array([xs[i]]), eps[i:i + 1])[0]) for i in order]
    z = [0.0]
    for i in range(1, len(f)):
        z.append(z[-1] + f[i - 1] * f[i])
    return np.array(z)


@pytest.fixture(params=sorted(CATALOGUE))
def model(request):
    return get_model(request.param)


class TestPath:
    def test_z_matches_loop(self, model):
        xs, eps = sample_with_noise(model, 40, 2)
        p = mg.path_from_arrays(model, xs, eps)
        assert_allclose(p.z, loop_z(model, xs, eps), rtol=1e-13, atol=1e-13)

    def test_starts_at_zero(self, model):
        p = mg.build_path(model, 30, 0)
        assert p.z[0] == p.a_exact[0] == p.m_exact[0] == 0.0

    @settings(max_examples=25)
    @given(st.integers(3, 300), st.integers(0, 10**6))
    def test_identity(self, n, seed):
        for m in scalar_catalogue():
            p = mg.build_path(m, n, seed)
            assert p.identity_error() <= 1e-12 * n * max(m.sup_norm, 1.0) ** 2

    def test_a_exact_ignores_noise(self, model):
        xs, eps = sample_with_noise(model, 60, 5)
        a = mg.path_from_arrays(model, xs, eps).a_exact
        b = mg.path_from_arrays(model, xs, np.random.default_rng(9).random(eps.shape)).a_exact
        assert_array_equal(a, b)

    def test_remainder_bound(self, model):
        for s in range(20):
            mg.remainder_path(model, 200, s)

    def test_bound_violation(self):
        m = get_model("linear_uniform")
        p = mg.build_path(m, 50, 0)
        p.qv = 1e6
        with pytest.raises(BoundViolated):
            mg.remainder_path(m, 50, 0, p)

    def test_remainder_fluctuations_shrink(self):
        m = get_model("linear_uniform")
        spread = []
        for n in (100, 1000, 10_000):
            r = np.array([mg.build_path(m, n, s).r_approx[-1] for s in range(200)])
            spread.append(np.var(r / np.sqrt(n)))
        assert spread[0] > spread[1] > spread[2]

    def test_trace(self, tmp_path):
        p = mg.build_path(get_model("trig_bounded"), 12, 1)
        out = tmp_path / "trace.csv"
        mg.write_trace(out, p)
        rows = list(csv.reader(out.open()))
        assert tuple(rows[0]) == mg.TRACE_COLUMNS
        assert len(rows) == 14
        assert float(rows[-1][1]) == p.z[-1]


class TestMartingaleProperty:
    @pytest.mark.parametrize("name", ["pure_noise", "linear_uniform", "trig_bounded", "step_model"])
    def test_increments_centred(self, name):
        rep = mg.martingale_property_check(get_model(name), 20, 100_000, 0, js=[1, 2, 10, 20])
        assert rep["pass"] and rep["a_exact_frozen"]
        for row in rep["rows"][1:]:
            # the exact increment carries the predicted drift phi_j m_{j-1}
            assert abs(row["exact_mean"] - row["exact_predicted_drift"]) < 5 * row["se"] + 1e-12

    def test_deterministic_exact_zero(self):
        rep = mg.martingale_property_check(get_model("deterministic_monotone"), 20, 1000, 0)
        assert all(r["mean"] == 0.0 and r["se"] == 0.0 for r in rep["rows"])

    def test_azuma(self):
        for name in ("linear_uniform", "trig_bounded"):
            assert mg.azuma_check(get_model(name), 200, seeds=1000)["pass"]


class TestBracket:
    def test_deterministic_zero(self):
        m = get_model("deterministic_monotone")
        assert np.all(mg.bracket_path(m, m, 50, 0) == 0.0)

    def test_increments_psd(self, model):
        b = mg.bracket_path(model, model, 200, 3)
        inc = np.diff(b, axis=0)
        eig = np.linalg.eigvalsh(0.5 * (inc + inc.transpose(0, 2, 1)))
        assert np.all(eig >= -1e-12 * np.maximum(1.0, np.abs(inc).max()))

    def test_converges(self):
        m = get_model("linear_uniform")
        acc = np.mean([mg.bracket_path(m, m, 2000, s)[-1] / 2000 for s in range(20)], axis=0)
        assert_allclose(acc, sigma1(m, m), rtol=0.05)

    def test_cross_bracket_shape(self):
        pair = get_model("linear_noise_pair")
        f, g = pair.component(0), pair.component(1)
        assert mg.bracket_path(f, g, 20, 0).shape == (21, 3, 3)
