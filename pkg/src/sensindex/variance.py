"""Asymptotic covariance blocks, bias terms and confidence intervals.

Everything is evaluated from a :class:`GenerativeModel` by quadrature over
``u = F_X(x)`` (and ``u = F_Y(t)`` for the CvM kernels).  Noise moments at
fixed x use the tensor Gauss-Legendre rule of :mod:`sensindex.models`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from . import quadrature as quad
from .errors import DegenerateVariance, InvalidLevel
from .models import GenerativeModel, cond_cross_moments, output_moments
from .quadrature import x_rule
from .streams import stream

DEFAULT_DELTA_BUDGET = 20_000


# -- Sobol' blocks -------------------------------------------------------------


def _x_nodes(model_f, model_g, n, order):
    breaks = tuple(sorted(set(model_f.x_breaks) | set(model_g.x_breaks)))
    u, w = quad.composite_rule(n, breaks, order)
    return model_f.x_ppf(u), w


def _features(model, x):
    phi = model.cond_mean(x)
    return np.stack([phi * phi, phi, model.cond_m2(x)], axis=-1)


def _weighted_cov(a, b, w):
    w = w / w.sum()

    def centred(arr):
        c = arr - w @ arr
        c[:, np.ptp(arr, axis=0) == 0] = 0.0  # constant features have no spread at all
        return c

    ca, cb = centred(a), centred(b)
    return (ca * w[:, None]).T @ cb


def sigma0(model_f: GenerativeModel, model_g: GenerativeModel, spec=quad.DEFAULT) -> np.ndarray:
    """Covariance over X of (phi_f^2, phi_f, m2_f) against (phi_g^2, phi_g, m2_g)."""
    def evaluate(n):
        x, w = _x_nodes(model_f, model_g, n, spec.order)
        return _weighted_cov(_features(model_f, x), _features(model_g, x), w)

    val, _, _ = quad.refine(evaluate, spec, "sigma0")
    return np.asarray(val)


def _noise_covariances(model_f, model_g, x, method="quadrature", budget=None, seed=0):
    if model_f.noiseless or model_g.noiseless:
        # a noiseless factor makes every covariance over eps vanish identically
        return np.zeros(np.shape(x)), np.zeros(np.shape(x) + (3, 3))
    kw = {} if budget is None else {"budget": budget}
    mom = cond_cross_moments(model_f, model_g, x, method=method, seed=seed, **kw)
    c_fg = mom["fg"] - mom["f"] * mom["g"]
    c_f_g2 = mom["fgg"] - mom["f"] * mom["gg"]
    c_f2_g = mom["ffg"] - mom["ff"] * mom["g"]
    c_f2_g2 = mom["ffgg"] - mom["ff"] * mom["gg"]
    sb = np.empty(np.shape(x) + (3, 3))
    sb[..., :2, :2] = c_fg[..., None, None]
    sb[..., :2, 2] = c_f_g2[..., None]
    sb[..., 2, :2] = c_f2_g[..., None]
    sb[..., 2, 2] = c_f2_g2
    return c_fg, sb


def sigma_a(model_f: GenerativeModel, model_g: GenerativeModel, x) -> np.ndarray:
    """(2 phi_f, 1, 1)(2 phi_g, 1, 1)^T + Cov_eps(f, g) E_11, broadcast over x."""
    x = np.asarray(x, dtype=float)
    af = np.stack(np.broadcast_arrays(2.0 * model_f.cond_mean(x), 1.0, 1.0), axis=-1)
    ag = np.stack(np.broadcast_arrays(2.0 * model_g.cond_mean(x), 1.0, 1.0), axis=-1)
    out = af[..., :, None] * ag[..., None, :]
    c_fg, _ = _noise_covariances(model_f, model_g, x)
    out[..., 0, 0] += c_fg
    return out


def sigma_b(model_f: GenerativeModel, model_g: GenerativeModel, x, method: str = "quadrature",
            budget: int | None = None, seed: int = 0) -> np.ndarray:
    """Noise covariance of (f, f, f^2) against (g, g, g^2) at fixed x."""
    _, sb = _noise_covariances(model_f, model_g, np.asarray(x, dtype=float), method, budget, seed)
    return sb


def sigma1(model_f: GenerativeModel, model_g: GenerativeModel, spec=quad.DEFAULT) -> np.ndarray:
    """E_X of the Hadamard product sigma_a * sigma_b."""
    def evaluate(n):
        x, w = _x_nodes(model_f, model_g, n, spec.order)
        prod = sigma_a(model_f, model_g, x) * sigma_b(model_f, model_g, x)
        return np.tensordot(w, prod, axes=1)

    val, _, _ = quad.refine(evaluate, spec, "sigma1")
    return np.asarray(val)


def v_vector(model: GenerativeModel, spec=quad.DEFAULT) -> np.ndarray:
    """Gradient of h at the population moments: (1, 2E[Y](rho - 1), -rho) / Var(Y)."""
    mom = output_moments(model, spec)
    var = float(mom["var"])
    if var <= 1e-14 * max(1.0, float(mom["m2"])):
        raise DegenerateVariance(f"Var(Y) = {var!r} for model {model.name}")
    rho = float(mom["var_phi"]) / var
    return np.array([1.0, 2.0 * float(mom["mean"]) * (rho - 1.0), -rho]) / var


@dataclass
class SobolBreakdown:
    sigma0: np.ndarray
    sigma1: np.ndarray
    v: np.ndarray
    sigma0_contrib: float
    sigma1_contrib: float
    total: float

    def to_dict(self) -> dict:
        return {
            "index": "sobol",
            "sigma0": self.sigma0.tolist(),
            "sigma1": self.sigma1.tolist(),
            "v": self.v.tolist(),
            "sigma0_contrib": self.sigma0_contrib,
            "sigma1_contrib": self.sigma1_contrib,
            "total": self.total,
        }


def sobol_asymptotic_variance(model: GenerativeModel, spec=quad.DEFAULT) -> SobolBreakdown:
    v = v_vector(model, spec)
    s0 = sigma0(model, model, spec)
    s1 = sigma1(model, model, spec)
    c0, c1 = float(v @ s0 @ v), float(v @ s1 @ v)
    # both quadratic forms are of PSD matrices; clip round-off below zero
    return SobolBreakdown(s0, s1, v, c0, c1, max(c0 + c1, 0.0))


def gamma_block(models, k: int, l: int, spec=quad.DEFAULT) -> float:
    mk, ml = models[k], models[l]
    s = sigma0(mk, ml, spec) + sigma1(mk, ml, spec)
    return float(v_vector(mk, spec) @ s @ v_vector(ml, spec))


def gamma_matrix(models, spec=quad.DEFAULT) -> np.ndarray:
    d = len(models)
    if d > 4:
        raise ValueError("multivariate studies are limited to d <= 4")
    out = np.empty((d, d))
    for k in range(d):
        for l in range(k, d):
            out[k, l] = out[l, k] = gamma_block(models, k, l, spec)
    return out


def components(model: GenerativeModel) -> list:
    return [model.component(k) for k in range(model.d)]


# -- bias terms ----------------------------------------------------------------


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    se: float
    n: int
    budget: int
    kind: str = "sobol"

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "value": self.value, "se": self.se,
                "budget": self.budget}


def neighbour_pairs(n: int, budget: int, seed: int):
    """Exact draws of (U_1, U_N(1)) in rank space for an i.i.d. uniform sample.

    Returns ``(inner, wrap)``: ``budget`` pairs where observation 1 is not
    the maximum (its neighbour is the next order statistic) and ``budget``
    pairs where it is (the neighbour is the minimum).  The strata carry
    probabilities (n - 1)/n and 1/n.
    """
    rng = stream(seed, 11, n)
    r = rng.integers(1, n, size=budget)  # rank of observation 1, not the max
    lo = rng.beta(r, n - r + 1)
    hi = lo + (1.0 - lo) * rng.beta(1, n - r)
    top = rng.beta(n, 1, size=budget)
    bottom = top * rng.beta(1, n - 1, size=budget)
    return (lo, hi), (top, bottom)


def _combine(inner, wrap, n, budget):
    w_in, w_wr = (n - 1) / n, 1.0 / n
    value = w_in * inner.mean() + w_wr * wrap.mean()
    var = w_in ** 2 * inner.var(ddof=1) / budget + w_wr ** 2 * wrap.var(ddof=1) / budget
    return float(value), float(math.sqrt(max(var, 0.0)))


def delta_n(model: GenerativeModel, n: int, mc_budget: int = DEFAULT_DELTA_BUDGET, seed: int = 0,
            kind: str = "sobol", spec=quad.CVM_DEFAULT) -> DeltaEstimate:
    """Monte Carlo value of the neighbour-difference bias term.

    ``kind="sobol"`` averages (phi(X_1) - phi(X_N(1)))^2; ``kind="cvm"``
    averages the integral over F_Y of the squared conditional-CDF gap.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    (a1, b1), (a2, b2) = neighbour_pairs(n, mc_budget, seed)
    if kind == "sobol":
        def gap(ua, ub):
            return (model.cond_mean(model.x_ppf(ua)) - model.cond_mean(model.x_ppf(ub))) ** 2
    elif kind == "cvm":
        if model.noiseless:
            # F(t|x) is the indicator of t >= phi(x), so the squared gap integrates to a CDF gap
            def gap(ua, ub):
                ya = model.marginal_cdf(model.cond_mean(model.x_ppf(ua)))
                yb = model.marginal_cdf(model.cond_mean(model.x_ppf(ub)))
                return np.abs(ya - yb)
        else:
            uu, wu = quad.composite_rule(spec.nodes, (), spec.order)
            t = model.y_quantile(uu)

            def gap(ua, ub):
                out = np.empty(ua.shape)
                for sl in np.array_split(np.arange(ua.size), max(1, ua.size // 2048)):
                    fa = model.cond_cdf(t[None, :], model.x_ppf(ua[sl])[:, None])
                    fb = model.cond_cdf(t[None, :], model.x_ppf(ub[sl])[:, None])
                    out[sl] = ((fa - fb) ** 2) @ wu
                return out
    else:
        raise ValueError(kind)
    value, se = _combine(gap(a1, b1), gap(a2, b2), n, mc_budget)
    return DeltaEstimate(value, se, n, mc_budget, kind)


# -- CvM kernels ---------------------------------------------------------------


@dataclass(frozen=True)
class CvmKernelEval:
    """Kernel values at (t, s).

    ``c_xy`` follows the printed convention, the covariance of the
    neighbour-curve process at s with the empirical-CDF process at t;
    ``c_yx`` is the same function with its arguments exchanged.
    """

    t: np.ndarray
    s: np.ndarray
    c_xx: np.ndarray
    c_xy: np.ndarray
    c_yy: np.ndarray
    c_yx: np.ndarray


def cvm_kernels(model: GenerativeModel, t, s, spec=quad.CVM_DEFAULT) -> CvmKernelEval:
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    m = np.minimum(t, s)

    def evaluate(n):
        ux, wx = x_rule(n, model.x_breaks)
        x = model.x_ppf(ux)
        ft = model.cond_cdf(t[..., None], x)
        fs = model.cond_cdf(s[..., None], x)
        fm = model.cond_cdf(m[..., None], x)
        e = lambda arr: arr @ wx
        tt, ts = e(ft * ft), e(fs * fs)
        c_xx = e(ft * ft * fs * fs) - tt * ts + e((fm + 3 * ft * fs) * (fm - ft * fs))
        fy_t, fy_s = e(ft), e(fs)
        # covariance of the curve process at `first` with the CDF process at `second`
        c_first_t = e(ft * ft * fs) - tt * fy_s + e(2 * ft * (fm - ft * fs))
        c_first_s = e(fs * fs * ft) - ts * fy_t + e(2 * fs * (fm - ft * fs))
        return np.stack([c_xx, c_first_s, c_first_t])

    val, _, _ = quad.refine(evaluate, spec, "CvM kernels")
    fy = lambda a: model.marginal_cdf(a)
    c_yy = fy(m) - fy(t) * fy(s)
    return CvmKernelEval(t, s, val[0], val[1], np.asarray(c_yy), val[2])


@dataclass
class CvmBreakdown:
    xx_term: float
    yy_term: float
    xy_term: float
    total: float
    nodes: int | None = None
    closed_form: bool = False

    def to_dict(self) -> dict:
        return {"index": "cvm", "xx_term": self.xx_term, "yy_term": self.yy_term,
                "xy_term": self.xy_term, "total": self.total, "nodes": self.nodes,
                "closed_form": self.closed_form}


def _t_density(model, t, x, wx, G):
    """dT/du at u = F_Y(t): E[2 F p] / E[p] with p the conditional density."""
    p = model.cond_pdf(t[:, None], x[None, :])
    num = (2.0 * G * p) @ wx
    den = p @ wx
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _pair_moments_matrix(Ga, Gb, wx):
    """E[F_a^i F_b^j] for all node pairs, (i, j) in {11, 21, 12, 22}."""
    Ga2, Gb2 = Ga * Ga, Gb * Gb
    return {"11": (Ga * wx) @ Gb.T, "21": (Ga2 * wx) @ Gb.T,
            "12": (Ga * wx) @ Gb2.T, "22": (Ga2 * wx) @ Gb2.T}


def _pair_moments_elementwise(Ga, Gb, wx):
    Ga2, Gb2 = Ga * Ga, Gb * Gb
    return {"11": (Ga * Gb) @ wx, "21": (Ga2 * Gb) @ wx, "12": (Ga * Gb2) @ wx,
            "22": (Ga2 * Gb2) @ wx}


def _k_xx_lower(mom, Tu, Tv):
    # u < v, pair moments indexed (u, v); t ^ s picks u
    return Tu + 2.0 * mom["21"] - 2.0 * mom["22"] - Tu * Tv


def _k_xy_lower(mom, Tu, v):
    # first argument (curve process) u < second (CDF process) v
    return 2.0 * Tu - mom["21"] - Tu * v


def _k_xy_upper(mom, Tu, v):
    # u > v
    return 2.0 * mom["11"] - mom["21"] - Tu * v


def _cvm_terms_gl(model, n, order, fubini_swap=False):
    u, wu = quad.composite_rule(n, (), order)
    P = u.size // order
    ux, wx = x_rule(n, model.x_breaks)
    x = model.x_ppf(ux)

    def G_of(uu):
        t = model.y_quantile(uu)
        return t, model.cond_cdf(t[:, None], x[None, :])

    t, G = G_of(u)
    T = (G * G) @ wx
    dT = _t_density(model, t, x, wx, G) * wu
    mom = _pair_moments_matrix(G, G, wx)
    panel = np.repeat(np.arange(P), order)
    lower = panel[:, None] < panel[None, :]
    upper = panel[:, None] > panel[None, :]
    U, V = u[:, None], u[None, :]
    Tu, Tv = T[:, None], T[None, :]
    wU, wV = wu[:, None], wu[None, :]
    dU, dV = dT[:, None], dT[None, :]

    mom_t = {"21": mom["12"], "22": mom["22"]}  # E[F_v^2 F_u] at [u, v]
    k_xx = np.where(lower, _k_xx_lower(mom, Tu, Tv), 0.0)
    k_xx = k_xx + np.where(upper, _k_xx_lower(mom_t, Tv, Tu), 0.0)
    k_yy = np.where(panel[:, None] != panel[None, :], np.minimum(U, V) - U * V, 0.0)
    k_xy = np.where(lower, _k_xy_lower(mom, Tu, V), 0.0) + np.where(upper, _k_xy_upper(mom, Tu, V), 0.0)

    def total(arr):
        if fubini_swap:
            return float(arr.sum(axis=0).sum())
        return float(arr.sum(axis=1).sum())

    xx = total(k_xx * wU * wV)
    yy = total(k_yy * dU * dV)
    xy = total(k_xy * wU * dV)

    # diagonal panels: collapsed triangle so the t ^ s kink sits on an edge
    g, wg = quad.gauss_legendre(order)
    xi, eta = np.meshgrid(g, g, indexing="ij")
    wxi, weta = np.meshgrid(wg, wg, indexing="ij")
    edges = np.linspace(0.0, 1.0, P + 1)
    a_lo, h_p = edges[:-1, None], np.diff(edges)[:, None]
    A = (a_lo + h_p * xi.ravel()).ravel()
    B = (a_lo + h_p * xi.ravel() * eta.ravel()).ravel()
    wt = (h_p ** 2 * (xi * wxi * weta).ravel()).ravel()
    tA, GA = G_of(A)
    tB, GB = G_of(B)
    TA, TB = (GA * GA) @ wx, (GB * GB) @ wx
    dTA, dTB = _t_density(model, tA, x, wx, GA), _t_density(model, tB, x, wx, GB)
    m_ba = _pair_moments_elementwise(GB, GA, wx)  # indexed (B, A), B < A
    m_ab = _pair_moments_elementwise(GA, GB, wx)
    xx += 2.0 * float(wt @ _k_xx_lower(m_ba, TB, TA))
    yy += 2.0 * float(wt @ ((B - A * B) * dTA * dTB))
    xy += float(wt @ (_k_xy_upper(m_ab, TA, B) * dTB + _k_xy_lower(m_ba, TB, A) * dTA))
    return np.array([xx, yy, xy])


def _cvm_terms_stieltjes(model, n, fubini_swap=False):
    """Midpoint-rule fallback when no conditional density is available."""
    m = max(n, 2048)
    e = np.linspace(0.0, 1.0, m + 1)
    u = 0.5 * (e[:-1] + e[1:])
    wu = np.diff(e)
    ux, wx = x_rule(n, model.x_breaks)
    x = model.x_ppf(ux)
    G = model.cond_cdf(model.y_quantile(u)[:, None], x[None, :])
    Ge = model.cond_cdf(model.y_quantile(np.clip(e, 1e-15, 1 - 1e-15))[:, None], x[None, :])
    T = (G * G) @ wx
    dT = np.diff((Ge * Ge) @ wx)
    mom = _pair_moments_matrix(G, G, wx)
    lower = u[:, None] < u[None, :]
    upper = u[:, None] > u[None, :]
    diag = ~(lower | upper)
    U, V = u[:, None], u[None, :]
    Tu, Tv = T[:, None], T[None, :]
    mom_t = {"21": mom["12"], "22": mom["22"]}  # E[F_v^2 F_u] at [u, v]
    k_xx = np.where(lower | diag, _k_xx_lower(mom, Tu, Tv), _k_xx_lower(mom_t, Tv, Tu))
    k_yy = np.minimum(U, V) - U * V
    k_xy = np.where(lower | diag, _k_xy_lower(mom, Tu, V), _k_xy_upper(mom, Tu, V))
    axis = 0 if fubini_swap else 1
    xx = float((k_xx * wu[:, None] * wu[None, :]).sum(axis=axis).sum())
    yy = float((k_yy * dT[:, None] * dT[None, :]).sum(axis=axis).sum())
    xy = float((k_xy * wu[:, None] * dT[None, :]).sum(axis=axis).sum())
    return np.array([xx, yy, xy])


def cvm_double_integrals(model: GenerativeModel, n: int, order: int = 8, fubini_swap: bool = False):
    """The three double integrals at a fixed resolution (no refinement)."""
    if model.cond_pdf is not None:
        return _cvm_terms_gl(model, n, order, fubini_swap)
    return _cvm_terms_stieltjes(model, n, fubini_swap)


def cvm_asymptotic_variance(model: GenerativeModel, spec=quad.CVM_DEFAULT) -> CvmBreakdown:
    """36 * (xx + yy - 2 xy), integrals taken in u = F_Y(t) coordinates."""
    if model.noiseless:
        # F(t|X) is an indicator of U <= F_Y(t) with U uniform: each term is
        # the integral of (u ^ v - uv), i.e. 1/12, and the total vanishes
        return CvmBreakdown(1 / 12, 1 / 12, 1 / 12, 0.0, None, True)
    if model.cond_cdf is None:
        raise ValueError(f"model {model.name} has no conditional CDF")
    val, nodes, _ = quad.refine(lambda n: cvm_double_integrals(model, n, spec.order), spec,
                                "CvM variance")
    xx, yy, xy = map(float, val)
    return CvmBreakdown(xx, yy, xy, max(36.0 * (xx + yy - 2.0 * xy), 0.0), nodes)


# -- intervals -----------------------------------------------------------------


def normal_quantile(p: float) -> float:
    """Standard normal quantile (Wichura's AS241 rational approximation via the stdlib)."""
    if not 0.0 < p < 1.0:
        raise InvalidLevel(f"probability {p!r} outside (0, 1)")
    return NormalDist().inv_cdf(p)


def confidence_interval(point: float, variance: float, n: int, level: float = 0.95):
    if not (isinstance(level, (int, float)) and 0.0 < level < 1.0):
        raise InvalidLevel(f"level must lie in (0, 1), got {level!r}")
    if variance < 0 or not math.isfinite(variance):
        raise ValueError("variance must be finite and nonnegative")
    if n < 1:
        raise ValueError("n must be positive")
    half = normal_quantile(0.5 * (1.0 + level)) * math.sqrt(variance / n)
    return point - half, point + half
