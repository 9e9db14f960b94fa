"""Generative models ``Y = f(X, eps)`` with conditional-law oracles.

Noise is always a vector of independent U[0, 1] coordinates (``noise_dim``
of them), which is the representation the quantile transfer produces, so
conditional expectations over the noise reduce to integrals over the unit
cube.  Inputs are described by their quantile function ``x_ppf`` and are
sampled by inversion.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import quadrature as quad
from .errors import InnerBudgetExceeded, InvalidConditionalCdf, ParseError, UnknownModel
from .ranking import Sample
from .streams import stream

INNER_NODES = 32
INNER_MC_BUDGET = 10_000


def _uniform_ppf(u):
    return np.asarray(u, dtype=float)


def _uniform_cdf(x):
    return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)


@dataclass(frozen=True)
class GenerativeModel:
    name: str
    f: Callable
    noise_dim: int = 1
    d: int = 1
    phi: Callable | None = None
    m2: Callable | None = None
    cond_cdf: Callable | None = None
    cond_pdf: Callable | None = None
    x_ppf: Callable = _uniform_ppf
    x_cdf: Callable = _uniform_cdf
    y_cdf: Callable | None = None
    y_ppf: Callable | None = None
    bounds: tuple = (0.0, 1.0)
    x_breaks: tuple = ()
    noiseless: bool = False
    params: dict = field(default_factory=dict)

    @property
    def sup_norm(self) -> float:
        return float(max(abs(self.bounds[0]), abs(self.bounds[1])))

    def x_sampler(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.x_ppf(rng.random(n))

    def __call__(self, x, eps):
        return self.f(np.asarray(x, dtype=float), np.asarray(eps, dtype=float))

    def component(self, k: int) -> "GenerativeModel":
        """Scalar view on output ``k``; the view shares the noise coordinates."""
        if self.d == 1:
            if k != 0:
                raise IndexError(k)
            return self
        subs = self.params.get("components")
        if subs is not None:
            return subs[k]
        raise ValueError(f"model {self.name} does not expose component views")

    # -- conditional moments over the noise ------------------------------------

    def cond_mean(self, x):
        x = np.asarray(x, dtype=float)
        if self.phi is not None:
            return np.broadcast_to(self.phi(x), x.shape + (() if self.d == 1 else (self.d,))).astype(float)
        return cond_expect(self, lambda y: y, x)

    def cond_m2(self, x):
        x = np.asarray(x, dtype=float)
        if self.m2 is not None:
            return np.broadcast_to(self.m2(x), x.shape + (() if self.d == 1 else (self.d,))).astype(float)
        return cond_expect(self, lambda y: y * y, x)

    def y_quantile(self, u):
        u = np.asarray(u, dtype=float)
        if self.y_ppf is not None:
            return self.y_ppf(u)
        return _bisect_inverse(lambda t: self.marginal_cdf(t), u, *self.bounds)

    def marginal_cdf(self, t):
        if self.y_cdf is not None:
            return self.y_cdf(np.asarray(t, dtype=float))
        t = np.asarray(t, dtype=float)
        ux, wx = quad.composite_rule(512, self.x_breaks)
        x = self.x_ppf(ux)
        return self.cond_cdf(t[..., None], x) @ wx


def noise_rule(noise_dim: int, nodes: int = INNER_NODES):
    """Tensor Gauss-Legendre rule on the noise cube: points (Q, k), weights (Q,)."""
    g, w = quad.gauss_legendre(nodes)
    grids = np.meshgrid(*([g] * noise_dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * noise_dim), indexing="ij")
    pts = np.stack([a.ravel() for a in grids], axis=-1)
    wts = np.prod(np.stack([a.ravel() for a in wgrids], axis=-1), axis=-1)
    return pts, wts


def cond_expect(model: GenerativeModel, func, x, nodes: int = INNER_NODES):
    """E_eps[func(f(x, eps))] for each x, by quadrature over the noise cube."""
    x = np.asarray(x, dtype=float)
    pts, wts = noise_rule(model.noise_dim, nodes)
    vals = func(model.f(x[..., None], pts))
    return np.tensordot(vals, wts, axes=([x.ndim], [0])) if model.d == 1 else np.einsum(
        "...qd,q->...d", vals, wts)


def cond_cross_moments(model_f: GenerativeModel, model_g: GenerativeModel, x,
                       method: str = "quadrature", budget: int = INNER_MC_BUDGET,
                       seed: int = 0, nodes: int = INNER_NODES) -> dict:
    """Noise moments of (f, g) at fixed x needed by the covariance blocks.

    Returns a dict of arrays keyed ``f, g, ff, gg, fg, fgg, ffg, ffgg``
    (``fgg`` is E[f g^2]).  ``method="mc"`` averages ``budget`` inner draws
    and adds ``*_se`` entries.
    """
    x = np.asarray(x, dtype=float)
    if model_f.noise_dim != model_g.noise_dim:
        raise ValueError("models must share the noise space")
    if method == "quadrature":
        pts, wts = noise_rule(model_f.noise_dim, nodes)
    elif method == "mc":
        if budget > 10 * INNER_MC_BUDGET:
            raise InnerBudgetExceeded(f"inner budget {budget} exceeds {10 * INNER_MC_BUDGET}")
        pts = stream(seed, 7).random((budget, model_f.noise_dim))
        wts = np.full(budget, 1.0 / budget)
    else:
        raise ValueError(method)
    fv = model_f.f(x[..., None], pts)
    gv = model_g.f(x[..., None], pts)
    prods = {
        "f": fv, "g": gv, "ff": fv * fv, "gg": gv * gv, "fg": fv * gv,
        "fgg": fv * gv * gv, "ffg": fv * fv * gv, "ffgg": fv * fv * gv * gv,
    }
    out = {k: v @ wts for k, v in prods.items()}
    if method == "mc":
        for k, v in prods.items():
            out[k + "_se"] = v.std(axis=-1) / math.sqrt(budget)
    return out


def _bisect_inverse(cdf, u, lo, hi, iters: int = 80):
    """Left-continuous inverse ``inf{t : cdf(t) >= u}`` by vectorised bisection."""
    u = np.asarray(u, dtype=float)
    lo = np.full(u.shape, float(lo))
    hi = np.full(u.shape, float(hi))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = cdf(mid) >= u
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return hi


# -- catalogue -----------------------------------------------------------------


def pure_noise() -> GenerativeModel:
    return GenerativeModel(
        name="pure_noise",
        f=lambda x, e: e[..., 0] + 0.0 * x,
        phi=lambda x: np.full(np.shape(x), 0.5),
        m2=lambda x: np.full(np.shape(x), 1.0 / 3.0),
        cond_cdf=lambda t, x: np.clip(t + 0.0 * x, 0.0, 1.0),
        cond_pdf=lambda t, x: ((t >= 0.0) & (t <= 1.0)) + 0.0 * x,
        y_cdf=lambda t: np.clip(t, 0.0, 1.0),
        y_ppf=lambda u: np.asarray(u, dtype=float),
        bounds=(0.0, 1.0),
    )


def deterministic_monotone() -> GenerativeModel:
    return GenerativeModel(
        name="deterministic_monotone",
        f=lambda x, e: x + 0.0 * e[..., 0],
        phi=lambda x: np.asarray(x, dtype=float),
        m2=lambda x: np.asarray(x, dtype=float) ** 2,
        cond_cdf=lambda t, x: (t >= x).astype(float),
        y_cdf=lambda t: np.clip(t, 0.0, 1.0),
        y_ppf=lambda u: np.asarray(u, dtype=float),
        bounds=(0.0, 1.0),
        noiseless=True,
    )


def _triangular_cdf(t):
    t = np.clip(np.asarray(t, dtype=float), 0.0, 2.0)
    return np.where(t <= 1.0, 0.5 * t * t, 1.0 - 0.5 * (2.0 - t) ** 2)


def _triangular_ppf(u):
    u = np.asarray(u, dtype=float)
    return np.where(u <= 0.5, np.sqrt(2.0 * u), 2.0 - np.sqrt(2.0 * (1.0 - u)))


def linear_uniform() -> GenerativeModel:
    return GenerativeModel(
        name="linear_uniform",
        f=lambda x, e: x + e[..., 0],
        phi=lambda x: np.asarray(x, dtype=float) + 0.5,
        m2=lambda x: (np.asarray(x, dtype=float) + 0.5) ** 2 + 1.0 / 12.0,
        cond_cdf=lambda t, x: np.clip(t - x, 0.0, 1.0),
        cond_pdf=lambda t, x: ((t >= x) & (t <= x + 1.0)).astype(float),
        y_cdf=_triangular_cdf,
        y_ppf=_triangular_ppf,
        bounds=(0.0, 2.0),
    )


def _arcsine_cdf_integral(s):
    """Integral from -1 to s of the CDF of sin(2 pi U)."""
    s = np.asarray(s, dtype=float)
    c = np.clip(s, -1.0, 1.0)
    inner = (c + 1.0) / 2.0 + (c * np.arcsin(c) + np.sqrt(1.0 - c * c) - math.pi / 2.0) / math.pi
    return np.where(s <= -1.0, 0.0, np.where(s >= 1.0, s, inner))


def trig_bounded(a: float = 0.5) -> GenerativeModel:
    a = float(a)
    if a <= 0:
        raise ValueError("noise amplitude must be positive")

    def y_cdf(t):
        t = np.asarray(t, dtype=float)
        return np.clip((_arcsine_cdf_integral(t + a) - _arcsine_cdf_integral(t - a)) / (2.0 * a), 0.0, 1.0)

    def cond_cdf(t, x):
        return np.clip((t - np.sin(2 * np.pi * x) + a) / (2.0 * a), 0.0, 1.0)

    def cond_pdf(t, x):
        c = np.sin(2 * np.pi * x)
        return ((t >= c - a) & (t <= c + a)) / (2.0 * a)

    return GenerativeModel(
        name="trig_bounded",
        f=lambda x, e: np.sin(2 * np.pi * x) + a * (2.0 * e[..., 0] - 1.0),
        phi=lambda x: np.sin(2 * np.pi * np.asarray(x, dtype=float)),
        m2=lambda x: np.sin(2 * np.pi * np.asarray(x, dtype=float)) ** 2 + a * a / 3.0,
        cond_cdf=cond_cdf,
        cond_pdf=cond_pdf,
        y_cdf=y_cdf,
        bounds=(-1.0 - a, 1.0 + a),
        params={"a": a},
    )


def step_model(jump: float = 0.5, at: float = 0.5) -> GenerativeModel:
    """Y = jump * 1{X > at} + eps: a regression function with a single jump."""
    jump, at = float(jump), float(at)
    if not 0.0 < jump <= 1.0:
        raise ValueError("jump must lie in (0, 1] to keep the output law atom-free and connected")

    def step(x):
        return jump * (np.asarray(x, dtype=float) > at)

    return GenerativeModel(
        name="step_model",
        f=lambda x, e: step(x) + e[..., 0],
        phi=lambda x: step(x) + 0.5,
        m2=lambda x: step(x) ** 2 + step(x) + 1.0 / 3.0,
        cond_cdf=lambda t, x: np.clip(t - step(x), 0.0, 1.0),
        cond_pdf=lambda t, x: ((t >= step(x)) & (t <= step(x) + 1.0)).astype(float),
        y_cdf=lambda t: at * np.clip(t, 0.0, 1.0) + (1.0 - at) * np.clip(np.asarray(t) - jump, 0.0, 1.0),
        bounds=(0.0, 1.0 + jump),
        x_breaks=(at,),
        params={"jump": jump, "at": at},
    )


def linear_noise_pair() -> GenerativeModel:
    """Two outputs of one input: (X + eps1, eps2) with independent noises."""
    first = replace(linear_uniform(), name="linear_noise_pair[0]", noise_dim=2)
    second = replace(pure_noise(), name="linear_noise_pair[1]", noise_dim=2,
                     f=lambda x, e: e[..., 1] + 0.0 * x)
    return GenerativeModel(
        name="linear_noise_pair",
        f=lambda x, e: np.stack(np.broadcast_arrays(x + e[..., 0], e[..., 1] + 0.0 * x), axis=-1),
        noise_dim=2,
        d=2,
        phi=lambda x: np.stack(np.broadcast_arrays(np.asarray(x) + 0.5, np.full(np.shape(x), 0.5)), axis=-1),
        m2=lambda x: np.stack(np.broadcast_arrays((np.asarray(x) + 0.5) ** 2 + 1 / 12,
                                                  np.full(np.shape(x), 1 / 3)), axis=-1),
        bounds=(0.0, 2.0),
        params={"components": (first, second)},
    )


CATALOGUE = {
    "pure_noise": pure_noise,
    "deterministic_monotone": deterministic_monotone,
    "linear_uniform": linear_uniform,
    "trig_bounded": trig_bounded,
    "step_model": step_model,
}
MULTI_CATALOGUE = {"linear_noise_pair": linear_noise_pair}


def get_model(name: str, params: dict | None = None) -> GenerativeModel:
    params = dict(params or {})
    ctor = CATALOGUE.get(name) or MULTI_CATALOGUE.get(name)
    if ctor is None:
        known = ", ".join(sorted(CATALOGUE) + sorted(MULTI_CATALOGUE))
        raise UnknownModel(f"unknown model {name!r}; known: {known}")
    try:
        return ctor(**params)
    except TypeError as exc:
        raise UnknownModel(f"bad parameters for {name}: {exc}") from None


# -- transfer and sampling -----------------------------------------------------


def validate_cond_cdf(cond_cdf, t_bounds, x_probe, n_t: int = 257, tol: float = 1e-9) -> None:
    lo, hi = t_bounds
    span = hi - lo
    ts = np.linspace(lo - 0.25 * span, hi + 0.25 * span, n_t)
    vals = cond_cdf(ts[:, None], np.asarray(x_probe, dtype=float)[None, :])
    if np.any(vals < -tol) or np.any(vals > 1 + tol):
        raise InvalidConditionalCdf("conditional CDF leaves [0, 1]")
    if np.any(np.diff(vals, axis=0) < -tol):
        raise InvalidConditionalCdf("conditional CDF is not non-decreasing in t")
    if np.any(vals[0] > tol) or np.any(vals[-1] < 1 - tol):
        raise InvalidConditionalCdf("conditional CDF does not reach 0 below and 1 above the bounds")


def quantile_transfer(cond_cdf, x_ppf=_uniform_ppf, t_bounds=(0.0, 1.0), name: str = "transfer",
                      x_cdf=_uniform_cdf, x_breaks=()) -> GenerativeModel:
    """Model with ``f(x, e) = inf{t : F(t | x) >= e}`` and U[0, 1] noise.

    ``t_bounds`` must bracket the support of every conditional law.
    """
    lo, hi = map(float, t_bounds)
    validate_cond_cdf(cond_cdf, (lo, hi), x_ppf(np.linspace(0.005, 0.995, 64)))

    def f(x, e):
        x, e0 = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(e, dtype=float)[..., 0])
        # eps = 0 maps to the lower bound (inf over the whole line is -inf)
        return _bisect_inverse(lambda t: cond_cdf(t, x), e0, lo, hi)

    return GenerativeModel(name=name, f=f, cond_cdf=cond_cdf, x_ppf=x_ppf, x_cdf=x_cdf,
                           bounds=(lo, hi), x_breaks=tuple(x_breaks))


def sample_with_noise(model: GenerativeModel, n: int, seed: int, key: tuple = ()):
    """X draws and their noise vectors, each from its own counter-derived stream."""
    if n < 1:
        raise ValueError("n must be positive")
    xs = model.x_sampler(stream(seed, *key, 0), n)
    eps = stream(seed, *key, 1).random((n, model.noise_dim))
    return xs, eps


def sample_model(model: GenerativeModel, n: int, seed: int, key: tuple = ()) -> Sample:
    """n i.i.d. draws; ``key`` selects a replicate stream under the master seed."""
    xs, eps = sample_with_noise(model, n, seed, key)
    return Sample(xs, model(xs, eps))


# -- ground truth --------------------------------------------------------------


@dataclass(frozen=True)
class TrueIndices:
    sobol: float | np.ndarray
    cvm: float | np.ndarray | None

    def to_dict(self) -> dict:
        conv = lambda v: None if v is None else (np.asarray(v).tolist())
        return {"sobol": conv(self.sobol), "cvm": conv(self.cvm)}


def output_moments(model: GenerativeModel, spec=quad.DEFAULT) -> dict:
    """E[phi], E[phi^2], E[m2] over X by refined quadrature."""
    def evaluate(n):
        u, w = quad.composite_rule(n, model.x_breaks, spec.order)
        x = model.x_ppf(u)
        phi = model.cond_mean(x)
        m2 = model.cond_m2(x)
        return np.stack([w @ phi, w @ (phi * phi), w @ m2])

    val, _, _ = quad.refine(evaluate, spec, "output moments")
    val = np.asarray(val)
    return {"mean": val[0], "phi2": val[1], "m2": val[2], "var": val[2] - val[0] ** 2,
            "var_phi": val[1] - val[0] ** 2}


def true_cvm(model: GenerativeModel, spec=quad.CVM_TRUTH) -> float:
    """6 * integral over u of E_X[F(Q_Y(u) | X)^2] - 2."""
    if model.noiseless:
        return 1.0
    if model.cond_cdf is None:
        raise ValueError(f"model {model.name} has no conditional CDF")

    def evaluate(n):
        uy, wy = quad.composite_rule(n, (), spec.order)
        ux, wx = quad.x_rule(n, model.x_breaks)
        t = model.y_quantile(uy)
        G = model.cond_cdf(t[:, None], model.x_ppf(ux)[None, :])
        return 6.0 * (wy @ ((G * G) @ wx)) - 2.0

    val, _, _ = quad.refine(evaluate, spec, "CvM index")
    return float(val)


def true_indices(model: GenerativeModel, spec=quad.DEFAULT, cvm_spec=quad.CVM_TRUTH) -> TrueIndices:
    mom = output_moments(model, spec)
    sobol = mom["var_phi"] / mom["var"]
    if model.d == 1:
        return TrueIndices(float(sobol), true_cvm(model, cvm_spec))
    cvm = np.array([true_cvm(model.component(k), cvm_spec) for k in range(model.d)])
    return TrueIndices(np.asarray(sobol), cvm)


# -- tabulated conditional laws ------------------------------------------------


def load_cond_cdf_table(path) -> GenerativeModel:
    """Build a transfer model from a CSV table with columns x, t, F.

    Rows form a full grid over the distinct x and t values.  F is linearly
    interpolated in t and taken from the nearest tabulated x at or below
    the query (piecewise constant in x).  X is uniform on [min x, max x].
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["x", "t", "F"]:
                raise ParseError(f"{path}: header must be exactly x,t,F")
            rows = [(float(r["x"]), float(r["t"]), float(r["F"])) for r in reader]
    except (ValueError, KeyError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    arr = np.array(rows)
    xg, tg = np.unique(arr[:, 0]), np.unique(arr[:, 1])
    if arr.shape[0] != xg.size * tg.size or xg.size < 2 or tg.size < 2:
        raise ParseError(f"{path}: table is not a complete x-by-t grid")
    table = np.full((xg.size, tg.size), np.nan)
    table[np.searchsorted(xg, arr[:, 0]), np.searchsorted(tg, arr[:, 1])] = arr[:, 2]
    x0, x1 = xg[0], xg[-1]

    def cond_cdf(t, x):
        t, x = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=float))
        ix = np.clip(np.searchsorted(xg, x, side="right") - 1, 0, xg.size - 1)
        pos = np.clip(np.searchsorted(tg, t, side="right") - 1, 0, tg.size - 2)
        frac = np.clip((t - tg[pos]) / (tg[pos + 1] - tg[pos]), 0.0, 1.0)
        out = table[ix, pos] * (1 - frac) + table[ix, pos + 1] * frac
        return np.where(t < tg[0], 0.0, np.where(t >= tg[-1], 1.0, out))

    breaks = tuple((xg[1:-1] - x0) / (x1 - x0))
    return quantile_transfer(
        cond_cdf,
        x_ppf=lambda u: x0 + (x1 - x0) * np.asarray(u, dtype=float),
        x_cdf=lambda x: np.clip((np.asarray(x, dtype=float) - x0) / (x1 - x0), 0.0, 1.0),
        t_bounds=(tg[0], tg[-1]),
        name=f"table:{path}",
        x_breaks=breaks,
    )


def ecdf2d_max_deviation(a: Sample, b: Sample, grid: int = 200) -> float:
    """Max gap between the bivariate empirical CDFs of two samples.

    Evaluated on a ``grid`` x ``grid`` lattice of pooled marginal quantiles.
    """
    xs = np.concatenate([a.xs, b.xs])
    ys = np.concatenate([np.ravel(a.ys), np.ravel(b.ys)])
    levels = np.linspace(0.0, 1.0, grid)
    gx, gy = np.quantile(xs, levels), np.quantile(ys, levels)

    def ecdf(s):
        ix = np.searchsorted(gx, s.xs, side="left")
        iy = np.searchsorted(gy, np.ravel(s.ys), side="left")
        hist = np.zeros((grid, grid))
        np.add.at(hist, (ix, iy), 1.0)
        return hist.cumsum(0).cumsum(1) / s.n

    return float(np.max(np.abs(ecdf(a) - ecdf(b))))
