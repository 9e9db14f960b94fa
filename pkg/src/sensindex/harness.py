"""Replicate experiments checking consistency and Gaussian fluctuations.

Replicate r of an experiment with master seed s draws its sample from the
stream keyed ``(s, r, ...)``, so reports do not depend on how replicates
are spread over worker threads (``SENSINDEX_THREADS`` caps the pool).
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstwobign

from . import variance as var
from .errors import ConfigError, DegenerateVariance, TooFewValues
from .estimators import cvm_rank_estimate, sobol_multivariate, sobol_rank_estimate
from .models import GenerativeModel, get_model, output_moments, sample_model, true_indices
from .ranking import TiePolicy

KS_CRITICAL_1PCT = float(kstwobign.ppf(0.99))  # asymptotic sqrt(n) * D at level 1%


class Centering(str, enum.Enum):
    PLAIN = "plain"
    DELTA_CORRECTED = "delta-corrected"


def worker_count(tasks: int) -> int:
    env = os.environ.get("SENSINDEX_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ConfigError(f"SENSINDEX_THREADS must be an integer, got {env!r}") from None
    return max(1, min(cap, tasks))


def parallel_map(func, items) -> list:
    """Order-preserving map over a thread pool."""
    items = list(items)
    workers = worker_count(len(items))
    if workers == 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


@dataclass
class ExperimentSpec:
    model: str
    estimator: str = "sobol"
    n: int = 4000
    reps: int = 2000
    seed: int = 0
    centering: Centering = Centering.DELTA_CORRECTED
    params: dict = field(default_factory=dict)
    ns: tuple = ()
    tie_policy: TiePolicy = TiePolicy.ERROR
    var_band: tuple = (0.9, 1.1)
    ks_factor: float = 1.5
    delta_budget: int = var.DEFAULT_DELTA_BUDGET

    def __post_init__(self):
        self.centering = Centering(self.centering)
        self.tie_policy = TiePolicy(self.tie_policy)
        if self.estimator not in ("sobol", "cvm"):
            raise ConfigError(f"estimator must be 'sobol' or 'cvm', got {self.estimator!r}")
        if self.reps < 100:
            raise ConfigError("reps must be at least 100 for normality diagnostics")
        if self.n < 50:
            raise ConfigError("n must be at least 50")

    def build_model(self) -> GenerativeModel:
        return get_model(self.model, self.params)


# -- diagnostics ---------------------------------------------------------------


def normality_diagnostics(values):
    """KS distance to N(0, 1), sample skewness and excess kurtosis.

    The normal CDF is evaluated through the complementary error function
    (``scipy.special.ndtr``), accurate to double precision.
    """
    x = np.sort(np.asarray(values, dtype=float))
    if x.size < 100:
        raise TooFewValues(f"need at least 100 values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise TooFewValues("values must be finite")
    n = x.size
    cdf = ndtr(x)
    i = np.arange(1, n + 1)
    ks = float(max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n)))
    if x[0] == x[-1]:
        return ks, 0.0, 0.0
    c = x - x.mean()
    m2 = float(np.mean(c * c))
    skew = float(np.mean(c ** 3) / m2 ** 1.5)
    kurt = float(np.mean(c ** 4) / m2 ** 2 - 3.0)
    return ks, skew, kurt


def ks_threshold(reps: int, factor: float = 1.5) -> float:
    return factor * KS_CRITICAL_1PCT / math.sqrt(reps)


@dataclass
class Standardized:
    center: float
    mean: float
    variance: float
    ks: float
    skew: float
    kurt: float

    @classmethod
    def from_values(cls, values, center):
        ks, skew, kurt = normality_diagnostics(values)
        return cls(center, float(np.mean(values)), float(np.var(values, ddof=1)), ks, skew, kurt)


@dataclass
class CltReport:
    model: str
    estimator: str
    n: int
    reps: int
    seed: int
    centering: str
    truth: float
    sigma2: float
    delta_n: float
    delta_se: float
    shift: float
    z: np.ndarray
    mean: float
    variance: float
    ks: float
    skew: float
    kurt: float
    thresholds: dict
    passes: dict
    plain: Standardized
    corrected: Standardized
    flipped: Standardized
    sign_check: dict
    estimates: np.ndarray

    @property
    def passed(self) -> bool:
        return all(self.passes.values())

    def to_dict(self, with_values: bool = False) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("z", "estimates")}
        if with_values:
            out["estimates"] = self.estimates.tolist()
            out["z"] = self.z.tolist()
        out["pass"] = self.passed
        return out


def _estimator(kind):
    return sobol_rank_estimate if kind == "sobol" else cvm_rank_estimate


def replicate_estimates(model: GenerativeModel, kind: str, n: int, reps: int, seed: int,
                        tie_policy=TiePolicy.ERROR) -> np.ndarray:
    est = _estimator(kind)

    def one(r):
        return est(sample_model(model, n, seed, key=(r,)), tie_policy, seed=r)

    return np.asarray(parallel_map(one, range(reps)), dtype=float)


def formula_variance(model: GenerativeModel, kind: str) -> float:
    if kind == "sobol":
        return var.sobol_asymptotic_variance(model).total
    return var.cvm_asymptotic_variance(model).total


def bias_shift(model: GenerativeModel, kind: str, delta: float) -> float:
    """Amount subtracted from the true index to get the corrected center."""
    if kind == "sobol":
        return delta / (2.0 * float(output_moments(model)["var"]))
    return 3.0 * delta


def run_clt_experiment(spec: ExperimentSpec) -> CltReport:
    model = spec.build_model()
    if model.d != 1:
        raise ConfigError("use run_multivariate_experiment for vector outputs")
    kind = spec.estimator
    sigma2 = formula_variance(model, kind)
    if sigma2 <= 1e-10:
        raise DegenerateVariance(f"asymptotic variance {sigma2!r} vanishes for {model.name}")
    truth = getattr(true_indices(model), kind)
    delta = var.delta_n(model, spec.n, spec.delta_budget, spec.seed, kind="sobol" if kind == "sobol" else "cvm")
    shift = bias_shift(model, kind, delta.value)
    est = replicate_estimates(model, kind, spec.n, spec.reps, spec.seed, spec.tie_policy)
    root, sd = math.sqrt(spec.n), math.sqrt(sigma2)

    def standardize(center):
        z = root * (est - center) / sd
        return z, Standardized.from_values(z, center)

    z_plain, plain = standardize(truth)
    z_corr, corrected = standardize(truth - shift)
    _, flipped = standardize(truth + shift)
    z = z_corr if spec.centering is Centering.DELTA_CORRECTED else z_plain
    chosen = corrected if spec.centering is Centering.DELTA_CORRECTED else plain
    lo, hi = spec.var_band
    ks_max = ks_threshold(spec.reps, spec.ks_factor)
    mean_max = 1.5 * 3.0 / math.sqrt(spec.reps)
    passes = {
        "variance_in_band": lo <= chosen.variance <= hi,
        "ks_below_threshold": chosen.ks < ks_max,
        "mean_near_zero": abs(chosen.mean) < mean_max,
    }
    sign_check = {
        "stated_mean_z": corrected.mean,
        "flipped_mean_z": flipped.mean,
        "closer": "stated" if abs(corrected.mean) <= abs(flipped.mean) else "flipped",
        "resolvable": abs(abs(corrected.mean) - abs(flipped.mean)) > 2.0 / math.sqrt(spec.reps),
    }
    return CltReport(
        model=model.name, estimator=kind, n=spec.n, reps=spec.reps, seed=spec.seed,
        centering=spec.centering.value, truth=float(truth), sigma2=sigma2,
        delta_n=delta.value, delta_se=delta.se, shift=shift, z=z,
        mean=chosen.mean, variance=chosen.variance, ks=chosen.ks, skew=chosen.skew,
        kurt=chosen.kurt,
        thresholds={"variance_band": [lo, hi], "ks_max": ks_max, "mean_abs_max": mean_max},
        passes=passes, plain=plain, corrected=corrected, flipped=flipped,
        sign_check=sign_check, estimates=est,
    )


# -- multivariate --------------------------------------------------------------


@dataclass
class MultivariateReport:
    n: int
    reps: int
    gamma: np.ndarray
    implied_corr: np.ndarray
    empirical_cov: np.ndarray
    max_abs_dev: float
    passed: bool

    def to_dict(self) -> dict:
        return {"n": self.n, "reps": self.reps, "gamma": self.gamma.tolist(),
                "implied_corr": self.implied_corr.tolist(),
                "empirical_cov": self.empirical_cov.tolist(),
                "max_abs_dev": self.max_abs_dev, "pass": self.passed}


def run_multivariate_experiment(model: GenerativeModel, n: int = 4000, reps: int = 2000,
                                seed: int = 0, tol: float = 0.15,
                                delta_budget: int = var.DEFAULT_DELTA_BUDGET) -> MultivariateReport:
    comps = var.components(model)
    gamma = var.gamma_matrix(comps)
    sd = np.sqrt(np.diag(gamma))
    if np.any(sd < 1e-6):
        raise DegenerateVariance("a component has vanishing asymptotic variance")
    truth = np.atleast_1d(true_indices(model).sobol)
    centers = np.array([truth[k] - bias_shift(c, "sobol", var.delta_n(c, n, delta_budget, seed).value)
                        for k, c in enumerate(comps)])

    def one(r):
        return sobol_multivariate(sample_model(model, n, seed, key=(r,)), seed=r)

    est = np.asarray(parallel_map(one, range(reps)))
    z = math.sqrt(n) * (est - centers) / sd
    emp = np.cov(z, rowvar=False)
    implied = gamma / np.outer(sd, sd)
    dev = float(np.max(np.abs(emp - implied)))
    return MultivariateReport(n, reps, gamma, implied, emp, dev, dev < tol)


# -- sweeps --------------------------------------------------------------------


def consistency_sweep(model: GenerativeModel, estimator: str, ns, seed: int = 0, seeds: int = 50) -> dict:
    ns = [int(v) for v in ns]
    if ns != sorted(ns) or len(set(ns)) != len(ns):
        raise ConfigError("ns must be strictly increasing")
    truth = getattr(true_indices(model), estimator)
    sigma2 = formula_variance(model, estimator)
    est = _estimator(estimator)
    rows = []
    for n in ns:
        vals = parallel_map(lambda s: est(sample_model(model, n, seed, key=(n, s)), seed=s), range(seeds))
        err = np.abs(np.asarray(vals) - truth)
        rows.append({"n": n, "median_abs_error": float(np.median(err))})
    sigma = math.sqrt(max(sigma2, 0.0))
    degenerate = sigma < 1e-6
    threshold = 0.01 if degenerate else 2.0 * sigma / math.sqrt(ns[-1])
    final = rows[-1]["median_abs_error"]
    return {"model": model.name, "estimator": estimator, "truth": float(truth), "sigma2": sigma2,
            "rows": rows, "threshold": threshold, "degenerate": degenerate,
            "decreasing": final <= rows[0]["median_abs_error"],
            "pass": final < threshold and final <= rows[0]["median_abs_error"]}


def delta_scaling_study(model: GenerativeModel, ns=(100, 1000, 10_000), seed: int = 0,
                        kind: str = "sobol", budget: int = var.DEFAULT_DELTA_BUDGET,
                        limit: float = 0.02) -> dict:
    rows = []
    for n in ns:
        d = var.delta_n(model, int(n), budget, seed, kind=kind)
        rows.append({"n": int(n), "delta": d.value, "se": d.se,
                     "sqrt_n_delta": math.sqrt(n) * d.value, "sqrt_n_se": math.sqrt(n) * d.se})
    monotone = all(b["sqrt_n_delta"] <= a["sqrt_n_delta"] + 3.0 * math.hypot(a["sqrt_n_se"], b["sqrt_n_se"])
                   for a, b in zip(rows, rows[1:]))
    final = rows[-1]["sqrt_n_delta"]
    return {"model": model.name, "kind": kind, "rows": rows, "limit": limit,
            "monotone": monotone, "pass": monotone and final < limit}
