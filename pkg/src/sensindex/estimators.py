"""Rank and nearest-neighbour estimators of Sobol' and Cramér-von Mises indices."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .errors import DegenerateVariance
from .ranking import Sample, TiePolicy, rank_structure, ranks, sort_permutation

# rank sums are bounded by n**3 / 2; keep well inside int64
_MAX_EXACT_N = 2_000_000
DEGENERACY_FACTOR = 2.0 ** -40


@dataclass(frozen=True)
class MomentVector:
    t: float
    s1: float
    s2: float

    def as_array(self) -> np.ndarray:
        return np.array([self.t, self.s1, self.s2])


@dataclass
class EstimateReport:
    index_name: str
    point: float | list
    n: int
    bias_delta_n: float | None = None
    variance: float | None = None
    ci: dict | None = None
    diagnostics: dict | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def _check_n(n: int, minimum: int) -> None:
    if n < minimum:
        raise ValueError(f"need at least {minimum} observations, got {n}")
    if n > _MAX_EXACT_N:
        raise OverflowError(f"n={n} exceeds the exact integer accumulation limit {_MAX_EXACT_N}")


def h(t, s1, s2):
    """Map the moment vector to the Sobol' ratio (t - s1^2) / (s2 - s1^2)."""
    denom = s2 - s1 * s1
    if denom <= DEGENERACY_FACTOR * max(1.0, abs(s2)):
        raise DegenerateVariance(f"variance {denom!r} is numerically zero")
    return (t - s1 * s1) / denom


def theta_hat(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0) -> MomentVector:
    ys = sample.ys
    if ys.ndim != 1:
        raise ValueError("theta_hat expects scalar outputs")
    nb = rank_structure(sample, tie_policy, seed).neighbor
    return MomentVector(float(np.mean(ys * ys[nb])), float(np.mean(ys)), float(np.mean(ys * ys)))


def _sobol_from_neighbor(ys: np.ndarray, neighbor: np.ndarray, component=None) -> float:
    m = ys.mean()
    c = ys - m
    # centred sums: sum(y_i y_N(i)) - n m^2 == sum(c_i c_N(i)) because N is a bijection
    num = np.mean(c * c[neighbor])
    den = np.mean(c * c)
    if den <= DEGENERACY_FACTOR * max(1.0, float(np.mean(ys * ys))):
        raise DegenerateVariance(f"empirical variance {den!r} is numerically zero", component)
    return float(num / den)


def sobol_rank_estimate(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0) -> float:
    _check_n(sample.n, 3)
    if sample.d != 1 or sample.ys.ndim != 1:
        raise ValueError("use sobol_multivariate for vector outputs")
    nb = rank_structure(sample, tie_policy, seed).neighbor
    return _sobol_from_neighbor(sample.ys, nb)


def sobol_multivariate(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0) -> np.ndarray:
    """Componentwise estimates sharing the single x-ordering."""
    _check_n(sample.n, 3)
    ys = sample.ys.reshape(sample.n, -1)
    nb = rank_structure(sample, tie_policy, seed).neighbor
    return np.array([_sobol_from_neighbor(ys[:, k], nb, component=k) for k in range(ys.shape[1])])


def tn_curve(sample: Sample, t, tie_policy=TiePolicy.ERROR, seed: int = 0):
    """Fraction of neighbour pairs whose larger output is <= t (vectorised in t)."""
    _check_n(sample.n, 2)
    nb = rank_structure(sample, tie_policy, seed).neighbor
    pair_max = np.sort(np.maximum(sample.ys, sample.ys[nb]))
    counts = np.searchsorted(pair_max, np.asarray(t, dtype=float), side="right")
    out = counts / sample.n
    return float(out) if np.ndim(out) == 0 else out


def _ranks_in_x_order(sample, tie_policy, seed):
    sigma = sort_permutation(sample.xs, tie_policy, seed)
    r = ranks(sample.ys, tie_policy, seed + 1)
    return r[sigma]


def tn_cvm_integral(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0, exact: bool = False):
    """Integral of the neighbour curve against the empirical output law.

    Evaluated as ``sum(n + 1 - max(r_k, r_{k+1})) / n**2`` over cyclic
    consecutive ranks in x-order; ``exact=True`` returns a Fraction.
    """
    n = sample.n
    _check_n(n, 2)
    r = _ranks_in_x_order(sample, tie_policy, seed)
    total = int(np.sum(n + 1 - np.maximum(r, np.roll(r, -1)), dtype=np.int64))
    if exact:
        return Fraction(total, n * n)
    return total / (n * n)


def cvm_rank_estimate(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0, exact: bool = False):
    """``1 + 3/n - 3/n**2 * sum |r_{k+1} - r_k|`` with a cyclic sum."""
    n = sample.n
    _check_n(n, 2)
    r = _ranks_in_x_order(sample, tie_policy, seed)
    gaps = int(np.sum(np.abs(np.roll(r, -1) - r), dtype=np.int64))
    num = n * n + 3 * n - 3 * gaps
    if exact:
        return Fraction(num, n * n)
    return num / (n * n)


def chatterjee_estimate(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0) -> float:
    """Chatterjee's xi_n, no-ties form, non-cyclic gap sum."""
    n = sample.n
    _check_n(n, 2)
    r = _ranks_in_x_order(sample, tie_policy, seed)
    gaps = int(np.sum(np.abs(np.diff(r)), dtype=np.int64))
    return 1.0 - 3.0 * gaps / (n * n - 1)


ESTIMATORS = {
    "sobol": sobol_rank_estimate,
    "cvm": cvm_rank_estimate,
    "chatterjee": chatterjee_estimate,
}
