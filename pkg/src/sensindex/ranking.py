"""Order permutation, cyclic right-neighbour map and output ranks.

Everything here is 0-based: ``sigma[k]`` is the index of the (k+1)-th
smallest x, and ``neighbor[j]`` is the index of the observation just to the
right of ``x[j]``, the largest wrapping around to the smallest.  The
1-based formulas in the docs translate by subtracting one throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFinite, ParseError, TiesPresent


class TiePolicy(str, enum.Enum):
    ERROR = "error"
    STABLE_INDEX = "stable-index"
    RANDOM_JITTER = "random-jitter"


@dataclass(frozen=True)
class Sample:
    """Paired observations; ``ys`` is shape (n,) or (n, d)."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.ndim != 1:
            raise ParseError("xs must be one-dimensional")
        if ys.ndim not in (1, 2) or ys.shape[0] != xs.shape[0]:
            raise ParseError(f"ys has shape {ys.shape}, expected ({xs.shape[0]},) or ({xs.shape[0]}, d)")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise NonFinite("sample contains NaN or infinite values")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def d(self) -> int:
        return 1 if self.ys.ndim == 1 else self.ys.shape[1]

    def component(self, k: int) -> "Sample":
        if self.ys.ndim == 1:
            if k != 0:
                raise IndexError(k)
            return self
        return Sample(self.xs, self.ys[:, k])


@dataclass(frozen=True)
class RankStructure:
    sigma: np.ndarray
    sigma_inv: np.ndarray
    neighbor: np.ndarray
    ranks_y: np.ndarray | None = None
    tie_policy: TiePolicy = TiePolicy.ERROR
    jitter_seed: int | None = field(default=None)

    @property
    def n(self) -> int:
        return self.sigma.shape[0]


def _check_finite(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFinite("input contains NaN or infinite values")


def _order(values, tie_policy, seed, what) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ParseError(f"{what} must be one-dimensional")
    _check_finite(values)
    tie_policy = TiePolicy(tie_policy)
    order = np.argsort(values, kind="stable")
    tied = values[order][1:] == values[order][:-1]
    if not tied.any():
        return order
    if tie_policy is TiePolicy.ERROR:
        dup = values[order][1:][tied][0]
        raise TiesPresent(f"{what} contains tied values (e.g. {float(dup)!r}); choose a tie policy")
    if tie_policy is TiePolicy.STABLE_INDEX:
        return order
    # random jitter: tied values get a seeded uniform secondary key
    key = np.random.default_rng(seed).random(values.shape[0])
    return np.lexsort((key, values))


def sort_permutation(xs, tie_policy=TiePolicy.ERROR, seed: int = 0) -> np.ndarray:
    """Return ``sigma`` with ``xs[sigma]`` non-decreasing.

    ``seed`` is only consulted under ``RANDOM_JITTER``.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.shape[0] < 2:
        raise ParseError("need at least two observations")
    return _order(xs, tie_policy, seed, "xs")


def inverse_permutation(sigma) -> np.ndarray:
    sigma = np.asarray(sigma)
    inv = np.empty_like(sigma)
    inv[sigma] = np.arange(sigma.shape[0], dtype=sigma.dtype)
    return inv


def neighbor_map(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.int64)
    n = sigma.shape[0]
    if sigma.ndim != 1 or not np.array_equal(np.sort(sigma), np.arange(n)):
        raise ValueError("sigma is not a permutation of 0..n-1")
    neighbor = np.empty(n, dtype=np.int64)
    neighbor[sigma] = np.roll(sigma, -1)
    return neighbor


def ranks(ys, tie_policy=TiePolicy.ERROR, seed: int = 0) -> np.ndarray:
    """Strict ranks in 1..n: ``R_i = #{j : y_j <= y_i}`` when there are no ties."""
    ys = np.asarray(ys, dtype=float)
    if ys.shape[0] < 1:
        raise ParseError("need at least one observation")
    order = _order(ys, tie_policy, seed, "ys")
    r = np.empty(ys.shape[0], dtype=np.int64)
    r[order] = np.arange(1, ys.shape[0] + 1)
    return r


def rank_structure(sample: Sample, tie_policy=TiePolicy.ERROR, seed: int = 0,
                   with_y_ranks: bool = False) -> RankStructure:
    tie_policy = TiePolicy(tie_policy)
    sigma = sort_permutation(sample.xs, tie_policy, seed)
    ry = None
    if with_y_ranks:
        if sample.d != 1:
            raise ValueError("y ranks are only defined for scalar outputs")
        ry = ranks(sample.ys, tie_policy, seed + 1)
    return RankStructure(
        sigma=sigma,
        sigma_inv=inverse_permutation(sigma),
        neighbor=neighbor_map(sigma),
        ranks_y=ry,
        tie_policy=tie_policy,
        jitter_seed=seed if tie_policy is TiePolicy.RANDOM_JITTER else None,
    )
