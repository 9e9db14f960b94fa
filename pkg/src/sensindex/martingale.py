"""Triangular-array martingale decomposition of the neighbour product sum.

Along the x-ordering write ``f_i = f(X_sigma(i), eps_i)`` for i = 1..n and
``f_0 = f(X_sigma(n), 0)``, ``phi_i = phi(X_sigma(i))`` and
``m_i = f_i - phi_i``.  The process is ``Z_j = sum_{i<=j} f_{i-1} f_i``.
Given the whole X-path, the m_i are independent and centred, so with
``F_j`` generated by the X-path and eps_1..eps_j:

* exact split: ``A_j = f_0 phi_1 + sum_{2<=i<=j} phi_{i-1} phi_i`` and
  ``M_j = Z_j - A_j = f_0 m_1 + sum_{2<=i<=j} (f_{i-1} m_i + phi_i m_{i-1})``;
* approximate split: ``A_j = sum_{i<=j} phi_i^2``,
  ``M_j = sum_{i<=j} (f_{i-1} + phi_{i+1}) m_i`` (``phi_{n+1} = phi_1``) and
  ``R_j = Z_j - A_j - M_j``.

The approximate M is an F-martingale.  The exact M is not: its increment
``phi_j m_{j-1} + f_{j-1} m_j`` has conditional mean ``phi_j m_{j-1}``
given F_{j-1}, which :func:`martingale_property_check` reports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundViolated
from .models import GenerativeModel, sample_with_noise
from .ranking import sort_permutation
from .streams import stream

REMAINDER_CONSTANT = 8.0


@dataclass
class DecompositionPath:
    n: int
    z: np.ndarray
    a_exact: np.ndarray
    m_exact: np.ndarray
    a_approx: np.ndarray
    m_approx: np.ndarray
    r_approx: np.ndarray
    increments: np.ndarray
    sup_norm: float
    qv: float = 0.0  # cyclic sum of (phi_{i-1} - phi_i)^2

    def identity_error(self) -> float:
        return float(np.max(np.abs(self.z - self.a_exact - self.m_exact)))

    def boundary_gap(self) -> float:
        """R_n plus half the cyclic quadratic variation of phi along the path."""
        return float(self.r_approx[-1] + 0.5 * self.qv)


@dataclass
class _Ordered:
    xs: np.ndarray      # X_sigma(1..n)
    f: np.ndarray       # f_0..f_n
    phi: np.ndarray     # phi_1..phi_n
    eps: np.ndarray     # eps_1..eps_n in path order


def _ordered(model: GenerativeModel, xs, eps) -> _Ordered:
    sigma = sort_permutation(xs)
    xo = np.asarray(xs, dtype=float)[sigma]
    eo = np.asarray(eps, dtype=float)[sigma]
    f0 = model(xo[-1:], np.zeros((1, model.noise_dim)))
    fi = model(xo, eo)
    return _Ordered(xo, np.concatenate([f0, fi]), np.asarray(model.cond_mean(xo), dtype=float), eo)


def path_from_arrays(model: GenerativeModel, xs, eps) -> DecompositionPath:
    """Decomposition for given draws; eps[i] is the noise of observation i."""
    o = _ordered(model, xs, eps)
    f, phi = o.f, o.phi
    n = phi.size
    if n < 3:
        raise ValueError("n must be at least 3")
    m = f[1:] - phi
    prev = f[:-1]  # f_{i-1} for i = 1..n

    z = np.concatenate([[0.0], np.cumsum(prev * f[1:])])

    a_inc = np.empty(n)
    a_inc[0] = f[0] * phi[0]
    a_inc[1:] = phi[:-1] * phi[1:]
    m_inc = prev * m
    m_inc[1:] += phi[1:] * m[:-1]
    a_exact = np.concatenate([[0.0], np.cumsum(a_inc)])
    m_exact = np.concatenate([[0.0], np.cumsum(m_inc)])

    a_approx = np.concatenate([[0.0], np.cumsum(phi * phi)])
    m_approx = np.concatenate([[0.0], np.cumsum((prev + np.roll(phi, -1)) * m)])
    r_approx = z - a_approx - m_approx
    qv = float(np.sum((np.roll(phi, 1) - phi) ** 2))
    return DecompositionPath(n, z, a_exact, m_exact, a_approx, m_approx, r_approx, m,
                             model.sup_norm, qv)


def build_path(model: GenerativeModel, n: int, seed: int) -> DecompositionPath:
    if n < 3:
        raise ValueError("n must be at least 3")
    xs, eps = sample_with_noise(model, n, seed)
    return path_from_arrays(model, xs, eps)


def remainder_path(model: GenerativeModel, n: int, seed: int, path: DecompositionPath | None = None) -> float:
    """R_n of the approximate split; raises if the boundary bound fails."""
    path = path or build_path(model, n, seed)
    gap = path.boundary_gap()
    bound = REMAINDER_CONSTANT * path.sup_norm ** 2
    if abs(gap) > bound:
        raise BoundViolated(f"|R_n + QV/2| = {abs(gap):.6g} exceeds {bound:.6g}")
    return float(path.r_approx[-1])


def martingale_property_check(model: GenerativeModel, n: int = 20, reps: int = 100_000,
                              seed: int = 0, js=None) -> dict:
    """Monte Carlo test of the martingale property on a frozen history.

    For each probed j the X-path and eps_1..eps_{j-1} are frozen and eps_j
    is redrawn ``reps`` times.  The approximate increment must average to
    zero within 4 standard errors.  The exact increment is recorded with
    its predicted drift ``phi_j m_{j-1}``.
    """
    if n < 3:
        raise ValueError("n must be at least 3")
    if reps < 2:
        raise ValueError("reps must be at least 2")
    xs, eps = sample_with_noise(model, n, seed)
    o = _ordered(model, xs, eps)
    phi = o.phi
    js = list(range(1, n + 1)) if js is None else list(js)
    rows = []
    ok = True
    for j in js:
        if not 1 <= j <= n:
            raise ValueError(f"j={j} outside 1..{n}")
        fresh = stream(seed, 3, j).random((reps, model.noise_dim))
        fj = model(np.full(reps, o.xs[j - 1]), fresh)
        mj = fj - phi[j - 1]
        f_prev = o.f[j - 1]
        phi_next = phi[j % n]
        inc = (f_prev + phi_next) * mj
        mean = float(inc.mean())
        se = float(inc.std(ddof=1) / math.sqrt(reps))
        passed = (abs(mean) <= 4.0 * se) if se > 0 else (abs(mean) <= 1e-12)
        row = {"j": j, "mean": mean, "se": se, "pass": bool(passed)}
        if j >= 2:
            drift = float(phi[j - 1] * (o.f[j - 1] - phi[j - 2]))
            exact = phi[j - 1] * (o.f[j - 1] - phi[j - 2]) + f_prev * mj
            row["exact_mean"] = float(exact.mean())
            row["exact_predicted_drift"] = drift
        rows.append(row)
        ok &= passed
    # the exact compensator only sees the X-path and the eps = 0 boundary value
    other = path_from_arrays(model, xs, stream(seed, 4).random(eps.shape))
    base = path_from_arrays(model, xs, eps)
    a_frozen = bool(np.array_equal(base.a_exact, other.a_exact))
    return {"n": n, "reps": reps, "seed": seed, "rows": rows, "a_exact_frozen": a_frozen,
            "pass": bool(ok and a_frozen)}


def bracket_path(model_f: GenerativeModel, model_g: GenerativeModel, n: int, seed: int,
                 xs=None, eps=None) -> np.ndarray:
    """Predictable bracket of (M, N(f), N(f^2)) against its g-counterpart.

    Returns an array of shape (n + 1, 3, 3) with the value at j = 0..n.
    ``model_f`` and ``model_g`` must share the X law and the noise vector.
    """
    from .variance import sigma_b

    if model_f.noise_dim != model_g.noise_dim:
        raise ValueError("models must share the noise space")
    if xs is None:
        xs, eps = sample_with_noise(model_f, n, seed)
    of, og = _ordered(model_f, xs, eps), _ordered(model_g, xs, eps)

    def a_vec(o):
        first = o.f[:-1] + np.roll(o.phi, -1)
        return np.stack([first, np.ones_like(first), np.ones_like(first)], axis=-1)

    af, ag = a_vec(of), a_vec(og)
    sb = sigma_b(model_f, model_g, of.xs)
    inc = af[:, :, None] * ag[:, None, :] * sb
    return np.concatenate([np.zeros((1, 3, 3)), np.cumsum(inc, axis=0)])


def azuma_check(model: GenerativeModel, n: int, seeds: int = 1000, seed: int = 0,
                factor: float = 5.0) -> dict:
    """Fraction of seeds with |M_n| / n below factor * sqrt(8 |f|^4 log n / n)."""
    norm = model.sup_norm
    bound = factor * math.sqrt(8.0 * norm ** 4 * math.log(n) / n)
    vals = np.array([abs(build_path(model, n, seed * 1_000_003 + s).m_approx[-1]) / n
                     for s in range(seeds)])
    frac = float(np.mean(vals < bound))
    return {"n": n, "seeds": seeds, "bound": bound, "max": float(vals.max()),
            "fraction_within": frac, "pass": frac >= 0.99}


TRACE_COLUMNS = ("j", "Z", "A_exact", "M_exact", "A_approx", "M_approx", "R")


def write_trace(path, dec: DecompositionPath) -> None:
    """Per-step CSV of the decomposition, 17 significant digits."""
    cols = (dec.z, dec.a_exact, dec.m_exact, dec.a_approx, dec.m_approx, dec.r_approx)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for j in range(dec.n + 1):
            w.writerow([j] + [format(float(c[j]), ".17g") for c in cols])
