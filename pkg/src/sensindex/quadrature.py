"""Composite Gauss-Legendre rules on the unit interval with refinement.

Integrals over X (resp. Y) are taken after the change of variable
u = F_X(x) (resp. u = F_Y(t)), so every rule lives on [0, 1].  Known
discontinuities of the integrand are passed as ``breaks`` so that no
panel straddles one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import QuadratureNotConverged


@dataclass(frozen=True)
class QuadratureSpec:
    nodes: int = 256
    rtol: float = 1e-8
    max_nodes: int = 4096
    order: int = 16
    atol: float = 1e-13

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "rtol": self.rtol, "max_nodes": self.max_nodes,
                "order": self.order, "atol": self.atol}


DEFAULT = QuadratureSpec()
# conditional CDFs have kinks in (t, x); Gauss-Legendre only converges
# algebraically there, so the CvM family runs at looser tolerances
CVM_DEFAULT = QuadratureSpec(nodes=128, rtol=1e-4, max_nodes=1024, order=8, atol=1e-12)
CVM_TRUTH = QuadratureSpec(nodes=256, rtol=1e-7, max_nodes=8192, order=8, atol=1e-12)


@lru_cache(maxsize=64)
def _reference(order: int):
    g, w = leggauss(order)
    return (g + 1.0) / 2.0, w / 2.0


def gauss_legendre(order: int, a: float = 0.0, b: float = 1.0):
    g, w = _reference(order)
    return a + (b - a) * g, (b - a) * w


def composite_rule(n_nodes: int, breaks=(), order: int = 16):
    """Nodes and weights on [0, 1] with about ``n_nodes`` points.

    Panels are spread over the segments delimited by ``breaks`` in
    proportion to segment length.
    """
    edges = np.unique(np.concatenate([[0.0], np.asarray(breaks, dtype=float), [1.0]]))
    edges = edges[(edges >= 0.0) & (edges <= 1.0)]
    lengths = np.diff(edges)
    panels_total = max(1, n_nodes // order)
    counts = np.maximum(1, np.round(panels_total * lengths).astype(int))
    xs, ws = [], []
    g, w = _reference(order)
    for a, b, k in zip(edges[:-1], edges[1:], counts):
        cuts = np.linspace(a, b, k + 1)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            xs.append(lo + (hi - lo) * g)
            ws.append((hi - lo) * w)
    return np.concatenate(xs), np.concatenate(ws)


def panel_edges(n_nodes: int, breaks=(), order: int = 16) -> np.ndarray:
    edges = np.unique(np.concatenate([[0.0], np.asarray(breaks, dtype=float), [1.0]]))
    lengths = np.diff(edges)
    counts = np.maximum(1, np.round(max(1, n_nodes // order) * lengths).astype(int))
    cuts = [np.linspace(a, b, k + 1)[:-1] for a, b, k in zip(edges[:-1], edges[1:], counts)]
    return np.concatenate(cuts + [[1.0]])


def refine(evaluate, spec: QuadratureSpec = DEFAULT, what: str = "integral"):
    """Call ``evaluate(n_nodes)`` with doubling node counts until it stabilises.

    Returns ``(value, nodes_used, relative_change)``.
    """
    n = spec.nodes
    prev = np.asarray(evaluate(n), dtype=float)
    while True:
        n2 = 2 * n
        if n2 > spec.max_nodes:
            raise QuadratureNotConverged(
                f"{what}: relative change still above {spec.rtol:g} at {n} nodes")
        cur = np.asarray(evaluate(n2), dtype=float)
        scale = max(float(np.max(np.abs(cur))), spec.atol / spec.rtol)
        change = float(np.max(np.abs(cur - prev))) / scale
        if change < spec.rtol:
            return (cur if cur.ndim else float(cur)), n2, change
        prev, n = cur, n2


X_OVERSAMPLE = 8


def x_rule(n_nodes: int, breaks=()):
    """Dense low-order rule for integrands whose kinks in x move with t.

    Conditional CDFs of noisy models are only piecewise smooth in x, with
    break points that depend on t, so extra nodes buy more than extra order.
    """
    return composite_rule(X_OVERSAMPLE * n_nodes, breaks, 4)
