"""Exact discrete optimal transport and a two-sample distance for point clouds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import kernels
from .losses import cost_matrix

MARGINAL_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteCoupling:
    plan: np.ndarray  # (n, m) masses
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.plan.shape != (len(self.a), len(self.b)):
            raise ValueError(f"plan shape {self.plan.shape} does not match marginals")
        if np.any(self.plan < -MARGINAL_TOL):
            raise ValueError("plan has negative mass")
        if not (
            np.allclose(self.plan.sum(1), self.a, atol=MARGINAL_TOL, rtol=0)
            and np.allclose(self.plan.sum(0), self.b, atol=MARGINAL_TOL, rtol=0)
        ):
            raise ValueError("plan marginals do not match a and b")


def _check_inputs(a, b, C):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (len(a), len(b)):
        raise ValueError(f"cost matrix shape {C.shape} does not match marginals ({len(a)}, {len(b)})")
    if not np.all(np.isfinite(C)) or np.any(C < 0):
        raise ValueError("cost matrix must be finite and nonnegative")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginal weights must be nonnegative")
    if abs(a.sum() - 1.0) > MARGINAL_TOL or abs(b.sum() - 1.0) > MARGINAL_TOL:
        raise ValueError(f"marginals must each sum to 1 (got {a.sum()!r} and {b.sum()!r})")
    return a, b, C


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def exact_ot(a, b, C) -> tuple[float, DiscreteCoupling]:
    """Minimum of ``sum(plan * C)`` over couplings of ``a`` and ``b``.

    Uniform marginals of equal size reduce to an assignment problem; other
    marginals are solved as a transportation LP with the dual simplex.
    """
    a, b, C = _check_inputs(a, b, C)
    n, m = C.shape
    if n == m and np.all(a == a[0]) and np.all(b == b[0]):
        cols = kernels.lap_solve(np.ascontiguousarray(C))
        plan = np.zeros((n, m))
        plan[np.arange(n), cols] = 1.0 / n
        cost = float(C[np.arange(n), cols].sum()) / n
        return cost, DiscreteCoupling(plan, a, b)
    return _transport_lp(a, b, C)


def _transport_lp(a, b, C):
    n, m = C.shape
    rows = sparse.kron(sparse.identity(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.identity(m))
    res = linprog(
        C.ravel(),
        A_eq=sparse.vstack([rows, cols]).tocsc(),
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs-ds",
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = np.clip(res.x.reshape(n, m), 0.0, None)
    return float((plan * C).sum()), DiscreteCoupling(plan, a, b)


def independent_coupling_cost(a, b, C) -> float:
    """Cost of the product coupling ``a b^T``; an upper bound on ``exact_ot``."""
    a, b, C = _check_inputs(a, b, C)
    return float(a @ C @ b)


def empirical_costs(X, Y, cost: str = "squared_euclidean") -> tuple[float, float]:
    """``(exact, independent)`` costs between two uniformly weighted point sets."""
    C = cost_matrix(cost, X, Y)
    a, b = uniform(len(X)), uniform(len(Y))
    exact, _ = exact_ot(a, b, C)
    return exact, independent_coupling_cost(a, b, C)


def _mean_distance(P, Q) -> float:
    return kernels.pairwise_distance_sum(P, Q) / (len(P) * len(Q))


def energy_distance(P, Q) -> float:
    """``2 E|p - q| - E|p - p'| - E|q - q'|`` between the empirical measures.

    All three expectations average over every ordered pair, self-pairs
    included, which makes the value exactly zero for identical clouds.  The
    argument order is canonicalised so the result is exactly symmetric.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    if P.ndim != 2 or Q.ndim != 2 or len(P) == 0 or len(Q) == 0:
        raise ValueError("energy_distance needs two nonempty (n, d) point clouds")
    if P.shape[1] != Q.shape[1]:
        raise ValueError(f"dimension mismatch: {P.shape[1]} vs {Q.shape[1]}")
    if (P.shape, P.tobytes()) > (Q.shape, Q.tobytes()):
        P, Q = Q, P
    return float(2.0 * _mean_distance(P, Q) - _mean_distance(P, P) - _mean_distance(Q, Q))
