"""Finite-support checks of the cycle-consistency propositions.

On finite supports a stochastic map is a row-stochastic table and every
statement about "probability zero" becomes "mass at most ``tol``".  The
exhaustive search enumerates every table on a probability grid, keeps the
pairs that satisfy a proposition's premises and reports any pair whose
conclusion fails.

Both cycle losses are linear in each row of ``G_xy`` once ``G_yx`` is fixed,
which lets the search prune row by row instead of scanning all pairs.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class DiscreteDist:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"not a probability vector: {p}")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int) -> "DiscreteDist":
        return cls(np.full(n, 1.0 / n))

    def __len__(self):
        return len(self.probs)


def as_table(T) -> np.ndarray:
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or np.any(T < 0) or not np.allclose(T.sum(1), 1.0, atol=1e-12, rtol=0):
        raise ValueError("a stochastic map table must be a nonnegative matrix with unit row sums")
    return T


def pushforward(T, d: DiscreteDist) -> DiscreteDist:
    T = as_table(T)
    if T.shape[0] != len(d):
        raise ValueError(f"table has {T.shape[0]} rows, distribution has {len(d)} atoms")
    out = d.probs @ T
    return DiscreteDist(out / out.sum())


def line_metric(n: int) -> np.ndarray:
    """Distances between atoms placed at 0, 1, ..., n-1 on a line."""
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]).astype(np.float64)


def discrete_cycle_loss(G_ba, G_ab, d: DiscreteDist, ground_metric) -> float:
    """Expected distance between a draw from ``d`` and its round trip through both maps.

    ``G_ba`` maps the atoms of ``d`` out, ``G_ab`` maps them back, and
    ``ground_metric`` measures distances among the atoms of ``d``.
    """
    G_ba, G_ab = as_table(G_ba), as_table(G_ab)
    M = np.asarray(ground_metric, dtype=np.float64)
    n = len(d)
    if G_ba.shape[0] != n or G_ab.shape != (G_ba.shape[1], n) or M.shape != (n, n):
        raise ValueError("incompatible table, distribution and metric shapes")
    roundtrip = G_ba @ G_ab  # roundtrip[j, k] = p(j -> k)
    return float(d.probs @ (roundtrip * M.T).sum(1))


def is_deterministic(T, tol: float = DEFAULT_TOL, support=None) -> bool:
    T = as_table(T)
    rows = T if support is None else T[np.asarray(support)]
    return bool(np.all(rows.max(1) >= 1.0 - tol))


def collision_mass(T, d: DiscreteDist) -> np.ndarray:
    """``C[j1, j2] = p(T(j1) = T(j2))`` for independent draws; diagonal zeroed."""
    T = as_table(T)
    C = T @ T.T
    np.fill_diagonal(C, 0.0)
    w = d.probs > 0
    return C * np.outer(w, w)


@dataclass
class Report:
    premises: dict[str, bool]
    conclusions: dict[str, bool] = field(default_factory=dict)

    @property
    def premises_hold(self) -> bool:
        return all(self.premises.values())

    @property
    def ok(self) -> bool:
        return not self.premises_hold or all(self.conclusions.values())

    def __str__(self):
        lines = [f"premise {k}: {v}" for k, v in self.premises.items()]
        lines += [f"conclusion {k}: {v}" for k, v in self.conclusions.items()]
        lines.append("OK" if self.ok else "COUNTEREXAMPLE")
        return "\n".join(lines)


def _close(p: DiscreteDist, q: DiscreteDist, tol) -> bool:
    return bool(np.all(np.abs(p.probs - q.probs) <= tol))


def verify_prop1(G_xy, G_yx, mu, nu, metric_y, tol=DEFAULT_TOL) -> Report:
    """One-side cycle-consistency on the target makes ``G_xy`` deterministic."""
    G_xy, G_yx = as_table(G_xy), as_table(G_yx)
    report = Report({
        "G_yx#nu = mu": _close(pushforward(G_yx, nu), mu, tol),
        "L_cycle(nu) = 0": discrete_cycle_loss(G_yx, G_xy, nu, metric_y) <= tol,
    })
    if report.premises_hold:
        support = np.flatnonzero(mu.probs > 0)
        report.conclusions = {
            "G_xy deterministic": is_deterministic(G_xy, tol, support),
            "G_yx separates targets": bool(np.all(collision_mass(G_yx, nu) <= tol)),
        }
    return report


def _one_hot_gap(T) -> tuple[np.ndarray, float]:
    """Argmax of each row and the max-norm distance to that one-hot table."""
    idx = T.argmax(1)
    return idx, float(np.abs(T - np.eye(T.shape[1])[idx]).max())


def _mutual_inverse(a, b, tol) -> bool:
    # P Q - I and Q P - I have integer entries, so "within tol" means exact
    # unless tol >= 1 absorbs everything.
    if tol >= 1.0:
        return True
    return bool(np.all(b[a] == np.arange(len(a))) and np.all(a[b] == np.arange(len(b))))


def verify_prop2(G_xy, G_yx, mu, nu, metric_x, metric_y, tol=DEFAULT_TOL) -> Report:
    """Two-side cycle-consistency makes both maps mutually inverse bijections.

    Each table is compared with the one-hot table at its row argmax; the
    bijection conclusion holds when both gaps are within ``tol`` and the two
    one-hot tables multiply to the identity in both orders.
    """
    G_xy, G_yx = as_table(G_xy), as_table(G_yx)
    report = Report({
        "G_xy#mu = nu": _close(pushforward(G_xy, mu), nu, tol),
        "G_yx#nu = mu": _close(pushforward(G_yx, nu), mu, tol),
        "L_cycle(mu) = 0": discrete_cycle_loss(G_xy, G_yx, mu, metric_x) <= tol,
        "L_cycle(nu) = 0": discrete_cycle_loss(G_yx, G_xy, nu, metric_y) <= tol,
    })
    if report.premises_hold:
        a, gap_xy = _one_hot_gap(G_xy)
        b, gap_yx = _one_hot_gap(G_yx)
        report.conclusions = {
            "G_xy near one-hot": gap_xy <= tol,
            "G_yx near one-hot": gap_yx <= tol,
            "mutual inverses": _mutual_inverse(a, b, tol),
        }
    return report


# ---------------------------------------------------------------------------
# exhaustive search

def grid_rows(width: int, step: float) -> np.ndarray:
    """All probability vectors of length ``width`` with entries on a ``step`` grid."""
    k = round(1.0 / step)
    if k < 1 or abs(k * step - 1.0) > 1e-12:
        raise ValueError(f"step must divide 1 evenly, got {step}")
    rows = [c for c in itertools.product(range(k + 1), repeat=width) if sum(c) == k]
    return np.array(rows, dtype=np.float64) / k


def grid_tables(n_rows: int, width: int, step: float) -> np.ndarray:
    rows = grid_rows(width, step)
    idx = np.array(list(itertools.product(range(len(rows)), repeat=n_rows)))
    return rows[idx]  # (count, n_rows, width)


@dataclass
class Violation:
    proposition: str
    n_x: int
    n_y: int
    G_xy: np.ndarray
    G_yx: np.ndarray
    failed: list[str]


@dataclass
class SearchResult:
    pairs_checked: int = 0
    premise_pairs: int = 0
    violations: list[Violation] = field(default_factory=list)
    # filled only when the search is asked to record them
    prop1_premise_tables: list[tuple[np.ndarray, np.ndarray]] | None = None


def _row_choices(losses: list[np.ndarray], tol):
    """Per-row indices whose own loss already fits under ``tol``."""
    return [np.flatnonzero(l <= tol) for l in losses]


def _combine(choices, losses, tol):
    """All index tuples (one per row) whose summed loss is at most ``tol``."""
    combos = np.zeros((1, 0), dtype=np.intp)
    totals = np.zeros(1)
    for idx, loss in zip(choices, losses):
        new_tot = (totals[:, None] + loss[idx][None, :]).ravel()
        new_combo = np.concatenate(
            [np.repeat(combos, len(idx), axis=0), np.tile(idx, len(combos))[:, None]], axis=1
        )
        keep = new_tot <= tol
        combos, totals = new_combo[keep], new_tot[keep]
    return combos, totals


def search(
    max_support: int = 3, step: float = 0.25, tol: float = DEFAULT_TOL, record_premises: bool = False
) -> SearchResult:
    """Enumerate every pair of grid tables under uniform marginals, both propositions.

    Supports of size 1..``max_support`` on each side; atoms sit on a line.
    """
    if not 0.0 < step <= 1.0:
        raise ValueError(f"step must lie in (0, 1], got {step}")
    if max_support < 1:
        raise ValueError(f"max_support must be positive, got {max_support}")
    result = SearchResult(prop1_premise_tables=[] if record_premises else None)
    for n_x in range(1, max_support + 1):
        for n_y in range(1, max_support + 1):
            _search_sizes(n_x, n_y, step, tol, result)
    return result


def _search_sizes(n_x, n_y, step, tol, result: SearchResult):
    mu, nu = DiscreteDist.uniform(n_x), DiscreteDist.uniform(n_y)
    metric_x, metric_y = line_metric(n_x), line_metric(n_y)
    rows_xy = grid_rows(n_y, step)  # candidate rows of G_xy
    tables_yx = grid_tables(n_y, n_x, step)
    result.pairs_checked += len(tables_yx) * len(rows_xy) ** n_x
    row_argmax = rows_xy.argmax(1)
    row_gap = np.abs(rows_xy - np.eye(n_y)[row_argmax]).max(1)

    for G_yx in tables_yx:
        push_ok = bool(np.all(np.abs(nu.probs @ G_yx - mu.probs) <= tol))
        if not push_ok:
            continue
        # loss contributions of G_xy row i:
        #   cycle(nu): sum_k G_xy[i,k] * sum_j nu_j G_yx[j,i] d_y(k, j)
        #   cycle(mu): mu_i * sum_j G_xy[i,j] * sum_k G_yx[j,k] d_x(k, i)
        w_nu = (nu.probs[:, None] * G_yx).T @ metric_y  # (n_x, n_y)
        u_mu = (G_yx @ metric_x).T * mu.probs[:, None]  # (n_x, n_y)
        nu_losses = [rows_xy @ w_nu[i] for i in range(n_x)]
        mu_losses = [rows_xy @ u_mu[i] for i in range(n_x)]

        # one-sided claim: premises are G_yx#nu = mu and cycle(nu) <= tol
        combos, _ = _combine(_row_choices(nu_losses, tol), nu_losses, tol)
        if len(combos):
            result.premise_pairs += len(combos)
            if result.prop1_premise_tables is not None:
                result.prop1_premise_tables += [(rows_xy[c], G_yx.copy()) for c in combos]
            separates = bool(np.all(collision_mass(G_yx, nu) <= tol))
            det_rows = rows_xy.max(1) >= 1.0 - tol
            bad = ~det_rows[combos].all(1) if separates else np.ones(len(combos), dtype=bool)
            for c in combos[bad]:
                G_xy = rows_xy[c]
                failed = []
                if not is_deterministic(G_xy, tol):
                    failed.append("G_xy deterministic")
                if not separates:
                    failed.append("G_yx separates targets")
                result.violations.append(Violation("prop1", n_x, n_y, G_xy, G_yx.copy(), failed))

        # two-sided claim: additionally G_xy#mu = nu and cycle(mu) <= tol
        choices = [np.flatnonzero((a <= tol) & (b <= tol)) for a, b in zip(nu_losses, mu_losses)]
        combos, _ = _combine(choices, nu_losses, tol)
        if not len(combos):
            continue
        mu_total = np.add.reduce([mu_losses[i][combos[:, i]] for i in range(n_x)])
        tables = rows_xy[combos]  # (K, n_x, n_y)
        push = np.einsum("i,kij->kj", mu.probs, tables)
        keep = (mu_total <= tol) & np.all(np.abs(push - nu.probs) <= tol, axis=1)
        combos, tables = combos[keep], tables[keep]
        result.premise_pairs += len(combos)
        b, gap_yx = _one_hot_gap(G_yx)
        a = row_argmax[combos]  # (K, n_x)
        ok = (row_gap[combos].max(1) <= tol) & (gap_yx <= tol)
        if tol < 1.0:
            ok &= np.all(b[a] == np.arange(n_x), axis=1) & np.all(a[:, b] == np.arange(n_y), axis=1)
        for k in np.flatnonzero(~ok):
            report = verify_prop2(tables[k], G_yx, mu, nu, metric_x, metric_y, tol)
            failed = [name for name, v in report.conclusions.items() if not v]
            result.violations.append(Violation("prop2", n_x, n_y, tables[k], G_yx.copy(), failed))


def write_violations(violations: list[Violation], path):
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["proposition", "n_x", "n_y", "G_xy", "G_yx", "failed"])
        for v in violations:
            w.writerow([v.proposition, v.n_x, v.n_y, v.G_xy.tolist(), v.G_yx.tolist(), ";".join(v.failed)])
