import csv
import itertools
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from otcycle.propositions import (
    DiscreteDist,
    collision_mass,
    discrete_cycle_loss,
    grid_rows,
    grid_tables,
    is_deterministic,
    line_metric,
    pushforward,
    search,
    verify_prop1,
    verify_prop2,
    write_violations,
)

P3 = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)


def random_table(rng, n, m):
    T = rng.uniform(size=(n, m))
    return T / T.sum(1, keepdims=True)


def test_dist_validation():
    with pytest.raises(ValueError):
        DiscreteDist([0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteDist([1.5, -0.5])
    assert DiscreteDist([1.0 - 1e-13, 1e-13]).probs[1] == 1e-13


def test_pushforward_examples(rng):
    d = DiscreteDist([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(pushforward(np.eye(3), d).probs, d.probs)
    np.testing.assert_array_equal(pushforward(np.eye(3)[[0, 0, 0]], d).probs, [1.0, 0.0, 0.0])

    T = random_table(rng, 4, 4)
    d4 = DiscreteDist(random_table(rng, 1, 4)[0])
    hand = [sum(d4.probs[i] * T[i, j] for i in range(4)) for j in range(4)]
    np.testing.assert_allclose(pushforward(T, d4).probs, hand, rtol=1e-14)


def test_pushforward_errors():
    with pytest.raises(ValueError):
        pushforward(np.eye(3), DiscreteDist.uniform(2))
    with pytest.raises(ValueError):
        pushforward(np.array([[0.5, 0.4]]), DiscreteDist.uniform(1))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_pushforward_preserves_mass(n, m, seed):
    rng = np.random.default_rng(seed)
    d = DiscreteDist(random_table(rng, 1, n)[0])
    out = pushforward(random_table(rng, n, m), d)
    assert abs(out.probs.sum() - 1.0) <= 1e-12


def test_cycle_loss_examples():
    d = DiscreteDist.uniform(3)
    assert discrete_cycle_loss(P3, P3.T, d, line_metric(3)) == 0.0
    # point mass at atom 0, identity out, back uniformly to atoms 0 and 1 at distance 1
    half = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert discrete_cycle_loss(np.eye(2), half, DiscreteDist([1.0, 0.0]), line_metric(2)) == 0.5


def test_cycle_loss_shape_errors():
    with pytest.raises(ValueError):
        discrete_cycle_loss(np.eye(3), np.eye(2), DiscreteDist.uniform(3), line_metric(3))
    with pytest.raises(ValueError):
        discrete_cycle_loss(np.eye(2), np.eye(2), DiscreteDist.uniform(2), line_metric(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_cycle_loss_matches_triple_sum_and_is_nonnegative(n, m, seed):
    rng = np.random.default_rng(seed)
    G_ba, G_ab = random_table(rng, n, m), random_table(rng, m, n)
    d = DiscreteDist(random_table(rng, 1, n)[0])
    M = line_metric(n)
    hand = sum(
        d.probs[j] * G_ba[j, i] * G_ab[i, k] * M[k, j]
        for j in range(n) for i in range(m) for k in range(n)
    )
    value = discrete_cycle_loss(G_ba, G_ab, d, M)
    assert value == pytest.approx(hand, rel=1e-12, abs=1e-15)
    assert value >= 0.0


def test_is_deterministic_examples():
    assert is_deterministic(P3, 1e-6)
    assert not is_deterministic([[0.5, 0.5]], 1e-6)
    assert is_deterministic([[1 - 1e-9, 1e-9]], 1e-6)
    # rows outside the support are ignored
    assert is_deterministic([[1.0, 0.0], [0.5, 0.5]], 1e-6, support=[0])


def test_collision_mass():
    T = np.array([[1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_array_equal(collision_mass(T, DiscreteDist.uniform(2)), [[0, 0.5], [0.5, 0]])
    np.testing.assert_array_equal(collision_mass(T, DiscreteDist([1.0, 0.0])), np.zeros((2, 2)))


def test_inverse_permutations_pass_both():
    mu, nu = DiscreteDist.uniform(3), DiscreteDist.uniform(3)
    r1 = verify_prop1(P3, P3.T, mu, nu, line_metric(3))
    assert r1.premises_hold and r1.ok and all(r1.conclusions.values())
    r2 = verify_prop2(P3, P3.T, mu, nu, line_metric(3), line_metric(3))
    assert r2.premises_hold and r2.ok and all(r2.conclusions.values())
    assert "OK" in str(r2)


def test_many_to_one_fails_premises():
    mu, nu = DiscreteDist.uniform(3), DiscreteDist.uniform(3)
    collapse = np.eye(3)[[0, 0, 0]]
    report = verify_prop2(collapse, np.eye(3), mu, nu, line_metric(3), line_metric(3))
    assert not report.premises["G_xy#mu = nu"]
    assert not report.premises["L_cycle(nu) = 0"]
    assert not report.premises_hold and report.ok and report.conclusions == {}


def test_non_inverse_permutations_fail_cycle():
    mu = DiscreteDist.uniform(3)
    report = verify_prop2(P3, P3, mu, mu, line_metric(3), line_metric(3))
    assert report.premises["G_xy#mu = nu"] and not report.premises["L_cycle(mu) = 0"]


def test_split_row_cannot_satisfy_prop1_premises():
    # G_xy splits atom 0 across both targets; no G_yx on the grid brings the
    # target-side round trip back to zero
    mu, nu = DiscreteDist.uniform(2), DiscreteDist.uniform(2)
    G_xy = np.array([[0.5, 0.5], [0.0, 1.0]])
    for G_yx in grid_tables(2, 2, 0.25):
        assert not verify_prop1(G_xy, G_yx, mu, nu, line_metric(2)).premises_hold


def test_grid_rows():
    rows = grid_rows(3, 0.25)
    assert len(rows) == 15  # compositions of 4 into 3 parts
    np.testing.assert_array_equal(rows.sum(1), 1.0)
    assert grid_tables(2, 2, 0.5).shape == (9, 2, 2)
    with pytest.raises(ValueError):
        grid_rows(2, 0.3)


def test_exhaustive_search_finds_no_counterexample():
    t0 = time.perf_counter()
    result = search(max_support=3, step=0.25, record_premises=True)
    assert time.perf_counter() - t0 < 60
    assert result.violations == []
    assert result.premise_pairs > 0
    # the premise set never contains a split row of G_xy
    assert result.prop1_premise_tables
    for G_xy, _ in result.prop1_premise_tables:
        assert is_deterministic(G_xy, 0.0)


def _brute(n_x, n_y, step, tol):
    """Pair-by-pair reference using the report functions directly."""
    mu, nu = DiscreteDist.uniform(n_x), DiscreteDist.uniform(n_y)
    mx, my = line_metric(n_x), line_metric(n_y)
    premise, bad = 0, 0
    for G_xy, G_yx in itertools.product(grid_tables(n_x, n_y, step), grid_tables(n_y, n_x, step)):
        for r in (verify_prop1(G_xy, G_yx, mu, nu, my, tol), verify_prop2(G_xy, G_yx, mu, nu, mx, my, tol)):
            premise += r.premises_hold
            bad += not r.ok
    return premise, bad


@pytest.mark.parametrize("n_x, n_y, step, tol", [
    (2, 2, 0.25, 1e-9), (2, 3, 0.5, 1e-9), (3, 2, 0.5, 1e-9), (2, 2, 0.25, 0.3), (2, 2, 0.5, 1.0),
])
def test_search_agrees_with_pairwise_reports(n_x, n_y, step, tol):
    from otcycle.propositions import SearchResult, _search_sizes

    result = SearchResult()
    _search_sizes(n_x, n_y, step, tol, result)
    premise, bad = _brute(n_x, n_y, step, tol)
    assert result.premise_pairs == premise
    assert len(result.violations) == bad


def test_loose_tolerance_reports_counterexamples(tmp_path):
    # at tol 0.3 a split 0.75/0.25 row passes as deterministic for the
    # premises but not for the conclusion threshold, and the search says so
    result = search(max_support=2, step=0.25, tol=0.3)
    assert result.violations
    path = tmp_path / "v.csv"
    write_violations(result.violations, path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == len(result.violations)
    assert {r["proposition"] for r in rows} <= {"prop1", "prop2"}


def test_tolerance_one_absorbs_everything():
    assert search(max_support=2, step=0.5, tol=1.0).violations == []


@pytest.mark.parametrize("kw", [dict(step=0.0), dict(step=1.5), dict(max_support=0), dict(step=0.3)])
def test_search_rejects(kw):
    with pytest.raises(ValueError):
        search(**kw)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(0.01, 1.0)))
def test_inverse_permutations_pass_under_any_marginals(raw):
    T = raw / raw.sum(1, keepdims=True)
    d = DiscreteDist(T[0])
    # a permutation and its inverse always pass every check
    perm = np.eye(3)[[2, 0, 1]]
    report = verify_prop2(perm, perm.T, d, pushforward(perm, d), line_metric(3), line_metric(3))
    assert report.premises_hold and report.ok
