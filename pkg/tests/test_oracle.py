import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otcycle.losses import cost_matrix
from otcycle.oracle import (
    DiscreteCoupling,
    empirical_costs,
    energy_distance,
    exact_ot,
    independent_coupling_cost,
    uniform,
)


def brute_force(C):
    n = len(C)
    perms = np.array(list(itertools.permutations(range(n))))
    return C[np.arange(n), perms].sum(1).min() / n


LINE_X = np.array([[0.0], [1.0]])
LINE_Y = np.array([[1.0], [2.0]])


def test_line_instance():
    C = cost_matrix("squared_euclidean", LINE_X, LINE_Y)
    cost, coupling = exact_ot(uniform(2), uniform(2), C)
    assert cost == 1.0
    np.testing.assert_array_equal(coupling.plan, np.eye(2) / 2)
    assert independent_coupling_cost(uniform(2), uniform(2), C) == 1.5
    assert empirical_costs(LINE_X, LINE_Y) == (1.0, 1.5)


def test_identical_sets_cost_zero(rng):
    X = rng.standard_normal((12, 2))
    cost, coupling = exact_ot(uniform(12), uniform(12), cost_matrix("squared_euclidean", X, X))
    assert cost == 0.0
    np.testing.assert_array_equal(coupling.plan, np.eye(12) / 12)


def test_identical_singletons():
    C = np.zeros((1, 1))
    assert independent_coupling_cost([1.0], [1.0], C) == 0.0
    assert exact_ot([1.0], [1.0], C)[0] == 0.0


@pytest.mark.parametrize("n", range(1, 9))
def test_assignment_matches_permutation_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(3 if n == 8 else 10):
        C = rng.uniform(0, 10, (n, n))
        cost, coupling = exact_ot(uniform(n), uniform(n), C)
        assert cost == pytest.approx(brute_force(C), rel=1e-12, abs=1e-12)
        assert (coupling.plan * C).sum() == pytest.approx(cost, rel=1e-12)


def test_integer_costs_with_ties():
    rng = np.random.default_rng(3)
    for _ in range(20):
        C = rng.integers(0, 3, (6, 6)).astype(float)
        assert exact_ot(uniform(6), uniform(6), C)[0] == pytest.approx(brute_force(C), abs=1e-12)


def _expand(weights, N):
    """Indices that repeat each atom ``w * N`` times."""
    counts = np.rint(np.asarray(weights) * N).astype(int)
    assert counts.sum() == N
    return np.repeat(np.arange(len(weights)), counts)


@pytest.mark.parametrize("a, b", [
    ([0.25, 0.75], [0.5, 0.25, 0.25]),
    ([0.125] * 4 + [0.5], [0.375, 0.625]),
    ([0.5, 0.5], [0.25, 0.25, 0.25, 0.25]),
])
def test_general_marginals_match_split_assignment(a, b):
    # a weighted problem with dyadic weights equals the assignment problem on
    # atoms split into equal pieces
    rng = np.random.default_rng(0)
    C = rng.uniform(0, 5, (len(a), len(b)))
    N = 8
    ref = brute_force(C[np.ix_(_expand(a, N), _expand(b, N))])
    cost, coupling = exact_ot(a, b, C)
    assert cost == pytest.approx(ref, rel=1e-9)
    np.testing.assert_allclose(coupling.plan.sum(1), a, atol=1e-9)
    np.testing.assert_allclose(coupling.plan.sum(0), b, atol=1e-9)


def test_unequal_sizes_use_lp():
    X = np.array([[0.0], [1.0], [2.0]])
    Y = np.array([[0.5], [1.5]])
    cost, _ = exact_ot(uniform(3), uniform(2), cost_matrix("squared_euclidean", X, Y))
    # 0 -> 0.5, 2 -> 1.5, 1 splits evenly between both: every unit of mass moves 0.5
    assert cost == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("a, b, C", [
    ([0.5, 0.5], [0.5, 0.4], np.ones((2, 2))),
    ([0.5, 0.5], [1.0], np.ones((2, 2))),
    ([1.0], [1.0], np.array([[-1.0]])),
    ([1.0], [1.0], np.array([[np.inf]])),
    ([1.5, -0.5], [1.0], np.ones((2, 1))),
])
def test_invalid_inputs(a, b, C):
    with pytest.raises(ValueError):
        exact_ot(a, b, C)
    with pytest.raises(ValueError):
        independent_coupling_cost(a, b, C)


def test_coupling_checks_marginals():
    with pytest.raises(ValueError):
        DiscreteCoupling(np.eye(2) / 2, np.array([0.6, 0.4]), np.array([0.5, 0.5]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_exact_below_independent_and_scales(n, m, seed, k):
    rng = np.random.default_rng(seed)
    a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(m))
    a, b = a / a.sum(), b / b.sum()
    C = rng.uniform(0, 3, (n, m))
    exact, coupling = exact_ot(a, b, C)
    assert exact <= independent_coupling_cost(a, b, C) + 1e-9
    assert exact_ot(a, b, k * C)[0] == pytest.approx(k * exact, rel=1e-7, abs=1e-9)
    assert coupling.plan.min() >= 0.0


# ---------------------------------------------------------------------------
# energy distance

def test_energy_identical_is_zero(rng):
    P = rng.standard_normal((50, 3))
    assert energy_distance(P, P.copy()) == 0.0


def test_energy_singletons():
    assert energy_distance([[0.0, 0.0]], [[3.0, 4.0]]) == 10.0


def test_energy_symmetric_exactly(rng):
    P, Q = rng.standard_normal((40, 2)), rng.standard_normal((70, 2)) + 1
    assert energy_distance(P, Q) == energy_distance(Q, P)


def test_energy_same_law_small():
    # mean over 20 seeds of two independent 100-point draws; about 0.02
    vals = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        vals.append(energy_distance(rng.standard_normal((100, 2)), rng.standard_normal((100, 2))))
    assert np.mean(vals) < 0.05


def test_energy_separates_laws(rng):
    P = rng.standard_normal((200, 2))
    assert energy_distance(P, rng.standard_normal((200, 2)) + 2.0) > 1.0


@pytest.mark.parametrize("P, Q", [
    (np.zeros((0, 2)), np.zeros((3, 2))),
    (np.zeros((3, 2)), np.zeros((3, 3))),
    (np.zeros(3), np.zeros((3, 1))),
])
def test_energy_rejects(P, Q):
    with pytest.raises(ValueError):
        energy_distance(P, Q)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_energy_nonnegative(n, m, seed):
    # the all-pairs form is a squared MMD with a negative-definite kernel
    rng = np.random.default_rng(seed)
    assert energy_distance(rng.standard_normal((n, 2)), rng.standard_normal((m, 2))) >= -1e-12
