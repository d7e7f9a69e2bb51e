import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from otcycle import _fallback, kernels

BACKENDS = [_fallback]
try:
    from otcycle import _kernels
except ImportError:
    _kernels = None
else:
    BACKENDS.append(_kernels)


def test_compiled_backend_is_selected():
    if _kernels is None:
        pytest.skip("compiled extension not built")
    assert kernels.BACKEND == "compiled"


def test_env_var_forces_fallback():
    out = subprocess.run(
        [sys.executable, "-c", "from otcycle import kernels; print(kernels.BACKEND)"],
        env={**os.environ, "OTCYCLE_PURE_PYTHON": "1"}, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__)
@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**32 - 1), integer=st.booleans())
def test_lap_is_optimal_permutation(mod, n, seed, integer):
    rng = np.random.default_rng(seed)
    C = rng.integers(0, 4, (n, n)).astype(float) if integer else rng.uniform(0, 1, (n, n))
    cols = np.asarray(mod.lap_solve(np.ascontiguousarray(C)))
    assert sorted(cols) == list(range(n))
    r, c = linear_sum_assignment(C)
    assert C[np.arange(n), cols].sum() == pytest.approx(C[r, c].sum(), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__)
@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), m=st.integers(1, 300), d=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_pairwise_distance_sum(mod, n, m, d, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, d)), rng.standard_normal((m, d))
    assert mod.pairwise_distance_sum(a, b) == pytest.approx(cdist(a, b).sum(), rel=1e-12)


def test_distance_sum_of_identical_points_is_zero():
    a = np.ones((5, 2))
    for mod in BACKENDS:
        assert mod.pairwise_distance_sum(a, a) == 0.0
