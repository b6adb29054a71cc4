import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_assignment
from stdvos.assignment import solve_assignment


def _canonical_brute(cost):
    n, m = cost.shape
    best_val, best_cols = None, None
    for cols in itertools.permutations(range(m), n):
        val = sum(cost[i, c] for i, c in enumerate(cols))
        if best_val is None or val < best_val - 1e-9 or (abs(val - best_val) <= 1e-9 and cols < best_cols):
            best_val, best_cols = val, cols
    return list(enumerate(best_cols))


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5), st.integers(0, 3), st.integers(0, 2**32 - 1))
def test_ties_resolve_to_lexicographically_smallest(n, extra, seed):
    rng = np.random.default_rng(seed)
    cost = rng.integers(0, 3, (n, n + extra)).astype(float)
    assert solve_assignment(cost) == _canonical_brute(cost)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_optimal_for_rectangular_costs(n, m, seed):
    cost = np.random.default_rng(seed).uniform(-1, 1, (n, m))
    pairs = solve_assignment(cost)
    assert len(pairs) == min(n, m)
    assert len({c for _, c in pairs}) == len(pairs)
    assert sum(cost[r, c] for r, c in pairs) == pytest.approx(brute_force_assignment(cost), abs=1e-12)


def test_maximize_and_forbidden():
    score = np.array([[0.9, 0.1], [0.8, 0.7]])
    assert solve_assignment(score, maximize=True) == [(0, 0), (1, 1)]
    assert solve_assignment(score, forbidden=score < 0.75, maximize=True) == [(0, 0)]


def test_permutation_invariance_of_value():
    rng = np.random.default_rng(7)
    cost = rng.uniform(0, 1, (4, 5))
    perm = rng.permutation(4)
    a = sum(cost[r, c] for r, c in solve_assignment(cost))
    b = sum(cost[perm][r, c] for r, c in solve_assignment(cost[perm]))
    assert a == pytest.approx(b)


def test_input_validation():
    assert solve_assignment(np.zeros((0, 3))) == []
    with pytest.raises(ValueError):
        solve_assignment(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        solve_assignment(np.array([[np.inf, 1.0]]))
