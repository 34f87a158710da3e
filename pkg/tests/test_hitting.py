import numpy as np
import pytest

from mrparse.hitting import (InfeasibleError, UniverseTooLargeError,
                             brute_force_min_hitting_set, minimal_hitting_set)


def random_instance(rng, max_rules=12, max_nodes=8):
    n_rules = int(rng.integers(1, max_rules + 1))
    n_nodes = int(rng.integers(1, max_nodes + 1))
    sets = []
    for _ in range(n_nodes):
        size = int(rng.integers(1, n_rules + 1))
        sets.append(frozenset(int(x) for x in
                              rng.choice(n_rules, size=size, replace=False)))
    return sets, n_rules


def test_unique_singleton():
    assert minimal_hitting_set([frozenset({0, 1}), frozenset({1, 2})], 3) == (1,)


def test_disjoint_needs_both():
    assert minimal_hitting_set([frozenset({0}), frozenset({1})], 2) == (0, 1)


def test_empty_problem():
    assert minimal_hitting_set([], 4) == ()


def test_empty_set_infeasible():
    with pytest.raises(InfeasibleError) as err:
        minimal_hitting_set([frozenset({0}), frozenset()], 2)
    assert err.value.constraint_index == 1


def test_brute_force_universe_cap():
    with pytest.raises(UniverseTooLargeError):
        brute_force_min_hitting_set([frozenset({0})], 21)


def test_matches_brute_force_cardinality_and_ties():
    rng = np.random.default_rng(7)
    for _ in range(200):
        sets, n = random_instance(rng)
        exact = minimal_hitting_set(sets, n)
        brute = brute_force_min_hitting_set(sets, n)
        assert exact == brute  # same minimum AND same lexicographic tie-break


def test_lexicographic_tie_break():
    # both {0,3} and {1,2} are minimum; lexicographically smaller wins
    sets = [frozenset({0, 1}), frozenset({0, 2}), frozenset({3, 1}), frozenset({3, 2})]
    assert minimal_hitting_set(sets, 4) == brute_force_min_hitting_set(sets, 4) == (0, 3)


def test_deterministic():
    rng = np.random.default_rng(11)
    sets, n = random_instance(rng, max_rules=10, max_nodes=6)
    results = {minimal_hitting_set(sets, n) for _ in range(5)}
    assert len(results) == 1


def test_solution_hits_every_set_property():
    rng = np.random.default_rng(23)
    for _ in range(100):
        sets, n = random_instance(rng, max_rules=16, max_nodes=12)
        solution = set(minimal_hitting_set(sets, n))
        assert all(solution & s for s in sets)
