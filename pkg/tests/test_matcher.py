import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrparse.matcher import (CapacityError, MatchConfig, MatchError,
                             MatchProblem, PredictionSpec, TargetSpec,
                             align_targets, apply_anchor_mask, break_ties,
                             geomean_anchor, match_score, optimal_assignment)
from oracles import brute_force_assignment


class TestMatchScore:
    def test_product(self):
        out = match_score(np.array([[0.8]]), np.array([[0.5]]))
        assert out[0, 0] == pytest.approx(0.4)

    def test_null_column_zero(self):
        label = np.array([[0.7, 0.0], [0.3, 0.0]])  # second target is null
        anchor = np.ones((2, 2))
        out = match_score(label, anchor)
        assert (out[:, 1] == 0.0).all()

    def test_shape_mismatch(self):
        with pytest.raises(MatchError):
            match_score(np.ones((2, 2)), np.ones((2, 3)))


class TestGeomean:
    def test_equal_values(self):
        assert geomean_anchor([0.9, 0.9, 0.9]) == pytest.approx(0.9)

    def test_sqrt(self):
        assert geomean_anchor([0.25, 1.0]) == pytest.approx(0.5)

    def test_single(self):
        assert geomean_anchor([0.7]) == pytest.approx(0.7)

    def test_no_underflow_long_products(self):
        values = [0.9] * 1000
        reference = np.exp(np.mean(np.log(np.full(1000, 0.9))))
        assert abs(geomean_anchor(values) - reference) < 1e-12
        assert abs(geomean_anchor(values) - 0.9) < 1e-12

    def test_zero_floored(self):
        assert geomean_anchor([0.0]) > 0.0


class TestAnchorMask:
    def test_fully_permitted_identity(self):
        scores = np.random.default_rng(0).random((3, 3))
        out = apply_anchor_mask(scores, np.ones((3, 3), dtype=bool))
        assert (out == scores).all()

    def test_forbidden_row_gets_epsilon(self):
        scores = np.full((2, 2), 0.5)
        mask = np.array([[False, False], [True, True]])
        out = apply_anchor_mask(scores, mask, epsilon=1e-8)
        assert (out[0] == 1e-8).all()
        assert (out[1] == 0.5).all()


class TestOptimalAssignment:
    def test_identity_dominant(self):
        scores = np.eye(3)
        result = optimal_assignment(scores)
        assert result.perm == (0, 1, 2)
        assert result.score == pytest.approx(3.0)

    def test_two_by_two(self):
        result = optimal_assignment(np.array([[0.1, 0.9], [0.9, 0.1]]))
        assert result.perm == (1, 0)
        assert result.score == pytest.approx(1.8)

    def test_random_matches_brute_force(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            scores = rng.random((6, 6))
            ours = optimal_assignment(scores)
            _, oracle = brute_force_assignment(scores)
            assert ours.score == oracle

    def test_monotonicity(self):
        rng = np.random.default_rng(8)
        scores = rng.random((5, 5))
        base = optimal_assignment(scores).score
        bumped = scores.copy()
        bumped[2, 3] += 0.5
        assert optimal_assignment(bumped).score >= base

    def test_non_square_rejected(self):
        with pytest.raises(MatchError):
            optimal_assignment(np.ones((2, 3)))


def _problem(label, anchor, real):
    return MatchProblem(label_score=np.asarray(label, dtype=float),
                        anchor_score=np.asarray(anchor, dtype=float),
                        num_real_targets=real)


class TestBreakTies:
    def test_no_ties_unchanged(self):
        problem = _problem([[0.9, 0.1], [0.1, 0.9]], np.ones((2, 2)), 2)
        assignment = optimal_assignment(problem.match_matrix())
        out = break_ties(problem, assignment, lambda perm: 0.0)
        assert out.perm == assignment.perm

    def test_swap_when_edge_loss_prefers(self):
        # two identical targets; edge loss prefers the swapped pairing
        problem = _problem([[0.5, 0.5], [0.5, 0.5]], np.ones((2, 2)), 2)
        assignment = optimal_assignment(problem.match_matrix())

        def edge_loss(perm):
            return 0.0 if perm == (1, 0) else 1.0

        out = break_ties(problem, assignment, edge_loss)
        assert out.perm == (1, 0)

    def test_group_of_three_evaluates_all(self):
        problem = _problem(np.full((3, 3), 0.4), np.ones((3, 3)), 3)
        assignment = optimal_assignment(problem.match_matrix())
        seen = []

        def edge_loss(perm):
            seen.append(perm)
            return 0.0 if perm == (2, 0, 1) else 1.0

        out = break_ties(problem, assignment, edge_loss)
        assert out.perm == (2, 0, 1)
        assert len(set(seen)) == 6  # all within-group permutations

    def test_oversized_group_falls_back_with_warning(self):
        n = 8
        problem = _problem(np.full((n, n), 0.4), np.ones((n, n)), n)
        assignment = optimal_assignment(problem.match_matrix())
        out = break_ties(problem, assignment, lambda perm: 0.0,
                         MatchConfig(max_tie_group=6))
        assert out.perm == assignment.perm
        assert out.warnings

    def test_combination_cap_falls_back_with_warning(self):
        # two groups of 4: 24 * 24 = 576 combinations exceed a cap of 100
        label = np.zeros((8, 8))
        label[:, :4] = 0.5
        label[:, 4:] = 0.3
        problem = _problem(label, np.ones((8, 8)), 8)
        assignment = optimal_assignment(problem.match_matrix())
        out = break_ties(problem, assignment, lambda perm: 0.0,
                         MatchConfig(max_tie_group=6, max_tie_combinations=100))
        assert out.perm == assignment.perm
        assert out.warnings


def _prediction(label_probs, anchor_probs, source):
    return PredictionSpec(label_probs=np.asarray(label_probs, dtype=float),
                          anchor_probs=np.asarray(anchor_probs, dtype=float),
                          source_tokens=np.asarray(source))


class TestAlignTargets:
    def test_pads_with_nulls(self):
        predictions = _prediction(
            [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.4, 0.4, 0.2]],
            np.full((3, 2), 0.5), [0, 0, 1])
        targets = [TargetSpec(np.array([1.0, 0.0, 0.0]), frozenset({0})),
                   TargetSpec(np.array([0.0, 1.0, 0.0]), frozenset({0}))]
        problem, assignment = align_targets(predictions, targets,
                                            MatchConfig(use_anchor_mask=False))
        assert sorted(assignment.perm) == [0, 1, 2]
        null_queries = [q for q, t in enumerate(assignment.perm) if t >= 2]
        assert len(null_queries) == 1

    def test_capacity_error(self):
        predictions = _prediction([[1.0, 0.0]], np.full((1, 1), 0.5), [0])
        targets = [TargetSpec(np.array([1.0, 0.0]), frozenset({0}))] * 2
        with pytest.raises(CapacityError):
            align_targets(predictions, targets)

    def test_two_queries_per_token_figure_scenario(self):
        # 3 tokens x 2 queries, 4 real nodes: exactly 2 queries become null
        rng = np.random.default_rng(3)
        num_queries, num_classes, num_tokens = 6, 5, 3
        label_probs = rng.dirichlet(np.ones(num_classes), size=num_queries)
        anchor_probs = rng.random((num_queries, num_tokens))
        predictions = _prediction(label_probs, anchor_probs, [0, 0, 1, 1, 2, 2])
        targets = []
        for j in range(4):
            dist = np.zeros(num_classes)
            dist[j % num_classes] = 1.0
            targets.append(TargetSpec(dist, frozenset({j % num_tokens})))
        _, assignment = align_targets(predictions, targets,
                                      MatchConfig(use_anchor_mask=False))
        nulls = [q for q, t in enumerate(assignment.perm) if t >= 4]
        assert len(nulls) == 2

    def test_mask_routes_target_to_anchored_token(self):
        # one-to-one anchoring: each target reachable only from its token
        rng = np.random.default_rng(4)
        label_probs = rng.dirichlet(np.ones(3), size=4)
        anchor_probs = np.full((4, 2), 0.5)
        predictions = _prediction(label_probs, anchor_probs, [0, 0, 1, 1])
        targets = [TargetSpec(np.array([1.0, 0.0, 0.0]), frozenset({0})),
                   TargetSpec(np.array([0.0, 1.0, 0.0]), frozenset({1}))]
        _, assignment = align_targets(predictions, targets, MatchConfig())
        for query, target in enumerate(assignment.perm):
            if target < 2:
                assert predictions.source_tokens[query] in targets[target].anchor_tokens

    def test_permutation_invariance_composition(self):
        rng = np.random.default_rng(6)
        num_queries, num_classes, num_tokens = 6, 7, 3
        label_probs = rng.dirichlet(np.ones(num_classes), size=num_queries)
        anchor_probs = rng.random((num_queries, num_tokens))
        predictions = _prediction(label_probs, anchor_probs, [0, 0, 1, 1, 2, 2])
        targets = []
        for j in range(4):
            dist = rng.dirichlet(np.ones(num_classes))
            targets.append(TargetSpec(dist, frozenset({int(rng.integers(num_tokens))})))
        _, base = align_targets(predictions, targets,
                                MatchConfig(use_anchor_mask=False))
        base_pairs = {(q, t) for q, t in enumerate(base.perm) if t < 4}
        order = [2, 0, 3, 1]
        shuffled = [targets[j] for j in order]
        _, moved = align_targets(predictions, shuffled,
                                 MatchConfig(use_anchor_mask=False))
        moved_pairs = {(q, order[t]) for q, t in enumerate(moved.perm) if t < 4}
        assert moved_pairs == base_pairs
        assert moved.score == pytest.approx(base.score, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=100000))
def test_mask_soundness_property(seed):
    # when a feasible fully-unmasked matching exists, no real target is ever
    # matched through a masked entry
    rng = np.random.default_rng(seed)
    num_tokens = 3
    queries_per_token = 2
    num_queries = num_tokens * queries_per_token
    num_targets = int(rng.integers(1, num_tokens + 1))
    source = np.repeat(np.arange(num_tokens), queries_per_token)
    label_probs = rng.dirichlet(np.ones(num_targets + 1), size=num_queries)
    anchor_probs = rng.uniform(0.1, 0.9, (num_queries, num_tokens))
    # one target per distinct token: a perfect unmasked matching exists
    targets = []
    for j in range(num_targets):
        dist = np.zeros(num_targets + 1)
        dist[j] = 1.0
        targets.append(TargetSpec(dist, frozenset({j})))
    predictions = _prediction(label_probs, anchor_probs, source)
    _, assignment = align_targets(predictions, targets,
                                  MatchConfig(use_anchor_mask=True,
                                              mask_epsilon=1e-8))
    for query, target in enumerate(assignment.perm):
        if target < num_targets:
            assert int(source[query]) in targets[target].anchor_tokens


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=1, max_value=5), st.integers(min_value=0, max_value=1000000))
def test_assignment_permutation_invariance_property(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.random((n, n))
    base = optimal_assignment(scores)
    order = rng.permutation(n)
    moved = optimal_assignment(scores[:, order])
    assert moved.score == pytest.approx(base.score, abs=1e-12)
