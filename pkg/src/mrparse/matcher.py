"""Permutation-invariant query/node alignment.

Queries are matched to target nodes by maximizing the summed match score
(label score times geometric-mean anchor score) over all permutations, with
targets padded by null columns up to the query count.  Ties between
interchangeable targets are broken by the edge loss across their
within-group permutations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

ANCHOR_PROB_FLOOR = 1e-12


class MatchError(Exception):
    pass


class CapacityError(MatchError):
    """More real targets than queries; the query budget is too small."""


@dataclass(frozen=True)
class MatchProblem:
    """Score matrices of a padded square matching instance."""

    label_score: np.ndarray   # [queries x targets], null columns zero
    anchor_score: np.ndarray  # [queries x targets]
    num_real_targets: int

    def match_matrix(self) -> np.ndarray:
        return match_score(self.label_score, self.anchor_score)


@dataclass(frozen=True)
class Assignment:
    """Query-to-target permutation and its total match score."""

    perm: tuple[int, ...]
    score: float
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class MatchConfig:
    use_anchor_mask: bool = True
    mask_epsilon: float = 1e-8
    tie_tolerance: float = 1e-12
    max_tie_group: int = 6
    max_tie_combinations: int = 5040


def geomean_anchor(probs: Sequence[float]) -> float:
    """Geometric mean of per-token anchor probabilities, in log space.

    Keeps the anchor score magnitude independent of the token count; inputs
    are floored at a tiny positive constant before the log.
    """
    arr = np.asarray(probs, dtype=np.float64)
    if arr.size == 0:
        return 1.0
    if (arr <= 0).any():
        arr = np.maximum(arr, ANCHOR_PROB_FLOOR)
    return float(np.exp(np.mean(np.log(arr))))


def match_score(label_score: np.ndarray, anchor_score: np.ndarray) -> np.ndarray:
    """Elementwise product of label and anchor scores."""
    label_score = np.asarray(label_score, dtype=np.float64)
    anchor_score = np.asarray(anchor_score, dtype=np.float64)
    if label_score.shape != anchor_score.shape:
        raise MatchError(f"shape mismatch {label_score.shape} vs {anchor_score.shape}")
    return label_score * anchor_score


def apply_anchor_mask(scores: np.ndarray, anchoring: np.ndarray,
                      epsilon: float = 1e-8) -> np.ndarray:
    """Replace anchor factors by epsilon where the pairing is not permitted.

    anchoring[i, j] is True when target j is anchored to query i's source
    token; every other entry gets the small positive constant.
    """
    scores = np.asarray(scores, dtype=np.float64)
    anchoring = np.asarray(anchoring, dtype=bool)
    if scores.shape != anchoring.shape:
        raise MatchError(f"shape mismatch {scores.shape} vs {anchoring.shape}")
    return np.where(anchoring, scores, epsilon)


def optimal_assignment(scores: np.ndarray) -> Assignment:
    """Permutation maximizing the summed score of a square matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise MatchError(f"score matrix must be square, got shape {scores.shape}")
    if scores.size and not np.isfinite(scores).all():
        raise MatchError("score matrix entries must be finite")
    perm = kernels.max_score_assignment(scores)
    total = float(scores[np.arange(len(perm)), perm].sum()) if len(perm) else 0.0
    return Assignment(perm=tuple(int(j) for j in perm), score=total)


def _tie_groups(problem: MatchProblem, tolerance: float) -> list[list[int]]:
    """Group real targets whose label and anchor columns coincide."""
    groups: list[list[int]] = []
    for j in range(problem.num_real_targets):
        for group in groups:
            k = group[0]
            if (np.abs(problem.label_score[:, j] - problem.label_score[:, k]).max(initial=0.0)
                    <= tolerance
                    and np.abs(problem.anchor_score[:, j]
                               - problem.anchor_score[:, k]).max(initial=0.0) <= tolerance):
                group.append(j)
                break
        else:
            groups.append([j])
    return [g for g in groups if len(g) > 1]


def break_ties(problem: MatchProblem, assignment: Assignment,
               edge_loglik: Callable[[tuple[int, ...]], float],
               config: MatchConfig = MatchConfig()) -> Assignment:
    """Among score-equivalent assignments, minimize the edge loss.

    Targets with identical label and anchor columns are interchangeable for
    the match score; the callback evaluates the edge negative log-likelihood
    of a candidate permutation, and the within-group permutation minimizing
    it wins.  Oversized tie groups fall back to the first optimum with a
    warning record.
    """
    groups = _tie_groups(problem, config.tie_tolerance)
    if not groups:
        return assignment
    for group in groups:
        if len(group) > config.max_tie_group:
            warning = (f"tie group of {len(group)} targets exceeds bound "
                       f"{config.max_tie_group}; keeping first optimum")
            return Assignment(assignment.perm, assignment.score,
                              assignment.warnings + (warning,))
    total = 1
    for group in groups:
        for k in range(2, len(group) + 1):
            total *= k
    if total > config.max_tie_combinations:
        warning = (f"{total} tie permutations exceed bound "
                   f"{config.max_tie_combinations}; keeping first optimum")
        return Assignment(assignment.perm, assignment.score,
                          assignment.warnings + (warning,))

    target_to_query = {j: i for i, j in enumerate(assignment.perm)}
    best_perm = assignment.perm
    best_loss = edge_loglik(assignment.perm)
    options = [list(itertools.permutations(group)) for group in groups]
    for combo in itertools.product(*options):
        perm = list(assignment.perm)
        for group, reordered in zip(groups, combo):
            for original, replacement in zip(group, reordered):
                perm[target_to_query[original]] = replacement
        candidate = tuple(perm)
        if candidate == assignment.perm:
            continue
        loss = edge_loglik(candidate)
        if loss < best_loss - 1e-15:
            best_loss = loss
            best_perm = candidate
    return Assignment(best_perm, assignment.score, assignment.warnings)


@dataclass(frozen=True)
class TargetSpec:
    """One gold node as seen by the matcher."""

    label_target: np.ndarray        # unsmoothed distribution over rule classes
    anchor_tokens: frozenset[int]   # token indices the node is anchored to


@dataclass(frozen=True)
class PredictionSpec:
    """Per-query head outputs needed for matching."""

    label_probs: np.ndarray    # [queries x classes]
    anchor_probs: np.ndarray   # [queries x tokens]
    source_tokens: np.ndarray  # [queries] source token index per query


def build_problem(predictions: PredictionSpec,
                  targets: Sequence[TargetSpec],
                  config: MatchConfig = MatchConfig()) -> MatchProblem:
    """Assemble the padded square match problem from head outputs."""
    num_queries = predictions.label_probs.shape[0]
    num_tokens = predictions.anchor_probs.shape[1]
    if len(targets) > num_queries:
        raise CapacityError(f"{len(targets)} target nodes exceed {num_queries} queries; "
                            f"increase the per-token query budget")
    label_score = np.zeros((num_queries, num_queries))
    anchor_score = np.ones((num_queries, num_queries))
    for j, target in enumerate(targets):
        label_score[:, j] = predictions.label_probs @ target.label_target
        observed = np.empty((num_queries, num_tokens))
        for t in range(num_tokens):
            if t in target.anchor_tokens:
                observed[:, t] = predictions.anchor_probs[:, t]
            else:
                observed[:, t] = 1.0 - predictions.anchor_probs[:, t]
        floored = np.maximum(observed, ANCHOR_PROB_FLOOR)
        anchor_score[:, j] = np.exp(np.mean(np.log(floored), axis=1))
        if config.use_anchor_mask:
            permitted = np.isin(predictions.source_tokens,
                                sorted(target.anchor_tokens))
            anchor_score[:, j] = np.where(permitted, anchor_score[:, j],
                                          config.mask_epsilon)
    return MatchProblem(label_score=label_score, anchor_score=anchor_score,
                        num_real_targets=len(targets))


def align_targets(predictions: PredictionSpec, targets: Sequence[TargetSpec],
                  config: MatchConfig = MatchConfig(),
                  edge_loglik: Callable[[tuple[int, ...]], float] | None = None,
                  ) -> tuple[MatchProblem, Assignment]:
    """Pad targets with nulls, solve the matching, break ties.

    Returns the built problem and the (tie-broken) optimal assignment; perm
    entries >= len(targets) denote null matches.
    """
    problem = build_problem(predictions, targets, config)
    assignment = optimal_assignment(problem.match_matrix())
    if edge_loglik is not None:
        assignment = break_ties(problem, assignment, edge_loglik, config)
    return problem, assignment
