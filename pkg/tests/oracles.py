"""Independent verification oracles used across the test suite.

These implementations deliberately avoid the production code paths: the
gradient checker uses central finite differences, the assignment oracle
enumerates permutations, and the rule-space oracle re-derives applicable
rules from scratch via apply_rule over a brute-force candidate sweep.
"""

from __future__ import annotations

import itertools

import numpy as np

from mrparse.rules import (AbsoluteRule, LemmaRule, NumberRule, RuleSpaceBounds,
                           TokenRule, apply_rule, words_to_number)


def finite_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    grad = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        forward = x.copy()
        forward[idx] += step
        backward = x.copy()
        backward[idx] -= step
        grad[idx] = (fn(forward) - fn(backward)) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(np.asarray(analytic) - np.asarray(numeric))
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def brute_force_assignment(scores: np.ndarray) -> tuple[tuple[int, ...], float]:
    """Exhaustive argmax over permutations of the score-sum objective."""
    n = scores.shape[0]
    best_perm = None
    best = -np.inf
    for perm in itertools.permutations(range(n)):
        total = sum(scores[i, perm[i]] for i in range(n))
        if total > best:
            best = total
            best_perm = perm
    return best_perm, float(best)


def enumerate_rules_oracle(tokens, lemmas, label,
                           bounds: RuleSpaceBounds = RuleSpaceBounds()):
    """Exhaustive sweep of the bounded rule space filtered by apply_rule.

    Candidate affixes are all label prefixes/suffixes up to the bound, so the
    sweep covers every seven-tuple whose application could possibly equal the
    label; membership is decided solely by apply_rule.
    """
    found = {AbsoluteRule(label)}
    if bounds.number_rule and tokens and words_to_number(tokens) == label:
        found.add(NumberRule())
    prefixes = {label[:k] for k in range(min(bounds.max_affix_len, len(label)) + 1)}
    suffixes = {label[-k:] if k else "" for k in
                range(min(bounds.max_affix_len, len(label)) + 1)}
    for kind in (TokenRule, LemmaRule):
        for drop_left in range(bounds.max_token_drop + 1):
            for drop_right in range(bounds.max_token_drop + 1):
                for sep in bounds.separators:
                    for strip_left in range(bounds.max_char_strip + 1):
                        for strip_right in range(bounds.max_char_strip + 1):
                            for prefix in prefixes:
                                for suffix in suffixes:
                                    rule = kind(drop_left, drop_right, sep,
                                                strip_left, strip_right,
                                                prefix, suffix)
                                    if apply_rule(rule, tokens, lemmas) == label:
                                        found.add(rule)
    return found
