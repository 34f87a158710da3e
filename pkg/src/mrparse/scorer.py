"""Anchored-tuple scorer for semantic graphs.

A simplified surrogate for the official maximum-common-subgraph metric:
gold and predicted nodes are aligned greedily by anchor overlap (ties by
label equality, then by lowest ids), then each metric counts matching tuples
(tops, labels, properties, anchors, edges, attributes).  The greedy
alignment makes this a lower bound of the exact search.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import Graph, Node


class ScoreError(Exception):
    pass


@dataclass(frozen=True)
class MetricCounts:
    gold: int
    predicted: int
    correct: int

    @property
    def precision(self) -> float:
        return self.correct / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.gold if self.gold else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0


METRICS = ("tops", "labels", "properties", "anchors", "edges", "attributes")


@dataclass(frozen=True)
class ScoreReport:
    metrics: dict[str, MetricCounts]

    @property
    def average(self) -> float:
        """Mean F1 over metrics that occur in gold or prediction."""
        live = [c.f1 for c in self.metrics.values() if c.gold or c.predicted]
        return sum(live) / len(live) if live else 0.0


def _anchor_overlap(a: Node, b: Node) -> int:
    total = 0
    for x in a.anchors:
        for y in b.anchors:
            total += max(0, min(x.end, y.end) - max(x.start, y.start))
    return total


def _graph_key(g: Graph):
    return (len(g.nodes),
            tuple(sorted((n.id, n.label or "", n.anchors) for n in g.nodes)),
            tuple(sorted((e.source, e.target, e.label) for e in g.edges)))


def _align(gold: Graph, pred: Graph) -> dict[int, int]:
    """Greedy node alignment by anchor overlap; returns gold id -> pred id.

    The candidate ordering is computed in a canonical orientation of the two
    graphs so that swapping gold and prediction mirrors the alignment
    exactly (precision and recall swap).
    """
    swap = _graph_key(pred) < _graph_key(gold)
    first, second = (pred, gold) if swap else (gold, pred)
    candidates = []
    for a in first.nodes:
        for b in second.nodes:
            overlap = _anchor_overlap(a, b)
            label_eq = a.label == b.label
            candidates.append((-overlap, not label_eq, a.id, b.id))
    candidates.sort()
    used_first: set[int] = set()
    used_second: set[int] = set()
    matched = {}
    for _, _, a_id, b_id in candidates:
        if a_id in used_first or b_id in used_second:
            continue
        used_first.add(a_id)
        used_second.add(b_id)
        matched[a_id] = b_id
    if swap:
        return {b_id: a_id for a_id, b_id in matched.items()}
    return matched


def _tuples(g: Graph, identity: dict[int, tuple]) -> dict[str, set]:
    tuples: dict[str, set] = {name: set() for name in METRICS}
    for node in g.nodes:
        ident = identity[node.id]
        if node.is_top:
            tuples["tops"].add(ident)
        if node.label is not None:
            tuples["labels"].add((ident, node.label))
        for attribute, value in node.properties:
            tuples["properties"].add((ident, attribute, value))
        if node.anchors:
            tuples["anchors"].add((ident, tuple(node.anchors)))
    for edge in g.edges:
        source = identity[edge.source]
        target = identity[edge.target]
        tuples["edges"].add((source, target, edge.label))
        for attribute, value in edge.attributes:
            tuples["attributes"].add((source, target, edge.label, attribute,
                                      repr(value)))
    return tuples


def score_pair(gold: Graph, pred: Graph) -> ScoreReport:
    """Tuple precision/recall/F1 of a prediction against its gold graph."""
    if gold.input != pred.input:
        raise ScoreError("gold and predicted graphs describe different sentences")
    matched = _align(gold, pred)
    reverse = {p: g for g, p in matched.items()}
    gold_identity = {n.id: ("g", n.id) for n in gold.nodes}
    pred_identity = {n.id: ("g", reverse[n.id]) if n.id in reverse else ("p", n.id)
                     for n in pred.nodes}
    gold_tuples = _tuples(gold, gold_identity)
    pred_tuples = _tuples(pred, pred_identity)
    metrics = {}
    for name in METRICS:
        g, p = gold_tuples[name], pred_tuples[name]
        metrics[name] = MetricCounts(gold=len(g), predicted=len(p),
                                     correct=len(g & p))
    return ScoreReport(metrics=metrics)


def aggregate(reports) -> ScoreReport:
    """Micro-average: sum the counts, then recompute precision/recall/F1."""
    totals = {name: [0, 0, 0] for name in METRICS}
    for report in reports:
        for name in METRICS:
            counts = report.metrics[name]
            totals[name][0] += counts.gold
            totals[name][1] += counts.predicted
            totals[name][2] += counts.correct
    return ScoreReport(metrics={name: MetricCounts(*values)
                                for name, values in totals.items()})


def report_to_json(report: ScoreReport) -> dict:
    payload = {}
    for name in METRICS:
        counts = report.metrics[name]
        payload[name] = {"gold": counts.gold, "predicted": counts.predicted,
                         "correct": counts.correct,
                         "precision": counts.precision, "recall": counts.recall,
                         "f1": counts.f1}
    payload["average"] = report.average
    return payload
