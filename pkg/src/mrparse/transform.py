"""Framework-specific graph canonicalization and its inverses.

Pre-processing turns property pairs into nodes, normalizes inverted edge
labels, reduces binary-relation nodes (DRG), merges anchors into one
continuous span (EDS) and augments unlabeled UCCA nodes.  Every lossy step
records a trace so the emission side can restore the original shape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .graph import Anchor, Edge, Graph, Node

DEFAULT_INVERSION_SUFFIX = "-of"
DEFAULT_ALIASES = {"mod": "domain-of"}


class TransformError(Exception):
    pass


class InconsistentTraceError(TransformError):
    pass


class GraphStructureError(TransformError):
    pass


@dataclass(frozen=True)
class TransformTrace:
    """What a pre-processing pass changed, enough to undo it.

    nodeified: (parent node id, attribute, created node id) per converted
    property; deinverted: indices of edges (in the transformed graph) whose
    label had the inversion suffix stripped; flagged: indices of edges whose
    label carries the suffix but was left untouched (unknown stripped form).
    """

    nodeified: tuple[tuple[int, str, int], ...] = ()
    deinverted: tuple[int, ...] = ()
    flagged: tuple[int, ...] = ()


@dataclass(frozen=True)
class FrameworkConfig:
    """Per-framework transform settings, loadable from a key-value file."""

    inversion_suffix: str = DEFAULT_INVERSION_SUFFIX
    aliases: tuple[tuple[str, str], ...] = tuple(sorted(DEFAULT_ALIASES.items()))
    drg_relation_labels: frozenset[str] = frozenset()

    def alias_map(self) -> dict[str, str]:
        return dict(self.aliases)


def load_framework_config(path: str) -> FrameworkConfig:
    """Read a framework config file.

    Format: one ``key = value`` pair per line, ``#`` comments.  Keys:
    ``inversion_suffix``, ``alias.<label> = <inverted-label>`` (repeatable)
    and ``drg_relations`` (comma-separated label list).
    """
    suffix = DEFAULT_INVERSION_SUFFIX
    aliases = dict(DEFAULT_ALIASES)
    relations: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise TransformError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "inversion_suffix":
                suffix = value
            elif key.startswith("alias."):
                aliases[key[len("alias."):]] = value
            elif key == "drg_relations":
                relations.update(v.strip() for v in value.split(",") if v.strip())
            else:
                raise TransformError(f"{path}:{lineno}: unknown key {key!r}")
    return FrameworkConfig(inversion_suffix=suffix,
                           aliases=tuple(sorted(aliases.items())),
                           drg_relation_labels=frozenset(relations))


def nodeify_properties(g: Graph) -> tuple[Graph, TransformTrace]:
    """Convert every (attribute, value) property into a child node.

    The new node takes the value as its label and a copy of the parent's
    anchors, and is connected by a parent->child edge labeled with the
    attribute.
    """
    nodes = []
    new_nodes = []
    new_edges = []
    trace = []
    next_id = g.next_node_id()
    for node in g.nodes:
        if not node.properties:
            nodes.append(node)
            continue
        for attribute, value in node.properties:
            created = Node(id=next_id, label=value, anchors=node.anchors)
            new_nodes.append(created)
            new_edges.append(Edge(source=node.id, target=created.id, label=attribute))
            trace.append((node.id, attribute, created.id))
            next_id += 1
        nodes.append(replace(node, properties=()))
    out = replace(g, nodes=tuple(nodes) + tuple(new_nodes), edges=g.edges + tuple(new_edges))
    return out, TransformTrace(nodeified=tuple(trace))


def denodeify_properties(g: Graph, trace: TransformTrace) -> Graph:
    """Fold traced property nodes back into their parents; inverse of nodeify."""
    traced = {node_id: (parent, attribute) for parent, attribute, node_id in trace.nodeified}
    by_id = {n.id: n for n in g.nodes}
    for node_id, (parent, _) in traced.items():
        if node_id not in by_id:
            raise InconsistentTraceError(f"traced node {node_id} missing from graph")
        if parent not in by_id:
            raise InconsistentTraceError(f"traced parent {parent} missing from graph")
    restored: dict[int, list[tuple[str, str]]] = {n.id: [] for n in g.nodes}
    for parent, attribute, node_id in trace.nodeified:
        value = by_id[node_id].label
        restored[parent].append((attribute, "" if value is None else value))
    nodes = tuple(replace(n, properties=n.properties + tuple(restored[n.id]))
                  for n in g.nodes if n.id not in traced)
    edges = tuple(e for e in g.edges
                  if not (e.target in traced and traced[e.target] == (e.source, e.label)))
    return replace(g, nodes=nodes, edges=edges)


def normalize_inverted_edges(g: Graph, suffix: str = DEFAULT_INVERSION_SUFFIX,
                             aliases: dict[str, str] | None = None,
                             known_labels: set[str] | None = None,
                             ) -> tuple[Graph, TransformTrace]:
    """Reverse edges whose label (or its alias) ends with the inversion suffix.

    An edge a->b labeled "X-of" becomes b->a labeled "X".  When known_labels
    is given, labels whose stripped form is not in it are left alone and
    flagged in the trace instead of being reversed.
    """
    if not suffix:
        raise TransformError("inversion suffix must be nonempty")
    aliases = DEFAULT_ALIASES if aliases is None else aliases
    edges = []
    deinverted = []
    flagged = []
    for i, edge in enumerate(g.edges):
        label = aliases.get(edge.label, edge.label)
        if label.endswith(suffix) and len(label) > len(suffix):
            stripped = label[:-len(suffix)]
            if known_labels is not None and stripped not in known_labels:
                flagged.append(i)
                edges.append(edge)
                continue
            edges.append(Edge(source=edge.target, target=edge.source, label=stripped,
                              attributes=edge.attributes, extras=edge.extras))
            deinverted.append(i)
        else:
            edges.append(edge)
    out = replace(g, edges=tuple(edges))
    return out, TransformTrace(deinverted=tuple(deinverted), flagged=tuple(flagged))


def reinvert_edges_for_top(g: Graph, suffix: str = DEFAULT_INVERSION_SUFFIX,
                           aliases: dict[str, str] | None = None,
                           invertible_labels: set[str] | None = None) -> Graph:
    """Restore inverted edge labels where needed for top-rooted reachability.

    Walks the graph from its top nodes treating edges as undirected; an
    eligible edge first reached against its direction is emitted reversed
    with the suffix appended (or its alias when the inverted label has one).
    invertible_labels limits eligibility to labels that were de-inverted
    during preprocessing (None means every label is eligible, the fully
    top-rooted case).  Other edges keep their normalized direction.
    """
    aliases = DEFAULT_ALIASES if aliases is None else aliases
    inverse_alias = {inverted: plain for plain, inverted in aliases.items()}
    outgoing: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    incoming: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    for i, edge in enumerate(g.edges):
        outgoing[edge.source].append(i)
        incoming[edge.target].append(i)

    visited = set(g.top_ids())
    queue = sorted(visited)
    to_invert: set[int] = set()
    while queue:
        current = queue.pop(0)
        for i in outgoing[current]:
            other = g.edges[i].target
            if other not in visited:
                visited.add(other)
                queue.append(other)
        for i in incoming[current]:
            other = g.edges[i].source
            if other not in visited:
                visited.add(other)
                queue.append(other)
                if (invertible_labels is None
                        or g.edges[i].label in invertible_labels):
                    to_invert.add(i)

    edges = []
    for i, edge in enumerate(g.edges):
        if i in to_invert:
            inverted = edge.label + suffix
            inverted = inverse_alias.get(inverted, inverted)
            edges.append(Edge(source=edge.target, target=edge.source, label=inverted,
                              attributes=edge.attributes, extras=edge.extras))
        else:
            edges.append(edge)
    return replace(g, edges=tuple(edges))


def ucca_augment(g: Graph) -> Graph:
    """Label UCCA nodes leaf/inner and anchor inner nodes to their leaves.

    Nodes without outgoing edges become "leaf"; all others become "inner" and
    are anchored to the union of the anchors of their descendant leaves.
    Raises GraphStructureError on cycles.
    """
    children: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    for edge in g.edges:
        children[edge.source].append(edge.target)

    anchors: dict[int, frozenset[Anchor]] = {}
    state: dict[int, int] = {}  # 1 = on stack, 2 = done

    def collect(node_id: int) -> frozenset[Anchor]:
        if state.get(node_id) == 1:
            raise GraphStructureError(f"cycle through node {node_id}")
        if state.get(node_id) == 2:
            return anchors[node_id]
        state[node_id] = 1
        node = g.node_by_id(node_id)
        if not children[node_id]:
            result = frozenset(node.anchors)
        else:
            result = frozenset(node.anchors)
            for child in children[node_id]:
                result |= collect(child)
        state[node_id] = 2
        anchors[node_id] = result
        return result

    for node in g.nodes:
        collect(node.id)
    nodes = tuple(
        replace(node,
                label="leaf" if not children[node.id] else "inner",
                anchors=node.anchors if not children[node.id]
                else tuple(sorted(anchors[node.id])))
        for node in g.nodes)
    return replace(g, nodes=nodes)


def drg_reduce_binary_relations(g: Graph, relation_labels: frozenset[str] | set[str]) -> Graph:
    """Replace binary-relation nodes with a single labeled edge.

    A node whose label is in relation_labels must have exactly one incoming
    and one outgoing edge; it is deleted and replaced by an edge from its
    predecessor to its successor carrying the node's label.
    """
    relation_ids = [n.id for n in g.nodes if n.label in relation_labels]
    nodes = list(g.nodes)
    edges = list(g.edges)
    for node_id in relation_ids:
        incoming = [e for e in edges if e.target == node_id]
        outgoing = [e for e in edges if e.source == node_id]
        if len(incoming) != 1 or len(outgoing) != 1:
            raise GraphStructureError(
                f"relation node {node_id} has in-degree {len(incoming)} "
                f"and out-degree {len(outgoing)}, expected 1 and 1")
        label = next(n.label for n in nodes if n.id == node_id)
        edges = [e for e in edges if e.source != node_id and e.target != node_id]
        edges.append(Edge(source=incoming[0].source, target=outgoing[0].target,
                          label=label or ""))
        nodes = [n for n in nodes if n.id != node_id]
    return replace(g, nodes=tuple(nodes), edges=tuple(edges))


def eds_merge_anchors(g: Graph) -> Graph:
    """Collapse every node's anchor set to its single continuous hull."""
    nodes = tuple(
        node if not node.anchors else
        replace(node, anchors=(Anchor(min(a.start for a in node.anchors),
                                      max(a.end for a in node.anchors)),))
        for node in g.nodes)
    return replace(g, nodes=nodes)


def preprocess(framework: str, g: Graph,
               config: FrameworkConfig | None = None) -> tuple[Graph, TransformTrace]:
    """Apply a framework's canonicalization pipeline.

    amr: nodeify + de-invert (artificial anchoring is a corpus-level step,
    see rules.anchor_flavor2_corpus); drg: nodeify + binary-relation
    reduction; eds: nodeify + anchor merge; ptg: properties kept native,
    identity; ucca: leaf/inner augmentation.
    """
    config = config or FrameworkConfig()
    if framework == "amr":
        out, trace = nodeify_properties(g)
        out, inv = normalize_inverted_edges(out, config.inversion_suffix, config.alias_map())
        return out, TransformTrace(nodeified=trace.nodeified, deinverted=inv.deinverted,
                                   flagged=inv.flagged)
    if framework == "drg":
        out, trace = nodeify_properties(g)
        out = drg_reduce_binary_relations(out, config.drg_relation_labels)
        return out, trace
    if framework == "eds":
        out, trace = nodeify_properties(g)
        return eds_merge_anchors(out), trace
    if framework == "ptg":
        return g, TransformTrace()
    if framework == "ucca":
        return ucca_augment(g), TransformTrace()
    raise TransformError(f"unknown framework {framework!r}")


def fold_property_nodes(g: Graph, property_node_ids: set[int]) -> Graph:
    """Emission-side inverse of nodeification without a trace.

    Each flagged node with exactly one incoming edge is folded back into a
    property of that edge's source (attribute = edge label, value = node
    label); flagged nodes with any other in-degree are kept as nodes.
    """
    incoming: dict[int, list[Edge]] = {}
    for edge in g.edges:
        incoming.setdefault(edge.target, []).append(edge)
    foldable = {}
    for node_id in sorted(property_node_ids):
        parents = incoming.get(node_id, [])
        if len(parents) == 1:
            foldable[node_id] = parents[0]
    added: dict[int, list[tuple[str, str]]] = {}
    for node_id, edge in foldable.items():
        value = g.node_by_id(node_id).label
        added.setdefault(edge.source, []).append((edge.label, "" if value is None else value))
    nodes = tuple(replace(n, properties=n.properties + tuple(added.get(n.id, ())))
                  for n in g.nodes if n.id not in foldable)
    edges = tuple(e for e in g.edges if e.target not in foldable and e.source not in foldable)
    return replace(g, nodes=nodes, edges=edges)
