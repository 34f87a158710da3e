"""Permutation-invariant sentence-to-graph parsing toolkit."""

from .graph import (Anchor, Edge, Graph, GraphError, GraphParseError,
                    GraphSchemaError, Node, Token, Violation, parse_graph,
                    serialize_graph, validate)

__version__ = "0.1.0"

__all__ = [
    "Anchor", "Edge", "Graph", "GraphError", "GraphParseError",
    "GraphSchemaError", "Node", "Token", "Violation",
    "parse_graph", "serialize_graph", "validate", "__version__",
]
