"""SPARQL subset: parsing, rewriting, graph conversion and serialization."""

from .ast import SparqlAst, render
from .convert import NonTreeError, to_query_graph
from .parser import SparqlSyntaxError, UnsupportedFeature, gold_entities, parse_sparql
from .rewrite import RewriteError, combine_intervals, merge_x_intention, preprocess, strip_exists
from .serialize import SerializationError, to_sparql, to_sparql_ast


def sparql_to_graph(text: str):
    """Parse, normalize and convert a program in one call."""
    return to_query_graph(preprocess(parse_sparql(text)))


__all__ = [
    "NonTreeError",
    "RewriteError",
    "SerializationError",
    "SparqlAst",
    "SparqlSyntaxError",
    "UnsupportedFeature",
    "combine_intervals",
    "gold_entities",
    "merge_x_intention",
    "parse_sparql",
    "preprocess",
    "render",
    "sparql_to_graph",
    "strip_exists",
    "to_query_graph",
    "to_sparql",
    "to_sparql_ast",
]
