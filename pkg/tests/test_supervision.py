import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgforge.grammar import (
    ADD_VERTEX,
    IllegalOp,
    OutlineOp,
    apply_outline,
    initial_state,
    legal_outline_args,
    load_log,
)
from qgforge.graph import (
    Direction,
    EdgeClass,
    EdgeTag,
    GraphBuilder,
    ValidationError,
    VertexClass,
    canonical_form,
    graphs_equal,
)
from qgforge.sparql import sparql_to_graph
from qgforge.supervision import SupervisionSequences, build_signals, replay

from .conftest import RUNNING_EXAMPLE
from .helpers import random_graph

C = VertexClass


def test_two_vertex_signals():
    g = sparql_to_graph("SELECT ?x WHERE { <e> <r> ?x }")
    s = build_signals(g)
    assert s.outline == [
        OutlineOp.add_vertex(C.ANS),
        OutlineOp.add_vertex(C.ENT),
        OutlineOp.select_vertex(0),
        OutlineOp.add_edge(EdgeClass(EdgeTag.REL, Direction.BACKWARD)),
        OutlineOp.add_vertex(C.END),
    ]
    assert s.vertex_fill == [None, "e"]
    assert s.edge_fill == ["r"]
    assert graphs_equal(replay(s), g)


def test_single_answer():
    b = GraphBuilder()
    b.add_vertex(C.ANS)
    s = build_signals(b.freeze_query())
    assert s.outline == [OutlineOp.add_vertex(C.ANS), OutlineOp.add_vertex(C.END)]
    assert s.vertex_fill == [None] and s.edge_fill == []
    assert len(replay(s).vertices) == 1


def test_running_example_replay():
    g = sparql_to_graph(RUNNING_EXAMPLE)
    s = build_signals(g)
    assert len(s.outline) == 3 * 11 - 1
    assert s.vertex_fill[4] == s.vertex_fill[8] == "m.0f2y0"
    assert s.edge_fill.count("film") == 2
    assert graphs_equal(replay(s), g)


def test_corpus_replay_identity(corpus):
    for row in corpus:
        g = sparql_to_graph(row["sparql"])
        assert canonical_form(replay(build_signals(g))) == canonical_form(g), row["id"]


@given(st.integers(0, 10**6))
def test_random_graph_replay(seed):
    g = random_graph(random.Random(seed), max_n=8)
    if g is not None:
        assert graphs_equal(replay(build_signals(g)), g)


def _every_op_legal(s: SupervisionSequences):
    """Each gold outline step appears among the grammar's legal arguments at that point."""
    state = initial_state()
    for op in s.outline:
        assert op in legal_outline_args(state)
        state = apply_outline(state, op)


def test_gold_ops_are_legal(corpus):
    for row in corpus[:80]:
        _every_op_legal(build_signals(sparql_to_graph(row["sparql"])))


def test_copy_targets_point_back(corpus):
    for row in corpus:
        s = build_signals(sparql_to_graph(row["sparql"]))
        vertex_ops = [op for op in s.outline if op.kind == ADD_VERTEX and op.cls is not C.END]
        for i, op in enumerate(vertex_ops):
            if op.copy is not None:
                assert op.copy < i
                assert s.vertex_fill[op.copy] == s.vertex_fill[i]
        edge_ops = [op for op in s.outline if op.kind == "AddEdge"]
        for i, op in enumerate(edge_ops):
            if op.copy is not None:
                assert op.copy < i and s.edge_fill[op.copy] == s.edge_fill[i]


def test_cmp_between_entities_rejected():
    b = GraphBuilder()
    a = b.add_vertex(C.ANS)
    e1, e2 = b.add_vertex(C.ENT, "e1"), b.add_vertex(C.ENT, "e2")
    b.add_edge(e1, a, EdgeTag.REL, "r")
    b.add_edge(e1, e2, EdgeTag.CMP, "<")
    with pytest.raises((IllegalOp, ValidationError)):
        replay(build_signals(b.freeze_query()))


def test_illegal_gold_step_rejected():
    s = build_signals(sparql_to_graph("SELECT ?x WHERE { <e> <r> ?x }"))
    s.outline[3] = OutlineOp.add_edge(EdgeClass(EdgeTag.CMP, Direction.BACKWARD))
    with pytest.raises(IllegalOp):
        replay(s)


def test_empty_outline():
    with pytest.raises(IllegalOp):
        replay(SupervisionSequences())


def test_truncated_fill():
    s = build_signals(sparql_to_graph("SELECT ?x WHERE { <e> <r> ?x }"))
    s.edge_fill = []
    with pytest.raises(IllegalOp):
        replay(s)


def test_log_replays():
    s = build_signals(sparql_to_graph(RUNNING_EXAMPLE))
    assert load_log(s.to_log("q7")) == s.ops()
