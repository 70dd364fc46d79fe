import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgforge.graph import (
    AbstractQueryGraph,
    Edge,
    EdgeTag,
    GraphBuilder,
    QueryGraph,
    ValidationError,
    Vertex,
    VertexClass,
    abstract,
    aqg_equal,
    canonical_form,
    graphs_equal,
    validate,
)
from qgforge.sparql import sparql_to_graph

from .conftest import RUNNING_EXAMPLE

C, T = VertexClass, EdgeTag


def chain(*parts, query=False):
    """chain(C.ANS, (T.REL, "<"), C.ENT) builds Ans <-Rel- Ent."""
    b = GraphBuilder()
    prev = b.add_vertex(parts[0])
    for i in range(1, len(parts), 2):
        (tag, arrow), cls = parts[i], parts[i + 1]
        cur = b.add_vertex(cls)
        if arrow == ">":
            b.add_edge(prev, cur, tag)
        else:
            b.add_edge(cur, prev, tag)
        prev = cur
    return b.freeze_query() if query else b.freeze_abstract()


def relabel(g, perm):
    """Permute vertex ids with ``perm`` (old -> new), keeping edge order."""
    inv = sorted(range(len(perm)), key=lambda i: perm[i])
    vertices = tuple(Vertex(perm[old], g.vertices[old].cls, g.vertices[old].instance, g.vertices[old].segment)
                     for old in inv)
    edges = tuple(Edge(e.id, perm[e.head], perm[e.tail], e.tag, e.instance) for e in g.edges)
    vc = tuple((perm[a], perm[b]) for a, b in g.vertex_copies)
    return type(g)(vertices, edges, vc, g.edge_copies)


# -- brute-force isomorphism oracle --------------------------------------


def iso_bruteforce(a, b) -> bool:
    if len(a.vertices) != len(b.vertices) or len(a.edges) != len(b.edges):
        return False
    n = len(a.vertices)
    b_edges = sorted((e.head, e.tail, e.tag, e.instance) for e in b.edges)
    for perm in itertools.permutations(range(n)):
        seg_map = {}
        ok = True
        for v in a.vertices:
            w = b.vertices[perm[v.id]]
            if (v.cls, v.instance) != (w.cls, w.instance) or (v.segment == 0) != (w.segment == 0):
                ok = False
                break
            if seg_map.setdefault(v.segment, w.segment) != w.segment:
                ok = False
                break
        if not ok or len(set(seg_map.values())) != len(seg_map):
            continue
        mapped = sorted((perm[e.head], perm[e.tail], e.tag, e.instance) for e in a.edges)
        if mapped != b_edges:
            continue
        # trees have no parallel edges, so the edge bijection is forced
        emap = {e.id: next(f.id for f in b.edges if (f.head, f.tail) == (perm[e.head], perm[e.tail]))
                for e in a.edges}
        vcls = lambda pairs, m: {frozenset({m(s), m(t)}) for s, t in pairs}  # noqa: E731
        if vcls(a.vertex_copies, lambda x: perm[x]) != vcls(b.vertex_copies, lambda x: x):
            continue
        if vcls(a.edge_copies, lambda x: emap[x]) != vcls(b.edge_copies, lambda x: x):
            continue
        return True
    return False


def all_small_aqgs(max_n=3):
    out = []
    classes = (C.ANS, C.VAR, C.ENT, C.TYPE, C.VAL)
    for n in range(1, max_n + 1):
        trees = [()] if n == 1 else [
            pairs for pairs in itertools.combinations(itertools.combinations(range(n), 2), n - 1)
        ]
        for cls in itertools.product(classes, repeat=n):
            if cls.count(C.ANS) != 1:
                continue
            for pairs in trees:
                for orient in itertools.product((0, 1), repeat=len(pairs)):
                    for tags in itertools.product(tuple(T), repeat=len(pairs)):
                        vs = tuple(Vertex(i, c) for i, c in enumerate(cls))
                        es = tuple(
                            Edge(i, *(p if o == 0 else p[::-1]), tag)
                            for i, (p, o, tag) in enumerate(zip(pairs, orient, tags))
                        )
                        copies = [()]
                        rels = [e.id for e in es if e.tag is T.REL]
                        if len(rels) == 2:
                            copies.append(((rels[1], rels[0]),))
                        for ec in copies:
                            g = AbstractQueryGraph(vs, es, (), ec)
                            if validate(g).ok:
                                out.append(g)
    return out


@pytest.fixture(scope="module")
def small_aqgs():
    return all_small_aqgs(3)


# -- abstract -----------------------------------------------------------


def test_running_example_abstracts_to_same_shape():
    g = sparql_to_graph(RUNNING_EXAMPLE)
    a = abstract(g)
    assert (len(a.vertices), len(a.edges)) == (len(g.vertices), len(g.edges))
    assert {v.cls for v in a.vertices} == {C.ANS, C.VAR, C.ENT, C.VAL}
    assert {e.tag for e in a.edges} == {T.REL, T.CMP, T.ORD, T.AGG}
    assert all(v.instance is None for v in a.vertices) and all(e.instance is None for e in a.edges)
    assert validate(a).ok


def test_single_vertex():
    g = QueryGraph((Vertex(0, C.ANS),))
    a = abstract(g)
    assert a.vertices == (Vertex(0, C.ANS),) and a.edges == ()


def test_abstract_rejects_invalid():
    g = QueryGraph((Vertex(0, C.ANS), Vertex(1, C.ANS)), (Edge(0, 0, 1, T.REL, "r"),))
    with pytest.raises(ValidationError):
        abstract(g)


def test_different_relations_same_aqg():
    a = sparql_to_graph("SELECT ?x WHERE { ?y <r1> ?x . ?y <r2> <e> }")
    b = sparql_to_graph("SELECT ?x WHERE { ?y <s1> ?x . ?y <s2> <f> }")
    assert not graphs_equal(a, b)
    assert aqg_equal(abstract(a), abstract(b))


# -- validate -----------------------------------------------------------


def test_running_example_valid():
    assert validate(sparql_to_graph(RUNNING_EXAMPLE)).ok


def test_edge_count_violation():
    g = AbstractQueryGraph(
        (Vertex(0, C.ANS), Vertex(1, C.VAR), Vertex(2, C.ENT)),
        (Edge(0, 1, 0, T.REL), Edge(1, 2, 1, T.REL), Edge(2, 2, 0, T.REL)),
    )
    r = validate(g)
    assert "tree-size" in r.codes()
    assert "|V| = |E| + 1" in str(r)


def test_disconnected_violation():
    g = AbstractQueryGraph(
        (Vertex(0, C.ANS), Vertex(1, C.ENT), Vertex(2, C.VAR), Vertex(3, C.ENT)),
        (Edge(0, 1, 0, T.REL), Edge(1, 3, 2, T.REL), Edge(2, 1, 0, T.REL)),
    )
    assert "weakly-connected" in validate(g).codes() or "multi-edge" in validate(g).codes()
    g = AbstractQueryGraph(
        (Vertex(0, C.ANS), Vertex(1, C.ENT), Vertex(2, C.VAR), Vertex(3, C.ENT)),
        (Edge(0, 1, 0, T.REL), Edge(1, 3, 2, T.REL), Edge(2, 2, 3, T.REL)),
    )
    assert "weakly-connected" in validate(g).codes()


@pytest.mark.parametrize(
    "graph, code",
    [
        (QueryGraph(), "empty"),
        (chain(C.ANS, (T.REL, "<"), C.VAL), "edge-endpoints"),
        (chain(C.ANS, (T.CMP, "<"), C.ENT), "edge-endpoints"),
        (chain(C.ANS, (T.ORD, ">"), C.VAR), "edge-endpoints"),
        (chain(C.VAR, (T.REL, ">"), C.ENT), "single-answer"),
        (chain(C.ANS, (T.REL, "<"), C.TYPE), "edge-endpoints"),
    ],
)
def test_violation_codes(graph, code):
    assert code in validate(graph).codes()


def test_segment_rules():
    # cross-segment edge must be Cmp between variables
    g = AbstractQueryGraph(
        (Vertex(0, C.ANS), Vertex(1, C.ENT), Vertex(2, C.VAR, None, 1), Vertex(3, C.ENT, None, 1)),
        (Edge(0, 1, 0, T.REL), Edge(1, 0, 2, T.REL), Edge(2, 3, 2, T.REL)),
    )
    assert "cross-segment" in validate(g).codes()
    ok = AbstractQueryGraph(g.vertices, (Edge(0, 1, 0, T.REL), Edge(1, 0, 2, T.CMP), Edge(2, 3, 2, T.REL)))
    assert validate(ok).ok


# -- canonical equality -------------------------------------------------


def test_relabelled_aqg_equal():
    a = abstract(sparql_to_graph(RUNNING_EXAMPLE))
    rng = random.Random(3)
    for _ in range(5):
        perm = list(range(len(a.vertices)))
        rng.shuffle(perm)
        assert aqg_equal(a, relabel(a, perm))


def test_direction_matters():
    a = chain(C.ANS, (T.REL, ">"), C.ENT)
    b = chain(C.ANS, (T.REL, "<"), C.ENT)
    assert validate(a).ok and validate(b).ok
    assert not aqg_equal(a, b)


def test_small_aqgs_match_bruteforce(small_aqgs):
    assert len(small_aqgs) > 50
    buckets = {}
    for g in small_aqgs:
        key = (len(g.vertices), tuple(sorted(v.cls.value for v in g.vertices)),
               tuple(sorted(e.tag.value for e in g.edges)), len(g.edge_copies))
        buckets.setdefault(key, []).append(g)
    forms = {}
    for group in buckets.values():
        for a, b in itertools.combinations_with_replacement(group, 2):
            assert aqg_equal(a, b) == iso_bruteforce(a, b)
        for g in group:
            forms.setdefault(canonical_form(g), set()).add(id(group))
    # graphs from different buckets never share a canonical form
    assert all(len(v) == 1 for v in forms.values())


def test_copy_links_distinguish():
    vs = (Vertex(0, C.ANS), Vertex(1, C.VAR), Vertex(2, C.ENT))
    es = (Edge(0, 1, 0, T.REL), Edge(1, 2, 1, T.REL))
    assert not aqg_equal(AbstractQueryGraph(vs, es), AbstractQueryGraph(vs, es, (), ((1, 0),)))


def _fill_randomly(aqg, rng):
    """A random legal instance assignment through the grammar's fill checks."""
    from qgforge.grammar import FILL_EDGE, FILL_VERTEX, FillOp, apply_fill, legal_fill_instances, state_from_aqg
    from qgforge.graph import BUILTIN_INSTANCES
    from qgforge.terms import Literal

    pools = {C.ENT: ["e1", "e2", "e3"], C.TYPE: ["t1", "t2"], C.VAL: [Literal.make(str(i), "int") for i in (1, 2, 3)],
             T.REL: ["r1", "r2", "r3", "rdf:type"], **{t: list(v) for t, v in BUILTIN_INSTANCES.items()}}
    s = state_from_aqg(aqg)
    while s.phase != "Done":
        kind, slot = s.fill_slot()
        cls = s.vertices[slot].cls if kind == FILL_VERTEX else s.edges[slot].tag
        cands = legal_fill_instances(s, rng.sample(pools.get(cls, [None]), len(pools.get(cls, [None]))))
        if not cands:
            return None
        s = apply_fill(s, FillOp(kind, slot, cands[0]))
    return s.query_graph()


def test_fills_of_distinct_aqgs_never_coincide(small_aqgs):
    rng = random.Random(0)
    filled = []
    for a in small_aqgs:
        for _ in range(3):
            g = _fill_randomly(a, rng)
            if g is not None and validate(g).ok:
                filled.append((a, g))
                assert aqg_equal(abstract(g), a)
    for (a, ga), (b, gb) in itertools.combinations(filled[:400], 2):
        if graphs_equal(ga, gb):
            assert aqg_equal(a, b)


# -- properties over the synthetic corpus --------------------------------


@given(st.data())
def test_abstraction_is_valid_and_functional(corpus, data):
    row = data.draw(st.sampled_from(corpus))
    g = sparql_to_graph(row["sparql"])
    a = abstract(g)
    assert validate(a).ok
    perm = data.draw(st.permutations(range(len(g.vertices))))
    h = relabel(g, list(perm))
    assert graphs_equal(g, h)
    assert aqg_equal(abstract(h), a)


def test_json_roundtrip(corpus):
    for row in corpus[:40]:
        g = sparql_to_graph(row["sparql"])
        assert QueryGraph.loads(g.dumps()) == g
        a = abstract(g)
        assert AbstractQueryGraph.loads(a.dumps()) == a
