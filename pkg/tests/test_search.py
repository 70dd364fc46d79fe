import heapq
import itertools
import math

import pytest
import torch

from qgforge.candidates import CandidatePool, build_pool
from qgforge.grammar import FILL_EDGE, FillOp, IllegalOp, apply_fill, apply_outline, initial_state, state_from_aqg
from qgforge.graph import VertexClass, abstract
from qgforge.kg import TripleStore, ask
from qgforge.model import Scorer, Vocab
from qgforge.search import (
    AskProbe,
    EmptyResult,
    Entry,
    SearchStats,
    decode_fill_edges_eg,
    decode_fill_vertices,
    decode_outline,
    estimate_search_space,
    eta_bound,
    outline_sequence_score,
    parse_question,
    pool_bounds,
    top_k,
)
from qgforge.sparql import gold_entities, sparql_to_graph
from qgforge.sparql.serialize import to_sparql_ast

C = VertexClass

TOY_KG = TripleStore([
    ("alien", "film.directed_by", "ridley"),
    ("alien", "film.starring", "sigourney"),
    ("heat", "film.directed_by", "mann"),
    ("heat", "film.starring", "pacino"),
    ("alien", "film.release_year", "1979"),
])


@pytest.fixture(scope="module")
def model(corpus, store):
    rows = corpus[:30]
    words = [r["question"] for r in rows] + ["who directed alien"]
    vocab = Vocab.build(words, store.relations() + store.entities() + TOY_KG.relations() + TOY_KG.entities())
    return Scorer.init(vocab, d=16, seed=4)


def test_estimate_formula():
    assert estimate_search_space(3, 5, 10, 10, 10) == 8 * 5 * 10 + 3 * 5 * 10 + 2 * 5 * 10 == 650
    assert estimate_search_space(3, 0, 10, 10, 10) == 0
    assert eta_bound(4, 5, 7) == 3 * 5 * 7
    with pytest.raises(ValueError):
        estimate_search_space(-1, 1, 1, 1, 1)


def test_top_k_ties_and_dead():
    es = [Entry(None, -1.0, 2), Entry(None, -1.0, 1), Entry(None, 0.0, 3, dead=True), Entry(None, -2.0, 0)]
    assert [e.order for e in top_k(es, 2)] == [1, 2]
    assert [e.order for e in top_k(es, 10)] == [1, 2, 0]


# -- outline --------------------------------------------------------------


def test_beam_one_is_greedy(model):
    ctx = model.context("who directed alien", CandidatePool(ent=["alien"]))
    st, h, ops = initial_state(), None, []
    with torch.no_grad():
        while st.phase == "Outlining":
            h, cands = model.outline_step(ctx, h, [st])
            op = max(cands[0], key=lambda c: c[1])[0]
            ops.append(op)
            st = apply_outline(st, op)
    assert list(decode_outline(model, ctx, 1)[0].ops) == ops


def best_first(model, ctx, limit=20000):
    """Exact best finished outline: log-probabilities only decrease, so the first finished pop wins."""
    counter = itertools.count()
    heap = [(0.0, next(counter), initial_state(), None, ())]
    with torch.no_grad():
        for _ in range(limit):
            neg, _, st, h, ops = heapq.heappop(heap)
            if st.phase != "Outlining":
                return -neg, ops
            h2, cands = model.outline_step(ctx, None if h is None else h[None], [st], strict=False)
            for op, lp in cands[0]:
                heapq.heappush(heap, (neg - lp, next(counter), apply_outline(st, op, check=False), h2[0], ops + (op,)))
    raise AssertionError("search limit reached")


@pytest.mark.parametrize("question", ["who directed alien", "how many films star pacino", "did heat star pacino"])
def test_wide_beam_contains_exhaustive_best(model, question):
    ctx = model.context(question, CandidatePool(ent=["alien"]))
    score, ops = best_first(model, ctx)
    beam = decode_outline(model, ctx, 30)
    assert any(e.ops == ops for e in beam)
    assert math.isclose(beam[0].score, score, abs_tol=1e-9)
    assert math.isclose(outline_sequence_score(model, ctx, ops), score, abs_tol=1e-9)


def test_outline_calls_bounded(model, corpus, store):
    for row in corpus[:10]:
        pool = build_pool(row["question"], store, gold_entities(row["sparql"]))
        stats = SearchStats(k=3)
        out = decode_outline(model, model.context(row["question"], pool), 3, stats)
        assert len(out) <= 3
        assert stats.outline_calls <= (3 * stats.n - 1) * 3 * stats.y_o
        assert all(a.score >= b.score for a, b in zip(out, out[1:]))


def test_k_zero_rejected(model):
    with pytest.raises(ValueError):
        decode_outline(model, model.context("who", CandidatePool()), 0)


# -- filling --------------------------------------------------------------


def _aqg(sparql):
    return abstract(sparql_to_graph(sparql))


def test_singleton_pools_deterministic(model):
    aqg = _aqg("SELECT ?x WHERE { <alien> <film.directed_by> ?x }")
    pool = CandidatePool(ent=["alien"], rel=["film.directed_by"])
    ctx = model.context("who directed alien", pool)
    vb = decode_fill_vertices(model, ctx, aqg, 5)
    assert len(vb) == 1 and vb[0].score == 0.0
    final = decode_fill_edges_eg(model, ctx, vb, 5, TOY_KG)
    assert final.score == 0.0
    assert [v.instance for v in final.state.vertices] == [None, "alien"]


def test_two_entities_both_survive(model):
    aqg = _aqg("SELECT ?x WHERE { <alien> <film.directed_by> ?x }")
    ctx = model.context("who directed alien", CandidatePool(ent=["alien", "heat"], rel=["film.directed_by"]))
    stats = SearchStats()
    vb = decode_fill_vertices(model, ctx, aqg, 2, stats=stats)
    assert sorted(e.state.vertices[1].instance for e in vb) == ["alien", "heat"]
    assert math.isclose(sum(math.exp(e.score) for e in vb), 1.0)
    assert stats.vertex_calls <= len(aqg.vertices) * 2 * 2


def test_eg_prunes_missing_relation(model):
    aqg = _aqg("SELECT ?x WHERE { <alien> <film.directed_by> ?x }")
    pool = CandidatePool(ent=["alien"], rel=["film.release_year", "award.won", "film.directed_by", "film.starring"])
    ctx = model.context("who directed alien", pool)
    vb = decode_fill_vertices(model, ctx, aqg, 5)
    stats = SearchStats()
    final = decode_fill_edges_eg(model, ctx, vb, 5, TOY_KG, stats=stats)
    assert final.state.edges[0].instance != "award.won"
    assert ask(TOY_KG, to_sparql_ast(final.state.query_graph(), "ASK"))
    assert stats.eta <= eta_bound(len(aqg.vertices), 5, len(pool.rel))


def test_eg_all_dead():
    aqg = _aqg("SELECT ?x WHERE { <alien> <film.directed_by> ?x }")
    m = Scorer.init(Vocab.build(["who"]), d=8)
    ctx = m.context("who", CandidatePool(ent=["alien"], rel=["award.won"]))
    vb = decode_fill_vertices(m, ctx, aqg, 5)
    with pytest.raises(EmptyResult):
        decode_fill_edges_eg(m, ctx, vb, 5, TOY_KG)
    final = decode_fill_edges_eg(m, ctx, vb, 5, TOY_KG, guided=False)
    assert final.state.edges[0].instance == "award.won"


def exhaustive_edges(model, ctx, entries, table, kg):
    """Best total score over every legal edge assignment whose full graph has a nonempty ASK."""
    best = None
    for e in entries:
        n_edges = len(e.state.edges)
        pools = []
        for slot in range(n_edges):
            pools.append(ctx.pool.instances(e.state.edges[slot].tag.value))
        for combo in itertools.product(*pools):
            st, score = e.state, e.score
            try:
                for slot, inst in enumerate(combo):
                    _, cands = model.fill_candidates(ctx, table, st)
                    lp = dict(cands).get(inst)
                    if lp is None:
                        raise IllegalOp(inst)
                    st = apply_fill(st, FillOp(FILL_EDGE, slot, inst))
                    score += lp
            except Exception:
                continue
            if not ask(kg, to_sparql_ast(st.query_graph(), "ASK"), lenient=True):
                continue
            if best is None or score > best[0]:
                best = (score, st)
    return best


@pytest.mark.parametrize("sparql, rels", [
    ("SELECT ?x WHERE { <alien> <film.directed_by> ?x }", ["film.starring", "award.won", "film.directed_by"]),
    ("SELECT ?x WHERE { ?f <film.directed_by> ?x . ?f <film.starring> <pacino> }",
     ["film.starring", "film.directed_by", "award.won"]),
    ("SELECT (COUNT(?f) AS ?c) WHERE { ?f <film.starring> <pacino> }", ["film.starring", "film.directed_by"]),
])
def test_eg_matches_exhaustive(model, sparql, rels):
    aqg = _aqg(sparql)
    pool = CandidatePool(ent=["alien", "pacino", "heat"], rel=rels)
    ctx = model.context("who directed the film", pool)
    fv, fe = model.fill_scores(ctx, aqg)
    vb = decode_fill_vertices(model, ctx, aqg, 50, fv)
    final = decode_fill_edges_eg(model, ctx, vb, 1000, TOY_KG, fe)
    best = exhaustive_edges(model, ctx, vb, fe, TOY_KG)
    assert best is not None
    assert math.isclose(final.score, best[0], abs_tol=1e-9)
    assert final.state.query_graph() == best[1].query_graph()


# -- full pipeline --------------------------------------------------------


def test_parse_accounting(model, corpus, store):
    for row in corpus[:12]:
        pool = build_pool(row["question"], store, gold_entities(row["sparql"]))
        res = parse_question(model, row["question"], pool, 5, store, True)
        s = res.stats
        assert s.calls <= s.y_star
        assert s.eta <= eta_bound(s.n, 5, s.y_e)
        assert (s.y_v, s.y_e) == pool_bounds(pool)
        if res.graph is not None:
            assert ask(store, to_sparql_ast(res.graph, "ASK"))


def test_parse_deterministic(model, corpus, store):
    row = corpus[5]
    pool = build_pool(row["question"], store, gold_entities(row["sparql"]))
    a = parse_question(model, row["question"], pool, 5, store)
    b = parse_question(model, row["question"], pool, 5, store)
    assert a.trace() == b.trace() and a.sparql == b.sparql


def test_probe_cache():
    probe = AskProbe(TOY_KG)
    g = sparql_to_graph("SELECT ?x WHERE { <alien> <film.directed_by> ?x }")
    assert probe(g) and probe(g)
    assert probe.requests == 2 and probe.executed == 1


def test_state_from_aqg_fill_entry(model):
    aqg = _aqg("SELECT ?x WHERE { <alien> <film.directed_by> ?x }")
    assert state_from_aqg(aqg).n == 2
