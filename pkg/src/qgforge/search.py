"""Beam search over outlining and filling, with execution-guided edge filling."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import torch

from .candidates import CandidatePool
from .grammar import (
    FILL_EDGE,
    FILL_VERTEX,
    FillOp,
    GenerationState,
    Op,
    apply_fill,
    apply_outline,
    initial_state,
    state_from_aqg,
)
from .graph import MAX_VERTICES, AbstractQueryGraph, QueryGraph, VertexClass
from .kg import EvalError, TripleStore, ask
from .model import EmptyPool, QuestionContext, Scorer
from .sparql.ast import render
from .sparql.serialize import SerializationError, to_sparql, to_sparql_ast

MAX_OUTLINE_STEPS = 3 * MAX_VERTICES - 1


class NoResult(RuntimeError):
    """No hypothesis survived a decoding phase."""


class EmptyResult(NoResult):
    """Execution guidance discarded every edge-filling hypothesis."""


@dataclass
class Entry:
    state: GenerationState
    score: float
    order: int
    ops: tuple = ()
    h: Optional[torch.Tensor] = None
    dead: bool = False


def top_k(entries: Sequence[Entry], k: int) -> list[Entry]:
    """Live entries by score descending, ties by insertion order."""
    live = [e for e in entries if not e.dead]
    live.sort(key=lambda e: (-e.score, e.order))
    return live[:k]


def estimate_search_space(n: int, k: int, y_o: int, y_v: int, y_e: int) -> int:
    """Upper estimate of scorer invocations for one question."""
    if min(n, k, y_o, y_v, y_e) < 0:
        raise ValueError("all arguments must be nonnegative")
    return (3 * n - 1) * k * y_o + n * k * y_v + max(n - 1, 0) * k * y_e


def eta_bound(n: int, k: int, y_i: int) -> int:
    return max(n - 1, 0) * k * y_i


@dataclass
class SearchStats:
    """Instrumentation for one question."""

    k: int = 0
    n: int = 0
    y_o: int = 0
    y_v: int = 0
    y_e: int = 0
    outline_calls: int = 0
    vertex_calls: int = 0
    edge_calls: int = 0
    outline_steps: int = 0
    probes: int = 0
    eta: int = 0
    edges: int = 0

    @property
    def calls(self) -> int:
        return self.outline_calls + self.vertex_calls + self.edge_calls

    @property
    def y_star(self) -> int:
        return estimate_search_space(self.n, self.k, self.y_o, self.y_v, self.y_e)

    @property
    def eta_sup(self) -> int:
        return eta_bound(self.n, self.k, self.y_e)

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(calls=self.calls, y_star=self.y_star, eta_sup=self.eta_sup)
        return d


def pool_bounds(pool: CandidatePool) -> tuple[int, int]:
    """Largest vertex pool and largest edge pool."""
    y_v = max(len(pool.ent), len(pool.type), len(pool.val), 1)
    y_e = max(len(pool.rel), len(pool.ord), len(pool.cmp), len(pool.agg))
    return y_v, y_e


class AskProbe:
    """Cached ASK execution of partial graphs for one question."""

    def __init__(self, kg: TripleStore, budget: Optional[int] = None):
        self.kg = kg
        self.budget = budget
        self.cache: dict[str, bool] = {}
        self.requests = 0
        self.executed = 0

    def __call__(self, g: QueryGraph) -> bool:
        self.requests += 1
        try:
            ast = to_sparql_ast(g, "ASK")
        except SerializationError:
            return False
        key = render(ast)
        if key not in self.cache:
            self.executed += 1
            try:
                self.cache[key] = ask(self.kg, ast, self.budget, lenient=True)
            except EvalError:
                self.cache[key] = False
        return self.cache[key]


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------


def decode_outline(model: Scorer, ctx: QuestionContext, k: int, stats: Optional[SearchStats] = None) -> list[Entry]:
    """Top-k finished outlines; finished states leave the beam and stop using slots."""
    if k < 1:
        raise ValueError("beam size must be at least 1")
    stats = stats if stats is not None else SearchStats()
    counter = itertools.count()
    beam = [Entry(initial_state(), 0.0, next(counter))]
    finished: list[Entry] = []
    with torch.no_grad():
        for _ in range(MAX_OUTLINE_STEPS):
            if not beam:
                break
            if len(finished) >= k and beam[0].score <= finished[k - 1].score:
                # scores only decrease with depth, no live entry can overtake
                break
            hs = None if beam[0].h is None else torch.stack([e.h for e in beam])
            h_new, cands = model.outline_step(ctx, hs, [e.state for e in beam], strict=False)
            stats.outline_steps += 1
            live, ended = [], []
            for i, (e, ops) in enumerate(zip(beam, cands)):
                stats.n = max(stats.n, e.state.n)
                stats.outline_calls += len(ops)
                stats.y_o = max(stats.y_o, len(ops))
                for op, lp in ops:
                    st = apply_outline(e.state, op, check=False)
                    child = Entry(st, e.score + lp, next(counter), e.ops + (op,), h_new[i])
                    (ended if op.cls is VertexClass.END else live).append(child)
            # an End retires only if it makes this step's top k; afterwards it holds no slot
            chosen = {id(x) for x in top_k(live + ended, k)}
            finished = top_k(finished + [x for x in ended if id(x) in chosen], k)
            beam = top_k(live, k)
    if not finished:
        raise NoResult(f"no outline finished within {MAX_OUTLINE_STEPS} steps")
    return finished


def decode_fill_vertices(
    model: Scorer,
    ctx: QuestionContext,
    aqg: AbstractQueryGraph,
    k: int,
    table=None,
    score: float = 0.0,
    stats: Optional[SearchStats] = None,
    ops: tuple = (),
) -> list[Entry]:
    """Top-k vertex fillings; copy-forced and non-instance slots take no width."""
    stats = stats if stats is not None else SearchStats()
    if table is None:
        table = model.fill_scores(ctx, aqg)[0]
    counter = itertools.count()
    beam = [Entry(state_from_aqg(aqg), score, next(counter), ops)]
    for slot in range(len(aqg.vertices)):
        nxt = []
        for e in beam:
            try:
                forced, cands = model.fill_candidates(ctx, table, e.state)
            except EmptyPool:
                continue
            if not forced:
                stats.vertex_calls += len(cands)
            for inst, lp in cands:
                op = FillOp(FILL_VERTEX, slot, inst)
                nxt.append(Entry(apply_fill(e.state, op, check=False), e.score + lp, next(counter), e.ops + (op,)))
        beam = top_k(nxt, k)
        if not beam:
            raise NoResult(f"no legal filling for vertex slot {slot}")
    return beam


def decode_fill_edges_eg(
    model: Scorer,
    ctx: QuestionContext,
    entries: Sequence[Entry],
    k: int,
    kg: Optional[TripleStore],
    table=None,
    stats: Optional[SearchStats] = None,
    probe: Optional[AskProbe] = None,
    guided: bool = True,
) -> Entry:
    """Fill edges entry by entry; with guidance, fills whose ASK is empty are discarded."""
    stats = stats if stats is not None else SearchStats()
    if not entries:
        raise EmptyResult("no vertex-filled graph to complete")
    if guided and probe is None:
        if kg is None:
            raise ValueError("execution guidance needs a knowledge graph")
        probe = AskProbe(kg)
    if table is None:
        table = model.fill_scores(ctx, entries[0].state.aqg())[1]
    counter = itertools.count()
    beam = [Entry(e.state, e.score, next(counter), e.ops) for e in top_k(entries, k)]
    n_edges = len(beam[0].state.edges)
    if guided and n_edges == 0:
        # nothing to fill, but the graph itself still has to execute
        for e in beam:
            stats.probes += 1
            before = probe.executed
            e.dead = not probe(e.state.query_graph())
            stats.eta += probe.executed - before
        beam = top_k(beam, k)
        if not beam:
            raise EmptyResult("the edgeless graph has no executable query")
    for slot in range(n_edges):
        merged: list[Entry] = []
        for e in beam:
            try:
                forced, cands = model.fill_candidates(ctx, table, e.state)
            except EmptyPool:
                continue
            if not forced:
                stats.edge_calls += len(cands)
            expansions = []
            for inst, lp in cands:
                op = FillOp(FILL_EDGE, slot, inst)
                st = apply_fill(e.state, op, check=False)
                child = Entry(st, e.score + lp, next(counter), e.ops + (op,))
                if guided:
                    stats.probes += 1
                    before = probe.executed
                    child.dead = not probe(st.query_graph())
                    stats.eta += probe.executed - before
                expansions.append(child)
            merged.extend(top_k(expansions, k))
        beam = top_k(merged, k)
        if not beam:
            raise EmptyResult(f"every hypothesis was discarded at edge slot {slot}")
    return beam[0]


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class ParseResult:
    graph: Optional[QueryGraph]
    sparql: Optional[str]
    score: Optional[float]
    aqg: Optional[AbstractQueryGraph]
    ops: list = field(default_factory=list)
    stats: SearchStats = field(default_factory=SearchStats)
    error: Optional[str] = None

    def trace(self) -> dict:
        return {
            "score": self.score,
            "ops": [op.to_json() for op in self.ops],
            "stats": self.stats.to_json(),
            "error": self.error,
        }


def parse_question(
    model: Scorer,
    question: str,
    pool: CandidatePool,
    k: int = 5,
    kg: Optional[TripleStore] = None,
    guided: bool = True,
    budget: Optional[int] = None,
) -> ParseResult:
    """Outline, fill vertices, fill edges; only the best outline is filled."""
    stats = SearchStats(k=k)
    stats.y_v, stats.y_e = pool_bounds(pool)
    aqg = None
    try:
        ctx = model.context(question, pool)
        outlines = decode_outline(model, ctx, k, stats)
        best = outlines[0]
        aqg = best.state.aqg()
        stats.edges = len(aqg.edges)
        with torch.no_grad():
            fv, fe = model.fill_scores(ctx, aqg)
            vbeam = decode_fill_vertices(model, ctx, aqg, k, fv, best.score, stats, best.ops)
            probe = AskProbe(kg, budget) if guided else None
            final = decode_fill_edges_eg(model, ctx, vbeam, k, kg, fe, stats, probe, guided)
    except (NoResult, ValueError) as exc:
        return ParseResult(None, None, None, aqg, [], stats, f"{type(exc).__name__}: {exc}")
    g = final.state.query_graph()
    try:
        sparql = to_sparql(g)
    except SerializationError as exc:
        return ParseResult(g, None, final.score, aqg, list(final.ops), stats, f"SerializationError: {exc}")
    return ParseResult(g, sparql, final.score, aqg, list(final.ops), stats)


def outline_sequence_score(model: Scorer, ctx: QuestionContext, ops: Sequence[Op]) -> float:
    """Sum of outline log-probabilities along ``ops`` (used by greedy and oracle checks)."""
    st, h, total = initial_state(), None, 0.0
    with torch.no_grad():
        for op in ops:
            h, cands = model.outline_step(ctx, h, [st])
            total += dict(cands[0])[op]
            st = apply_outline(st, op)
    return total
