"""Query graph -> SPARQL (the ToSPARQL step used by execution guidance)."""

from __future__ import annotations

from collections import defaultdict
from typing import Optional

from ..graph import EdgeTag, Vertex, VertexClass, _Graph
from ..terms import combined_parts
from .ast import IRI, Aggregate, Block, Compare, OrderBy, SparqlAst, Triple, Var, render


class SerializationError(ValueError):
    pass


_VAR_CLASSES = (VertexClass.ANS, VertexClass.VAR)


def _names(g: _Graph) -> tuple[dict[int, str], dict[int, str]]:
    vnames: dict[int, str] = {}
    k = 0
    for v in g.vertices:
        if v.cls is VertexClass.ANS:
            vnames[v.id] = "x"
        elif v.cls is VertexClass.VAR:
            k += 1
            vnames[v.id] = f"v{k}"
    enames: dict[int, str] = {}
    k = 0
    for e in g.edges:
        if e.instance is None and e.tag is EdgeTag.REL:
            k += 1
            enames[e.id] = f"p{k}"
    return vnames, enames


def _split_intervals(g: _Graph) -> set[int]:
    """Interval variables that can be rendered as their two endpoints."""
    if not all(e.instance is not None for e in g.edges):
        return set()
    V = g.vertices
    cands = set()
    for v in V:
        if v.cls is not VertexClass.VAR:
            continue
        inc = g.incident(v.id)
        combined = [e for e in inc if e.tag is EdgeTag.REL and e.tail == v.id and combined_parts(e.instance)]
        others = [e for e in inc if e not in combined]
        if len(combined) != 1:
            continue
        if all(e.tag is EdgeTag.CMP and e.instance in ("DURING", "OVERLAP") for e in others):
            cands.add(v.id)
    changed = True
    while changed:
        changed = False
        for vid in sorted(cands):
            for e in g.incident(vid):
                if e.tag is EdgeTag.CMP:
                    other = V[e.other(vid)]
                    if other.cls is not VertexClass.VAL and other.id not in cands:
                        cands.discard(vid)
                        changed = True
                        break
    return cands


def to_sparql_ast(g: _Graph, intent: str = "SELECT") -> SparqlAst:
    """Build the program for a (possibly partially filled) graph.

    Unfilled relation slots become predicate variables; unfilled built-in
    slots impose nothing. Vertex slots must be filled.
    """
    V, E = g.vertices, g.edges
    if not V:
        raise SerializationError("empty graph")
    if not E:
        raise SerializationError("a graph without edges has nothing to select against")
    for v in V:
        if v.cls not in _VAR_CLASSES and v.instance is None:
            raise SerializationError(f"vertex slot {v.id} is unfilled")
        if v.cls is VertexClass.END:
            raise SerializationError("End cannot be serialized")
    ans = next((v for v in V if v.cls is VertexClass.ANS), None)
    if ans is None:
        raise SerializationError("graph has no answer vertex")
    segs = sorted({v.segment for v in V})
    # every segment must reach segment 0 through cross-segment edges
    reach = {0}
    frontier = [0]
    links = defaultdict(set)
    for e in E:
        a, b = V[e.head].segment, V[e.tail].segment
        if a != b:
            links[a].add(b)
            links[b].add(a)
    while frontier:
        s = frontier.pop()
        for t in links[s]:
            if t not in reach:
                reach.add(t)
                frontier.append(t)
    if set(segs) - reach:
        raise SerializationError(f"segments {sorted(set(segs) - reach)} have no path to segment 0")

    vnames, enames = _names(g)
    split = _split_intervals(g)

    def term(v: Vertex, side: Optional[str] = None):
        if v.cls in _VAR_CLASSES:
            if side is not None:
                return Var(f"{vnames[v.id]}_{side}")
            return Var(vnames[v.id])
        if v.cls is VertexClass.VAL:
            return v.instance
        return IRI(v.instance)

    ask_edge = next((e for e in E if e.tag is EdgeTag.AGG and e.instance == "ASK"), None)
    if ask_edge is not None:
        intent = "ASK"

    triples: dict[int, list[tuple[int, Triple]]] = defaultdict(list)
    bound: dict[int, set[str]] = defaultdict(set)
    for e in E:
        if e.tag is not EdgeTag.REL:
            continue
        h, t = V[e.head], V[e.tail]
        seg = h.segment
        pred = IRI(e.instance) if e.instance is not None else Var(enames[e.id])
        parts = combined_parts(e.instance) if e.instance else None
        if parts and t.id in split:
            st = Triple(term(h), IRI(parts[0]), term(t, "st"))
            ed = Triple(term(h), IRI(parts[1]), term(t, "ed"))
            triples[seg] += [(e.id, st), (e.id, ed)]
        else:
            triples[seg].append((e.id, Triple(term(h), pred, term(t))))
        for node in (term(h), term(t)):
            if isinstance(node, Var):
                bound[seg].add(node.name)
        if parts and t.id in split:
            bound[seg] |= {f"{vnames[t.id]}_st", f"{vnames[t.id]}_ed"}

    # Aggregates and orderings over a partly unfilled pattern are not
    # relaxations of the final program, so they wait until the rest of the
    # segment is filled.
    complete = defaultdict(lambda: True)
    for e in E:
        h, t = V[e.head], V[e.tail]
        if h.segment == t.segment and e.tag not in (EdgeTag.AGG, EdgeTag.ORD) and e.instance is None:
            complete[h.segment] = False

    aggs: dict[int, Aggregate] = {}
    for e in E:
        if e.tag is EdgeTag.AGG and e.instance in ("COUNT", "MAX", "MIN") and complete[V[e.tail].segment]:
            h, t = V[e.head], V[e.tail]
            if isinstance(term(h), Var) and vnames[h.id] in bound[h.segment]:
                aggs[t.segment] = Aggregate(e.instance, term(h), term(t))
                bound[t.segment].add(vnames[t.id])

    def cmp_filters(e) -> list[Compare]:
        h, t = V[e.head], V[e.tail]
        op = e.instance
        if op in ("DURING", "OVERLAP") and (h.id in split or t.id in split):
            def ends(v):
                if v.cls is VertexClass.VAL:
                    return v.instance, v.instance
                return term(v, "st"), term(v, "ed")
            s1, e1 = ends(h)
            s2, e2 = ends(t)
            if op == "DURING":
                return [Compare(">=", s1, s2), Compare("<=", e1, e2)]
            return [Compare("<=", s1, e2), Compare(">=", e1, s2)]
        return [Compare(op, term(h), term(t))]

    def usable(v: Vertex, seg_bound: set[str]) -> bool:
        if v.cls not in _VAR_CLASSES:
            return True
        if v.id in split:
            return True
        return vnames[v.id] in seg_bound

    filters: dict[int, list[Compare]] = defaultdict(list)
    orders: dict[int, tuple[OrderBy, int]] = {}
    cross_vars: dict[int, list[int]] = defaultdict(list)
    for e in E:
        h, t = V[e.head], V[e.tail]
        if e.tag is EdgeTag.CMP:
            if h.segment != t.segment:
                for v in (h, t):
                    if v.id not in cross_vars[v.segment]:
                        cross_vars[v.segment].append(v.id)
                if e.instance is None:
                    continue
                if usable(h, bound[h.segment]) and usable(t, bound[t.segment]):
                    filters[0].extend(cmp_filters(e))
            elif e.instance is not None and usable(h, bound[h.segment]) and usable(t, bound[t.segment]):
                filters[h.segment].extend(cmp_filters(e))
        elif e.tag is EdgeTag.ORD and e.instance is not None and complete[h.segment]:
            if usable(h, bound[h.segment]):
                orders[h.segment] = (OrderBy(e.instance, term(h)), int(t.instance.lexical))

    def ordered_triples(seg: int) -> tuple[Triple, ...]:
        items = triples[seg]
        if seg == 0 and ask_edge is not None:
            head = ask_edge.head
            lead = [i for i, (eid, _) in enumerate(items) if E[eid].head == head]
            if lead:
                first = items[lead[0]]
                items = [first] + [x for j, x in enumerate(items) if j != lead[0]]
        return tuple(t for _, t in items)

    subqueries = []
    for seg in segs:
        if seg == 0:
            continue
        if seg in aggs:
            projection = (aggs[seg],)
        else:
            projection = tuple(
                Var(vnames[vid]) for vid in sorted(cross_vars[seg]) if vnames[vid] in bound[seg]
            )
            if not projection:
                # nothing links this segment yet; keep it as an existence check
                names = sorted(bound[seg])
                projection = (Var(names[0]),) if names else ()
            if not projection:
                continue
        order, limit = orders.get(seg, (None, None))
        subqueries.append(
            Block(projection, True, ordered_triples(seg), tuple(filters[seg]), (), order, limit)
        )

    main_order, main_limit = orders.get(0, (None, None))
    if intent == "ASK":
        main = Block((), False, ordered_triples(0), tuple(filters[0]), tuple(subqueries))
        return SparqlAst("ASK", main)
    if 0 in aggs:
        projection = (aggs[0],)
    else:
        projection = (Var("x"),)
    main = Block(projection, True, ordered_triples(0), tuple(filters[0]), tuple(subqueries), main_order, main_limit)
    return SparqlAst("SELECT", main)


def to_sparql(g: _Graph, intent: str = "SELECT") -> str:
    return render(to_sparql_ast(g, intent))

