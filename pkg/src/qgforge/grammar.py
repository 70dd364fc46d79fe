"""Outlining and Filling state machines with legality masks.

Outlining builds an AQG with AddVertex / SelectVertex / AddEdge cycles;
Filling then instantiates vertex slots (in id order) and edge slots (in id
order). Every ``legal_*`` function returns only arguments from which a valid
graph can still be completed, so masked decoding never reaches a dead state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Union

from .graph import (
    BUILTIN_INSTANCES,
    COPYABLE_EDGE,
    COPYABLE_VERTEX,
    EDGE_CLASSES,
    MAX_VERTICES,
    NON_INSTANCE,
    AbstractQueryGraph,
    Direction,
    Edge,
    EdgeClass,
    EdgeTag,
    QueryGraph,
    is_bound,
    Vertex,
    VertexClass,
)
from .terms import COMBINED_SEP, TYPE_RELATION, Literal, parse_literal

C = VertexClass

OUTLINING = "Outlining"
FILLING_VERTICES = "FillingVertices"
FILLING_EDGES = "FillingEdges"
DONE = "Done"

ADD_VERTEX = "AddVertex"
SELECT_VERTEX = "SelectVertex"
ADD_EDGE = "AddEdge"
FILL_VERTEX = "FillVertex"
FILL_EDGE = "FillEdge"

# AddVertex candidates in scoring order (End last)
OUTLINE_VERTEX_CLASSES = (C.ANS, C.VAR, C.ENT, C.TYPE, C.VAL, C.END)


class IllegalOp(ValueError):
    pass


class ClassMismatch(IllegalOp):
    pass


class CopyViolation(IllegalOp):
    pass


class RangeError(IndexError):
    pass


@dataclass(frozen=True)
class OutlineOp:
    kind: str
    cls: Optional[Union[VertexClass, EdgeClass]] = None
    delta: int = 0
    copy: Optional[int] = None
    vertex: Optional[int] = None

    @staticmethod
    def add_vertex(cls: VertexClass, delta: int = 0, copy: Optional[int] = None) -> "OutlineOp":
        return OutlineOp(ADD_VERTEX, cls, delta, copy)

    @staticmethod
    def select_vertex(vertex: int) -> "OutlineOp":
        return OutlineOp(SELECT_VERTEX, vertex=vertex)

    @staticmethod
    def add_edge(cls: EdgeClass, copy: Optional[int] = None) -> "OutlineOp":
        return OutlineOp(ADD_EDGE, cls, copy=copy)

    def to_json(self) -> dict:
        if self.kind == ADD_VERTEX:
            return {"op": ADD_VERTEX, "class": self.cls.value, "delta": self.delta, "copy": self.copy}
        if self.kind == SELECT_VERTEX:
            return {"op": SELECT_VERTEX, "vertex": self.vertex}
        return {
            "op": ADD_EDGE,
            "class": self.cls.tag.value,
            "direction": self.cls.direction.value,
            "copy": self.copy,
        }


@dataclass(frozen=True)
class FillOp:
    kind: str
    slot: int
    instance: Union[str, Literal, None]

    def to_json(self) -> dict:
        inst = self.instance.render() if isinstance(self.instance, Literal) else self.instance
        return {"op": self.kind, "slot": self.slot, "instance": inst}


Op = Union[OutlineOp, FillOp]


def op_from_json(d: dict) -> Op:
    kind = d["op"]
    if kind == ADD_VERTEX:
        return OutlineOp.add_vertex(VertexClass(d["class"]), int(d["delta"]), d.get("copy"))
    if kind == SELECT_VERTEX:
        return OutlineOp.select_vertex(int(d["vertex"]))
    if kind == ADD_EDGE:
        return OutlineOp.add_edge(EdgeClass(EdgeTag(d["class"]), Direction(d["direction"])), d.get("copy"))
    if kind in (FILL_VERTEX, FILL_EDGE):
        inst = d["instance"]
        if isinstance(inst, str) and (inst.startswith('"') or parse_literal(inst) is not None):
            inst = parse_literal(inst)
        return FillOp(kind, int(d["slot"]), inst)
    raise ValueError(f"unknown op {kind!r}")


def dump_log(ops: Iterable[Op], **tags) -> str:
    """One JSON object per line; extra keyword tags (e.g. example id) go on every line."""
    lines = []
    for op in ops:
        d = dict(tags)
        d.update(op.to_json())
        lines.append(json.dumps(d, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def load_log(text: str) -> list[Op]:
    return [op_from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


def schedule_outline(t: int) -> str:
    if t < 1:
        raise RangeError(f"outline step {t} < 1")
    if t == 1 or t % 3 == 2:
        return ADD_VERTEX
    if t % 3 == 0:
        return SELECT_VERTEX
    return ADD_EDGE


def schedule_fill(t: int, n: int) -> tuple[str, int]:
    """(operator, slot id) for fill step ``t`` of an ``n``-vertex graph."""
    if n < 1 or t < 1 or t > 2 * n - 1:
        raise RangeError(f"fill step {t} outside 1..{2 * n - 1}")
    if t <= n:
        return FILL_VERTEX, t - 1
    return FILL_EDGE, t - n - 1


def vertex_outline_step(vid: int) -> int:
    """Outline step at which vertex ``vid`` was added."""
    return 1 if vid == 0 else 3 * vid - 1


def edge_outline_step(eid: int) -> int:
    """Outline step at which edge ``eid`` was added."""
    return 3 * eid + 4


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationState:
    vertices: tuple[Vertex, ...] = ()
    edges: tuple[Edge, ...] = ()
    vertex_copies: tuple[tuple[int, int], ...] = ()
    edge_copies: tuple[tuple[int, int], ...] = ()
    t: int = 1
    phase: str = OUTLINING
    pending: Optional[int] = None
    selected: Optional[int] = None
    segment: int = 0
    fill_t: int = 1
    score: float = 0.0

    @property
    def n(self) -> int:
        return len(self.vertices)

    def next_kind(self) -> str:
        if self.phase == OUTLINING:
            return schedule_outline(self.t)
        if self.phase in (FILLING_VERTICES, FILLING_EDGES):
            return schedule_fill(self.fill_t, self.n)[0]
        return DONE

    def fill_slot(self) -> tuple[str, int]:
        if self.phase not in (FILLING_VERTICES, FILLING_EDGES):
            raise IllegalOp(f"no fill slot in phase {self.phase}")
        return schedule_fill(self.fill_t, self.n)

    def aqg(self) -> AbstractQueryGraph:
        return AbstractQueryGraph(
            tuple(Vertex(v.id, v.cls, None, v.segment) for v in self.vertices),
            tuple(Edge(e.id, e.head, e.tail, e.tag, None) for e in self.edges),
            self.vertex_copies,
            self.edge_copies,
        )

    def query_graph(self) -> QueryGraph:
        return QueryGraph(self.vertices, self.edges, self.vertex_copies, self.edge_copies)

    def with_score(self, score: float) -> "GenerationState":
        return replace(self, score=score)


def initial_state() -> GenerationState:
    return GenerationState()


def state_from_aqg(aqg: AbstractQueryGraph) -> GenerationState:
    """Filling-phase state for an existing AQG (e.g. a decoded outline)."""
    return GenerationState(
        tuple(Vertex(v.id, v.cls, None, v.segment) for v in aqg.vertices),
        tuple(Edge(e.id, e.head, e.tail, e.tag, None) for e in aqg.edges),
        aqg.vertex_copies,
        aqg.edge_copies,
        t=3 * len(aqg.vertices),
        phase=FILLING_VERTICES,
        segment=max((v.segment for v in aqg.vertices), default=0),
    )


# ---------------------------------------------------------------------------
# structural helpers
# ---------------------------------------------------------------------------


def _members(st: GenerationState, seg: int) -> list[int]:
    return [v.id for v in st.vertices if v.segment == seg]


def _closed(st: GenerationState, u: int) -> bool:
    """Agg tails take no further intra-segment edges."""
    return any(e.tag is EdgeTag.AGG and e.tail == u for e in st.edges)


def _seg_tags(st: GenerationState, seg: int) -> set:
    V = st.vertices
    return {e.tag for e in st.edges if V[e.head].segment == seg and V[e.tail].segment == seg}


def _seg_agg_tail(st: GenerationState, seg: int) -> Optional[int]:
    for e in st.edges:
        if e.tag is EdgeTag.AGG and st.vertices[e.tail].segment == seg:
            return e.tail
    return None


def _heads_rel(st: GenerationState, vid: int) -> bool:
    seg = st.vertices[vid].segment
    return any(
        e.tag is EdgeTag.REL and e.head == vid and st.vertices[e.tail].segment == seg for e in st.edges
    )


def _open_obligations(st: GenerationState) -> int:
    """Vertices still waiting for a relation: unbound variables and entity-headed Agg arguments."""
    ent = sum(
        1 for e in st.edges if e.tag is EdgeTag.AGG and st.vertices[e.head].cls is C.ENT and not _heads_rel(st, e.head)
    )
    if st.n <= 1:
        return ent
    return ent + sum(1 for v in st.vertices if v.cls in NON_INSTANCE and not is_bound(st, v.id))


def _obligation(st: GenerationState) -> bool:
    return _open_obligations(st) > 0


def end_legal(st: GenerationState) -> bool:
    if st.n == 0:
        return False
    if st.n == 1:
        return True
    return len(_members(st, st.segment)) >= 2 and not _obligation(st)


def edge_ok(st: GenerationState, u: int, p: int, ec: EdgeClass) -> bool:
    """Can an edge of class ``ec`` join selected ``u`` and pending ``p``?"""
    V = st.vertices
    U, P = V[u], V[p]
    if u >= p:
        return False
    forward = ec.direction is Direction.FORWARD
    head, tail = (U, P) if forward else (P, U)
    tag = ec.tag
    if U.segment != P.segment:
        if tag is not EdgeTag.CMP or U.cls not in NON_INSTANCE or P.cls not in NON_INSTANCE:
            return False
        if len(_members(st, P.segment)) != 1:
            # only the first vertex of a segment links back
            return False
        if U.segment == 0:
            return not _closed(st, u)
        agg_tail = _seg_agg_tail(st, U.segment)
        return agg_tail is None or agg_tail == u
    if _closed(st, u):
        return False
    if tag is EdgeTag.REL:
        return C.VAL not in (U.cls, P.cls) and head.cls is not C.TYPE
    if tag is EdgeTag.CMP:
        allowed = (C.ANS, C.VAR, C.VAL)
        return U.cls in allowed and P.cls in allowed and not (U.cls is C.VAL and P.cls is C.VAL)
    if tag is EdgeTag.ORD:
        if head.cls not in NON_INSTANCE or tail.cls is not C.VAL:
            return False
        return not (_seg_tags(st, P.segment) & {EdgeTag.AGG, EdgeTag.ORD})
    # Agg: backward onto the untouched first vertex of the segment
    if forward:
        return False
    seg = P.segment
    if u != min(_members(st, seg)):
        return False
    if any(e.head == u or e.tail == u for e in st.edges if V[e.head].segment == seg and V[e.tail].segment == seg):
        return False
    if _seg_tags(st, seg) & {EdgeTag.AGG, EdgeTag.ORD}:
        return False
    if P.cls is C.VAR:
        return True
    return P.cls is C.ENT and seg == 0


def _with_vertex(st: GenerationState, cls: VertexClass, delta: int, copy: Optional[int]) -> GenerationState:
    seg = st.segment + delta if st.n else 0
    vid = st.n
    copies = st.vertex_copies + ((vid, copy),) if copy is not None else st.vertex_copies
    return replace(
        st,
        vertices=st.vertices + (Vertex(vid, cls, None, seg),),
        vertex_copies=tuple(sorted(copies)),
        t=st.t + 1,
        pending=vid if st.n else None,
        selected=None,
        segment=seg,
    )


def _with_edge(st: GenerationState, ec: EdgeClass, copy: Optional[int]) -> GenerationState:
    u, p = st.selected, st.pending
    head, tail = (u, p) if ec.direction is Direction.FORWARD else (p, u)
    eid = len(st.edges)
    copies = st.edge_copies + ((eid, copy),) if copy is not None else st.edge_copies
    return replace(
        st,
        edges=st.edges + (Edge(eid, head, tail, ec.tag, None),),
        edge_copies=tuple(sorted(copies)),
        t=st.t + 1,
        pending=None,
        selected=None,
    )


def _edge_finishes(st: GenerationState, u: int, ec: EdgeClass) -> bool:
    if not edge_ok(st, u, st.pending, ec):
        return False
    after = _with_edge(replace(st, selected=u), ec, None)
    if st.n < MAX_VERTICES:
        # each further vertex settles at most one obligation
        return _open_obligations(after) <= MAX_VERTICES - st.n
    return end_legal(after)


def _connectable(st: GenerationState) -> bool:
    """Pending vertex has some legal (u, edge class) completing the cycle."""
    return any(_edge_finishes(st, u, ec) for u in range(st.pending) for ec in EDGE_CLASSES)


def vertex_copy_targets(st: GenerationState, cls: VertexClass, seg: int) -> list[int]:
    if cls not in COPYABLE_VERTEX:
        return []
    sources = dict(st.vertex_copies)
    used_here = {tgt for src, tgt in st.vertex_copies if st.vertices[src].segment == seg}
    return [
        w.id
        for w in st.vertices
        if w.cls is cls and w.segment != seg and w.id not in sources and w.id not in used_here
    ]


def edge_copy_targets(st: GenerationState, tag: EdgeTag) -> list[int]:
    if tag not in COPYABLE_EDGE:
        return []
    sources = dict(st.edge_copies)
    return [e.id for e in st.edges if e.tag is tag and e.id not in sources]


def _vertex_shape_ok(st: GenerationState, cls: VertexClass, delta: int) -> bool:
    n = st.n
    if n == 0:
        return cls is C.ANS and delta == 0
    if cls is C.ANS:
        return False
    if cls is C.END:
        return delta == 0 and end_legal(st)
    if n >= MAX_VERTICES:
        return False
    if delta == 1:
        return (
            n >= 2
            and cls is C.VAR
            and len(_members(st, st.segment)) >= 2
            and not _obligation(st)
            and n + 2 <= MAX_VERTICES
        )
    return True


def legal_add_vertex(st: GenerationState) -> list[tuple[VertexClass, int, Optional[int]]]:
    out = []
    for cls in OUTLINE_VERTEX_CLASSES:
        for delta in (0, 1):
            if not _vertex_shape_ok(st, cls, delta):
                continue
            if cls is C.END:
                out.append((cls, 0, None))
                continue
            tent = _with_vertex(st, cls, delta, None)
            if st.n and not _connectable(tent):
                continue
            out.append((cls, delta, None))
            for tgt in vertex_copy_targets(st, cls, tent.segment):
                out.append((cls, delta, tgt))
    return out


def legal_select(st: GenerationState) -> list[int]:
    return [u for u in range(st.pending) if any(_edge_finishes(st, u, ec) for ec in EDGE_CLASSES)]


def legal_add_edge(st: GenerationState) -> list[tuple[EdgeClass, Optional[int]]]:
    out = []
    for ec in EDGE_CLASSES:
        if _edge_finishes(st, st.selected, ec):
            out.append((ec, None))
            for tgt in edge_copy_targets(st, ec.tag):
                out.append((ec, tgt))
    return out


def legal_outline_args(st: GenerationState) -> list[OutlineOp]:
    if st.phase != OUTLINING:
        raise IllegalOp(f"outline arguments requested in phase {st.phase}")
    kind = schedule_outline(st.t)
    if kind == ADD_VERTEX:
        return [OutlineOp.add_vertex(c, d, k) for c, d, k in legal_add_vertex(st)]
    if kind == SELECT_VERTEX:
        return [OutlineOp.select_vertex(u) for u in legal_select(st)]
    return [OutlineOp.add_edge(ec, k) for ec, k in legal_add_edge(st)]


def apply_outline(st: GenerationState, op: OutlineOp, check: bool = True) -> GenerationState:
    if st.phase != OUTLINING:
        raise IllegalOp(f"outline op in phase {st.phase}")
    kind = schedule_outline(st.t)
    if op.kind != kind:
        raise IllegalOp(f"step {st.t} expects {kind}, got {op.kind}")
    if op.kind == ADD_VERTEX:
        if check and (op.cls, op.delta, op.copy) not in legal_add_vertex(st):
            raise IllegalOp(f"AddVertex{(op.cls.value, op.delta, op.copy)} is not legal at step {st.t}")
        if op.cls is C.END:
            return replace(st, t=st.t + 1, phase=FILLING_VERTICES, pending=None, selected=None, fill_t=1)
        return _with_vertex(st, op.cls, op.delta, op.copy)
    if op.kind == SELECT_VERTEX:
        if check and op.vertex not in legal_select(st):
            raise IllegalOp(f"SelectVertex({op.vertex}) is not legal at step {st.t}")
        return replace(st, selected=op.vertex, t=st.t + 1)
    if check and (op.cls, op.copy) not in legal_add_edge(st):
        raise IllegalOp(f"AddEdge({op.cls}, copy={op.copy}) is not legal at step {st.t}")
    return _with_edge(st, op.cls, op.copy)


# ---------------------------------------------------------------------------
# filling
# ---------------------------------------------------------------------------


def _root(copies: tuple[tuple[int, int], ...], x: int) -> int:
    return dict(copies).get(x, x)


_SLOT_KIND = {C.ENT: str, C.TYPE: str, C.VAL: Literal}


def check_fill_vertex(st: GenerationState, vid: int, inst) -> None:
    v = st.vertices[vid]
    if v.cls in NON_INSTANCE:
        if inst is not None:
            raise ClassMismatch(f"{v.cls.value} slot {vid} takes no instance")
        return
    if not isinstance(inst, _SLOT_KIND[v.cls]):
        raise ClassMismatch(f"{inst!r} cannot fill a {v.cls.value} slot")
    copies = dict(st.vertex_copies)
    if vid in copies:
        want = st.vertices[copies[vid]].instance
        if inst != want:
            raise CopyViolation(f"vertex {vid} copies vertex {copies[vid]} and must be {want!r}")
    root = _root(st.vertex_copies, vid)
    for w in st.vertices:
        if w.id != vid and w.cls is v.cls and w.instance == inst and _root(st.vertex_copies, w.id) != root:
            raise IllegalOp(f"{inst!r} already fills unlinked vertex {w.id}")
    for e in st.edges:
        if e.tag is EdgeTag.ORD and e.tail == vid:
            if inst.kind != "int" or int(inst.lexical) < 1:
                raise IllegalOp("an ordering limit must be a positive integer")


_INTERVAL_OPS = ("DURING", "OVERLAP")


def interval_status(g, vid: int) -> str:
    """'yes' if ``vid`` is the tail of a combined relation, 'maybe' if its only relation is still open."""
    v = g.vertices[vid]
    rels = [e for e in g.edges if e.tag is EdgeTag.REL and vid in (e.head, e.tail)]
    if any(e.instance is not None and COMBINED_SEP in e.instance and e.tail == vid for e in rels):
        return "yes"
    if v.cls is not C.VAR or len(rels) != 1 or rels[0].instance is not None or rels[0].tail != vid:
        return "no"
    for e in g.edges:
        if vid in (e.head, e.tail):
            if e.tag in (EdgeTag.ORD, EdgeTag.AGG):
                return "no"
            if e.tag is EdgeTag.CMP and e.instance is not None and e.instance not in _INTERVAL_OPS:
                return "no"
    return "maybe"


def _interval_demanded(g, vid: int) -> bool:
    """A variable on a filled DURING/OVERLAP edge has to be an interval."""
    if g.vertices[vid].cls is C.VAL:
        return False
    return any(e.tag is EdgeTag.CMP and e.instance in _INTERVAL_OPS and vid in (e.head, e.tail) for e in g.edges)


def check_interval_edge(g, e, inst) -> None:
    """Interval variables only meet their one combined relation and DURING/OVERLAP edges."""
    h, t = g.vertices[e.head], g.vertices[e.tail]
    if e.tag is EdgeTag.CMP:
        if inst in _INTERVAL_OPS:
            if interval_status(g, h.id) == "no":
                raise IllegalOp(f"{inst} must start at an interval variable")
            if t.cls is not C.VAL and interval_status(g, t.id) == "no":
                raise IllegalOp(f"{inst} must end at an interval variable or a value")
        elif "yes" in (interval_status(g, h.id), interval_status(g, t.id)):
            raise IllegalOp(f"{inst} cannot compare an interval")
    elif e.tag is EdgeTag.REL:
        if COMBINED_SEP in inst:
            if t.cls is not C.VAR:
                raise IllegalOp("combined interval relations must end at a Var vertex")
            for f in g.edges:
                if f.id == e.id or t.id not in (f.head, f.tail):
                    continue
                if f.tag is not EdgeTag.CMP or (f.instance is not None and f.instance not in _INTERVAL_OPS):
                    raise IllegalOp("an interval variable takes only its relation and DURING/OVERLAP edges")
            if _interval_demanded(g, h.id):
                raise IllegalOp("an interval variable cannot head a relation")
            if not any(
                f.tag is EdgeTag.CMP and (f.instance is None or f.instance in _INTERVAL_OPS)
                for f in g.edges
                if t.id in (f.head, f.tail)
            ):
                raise IllegalOp("an interval variable needs a DURING/OVERLAP edge")
        elif _interval_demanded(g, h.id) or _interval_demanded(g, t.id):
            raise IllegalOp("a DURING/OVERLAP variable needs a combined interval relation")


def check_fill_edge(st: GenerationState, eid: int, inst) -> None:
    e = st.edges[eid]
    h, t = st.vertices[e.head], st.vertices[e.tail]
    if e.tag in BUILTIN_INSTANCES:
        if inst not in BUILTIN_INSTANCES[e.tag]:
            raise ClassMismatch(f"{inst!r} is not a {e.tag.value} built-in")
        if e.tag is EdgeTag.CMP:
            check_interval_edge(st, e, inst)
        if e.tag is EdgeTag.AGG:
            if inst == "ASK":
                if t.cls is not C.ANS or not _heads_rel(st, h.id):
                    raise IllegalOp("ASK needs a relation subject aggregated into the answer")
            elif h.cls is not C.VAR:
                raise IllegalOp(f"{inst} needs a variable argument")
        return
    if not isinstance(inst, str) or any(inst in vals for vals in BUILTIN_INSTANCES.values()):
        raise ClassMismatch(f"{inst!r} cannot fill a relation slot")
    copies = dict(st.edge_copies)
    if eid in copies:
        want = st.edges[copies[eid]].instance
        if inst != want:
            raise CopyViolation(f"edge {eid} copies edge {copies[eid]} and must be {want!r}")
    root = _root(st.edge_copies, eid)
    for f in st.edges:
        if f.id != eid and f.tag is EdgeTag.REL and f.instance == inst and _root(st.edge_copies, f.id) != root:
            raise IllegalOp(f"{inst!r} already fills unlinked edge {f.id}")
    if (inst == TYPE_RELATION) != (t.cls is C.TYPE):
        raise IllegalOp(f"{TYPE_RELATION} is used exactly for edges into Type vertices")
    check_interval_edge(st, e, inst)


def fill_ok(st: GenerationState, inst) -> bool:
    kind, slot = st.fill_slot()
    try:
        if kind == FILL_VERTEX:
            check_fill_vertex(st, slot, inst)
        else:
            check_fill_edge(st, slot, inst)
    except IllegalOp:
        return False
    return True


def slot_class(st: GenerationState) -> Union[VertexClass, EdgeTag]:
    kind, slot = st.fill_slot()
    return st.vertices[slot].cls if kind == FILL_VERTEX else st.edges[slot].tag


def forced_instance(st: GenerationState):
    """Instance dictated by a copy link, or ``(False, None)`` when the slot is free."""
    kind, slot = st.fill_slot()
    if kind == FILL_VERTEX:
        v = st.vertices[slot]
        if v.cls in NON_INSTANCE:
            return True, None
        copies = dict(st.vertex_copies)
        if slot in copies:
            return True, st.vertices[copies[slot]].instance
        return False, None
    copies = dict(st.edge_copies)
    if slot in copies:
        return True, st.edges[copies[slot]].instance
    return False, None


def legal_fill_instances(st: GenerationState, candidates: Iterable) -> list:
    """Candidates (in given order) that may fill the current slot."""
    forced, inst = forced_instance(st)
    if forced:
        return [inst] if fill_ok(st, inst) else []
    seen, out = set(), []
    for c in candidates:
        if c in seen:
            continue
        seen.add(c)
        if fill_ok(st, c):
            out.append(c)
    return out


def apply_fill(st: GenerationState, op: FillOp, check: bool = True) -> GenerationState:
    kind, slot = st.fill_slot()
    if op.kind != kind or op.slot != slot:
        raise IllegalOp(f"fill step {st.fill_t} expects {kind}({slot}), got {op.kind}({op.slot})")
    if kind == FILL_VERTEX:
        if check:
            check_fill_vertex(st, slot, op.instance)
        v = st.vertices[slot]
        vertices = st.vertices[:slot] + (replace(v, instance=op.instance),) + st.vertices[slot + 1:]
        st = replace(st, vertices=vertices)
    else:
        if check:
            check_fill_edge(st, slot, op.instance)
        e = st.edges[slot]
        edges = st.edges[:slot] + (replace(e, instance=op.instance),) + st.edges[slot + 1:]
        st = replace(st, edges=edges)
    nxt = st.fill_t + 1
    if nxt > 2 * st.n - 1:
        return replace(st, fill_t=nxt, phase=DONE)
    return replace(st, fill_t=nxt, phase=FILLING_VERTICES if nxt <= st.n else FILLING_EDGES)


def apply(st: GenerationState, op: Op, check: bool = True) -> GenerationState:
    if isinstance(op, OutlineOp):
        return apply_outline(st, op, check)
    return apply_fill(st, op, check)


def run(ops: Iterable[Op], check: bool = True) -> GenerationState:
    st = initial_state()
    for op in ops:
        st = apply(st, op, check)
    return st
