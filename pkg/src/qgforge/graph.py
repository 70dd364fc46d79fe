"""Query graphs, abstract query graphs (AQGs) and their structural checks.

A query graph is a tree-shaped DAG whose vertices hold entities, types,
values or variables and whose edges hold relations or built-in properties.
Replacing every instance with its class gives the AQG. Both share one
representation here; an AQG simply has no instances.
"""

from __future__ import annotations

import itertools
import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union

from .terms import COMBINED_SEP, TYPE_RELATION, Literal, parse_literal


class VertexClass(str, Enum):
    ANS = "Ans"
    VAR = "Var"
    ENT = "Ent"
    TYPE = "Type"
    VAL = "Val"
    END = "End"


class EdgeTag(str, Enum):
    REL = "Rel"
    ORD = "Ord"
    CMP = "Cmp"
    AGG = "Agg"


class Direction(str, Enum):
    FORWARD = "+"
    BACKWARD = "-"


@dataclass(frozen=True)
class EdgeClass:
    tag: EdgeTag
    direction: Direction

    def __str__(self) -> str:
        return f"{self.tag.value}{self.direction.value}"


VERTEX_CLASSES = (VertexClass.ANS, VertexClass.VAR, VertexClass.ENT, VertexClass.TYPE, VertexClass.VAL)
EDGE_TAGS = (EdgeTag.REL, EdgeTag.ORD, EdgeTag.CMP, EdgeTag.AGG)
EDGE_CLASSES = tuple(EdgeClass(t, d) for t in EDGE_TAGS for d in (Direction.FORWARD, Direction.BACKWARD))

ORD_INSTANCES = ("ASC", "DESC")
CMP_INSTANCES = ("=", "!=", ">", ">=", "<", "<=", "DURING", "OVERLAP")
AGG_INSTANCES = ("COUNT", "MAX", "MIN", "ASK")
BUILTIN_INSTANCES = {EdgeTag.ORD: ORD_INSTANCES, EdgeTag.CMP: CMP_INSTANCES, EdgeTag.AGG: AGG_INSTANCES}

# classes that hold instances and may be copy-linked
COPYABLE_VERTEX = frozenset({VertexClass.ENT, VertexClass.TYPE, VertexClass.VAL})
COPYABLE_EDGE = frozenset({EdgeTag.REL})
NON_INSTANCE = frozenset({VertexClass.ANS, VertexClass.VAR})

MAX_VERTICES = 15

VertexInstance = Union[str, Literal, None]


class ValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(str(v) for v in report.violations))


@dataclass(frozen=True)
class Vertex:
    id: int
    cls: VertexClass
    instance: VertexInstance = None
    segment: int = 0


@dataclass(frozen=True)
class Edge:
    id: int
    head: int
    tail: int
    tag: EdgeTag
    instance: Optional[str] = None

    @property
    def direction(self) -> Direction:
        # relative to insertion order: Forward when the earlier vertex is the head
        return Direction.FORWARD if self.head < self.tail else Direction.BACKWARD

    def other(self, v: int) -> int:
        return self.tail if v == self.head else self.head


@dataclass(frozen=True)
class _Graph:
    vertices: tuple[Vertex, ...] = ()
    edges: tuple[Edge, ...] = ()
    vertex_copies: tuple[tuple[int, int], ...] = ()
    edge_copies: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "vertex_copies", tuple(sorted(self.vertex_copies)))
        object.__setattr__(self, "edge_copies", tuple(sorted(self.edge_copies)))

    # -- queries ---------------------------------------------------------
    def vertex(self, vid: int) -> Vertex:
        return self.vertices[vid]

    def edge(self, eid: int) -> Edge:
        return self.edges[eid]

    def incident(self, vid: int) -> list[Edge]:
        return [e for e in self.edges if e.head == vid or e.tail == vid]

    def answer(self) -> Optional[Vertex]:
        for v in self.vertices:
            if v.cls is VertexClass.ANS:
                return v
        return None

    def segments(self) -> list[int]:
        return sorted({v.segment for v in self.vertices})

    def is_cross(self, e: Edge) -> bool:
        return self.vertices[e.head].segment != self.vertices[e.tail].segment

    def vertex_copy_map(self) -> dict[int, int]:
        return dict(self.vertex_copies)

    def edge_copy_map(self) -> dict[int, int]:
        return dict(self.edge_copies)

    # -- serialization ---------------------------------------------------
    def to_json(self) -> dict:
        return {
            "vertices": [
                {
                    "id": v.id,
                    "class": v.cls.value,
                    "instance": _instance_to_json(v.instance),
                    "segment": v.segment,
                }
                for v in self.vertices
            ],
            "edges": [
                {
                    "id": e.id,
                    "head": e.head,
                    "tail": e.tail,
                    "class": e.tag.value,
                    "instance": e.instance,
                    "direction": e.direction.value,
                }
                for e in self.edges
            ],
            "copies": {
                "vertices": {str(s): t for s, t in self.vertex_copies},
                "edges": {str(s): t for s, t in self.edge_copies},
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)

    @classmethod
    def from_json(cls, data: dict):
        vertices = []
        for i, item in enumerate(data["vertices"]):
            if item["id"] != i:
                raise ValueError("vertex ids must be dense and in insertion order")
            vc = VertexClass(item["class"])
            vertices.append(Vertex(i, vc, _instance_from_json(item["instance"], vc), int(item["segment"])))
        edges = []
        for i, item in enumerate(data["edges"]):
            if item["id"] != i:
                raise ValueError("edge ids must be dense and in insertion order")
            edges.append(Edge(i, int(item["head"]), int(item["tail"]), EdgeTag(item["class"]), item["instance"]))
        copies = data.get("copies", {})
        vcopies = tuple((int(s), int(t)) for s, t in copies.get("vertices", {}).items())
        ecopies = tuple((int(s), int(t)) for s, t in copies.get("edges", {}).items())
        return cls(tuple(vertices), tuple(edges), vcopies, ecopies)

    @classmethod
    def loads(cls, text: str):
        return cls.from_json(json.loads(text))


class QueryGraph(_Graph):
    """Instance-labelled graph (possibly partially filled during decoding)."""

    def is_filled(self) -> bool:
        return all(v.instance is not None for v in self.vertices if v.cls not in NON_INSTANCE) and all(
            e.instance is not None for e in self.edges
        )


class AbstractQueryGraph(_Graph):
    """Class-labelled graph; every vertex/edge is a slot."""


def _instance_to_json(inst: VertexInstance):
    if inst is None:
        return None
    if isinstance(inst, Literal):
        return inst.render()
    return inst


def _instance_from_json(raw, vc: VertexClass) -> VertexInstance:
    if raw is None:
        return None
    if vc is VertexClass.VAL:
        lit = parse_literal(raw)
        if lit is None:
            raise ValueError(f"bad value instance {raw!r}")
        return lit
    return raw


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------


class GraphBuilder:
    """Single-owner mutable helper; freeze() returns an immutable graph."""

    def __init__(self):
        self.vertices: list[Vertex] = []
        self.edges: list[Edge] = []
        self.vertex_copies: dict[int, int] = {}
        self.edge_copies: dict[int, int] = {}

    def add_vertex(self, cls: VertexClass, instance: VertexInstance = None, segment: int = 0) -> int:
        vid = len(self.vertices)
        self.vertices.append(Vertex(vid, cls, instance, segment))
        return vid

    def add_edge(self, head: int, tail: int, tag: EdgeTag, instance: Optional[str] = None) -> int:
        eid = len(self.edges)
        self.edges.append(Edge(eid, head, tail, tag, instance))
        return eid

    def freeze_query(self, derive: bool = True) -> QueryGraph:
        g = QueryGraph(tuple(self.vertices), tuple(self.edges),
                       tuple(self.vertex_copies.items()), tuple(self.edge_copies.items()))
        return with_derived_copies(g) if derive else g

    def freeze_abstract(self) -> AbstractQueryGraph:
        return AbstractQueryGraph(tuple(self.vertices), tuple(self.edges),
                                  tuple(self.vertex_copies.items()), tuple(self.edge_copies.items()))


def derive_copies(g: _Graph) -> tuple[dict[int, int], dict[int, int]]:
    """Copy links implied by shared instances: later occurrence -> first one."""
    first_v: dict[tuple, int] = {}
    vcopies: dict[int, int] = {}
    for v in g.vertices:
        if v.cls in COPYABLE_VERTEX and v.instance is not None:
            key = (v.cls, v.instance)
            if key in first_v:
                vcopies[v.id] = first_v[key]
            else:
                first_v[key] = v.id
    first_e: dict[tuple, int] = {}
    ecopies: dict[int, int] = {}
    for e in g.edges:
        if e.tag in COPYABLE_EDGE and e.instance is not None:
            key = (e.tag, e.instance)
            if key in first_e:
                ecopies[e.id] = first_e[key]
            else:
                first_e[key] = e.id
    return vcopies, ecopies


def with_derived_copies(g: QueryGraph) -> QueryGraph:
    vc, ec = derive_copies(g)
    return QueryGraph(g.vertices, g.edges, tuple(vc.items()), tuple(ec.items()))


# ---------------------------------------------------------------------------
# abstraction
# ---------------------------------------------------------------------------


def abstract(g: QueryGraph) -> AbstractQueryGraph:
    """Replace every instance with its class slot (the mapping F)."""
    report = validate(g)
    if not report.ok:
        raise ValidationError(report)
    if g.is_filled():
        vc, ec = derive_copies(g)
    else:
        vc, ec = g.vertex_copy_map(), g.edge_copy_map()
    return AbstractQueryGraph(
        tuple(Vertex(v.id, v.cls, None, v.segment) for v in g.vertices),
        tuple(Edge(e.id, e.head, e.tail, e.tag, None) for e in g.edges),
        tuple(vc.items()),
        tuple(ec.items()),
    )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, message: str) -> None:
        self.violations.append(Violation(code, message))

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.violations)

    def __str__(self) -> str:
        return "valid" if self.ok else "\n".join(str(v) for v in self.violations)


def _components(nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> int:
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        if a in parent and b in parent:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
    return len({find(n) for n in parent})


def _has_directed_cycle(n: int, edges: list[Edge]) -> bool:
    out = defaultdict(list)
    for e in edges:
        out[e.head].append(e.tail)
    state = [0] * n
    for start in range(n):
        if state[start]:
            continue
        stack = [(start, iter(out[start]))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                return True
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(out[nxt])))
    return False


def validate(g: _Graph) -> ValidationReport:
    """Check every structural invariant; an empty report means valid."""
    r = ValidationReport()
    V, E = g.vertices, g.edges
    n = len(V)
    if n == 0:
        r.add("empty", "graph has no vertices")
        return r
    for i, v in enumerate(V):
        if v.id != i:
            r.add("ids", f"vertex at position {i} has id {v.id}")
    for i, e in enumerate(E):
        if e.id != i:
            r.add("ids", f"edge at position {i} has id {e.id}")
        if not (0 <= e.head < n and 0 <= e.tail < n):
            r.add("dangling", f"edge {i} references a missing vertex")
            return r
        if e.head == e.tail:
            r.add("self-loop", f"edge {i} is a self-loop")
    if r.violations:
        return r

    if any(v.cls is VertexClass.END for v in V):
        r.add("end-class", "End is a stop signal and cannot be stored")
    answers = [v for v in V if v.cls is VertexClass.ANS]
    if len(answers) != 1:
        r.add("single-answer", f"expected exactly one Ans vertex, found {len(answers)}")
    if n > MAX_VERTICES:
        r.add("size", f"{n} vertices exceed the cap of {MAX_VERTICES}")
    if n != len(E) + 1:
        r.add("tree-size", f"|V| = |E| + 1 violated ({n} vertices, {len(E)} edges)")
    if _components(range(n), ((e.head, e.tail) for e in E)) != 1:
        r.add("weakly-connected", "graph is not weakly connected")
    pairs = [frozenset((e.head, e.tail)) for e in E]
    if len(set(pairs)) != len(pairs):
        r.add("multi-edge", "two edges join the same vertex pair")
    if _has_directed_cycle(n, list(E)):
        r.add("acyclic", "graph has a directed cycle")

    by_seg: dict[int, list[int]] = defaultdict(list)
    for v in V:
        if v.segment < 0:
            r.add("segment", f"vertex {v.id} has a negative segment")
        by_seg[v.segment].append(v.id)
    if 0 not in by_seg:
        r.add("segment-0", "segment 0 is empty")
    for a in answers:
        if a.segment != 0:
            r.add("answer-segment", "the Ans vertex must be in segment 0")
    for s, members in by_seg.items():
        intra = [(e.head, e.tail) for e in E if V[e.head].segment == s and V[e.tail].segment == s]
        if _components(members, intra) != 1:
            r.add("segment-connected", f"segment {s} is not internally connected")
        if n > 1 and len(members) < 2:
            r.add("segment-size", f"segment {s} has a single vertex")

    agg_per_seg: dict[int, int] = defaultdict(int)
    ord_per_seg: dict[int, int] = defaultdict(int)
    for e in E:
        h, t = V[e.head], V[e.tail]
        if h.segment != t.segment:
            if e.tag is not EdgeTag.CMP:
                r.add("cross-segment", f"edge {e.id} crosses segments but is {e.tag.value}")
            elif h.cls not in NON_INSTANCE or t.cls not in NON_INSTANCE:
                r.add("cross-segment", f"cross-segment edge {e.id} must join variables")
        _check_endpoints(e, h, t, r)
        if e.tag is EdgeTag.AGG:
            agg_per_seg[t.segment] += 1
        if e.tag is EdgeTag.ORD:
            ord_per_seg[h.segment] += 1
    for s in set(agg_per_seg) | set(ord_per_seg):
        if agg_per_seg[s] > 1:
            r.add("segment-agg", f"segment {s} has more than one Agg edge")
        if ord_per_seg[s] > 1:
            r.add("segment-ord", f"segment {s} has more than one Ord edge")
        if agg_per_seg[s] and ord_per_seg[s]:
            r.add("segment-agg-ord", f"segment {s} mixes Agg and Ord edges")
    if n > 1:
        for v in V:
            if v.cls in NON_INSTANCE and not is_bound(g, v.id):
                r.add("unbound-variable", f"variable {v.id} is neither a relation endpoint nor an aggregate result")
    _check_agg_tails(g, r)
    _check_copies(g, r)
    if isinstance(g, QueryGraph):
        _check_instances(g, r)
    return r


def _check_endpoints(e: Edge, h: Vertex, t: Vertex, r: ValidationReport) -> None:
    C = VertexClass
    if e.tag is EdgeTag.REL:
        if C.VAL in (h.cls, t.cls):
            r.add("edge-endpoints", f"Rel edge {e.id} touches a Val vertex")
        if h.cls is C.TYPE:
            r.add("edge-endpoints", f"Rel edge {e.id} leaves a Type vertex")
    elif e.tag is EdgeTag.CMP:
        allowed = {C.ANS, C.VAR, C.VAL}
        if h.cls not in allowed or t.cls not in allowed:
            r.add("edge-endpoints", f"Cmp edge {e.id} joins {h.cls.value} and {t.cls.value}")
        elif h.cls is C.VAL and t.cls is C.VAL:
            r.add("edge-endpoints", f"Cmp edge {e.id} joins two values")
    elif e.tag is EdgeTag.ORD:
        if h.cls not in NON_INSTANCE or t.cls is not C.VAL:
            r.add("edge-endpoints", f"Ord edge {e.id} must run from a variable to a value")
    elif e.tag is EdgeTag.AGG:
        if h.cls not in (C.VAR, C.ENT) or t.cls not in NON_INSTANCE:
            r.add("edge-endpoints", f"Agg edge {e.id} must run from Var/Ent into Ans/Var")


def heads_relation(g: _Graph, vid: int) -> bool:
    """True when ``vid`` is the subject of a Rel edge inside its own segment."""
    seg = g.vertices[vid].segment
    return any(
        e.tag is EdgeTag.REL and e.head == vid and g.vertices[e.tail].segment == seg for e in g.edges
    )


def is_bound(g, vid: int) -> bool:
    """A variable needs a triple pattern in its own segment, or must be an aggregate result."""
    V = g.vertices
    seg = V[vid].segment
    for e in g.edges:
        if e.tag is EdgeTag.REL and vid in (e.head, e.tail) and V[e.head].segment == V[e.tail].segment == seg:
            return True
        if e.tag is EdgeTag.AGG and e.tail == vid:
            return True
    return False


def _check_agg_tails(g: _Graph, r: ValidationReport) -> None:
    V, E = g.vertices, g.edges
    for e in E:
        if e.tag is not EdgeTag.AGG:
            continue
        tail = V[e.tail]
        if V[e.head].cls is VertexClass.ENT:
            # only ASK can aggregate an entity; its head leads the pattern
            if tail.segment != 0 or not heads_relation(g, e.head):
                r.add("agg-ent-head", f"entity-headed Agg edge {e.id} must sit in segment 0 on a relation subject")
        others = [x for x in g.incident(tail.id) if x.id != e.id]
        if tail.segment == 0:
            if tail.cls is not VertexClass.ANS:
                r.add("agg-tail", "in segment 0 an Agg edge must end at the Ans vertex")
            if others:
                r.add("agg-tail", "an aggregated answer cannot carry other edges")
        else:
            if any(not g.is_cross(x) for x in others):
                r.add("agg-tail", f"aggregate result {tail.id} carries intra-segment edges")
            for x in E:
                if g.is_cross(x):
                    for end in (x.head, x.tail):
                        if V[end].segment == tail.segment and end != tail.id:
                            r.add("agg-tail", f"segment {tail.segment} links out through a non-aggregate variable")


def _check_copies(g: _Graph, r: ValidationReport) -> None:
    V, E = g.vertices, g.edges
    vmap = g.vertex_copy_map()
    for src, tgt in g.vertex_copies:
        if not (0 <= src < len(V) and 0 <= tgt < len(V)):
            r.add("copy", f"vertex copy {src}->{tgt} out of range")
            continue
        if tgt >= src:
            r.add("copy", f"vertex copy target {tgt} does not precede {src}")
        if V[src].cls is not V[tgt].cls or V[src].cls not in COPYABLE_VERTEX:
            r.add("copy", f"vertex copy {src}->{tgt} joins mismatched or non-instance classes")
        if V[src].segment == V[tgt].segment:
            r.add("copy", f"vertex copy {src}->{tgt} stays within one segment")
        if tgt in vmap:
            r.add("copy", f"vertex copy target {tgt} is itself a copy")
    seen = set()
    for src, tgt in g.vertex_copies:
        key = (tgt, V[src].segment) if src < len(V) else None
        if key in seen:
            r.add("copy", f"two copies of vertex {tgt} in one segment")
        seen.add(key)
    emap = g.edge_copy_map()
    for src, tgt in g.edge_copies:
        if not (0 <= src < len(E) and 0 <= tgt < len(E)):
            r.add("copy", f"edge copy {src}->{tgt} out of range")
            continue
        if tgt >= src:
            r.add("copy", f"edge copy target {tgt} does not precede {src}")
        if E[src].tag is not E[tgt].tag or E[src].tag not in COPYABLE_EDGE:
            r.add("copy", f"edge copy {src}->{tgt} joins mismatched or non-relation edges")
        if tgt in emap:
            r.add("copy", f"edge copy target {tgt} is itself a copy")


def _check_instances(g: QueryGraph, r: ValidationReport) -> None:
    V, E = g.vertices, g.edges
    C = VertexClass
    seen: dict[tuple, int] = {}
    for v in V:
        if v.cls in NON_INSTANCE:
            if v.instance is not None:
                r.add("instance", f"variable vertex {v.id} carries an instance")
            continue
        if v.instance is None:
            continue
        if v.cls is C.VAL and not isinstance(v.instance, Literal):
            r.add("instance", f"value vertex {v.id} holds a non-literal")
        if v.cls in (C.ENT, C.TYPE) and not isinstance(v.instance, str):
            r.add("instance", f"vertex {v.id} must hold an identifier")
        key = (v.cls, v.instance, v.segment)
        if key in seen:
            r.add("duplicate-term", f"vertices {seen[key]} and {v.id} repeat a term within segment {v.segment}")
        seen[key] = v.id
    for e in E:
        if e.instance is None:
            continue
        h, t = V[e.head], V[e.tail]
        if e.tag in BUILTIN_INSTANCES:
            if e.instance not in BUILTIN_INSTANCES[e.tag]:
                r.add("instance", f"edge {e.id}: {e.instance!r} is not a {e.tag.value} built-in")
                continue
        elif e.instance in CMP_INSTANCES + ORD_INSTANCES + AGG_INSTANCES:
            r.add("instance", f"relation edge {e.id} holds a built-in keyword")
        if e.tag is EdgeTag.ORD and isinstance(t.instance, Literal):
            if t.instance.kind != "int" or int(t.instance.lexical) < 1:
                r.add("instance", f"Ord edge {e.id} needs a positive integer limit")
        if e.tag is EdgeTag.AGG:
            if e.instance == "ASK":
                if t.cls is not C.ANS:
                    r.add("instance", "ASK must aggregate into the answer")
                if not heads_relation(g, h.id):
                    r.add("instance", "the ASK argument must be the subject of a relation")
            elif h.cls is not C.VAR:
                r.add("instance", f"{e.instance} needs a variable argument")
        if e.tag is EdgeTag.CMP:
            ivl = [_is_interval(g, x.id) for x in (h, t)]
            if e.instance in ("DURING", "OVERLAP"):
                if not ivl[0] or not (ivl[1] or t.cls is C.VAL):
                    r.add("interval", f"{e.instance} edge {e.id} must join an interval to an interval or value")
            elif any(ivl):
                r.add("interval", f"{e.instance} edge {e.id} compares an interval variable")
        if e.tag is EdgeTag.REL:
            if t.cls is C.TYPE and e.instance != TYPE_RELATION:
                r.add("instance", f"edge {e.id} into a Type vertex must be {TYPE_RELATION}")
            if e.instance == TYPE_RELATION and t.cls is not C.TYPE:
                r.add("instance", f"{TYPE_RELATION} edge {e.id} must end at a Type vertex")
            if COMBINED_SEP in e.instance:
                if t.cls is not C.VAR:
                    r.add("interval", f"combined relation edge {e.id} must end at a Var vertex")
                for f in g.incident(t.id):
                    if f.id != e.id and f.tag is not EdgeTag.CMP:
                        r.add("interval", f"interval variable {t.id} carries a {f.tag.value} edge")
                if _is_interval(g, h.id):
                    r.add("interval", f"interval variable {h.id} heads a relation")
                if not any(f.tag is EdgeTag.CMP and f.instance in ("DURING", "OVERLAP") for f in g.incident(t.id)):
                    r.add("interval", f"interval variable {t.id} has no DURING/OVERLAP edge")


def _is_interval(g: _Graph, vid: int) -> bool:
    return any(
        e.tag is EdgeTag.REL and e.tail == vid and e.instance is not None and COMBINED_SEP in e.instance
        for e in g.edges
    )


def assert_valid(g: _Graph) -> None:
    report = validate(g)
    if not report.ok:
        raise ValidationError(report)


# ---------------------------------------------------------------------------
# canonical form
# ---------------------------------------------------------------------------


def _vertex_label(v: Vertex) -> str:
    inst = "" if v.instance is None else (v.instance.render() if isinstance(v.instance, Literal) else v.instance)
    return f"{v.cls.value}|{inst}|{'0' if v.segment == 0 else '*'}"


def _tree_code(g: _Graph, vtag: dict[int, str], etag: dict[int, str]) -> str:
    root = g.answer()
    if root is None:
        raise ValueError("canonical form needs an Ans vertex")
    adj: dict[int, list[Edge]] = defaultdict(list)
    for e in g.edges:
        adj[e.head].append(e)
        adj[e.tail].append(e)

    def code(v: int, parent_edge: Optional[int]) -> str:
        parts = []
        for e in adj[v]:
            if e.id == parent_edge:
                continue
            child = e.other(v)
            orient = "v" if e.head == v else "^"
            cross = "x" if g.is_cross(e) else "-"
            inst = e.instance or ""
            parts.append(f"[{e.tag.value}{orient}{cross}{inst}{etag.get(e.id, '')}]{code(child, e.id)}")
        parts.sort()
        return "(" + _vertex_label(g.vertices[v]) + vtag.get(v, "") + "".join(parts) + ")"

    return code(root.id, None)


def _copy_classes(pairs: tuple[tuple[int, int], ...]) -> list[list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for src, tgt in pairs:
        groups[tgt].append(src)
    return [sorted([tgt] + srcs) for tgt, srcs in sorted(groups.items())]


def canonical_form(g: _Graph) -> str:
    """Isomorphism-invariant string; relabels ids and non-zero segments.

    Trees are canonised bottom-up from the unique Ans vertex. Copy-link
    classes are named by trying every naming among classes that look alike,
    keeping the lexicographically smallest code.
    """
    if len(g.edges) + 1 != len(g.vertices) or g.answer() is None:
        raise ValueError("canonical form is defined for tree-shaped graphs with an Ans vertex")
    vclasses = _copy_classes(g.vertex_copies)
    eclasses = _copy_classes(g.edge_copies)
    base = _tree_code(g, {}, {})
    if not vclasses and not eclasses:
        return base
    if isinstance(g, QueryGraph) and g.is_filled():
        vc, ec = derive_copies(g)
        if set(vc.items()) == set(g.vertex_copies) and set(ec.items()) == set(g.edge_copies):
            # links follow from the instances already in the code
            return base

    def groups_by_signature(classes, label_of):
        sig = defaultdict(list)
        for idx, members in enumerate(classes):
            sig[tuple(sorted(label_of(m) for m in members))].append(idx)
        return [idxs for _, idxs in sorted(sig.items())]

    def vsig(m):
        return _vertex_label(g.vertices[m])

    def esig(m):
        return g.edges[m].tag.value

    vgroups = groups_by_signature(vclasses, vsig)
    egroups = groups_by_signature(eclasses, esig)

    def namings(groups):
        per_group = [itertools.permutations(idxs) for idxs in groups]
        for combo in itertools.product(*per_group):
            order = [i for perm in combo for i in perm]
            yield order

    best = None
    for vorder in namings(vgroups):
        vtag = {}
        for name, idx in enumerate(vorder):
            for m in vclasses[idx]:
                vtag[m] = f"#v{name}"
        for eorder in namings(egroups):
            etag = {}
            for name, idx in enumerate(eorder):
                for m in eclasses[idx]:
                    etag[m] = f"#e{name}"
            c = _tree_code(g, vtag, etag)
            if best is None or c < best:
                best = c
    return best


def graphs_equal(a: _Graph, b: _Graph) -> bool:
    try:
        return canonical_form(a) == canonical_form(b)
    except ValueError:
        return False


def aqg_equal(a: AbstractQueryGraph, b: AbstractQueryGraph) -> bool:
    """Structural equality up to relabeling of ids and non-zero segments."""
    return graphs_equal(a, b)
