"""Teacher-forcing signals from gold query graphs, and their replay.

The traversal is a depth-first walk from the answer vertex that finishes
one segment before opening the next: intra-segment children are visited
recursively, cross-segment links are queued and each opens a new segment.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .grammar import (
    FILL_EDGE,
    FILL_VERTEX,
    FillOp,
    IllegalOp,
    Op,
    OutlineOp,
    apply_fill,
    apply_outline,
    dump_log,
    initial_state,
)
from .graph import (
    COPYABLE_EDGE,
    COPYABLE_VERTEX,
    Direction,
    Edge,
    EdgeClass,
    EdgeTag,
    QueryGraph,
    ValidationError,
    VertexClass,
    validate,
)

TAG_RANK = {EdgeTag.REL: 0, EdgeTag.CMP: 1, EdgeTag.ORD: 2, EdgeTag.AGG: 3}


@dataclass
class SupervisionSequences:
    outline: list[OutlineOp] = field(default_factory=list)
    vertex_fill: list = field(default_factory=list)
    edge_fill: list = field(default_factory=list)

    def fill_ops(self) -> list[FillOp]:
        ops = [FillOp(FILL_VERTEX, i, inst) for i, inst in enumerate(self.vertex_fill)]
        ops += [FillOp(FILL_EDGE, i, inst) for i, inst in enumerate(self.edge_fill)]
        return ops

    def ops(self) -> list[Op]:
        return list(self.outline) + self.fill_ops()

    def to_log(self, example_id: Optional[str] = None) -> str:
        tags = {} if example_id is None else {"id": example_id}
        return dump_log(self.ops(), **tags)


def _child_key(v: int, e: Edge):
    return (TAG_RANK[e.tag], e.instance or "", 0 if e.head == v else 1, e.id)


def visit_order(g: QueryGraph) -> list[tuple[int, Optional[Edge]]]:
    """(vertex, edge from its parent) in generation order; the root has no edge."""
    ans = g.answer()
    adj: dict[int, list[Edge]] = {v.id: [] for v in g.vertices}
    for e in g.edges:
        adj[e.head].append(e)
        adj[e.tail].append(e)
    seen = {ans.id}
    order: list[tuple[int, Optional[Edge]]] = [(ans.id, None)]
    deferred: deque[tuple[int, Edge]] = deque()

    def walk(v: int) -> None:
        for e in sorted(adj[v], key=lambda e: _child_key(v, e)):
            w = e.other(v)
            if w in seen:
                continue
            if g.is_cross(e):
                deferred.append((v, e))
                continue
            seen.add(w)
            order.append((w, e))
            walk(w)

    walk(ans.id)
    while deferred:
        v, e = deferred.popleft()
        w = e.other(v)
        if w in seen:
            continue
        seen.add(w)
        order.append((w, e))
        walk(w)
    return order


def build_signals(g: QueryGraph) -> SupervisionSequences:
    report = validate(g)
    if not report.ok:
        raise ValidationError(report)
    order = visit_order(g)
    new_id = {old: i for i, (old, _) in enumerate(order)}
    V = g.vertices
    first_v: dict[tuple, int] = {}
    first_e: dict[tuple, int] = {}
    seq = SupervisionSequences()
    seg_of: dict[int, int] = {}
    current = 0
    edge_count = 0
    for old, e in order:
        v = V[old]
        if e is None:
            seq.outline.append(OutlineOp.add_vertex(v.cls, 0, None))
            seg_of[v.segment] = 0
        else:
            delta = 0
            if v.segment not in seg_of:
                current += 1
                seg_of[v.segment] = current
                delta = 1
            copy = None
            if v.cls in COPYABLE_VERTEX:
                key = (v.cls, v.instance)
                copy = first_v.get(key)
                first_v.setdefault(key, new_id[old])
            seq.outline.append(OutlineOp.add_vertex(v.cls, delta, copy))
            parent = e.other(old)
            seq.outline.append(OutlineOp.select_vertex(new_id[parent]))
            direction = Direction.FORWARD if e.head == parent else Direction.BACKWARD
            ecopy = None
            if e.tag in COPYABLE_EDGE:
                key = (e.tag, e.instance)
                ecopy = first_e.get(key)
                first_e.setdefault(key, edge_count)
            seq.outline.append(OutlineOp.add_edge(EdgeClass(e.tag, direction), ecopy))
            seq.edge_fill.append(e.instance)
            edge_count += 1
        if v.cls in COPYABLE_VERTEX and e is None:
            first_v.setdefault((v.cls, v.instance), new_id[old])
        seq.vertex_fill.append(v.instance)
    seq.outline.append(OutlineOp.add_vertex(VertexClass.END, 0, None))
    return seq


def replay(s: SupervisionSequences, check: bool = True) -> QueryGraph:
    """Run the sequences through the grammar; IllegalOp means a mask rejected a gold step."""
    if not s.outline:
        raise IllegalOp("empty outline sequence")
    st = initial_state()
    for op in s.outline:
        st = apply_outline(st, op, check)
    if st.phase == "Outlining":
        raise IllegalOp("outline sequence does not end with End")
    for op in s.fill_ops():
        st = apply_fill(st, op, check)
    if st.phase != "Done":
        raise IllegalOp("fill sequences are shorter than the graph")
    return st.query_graph()


__all__ = ["SupervisionSequences", "build_signals", "replay", "visit_order", "TAG_RANK"]
