"""SPARQL AST -> query graph."""

from __future__ import annotations

from typing import Optional

from ..graph import (
    EdgeTag,
    GraphBuilder,
    QueryGraph,
    ValidationError,
    VertexClass,
    validate,
)
from ..terms import TYPE_RELATION, Literal
from .ast import IRI, Aggregate, And, Block, Compare, Exists, Or, SparqlAst, Var
from .parser import UnsupportedFeature


class NonTreeError(ValueError):
    """The converted graph violates |V| = |E| + 1."""


class _Converter:
    def __init__(self):
        self.b = GraphBuilder()
        # per-segment term tables
        self.vars: dict[int, dict[str, int]] = {}
        self.terms: dict[int, dict[tuple, int]] = {}
        # names visible from the main block
        self.visible: dict[str, int] = {}
        self.fresh = 0

    def var(self, seg: int, name: str, cls: VertexClass = VertexClass.VAR) -> int:
        table = self.vars.setdefault(seg, {})
        if name not in table:
            table[name] = self.b.add_vertex(cls, None, seg)
        return table[name]

    def term(self, seg: int, cls: VertexClass, inst) -> int:
        table = self.terms.setdefault(seg, {})
        key = (cls, inst)
        if key not in table:
            table[key] = self.b.add_vertex(cls, inst, seg)
        return table[key]

    def hidden_var(self, seg: int) -> int:
        self.fresh += 1
        return self.var(seg, f" lit{self.fresh}")

    def node(self, seg: int, node, as_type: bool = False) -> int:
        if isinstance(node, Var):
            return self.var(seg, node.name)
        if isinstance(node, IRI):
            return self.term(seg, VertexClass.TYPE if as_type else VertexClass.ENT, node.id)
        raise UnsupportedFeature(f"unexpected term {node!r}")

    def triples(self, seg: int, block: Block) -> None:
        for t in block.triples:
            if isinstance(t.s, Literal):
                raise UnsupportedFeature("literal subjects are not supported")
            h = self.node(seg, t.s)
            rel = t.p.id if isinstance(t.p, IRI) else None
            if isinstance(t.o, Literal):
                # <s> r "lit"  ==>  <s> r ?v . FILTER(?v = "lit")
                v = self.hidden_var(seg)
                self.b.add_edge(h, v, EdgeTag.REL, rel)
                self.b.add_edge(v, self.term(seg, VertexClass.VAL, t.o), EdgeTag.CMP, "=")
                continue
            tail = self.node(seg, t.o, as_type=(rel == TYPE_RELATION))
            self.b.add_edge(h, tail, EdgeTag.REL, rel)

    def resolve(self, seg: int, node, scope: dict[str, int]) -> Optional[int]:
        if isinstance(node, Var):
            if node.name not in scope:
                raise UnsupportedFeature(f"filter references unbound variable ?{node.name}")
            return scope[node.name]
        if isinstance(node, IRI):
            raise UnsupportedFeature("comparisons against entities are not supported")
        return None

    def filters(self, seg: int, block: Block, scope: dict[str, int], modifiable: dict[int, bool]) -> None:
        for f in block.filters:
            if isinstance(f, (Or, And, Exists)):
                raise UnsupportedFeature("disjunctions and EXISTS must be rewritten before conversion")
            assert isinstance(f, Compare)
            left = self.resolve(seg, f.left, scope)
            right = self.resolve(seg, f.right, scope)
            if left is None and right is None:
                raise UnsupportedFeature("comparison between two constants")
            if left is None or right is None:
                var_id = right if left is None else left
                vseg = self.b.vertices[var_id].segment
                if vseg != seg and not modifiable.get(vseg, True):
                    raise UnsupportedFeature("value filter on a limited or aggregated subquery result")
                val = self.term(vseg, VertexClass.VAL, f.left if left is None else f.right)
                if left is None:
                    self.b.add_edge(val, right, EdgeTag.CMP, f.op)
                else:
                    self.b.add_edge(left, val, EdgeTag.CMP, f.op)
            else:
                self.b.add_edge(left, right, EdgeTag.CMP, f.op)

    def order(self, seg: int, block: Block, scope: dict[str, int]) -> None:
        if block.order is None:
            return
        name = block.order.var.name
        if name not in scope or self.b.vertices[scope[name]].segment != seg:
            raise UnsupportedFeature(f"ORDER BY variable ?{name} is not bound in its own block")
        if block.limit is None or block.limit < 1:
            raise UnsupportedFeature("ORDER BY needs a positive LIMIT")
        val = self.term(seg, VertexClass.VAL, Literal.make(str(block.limit), "int"))
        self.b.add_edge(scope[name], val, EdgeTag.ORD, block.order.direction)


def to_query_graph(ast: SparqlAst) -> QueryGraph:
    """Convert a rewritten AST into a query graph (segment 0 = main block)."""
    c = _Converter()
    main = ast.main
    agg = main.aggregate()
    if ast.intent == "ASK":
        ans = c.b.add_vertex(VertexClass.ANS, None, 0)
    else:
        if len(main.projection) != 1:
            raise UnsupportedFeature("the main query must select exactly one variable or aggregate")
        item = main.projection[0]
        name = item.alias.name if isinstance(item, Aggregate) else item.name
        ans = c.var(0, name, VertexClass.ANS)
        if isinstance(item, Aggregate) and item.alias.name in block_names(main):
            raise UnsupportedFeature("aggregate alias reused in the pattern")

    c.triples(0, main)
    c.visible = dict(c.vars.get(0, {}))

    modifiable: dict[int, bool] = {0: True}
    for k, sq in enumerate(main.subqueries, start=1):
        c.triples(k, sq)
        scope = dict(c.vars.get(k, {}))
        sq_agg = sq.aggregate()
        if sq_agg is not None:
            if sq_agg.var.name not in scope:
                raise UnsupportedFeature(f"aggregate over unbound ?{sq_agg.var.name}")
            tail = c.var(k, sq_agg.alias.name)
            c.b.add_edge(scope[sq_agg.var.name], tail, EdgeTag.AGG, sq_agg.func)
            scope[sq_agg.alias.name] = tail
        c.filters(k, sq, scope, {k: True})
        c.order(k, sq, scope)
        modifiable[k] = sq_agg is None and sq.order is None
        for name in sq.projected_names():
            if name not in scope:
                raise UnsupportedFeature(f"subquery selects unbound ?{name}")
            if name in c.visible:
                # shared name: join expressed as an equality between segments
                c.b.add_edge(c.visible[name], scope[name], EdgeTag.CMP, "=")
            else:
                c.visible[name] = scope[name]

    c.filters(0, main, c.visible, modifiable)
    c.order(0, main, c.visible)

    if ast.intent == "ASK":
        if not main.triples:
            raise UnsupportedFeature("ASK programs need at least one triple in the main block")
        first = main.triples[0].s
        head = c.vars[0][first.name] if isinstance(first, Var) else c.terms[0][(VertexClass.ENT, first.id)]
        c.b.add_edge(head, ans, EdgeTag.AGG, "ASK")
    elif agg is not None:
        if agg.var.name not in c.visible:
            raise UnsupportedFeature(f"aggregate over unbound ?{agg.var.name}")
        c.b.add_edge(c.visible[agg.var.name], ans, EdgeTag.AGG, agg.func)

    g = c.b.freeze_query()
    if len(g.vertices) != len(g.edges) + 1:
        raise NonTreeError(f"{len(g.vertices)} vertices but {len(g.edges)} edges")
    report = validate(g)
    if not report.ok:
        raise ValidationError(report)
    return g


def block_names(b: Block) -> set[str]:
    from .ast import block_vars

    names = block_vars(b)
    for item in b.projection:
        if isinstance(item, Aggregate):
            names.discard(item.alias.name)
    return names
