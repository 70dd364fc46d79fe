"""Immutable AST for the supported SPARQL subset, plus a deterministic renderer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..terms import Literal


@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __str__(self) -> str:
        return "?" + self.name


@dataclass(frozen=True, order=True)
class IRI:
    id: str

    def __str__(self) -> str:
        return f"<{self.id}>"


Node = Union[Var, IRI, Literal]


@dataclass(frozen=True)
class Triple:
    s: Node
    p: Union[Var, IRI]
    o: Node


@dataclass(frozen=True)
class Compare:
    """Binary comparison; DURING and OVERLAP are interval predicates."""

    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Group:
    triples: tuple[Triple, ...] = ()
    filters: tuple["Expr", ...] = ()


@dataclass(frozen=True)
class Exists:
    group: Group
    negated: bool = False


@dataclass(frozen=True)
class Or:
    parts: tuple["Expr", ...]


@dataclass(frozen=True)
class And:
    parts: tuple["Expr", ...]


Expr = Union[Compare, Exists, Or, And]


@dataclass(frozen=True)
class Aggregate:
    func: str  # COUNT, MAX, MIN
    var: Var
    alias: Var


@dataclass(frozen=True)
class OrderBy:
    direction: str  # ASC or DESC
    var: Var


@dataclass(frozen=True)
class Block:
    projection: tuple[Union[Var, Aggregate], ...] = ()
    distinct: bool = False
    triples: tuple[Triple, ...] = ()
    filters: tuple[Expr, ...] = ()
    subqueries: tuple["Block", ...] = ()
    order: Optional[OrderBy] = None
    limit: Optional[int] = None

    def aggregate(self) -> Optional[Aggregate]:
        for item in self.projection:
            if isinstance(item, Aggregate):
                return item
        return None

    def projected_names(self) -> list[str]:
        out = []
        for item in self.projection:
            out.append(item.alias.name if isinstance(item, Aggregate) else item.name)
        return out


@dataclass(frozen=True)
class SparqlAst:
    intent: str  # SELECT or ASK
    main: Block
    prefixes: tuple[tuple[str, str], ...] = field(default=())

    @property
    def subqueries(self) -> tuple[Block, ...]:
        return self.main.subqueries


COMPARISON_OPS = ("=", "!=", ">", ">=", "<", "<=")
INTERVAL_OPS = ("DURING", "OVERLAP")
FLIPPED = {"=": "=", "!=": "!=", ">": "<", ">=": "<=", "<": ">", "<=": ">="}


# ---------------------------------------------------------------------------
# variable helpers
# ---------------------------------------------------------------------------


def node_vars(node) -> set[str]:
    return {node.name} if isinstance(node, Var) else set()


def expr_vars(expr: Expr) -> set[str]:
    if isinstance(expr, Compare):
        return node_vars(expr.left) | node_vars(expr.right)
    if isinstance(expr, (Or, And)):
        out: set[str] = set()
        for part in expr.parts:
            out |= expr_vars(part)
        return out
    if isinstance(expr, Exists):
        return group_vars(expr.group)
    raise TypeError(expr)


def triple_vars(t: Triple) -> set[str]:
    return node_vars(t.s) | node_vars(t.p) | node_vars(t.o)


def group_vars(g: Group) -> set[str]:
    out: set[str] = set()
    for t in g.triples:
        out |= triple_vars(t)
    for f in g.filters:
        out |= expr_vars(f)
    return out


def block_vars(b: Block, include_subqueries: bool = False) -> set[str]:
    out = group_vars(Group(b.triples, b.filters))
    for item in b.projection:
        if isinstance(item, Aggregate):
            out |= {item.var.name, item.alias.name}
        else:
            out.add(item.name)
    if b.order:
        out.add(b.order.var.name)
    if include_subqueries:
        for sq in b.subqueries:
            out |= block_vars(sq, True)
    return out


def rename_node(node, mapping: dict[str, str]):
    if isinstance(node, Var) and node.name in mapping:
        return Var(mapping[node.name])
    return node


def rename_triple(t: Triple, mapping: dict[str, str]) -> Triple:
    return Triple(rename_node(t.s, mapping), rename_node(t.p, mapping), rename_node(t.o, mapping))


def rename_expr(expr: Expr, mapping: dict[str, str]) -> Expr:
    if isinstance(expr, Compare):
        return Compare(expr.op, rename_node(expr.left, mapping), rename_node(expr.right, mapping))
    if isinstance(expr, Or):
        return Or(tuple(rename_expr(p, mapping) for p in expr.parts))
    if isinstance(expr, And):
        return And(tuple(rename_expr(p, mapping) for p in expr.parts))
    if isinstance(expr, Exists):
        g = expr.group
        return Exists(
            Group(tuple(rename_triple(t, mapping) for t in g.triples), tuple(rename_expr(f, mapping) for f in g.filters)),
            expr.negated,
        )
    raise TypeError(expr)


def fresh_name(base: str, taken: set[str]) -> str:
    if base not in taken:
        return base
    i = 1
    while f"{base}_{i}" in taken:
        i += 1
    return f"{base}_{i}"


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_node(node) -> str:
    if isinstance(node, (Var, IRI)):
        return str(node)
    return node.render()


def render_expr(expr: Expr, indent: str = "") -> str:
    if isinstance(expr, Compare):
        if expr.op in INTERVAL_OPS:
            return f"{expr.op}({render_node(expr.left)}, {render_node(expr.right)})"
        return f"{render_node(expr.left)} {expr.op} {render_node(expr.right)}"
    if isinstance(expr, Or):
        return " || ".join(_wrap(p, indent) for p in expr.parts)
    if isinstance(expr, And):
        return " && ".join(_wrap(p, indent) for p in expr.parts)
    if isinstance(expr, Exists):
        body = _render_group_body(expr.group, indent + "  ")
        kw = "NOT EXISTS" if expr.negated else "EXISTS"
        return f"{kw} {{\n{body}{indent}}}"
    raise TypeError(expr)


def _wrap(expr: Expr, indent: str) -> str:
    text = render_expr(expr, indent)
    return f"({text})" if isinstance(expr, (Or, And)) else text


def _render_triple(t: Triple) -> str:
    return f"{render_node(t.s)} {render_node(t.p)} {render_node(t.o)} ."


def _render_group_body(g: Group, indent: str) -> str:
    lines = [indent + _render_triple(t) for t in g.triples]
    lines += [f"{indent}FILTER({render_expr(f, indent)})" for f in g.filters]
    return "".join(line + "\n" for line in lines)


def _render_projection(b: Block) -> str:
    items = []
    for item in b.projection:
        if isinstance(item, Aggregate):
            items.append(f"({item.func}({item.var}) AS {item.alias})")
        else:
            items.append(str(item))
    head = "SELECT DISTINCT " if b.distinct else "SELECT "
    return head + " ".join(items)


def _render_modifiers(b: Block) -> str:
    out = ""
    if b.order is not None:
        out += f" ORDER BY {b.order.direction}({b.order.var})"
    if b.limit is not None:
        out += f" LIMIT {b.limit}"
    return out


def _render_block(b: Block, indent: str, head: str) -> str:
    inner = indent + "  "
    body = "".join(inner + _render_triple(t) + "\n" for t in b.triples)
    for sq in b.subqueries:
        body += f"{inner}{{ {_render_block(sq, inner, _render_projection(sq))} }}\n"
    body += "".join(f"{inner}FILTER({render_expr(f, inner)})\n" for f in b.filters)
    return f"{head} WHERE {{\n{body}{indent}}}{_render_modifiers(b)}"


def render(ast: SparqlAst) -> str:
    """Render an AST to text that parses back to the same AST."""
    prefix = "".join(f"PREFIX {p}: <{iri}>\n" for p, iri in ast.prefixes)
    if ast.intent == "ASK":
        return prefix + _render_block(Block(triples=ast.main.triples, filters=ast.main.filters,
                                            subqueries=ast.main.subqueries), "", "ASK")
    return prefix + _render_block(ast.main, "", _render_projection(ast.main))
