"""AST rewrites that bring programs into tree-shaped form.

* ``combine_intervals`` folds start/end relation pairs into one combined
  relation and replaces the endpoint comparisons with DURING / OVERLAP.
* ``merge_x_intention`` inlines plain subqueries that select the answer.
* ``strip_exists`` reduces ``EXISTS {P . C} || NOT EXISTS {P}`` to ``P . C``.

All three are idempotent and return new ASTs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from ..terms import COMBINED_SEP, Literal, interval_partner
from .ast import (
    IRI,
    Aggregate,
    Block,
    Compare,
    Exists,
    Group,
    Or,
    SparqlAst,
    Triple,
    Var,
    block_vars,
    expr_vars,
    fresh_name,
    rename_expr,
    rename_triple,
    triple_vars,
)


class RewriteError(ValueError):
    pass


def _blocks(ast: SparqlAst) -> list[Block]:
    return [ast.main, *ast.main.subqueries]


def _rebuild(ast: SparqlAst, blocks: list[Block]) -> SparqlAst:
    main = replace(blocks[0], subqueries=tuple(blocks[1:]))
    return replace(ast, main=main)


# ---------------------------------------------------------------------------
# time intervals
# ---------------------------------------------------------------------------


@dataclass
class _Candidate:
    block: int
    start_idx: int
    end_idx: int
    subject: object
    start_rel: str
    end_rel: str
    start_var: str
    end_var: str

    @property
    def combined_name(self) -> str:
        return f"{self.start_var}__{self.end_var}"


_Endpoint = Union[tuple[int, str], tuple[str, Literal]]


def _find_candidates(blocks: list[Block]) -> list[_Candidate]:
    out = []
    for bi, b in enumerate(blocks):
        used: set[int] = set()
        for i, t in enumerate(b.triples):
            if i in used or not isinstance(t.p, IRI) or COMBINED_SEP in t.p.id or not isinstance(t.o, Var):
                continue
            pair = interval_partner(t.p.id)
            if pair is None or pair[0] != t.p.id:
                continue
            for j, u in enumerate(b.triples):
                if j in used or j == i:
                    continue
                if isinstance(u.p, IRI) and u.p.id == pair[1] and u.s == t.s and isinstance(u.o, Var) and u.o != t.o:
                    out.append(_Candidate(bi, i, j, t.s, pair[0], pair[1], t.o.name, u.o.name))
                    used.update((i, j))
                    break
    return out


def _normalize(c: Compare, owner) -> Optional[tuple[_Endpoint, _Endpoint]]:
    """Return (a, b) meaning a <= b, or None for operators that never match."""
    left, right = owner(c.left), owner(c.right)
    if c.op == "<=":
        return left, right
    if c.op == ">=":
        return right, left
    return None


def combine_intervals(ast: SparqlAst) -> SparqlAst:
    blocks = _blocks(ast)
    cands = _find_candidates(blocks)
    if not cands:
        return ast

    def resolve(block_idx: int, name: str) -> Optional[int]:
        # same block first; the main block also sees subquery selections
        for ci, c in enumerate(cands):
            if c.block == block_idx and name in (c.start_var, c.end_var):
                return ci
        if block_idx == 0:
            for ci, c in enumerate(cands):
                if c.block > 0 and name in blocks[c.block].projected_names() and name in (c.start_var, c.end_var):
                    return ci
        return None

    # group top-level endpoint comparisons by the pair of intervals they relate
    groups: dict[tuple, list[tuple[int, int, Compare]]] = {}
    order: list[tuple] = []
    for bi, b in enumerate(blocks):
        for fi, f in enumerate(b.filters):
            if not isinstance(f, Compare) or f.op not in ("=", "!=", ">", ">=", "<", "<="):
                continue
            owners = []
            for node in (f.left, f.right):
                if isinstance(node, Var):
                    owners.append(resolve(bi, node.name))
                elif isinstance(node, Literal):
                    owners.append(("lit", node))
                else:
                    owners.append(None)
            a, b2 = owners
            if a is None or b2 is None or a == b2:
                continue
            if not isinstance(a, int) and not isinstance(b2, int):
                continue
            key = tuple(sorted((a, b2), key=repr))
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append((bi, fi, f))

    def endpoint(block_idx: int, node) -> _Endpoint:
        if isinstance(node, Literal):
            return ("lit", node)
        ci = resolve(block_idx, node.name)
        side = "st" if node.name == cands[ci].start_var else "ed"
        return (ci, side)

    replacements: dict[tuple[int, int], Optional[Compare]] = {}
    combined: set[int] = set()
    for key in order:
        members = groups[key]
        atoms = []
        for bi, fi, f in members:
            atoms.append(_normalize(f, lambda n, bi=bi: endpoint(bi, n)))
        covered = {a for pair in atoms if pair for a in pair}
        touches_both = any(
            isinstance(k, int) and (k, "st") in covered and (k, "ed") in covered for k in key
        )
        if len(members) < 2 and not touches_both:
            continue
        first_bi, _, first = members[0]
        lead = first.left if isinstance(first.left, Var) else first.right
        p1 = resolve(first_bi, lead.name)
        p2 = key[1] if key[0] == p1 else key[0]
        atom_set = set(atoms) if None not in atoms else None
        match = _match_interval(atom_set, p1, p2) if atom_set is not None and len(atoms) == 2 else None
        if match is None:
            raise RewriteError(
                "interval comparisons match neither DURING nor OVERLAP: "
                + ", ".join(f"{f.left} {f.op} {f.right}" for _, _, f in members)
            )
        op, head, tail = match
        head_var = Var(cands[head].combined_name)
        tail_node = tail[1] if isinstance(tail, tuple) else Var(cands[tail].combined_name)
        # the new predicate replaces the first comparison, the others vanish
        replacements[(first_bi, members[0][1])] = Compare(op, head_var, tail_node)
        for bi, fi, _ in members[1:]:
            replacements[(bi, fi)] = None
        combined.update(k for k in key if isinstance(k, int))

    if not combined:
        return ast

    new_blocks = []
    for bi, b in enumerate(blocks):
        filters = []
        for fi, f in enumerate(b.filters):
            if (bi, fi) in replacements:
                if replacements[(bi, fi)] is not None:
                    filters.append(replacements[(bi, fi)])
            else:
                filters.append(f)
        triples = list(b.triples)
        drop = set()
        rename: dict[str, str] = {}
        for ci in sorted(combined):
            c = cands[ci]
            if c.block != bi:
                continue
            triples[c.start_idx] = Triple(c.subject, IRI(f"{c.start_rel}{COMBINED_SEP}{c.end_rel}"), Var(c.combined_name))
            drop.add(c.end_idx)
            rename[c.start_var] = c.combined_name
            rename[c.end_var] = c.combined_name
        triples = [t for i, t in enumerate(triples) if i not in drop]
        projection = []
        for item in b.projection:
            if isinstance(item, Var) and item.name in rename:
                item = Var(rename[item.name])
                if item in projection:
                    continue
            projection.append(item)
        new_blocks.append(replace(b, triples=tuple(triples), filters=tuple(filters), projection=tuple(projection)))

    # the raw endpoint variables must be gone, otherwise the cycle survives
    gone = set()
    for ci in combined:
        gone |= {cands[ci].start_var, cands[ci].end_var}
    for b in new_blocks:
        leftovers = block_vars(b) & gone
        if leftovers:
            raise RewriteError(f"interval endpoints still used elsewhere: {sorted(leftovers)}")
    return _rebuild(ast, new_blocks)


def _match_interval(atoms: set, p1, p2) -> Optional[tuple[str, object, object]]:
    def s(p):
        return p if isinstance(p, tuple) else (p, "st")

    def e(p):
        return p if isinstance(p, tuple) else (p, "ed")

    def during(a, b):
        return {(s(b), s(a)), (e(a), e(b))}

    def overlap(a, b):
        return {(s(a), e(b)), (s(b), e(a))}

    if atoms == during(p1, p2):
        return "DURING", p1, p2
    if isinstance(p2, int) and atoms == during(p2, p1):
        return "DURING", p2, p1
    if atoms == overlap(p1, p2):
        return "OVERLAP", p1, p2
    return None


# ---------------------------------------------------------------------------
# subqueries selecting the answer
# ---------------------------------------------------------------------------


def _answer_names(main: Block) -> set[str]:
    names = set()
    for item in main.projection:
        names.add(item.var.name if isinstance(item, Aggregate) else item.name)
    return names


def merge_x_intention(ast: SparqlAst) -> SparqlAst:
    main = ast.main
    answers = _answer_names(main)
    if not answers or not main.subqueries:
        return ast
    keep: list[Block] = []
    triples = list(main.triples)
    filters = list(main.filters)
    taken = block_vars(main, include_subqueries=True)
    for sq in main.subqueries:
        plain = sq.order is None and sq.limit is None and sq.aggregate() is None
        if not plain or not (answers & set(sq.projected_names())):
            keep.append(sq)
            continue
        projected = set(sq.projected_names())
        local = block_vars(sq) - projected
        mapping = {}
        for name in sorted(local):
            new = fresh_name(name, taken)
            taken.add(new)
            mapping[name] = new
        triples.extend(rename_triple(t, mapping) for t in sq.triples)
        filters.extend(rename_expr(f, mapping) for f in sq.filters)
    if len(keep) == len(main.subqueries):
        return ast
    new_main = replace(main, triples=tuple(triples), filters=tuple(filters), subqueries=tuple(keep))
    return replace(ast, main=new_main)


# ---------------------------------------------------------------------------
# EXISTS guards
# ---------------------------------------------------------------------------


def _align(p_prime: tuple[Triple, ...], p: tuple[Triple, ...], outer: set[str]) -> Optional[dict[str, str]]:
    """Match two patterns up to renaming of their local variables."""
    if len(p_prime) != len(p):
        return None
    mapping: dict[str, str] = {}
    for a, b in zip(p_prime, p):
        for x, y in ((a.s, b.s), (a.p, b.p), (a.o, b.o)):
            if isinstance(x, Var) and isinstance(y, Var):
                if x.name in outer or y.name in outer:
                    if x != y:
                        return None
                elif mapping.setdefault(x.name, y.name) != y.name:
                    return None
            elif x != y:
                return None
    return mapping


def _strip_one(f, outer: set[str], taken: set[str]):
    if isinstance(f, Exists):
        raise RewriteError("a bare EXISTS filter has no constraint-only form")
    if not isinstance(f, Or):
        return None
    if not any(isinstance(p, Exists) for p in f.parts):
        return None
    if len(f.parts) != 2:
        raise RewriteError("EXISTS guard must be EXISTS{P . C} || NOT EXISTS{P}")
    pos = [p for p in f.parts if isinstance(p, Exists) and not p.negated]
    neg = [p for p in f.parts if isinstance(p, Exists) and p.negated]
    if len(pos) != 1 or len(neg) != 1:
        raise RewriteError("EXISTS guard must be EXISTS{P . C} || NOT EXISTS{P}")
    body, guard = pos[0].group, neg[0].group
    if guard.filters or not body.filters:
        raise RewriteError("EXISTS guard must put the constraint inside the positive branch")
    if any(not isinstance(c, Compare) for c in body.filters):
        raise RewriteError("EXISTS constraint must be a comparison")
    if _align(body.triples, guard.triples, outer) is None:
        raise RewriteError("EXISTS and NOT EXISTS patterns differ")
    local = set()
    for t in body.triples:
        local |= triple_vars(t)
    local -= outer
    mapping = {}
    for name in sorted(local):
        new = fresh_name(name, taken)
        taken.add(new)
        mapping[name] = new
    lifted = [rename_triple(t, mapping) for t in body.triples]
    constraint = [rename_expr(c, mapping) for c in body.filters]
    return lifted, constraint


def strip_exists(ast: SparqlAst) -> SparqlAst:
    blocks = _blocks(ast)
    new_blocks = []
    changed = False
    for b in blocks:
        outer = set()
        for t in b.triples:
            outer |= triple_vars(t)
        for sq in b.subqueries:
            outer |= set(sq.projected_names())
        for item in b.projection:
            outer |= {item.var.name, item.alias.name} if isinstance(item, Aggregate) else {item.name}
        taken = block_vars(b, include_subqueries=True)
        triples = list(b.triples)
        filters = []
        for f in b.filters:
            res = _strip_one(f, outer, taken)
            if res is None:
                filters.append(f)
                continue
            lifted, constraint = res
            triples.extend(lifted)
            filters.extend(constraint)
            changed = True
        new_blocks.append(replace(b, triples=tuple(triples), filters=tuple(filters)))
    return _rebuild(ast, new_blocks) if changed else ast


def preprocess(ast: SparqlAst) -> SparqlAst:
    """All rewrites in the order they are meant to run."""
    return merge_x_intention(combine_intervals(strip_exists(ast)))


__all__ = ["combine_intervals", "merge_x_intention", "strip_exists", "preprocess", "RewriteError", "Group"]
