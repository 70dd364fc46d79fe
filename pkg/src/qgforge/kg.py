"""In-memory triple store and an evaluator for the SPARQL subset.

Triple file format: one triple per line, ``subject predicate object [.]``.
IRIs may be bare or wrapped in ``<>``; literals are quoted with an optional
``^^kind`` suffix (int, dec, date, year, str) or written as bare numbers.
``#`` starts a comment.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .sparql.ast import (
    IRI,
    Aggregate,
    And,
    Block,
    Compare,
    Exists,
    Or,
    SparqlAst,
    Triple,
    Var,
    expr_vars,
    triple_vars,
)
from .terms import (
    COMBINED_SEP,
    TYPE_RELATION,
    EvalError,
    Interval,
    Literal,
    Term,
    TermError,
    compare,
    interval_partner,
    interval_relation,
    parse_literal,
)

__all__ = [
    "BudgetExceeded",
    "EvalError",
    "ParseError",
    "TripleStore",
    "answers",
    "ask",
    "select",
    "term_key",
]


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class BudgetExceeded(EvalError):
    """The per-query step budget ran out."""


_TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"(?:\^\^\S+)?|\S+')
_FAMILY_RANK = {"num": 0, "time": 1, "str": 2}


def term_key(term) -> tuple:
    """Total order over store terms: IRIs, then literals by family and value, then intervals."""
    if isinstance(term, str):
        return (0, term)
    if isinstance(term, Literal):
        return (1, _FAMILY_RANK[term.family], term.value, term.kind, term.lexical)
    if isinstance(term, Interval):
        return (2, term_key(term.start), term_key(term.end))
    raise TypeError(term)


def _iri(token: str) -> str:
    if token.startswith("<") and token.endswith(">"):
        return token[1:-1]
    return token


class TripleStore:
    """Immutable set of triples with (s,p), (p,o), (s,o), s, p, o indexes."""

    def __init__(self, triples: Iterable[tuple[str, str, Term]] = ()):
        base = set(triples)
        self._base = sorted(base, key=self._tkey)
        full = set(base) | self._combined(base)
        self.triples: tuple[tuple[str, str, Term], ...] = tuple(sorted(full, key=self._tkey))
        self._set = frozenset(self.triples)
        sp, po, so = defaultdict(list), defaultdict(list), defaultdict(list)
        s_, p_, o_ = defaultdict(list), defaultdict(list), defaultdict(list)
        for t in self.triples:
            s, p, o = t
            sp[(s, p)].append(t)
            po[(p, o)].append(t)
            so[(s, o)].append(t)
            s_[s].append(t)
            p_[p].append(t)
            o_[o].append(t)
        self._sp, self._po, self._so = dict(sp), dict(po), dict(so)
        self._s, self._p, self._o = dict(s_), dict(p_), dict(o_)

    @staticmethod
    def _tkey(t):
        return (t[0], t[1], term_key(t[2]))

    @staticmethod
    def _combined(triples: set) -> set:
        """Materialize ``(s, st$$$ed, [a, b])`` for every start/end relation pair."""
        by_sp = defaultdict(list)
        rels = set()
        for s, p, o in triples:
            if isinstance(o, Literal):
                by_sp[(s, p)].append(o)
                rels.add(p)
        out = set()
        for st in sorted(rels):
            pair = interval_partner(st)
            if pair is None or pair[0] != st or pair[1] not in rels:
                continue
            ed = pair[1]
            for (s, p), starts in by_sp.items():
                if p != st:
                    continue
                for a in starts:
                    for b in by_sp.get((s, ed), ()):
                        if a.family == b.family:
                            out.add((s, st + COMBINED_SEP + ed, Interval(a, b)))
        return out

    # -- construction --------------------------------------------------

    @classmethod
    def loads(cls, text: str) -> "TripleStore":
        triples = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            tokens = []
            for tok in _TOKEN.findall(line):
                if tok.startswith("#"):
                    break
                tokens.append(tok)
            if not tokens:
                continue
            if tokens[-1] == ".":
                tokens.pop()
            if len(tokens) != 3:
                raise ParseError(lineno, f"expected 3 fields, found {len(tokens)}")
            s, p, o = tokens
            if s.startswith('"') or parse_literal(s) is not None:
                raise ParseError(lineno, "subject must be an IRI")
            if p.startswith('"') or parse_literal(p) is not None:
                raise ParseError(lineno, "predicate must be an IRI")
            try:
                lit = parse_literal(o)
            except TermError as exc:
                raise ParseError(lineno, str(exc)) from None
            if lit is None and o.startswith('"'):
                raise ParseError(lineno, f"malformed literal {o}")
            if COMBINED_SEP in p:
                raise ParseError(lineno, "combined relations are derived, not loaded")
            triples.append((_iri(s), _iri(p), lit if lit is not None else _iri(o)))
        return cls(triples)

    @classmethod
    def load(cls, path) -> "TripleStore":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        """Loaded triples only; combined relations are re-derived on load."""
        out = []
        for s, p, o in self._base:
            obj = o.render() if isinstance(o, Literal) else f"<{o}>"
            out.append(f"<{s}> <{p}> {obj} .")
        return "".join(line + "\n" for line in out)

    # -- access --------------------------------------------------------

    def __len__(self) -> int:
        return len(self._base)

    def __contains__(self, triple) -> bool:
        return triple in self._set

    def match(self, s=None, p=None, o=None) -> list[tuple[str, str, Term]]:
        """Triples matching the given positions (``None`` = wildcard)."""
        if s is not None and p is not None and o is not None:
            return [(s, p, o)] if (s, p, o) in self._set else []
        if s is not None and p is not None:
            return self._sp.get((s, p), [])
        if p is not None and o is not None:
            return self._po.get((p, o), [])
        if s is not None and o is not None:
            return self._so.get((s, o), [])
        if s is not None:
            return self._s.get(s, [])
        if p is not None:
            return self._p.get(p, [])
        if o is not None:
            return self._o.get(o, [])
        return list(self.triples)

    def relations(self, include_combined: bool = True) -> list[str]:
        rels = sorted(self._p)
        if not include_combined:
            rels = [r for r in rels if COMBINED_SEP not in r]
        return rels

    def types(self) -> list[str]:
        return sorted({o for (_, _, o) in self._p.get(TYPE_RELATION, []) if isinstance(o, str)})

    def entities(self) -> list[str]:
        ents = {s for s, _, _ in self._base}
        ents |= {o for _, p, o in self._base if isinstance(o, str) and p != TYPE_RELATION}
        return sorted(ents)

    def stats(self) -> dict:
        return {
            "triples": len(self._base),
            "derived_interval_triples": len(self.triples) - len(self._base),
            "entities": len(self.entities()),
            "relations": len(self.relations(include_combined=False)),
            "combined_relations": len(self.relations()) - len(self.relations(include_combined=False)),
            "types": len(self.types()),
            "literals": len({o for _, _, o in self._base if isinstance(o, Literal)}),
        }


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class _Budget:
    limit: Optional[int]
    steps: int = 0

    def tick(self, n: int = 1) -> None:
        self.steps += n
        if self.limit is not None and self.steps > self.limit:
            raise BudgetExceeded(f"query exceeded {self.limit} evaluation steps")


def _value(node, binding: dict):
    """Ground term for an AST node, or None if it is an unbound variable."""
    if isinstance(node, Var):
        return binding.get(node.name)
    if isinstance(node, IRI):
        return node.id
    return node


def _bind(node, term, binding: dict, new: dict) -> bool:
    if isinstance(node, Var):
        cur = binding.get(node.name, new.get(node.name))
        if cur is None:
            new[node.name] = term
            return True
        return cur == term
    return True


@dataclass
class _Rows:
    """Materialized subquery result joined like a table."""

    names: tuple[str, ...]
    rows: list[tuple]
    vars: set = field(default_factory=set)

    def candidates(self, binding: dict) -> list[dict]:
        out = []
        for row in self.rows:
            ok = True
            for n, v in zip(self.names, row):
                cur = binding.get(n)
                if cur is not None and cur != v:
                    ok = False
                    break
            if ok:
                out.append(dict(zip(self.names, row)))
        return out


class _Evaluator:
    def __init__(self, store: TripleStore, budget: Optional[int], lenient: bool = False):
        self.store = store
        self.budget = _Budget(budget)
        self.lenient = lenient

    # pattern matching ---------------------------------------------------

    def triple_candidates(self, t: Triple, binding: dict) -> list[dict]:
        s, p, o = (_value(n, binding) for n in (t.s, t.p, t.o))
        if isinstance(s, Literal) or isinstance(p, Literal):
            return []
        out = []
        for ts, tp, to in self.store.match(s, p, o):
            new: dict = {}
            if _bind(t.s, ts, binding, new) and _bind(t.p, tp, binding, new) and _bind(t.o, to, binding, new):
                out.append(new)
        return out

    def check_filters(self, filters, binding: dict, pattern_vars: set, done: set) -> bool:
        for i, f in enumerate(filters):
            if i in done:
                continue
            need = _outer_vars(f, pattern_vars)
            if all(n in binding for n in need):
                done.add(i)
                try:
                    if not self.test(f, binding):
                        return False
                except BudgetExceeded:
                    raise
                except EvalError:
                    if not self.lenient:
                        raise
                    return False
        return True

    def solve(self, triples, tables, filters, binding: dict) -> Iterator[dict]:
        pattern_vars = set()
        for t in triples:
            pattern_vars |= triple_vars(t)
        for tab in tables:
            pattern_vars |= set(tab.names)
        pattern_vars |= set(binding)
        for f in filters:
            if isinstance(f, Compare):
                missing = expr_vars(f) - pattern_vars
                if missing:
                    raise EvalError(f"filter uses unbound variable ?{sorted(missing)[0]}")
        items = list(triples) + list(tables)
        done: set = set()
        if not self.check_filters(filters, binding, pattern_vars, done):
            return
        yield from self._search(items, filters, dict(binding), pattern_vars, done)

    def _search(self, items, filters, binding, pattern_vars, done) -> Iterator[dict]:
        if not items:
            yield binding
            return
        best_i, best = -1, None
        for i, item in enumerate(items):
            if isinstance(item, Triple):
                cands = self.triple_candidates(item, binding)
            else:
                cands = item.candidates(binding)
            if best is None or len(cands) < len(best):
                best_i, best = i, cands
                if not cands:
                    return
        rest = items[:best_i] + items[best_i + 1:]
        for new in best:
            self.budget.tick()
            b = dict(binding)
            b.update(new)
            d = set(done)
            if self.check_filters(filters, b, pattern_vars, d):
                yield from self._search(rest, filters, b, pattern_vars, d)

    # filters -------------------------------------------------------------

    def test(self, f, binding: dict) -> bool:
        if isinstance(f, Compare):
            left, right = _value(f.left, binding), _value(f.right, binding)
            if left is None or right is None:
                raise EvalError("comparison over an unbound variable")
            if f.op in ("DURING", "OVERLAP"):
                return interval_relation(f.op, left, right)
            return compare(f.op, left, right)
        if isinstance(f, And):
            return all(self.test(p, binding) for p in f.parts)
        if isinstance(f, Or):
            err = None
            for p in f.parts:
                try:
                    if self.test(p, binding):
                        return True
                except BudgetExceeded:
                    raise
                except EvalError as exc:
                    err = exc
            if err is not None:
                raise err
            return False
        if isinstance(f, Exists):
            found = next(iter(self.solve(f.group.triples, (), f.group.filters, binding)), None)
            return (found is not None) != f.negated
        raise EvalError(f"unsupported filter {f!r}")

    # blocks --------------------------------------------------------------

    def tables(self, block: Block) -> list[_Rows]:
        out = []
        for sq in block.subqueries:
            names = tuple(sq.projected_names())
            out.append(_Rows(names, self.block_rows(sq)))
        return out

    def solutions(self, block: Block) -> Iterator[dict]:
        return self.solve(block.triples, self.tables(block), block.filters, {})

    def block_rows(self, block: Block) -> list[tuple]:
        """Projected, deduplicated, ordered and limited rows of a SELECT block."""
        agg = block.aggregate()
        if agg is not None:
            return self.aggregate_rows(block, agg)
        names = block.projected_names()
        sols = list(self.solutions(block))
        rows = []
        for s in sols:
            try:
                rows.append((tuple(s[n] for n in names), s))
            except KeyError as exc:
                raise EvalError(f"projected variable ?{exc.args[0]} is unbound") from None
        if block.order is not None:
            key_name = block.order.var.name
            rows.sort(key=lambda r: tuple(term_key(x) for x in r[0]))
            for r in rows:
                if key_name not in r[1]:
                    raise EvalError(f"ORDER BY variable ?{key_name} is unbound")
            rows.sort(key=lambda r: term_key(r[1][key_name]), reverse=block.order.direction == "DESC")
        else:
            rows.sort(key=lambda r: tuple(term_key(x) for x in r[0]))
        seen, out = set(), []
        for proj, _ in rows:
            if proj not in seen:
                seen.add(proj)
                out.append(proj)
        if block.limit is not None:
            out = out[: block.limit]
        return out

    def aggregate_rows(self, block: Block, agg: Aggregate) -> list[tuple]:
        values = set()
        for s in self.solutions(block):
            if agg.var.name not in s:
                raise EvalError(f"aggregate over unbound ?{agg.var.name}")
            values.add(s[agg.var.name])
        if agg.func == "COUNT":
            return [(Literal.make(str(len(values)), "int"),)]
        if not values:
            return []
        lits = [v for v in values if isinstance(v, Literal)]
        if len(lits) != len(values) or len({v.family for v in lits}) != 1:
            raise EvalError(f"{agg.func} over non-comparable values")
        pick = max if agg.func == "MAX" else min
        best = pick(lits, key=lambda v: (v.value, v.kind, v.lexical))
        # ORDER BY / LIMIT on a single aggregate row change nothing
        return [(best,)]


def _outer_vars(f, pattern_vars: set) -> set:
    if isinstance(f, Exists):
        return expr_vars(f) & pattern_vars
    if isinstance(f, (And, Or)):
        out = set()
        for p in f.parts:
            out |= _outer_vars(p, pattern_vars)
        return out
    return expr_vars(f)


def ask(store: TripleStore, ast: SparqlAst, budget: Optional[int] = None, lenient: bool = False) -> bool:
    """True iff the main pattern has at least one solution.

    With ``lenient`` a filter that cannot be evaluated on a row (e.g. an
    ordering comparison between an IRI and a literal) rejects that row
    instead of failing the query.
    """
    ev = _Evaluator(store, budget, lenient)
    return next(iter(ev.solutions(ast.main)), None) is not None


def select(store: TripleStore, ast: SparqlAst, budget: Optional[int] = None) -> list[dict]:
    """Ordered distinct solutions, projected onto the main selection."""
    if ast.intent == "ASK":
        raise EvalError("select() needs a SELECT program")
    ev = _Evaluator(store, budget)
    names = ast.main.projected_names()
    return [dict(zip(names, row)) for row in ev.block_rows(ast.main)]


def answers(store: TripleStore, ast: SparqlAst, budget: Optional[int] = None) -> list:
    """Answer list: first projected column for SELECT, ``[True]``/``[False]`` for ASK."""
    if ast.intent == "ASK":
        return [ask(store, ast, budget)]
    ev = _Evaluator(store, budget)
    return [row[0] for row in ev.block_rows(ast.main)]

