"""Recursive-descent parser for the SPARQL subset.

Grammar (EBNF, keywords case-insensitive)::

    query      := prefix* (select | ask)
    prefix     := "PREFIX" PNAME_NS IRIREF
    select     := "SELECT" "DISTINCT"? item+ "WHERE"? group modifiers
    ask        := "ASK" "WHERE"? group
    item       := VAR | "(" AGG "(" "DISTINCT"? VAR ")" "AS" VAR ")"
    group      := "{" (triples | filter | "{" select "}")* "}"
    triples    := node verb node ("," node)* (";" verb node ("," node)*)* "."?
    filter     := "FILTER" ("(" expr ")" | "NOT"? "EXISTS" group)
    expr       := conj ("||" conj)*
    conj       := atom ("&&" atom)*
    atom       := "(" expr ")" | "NOT"? "EXISTS" group
                | ("DURING" | "OVERLAP") "(" term "," term ")" | term CMP term
    modifiers  := ("ORDER" "BY" ("ASC" | "DESC") "(" VAR ")" "LIMIT" INT)?

IRIs are opaque identifiers; prefixed names resolve to their local part
(``rdf:type`` and ``a`` both resolve to ``rdf:type``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..terms import TYPE_RELATION, Literal, TermError, parse_literal
from .ast import (
    COMPARISON_OPS,
    IRI,
    Aggregate,
    And,
    Block,
    Compare,
    Exists,
    Group,
    Or,
    OrderBy,
    SparqlAst,
    Triple,
    Var,
)


class SparqlSyntaxError(SyntaxError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column
        self.lineno = line
        self.offset = column


class UnsupportedFeature(ValueError):
    """A valid SPARQL construct outside the supported subset."""


UNSUPPORTED = {
    "UNION", "OPTIONAL", "GROUP", "HAVING", "MINUS", "BIND", "VALUES", "SERVICE", "GRAPH",
    "OFFSET", "CONSTRUCT", "DESCRIBE", "FROM", "SUM", "AVG", "SAMPLE", "GROUP_CONCAT",
    "REGEX", "STR", "LANG", "LANGMATCHES", "IN", "BOUND", "IF", "COALESCE", "CONTAINS",
}
AGG_FUNCS = ("COUNT", "MAX", "MIN")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<iri><(?![=\s])[^<>\s"{}|^`\\?&()]*>)
  | (?P<string>"(?:[^"\\\n]|\\.)*"(?:\^\^(?:<[^<>\s]*>|[A-Za-z][\w-]*:[\w-]+|[A-Za-z]+)|@[A-Za-z-]+)?)
  | (?P<number>[+-]?\d+(?:\.\d+)?(?![\w]))
  | (?P<var>[?$][A-Za-z_]\w*)
  | (?P<pname>[A-Za-z][\w-]*:(?:[\w$-]|\.(?=[\w$-]))*)
  | (?P<op>\|\||&&|!=|<=|>=|=|<|>|!)
  | (?P<punct>[{}().,;*])
  | (?P<word>[A-Za-z_]\w*)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    column: int

    def upper(self) -> str:
        return self.text.upper()


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise SparqlSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.prefixes: dict[str, str] = {}

    # -- token helpers ---------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        return SparqlSyntaxError(message, tok.line, tok.column)

    def advance(self) -> Token:
        tok = self.tok
        self.i += 1
        return tok

    def is_word(self, *words: str) -> bool:
        return self.tok.kind == "word" and self.tok.upper() in words

    def is_punct(self, ch: str) -> bool:
        return self.tok.kind == "punct" and self.tok.text == ch

    def expect_punct(self, ch: str) -> Token:
        if not self.is_punct(ch):
            raise self.error(f"expected {ch!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expect_word(self, word: str) -> Token:
        if not self.is_word(word):
            raise self.error(f"expected {word}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def check_unsupported(self) -> None:
        if self.tok.kind == "word" and self.tok.upper() in UNSUPPORTED:
            raise UnsupportedFeature(
                f"{self.tok.upper()} is outside the supported subset (line {self.tok.line}, column {self.tok.column})"
            )

    # -- query -----------------------------------------------------------
    def parse(self) -> SparqlAst:
        while self.is_word("PREFIX"):
            self.advance()
            name = self.advance()
            if name.kind != "pname" or not name.text.endswith(":"):
                raise self.error("expected a prefix name such as 'ns:'", name)
            iri = self.advance()
            if iri.kind != "iri":
                raise self.error("expected an IRI after the prefix name", iri)
            self.prefixes[name.text[:-1]] = iri.text[1:-1]
        self.check_unsupported()
        if self.is_word("ASK"):
            self.advance()
            if self.is_word("WHERE"):
                self.advance()
            triples, filters, subqueries = self.group(allow_subqueries=True)
            if self.tok.kind != "eof":
                self.check_unsupported()
                raise self.error("unexpected text after ASK body")
            main = Block(triples=triples, filters=filters, subqueries=subqueries)
            intent = "ASK"
        elif self.is_word("SELECT"):
            main = self.select(allow_subqueries=True)
            if self.tok.kind != "eof":
                self.check_unsupported()
                raise self.error(f"unexpected {self.tok.text!r} after query")
            intent = "SELECT"
        else:
            raise self.error("expected SELECT or ASK")
        return SparqlAst(intent, main, tuple(sorted(self.prefixes.items())))

    def select(self, allow_subqueries: bool) -> Block:
        self.expect_word("SELECT")
        distinct = False
        if self.is_word("DISTINCT", "REDUCED"):
            distinct = self.advance().upper() == "DISTINCT"
        items = []
        while not (self.is_word("WHERE") or self.is_punct("{")):
            if self.tok.kind == "var":
                items.append(Var(self.advance().text[1:]))
            elif self.is_punct("("):
                items.append(self.aggregate_item())
            elif self.is_punct("*"):
                raise UnsupportedFeature("SELECT * is outside the supported subset")
            else:
                self.check_unsupported()
                raise self.error("expected a variable or an aggregate in the selection")
        if not items:
            raise self.error("empty selection")
        if sum(isinstance(x, Aggregate) for x in items) > 1:
            raise UnsupportedFeature("at most one aggregate per selection is supported")
        if any(isinstance(x, Aggregate) for x in items) and len(items) > 1:
            raise UnsupportedFeature("mixing aggregates with plain variables needs GROUP BY")
        if self.is_word("WHERE"):
            self.advance()
        triples, filters, subqueries = self.group(allow_subqueries)
        order, limit = self.modifiers()
        return Block(tuple(items), distinct, triples, filters, subqueries, order, limit)

    def aggregate_item(self) -> Aggregate:
        self.expect_punct("(")
        self.check_unsupported()
        if not self.is_word(*AGG_FUNCS):
            raise self.error("expected COUNT, MAX or MIN")
        func = self.advance().upper()
        self.expect_punct("(")
        if self.is_word("DISTINCT"):
            self.advance()
        if self.tok.kind != "var":
            raise self.error("aggregates take a single variable")
        var = Var(self.advance().text[1:])
        self.expect_punct(")")
        self.expect_word("AS")
        if self.tok.kind != "var":
            raise self.error("expected the aggregate alias variable")
        alias = Var(self.advance().text[1:])
        self.expect_punct(")")
        return Aggregate(func, var, alias)

    def modifiers(self) -> tuple[Optional[OrderBy], Optional[int]]:
        order = None
        limit = None
        if self.is_word("ORDER"):
            self.advance()
            self.expect_word("BY")
            if not self.is_word("ASC", "DESC"):
                raise self.error("expected ASC(?v) or DESC(?v)")
            direction = self.advance().upper()
            self.expect_punct("(")
            if self.tok.kind != "var":
                raise self.error("ORDER BY takes a single variable")
            order = OrderBy(direction, Var(self.advance().text[1:]))
            self.expect_punct(")")
        self.check_unsupported()
        if self.is_word("LIMIT"):
            lim_tok = self.advance()
            if self.tok.kind != "number" or not self.tok.text.isdigit():
                raise self.error("LIMIT takes a non-negative integer")
            limit = int(self.advance().text)
            if order is None:
                raise UnsupportedFeature(
                    f"LIMIT without ORDER BY is outside the subset (line {lim_tok.line}, column {lim_tok.column})"
                )
        if order is not None and limit is None:
            raise UnsupportedFeature("ORDER BY must be followed by LIMIT")
        self.check_unsupported()
        return order, limit

    # -- groups ----------------------------------------------------------
    def group(self, allow_subqueries: bool):
        self.expect_punct("{")
        triples: list[Triple] = []
        filters: list = []
        subqueries: list[Block] = []
        while not self.is_punct("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated group; expected '}'")
            self.check_unsupported()
            if self.is_punct("{"):
                if self.peek().kind == "word" and self.peek().upper() == "SELECT":
                    if not allow_subqueries:
                        raise UnsupportedFeature("subqueries nest at most one level deep")
                    self.advance()
                    subqueries.append(self.select(allow_subqueries=False))
                    self.expect_punct("}")
                else:
                    raise UnsupportedFeature("nested group patterns are outside the supported subset")
            elif self.is_word("FILTER"):
                self.advance()
                filters.extend(self.filter_body())
            elif self.is_punct("."):
                self.advance()
            else:
                triples.extend(self.triples_block())
        self.expect_punct("}")
        return tuple(triples), tuple(filters), tuple(subqueries)

    def triples_block(self) -> list[Triple]:
        subject = self.node(position="subject")
        out = []
        while True:
            verb = self.verb()
            while True:
                out.append(Triple(subject, verb, self.node(position="object")))
                if self.is_punct(","):
                    self.advance()
                    continue
                break
            if self.is_punct(";"):
                self.advance()
                if self.is_punct(".") or self.is_punct("}"):
                    break
                continue
            break
        if self.is_punct("."):
            self.advance()
        elif not (self.is_punct("}") or self.is_word("FILTER") or self.is_punct("{")):
            self.check_unsupported()
            raise self.error("expected '.' after a triple")
        return out

    def verb(self):
        tok = self.tok
        if tok.kind == "word" and tok.text == "a":
            self.advance()
            return IRI(TYPE_RELATION)
        if tok.kind == "var":
            self.advance()
            return Var(tok.text[1:])
        if tok.kind in ("iri", "pname"):
            return self.iri()
        self.check_unsupported()
        raise self.error(f"expected a predicate, found {tok.text or 'end of input'!r}")

    def iri(self) -> IRI:
        tok = self.advance()
        if tok.kind == "iri":
            return IRI(tok.text[1:-1])
        prefix, _, local = tok.text.partition(":")
        if prefix == "rdf" and local == "type":
            return IRI(TYPE_RELATION)
        if prefix not in self.prefixes:
            raise SparqlSyntaxError(f"undeclared prefix {prefix!r}", tok.line, tok.column)
        return IRI(local)

    def node(self, position: str):
        tok = self.tok
        if tok.kind == "var":
            self.advance()
            return Var(tok.text[1:])
        if tok.kind in ("iri", "pname"):
            return self.iri()
        if tok.kind in ("string", "number"):
            self.advance()
            try:
                lit = parse_literal(tok.text)
            except TermError as exc:
                raise SparqlSyntaxError(str(exc), tok.line, tok.column) from None
            if lit is None:
                raise SparqlSyntaxError(f"bad literal {tok.text!r}", tok.line, tok.column)
            if position == "subject":
                raise SparqlSyntaxError("a literal cannot be a triple subject", tok.line, tok.column)
            return lit
        self.check_unsupported()
        raise self.error(f"expected a term, found {tok.text or 'end of input'!r}")

    # -- filters ---------------------------------------------------------
    def filter_body(self) -> list:
        if self.is_word("NOT", "EXISTS"):
            return [self.exists()]
        self.expect_punct("(")
        expr = self.expr()
        self.expect_punct(")")
        # top-level conjunctions become separate filters
        return list(expr.parts) if isinstance(expr, And) else [expr]

    def exists(self) -> Exists:
        negated = False
        if self.is_word("NOT"):
            self.advance()
            negated = True
        self.expect_word("EXISTS")
        triples, filters, subqueries = self.group(allow_subqueries=False)
        return Exists(Group(triples, filters), negated)

    def expr(self):
        parts = [self.conj()]
        while self.tok.kind == "op" and self.tok.text == "||":
            self.advance()
            parts.append(self.conj())
        return parts[0] if len(parts) == 1 else Or(tuple(parts))

    def conj(self):
        parts = []
        for p in [self.atom()] + self._more_atoms():
            parts.extend(p.parts if isinstance(p, And) else [p])
        return parts[0] if len(parts) == 1 else And(tuple(parts))

    def _more_atoms(self):
        out = []
        while self.tok.kind == "op" and self.tok.text == "&&":
            self.advance()
            out.append(self.atom())
        return out

    def atom(self):
        if self.is_punct("("):
            self.advance()
            inner = self.expr()
            self.expect_punct(")")
            return inner
        if self.is_word("NOT", "EXISTS"):
            return self.exists()
        if self.is_word("DURING", "OVERLAP"):
            op = self.advance().upper()
            self.expect_punct("(")
            left = self.filter_term()
            self.expect_punct(",")
            right = self.filter_term()
            self.expect_punct(")")
            return Compare(op, left, right)
        if self.tok.kind == "op" and self.tok.text == "!":
            raise UnsupportedFeature("negation with '!' is outside the supported subset")
        left = self.filter_term()
        if self.tok.kind != "op" or self.tok.text not in COMPARISON_OPS:
            raise self.error("expected a comparison operator")
        op = self.advance().text
        right = self.filter_term()
        return Compare(op, left, right)

    def filter_term(self):
        self.check_unsupported()
        tok = self.tok
        # xsd:dateTime(?v) style casts are accepted as identity
        if tok.kind == "pname" and self.peek().kind == "punct" and self.peek().text == "(":
            if not tok.text.lower().startswith("xsd:"):
                raise UnsupportedFeature(f"function {tok.text} is outside the supported subset")
            self.advance()
            self.advance()
            inner = self.filter_term()
            self.expect_punct(")")
            return inner
        if tok.kind == "word" and self.peek().kind == "punct" and self.peek().text == "(":
            raise UnsupportedFeature(f"function {tok.text} is outside the supported subset")
        return self.node(position="filter")


def parse_sparql(text: str) -> SparqlAst:
    """Parse a program in the supported subset."""
    return _Parser(text).parse()


def gold_entities(text: str) -> list[str]:
    """Entity ids in a program, deduplicated in first-occurrence order.

    Type objects of ``rdf:type`` triples are not entities.
    """
    ast = parse_sparql(text)
    seen: list[str] = []

    def visit_triples(triples):
        for t in triples:
            for pos, node in (("s", t.s), ("o", t.o)):
                if not isinstance(node, IRI):
                    continue
                if pos == "o" and isinstance(t.p, IRI) and t.p.id == TYPE_RELATION:
                    continue
                if node.id not in seen:
                    seen.append(node.id)

    def visit_filters(filters):
        for f in filters:
            if isinstance(f, Exists):
                visit_triples(f.group.triples)
                visit_filters(f.group.filters)
            elif isinstance(f, (Or, And)):
                visit_filters(f.parts)

    def visit_block(b: Block):
        visit_triples(b.triples)
        visit_filters(b.filters)
        for sq in b.subqueries:
            visit_block(sq)

    # textual order: main triples, then subqueries, then filters
    visit_block(ast.main)
    return seen


__all__ = ["parse_sparql", "gold_entities", "SparqlSyntaxError", "UnsupportedFeature", "Literal"]
