"""RDF-ish terms shared by the store, the SPARQL bridge and the graphs.

Entities, types and relations are plain strings (opaque ids). Literals carry
a kind so comparisons can refuse to mix numbers, dates and strings.
"""

from __future__ import annotations

import datetime as _dt
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Union

COMBINED_SEP = "$$$"
TYPE_RELATION = "rdf:type"

_KIND_ALIASES = {
    "int": "int",
    "integer": "int",
    "xsd:integer": "int",
    "xsd:int": "int",
    "dec": "dec",
    "decimal": "dec",
    "float": "dec",
    "double": "dec",
    "xsd:decimal": "dec",
    "xsd:double": "dec",
    "xsd:float": "dec",
    "date": "date",
    "datetime": "date",
    "xsd:date": "date",
    "xsd:datetime": "date",
    "year": "year",
    "xsd:gyear": "year",
    "str": "str",
    "string": "str",
    "xsd:string": "str",
}

NUMERIC_KINDS = frozenset({"int", "dec"})
TEMPORAL_KINDS = frozenset({"date", "year"})


class TermError(ValueError):
    pass


class EvalError(Exception):
    """Raised when a comparison mixes incompatible literal kinds."""


@dataclass(frozen=True, order=True)
class Literal:
    kind: str
    lexical: str

    def __post_init__(self):
        if self.kind not in ("int", "dec", "date", "year", "str"):
            raise TermError(f"unknown literal kind {self.kind!r}")

    @classmethod
    def make(cls, lexical: str, kind: str = "str") -> "Literal":
        kind = _KIND_ALIASES.get(kind.lower(), None)
        if kind is None:
            raise TermError(f"unknown literal datatype in {lexical!r}")
        try:
            if kind == "int":
                lexical = str(int(lexical))
            elif kind == "dec":
                lexical = _normalize_decimal(lexical)
            elif kind == "date":
                lexical = _parse_date(lexical).isoformat()
            elif kind == "year":
                lexical = "%04d" % int(lexical[:4])
        except (ValueError, InvalidOperation) as exc:
            raise TermError(f"bad {kind} literal {lexical!r}") from exc
        return cls(kind, lexical)

    @property
    def value(self):
        if self.kind == "int":
            return Decimal(self.lexical)
        if self.kind == "dec":
            return Decimal(self.lexical)
        if self.kind == "date":
            return _dt.date.fromisoformat(self.lexical)
        if self.kind == "year":
            return _dt.date(int(self.lexical), 1, 1)
        return self.lexical

    @property
    def family(self) -> str:
        if self.kind in NUMERIC_KINDS:
            return "num"
        if self.kind in TEMPORAL_KINDS:
            return "time"
        return "str"

    def render(self) -> str:
        """SPARQL / triple-file surface form."""
        if self.kind == "int":
            return self.lexical
        if self.kind == "dec":
            return f'"{self.lexical}"^^dec'
        if self.kind == "str":
            return '"' + self.lexical.replace("\\", "\\\\").replace('"', '\\"') + '"'
        return f'"{self.lexical}"^^{self.kind}'

    def tokens(self) -> list[str]:
        return [t for t in re.split(r"[^0-9A-Za-z]+", self.lexical.lower()) if t]

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True, order=True)
class Interval:
    """Synthetic node materialised for combined start/end relations."""

    start: Literal
    end: Literal

    def render(self) -> str:
        return f"[{self.start.render()}, {self.end.render()}]"


Term = Union[str, Literal, Interval]


def _normalize_decimal(text: str) -> str:
    d = Decimal(text)
    if d == d.to_integral_value():
        return str(d.quantize(Decimal(1))) + ".0"
    return format(d.normalize(), "f")


def _parse_date(text: str) -> _dt.date:
    text = text.strip()
    if re.fullmatch(r"\d{4}", text):
        return _dt.date(int(text), 1, 1)
    return _dt.date.fromisoformat(text[:10])


_LIT_RE = re.compile(r'^"((?:[^"\\]|\\.)*)"(?:\^\^(\S+))?$')
_NUM_RE = re.compile(r"^[+-]?\d+$")
_DEC_RE = re.compile(r"^[+-]?\d*\.\d+$")


def parse_literal(token: str) -> Literal | None:
    """Parse a literal token; returns None if the token is not a literal."""
    m = _LIT_RE.match(token)
    if m:
        body = re.sub(r"\\(.)", r"\1", m.group(1))
        dtype = m.group(2)
        if dtype is None:
            return Literal("str", body)
        if dtype.startswith("<") and dtype.endswith(">"):
            dtype = dtype[1:-1]
        dtype = dtype.rsplit("#", 1)[-1] if "#" in dtype else dtype
        if dtype.lower() not in _KIND_ALIASES and ("xsd:" + dtype.lower()) in _KIND_ALIASES:
            dtype = "xsd:" + dtype
        return Literal.make(body, dtype)
    if _NUM_RE.match(token):
        return Literal.make(token, "int")
    if _DEC_RE.match(token):
        return Literal.make(token, "dec")
    return None


def compare(op: str, left: Term, right: Term) -> bool:
    """Evaluate a binary comparison over two bound terms."""
    if isinstance(left, Interval) or isinstance(right, Interval):
        raise EvalError("plain comparison over an interval term")
    if isinstance(left, Literal) and isinstance(right, Literal):
        if left.family != right.family:
            raise EvalError(f"cannot compare {left.kind} with {right.kind}")
        a, b = left.value, right.value
    elif isinstance(left, Literal) or isinstance(right, Literal):
        if op == "=":
            return False
        if op == "!=":
            return True
        raise EvalError("ordering comparison between a literal and an IRI")
    else:
        if op in ("=", "!="):
            return (left == right) == (op == "=")
        raise EvalError("ordering comparison between IRIs")
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    raise EvalError(f"unknown comparison {op!r}")


def as_interval(term: Term) -> Interval:
    if isinstance(term, Interval):
        return term
    if isinstance(term, Literal):
        return Interval(term, term)
    raise EvalError(f"{term!r} is not an interval")


def interval_relation(op: str, left: Term, right: Term) -> bool:
    """DURING / OVERLAP over intervals; a plain literal counts as [v, v]."""
    p1, p2 = as_interval(left), as_interval(right)
    if op == "DURING":
        return compare(">=", p1.start, p2.start) and compare("<=", p1.end, p2.end)
    if op == "OVERLAP":
        return compare("<=", p1.start, p2.end) and compare(">=", p1.end, p2.start)
    raise EvalError(f"unknown interval operator {op!r}")


def combined_parts(relation: str) -> tuple[str, str] | None:
    if COMBINED_SEP in relation:
        start, _, end = relation.partition(COMBINED_SEP)
        return start, end
    return None


_PAIR_SUFFIXES = (("from", "to"), ("start_date", "end_date"))


def interval_partner(relation: str) -> tuple[str, str] | None:
    """Return (start_rel, end_rel) if ``relation`` is one half of an interval pair."""
    prefix, dot, last = relation.rpartition(".")
    if not dot:
        return None
    for st, ed in _PAIR_SUFFIXES:
        if last == st:
            return relation, f"{prefix}.{ed}"
        if last == ed:
            return f"{prefix}.{st}", relation
    return None


def render_term(term: Term) -> str:
    if isinstance(term, str):
        return f"<{term}>"
    return term.render()


def tokenize_name(name: str) -> list[str]:
    """Split an identifier on '.', '_', '/' (and other punctuation)."""
    return [t for t in re.split(r"[^0-9A-Za-z]+", name.lower()) if t]
