"""Candidate instance pools: built-ins, extracted values, gold entities, ranked relations/types."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import AGG_INSTANCES, CMP_INSTANCES, ORD_INSTANCES
from .terms import Literal, parse_literal, tokenize_name

NONE_TYPE = "<none>"
DEFAULT_K_REL = 50
DEFAULT_K_TYPE = 3


class DataError(ValueError):
    pass


def enumerate_builtins() -> tuple[list[str], list[str], list[str]]:
    return list(ORD_INSTANCES), list(CMP_INSTANCES), list(AGG_INSTANCES)


_VALUE_RE = re.compile(
    r'"(?P<str>[^"]*)"'
    r"|(?P<date>\b\d{4}-\d{2}-\d{2}\b)"
    r"|(?P<dec>(?<![\w.])[+-]?\d+\.\d+(?![\w.]))"
    r"|(?P<int>(?<![\w.])[+-]?\d+(?![\w.]))"
)


def extract_values(question: str) -> list[Literal]:
    """Quoted strings, dates, decimals, years and integers, left to right, deduplicated."""
    out: list[Literal] = []
    for m in _VALUE_RE.finditer(question):
        kind = m.lastgroup
        text = m.group(kind)
        if kind == "int" and re.fullmatch(r"1\d{3}|20\d{2}", text):
            kind = "year"
        try:
            lit = Literal.make(text, kind)
        except ValueError:
            continue
        if lit not in out:
            out.append(lit)
    return out


# ---------------------------------------------------------------------------
# ranker
# ---------------------------------------------------------------------------


@dataclass
class Ranker:
    """Mean-pooled shared token embeddings scored by dot product."""

    vocab: dict[str, int]
    emb: np.ndarray
    margin: float = 0.5

    @classmethod
    def init(cls, texts: Sequence[str], dim: int = 32, seed: int = 0) -> "Ranker":
        vocab: dict[str, int] = {}
        for t in texts:
            for tok in tokenize_name(t) or [t]:
                vocab.setdefault(tok, len(vocab))
        rng = np.random.default_rng(seed)
        emb = rng.uniform(-0.1, 0.1, size=(max(len(vocab), 1), dim))
        return cls(vocab, emb)

    def ids(self, text: str) -> list[int]:
        toks = tokenize_name(text) or [text]
        return [self.vocab[t] for t in toks if t in self.vocab]

    def encode(self, text: str) -> np.ndarray:
        ids = self.ids(text)
        if not ids:
            return np.zeros(self.emb.shape[1])
        return self.emb[ids].mean(axis=0)

    def score(self, question: str, candidate: str) -> float:
        return float(self.encode(question) @ self.encode(candidate))

    def rank(self, question: str, candidates: Sequence[str], k: int) -> list[tuple[str, float]]:
        if k <= 0 or not candidates:
            return []
        q = self.encode(question)
        scored = [(c, float(q @ self.encode(c))) for c in sorted(set(candidates))]
        scored.sort(key=lambda x: (-x[1], x[0]))
        return scored[:k]

    def hinge_step(self, question: str, pos: str, neg: str, lr: float) -> float:
        """One SGD step on max(0, margin - s(q, pos) + s(q, neg)); returns the loss."""
        q_ids, p_ids, n_ids = self.ids(question), self.ids(pos), self.ids(neg)
        q, p, n = self.encode(question), self.encode(pos), self.encode(neg)
        loss = self.margin - q @ p + q @ n
        if loss <= 0:
            return 0.0
        grad = np.zeros_like(self.emb)
        # d loss / d q = n - p ; d/d p = -q ; d/d n = q  (mean pooling spreads evenly)
        if q_ids:
            np.add.at(grad, q_ids, (n - p) / len(q_ids))
        if p_ids:
            np.add.at(grad, p_ids, -q / len(p_ids))
        if n_ids:
            np.add.at(grad, n_ids, q / len(n_ids))
        self.emb -= lr * grad
        return float(loss)

    def to_json(self) -> dict:
        return {"vocab": self.vocab, "emb": self.emb.tolist(), "margin": self.margin}

    @classmethod
    def from_json(cls, d: dict) -> "Ranker":
        return cls(dict(d["vocab"]), np.asarray(d["emb"], dtype=np.float64), d.get("margin", 0.5))


def train_ranker(
    pairs: Sequence[tuple[str, Sequence[str]]],
    candidates: Sequence[str],
    epochs: int = 30,
    seed: int = 0,
    dim: int = 32,
    lr: float = 0.5,
    negatives: int = 10,
    history: Optional[list] = None,
) -> Ranker:
    """Hinge-loss training with negatives drawn uniformly from ``candidates``."""
    if not pairs:
        raise DataError("no training pairs")
    for q, pos in pairs:
        if not pos:
            raise DataError(f"question {q!r} has no positive candidates")
    cands = sorted(set(candidates))
    texts = [q for q, _ in pairs] + cands + [p for _, ps in pairs for p in ps]
    ranker = Ranker.init(texts, dim, seed)
    rng = np.random.default_rng(seed + 1)
    for _ in range(epochs):
        total = 0.0
        for i in rng.permutation(len(pairs)):
            q, pos = pairs[i]
            pos_set = set(pos)
            pool = [c for c in cands if c not in pos_set]
            if not pool:
                continue
            for p in sorted(pos_set):
                for j in rng.integers(0, len(pool), size=negatives):
                    total += ranker.hinge_step(q, p, pool[j], lr)
        if history is not None:
            history.append(total)
    return ranker


def rank_relations(question: str, kg, k: int = DEFAULT_K_REL, ranker: Optional[Ranker] = None) -> list[str]:
    rels = kg.relations()
    if ranker is None:
        ranker = Ranker.init(rels + [question])
    return [r for r, _ in ranker.rank(question, rels, k)]


def rank_types(question: str, kg, k: int = DEFAULT_K_TYPE, ranker: Optional[Ranker] = None) -> list[str]:
    types = kg.types()
    if not types:
        return []
    if ranker is None:
        ranker = Ranker.init(types + [NONE_TYPE, question])
    ranked = [t for t, _ in ranker.rank(question, types + [NONE_TYPE], k + 1)]
    if ranked[0] == NONE_TYPE:
        return []
    return [t for t in ranked if t != NONE_TYPE][:k]


# ---------------------------------------------------------------------------
# pool
# ---------------------------------------------------------------------------


POOL_KINDS = ("ent", "rel", "type", "val", "ord", "cmp", "agg")
_KIND_OF_CLASS = {"Ent": "ent", "Rel": "rel", "Type": "type", "Val": "val", "Ord": "ord", "Cmp": "cmp", "Agg": "agg"}


@dataclass
class CandidatePool:
    ent: list = field(default_factory=list)
    rel: list = field(default_factory=list)
    type: list = field(default_factory=list)
    val: list = field(default_factory=list)
    ord: list = field(default_factory=lambda: list(ORD_INSTANCES))
    cmp: list = field(default_factory=lambda: list(CMP_INSTANCES))
    agg: list = field(default_factory=lambda: list(AGG_INSTANCES))

    def instances(self, cls_name: str) -> list:
        """Candidates for a slot class name (``Ent``, ``Rel``, ...)."""
        return getattr(self, _KIND_OF_CLASS[cls_name])

    def sizes(self) -> dict[str, int]:
        return {k: len(getattr(self, k)) for k in POOL_KINDS}

    def with_extra(self, **extra) -> "CandidatePool":
        """Copy with extra instances appended (duplicates skipped)."""
        d = {k: list(getattr(self, k)) for k in POOL_KINDS}
        for k, items in extra.items():
            for x in items:
                if x not in d[k]:
                    d[k].append(x)
        return CandidatePool(**d)

    def to_json(self) -> dict:
        out = {}
        for k in POOL_KINDS:
            items = getattr(self, k)
            out[k] = [x.render() if isinstance(x, Literal) else x for x in items]
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False)

    @classmethod
    def from_json(cls, d: dict) -> "CandidatePool":
        kw = {k: list(d.get(k, [])) for k in POOL_KINDS if k in d}
        if "val" in kw:
            kw["val"] = [parse_literal(x) for x in kw["val"]]
        return cls(**kw)


def build_pool(
    question: str,
    kg,
    entities: Sequence[str] = (),
    rel_ranker: Optional[Ranker] = None,
    type_ranker: Optional[Ranker] = None,
    k_rel: int = DEFAULT_K_REL,
    k_type: int = DEFAULT_K_TYPE,
) -> CandidatePool:
    """Pool for one question; entities come from the gold program."""
    vals = extract_values(question)
    one = Literal.make("1", "int")
    if one not in vals:
        # default LIMIT for superlatives that do not spell the number out
        vals.append(one)
    return CandidatePool(
        ent=list(dict.fromkeys(entities)),
        rel=rank_relations(question, kg, k_rel, rel_ranker),
        type=rank_types(question, kg, k_type, type_ranker),
        val=vals,
    )
