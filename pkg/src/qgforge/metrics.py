"""Per-example and aggregate evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .graph import abstract, aqg_equal, graphs_equal
from .terms import Literal

METRICS = ("gq", "ga", "precision", "recall", "f1", "hit1")


def answer_key(term) -> str:
    if isinstance(term, bool):
        return "true" if term else "false"
    if isinstance(term, Literal):
        return term.render()
    return f"<{term}>"


def prf(pred: Sequence, gold: Sequence) -> tuple[float, float, float]:
    """Set precision, recall and F1; two empty sets agree perfectly."""
    p_set = {answer_key(x) for x in pred}
    g_set = {answer_key(x) for x in gold}
    if not p_set and not g_set:
        return 1.0, 1.0, 1.0
    if not p_set or not g_set:
        return 0.0, 0.0, 0.0
    hit = len(p_set & g_set)
    p = hit / len(p_set)
    r = hit / len(g_set)
    f1 = 0.0 if hit == 0 else 2 * p * r / (p + r)
    return p, r, f1


def hit_at_1(pred: Sequence, gold: Sequence) -> float:
    """1 when the first predicted answer (deterministic order) is a gold answer."""
    if not pred:
        return 1.0 if not gold else 0.0
    return 1.0 if answer_key(pred[0]) in {answer_key(x) for x in gold} else 0.0


@dataclass
class ExampleResult:
    id: str
    gq: float = 0.0
    ga: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    hit1: float = 0.0
    sparql: Optional[str] = None
    error: Optional[str] = None
    timing: Optional[dict] = None

    @property
    def pseudo(self) -> bool:
        """Right answers from a wrong graph."""
        return self.f1 == 1.0 and self.gq == 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["pseudo"] = self.pseudo
        if d["timing"] is None:
            del d["timing"]
        return d


def score_example(
    example_id: str,
    gold_graph,
    gold_answers: Sequence,
    pred_graph,
    pred_answers: Optional[Sequence],
    sparql: Optional[str] = None,
    error: Optional[str] = None,
    pred_aqg=None,
) -> ExampleResult:
    """``pred_aqg`` scores Ga when filling failed after a structure was chosen."""
    res = ExampleResult(example_id, sparql=sparql, error=error)
    if pred_graph is None:
        if pred_aqg is not None:
            res.ga = 1.0 if aqg_equal(pred_aqg, abstract(gold_graph)) else 0.0
        return res
    res.gq = 1.0 if graphs_equal(pred_graph, gold_graph) else 0.0
    res.ga = 1.0 if aqg_equal(abstract(pred_graph), abstract(gold_graph)) else 0.0
    if pred_answers is None:
        return res
    res.precision, res.recall, res.f1 = prf(pred_answers, gold_answers)
    res.hit1 = hit_at_1(pred_answers, gold_answers)
    return res


@dataclass
class EvalReport:
    examples: list[ExampleResult]
    config: dict = field(default_factory=dict)

    def aggregate(self) -> dict:
        n = len(self.examples)
        out = {"n": n}
        for m in METRICS:
            out[m] = sum(getattr(e, m) for e in self.examples) / n if n else 0.0
        out["pseudo_graphs"] = sum(e.pseudo for e in self.examples)
        out["failures"] = sum(e.error is not None for e in self.examples)
        return out

    def to_json(self) -> dict:
        ordered = sorted(self.examples, key=lambda e: e.id)
        return {"config": self.config, "aggregate": self.aggregate(), "examples": [e.to_json() for e in ordered]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self) -> str:
        agg = self.aggregate()
        lines = [f"{'metric':<10} {'value':>8}"]
        for m in METRICS:
            lines.append(f"{m:<10} {agg[m]:>8.4f}")
        lines.append(f"{'examples':<10} {agg['n']:>8d}")
        lines.append(f"{'failures':<10} {agg['failures']:>8d}")
        lines.append(f"{'pseudo':<10} {agg['pseudo_graphs']:>8d}")
        pseudo = [e.id for e in sorted(self.examples, key=lambda e: e.id) if e.pseudo]
        if pseudo:
            lines.append("pseudo query graphs (F1=1, Gq=0): " + ", ".join(pseudo))
        return "\n".join(lines)
