"""Dataset handling, end-to-end training and evaluation shared by the CLI and tests."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from .candidates import (
    DEFAULT_K_REL,
    DEFAULT_K_TYPE,
    NONE_TYPE,
    CandidatePool,
    DataError,
    Ranker,
    build_pool,
    train_ranker,
)
from .graph import EdgeTag, QueryGraph, VertexClass
from .kg import TripleStore, answers
from .metrics import EvalReport, ExampleResult, score_example
from .model import Scorer, TrainConfig, Vocab, make_plan, train
from .search import ParseResult, parse_question
from .sparql import gold_entities, parse_sparql, sparql_to_graph
from .supervision import SupervisionSequences, build_signals

log = logging.getLogger("qgforge")


@dataclass
class Example:
    id: str
    question: str
    sparql: str
    graph: QueryGraph
    signals: SupervisionSequences
    entities: list[str]


def load_dataset(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
            for key in ("id", "question", "sparql"):
                if key not in row:
                    raise DataError(f"line {lineno}: missing field {key!r}")
            rows.append(row)
    check_ids(rows)
    return rows


def check_ids(rows: Sequence[dict]) -> None:
    seen = set()
    for row in rows:
        if row["id"] in seen:
            raise DataError(f"duplicate example id {row['id']!r}")
        seen.add(row["id"])


def prepare(row: dict) -> Example:
    g = sparql_to_graph(row["sparql"])
    return Example(row["id"], row["question"], row["sparql"], g, build_signals(g), gold_entities(row["sparql"]))


def _gold_relations(g: QueryGraph) -> list[str]:
    return sorted({e.instance for e in g.edges if e.tag is EdgeTag.REL and e.instance != "rdf:type"})


def _gold_types(g: QueryGraph) -> list[str]:
    return sorted({v.instance for v in g.vertices if v.cls is VertexClass.TYPE})


def rankers(model: Scorer) -> tuple[Optional[Ranker], Optional[Ranker]]:
    rel = model.extra.get("rel_ranker")
    typ = model.extra.get("type_ranker")
    return (Ranker.from_json(rel) if rel else None, Ranker.from_json(typ) if typ else None)


def pool_for(model: Scorer, question: str, kg: TripleStore, entities: Sequence[str]) -> CandidatePool:
    rel, typ = rankers(model)
    return build_pool(
        question,
        kg,
        entities,
        rel,
        typ,
        model.extra.get("k_rel", DEFAULT_K_REL),
        model.extra.get("k_type", DEFAULT_K_TYPE),
    )


def train_system(
    rows: Sequence[dict],
    kg: TripleStore,
    config: TrainConfig,
    ranker_epochs: int = 30,
    k_rel: int = DEFAULT_K_REL,
    k_type: int = DEFAULT_K_TYPE,
    history: Optional[list] = None,
) -> Scorer:
    """Candidate rankers plus the scorer, trained on one dataset."""
    if not rows:
        raise DataError("empty training corpus")
    check_ids(rows)
    examples = []
    for row in rows:
        try:
            examples.append(prepare(row))
        except Exception as exc:
            raise DataError(f"example {row['id']!r}: {type(exc).__name__}: {exc}") from exc
    rel_pairs = [(ex.question, _gold_relations(ex.graph)) for ex in examples if _gold_relations(ex.graph)]
    rel_ranker = train_ranker(rel_pairs, kg.relations(), epochs=ranker_epochs, seed=config.seed) if rel_pairs else None
    type_pairs = [(ex.question, _gold_types(ex.graph) or [NONE_TYPE]) for ex in examples]
    type_ranker = (
        train_ranker(type_pairs, kg.types() + [NONE_TYPE], epochs=ranker_epochs, seed=config.seed + 1)
        if kg.types()
        else None
    )
    extra = {
        "rel_ranker": rel_ranker.to_json() if rel_ranker else None,
        "type_ranker": type_ranker.to_json() if type_ranker else None,
        "k_rel": k_rel,
        "k_type": k_type,
        "train": {"lr": config.lr, "epochs": config.epochs, "batch_size": config.batch_size, "clip": config.clip},
    }
    vocab = Vocab.build(
        [ex.question for ex in examples],
        kg.relations() + kg.types() + kg.entities(),
    )
    model = Scorer.init(vocab, config.d, config.seed)
    model.extra = extra
    plans = []
    for ex in examples:
        pool = pool_for(model, ex.question, kg, ex.entities)
        plans.append(make_plan(vocab, ex.question, ex.signals, pool))
    log.info("training on %d examples, %d epochs", len(plans), config.epochs)
    train(model, plans, config, history)
    return model


def evaluate(
    model: Scorer,
    rows: Sequence[dict],
    kg: TripleStore,
    beam: int = 5,
    guided: bool = True,
    timing: bool = False,
    traces: Optional[list] = None,
    budget: Optional[int] = None,
) -> EvalReport:
    """Full pipeline on every example; failures score zero and never abort the run."""
    check_ids(rows)
    results = []
    for row in sorted(rows, key=lambda r: r["id"]):
        results.append(_evaluate_one(model, row, kg, beam, guided, timing, traces, budget))
    return EvalReport(results, {"beam": beam, "eg": guided})


def _evaluate_one(model, row, kg, beam, guided, timing, traces, budget) -> ExampleResult:
    rid = row["id"]
    try:
        ex = prepare(row)
        gold_answers = answers(kg, parse_sparql(row["sparql"]))
    except Exception as exc:
        return ExampleResult(rid, error=f"gold: {type(exc).__name__}: {exc}")
    t0 = time.perf_counter()
    try:
        pool = pool_for(model, ex.question, kg, ex.entities)
        res: ParseResult = parse_question(model, ex.question, pool, beam, kg, guided, budget)
    except Exception as exc:
        log.debug("example %s failed: %s", rid, exc)
        return ExampleResult(rid, error=f"{type(exc).__name__}: {exc}")
    t1 = time.perf_counter()
    if traces is not None:
        traces.append({"id": rid, **res.trace()})
    pred_answers = None
    error = res.error
    if res.sparql is not None:
        try:
            pred_answers = answers(kg, parse_sparql(res.sparql), budget)
        except Exception as exc:
            error = f"{type(exc).__name__}: {exc}"
    t2 = time.perf_counter()
    out = score_example(rid, ex.graph, gold_answers, res.graph, pred_answers, res.sparql, error, res.aqg)
    if timing:
        out.timing = {"t_inf": t1 - t0, "t_kg": t2 - t1}
    return out


def evaluate_gold(rows: Sequence[dict], kg: TripleStore) -> EvalReport:
    """Score the gold programs against themselves (a sanity check of the metrics)."""
    check_ids(rows)
    results = []
    for row in sorted(rows, key=lambda r: r["id"]):
        try:
            ex = prepare(row)
            gold = answers(kg, parse_sparql(row["sparql"]))
        except Exception as exc:
            results.append(ExampleResult(row["id"], error=f"gold: {type(exc).__name__}: {exc}"))
            continue
        results.append(score_example(row["id"], ex.graph, gold, ex.graph, gold, row["sparql"]))
    return EvalReport(results, {"gold_as_prediction": True})
