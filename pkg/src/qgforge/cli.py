"""Command line entry point: ``qgforge <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from typing import Optional, Sequence

from .candidates import CandidatePool
from .graph import validate
from .kg import TripleStore
from .model import Scorer, TrainConfig
from .pipeline import evaluate, evaluate_gold, load_dataset, pool_for, train_system
from .search import NoResult, eta_bound, estimate_search_space, parse_question
from .sparql import gold_entities, parse_sparql, sparql_to_graph

log = logging.getLogger("qgforge")

DEFAULTS = {"seed": 0, "beam": 5, "dim": 64, "no_eg": False}


class UsageError(Exception):
    pass


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda k: argparse.SUPPRESS) if suppress else (lambda k: DEFAULTS[k])
    parser.add_argument("--seed", type=int, default=default("seed"), help="random seed (default 0)")
    parser.add_argument("--beam", type=int, default=default("beam"), help="beam size K (default 5)")
    parser.add_argument("--dim", type=int, default=default("dim"), help="hidden size d (default 64)")
    parser.add_argument("--no-eg", action="store_true", default=default("no_eg"), help="disable execution guidance")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qgforge", description="Query graph generation for KBQA.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        _global_flags(sp, suppress=True)
        return sp

    c = cmd("convert", "SPARQL file to query graph JSON")
    c.add_argument("sparql_file")

    c = cmd("train", "train rankers and scorer")
    c.add_argument("--data", required=True, help="JSONL dataset {id, question, sparql}")
    c.add_argument("--kg", required=True, help="triple file")
    c.add_argument("--out", required=True, help="checkpoint path")
    c.add_argument("--epochs", type=int, default=30)
    c.add_argument("--lr", type=float, default=2e-4)
    c.add_argument("--batch-size", type=int, default=16)
    c.add_argument("--clip", type=float, default=None, help="clip the gradient norm per step")
    c.add_argument("--ranker-epochs", type=int, default=30)

    c = cmd("eval", "evaluate a checkpoint on a dataset")
    c.add_argument("--data", required=True)
    c.add_argument("--kg", required=True)
    c.add_argument("--model", help="checkpoint (omit with --gold-as-pred)")
    c.add_argument("--out", help="write the JSON report here")
    c.add_argument("--trace", help="write per-example search traces (JSONL) here")
    c.add_argument("--timing", action="store_true", help="include T_kg / T_inf timings")
    c.add_argument("--gold-as-pred", action="store_true", help="score gold graphs as predictions")

    c = cmd("parse", "parse one question")
    c.add_argument("--question", required=True)
    c.add_argument("--kg", required=True)
    c.add_argument("--model", required=True)
    c.add_argument("--pool", help="candidate pool JSON file")
    c.add_argument("--entity", action="append", default=[], help="gold entity (repeatable)")
    c.add_argument("--emit", choices=("graph", "sparql", "trace"), default="sparql")

    c = cmd("candidates", "candidate pool for a question")
    c.add_argument("question")
    c.add_argument("--kg", required=True)
    c.add_argument("--model", required=True)
    c.add_argument("--entity", action="append", default=[])
    c.add_argument("--sparql", help="take gold entities from this program")

    c = cmd("stats", "search-space diagnostics from a trace or a dataset")
    c.add_argument("file", help="trace JSONL from `eval --trace`, or a dataset JSONL")

    c = cmd("kg", "knowledge graph utilities")
    kg_sub = c.add_subparsers(dest="kg_command", required=True)
    ks = kg_sub.add_parser("stats", help="triple store statistics")
    ks.add_argument("file")
    return p


def _flag(args, name):
    return getattr(args, name, DEFAULTS[name])


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    with open(args.sparql_file, encoding="utf-8") as fh:
        text = fh.read()
    g = sparql_to_graph(text)
    report = validate(g)
    _emit({"graph": g.to_json(), "valid": report.ok, "violations": [str(v) for v in report.violations]})
    return 0 if report.ok else 1


def cmd_train(args) -> int:
    rows = load_dataset(args.data)
    kg = TripleStore.load(args.kg)
    cfg = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        seed=_flag(args, "seed"),
        d=_flag(args, "dim"),
        batch_size=args.batch_size,
        clip=args.clip,
    )
    history: list = []
    model = train_system(rows, kg, cfg, ranker_epochs=args.ranker_epochs, history=history)
    model.save(args.out)
    _emit({"checkpoint": args.out, "examples": len(rows), "epochs": cfg.epochs, "final_loss": history[-1] if history else None})
    return 0


def cmd_eval(args) -> int:
    rows = load_dataset(args.data)
    kg = TripleStore.load(args.kg)
    traces: Optional[list] = [] if args.trace else None
    if args.gold_as_pred:
        report = evaluate_gold(rows, kg)
    else:
        if not args.model:
            raise UsageError("eval needs --model unless --gold-as-pred is given")
        model = Scorer.load(args.model)
        report = evaluate(model, rows, kg, _flag(args, "beam"), not _flag(args, "no_eg"), args.timing, traces)
    text = report.dumps()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    if traces is not None:
        with open(args.trace, "w", encoding="utf-8") as fh:
            for t in traces:
                fh.write(json.dumps(t, sort_keys=True) + "\n")
    print(report.table())
    return 0


def _load_pool(path: str) -> CandidatePool:
    with open(path, encoding="utf-8") as fh:
        return CandidatePool.from_json(json.load(fh))


def cmd_parse(args) -> int:
    kg = TripleStore.load(args.kg)
    model = Scorer.load(args.model)
    pool = _load_pool(args.pool) if args.pool else pool_for(model, args.question, kg, args.entity)
    res = parse_question(model, args.question, pool, _flag(args, "beam"), kg, not _flag(args, "no_eg"))
    if args.emit == "trace":
        _emit(res.trace())
        return 0 if res.error is None else 1
    if res.error is not None and res.graph is None:
        raise NoResult(res.error)
    if args.emit == "graph":
        _emit(res.graph.to_json())
    else:
        if res.sparql is None:
            raise NoResult(res.error or "no program")
        print(res.sparql)
    return 0


def cmd_candidates(args) -> int:
    kg = TripleStore.load(args.kg)
    model = Scorer.load(args.model)
    entities = list(args.entity)
    if args.sparql:
        entities += [e for e in gold_entities(args.sparql) if e not in entities]
    _emit(pool_for(model, args.question, kg, entities).to_json())
    return 0


def stats_from_records(records: Sequence[dict]) -> dict:
    """Summary of traces (search counters) or dataset rows (gold edge counts)."""
    hist: Counter = Counter()
    out = {
        "examples": len(records),
        "calls": 0,
        "y_star": 0,
        "calls_within_y_star": True,
        "eta": 0,
        "eta_sup": 0,
        "eta_within_sup": True,
        "violations": [],
    }
    for rec in records:
        if "stats" in rec:
            s = rec["stats"]
            y_star = estimate_search_space(s["n"], s["k"], s["y_o"], s["y_v"], s["y_e"])
            sup = eta_bound(s["n"], s["k"], s["y_e"])
            out["calls"] += s["calls"]
            out["y_star"] += y_star
            out["eta"] += s["eta"]
            out["eta_sup"] += sup
            if s["calls"] > y_star or s["eta"] > sup:
                out["violations"].append(rec.get("id"))
                out["calls_within_y_star"] &= s["calls"] <= y_star
                out["eta_within_sup"] &= s["eta"] <= sup
            hist[s.get("edges", 0)] += 1
        elif "sparql" in rec:
            hist[len(sparql_to_graph(rec["sparql"]).edges)] += 1
        else:
            raise ValueError("record is neither a trace nor a dataset row")
    out["edge_histogram"] = {str(k): hist[k] for k in sorted(hist)}
    return out


def cmd_stats(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    summary = stats_from_records(records)
    _emit(summary)
    return 0 if not summary["violations"] else 1


def cmd_kg(args) -> int:
    kg = TripleStore.load(args.file)
    _emit(kg.stats())
    return 0


COMMANDS = {
    "convert": cmd_convert,
    "train": cmd_train,
    "eval": cmd_eval,
    "parse": cmd_parse,
    "candidates": cmd_candidates,
    "stats": cmd_stats,
    "kg": cmd_kg,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("QGFORGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        log.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
