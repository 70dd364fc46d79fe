import json

import pytest

from qgforge.cli import main, stats_from_records
from qgforge.synth import write_jsonl

from .conftest import RUNNING_EXAMPLE


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def files(tmp_path_factory, corpus, store):
    d = tmp_path_factory.mktemp("cli")
    (d / "kg.nt").write_text(store.dumps(), encoding="utf-8")
    write_jsonl(corpus[:6], d / "train.jsonl")
    (d / "empty.jsonl").write_text("", encoding="utf-8")
    return d


def test_convert(capsys, tmp_path):
    f = tmp_path / "q.rq"
    f.write_text(RUNNING_EXAMPLE, encoding="utf-8")
    code, out, _ = run(capsys, "convert", str(f))
    assert code == 0
    doc = json.loads(out)
    assert doc["valid"] and len(doc["graph"]["vertices"]) == 11


def test_convert_invalid(capsys, tmp_path):
    f = tmp_path / "bad.rq"
    f.write_text("SELEC ?x WHERE {", encoding="utf-8")
    code, _, err = run(capsys, "convert", str(f))
    assert code != 0
    assert json.loads(err)["error"] == "SparqlSyntaxError"


def test_train_empty(capsys, files, tmp_path):
    code, _, err = run(capsys, "train", "--data", str(files / "empty.jsonl"), "--kg", str(files / "kg.nt"),
                       "--out", str(tmp_path / "m.bin"))
    assert code == 1 and json.loads(err)["error"] == "DataError"


@pytest.fixture(scope="module")
def trained(files):
    paths = []
    for name in ("a.bin", "b.bin"):
        code = main(["--seed", "3", "--dim", "8", "train", "--data", str(files / "train.jsonl"),
                     "--kg", str(files / "kg.nt"), "--out", str(files / name), "--epochs", "2", "--lr", "0.1",
                     "--ranker-epochs", "2"])
        assert code == 0
        paths.append(files / name)
    return paths


def test_train_deterministic(trained):
    a, b = trained
    assert a.read_bytes() == b.read_bytes()


def test_eval_and_stats(capsys, files, trained, tmp_path):
    capsys.readouterr()
    report, trace = tmp_path / "r.json", tmp_path / "t.jsonl"
    code, out, _ = run(capsys, "eval", "--data", str(files / "train.jsonl"), "--kg", str(files / "kg.nt"),
                       "--model", str(trained[0]), "--out", str(report), "--trace", str(trace), "--timing")
    assert code == 0 and "gq" in out
    doc = json.loads(report.read_text())
    assert doc["aggregate"]["n"] == 6 and doc["config"]["eg"] is True
    code, out, _ = run(capsys, "stats", str(trace))
    summary = json.loads(out)
    assert code == 0 and summary["eta_within_sup"] and summary["calls_within_y_star"]
    assert summary["examples"] == 6


def test_eval_gold(capsys, files):
    code, out, _ = run(capsys, "eval", "--data", str(files / "train.jsonl"), "--kg", str(files / "kg.nt"),
                       "--gold-as-pred")
    assert code == 0
    rows = dict(line.split() for line in out.splitlines()[1:])
    assert all(float(rows[m]) == 1.0 for m in ("gq", "ga", "precision", "recall", "f1", "hit1"))


def test_stats_empty_trace(capsys, tmp_path):
    f = tmp_path / "empty.jsonl"
    f.write_text("", encoding="utf-8")
    code, out, _ = run(capsys, "stats", str(f))
    s = json.loads(out)
    assert code == 0
    assert (s["examples"], s["calls"], s["y_star"], s["eta"], s["eta_sup"]) == (0, 0, 0, 0, 0)
    assert s["edge_histogram"] == {}


def test_histogram_manual_count():
    rows = [
        {"sparql": "SELECT ?x WHERE { <e> <r> ?x }"},  # 1 edge
        {"sparql": "SELECT ?x WHERE { <e> <r> ?y . ?y <s> ?x }"},  # 2
        {"sparql": "SELECT (COUNT(?x) AS ?c) WHERE { <e> <r> ?x }"},  # Rel + Agg = 2
        {"sparql": "ASK WHERE { <e> <r> <f> }"},  # Rel + ASK = 2
        {"sparql": RUNNING_EXAMPLE},  # 10
    ]
    assert stats_from_records(rows)["edge_histogram"] == {"1": 1, "2": 3, "10": 1}


def test_stats_flags_violation():
    rec = {"id": "x", "stats": {"n": 2, "k": 1, "y_o": 1, "y_v": 1, "y_e": 1, "calls": 999, "eta": 0, "edges": 1}}
    s = stats_from_records([rec])
    assert s["violations"] == ["x"] and not s["calls_within_y_star"]


def test_parse_and_candidates(capsys, files, trained, corpus):
    row = corpus[0]
    code, out, _ = run(capsys, "candidates", row["question"], "--kg", str(files / "kg.nt"), "--model", str(trained[0]),
                       "--sparql", row["sparql"])
    assert code == 0
    pool = json.loads(out)
    assert pool["cmp"] and pool["ent"]
    pf = files / "pool.json"
    pf.write_text(out, encoding="utf-8")
    code, out, _ = run(capsys, "--no-eg", "parse", "--question", row["question"], "--kg", str(files / "kg.nt"),
                       "--model", str(trained[0]), "--pool", str(pf), "--emit", "trace")
    trace = json.loads(out)
    assert "stats" in trace and trace["stats"]["k"] == 5


def test_kg_stats(capsys, files, store):
    code, out, _ = run(capsys, "kg", "stats", str(files / "kg.nt"))
    assert code == 0 and json.loads(out)["triples"] == store.stats()["triples"]


def test_missing_file(capsys):
    code, _, err = run(capsys, "kg", "stats", "/nonexistent/kg.nt")
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"
