import inspect

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qgforge.candidates import (
    DEFAULT_K_REL,
    DEFAULT_K_TYPE,
    CandidatePool,
    DataError,
    Ranker,
    build_pool,
    enumerate_builtins,
    extract_values,
    rank_relations,
    rank_types,
    train_ranker,
)
from qgforge.kg import TripleStore
from qgforge.terms import Literal


def test_builtins():
    ords, cmps, aggs = enumerate_builtins()
    assert ords == ["ASC", "DESC"]
    assert len(cmps) == 8 and {"DURING", "OVERLAP", "="} <= set(cmps)
    assert set(aggs) == {"COUNT", "MAX", "MIN", "ASK"}


@pytest.mark.parametrize(
    "question, expected",
    [
        ("who is older than 35", [Literal.make("35", "int")]),
        ("films released after 1980-12-31", [Literal.make("1980-12-31", "date")]),
        ("what won in 2011", [Literal.make("2011", "year")]),
        ('titled "Alien" with rating 7.5', [Literal("str", "Alien"), Literal.make("7.5", "dec")]),
        ("no numbers here", []),
        ("3 and 3 again", [Literal.make("3", "int")]),
    ],
)
def test_extract_values(question, expected):
    assert extract_values(question) == expected


@given(st.integers(0, 999), st.text(alphabet="abcdefgh ", max_size=20), st.text(alphabet="abcdefgh ", max_size=20))
def test_planted_integer_found(n, left, right):
    got = extract_values(f"{left} {n} {right}")
    assert got == [Literal.make(str(n), "int")]


def test_default_k():
    assert DEFAULT_K_REL == 50 and DEFAULT_K_TYPE == 3
    assert inspect.signature(rank_relations).parameters["k"].default == 50
    assert inspect.signature(rank_types).parameters["k"].default == 3


def test_k_zero_and_small_kg():
    kg = TripleStore([("a", "only.rel", "b")])
    assert rank_relations("anything", kg, k=0) == []
    assert rank_relations("anything", kg) == ["only.rel"]


def test_kg_without_types():
    kg = TripleStore([("a", "r", "b")])
    assert rank_types("what film", kg) == []


def _pairs():
    rels = ["film.directed_by", "film.starring", "person.date_of_birth", "film.release_date", "award.won"]
    qs = {
        "who directed the film": ["film.directed_by"],
        "which actors are starring": ["film.starring"],
        "when was the person born birth date": ["person.date_of_birth"],
        "what is the release date": ["film.release_date"],
        "which award was won": ["award.won"],
    }
    return rels, list(qs.items())


def test_ranker_separable_recall():
    rels, pairs = _pairs()
    hist = []
    r = train_ranker(pairs, rels, epochs=40, seed=0, history=hist)
    for q, pos in pairs:
        assert r.rank(q, rels, 1)[0][0] == pos[0]
    assert hist[-1] <= hist[0]


def test_hinge_step_gradient():
    """Analytic hinge step equals a finite-difference descent step on the loss."""
    r = Ranker.init(["a b", "c d", "e f"], dim=4, seed=3)
    r.margin = 10.0
    loss = lambda emb: r.margin - Ranker(r.vocab, emb).score("a b", "c d") + Ranker(r.vocab, emb).score("a b", "e f")  # noqa: E731
    emb0 = r.emb.copy()
    num = np.zeros_like(emb0)
    h = 1e-6
    for idx in np.ndindex(*emb0.shape):
        up, dn = emb0.copy(), emb0.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (loss(up) - loss(dn)) / (2 * h)
    r.hinge_step("a b", "c d", "e f", lr=1.0)
    np.testing.assert_allclose(emb0 - r.emb, num, atol=1e-6)


def test_hinge_zero_when_satisfied():
    r = Ranker.init(["a", "b", "c"], dim=2)
    r.margin = -100.0
    before = r.emb.copy()
    assert r.hinge_step("a", "b", "c", 0.1) == 0.0
    assert np.array_equal(before, r.emb)


def test_types_none_option():
    kg = TripleStore([("x", "rdf:type", "film"), ("y", "rdf:type", "person")])
    r = Ranker.init(["film", "person", "<none>", "which film"], dim=2)
    r.emb[:] = 0
    r.emb[r.vocab["which"]] = [1, 0]
    r.emb[r.vocab["none"]] = [5, 0]
    assert rank_types("which film", kg, ranker=r) == []
    r.emb[r.vocab["film"]] = [9, 0]
    assert rank_types("which film", kg, ranker=r)[0] == "film"


def test_empty_positives_rejected():
    with pytest.raises(DataError):
        train_ranker([("q", [])], ["r"])
    with pytest.raises(DataError):
        train_ranker([], ["r"])


def test_build_pool(store):
    pool = build_pool("films released after 1980", store, entities=["e1", "e1"])
    assert pool.ent == ["e1"]
    assert Literal.make("1980", "year") in pool.val and Literal.make("1", "int") in pool.val
    assert len(pool.rel) == min(DEFAULT_K_REL, len(store.relations()))
    assert pool.cmp == list(enumerate_builtins()[1])
    assert CandidatePool.from_json(pool.to_json()) == pool


def test_ranker_json_roundtrip():
    r = Ranker.init(["a b", "c"], dim=3)
    r2 = Ranker.from_json(r.to_json())
    assert r2.vocab == r.vocab and np.array_equal(r2.emb, r.emb)
