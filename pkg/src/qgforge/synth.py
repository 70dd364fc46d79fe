"""A small seeded film knowledge graph with templated questions and gold programs."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Callable, Optional

from .kg import EvalError, TripleStore, answers
from .sparql import parse_sparql
from .terms import TYPE_RELATION, Literal

_FIRST = ["alice", "bruno", "chiara", "dmitri", "elena", "farid", "greta", "hugo", "ines", "jonas",
          "keiko", "luca", "maya", "nils", "olga", "pablo", "quinn", "rosa", "sven", "tara"]
_LAST = ["moreau", "okafor", "lindqvist", "castillo", "novak", "haddad", "brennan", "takahashi",
         "rossi", "weber", "silva", "kowalski"]
_ADJ = ["silent", "crimson", "broken", "golden", "hidden", "frozen", "distant", "electric", "lonely",
        "burning", "velvet", "hollow", "restless", "paper", "iron", "midnight"]
_NOUN = ["harbor", "garden", "river", "empire", "signal", "mirror", "horizon", "orchard", "voyage",
         "circus", "lantern", "canyon", "archive", "station"]
_GENRES = ["drama", "comedy", "thriller", "western", "musical"]


@dataclass
class World:
    films: list[str]
    people: list[str]
    actors: list[str]
    directors: list[str]
    directed_by: dict[str, str]
    starring: dict[str, list[str]]
    year: dict[str, int]
    production: dict[str, tuple[int, int]]
    career: dict[str, tuple[str, str]]
    genre: dict[str, str]


def _year(y: int) -> Literal:
    return Literal.make(str(y), "year")


def build_world(seed: int = 0, n_films: int = 30, n_people: int = 24) -> World:
    rng = random.Random(seed)
    names = [f"{f}_{l}" for f in _FIRST for l in _LAST]
    rng.shuffle(names)
    people = sorted(names[:n_people])
    titles = [f"{a}_{n}" for a in _ADJ for n in _NOUN]
    rng.shuffle(titles)
    films = sorted(titles[:n_films])
    directors = sorted(rng.sample(people, max(4, n_people // 3)))
    actors = sorted(p for p in people if p not in directors or rng.random() < 0.3)
    directed_by, starring, year, production, genre = {}, {}, {}, {}, {}
    for f in films:
        directed_by[f] = rng.choice(directors)
        starring[f] = sorted(rng.sample(actors, rng.randint(2, 4)))
        y = rng.randint(1970, 2020)
        year[f] = y
        production[f] = (y - rng.randint(1, 3), y - rng.randint(0, 1))
        genre[f] = rng.choice(_GENRES)
    career = {}
    for p in people:
        if rng.random() < 0.7:
            st = rng.randint(1960, 2005)
            ed = min(2023, st + rng.randint(5, 30))
            career[p] = (f"{st}-{rng.randint(1, 12):02d}-01", f"{ed}-{rng.randint(1, 12):02d}-28")
    return World(films, people, actors, directors, directed_by, starring, year, production, career, genre)


def world_store(w: World) -> TripleStore:
    triples = []
    for f in w.films:
        triples.append((f, TYPE_RELATION, "film"))
        triples.append((f, "film.directed_by", w.directed_by[f]))
        for a in w.starring[f]:
            triples.append((f, "film.starring", a))
        triples.append((f, "film.release_year", _year(w.year[f])))
        st, ed = w.production[f]
        triples.append((f, "production.from", _year(st)))
        triples.append((f, "production.to", _year(ed)))
        triples.append((f, "film.genre", w.genre[f]))
    for p in w.actors:
        triples.append((p, TYPE_RELATION, "actor"))
    for p in w.directors:
        triples.append((p, TYPE_RELATION, "director"))
    for p, (st, ed) in w.career.items():
        triples.append((p, "career.start_date", Literal.make(st, "date")))
        triples.append((p, "career.end_date", Literal.make(ed, "date")))
    return TripleStore(triples)


def _name(x: str) -> str:
    return x.replace("_", " ")


def _y(v: int) -> str:
    return f'"{v}"^^year'


# Each template returns (question, sparql) given the world and an rng.
Template = Callable[[World, random.Random], tuple[str, str]]


def t_director(w, r):
    f = r.choice(w.films)
    return f"who directed {_name(f)}?", f"SELECT ?x WHERE {{ <{f}> <film.directed_by> ?x }}"


def t_films_by(w, r):
    d = r.choice(w.directors)
    return f"which films did {_name(d)} direct?", f"SELECT ?x WHERE {{ ?x <film.directed_by> <{d}> }}"


def t_costars(w, r):
    d = r.choice(w.directors)
    return (
        f"who starred in films directed by {_name(d)}?",
        f"SELECT ?x WHERE {{ ?f <film.directed_by> <{d}> . ?f <film.starring> ?x }}",
    )


def t_typed(w, r):
    f = r.choice(w.films)
    return (
        f"which directors acted in {_name(f)}?",
        f"SELECT ?x WHERE {{ <{f}> <film.starring> ?x . ?x <{TYPE_RELATION}> <director> }}",
    )


def t_count(w, r):
    a = r.choice(w.actors)
    return (
        f"how many films did {_name(a)} star in?",
        f"SELECT (COUNT(?f) AS ?x) WHERE {{ ?f <film.starring> <{a}> }}",
    )


def t_after(w, r):
    a = r.choice(w.actors)
    y = r.choice(sorted(w.year.values()))
    return (
        f"which films starring {_name(a)} were released after {y}?",
        f"SELECT ?x WHERE {{ ?x <film.starring> <{a}> . ?x <film.release_year> ?y . FILTER(?y > {_y(y)}) }}",
    )


def t_earliest(w, r):
    a = r.choice(w.actors)
    return (
        f"what is the earliest film starring {_name(a)}?",
        f"SELECT ?x WHERE {{ ?x <film.starring> <{a}> . ?x <film.release_year> ?y }} ORDER BY ASC(?y) LIMIT 1",
    )


def t_first_year(w, r):
    d = r.choice(w.directors)
    return (
        f"in what year did {_name(d)} release a first film?",
        f"SELECT (MIN(?y) AS ?x) WHERE {{ ?f <film.directed_by> <{d}> . ?f <film.release_year> ?y }}",
    )


def t_ask(w, r):
    f = r.choice(w.films)
    a = r.choice(w.starring[f] if r.random() < 0.5 else w.actors)
    return f"did {_name(a)} star in {_name(f)}?", f"ASK WHERE {{ <{f}> <film.starring> <{a}> }}"


def t_coactors_earliest(w, r):
    a = r.choice(w.actors)
    return (
        f"who acted in the earliest film of {_name(a)}?",
        "SELECT ?x WHERE { "
        f"?f <film.starring> ?x . "
        f"{{ SELECT ?f1 WHERE {{ ?f1 <film.starring> <{a}> . ?f1 <film.release_year> ?y }} ORDER BY ASC(?y) LIMIT 1 }} "
        "FILTER(?f = ?f1) }",
    )


def t_latest_year(w, r):
    a = r.choice(w.actors)
    d = r.choice(w.directors)
    return (
        f"which films starring {_name(a)} came out in the latest year of a film by {_name(d)}?",
        "SELECT ?x WHERE { "
        f"?x <film.starring> <{a}> . ?x <film.release_year> ?y . "
        f"{{ SELECT (MAX(?y2) AS ?m) WHERE {{ ?f <film.directed_by> <{d}> . ?f <film.release_year> ?y2 }} }} "
        "FILTER(?y = ?m) }",
    )


def t_during(w, r):
    p = r.choice(sorted(w.career))
    return (
        f"which films were produced during the career of {_name(p)}?",
        "SELECT ?x WHERE { "
        "?x <production.from> ?a . ?x <production.to> ?b . "
        f"<{p}> <career.start_date> ?s . <{p}> <career.end_date> ?e . "
        "FILTER(?a >= ?s && ?b <= ?e) }",
    )


def t_overlap(w, r):
    y = r.randint(1975, 2018)
    return (
        f"which films were in production in {y}?",
        "SELECT ?x WHERE { "
        "?x <production.from> ?a . ?x <production.to> ?b . "
        f"FILTER(?a <= {_y(y)} && ?b >= {_y(y)}) }}",
    )


def t_exists(w, r):
    a = r.choice(w.actors)
    y = r.choice(sorted(w.year.values()))
    return (
        f"which films with {_name(a)} are not older than {y}?",
        "SELECT ?x WHERE { "
        f"?x <film.starring> <{a}> . "
        f"FILTER(EXISTS {{ ?x <film.release_year> ?y . FILTER(?y >= {_y(y)}) }} "
        "|| NOT EXISTS { ?x <film.release_year> ?y2 }) }",
    )


def t_x_intention(w, r):
    a = r.choice(w.actors)
    d = r.choice(w.directors)
    return (
        f"which films starring {_name(a)} were directed by {_name(d)}?",
        f"SELECT ?x WHERE {{ ?x <film.starring> <{a}> . {{ SELECT ?x WHERE {{ ?x <film.directed_by> <{d}> }} }} }}",
    )


def t_genre(w, r):
    d = r.choice(w.directors)
    return (
        f"what genres has {_name(d)} directed?",
        f"SELECT ?x WHERE {{ ?f <film.directed_by> <{d}> . ?f <film.genre> ?x }}",
    )


TEMPLATES: dict[str, Template] = {
    "director": t_director,
    "films_by": t_films_by,
    "costars": t_costars,
    "typed": t_typed,
    "count": t_count,
    "after": t_after,
    "earliest": t_earliest,
    "first_year": t_first_year,
    "ask": t_ask,
    "coactors_earliest": t_coactors_earliest,
    "latest_year": t_latest_year,
    "during": t_during,
    "overlap": t_overlap,
    "exists": t_exists,
    "x_intention": t_x_intention,
    "genre": t_genre,
}


def generate_dataset(
    w: World,
    store: TripleStore,
    n: int,
    seed: int = 0,
    templates: Optional[list[str]] = None,
    prefix: str = "q",
    require_answers: bool = True,
) -> list[dict]:
    """``n`` examples cycling through the templates; programs with empty answers are resampled."""
    rng = random.Random(seed)
    names = templates or list(TEMPLATES)
    out, seen = [], set()
    i = 0
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n:
            raise RuntimeError("could not generate enough distinct examples")
        name = names[i % len(names)]
        q, sparql = TEMPLATES[name](w, rng)
        if sparql in seen:
            i += 1 if attempts % 50 == 0 else 0
            continue
        if require_answers:
            try:
                ans = answers(store, parse_sparql(sparql))
            except EvalError:
                continue
            if not ans or (len(ans) == 1 and ans[0] is False and rng.random() < 0.5):
                continue
        seen.add(sparql)
        out.append({"id": f"{prefix}{len(out):04d}", "question": q, "sparql": sparql, "template": name})
        i += 1
    return out


def write_jsonl(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
