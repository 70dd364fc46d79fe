"""Random graph generators shared by the property tests."""

from __future__ import annotations

import random
from typing import Optional

from qgforge.grammar import (
    ADD_VERTEX,
    FILL_VERTEX,
    OUTLINING,
    FillOp,
    apply_fill,
    apply_outline,
    initial_state,
    legal_fill_instances,
    legal_outline_args,
    state_from_aqg,
)
from qgforge.graph import BUILTIN_INSTANCES, EdgeTag, VertexClass
from qgforge.terms import Literal

C = VertexClass


def random_outline(rng: random.Random, max_n: int = 6):
    """Uniform choice among legal arguments; End is forced once ``max_n`` is reached."""
    s = initial_state()
    while s.phase == OUTLINING:
        ops = legal_outline_args(s)
        if s.n >= max_n and ops and ops[0].kind == ADD_VERTEX:
            ops = [op for op in ops if op.cls is C.END] or ops
        s = apply_outline(s, rng.choice(ops))
    return s


def default_pools():
    return {
        C.ENT: ["e1", "e2", "e3", "e4"],
        C.TYPE: ["t1", "t2"],
        C.VAL: [Literal.make(str(i), "int") for i in (1, 2, 3)] + [Literal.make("2001", "year")],
        EdgeTag.REL: ["r1", "r2", "r3", "r4", "rdf:type", "p.from$$$p.to"],
        **{t: list(v) for t, v in BUILTIN_INSTANCES.items()},
    }


def random_fill(aqg, rng: random.Random, pools: Optional[dict] = None):
    """A random legal assignment (through the grammar's fill checks), or None if a slot has no option."""
    pools = pools or default_pools()
    s = state_from_aqg(aqg)
    while s.phase != "Done":
        kind, slot = s.fill_slot()
        cls = s.vertices[slot].cls if kind == FILL_VERTEX else s.edges[slot].tag
        pool = list(pools.get(cls, [None]))
        rng.shuffle(pool)
        cands = legal_fill_instances(s, pool)
        if not cands:
            return None
        s = apply_fill(s, FillOp(kind, slot, cands[0]))
    return s.query_graph()


def random_graph(rng: random.Random, max_n: int = 6, tries: int = 20):
    for _ in range(tries):
        g = random_fill(random_outline(rng, max_n).aqg(), rng)
        if g is not None:
            return g
    return None
