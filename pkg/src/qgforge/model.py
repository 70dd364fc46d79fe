"""Neural scorer: shared text encoder, graph encoder, outline decoder and two fill decoders.

Parameters live in float64 tensors; checkpoints store them as float32.
Training uses teacher forcing over whole batches and plain gradient descent.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from .candidates import CandidatePool, DataError
from .graph import (
    AGG_INSTANCES,
    CMP_INSTANCES,
    EDGE_CLASSES,
    EDGE_TAGS,
    MAX_VERTICES,
    ORD_INSTANCES,
    EdgeClass,
    VertexClass,
)
from .grammar import (
    ADD_EDGE,
    ADD_VERTEX,
    FILL_VERTEX,
    OUTLINE_VERTEX_CLASSES,
    SELECT_VERTEX,
    FillOp,
    GenerationState,
    IllegalOp,
    OutlineOp,
    apply_fill,
    apply_outline,
    forced_instance,
    initial_state,
    legal_add_edge,
    legal_add_vertex,
    legal_fill_instances,
    legal_select,
    slot_class,
    state_from_aqg,
)
from .supervision import SupervisionSequences
from .terms import COMBINED_SEP, Literal, tokenize_name

MAGIC = b"QGFORGE1"
GNN_ROUNDS = 3
MAX_EDGES = MAX_VERTICES - 1
VCOPY_NONE = MAX_VERTICES
ECOPY_NONE = MAX_EDGES
N_SEGMENTS = 16

VCLS_INDEX = {c: i for i, c in enumerate(OUTLINE_VERTEX_CLASSES)}
ECLS_INDEX = {ec: i for i, ec in enumerate(EDGE_CLASSES)}
TAG_INDEX = {t: i for i, t in enumerate(EDGE_TAGS)}
_BUILTINS = frozenset(ORD_INSTANCES + CMP_INSTANCES + AGG_INSTANCES)


class EmptyInput(ValueError):
    pass


class DeadState(RuntimeError):
    """Every candidate argument is masked."""


class EmptyPool(RuntimeError):
    """A free fill slot has no legal candidate."""


class CheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tokens
# ---------------------------------------------------------------------------

_WORD = re.compile(r"[0-9a-z]+")


def question_tokens(text: str) -> list[str]:
    return _WORD.findall(text.lower())


def instance_tokens(inst) -> list[str]:
    if isinstance(inst, Literal):
        return [f"<{inst.kind}>"] + inst.tokens()
    if inst in _BUILTINS:
        return [f"<{inst}>"]
    toks = tokenize_name(inst)
    if COMBINED_SEP in inst:
        toks.append("<interval>")
    return toks or [inst]


@dataclass
class Vocab:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, questions: Iterable[str], instances: Iterable = ()) -> "Vocab":
        toks = set()
        for q in questions:
            toks.update(question_tokens(q))
        for inst in instances:
            toks.update(instance_tokens(inst))
        toks.update(f"<{b}>" for b in _BUILTINS)
        toks.update(f"<{k}>" for k in ("int", "dec", "date", "year", "str"))
        toks.add("<interval>")
        toks.discard("<unk>")
        return cls(["<unk>"] + sorted(toks))

    def ids(self, toks: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in toks]

    def __len__(self) -> int:
        return len(self.itos)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def param_shapes(vocab_size: int, d: int) -> dict[str, tuple[int, ...]]:
    shapes = {
        "tok_emb": (vocab_size, d),
        "W_q": (d, d),
        "b_q": (d,),
        "vertex_cls": (len(OUTLINE_VERTEX_CLASSES), d),
        "edge_cls": (len(EDGE_CLASSES), d),
        "edge_tag": (len(EDGE_TAGS), d),
        "G_role": (4, d),
        "z_delta": (2, d),
        "segment": (N_SEGMENTS, d),
        "G_self": (d, d),
        "G_nbr": (d, d),
        "G_b": (d,),
        "W_a": (d, d),
        "W_in": (d, 2 * d),
        "U": (d, d),
        "V": (d, d),
        "b_h": (d,),
        "W_av": (d, d),
        "W_delta": (d, d),
        "W_sv": (d, d),
        "W_cv": (d, d),
        "W_ae": (d, d),
        "W_ce": (d, d),
        "none_v": (d,),
        "none_e": (d,),
    }
    for s in ("fv", "fe"):
        shapes.update({
            f"{s}_A": (d, d),
            f"{s}_in": (d, 3 * d),
            f"{s}_U": (d, d),
            f"{s}_V": (d, d),
            f"{s}_b": (d,),
            f"{s}_out": (d, d),
        })
    return shapes


def _tanh_lin(W: torch.Tensor, x: torch.Tensor, b: Optional[torch.Tensor] = None) -> torch.Tensor:
    y = x @ W.T
    return torch.tanh(y if b is None else y + b)


def _attend(query: torch.Tensor, A: torch.Tensor, Q: torch.Tensor, qmask: torch.Tensor) -> torch.Tensor:
    """softmax_i(query^T A q_i) weighted sum of q_i; query (B,d), Q (B,M,d), qmask (B,M)."""
    scores = torch.einsum("bd,bmd->bm", query @ A, Q)
    scores = scores.masked_fill(~qmask, float("-inf"))
    w = torch.softmax(scores, dim=-1)
    return torch.einsum("bm,bmd->bd", w, Q)


def _masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return torch.log_softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


# ---------------------------------------------------------------------------
# graph batches
# ---------------------------------------------------------------------------


@dataclass
class GraphIndex:
    """Index tensors describing a list of (partial) graphs as one pseudo-graph."""

    n_graphs: int
    vcls: torch.Tensor
    vseg: torch.Tensor
    vrow: torch.Tensor
    vslot: torch.Tensor
    ecls: torch.Tensor
    erow: torch.Tensor
    eslot: torch.Tensor
    node_graph: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    role: torch.Tensor
    n_nodes: int

    @classmethod
    def build(cls, graphs: Sequence) -> "GraphIndex":
        vcls, vseg, vrow, vslot = [], [], [], []
        ecls, erow, eslot = [], [], []
        node_graph, src, dst, role = [], [], [], []
        row = 0
        for gi, g in enumerate(graphs):
            base = row
            for v in g.vertices:
                vcls.append(VCLS_INDEX[v.cls])
                vseg.append(min(v.segment, N_SEGMENTS - 1))
                vrow.append(row)
                vslot.append(gi * MAX_VERTICES + v.id)
                node_graph.append(gi)
                row += 1
            nv = len(g.vertices)
            for e in g.edges:
                ecls.append(TAG_INDEX[e.tag])
                erow.append(row)
                eslot.append(gi * MAX_EDGES + e.id)
                node_graph.append(gi)
                # roles: edge->head, head->edge, edge->tail, tail->edge
                for r, end in ((0, e.head), (2, e.tail)):
                    src += [row, base + end]
                    dst += [base + end, row]
                    role += [r, r + 1]
                row += 1
            assert row == base + nv + len(g.edges)
        t = lambda x: torch.tensor(x, dtype=torch.long)
        return cls(len(graphs), t(vcls), t(vseg), t(vrow), t(vslot), t(ecls), t(erow), t(eslot),
                   t(node_graph), t(src), t(dst), t(role), row)


# ---------------------------------------------------------------------------
# scorer
# ---------------------------------------------------------------------------


@dataclass
class QuestionContext:
    """Per-question encodings reused across all decoding steps."""

    question: str
    Q: torch.Tensor
    pooled: torch.Tensor
    pool: CandidatePool
    instances: list
    inst_index: dict
    inst_vecs: torch.Tensor


@dataclass
class FillScores:
    """Fill-decoder scores of one AQG: ``scores[t, j]`` for slot t and instance j."""

    scores: torch.Tensor


class Scorer:
    def __init__(self, vocab: Vocab, d: int, seed: int, params: dict[str, torch.Tensor], extra: Optional[dict] = None):
        self.vocab = vocab
        self.d = d
        self.seed = seed
        self.params = params
        self.extra = extra or {}

    # -- construction ----------------------------------------------------
    @classmethod
    def init(cls, vocab: Vocab, d: int = 64, seed: int = 0) -> "Scorer":
        gen = torch.Generator().manual_seed(seed)
        params = {}
        for name, shape in param_shapes(len(vocab), d).items():
            if len(shape) == 1 and name.startswith(("b_", "G_b", "fv_b", "fe_b")):
                params[name] = torch.zeros(shape, dtype=torch.float64)
            else:
                params[name] = (torch.rand(shape, generator=gen, dtype=torch.float64) * 0.2 - 0.1)
        for p in params.values():
            p.requires_grad_(True)
        return cls(vocab, d, seed, params)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    # -- text encoders ---------------------------------------------------
    def _token_vectors(self, ids: torch.Tensor) -> torch.Tensor:
        return _tanh_lin(self["W_q"], self["tok_emb"][ids], self["b_q"])

    def encode_question(self, text: str) -> tuple[torch.Tensor, torch.Tensor]:
        toks = question_tokens(text)
        if not toks:
            raise EmptyInput("question has no tokens")
        Q = self._token_vectors(torch.tensor(self.vocab.ids(toks), dtype=torch.long))
        return Q, Q.mean(dim=0)

    def encode_instances(self, instances: Sequence) -> torch.Tensor:
        if not instances:
            return torch.zeros((0, self.d), dtype=torch.float64)
        ids = []
        for inst in instances:
            toks = instance_tokens(inst)
            if not toks:
                raise EmptyInput(f"instance {inst!r} has no tokens")
            ids.append(self.vocab.ids(toks))
        L = max(len(x) for x in ids)
        pad = torch.zeros((len(ids), L), dtype=torch.long)
        mask = torch.zeros((len(ids), L), dtype=torch.bool)
        for i, x in enumerate(ids):
            pad[i, : len(x)] = torch.tensor(x)
            mask[i, : len(x)] = True
        H = self._token_vectors(pad)
        H = H.masked_fill(~mask[..., None], float("-inf"))
        return H.max(dim=1).values

    def encode_instance(self, inst) -> torch.Tensor:
        return self.encode_instances([inst])[0]

    # -- graph encoder ---------------------------------------------------
    def encode_graph_index(self, gi: GraphIndex) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(h_G (G,d), vertex vectors (G,15,d), edge vectors (G,14,d))."""
        d, G = self.d, gi.n_graphs
        X = torch.zeros((gi.n_nodes, d), dtype=torch.float64)
        if gi.n_nodes:
            vfeat = self["vertex_cls"][gi.vcls] + self["segment"][gi.vseg]
            X = X.index_copy(0, gi.vrow, vfeat)
            if len(gi.erow):
                X = X.index_copy(0, gi.erow, self["edge_tag"][gi.ecls])
            deg = torch.zeros(gi.n_nodes, dtype=torch.float64).index_add(
                0, gi.dst, torch.ones(len(gi.dst), dtype=torch.float64)
            ).clamp(min=1.0)
            H = X
            for _ in range(GNN_ROUNDS):
                M = torch.zeros_like(H).index_add(0, gi.dst, H[gi.src] + self["G_role"][gi.role]) / deg[:, None]
                H = torch.tanh(H @ self["G_self"].T + M @ self["G_nbr"].T + self["G_b"])
        else:
            H = X
        counts = torch.zeros(G, dtype=torch.float64).index_add(
            0, gi.node_graph, torch.ones(gi.n_nodes, dtype=torch.float64)
        ).clamp(min=1.0)
        hG = torch.zeros((G, d), dtype=torch.float64).index_add(0, gi.node_graph, H) / counts[:, None]
        VV = torch.zeros((G * MAX_VERTICES, d), dtype=torch.float64)
        EV = torch.zeros((G * MAX_EDGES, d), dtype=torch.float64)
        if gi.n_nodes:
            VV = VV.index_copy(0, gi.vslot, H[gi.vrow])
            if len(gi.erow):
                EV = EV.index_copy(0, gi.eslot, H[gi.erow])
        return hG, VV.view(G, MAX_VERTICES, d), EV.view(G, MAX_EDGES, d)

    def encode_graph(self, g) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """h_G, per-vertex and per-edge vectors of a single graph."""
        hG, VV, EV = self.encode_graph_index(GraphIndex.build([g]))
        return hG[0], VV[0, : len(g.vertices)], EV[0, : len(g.edges)]

    def attend(self, hG: torch.Tensor, Q: torch.Tensor) -> torch.Tensor:
        qmask = torch.ones(Q.shape[0], dtype=torch.bool)
        return _attend(hG[None], self["W_a"], Q[None], qmask[None])[0]

    # -- decoder cells ---------------------------------------------------
    def _outline_cell(self, h, hG, Q, qmask):
        hQ = _attend(hG, self["W_a"], Q, qmask)
        h_in = torch.tanh(torch.cat([hQ, hG], dim=-1) @ self["W_in"].T)
        return torch.tanh(h @ self["U"].T + h_in @ self["V"].T + self["b_h"])

    def _fill_cell(self, s: str, h, slot, hGa, Q, qmask):
        hQ = _attend(slot, self[f"{s}_A"], Q, qmask)
        h_in = torch.tanh(torch.cat([hQ, hGa, slot], dim=-1) @ self[f"{s}_in"].T)
        return torch.tanh(h @ self[f"{s}_U"].T + h_in @ self[f"{s}_V"].T + self[f"{s}_b"])

    def _outline_logits(self, h, VV, EV) -> dict[str, torch.Tensor]:
        """Head logits for states h (...,d), vertex vectors (...,15,d), edge vectors (...,14,d)."""
        def head(W):
            return torch.tanh(h @ W.T)
        vcand = torch.cat([VV, self["none_v"].expand(*VV.shape[:-2], 1, self.d)], dim=-2)
        ecand = torch.cat([EV, self["none_e"].expand(*EV.shape[:-2], 1, self.d)], dim=-2)
        return {
            "cls": head(self["W_av"]) @ self["vertex_cls"].T,
            "delta": head(self["W_delta"]) @ self["z_delta"].T,
            "vcopy": torch.einsum("...d,...kd->...k", head(self["W_cv"]), vcand),
            "select": torch.einsum("...d,...kd->...k", head(self["W_sv"]), VV),
            "ecls": head(self["W_ae"]) @ self["edge_cls"].T,
            "ecopy": torch.einsum("...d,...kd->...k", head(self["W_ce"]), ecand),
        }

    # -- incremental decoding API ----------------------------------------
    def context(self, question: str, pool: CandidatePool) -> QuestionContext:
        Q, pooled = self.encode_question(question)
        instances = []
        for kind in ("ent", "type", "val", "rel", "ord", "cmp", "agg"):
            for x in getattr(pool, kind):
                if x not in instances:
                    instances.append(x)
        vecs = self.encode_instances(instances)
        return QuestionContext(question, Q, pooled, pool, instances, {x: i for i, x in enumerate(instances)}, vecs)

    def outline_step(
        self, ctx: QuestionContext, hs: Optional[torch.Tensor], states: Sequence[GenerationState], strict: bool = True
    ):
        """Advance the outline decoder for each state and score its legal arguments.

        Returns the new decoder states (K,d) and, per state, a list of
        ``(OutlineOp, log-probability)`` in candidate order. A state without
        legal arguments raises DeadState, or yields an empty list when
        ``strict`` is off.
        """
        K = len(states)
        if hs is None:
            hs = ctx.pooled.expand(K, self.d)
        hG, VV, EV = self.encode_graph_index(GraphIndex.build(states))
        Q = ctx.Q.expand(K, *ctx.Q.shape)
        qmask = torch.ones(Q.shape[:2], dtype=torch.bool)
        h_new = self._outline_cell(hs, hG, Q, qmask)
        logits = self._outline_logits(h_new, VV, EV)
        out = []
        for k, st in enumerate(states):
            lg = {name: x[k] for name, x in logits.items()}
            kind = st.next_kind()
            if kind == ADD_VERTEX:
                cands = _add_vertex_logprobs(lg, legal_add_vertex(st))
                ops = [(OutlineOp.add_vertex(c, dl, cp), lp) for (c, dl, cp), lp in cands]
            elif kind == SELECT_VERTEX:
                cands = _select_logprobs(lg, legal_select(st))
                ops = [(OutlineOp.select_vertex(u), lp) for u, lp in cands]
            else:
                cands = _add_edge_logprobs(lg, legal_add_edge(st))
                ops = [(OutlineOp.add_edge(ec, cp), lp) for (ec, cp), lp in cands]
            if not ops and strict:
                raise DeadState(f"no legal {kind} argument at step {st.t}")
            out.append(ops)
        return h_new, out

    def fill_scores(self, ctx: QuestionContext, aqg) -> tuple[FillScores, FillScores]:
        """Vertex-fill and edge-fill score tables of an AQG over the context instances.

        The fill decoders read only the AQG and the question, so every beam
        entry filling the same AQG shares these tables.
        """
        n, m = len(aqg.vertices), len(aqg.edges)
        hGa, VV, EV = self.encode_graph_index(GraphIndex.build([aqg]))
        qmask = torch.ones((1, ctx.Q.shape[0]), dtype=torch.bool)
        res = []
        for s, slots, count in (("fv", VV[0], n), ("fe", EV[0], m)):
            h = ctx.pooled[None]
            rows = []
            for t in range(count):
                h = self._fill_cell(s, h, slots[t][None], hGa, ctx.Q[None], qmask)
                rows.append(h)
            if rows:
                u = torch.tanh(torch.cat(rows) @ self[f"{s}_out"].T)
                res.append(FillScores(u @ ctx.inst_vecs.T))
            else:
                res.append(FillScores(torch.zeros((0, len(ctx.instances)), dtype=torch.float64)))
        return res[0], res[1]

    def fill_candidates(self, ctx: QuestionContext, table: FillScores, st: GenerationState):
        """``(forced, [(instance, log-probability)])`` for the current fill slot of ``st``."""
        forced, inst = forced_instance(st)
        if forced:
            if not legal_fill_instances(st, ()):
                raise EmptyPool("forced instance violates the slot constraints")
            return True, [(inst, 0.0)]
        kind, slot = st.fill_slot()
        legal = legal_fill_instances(st, ctx.pool.instances(slot_class(st).value))
        if not legal:
            raise EmptyPool(f"no legal candidate for {kind}({slot})")
        idx = torch.tensor([ctx.inst_index[x] for x in legal], dtype=torch.long)
        lp = torch.log_softmax(table.scores[slot, idx], dim=0)
        return False, list(zip(legal, lp.tolist()))

    def sequence_logprob(self, question: str, pool: CandidatePool, seq: SupervisionSequences) -> float:
        """Log-probability of a full operator sequence through the decoding API."""
        with torch.no_grad():
            ctx = self.context(question, pool)
            st, h, total = initial_state(), None, 0.0
            for op in seq.outline:
                h, cands = self.outline_step(ctx, h, [st])
                lp = dict(cands[0]).get(op)
                if lp is None:
                    raise IllegalOp(f"{op} is masked")
                total += lp
                st = apply_outline(st, op)
            fv, fe = self.fill_scores(ctx, st.aqg())
            for op in seq.fill_ops():
                table = fv if op.kind == FILL_VERTEX else fe
                _, cands = self.fill_candidates(ctx, table, st)
                lp = dict(cands).get(op.instance)
                if lp is None:
                    raise IllegalOp(f"{op} is masked")
                total += lp
                st = apply_fill(st, op)
        return total

    # -- teacher forcing -------------------------------------------------
    def loss(self, batch: Sequence["Plan"]) -> torch.Tensor:
        """Mean over the batch of the summed negative gold log-probabilities."""
        B = len(batch)
        d = self.d
        # question tokens
        M = max(len(p.q_ids) for p in batch)
        qids = torch.zeros((B, M), dtype=torch.long)
        qmask = torch.zeros((B, M), dtype=torch.bool)
        for b, p in enumerate(batch):
            qids[b, : len(p.q_ids)] = torch.tensor(p.q_ids)
            qmask[b, : len(p.q_ids)] = True
        Q = self._token_vectors(qids)
        pooled = (Q * qmask[..., None]).sum(1) / qmask.sum(1, keepdim=True)

        # every prefix graph of every example in one pseudo-graph
        graphs, offsets = [], []
        for p in batch:
            offsets.append(len(graphs))
            graphs.extend(p.prefixes)
        hG_all, VV_all, EV_all = self.encode_graph_index(GraphIndex.build(graphs))

        T = max(p.T for p in batch)
        gidx = torch.zeros((B, T), dtype=torch.long)
        for b, p in enumerate(batch):
            gidx[b, : p.T] = offsets[b] + torch.arange(p.T)
            gidx[b, p.T:] = offsets[b]
        hG = hG_all[gidx]
        h = pooled
        hs = []
        for t in range(T):
            h = self._outline_cell(h, hG[:, t], Q, qmask)
            hs.append(h)
        H = torch.stack(hs, dim=1)
        logits = self._outline_logits(H, VV_all[gidx], EV_all[gidx])
        total = torch.zeros((), dtype=torch.float64)
        tg = _collate_outline(batch, T)
        for head, gold, mask, active in tg:
            lp = _masked_log_softmax(logits[head], mask).gather(-1, gold[..., None])[..., 0]
            total = total - (lp * active).sum()

        # fill decoders
        inst_all, inst_pos = [], {}
        for p in batch:
            for x in p.instances:
                if x not in inst_pos:
                    inst_pos[x] = len(inst_all)
                    inst_all.append(x)
        ivecs = self.encode_instances(inst_all)
        aqg_idx = torch.tensor([offsets[b] + p.T - 1 for b, p in enumerate(batch)], dtype=torch.long)
        # the prefix before End is the finished AQG
        hGa = hG_all[aqg_idx]
        for s, slots_all, attr in (("fv", VV_all[aqg_idx], "vfill"), ("fe", EV_all[aqg_idx], "efill")):
            S = max(len(getattr(p, attr)) for p in batch)
            if S == 0:
                continue
            h = pooled
            rows = []
            for t in range(S):
                h = self._fill_cell(s, h, slots_all[:, t], hGa, Q, qmask)
                rows.append(h)
            U = torch.tanh(torch.stack(rows, dim=1) @ self[f"{s}_out"].T)  # (B,S,d)
            P = max(len(p.instances) for p in batch)
            iidx = torch.zeros((B, P), dtype=torch.long)
            for b, p in enumerate(batch):
                iidx[b, : len(p.instances)] = torch.tensor([inst_pos[x] for x in p.instances])
            scores = torch.einsum("bsd,bpd->bsp", U, ivecs[iidx])
            gold = torch.zeros((B, S), dtype=torch.long)
            mask = torch.ones((B, S, P), dtype=torch.bool)
            active = torch.zeros((B, S), dtype=torch.float64)
            for b, p in enumerate(batch):
                for t, step in enumerate(getattr(p, attr)):
                    if step is None:
                        continue
                    g, legal = step
                    gold[b, t] = g
                    mask[b, t] = False
                    mask[b, t, legal] = True
                    active[b, t] = 1.0
            lp = _masked_log_softmax(scores, mask).gather(-1, gold[..., None])[..., 0]
            total = total - (lp * active).sum()
        return total / B

    # -- checkpoints -----------------------------------------------------
    def to_bytes(self) -> bytes:
        names = list(param_shapes(len(self.vocab), self.d))
        header = {
            "version": 1,
            "d": self.d,
            "seed": self.seed,
            "vocab": self.vocab.itos,
            "arrays": [[n, list(self.params[n].shape)] for n in names],
            "extra": self.extra,
        }
        hb = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        parts = [MAGIC, struct.pack("<I", len(hb)), hb]
        for n in names:
            parts.append(self.params[n].detach().numpy().astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Scorer":
        if data[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not a qgforge checkpoint (bad magic)")
        off = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", data, off)
        off += 4
        try:
            header = json.loads(data[off: off + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        off += hlen
        if header.get("version") != 1:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        vocab = Vocab(header["vocab"])
        d = header["d"]
        expected = param_shapes(len(vocab), d)
        params = {}
        for name, shape in header["arrays"]:
            if tuple(shape) != expected.get(name):
                raise CheckpointError(f"array {name} has shape {shape}, expected {expected.get(name)}")
            count = int(np.prod(shape))
            end = off + 4 * count
            if end > len(data):
                raise CheckpointError("truncated checkpoint")
            arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape)
            params[name] = torch.tensor(arr.astype(np.float64), dtype=torch.float64, requires_grad=True)
            off = end
        if set(params) != set(expected):
            raise CheckpointError(f"missing arrays: {sorted(set(expected) - set(params))}")
        if off != len(data):
            raise CheckpointError("trailing bytes after the last array")
        return cls(vocab, d, header["seed"], params, header.get("extra") or {})

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Scorer":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# structured log-probabilities for decoding
# ---------------------------------------------------------------------------


def _lsm_subset(logits: torch.Tensor, idx: list[int]) -> dict[int, float]:
    vals = torch.log_softmax(logits[torch.tensor(idx, dtype=torch.long)], dim=0).tolist()
    return dict(zip(idx, vals))


def _add_vertex_logprobs(lg, legal):
    """log p(c) + log p(delta | c) + log p(copy | c, delta) over the legal triples."""
    by_cls: dict[int, dict[int, list[int]]] = {}
    for c, dl, cp in legal:
        by_cls.setdefault(VCLS_INDEX[c], {}).setdefault(dl, []).append(VCOPY_NONE if cp is None else cp)
    lc = _lsm_subset(lg["cls"], sorted(by_cls))
    out = []
    cache = {}
    for c, dl, cp in legal:
        ci = VCLS_INDEX[c]
        if ci not in cache:
            ld = _lsm_subset(lg["delta"], sorted(by_cls[ci]))
            cache[ci] = (ld, {x: _lsm_subset(lg["vcopy"], sorted(ks)) for x, ks in by_cls[ci].items()})
        ld, lk = cache[ci]
        k = VCOPY_NONE if cp is None else cp
        out.append(((c, dl, cp), lc[ci] + ld[dl] + lk[dl][k]))
    return out


def _select_logprobs(lg, legal):
    ls = _lsm_subset(lg["select"], sorted(legal)) if legal else {}
    return [(u, ls[u]) for u in legal]


def _add_edge_logprobs(lg, legal):
    by_cls: dict[int, list[int]] = {}
    for ec, cp in legal:
        by_cls.setdefault(ECLS_INDEX[ec], []).append(ECOPY_NONE if cp is None else cp)
    if not by_cls:
        return []
    le = _lsm_subset(lg["ecls"], sorted(by_cls))
    lk = {ci: _lsm_subset(lg["ecopy"], sorted(ks)) for ci, ks in by_cls.items()}
    out = []
    for ec, cp in legal:
        ci = ECLS_INDEX[ec]
        out.append(((ec, cp), le[ci] + lk[ci][ECOPY_NONE if cp is None else cp]))
    return out


# ---------------------------------------------------------------------------
# teacher-forcing plans
# ---------------------------------------------------------------------------


@dataclass
class Plan:
    """Precomputed teacher-forcing targets and masks for one example."""

    q_ids: list[int]
    prefixes: list  # graph before each outline step
    outline: list  # per step: (kind, targets)
    instances: list
    vfill: list  # per vertex slot: None (forced) or (gold index, legal indices)
    efill: list

    @property
    def T(self) -> int:
        return len(self.outline)


def make_plan(vocab: Vocab, question: str, seq: SupervisionSequences, pool: CandidatePool) -> Plan:
    """Replay the gold sequence and record every mask; raises IllegalOp on masked gold."""
    toks = question_tokens(question)
    if not toks:
        raise EmptyInput("question has no tokens")
    st = initial_state()
    prefixes, steps = [], []
    for op in seq.outline:
        prefixes.append(st.query_graph())
        kind = st.next_kind()
        if op.kind != kind:
            raise IllegalOp(f"step {st.t} expects {kind}, got {op.kind}")
        if kind == ADD_VERTEX:
            legal = legal_add_vertex(st)
            if (op.cls, op.delta, op.copy) not in legal:
                raise IllegalOp(f"gold AddVertex at step {st.t} is masked")
            c = VCLS_INDEX[op.cls]
            cls_ok = sorted({VCLS_INDEX[x] for x, _, _ in legal})
            d_ok = sorted({dl for x, dl, _ in legal if x is op.cls})
            k_ok = sorted({VCOPY_NONE if k is None else k for x, dl, k in legal if x is op.cls and dl == op.delta})
            k = VCOPY_NONE if op.copy is None else op.copy
            steps.append((ADD_VERTEX, [("cls", c, cls_ok), ("delta", op.delta, d_ok), ("vcopy", k, k_ok)]))
        elif kind == SELECT_VERTEX:
            legal = legal_select(st)
            if op.vertex not in legal:
                raise IllegalOp(f"gold SelectVertex at step {st.t} is masked")
            steps.append((SELECT_VERTEX, [("select", op.vertex, sorted(legal))]))
        else:
            legal = legal_add_edge(st)
            if (op.cls, op.copy) not in legal:
                raise IllegalOp(f"gold AddEdge at step {st.t} is masked")
            c = ECLS_INDEX[op.cls]
            cls_ok = sorted({ECLS_INDEX[x] for x, _ in legal})
            k_ok = sorted({ECOPY_NONE if k is None else k for x, k in legal if x == op.cls})
            k = ECOPY_NONE if op.copy is None else op.copy
            steps.append((ADD_EDGE, [("ecls", c, cls_ok), ("ecopy", k, k_ok)]))
        st = apply_outline(st, op, check=False)

    gold_extra: dict[str, list] = {}
    tmp = st
    for op in seq.fill_ops():
        cls = slot_class(tmp).value
        if op.instance is not None:
            kind = {"Ent": "ent", "Type": "type", "Val": "val", "Rel": "rel"}.get(cls)
            if kind:
                gold_extra.setdefault(kind, []).append(op.instance)
        tmp = apply_fill(tmp, op, check=False)
    pool = pool.with_extra(**gold_extra)
    instances = []
    for kind in ("ent", "type", "val", "rel", "ord", "cmp", "agg"):
        for x in getattr(pool, kind):
            if x not in instances:
                instances.append(x)
    index = {x: i for i, x in enumerate(instances)}
    vfill, efill = [], []
    for op in seq.fill_ops():
        forced, _ = forced_instance(st)
        if forced:
            entry = None
        else:
            legal = legal_fill_instances(st, pool.instances(slot_class(st).value))
            if op.instance not in legal:
                raise IllegalOp(f"gold {op.kind}({op.slot}) = {op.instance!r} is masked")
            entry = (index[op.instance], [index[x] for x in legal])
        (vfill if op.kind == FILL_VERTEX else efill).append(entry)
        st = apply_fill(st, op)
    return Plan(vocab.ids(toks), prefixes, steps, instances, vfill, efill)


_HEAD_SIZES = {"cls": len(OUTLINE_VERTEX_CLASSES), "delta": 2, "vcopy": MAX_VERTICES + 1,
               "select": MAX_VERTICES, "ecls": len(EDGE_CLASSES), "ecopy": MAX_EDGES + 1}


def _collate_outline(batch: Sequence[Plan], T: int):
    B = len(batch)
    out = []
    for head, size in _HEAD_SIZES.items():
        gold = torch.zeros((B, T), dtype=torch.long)
        mask = torch.ones((B, T, size), dtype=torch.bool)
        active = torch.zeros((B, T), dtype=torch.float64)
        for b, p in enumerate(batch):
            for t, (_, targets) in enumerate(p.outline):
                for name, g, ok in targets:
                    if name != head:
                        continue
                    gold[b, t] = g
                    mask[b, t] = False
                    mask[b, t, ok] = True
                    active[b, t] = 1.0
        out.append((head, gold, mask, active))
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    lr: float = 2e-4
    epochs: int = 30
    seed: int = 0
    d: int = 64
    batch_size: int = 16
    clip: Optional[float] = None


def train(
    model: Scorer,
    plans: Sequence[Plan],
    config: TrainConfig,
    history: Optional[list] = None,
) -> Scorer:
    """Plain gradient descent on shuffled minibatches; deterministic under ``config.seed``."""
    if not plans:
        raise DataError("empty training corpus")
    torch.set_num_threads(1)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.epochs):
        order = rng.permutation(len(plans))
        total = 0.0
        for start in range(0, len(plans), config.batch_size):
            batch = [plans[i] for i in order[start: start + config.batch_size]]
            for p in model.params.values():
                p.grad = None
            loss = model.loss(batch)
            loss.backward()
            with torch.no_grad():
                scale = 1.0
                if config.clip is not None:
                    norm = torch.sqrt(sum((p.grad ** 2).sum() for p in model.params.values() if p.grad is not None))
                    if norm > config.clip:
                        scale = config.clip / norm.item()
                for p in model.params.values():
                    if p.grad is not None:
                        p -= (config.lr * scale) * p.grad
            total += loss.item() * len(batch)
        if history is not None:
            history.append(total / len(plans))
    return model
