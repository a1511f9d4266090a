"""Heterogeneous graph propagation over a question subgraph.

Entity nodes carry fixed-size vectors; document nodes carry one vector per
word position, re-encoded by a shared LSTM each layer. Updates within a layer
read only the previous layer's states (simultaneous update); the question
vector is refreshed last, from the freshly updated seed entity states.

Question conditioning happens two ways: attention over the relation types
leaving each node (softmax of relation-vector/question dot products), and a
scalar per-node propagation score seeded on the question entities and pushed
along KB edges with the same attention weights, which gates every neighbor
message so embeddings only flow outward from the seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import LstmParams, Value
from .params import ParamStore
from .retrieval import QuestionSubgraph


@dataclass
class ModelConfig:
    n: int = 64                        # embedding dimension
    L: int = 3                         # propagation layers
    mixing_rate: float = 0.5           # blend between kept and propagated score mass
    heterogeneous_updates: bool = True
    directed_propagation: bool = True
    relation_attention: bool = True

    def validate(self):
        if self.n < 1 or self.L < 1:
            raise ValueError("n and L must be >= 1")
        if not 0.0 < self.mixing_rate < 1.0:
            raise ValueError("mixing_rate must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "n": self.n, "L": self.L, "mixing_rate": self.mixing_rate,
            "heterogeneous_updates": self.heterogeneous_updates,
            "directed_propagation": self.directed_propagation,
            "relation_attention": self.relation_attention,
        }


class ModelParams:
    """All learnable tensors, held in a ParamStore under stable names."""

    def __init__(self, store: ParamStore, config: ModelConfig,
                 vocab_size: int, num_entities: int, num_relation_ids: int):
        self.store = store
        self.config = config
        self.vocab_size = vocab_size
        self.num_entities = num_entities
        self.num_relation_ids = num_relation_ids
        self.word_emb = store["word_emb"]
        self.entity_emb = store["entity_emb"]
        self.relation_emb = store["relation_emb"]
        self.q_lstm = _lstm_view(store, "q_lstm")
        self.doc_lstm = _lstm_view(store, "doc_lstm")
        self.answer_w = store["answer.w"]
        self.answer_b = store["answer.b"]

    @classmethod
    def init(cls, vocab_size: int, num_entities: int, num_relation_ids: int,
             config: ModelConfig, seed: int, dtype=np.float32) -> "ModelParams":
        """Fresh parameters; deterministic per seed."""
        config.validate()
        rng = np.random.default_rng(seed)
        n = config.n
        store = ParamStore()

        def normal(shape, scl):
            return (rng.normal(0.0, scl, size=shape)).astype(dtype)

        def glorot(out_dim, in_dim):
            limit = np.sqrt(6.0 / (in_dim + out_dim))
            return rng.uniform(-limit, limit, size=(out_dim, in_dim)).astype(dtype)

        emb_scale = 1.0 / np.sqrt(n)
        store.add("word_emb", normal((vocab_size, n), emb_scale))
        store.add("entity_emb", normal((num_entities, n), emb_scale))
        store.add("relation_emb", normal((num_relation_ids, n), emb_scale))
        for prefix in ("q_lstm", "doc_lstm"):
            for gate in LstmParams.GATES:
                store.add(f"{prefix}.w_{gate}", glorot(n, n))
                store.add(f"{prefix}.u_{gate}", glorot(n, n))
                store.add(f"{prefix}.b_{gate}", np.zeros(n, dtype=dtype))
        for l in range(1, config.L + 1):
            store.add(f"layer{l}.entity.W", glorot(n, 4 * n))
            store.add(f"layer{l}.entity.b", np.zeros(n, dtype=dtype))
            store.add(f"layer{l}.edge.W", glorot(n, 2 * n))
            store.add(f"layer{l}.edge.b", np.zeros(n, dtype=dtype))
            if l < config.L:
                # layer-L document and question updates feed nothing downstream
                # (answers read only the final entity states), so those FFNs
                # exist only for the layers whose output is consumed
                store.add(f"layer{l}.doc.W", glorot(n, 2 * n))
                store.add(f"layer{l}.doc.b", np.zeros(n, dtype=dtype))
                store.add(f"layer{l}.question.W", glorot(n, n))
                store.add(f"layer{l}.question.b", np.zeros(n, dtype=dtype))
        store.add("answer.w", normal((n,), emb_scale))
        store.add("answer.b", np.zeros((), dtype=dtype))
        return cls(store, config, vocab_size, num_entities, num_relation_ids)

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], config: ModelConfig) -> "ModelParams":
        store = ParamStore()
        for name in sorted(arrays):
            store.add(name, arrays[name].copy())
        return cls(store, config,
                   vocab_size=arrays["word_emb"].shape[0],
                   num_entities=arrays["entity_emb"].shape[0],
                   num_relation_ids=arrays["relation_emb"].shape[0])

    @property
    def dtype(self):
        return self.word_emb.data.dtype

    def ffn(self, layer: int, which: str) -> tuple[Value, Value]:
        return self.store[f"layer{layer}.{which}.W"], self.store[f"layer{layer}.{which}.b"]


def _lstm_view(store: ParamStore, prefix: str) -> LstmParams:
    gates = LstmParams.GATES
    return LstmParams(
        w={g: store[f"{prefix}.w_{g}"] for g in gates},
        u={g: store[f"{prefix}.u_{g}"] for g in gates},
        b={g: store[f"{prefix}.b_{g}"] for g in gates},
    )


def _ffn(x: Value, weight: Value, bias: Value) -> Value:
    return ad.tanh(ad.linear(x, weight, bias))


# ---------------------------------------------------------------------------
# graph context: local-index view of one subgraph
# ---------------------------------------------------------------------------


@dataclass
class GraphContext:
    entities: tuple[int, ...]
    seeds_local: list[int]
    in_edges: list[list[tuple[int, int]]]       # per dest: (src_local, relation)
    out_types: list[list[int]]                  # per src: sorted distinct relations
    out_type_counts: dict[tuple[int, int], int]  # (src_local, relation) -> edge count
    mentions: list[list[tuple[int, int]]]       # per entity: (doc_local, position)
    mention_docs: list[list[int]]               # per entity: sorted distinct doc locals
    linked: list[list[list[int]]]               # per doc local: per position: entity locals
    outdeg: list[int]                           # KB + link out-edges, floored at 1

    @classmethod
    def build(cls, subgraph: QuestionSubgraph, doc_lengths: list[int]) -> "GraphContext":
        eindex = subgraph.entity_index()
        dindex = subgraph.doc_index()
        n_ent = len(subgraph.entities)

        in_edges: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
        out_rel: list[dict[int, int]] = [{} for _ in range(n_ent)]
        for s, r, o in subgraph.kb_edges:
            si, oi = eindex[s], eindex[o]
            in_edges[oi].append((si, r))
            out_rel[si][r] = out_rel[si].get(r, 0) + 1

        mentions: list[list[tuple[int, int]]] = [[] for _ in range(n_ent)]
        linked: list[list[list[int]]] = [[[] for _ in range(doc_lengths[i])]
                                         for i in range(len(subgraph.docs))]
        link_counts = [0] * n_ent
        for entity, doc, pos in subgraph.link_edges:
            ei, di = eindex[entity], dindex[doc]
            mentions[ei].append((di, pos))
            linked[di][pos].append(ei)
            link_counts[ei] += 1

        kb_out = [0] * n_ent
        for si in range(n_ent):
            kb_out[si] = sum(out_rel[si].values())

        return cls(
            entities=subgraph.entities,
            seeds_local=sorted(eindex[s] for s in subgraph.seeds),
            in_edges=[sorted(edges) for edges in in_edges],
            out_types=[sorted(rel.keys()) for rel in out_rel],
            out_type_counts={(si, r): c for si, rel in enumerate(out_rel)
                             for r, c in rel.items()},
            mentions=[sorted(m) for m in mentions],
            mention_docs=[sorted({d for d, _ in m}) for m in mentions],
            linked=[[sorted(es) for es in doc] for doc in linked],
            outdeg=[max(1, kb_out[i] + link_counts[i]) for i in range(n_ent)],
        )


@dataclass
class NodeStates:
    h_v: list[Value]            # per entity, (n,)
    H_d: list[Value]            # per document, (T, n)
    h_q: Value                  # (n,)
    pr: list[Value] | None      # per entity, scalar; None when propagation is undirected


@dataclass
class ForwardResult:
    probs: Value                             # (num_entities,), graph-connected
    entities: tuple[int, ...]
    pr_layers: list[np.ndarray]              # detached, one (num_entities,) array per layer
    neighbor_norms: list[np.ndarray]         # detached L2 norm of each node's neighbor term
    final_states: NodeStates

    def prob_map(self) -> dict[int, float]:
        return {e: float(p) for e, p in zip(self.entities, self.probs.data)}


# ---------------------------------------------------------------------------
# the five per-layer operations
# ---------------------------------------------------------------------------


def init_states(ctx: GraphContext, question_token_ids, doc_token_ids,
                params: ModelParams) -> NodeStates:
    """Layer-0 states: entity embeddings, LSTM-encoded documents and question,
    and the seed-uniform propagation scores."""
    if not ctx.seeds_local:
        raise ValueError("cannot initialize states without seed entities")
    dtype = params.dtype
    h_v = [ad.row(params.entity_emb, e) for e in ctx.entities]
    H_d = [ad.seq_encode(ad.rows(params.word_emb, list(tokens)), params.doc_lstm)
           for tokens in doc_token_ids]
    q_states = ad.seq_encode(ad.rows(params.word_emb, list(question_token_ids)),
                             params.q_lstm)
    h_q = ad.row(q_states, len(question_token_ids) - 1)
    seed_mass = 1.0 / len(ctx.seeds_local)
    seeds = set(ctx.seeds_local)
    pr = [Value(np.asarray(seed_mass if i in seeds else 0.0, dtype=dtype))
          for i in range(len(ctx.entities))]
    return NodeStates(h_v=h_v, H_d=H_d, h_q=h_q, pr=pr)


def relation_attention(h_q_prev: Value, ctx: GraphContext, params: ModelParams,
                       config: ModelConfig) -> dict[tuple[int, int], Value]:
    """Per-node attention over the distinct relation types leaving that node.

    Returns alpha[(src_local, relation)]; edges of the same type from one node
    share a single weight. Nodes with no outgoing KB edges get no entries.
    """
    alpha: dict[tuple[int, int], Value] = {}
    if not config.relation_attention:
        dtype = params.dtype
        for si, types in enumerate(ctx.out_types):
            if types:
                uniform = Value(np.asarray(1.0 / len(types), dtype=dtype))
                for r in types:
                    alpha[(si, r)] = uniform
        return alpha

    distinct = sorted({r for types in ctx.out_types for r in types})
    if not distinct:
        return alpha
    rel_scores = {r: ad.dot(ad.row(params.relation_emb, r), h_q_prev) for r in distinct}
    order = []
    groups = []
    for si, types in enumerate(ctx.out_types):
        if not types:
            continue
        start = len(order)
        order.extend((si, r) for r in types)
        groups.append(list(range(start, len(order))))
    scores = ad.concat([rel_scores[r] for _, r in order])
    weights = ad.grouped_softmax(scores, groups)
    for i, key in enumerate(order):
        alpha[key] = ad.element(weights, i)
    return alpha


def propagate_pagerank(pr_prev: list[Value], alpha, ctx: GraphContext,
                       mixing_rate: float) -> list[Value]:
    """One step of the scalar score recursion over KB edges.

    A node keeps (1 - rate) of its score and receives rate * sum of incoming
    attention-weighted scores; a source's type weight is split equally among
    its same-type edges, so total mass never increases and score stays exactly
    zero beyond the layer's hop radius.
    """
    pr_new = []
    for v, incoming in enumerate(ctx.in_edges):
        contribs = []
        for s, r in incoming:
            if pr_prev[s].data == 0.0:
                continue  # structurally zero: no mass and no gradient path
            share = 1.0 / ctx.out_type_counts[(s, r)]
            contribs.append(ad.scale(ad.mul(alpha[(s, r)], pr_prev[s]), share))
        kept = ad.scale(pr_prev[v], 1.0 - mixing_rate)
        if contribs:
            pr_new.append(ad.add(kept, ad.scale(ad.add_n(contribs), mixing_rate)))
        else:
            pr_new.append(kept)
    return pr_new


def update_entities(states: NodeStates, alpha, ctx: GraphContext, params: ModelParams,
                    config: ModelConfig, layer: int,
                    pooled_docs: list[Value] | None) -> tuple[list[Value], np.ndarray]:
    """New entity states from the four concatenated slots:
    own state, question state, gated neighbor aggregate, mention aggregate.

    Reads only layer-(l-1) states. Returns the states plus the detached norms
    of each node's neighbor term (used by the propagation-locality checks).
    """
    n = config.n
    dtype = params.dtype
    zero = ad.zeros(n, dtype=dtype)
    w_ent, b_ent = params.ffn(layer, "entity")
    w_edge, b_edge = params.ffn(layer, "edge")
    rel_rows: dict[int, Value] = {}
    norms = np.zeros(len(ctx.entities))

    nbr_rows = []
    ment_rows = []
    for v in range(len(ctx.entities)):
        msgs = []
        for s, r in ctx.in_edges[v]:
            if config.directed_propagation and states.pr[s].data == 0.0:
                continue  # gate is exactly zero; message and gradients vanish
            if r not in rel_rows:
                rel_rows[r] = ad.row(params.relation_emb, r)
            msg = _ffn(ad.concat([rel_rows[r], states.h_v[s]]), w_edge, b_edge)
            if config.directed_propagation:
                gate = ad.mul(alpha[(s, r)], states.pr[s])
            else:
                gate = alpha[(s, r)]
            msgs.append(ad.scale(msg, gate))
        nbr = ad.add_n(msgs) if msgs else zero
        norms[v] = float(np.linalg.norm(nbr.data))
        nbr_rows.append(nbr)

        if config.heterogeneous_updates:
            ments = [ad.row(states.H_d[d], p) for d, p in ctx.mentions[v]]
        else:
            ments = [pooled_docs[d] for d in ctx.mention_docs[v]]
        ment_rows.append(ad.add_n(ments) if ments else zero)

    # one batched FFN over all entities: rows are [h_v; h_q; neighbor; mention]
    feats = ad.hconcat([
        ad.stack_rows(states.h_v),
        ad.tile_rows(states.h_q, len(ctx.entities)),
        ad.stack_rows(nbr_rows),
        ad.stack_rows(ment_rows),
    ])
    updated = ad.tanh(ad.linear(feats, w_ent, b_ent))
    new_h = [ad.row(updated, v) for v in range(len(ctx.entities))]
    return new_h, norms


def update_documents(states: NodeStates, ctx: GraphContext, params: ModelParams,
                     config: ModelConfig, layer: int,
                     pooled_docs: list[Value] | None) -> list[Value]:
    """New document states: per-position FFN over (position state, incoming
    entity states normalized by out-degree), then LSTM re-encoding.

    In non-heterogeneous mode position identity is discarded: every position
    gets the FFN of (pooled document state, sum over all entities linked
    anywhere in the document).
    """
    n = config.n
    dtype = params.dtype
    zero = ad.zeros(n, dtype=dtype)
    w_doc, b_doc = params.ffn(layer, "doc")

    new_H = []
    for d, positions in enumerate(ctx.linked):
        if config.heterogeneous_updates:
            ent_rows = []
            for linked_entities in positions:
                incoming = [ad.scale(states.h_v[v], 1.0 / ctx.outdeg[v])
                            for v in linked_entities]
                ent_rows.append(ad.add_n(incoming) if incoming else zero)
            feats = ad.hconcat([states.H_d[d], ad.stack_rows(ent_rows)])
            tilde = ad.tanh(ad.linear(feats, w_doc, b_doc))
        else:
            all_linked = sorted({v for es in positions for v in es})
            incoming = [ad.scale(states.h_v[v], 1.0 / ctx.outdeg[v]) for v in all_linked]
            ent = ad.add_n(incoming) if incoming else zero
            shared = _ffn(ad.concat([pooled_docs[d], ent]), w_doc, b_doc)
            tilde = ad.stack_rows([shared] * len(positions))
        new_H.append(ad.seq_encode(tilde, params.doc_lstm))
    return new_H


def update_question(h_v_new: list[Value], ctx: GraphContext, params: ModelParams,
                    layer: int) -> Value:
    """FFN over the sum of the freshly updated seed entity states."""
    if not ctx.seeds_local:
        raise ValueError("question update requires seed entities")
    w_q, b_q = params.ffn(layer, "question")
    total = ad.add_n([h_v_new[s] for s in ctx.seeds_local])
    return _ffn(total, w_q, b_q)


# ---------------------------------------------------------------------------
# full forward pass
# ---------------------------------------------------------------------------


def forward(subgraph: QuestionSubgraph, question_token_ids, doc_token_ids,
            params: ModelParams, config: ModelConfig) -> ForwardResult:
    """Run initialization, L propagation layers, and answer scoring.

    Documents are never answer candidates; the output assigns one probability
    to every entity node, in subgraph entity order.
    """
    config.validate()
    if not subgraph.seeds:
        raise ValueError("forward pass requires at least one seed entity")
    ctx = GraphContext.build(subgraph, [len(t) for t in doc_token_ids])
    states = init_states(ctx, question_token_ids, doc_token_ids, params)

    pr_layers = [np.array([float(p.data) for p in states.pr])]
    neighbor_norms = []
    for layer in range(1, config.L + 1):
        alpha = relation_attention(states.h_q, ctx, params, config)
        pooled = None
        if not config.heterogeneous_updates:
            pooled = [ad.sum_rows(H) for H in states.H_d]
        if config.directed_propagation:
            new_pr = propagate_pagerank(states.pr, alpha, ctx, config.mixing_rate)
        else:
            new_pr = states.pr
        new_h, norms = update_entities(states, alpha, ctx, params, config, layer, pooled)
        if layer < config.L:
            new_H = update_documents(states, ctx, params, config, layer, pooled)
            new_q = update_question(new_h, ctx, params, layer)
        else:
            new_H = states.H_d
            new_q = states.h_q
        states = NodeStates(h_v=new_h, H_d=new_H, h_q=new_q, pr=new_pr)
        pr_layers.append(np.array([float(p.data) for p in states.pr]))
        neighbor_norms.append(norms)

    logits = [ad.add(ad.dot(params.answer_w, h), params.answer_b) for h in states.h_v]
    probs = ad.sigmoid(ad.concat(logits))
    return ForwardResult(probs=probs, entities=subgraph.entities,
                         pr_layers=pr_layers, neighbor_norms=neighbor_norms,
                         final_states=states)
