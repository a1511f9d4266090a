"""Question-subgraph retrieval.

Two parallel pipelines feed the subgraph for a question: personalized
PageRank over the KB around the seed entities, with transition mass split
across a node's outgoing relation types in proportion to each type's
question similarity (cosine of mean word vectors) and equally among edges of
the same type; and two-stage text retrieval, TF-IDF cosine over unigrams and
bigrams to pick articles, then BM25 over their sentences with the article
title folded in as a weighted extra field. The retained entities and
sentences, the KB edges among them, and the entity links into the retained
sentences are assembled into one QuestionSubgraph.

Everything here is deterministic: ties break by ascending id, iteration
orders are sorted, and there is no randomness.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from .data import Corpus, EntityLinkSet, KnowledgeBase, QuestionRecord
from .errors import DataError

MODE_KB = "kb"
MODE_TEXT = "text"
MODE_EF = "ef"
MODES = (MODE_KB, MODE_TEXT, MODE_EF)


@dataclass
class RetrievalConfig:
    E: int = 50                      # max retained entities
    D: int = 50                      # max retained sentences
    articles_top_k: int = 5
    restart_probability: float = 0.2
    ppr_tolerance: float = 1e-6
    ppr_max_iters: int = 100
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    title_weight: float = 1.0


class WordVectorTable:
    """token -> n-dimensional vector, or indicator mode when no table is loaded.

    In indicator mode every distinct token is its own one-hot axis, so the
    cosine of two mean vectors reduces to normalized token overlap. When a
    table is present, out-of-vocabulary tokens contribute a zero vector.
    """

    def __init__(self, vectors: dict[str, np.ndarray] | None = None):
        self.vectors = None
        self.dim = 0
        if vectors:
            dims = {np.asarray(v).shape for v in vectors.values()}
            if len(dims) != 1 or len(next(iter(dims))) != 1:
                raise DataError("word vector table must contain equal-length 1-D vectors")
            self.vectors = {t: np.asarray(v, dtype=np.float64) for t, v in vectors.items()}
            self.dim = next(iter(dims))[0]

    @property
    def indicator_mode(self) -> bool:
        return self.vectors is None

    @classmethod
    def load(cls, path) -> "WordVectorTable":
        """Text format: one token followed by its float components per line."""
        vectors = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                parts = line.split()
                if len(parts) < 2:
                    continue
                vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
        return cls(vectors)

    def cosine(self, tokens_a, tokens_b) -> float:
        if self.indicator_mode:
            ca, cb = Counter(tokens_a), Counter(tokens_b)
            dot = sum(ca[t] * cb[t] for t in ca.keys() & cb.keys())
            na = math.sqrt(sum(c * c for c in ca.values()))
            nb = math.sqrt(sum(c * c for c in cb.values()))
        else:
            va = self._mean(tokens_a)
            vb = self._mean(tokens_b)
            dot = float(va @ vb)
            na = float(np.linalg.norm(va))
            nb = float(np.linalg.norm(vb))
        if na == 0.0 or nb == 0.0:
            return 0.0
        return dot / (na * nb)

    def _mean(self, tokens) -> np.ndarray:
        out = np.zeros(self.dim)
        for t in tokens:
            vec = self.vectors.get(t)
            if vec is not None:
                out += vec
        return out / len(tokens)


def question_edge_weight(relation_surface, question_tokens, table: WordVectorTable) -> float:
    """Cosine similarity of mean word vectors, clamped to [0, 1]."""
    if not relation_surface or not question_tokens:
        raise ValueError("question_edge_weight requires nonempty token lists")
    return max(0.0, table.cosine(relation_surface, question_tokens))


# ---------------------------------------------------------------------------
# personalized PageRank
# ---------------------------------------------------------------------------


def personalized_pagerank(kb: KnowledgeBase, seeds, weight_fn,
                          config: RetrievalConfig) -> dict[int, float]:
    """Power iteration of p <- gamma * restart + (1 - gamma) * W^T p.

    A node's outgoing mass is divided across its relation types in proportion
    to ``weight_fn(node, relation)`` (clamped at zero) and equally among edges
    of the same type. Nodes with no outgoing mass restart to the seeds. The
    result is a probability distribution over all entities.
    """
    seeds = sorted(set(seeds))
    if not seeds:
        raise ValueError("personalized_pagerank requires a nonempty seed set")
    for s in seeds:
        if s not in kb.entities:
            raise ValueError(f"seed entity {s} not in knowledge base")

    ids = sorted(kb.entities)
    index = {e: i for i, e in enumerate(ids)}
    n = len(ids)

    out_edges = kb.out_edges()
    rows, cols, vals = [], [], []
    is_sink = np.ones(n, dtype=bool)
    for s, by_rel in out_edges.items():
        weights = {r: max(0.0, float(weight_fn(s, r))) for r in by_rel}
        total = sum(weights.values())
        if total <= 0.0:
            continue
        si = index[s]
        is_sink[si] = False
        for r, objs in by_rel.items():
            share = weights[r] / total
            if share == 0.0:
                continue
            per_edge = share / len(objs)
            for o in objs:
                rows.append(index[o])
                cols.append(si)
                vals.append(per_edge)
    transition_t = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    restart = np.zeros(n)
    for s in seeds:
        restart[index[s]] = 1.0 / len(seeds)

    gamma = config.restart_probability
    p = restart.copy()
    for _ in range(config.ppr_max_iters):
        sink_mass = float(p[is_sink].sum()) if is_sink.any() else 0.0
        p_new = gamma * restart + (1.0 - gamma) * (transition_t @ p + sink_mass * restart)
        err = float(np.max(np.abs(p_new - p)))
        p = p_new
        if err < config.ppr_tolerance:
            break
    return {e: float(p[index[e]]) for e in ids}


def retrieve_kb_entities(ppr_scores: dict[int, float], seeds, E: int) -> list[int]:
    """Seeds plus the highest-scoring entities, up to E, ties by ascending id."""
    seeds = sorted(set(seeds))
    if E < len(seeds):
        raise ValueError(f"E={E} is smaller than the seed set ({len(seeds)})")
    chosen = set(seeds)
    ranked = sorted(ppr_scores.items(), key=lambda kv: (-kv[1], kv[0]))
    for entity, _ in ranked:
        if len(chosen) >= E:
            break
        chosen.add(entity)
    return sorted(chosen, key=lambda e: (-ppr_scores.get(e, 0.0), e))


# ---------------------------------------------------------------------------
# text retrieval
# ---------------------------------------------------------------------------


def _ngrams(tokens) -> Counter:
    grams = Counter(tokens)
    grams.update(zip(tokens, tokens[1:]))
    return grams


class ArticleIndex:
    """Sentences grouped into articles by title, with TF-IDF vectors over 1/2-grams."""

    def __init__(self, corpus: Corpus):
        groups: dict[tuple[str, ...], list[int]] = {}
        for doc_id, doc in corpus.documents.items():
            groups.setdefault(doc.title, []).append(doc_id)
        ordered = sorted(groups.items(), key=lambda kv: min(kv[1]))
        self.titles = [title for title, _ in ordered]
        self.doc_ids = [tuple(sorted(doc_ids)) for _, doc_ids in ordered]

        self._tf = []
        df = Counter()
        for doc_ids in self.doc_ids:
            grams = Counter()
            for d in doc_ids:
                grams.update(_ngrams(corpus.documents[d].tokens))
            self._tf.append(grams)
            df.update(grams.keys())
        n = len(self.doc_ids)
        self._idf = {g: math.log((1 + n) / (1 + c)) + 1.0 for g, c in df.items()}
        self._norms = []
        for grams in self._tf:
            sq = sum((tf * self._idf[g]) ** 2 for g, tf in grams.items())
            self._norms.append(math.sqrt(sq))

    def __len__(self):
        return len(self.doc_ids)

    def rank(self, question_tokens, k: int) -> list[int]:
        """Top-k article ids by TF-IDF cosine; ties by ascending article id."""
        if not question_tokens:
            return []
        q = _ngrams(tuple(question_tokens))
        q_weights = {g: tf * self._idf.get(g, 0.0) for g, tf in q.items()}
        q_norm = math.sqrt(sum(w * w for w in q_weights.values()))
        scores = []
        for art_id, grams in enumerate(self._tf):
            s = sum(w * grams[g] * self._idf[g] for g, w in q_weights.items() if g in grams)
            if q_norm > 0 and self._norms[art_id] > 0:
                s /= q_norm * self._norms[art_id]
            scores.append((art_id, s))
        scores.sort(key=lambda kv: (-kv[1], kv[0]))
        return [art_id for art_id, _ in scores[:k]]


def rank_articles(question_tokens, index: ArticleIndex, k: int) -> list[int]:
    return index.rank(question_tokens, k)


def bm25_scores(question_tokens, candidates, k1: float, b: float,
                title_weight: float) -> dict[int, float]:
    """BM25 over virtual documents: sentence terms plus title terms at ``title_weight``.

    ``candidates`` is a list of (doc_id, sentence_tokens, title_tokens). Uses
    idf = ln(1 + (N - df + 0.5) / (df + 0.5)) over the candidate set.
    """
    tfs = {}
    lengths = {}
    for doc_id, tokens, title in candidates:
        tf = Counter(tokens)
        for t in title:
            tf[t] += title_weight
        tfs[doc_id] = tf
        lengths[doc_id] = len(tokens) + title_weight * len(title)
    if not tfs:
        return {}
    n = len(tfs)
    avgdl = sum(lengths.values()) / n
    df = Counter()
    for tf in tfs.values():
        df.update(tf.keys())
    idf = {t: math.log(1.0 + (n - c + 0.5) / (c + 0.5)) for t, c in df.items()}

    scores = {}
    for doc_id, tf in tfs.items():
        norm = k1 * (1.0 - b + b * lengths[doc_id] / avgdl)
        s = 0.0
        for t in question_tokens:
            f = tf.get(t, 0.0)
            if f:
                s += idf[t] * f * (k1 + 1.0) / (f + norm)
        scores[doc_id] = s
    return scores


def rank_sentences(question_tokens, candidates, D: int, k1: float, b: float,
                   title_weight: float) -> list[tuple[int, float]]:
    """Top-D (doc_id, score) by BM25, ties by ascending doc id."""
    scores = bm25_scores(question_tokens, candidates, k1, b, title_weight)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:D]


# ---------------------------------------------------------------------------
# subgraph
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuestionSubgraph:
    """The retained slice of the world for one question.

    ``kb_edges`` are the KB triples with both endpoints retained; ``link_edges``
    are per-position entity links into retained documents, carrying the
    reserved ``link_relation_id`` as their edge type.
    """

    question_id: int
    entities: tuple[int, ...]
    entity_scores: tuple[float, ...]
    docs: tuple[int, ...]
    doc_scores: tuple[float, ...]
    kb_edges: tuple[tuple[int, int, int], ...]   # (s, r, o)
    link_edges: tuple[tuple[int, int, int], ...]  # (entity, doc, position)
    seeds: tuple[int, ...]
    link_relation_id: int
    # entities[:num_kb_retained] came from KB retrieval; the rest are
    # document-linked extras appended by assemble_subgraph
    num_kb_retained: int = 0

    @property
    def num_facts(self) -> int:
        return len(self.kb_edges)

    def entity_index(self) -> dict[int, int]:
        return {e: i for i, e in enumerate(self.entities)}

    def doc_index(self) -> dict[int, int]:
        return {d: i for i, d in enumerate(self.docs)}

    def mentions(self) -> dict[int, list[tuple[int, int]]]:
        """entity -> sorted (doc, position) mention list."""
        out: dict[int, list[tuple[int, int]]] = {}
        for entity, doc, pos in self.link_edges:
            out.setdefault(entity, []).append((doc, pos))
        for positions in out.values():
            positions.sort()
        return out

    def linked_at(self) -> dict[tuple[int, int], list[int]]:
        """(doc, position) -> sorted entity list."""
        out: dict[tuple[int, int], list[int]] = {}
        for entity, doc, pos in self.link_edges:
            out.setdefault((doc, pos), []).append(entity)
        for entities in out.values():
            entities.sort()
        return out

    def out_degrees(self) -> dict[int, int]:
        """KB out-edges plus link edges per entity (no flooring)."""
        deg = dict.fromkeys(self.entities, 0)
        for s, _, _ in self.kb_edges:
            deg[s] += 1
        for entity, _, _ in self.link_edges:
            deg[entity] += 1
        return deg

    def validate(self, kb: KnowledgeBase | None = None):
        entity_set = set(self.entities)
        doc_set = set(self.docs)
        if len(entity_set) != len(self.entities) or len(doc_set) != len(self.docs):
            raise DataError("duplicate nodes in subgraph")
        if not set(self.seeds) <= entity_set:
            raise DataError("seeds must be retained entities")
        for s, r, o in self.kb_edges:
            if s not in entity_set or o not in entity_set:
                raise DataError(f"kb edge ({s},{r},{o}) endpoint not retained")
            if r == self.link_relation_id:
                raise DataError("link relation id used as a KB edge type")
        for entity, doc, _ in self.link_edges:
            if doc not in doc_set:
                raise DataError(f"link edge references unretained document {doc}")
            if entity not in entity_set:
                raise DataError(f"link edge references unretained entity {entity}")
        if kb is not None:
            triple_set = set(kb.triples)
            expected = tuple(sorted(
                t for t in triple_set if t[0] in entity_set and t[2] in entity_set))
            if tuple(sorted(self.kb_edges)) != expected:
                raise DataError("kb_edges do not match the KB restriction to retained entities")

    def to_json(self) -> str:
        return json.dumps({
            "question_id": self.question_id,
            "entities": [[e, s] for e, s in zip(self.entities, self.entity_scores)],
            "docs": [[d, s] for d, s in zip(self.docs, self.doc_scores)],
            "kb_edges": [list(e) for e in self.kb_edges],
            "link_edges": [list(e) for e in self.link_edges],
            "seeds": list(self.seeds),
            "link_relation_id": self.link_relation_id,
            "num_kb_retained": self.num_kb_retained,
        })

    @classmethod
    def from_json(cls, text: str) -> "QuestionSubgraph":
        raw = json.loads(text)
        return cls(
            question_id=raw["question_id"],
            entities=tuple(e for e, _ in raw["entities"]),
            entity_scores=tuple(s for _, s in raw["entities"]),
            docs=tuple(d for d, _ in raw["docs"]),
            doc_scores=tuple(s for _, s in raw["docs"]),
            kb_edges=tuple(tuple(e) for e in raw["kb_edges"]),
            link_edges=tuple(tuple(e) for e in raw["link_edges"]),
            seeds=tuple(raw["seeds"]),
            link_relation_id=raw["link_relation_id"],
            num_kb_retained=raw["num_kb_retained"],
        )


def assemble_subgraph(kb: KnowledgeBase, links: EntityLinkSet, question_id: int,
                      retained_entities, ppr_scores: dict[int, float],
                      retained_docs, seeds) -> QuestionSubgraph:
    """Union the KB-retrieved entities with entities linked from retained docs,
    then keep every KB edge inside that set and every link edge into the docs."""
    doc_ids = [d for d, _ in retained_docs]
    doc_set = set(doc_ids)
    linked = links.entities_in_docs(doc_set)
    retained = list(retained_entities)
    entity_set = set(retained) | linked
    extras = sorted(entity_set - set(retained))
    entities = tuple(retained + extras)

    kb_edges = tuple(sorted(
        t for t in kb.triples if t[0] in entity_set and t[2] in entity_set))
    link_edges = tuple(sorted(
        l for l in links.links if l[1] in doc_set))

    return QuestionSubgraph(
        question_id=question_id,
        entities=entities,
        entity_scores=tuple(float(ppr_scores.get(e, 0.0)) for e in entities),
        docs=tuple(doc_ids),
        doc_scores=tuple(float(s) for _, s in retained_docs),
        kb_edges=kb_edges,
        link_edges=link_edges,
        seeds=tuple(sorted(seeds)),
        link_relation_id=kb.link_relation_id,
        num_kb_retained=len(retained),
    )


def restrict_mode(subgraph: QuestionSubgraph, mode: str) -> QuestionSubgraph:
    """Project the subgraph for KB-only or text-only training; 'ef' keeps everything.

    KB-only keeps the PPR-retained entities and the KB edges among them;
    text-only keeps documents, link edges, seed entities, and document-linked
    entities, with no KB edges.
    """
    if mode == MODE_EF:
        return subgraph
    if mode == MODE_KB:
        keep = subgraph.entities[:subgraph.num_kb_retained]
        entity_set = set(keep)
        return replace(
            subgraph,
            entities=keep,
            entity_scores=subgraph.entity_scores[:subgraph.num_kb_retained],
            docs=(), doc_scores=(), link_edges=(),
            kb_edges=tuple(e for e in subgraph.kb_edges
                           if e[0] in entity_set and e[2] in entity_set),
        )
    if mode == MODE_TEXT:
        keep_set = set(subgraph.seeds) | {e for e, _, _ in subgraph.link_edges}
        kept = [(i, e) for i, e in enumerate(subgraph.entities) if e in keep_set]
        return replace(
            subgraph,
            entities=tuple(e for _, e in kept),
            entity_scores=tuple(subgraph.entity_scores[i] for i, _ in kept),
            kb_edges=(),
            num_kb_retained=sum(1 for i, _ in kept if i < subgraph.num_kb_retained),
        )
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


# ---------------------------------------------------------------------------
# full per-question retrieval
# ---------------------------------------------------------------------------


def build_subgraph(kb: KnowledgeBase, corpus: Corpus, links: EntityLinkSet,
                   question: QuestionRecord, config: RetrievalConfig,
                   table: WordVectorTable, article_index: ArticleIndex | None = None,
                   ) -> QuestionSubgraph:
    """Run both retrieval pipelines for one question and assemble the subgraph."""
    if article_index is None:
        article_index = ArticleIndex(corpus)

    if question.seeds:
        rel_weights = {
            r: question_edge_weight(kb.relations[r], question.tokens, table)
            for r in kb.relations
        }
        scores = personalized_pagerank(
            kb, question.seeds, lambda _node, r: rel_weights[r], config)
        retained = retrieve_kb_entities(scores, question.seeds, config.E)
    else:
        scores = {}
        retained = []

    articles = rank_articles(question.tokens, article_index, config.articles_top_k)
    candidates = []
    for art_id in articles:
        title = article_index.titles[art_id]
        for doc_id in article_index.doc_ids[art_id]:
            candidates.append((doc_id, corpus.documents[doc_id].tokens, title))
    retained_docs = rank_sentences(question.tokens, candidates, config.D,
                                   config.bm25_k1, config.bm25_b, config.title_weight)

    return assemble_subgraph(kb, links, question.id, retained, scores,
                             retained_docs, question.seeds)


def save_subgraph(subgraph: QuestionSubgraph, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"subgraph_{subgraph.question_id}.json").write_text(
        subgraph.to_json() + "\n", encoding="utf-8")


def load_subgraph(directory, question_id: int) -> QuestionSubgraph:
    path = Path(directory) / f"subgraph_{question_id}.json"
    if not path.exists():
        raise DataError(f"missing subgraph cache for question {question_id}: {path}")
    return QuestionSubgraph.from_json(path.read_text(encoding="utf-8"))
