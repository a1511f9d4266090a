"""Knowledge base, corpus, entity links, and questions: data model and disk formats.

Everything is immutable after load and stored in canonical sorted order so the
rest of the pipeline is deterministic. On-disk formats are JSON-lines plus two
TSV vocabulary files:

    kb.jsonl        {"s": int, "r": int, "o": int}
    entities.tsv    id <TAB> surface name
    relations.tsv   id <TAB> space-separated surface form
    corpus.jsonl    {"id", "title", "tokens", "links": [{"entity","start","end"}]}
    questions.jsonl {"id", "tokens", "seeds", "answers"}

Link records use [start, end) token spans; a span expands to one link per
covered position, so multi-word mentions link every word of the mention.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IntegrityError, ParseError

KB_FILE = "kb.jsonl"
ENTITIES_FILE = "entities.tsv"
RELATIONS_FILE = "relations.tsv"
CORPUS_FILE = "corpus.jsonl"
QUESTIONS_FILE = "questions.jsonl"


@dataclass(frozen=True)
class Document:
    title: tuple[str, ...]
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class QuestionRecord:
    id: int
    tokens: tuple[str, ...]
    seeds: tuple[int, ...]
    answers: tuple[int, ...]


class KnowledgeBase:
    """Entity/relation vocabularies plus the directed triple set."""

    def __init__(self, entities: dict[int, str], relations: dict[int, tuple[str, ...]],
                 triples):
        self.entities = dict(entities)
        self.relations = {r: tuple(surface) for r, surface in relations.items()}
        for r, surface in self.relations.items():
            if not surface:
                raise IntegrityError(f"relation {r} has an empty surface form")
        triples = [tuple(t) for t in triples]
        unique = set(triples)
        if len(unique) != len(triples):
            raise IntegrityError("duplicate triples in knowledge base")
        for s, r, o in unique:
            if s not in self.entities or o not in self.entities:
                raise IntegrityError(f"triple ({s},{r},{o}) references unknown entity")
            if r not in self.relations:
                raise IntegrityError(f"triple ({s},{r},{o}) references unknown relation")
        self.triples: tuple[tuple[int, int, int], ...] = tuple(sorted(unique))
        self._out_edges = None

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    @property
    def link_relation_id(self) -> int:
        """Reserved id for the entity-document linking relation."""
        return (max(self.relations) + 1) if self.relations else 0

    def out_edges(self) -> dict[int, dict[int, tuple[int, ...]]]:
        """subject -> relation -> sorted object ids (built once, cached)."""
        if self._out_edges is None:
            grouped: dict[int, dict[int, list[int]]] = {}
            for s, r, o in self.triples:
                grouped.setdefault(s, {}).setdefault(r, []).append(o)
            self._out_edges = {
                s: {r: tuple(sorted(objs)) for r, objs in sorted(by_rel.items())}
                for s, by_rel in grouped.items()
            }
        return self._out_edges


class Corpus:
    """Documents plus the token vocabulary derived from them."""

    def __init__(self, documents: dict[int, Document]):
        self.documents = dict(sorted(documents.items()))
        for doc_id, doc in self.documents.items():
            if not doc.tokens:
                raise IntegrityError(f"document {doc_id} has no tokens")
        tokens = set()
        for doc in self.documents.values():
            tokens.update(doc.tokens)
            tokens.update(doc.title)
        self.vocabulary: dict[str, int] = {tok: i for i, tok in enumerate(sorted(tokens))}

    def __len__(self) -> int:
        return len(self.documents)


class EntityLinkSet:
    """Per-position links between entities and document words."""

    def __init__(self, links):
        self.links: tuple[tuple[int, int, int], ...] = tuple(sorted(set(tuple(l) for l in links)))
        self._by_doc = None
        self._by_entity = None

    def __len__(self) -> int:
        return len(self.links)

    def by_doc(self) -> dict[int, tuple[tuple[int, int, int], ...]]:
        if self._by_doc is None:
            grouped: dict[int, list] = {}
            for link in self.links:
                grouped.setdefault(link[1], []).append(link)
            self._by_doc = {d: tuple(ls) for d, ls in grouped.items()}
        return self._by_doc

    def entities_in_docs(self, doc_ids) -> set[int]:
        by_doc = self.by_doc()
        out = set()
        for d in doc_ids:
            for entity, _, _ in by_doc.get(d, ()):
                out.add(entity)
        return out


def mention_index(links: EntityLinkSet):
    """Build the two mention maps: entity -> {(doc, pos)} and (doc, pos) -> {entity}.

    The maps are exact inverses of each other over the link set.
    """
    m: dict[int, set[tuple[int, int]]] = {}
    lpos: dict[tuple[int, int], set[int]] = {}
    for entity, doc, pos in links.links:
        m.setdefault(entity, set()).add((doc, pos))
        lpos.setdefault((doc, pos), set()).add(entity)
    return m, lpos


def validate_store(kb: KnowledgeBase, corpus: Corpus, links: EntityLinkSet,
                   questions: list[QuestionRecord]):
    """Cross-object referential integrity; raises IntegrityError on violations."""
    for entity, doc, pos in links.links:
        if entity not in kb.entities:
            raise IntegrityError(f"link references unknown entity {entity}")
        if doc not in corpus.documents:
            raise IntegrityError(f"link references unknown document {doc}")
        if not 0 <= pos < len(corpus.documents[doc].tokens):
            raise IntegrityError(
                f"link position {pos} out of bounds for document {doc} "
                f"(length {len(corpus.documents[doc].tokens)})")
    for q in questions:
        for e in q.seeds:
            if e not in kb.entities:
                raise IntegrityError(f"question {q.id}: seed {e} not in entity vocabulary")
        for a in q.answers:
            if a not in kb.entities:
                raise IntegrityError(f"question {q.id}: answer {a} not in entity vocabulary")


def subsample_kb(kb: KnowledgeBase, fraction: float, seed: int) -> KnowledgeBase:
    """Keep exactly round(fraction * |triples|) triples, uniformly at random.

    Entity and relation vocabularies are unchanged; a fraction of 1.0 returns
    an identical triple set. Deterministic per seed.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    keep = round(fraction * len(kb.triples))
    if keep == len(kb.triples):
        retained = kb.triples
    else:
        rng = random.Random(seed)
        retained = rng.sample(kb.triples, keep)
    return KnowledgeBase(kb.entities, kb.relations, retained)


# ---------------------------------------------------------------------------
# disk I/O
# ---------------------------------------------------------------------------


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc}") from exc


def _require(record, key, path, line_no):
    if key not in record:
        raise ParseError(path, line_no, f"missing field {key!r}")
    return record[key]


def load_dataset(directory):
    """Load and fully validate a dataset directory.

    Returns (KnowledgeBase, Corpus, EntityLinkSet, questions). Parse failures
    carry file and line numbers; dangling ids raise IntegrityError.
    """
    directory = Path(directory)

    entities: dict[int, str] = {}
    path = directory / ENTITIES_FILE
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(path, line_no, "expected 'id<TAB>name'")
            try:
                entity_id = int(parts[0])
            except ValueError:
                raise ParseError(path, line_no, f"bad entity id {parts[0]!r}")
            if entity_id in entities:
                raise ParseError(path, line_no, f"duplicate entity id {entity_id}")
            entities[entity_id] = parts[1]

    relations: dict[int, tuple[str, ...]] = {}
    path = directory / RELATIONS_FILE
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1].strip():
                raise ParseError(path, line_no, "expected 'id<TAB>surface form'")
            try:
                rel_id = int(parts[0])
            except ValueError:
                raise ParseError(path, line_no, f"bad relation id {parts[0]!r}")
            if rel_id in relations:
                raise ParseError(path, line_no, f"duplicate relation id {rel_id}")
            relations[rel_id] = tuple(parts[1].split())

    triples = []
    path = directory / KB_FILE
    for line_no, record in _read_jsonl(path):
        try:
            triple = (int(_require(record, "s", path, line_no)),
                      int(_require(record, "r", path, line_no)),
                      int(_require(record, "o", path, line_no)))
        except (TypeError, ValueError) as exc:
            raise ParseError(path, line_no, f"bad triple: {exc}") from exc
        triples.append(triple)
    try:
        kb = KnowledgeBase(entities, relations, triples)
    except IntegrityError as exc:
        raise IntegrityError(f"{path}: {exc}") from exc

    documents: dict[int, Document] = {}
    links = []
    path = directory / CORPUS_FILE
    for line_no, record in _read_jsonl(path):
        doc_id = int(_require(record, "id", path, line_no))
        if doc_id in documents:
            raise ParseError(path, line_no, f"duplicate document id {doc_id}")
        title = tuple(str(t) for t in _require(record, "title", path, line_no))
        tokens = tuple(str(t) for t in _require(record, "tokens", path, line_no))
        if not tokens:
            raise ParseError(path, line_no, "document has no tokens")
        documents[doc_id] = Document(title=title, tokens=tokens)
        for link in record.get("links", []):
            entity = int(_require(link, "entity", path, line_no))
            start = int(_require(link, "start", path, line_no))
            end = int(_require(link, "end", path, line_no))
            if not 0 <= start < end <= len(tokens):
                raise IntegrityError(
                    f"{path}:{line_no}: link span [{start},{end}) out of bounds "
                    f"for document {doc_id} (length {len(tokens)})")
            for pos in range(start, end):
                links.append((entity, doc_id, pos))
    corpus = Corpus(documents)
    link_set = EntityLinkSet(links)

    questions = []
    path = directory / QUESTIONS_FILE
    if path.exists():
        for line_no, record in _read_jsonl(path):
            questions.append(QuestionRecord(
                id=int(_require(record, "id", path, line_no)),
                tokens=tuple(str(t) for t in _require(record, "tokens", path, line_no)),
                seeds=tuple(int(e) for e in _require(record, "seeds", path, line_no)),
                answers=tuple(int(e) for e in _require(record, "answers", path, line_no)),
            ))
        questions.sort(key=lambda q: q.id)

    validate_store(kb, corpus, link_set, questions)
    return kb, corpus, link_set, questions


def save_dataset(directory, kb: KnowledgeBase, corpus: Corpus, links: EntityLinkSet,
                 questions: list[QuestionRecord]):
    """Write a dataset directory in the canonical formats (inverse of load_dataset)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    with open(directory / ENTITIES_FILE, "w", encoding="utf-8") as f:
        for entity_id in sorted(kb.entities):
            f.write(f"{entity_id}\t{kb.entities[entity_id]}\n")

    with open(directory / RELATIONS_FILE, "w", encoding="utf-8") as f:
        for rel_id in sorted(kb.relations):
            f.write(f"{rel_id}\t{' '.join(kb.relations[rel_id])}\n")

    with open(directory / KB_FILE, "w", encoding="utf-8") as f:
        for s, r, o in kb.triples:
            f.write(json.dumps({"s": s, "r": r, "o": o}) + "\n")

    spans: dict[int, list[dict]] = {d: [] for d in corpus.documents}
    for doc_id, doc_links in sorted(links.by_doc().items()):
        by_entity: dict[int, list[int]] = {}
        for entity, _, pos in doc_links:
            by_entity.setdefault(entity, []).append(pos)
        for entity, positions in sorted(by_entity.items()):
            positions.sort()
            start = prev = positions[0]
            for pos in positions[1:] + [None]:
                if pos is not None and pos == prev + 1:
                    prev = pos
                    continue
                spans[doc_id].append({"entity": entity, "start": start, "end": prev + 1})
                if pos is not None:
                    start = prev = pos
        spans[doc_id].sort(key=lambda sp: (sp["start"], sp["entity"]))

    with open(directory / CORPUS_FILE, "w", encoding="utf-8") as f:
        for doc_id, doc in corpus.documents.items():
            record = {"id": doc_id, "title": list(doc.title), "tokens": list(doc.tokens),
                      "links": spans.get(doc_id, [])}
            f.write(json.dumps(record) + "\n")

    with open(directory / QUESTIONS_FILE, "w", encoding="utf-8") as f:
        for q in sorted(questions, key=lambda q: q.id):
            record = {"id": q.id, "tokens": list(q.tokens),
                      "seeds": list(q.seeds), "answers": list(q.answers)}
            f.write(json.dumps(record) + "\n")
