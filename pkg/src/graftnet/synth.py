"""Deterministic toy-world generator: KB triples, linked sentences, and questions.

Worlds are pure functions of (spec, seed). Entity names are two tokens so
multi-word mention linking is exercised; relation surface forms are embedded
verbatim in the question patterns so token-overlap cosine weighting is
informative during retrieval. Every emitted question stores answers computed
by a breadth-first path oracle over the full triple set.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, asdict
from pathlib import Path

from .data import Corpus, Document, EntityLinkSet, KnowledgeBase, QuestionRecord
from .errors import DataError

log = logging.getLogger(__name__)

MANIFEST_FILE = "world.json"
SEED_SLOT = "<seed>"

# cycled through for the second token of entity names
_NAME_WORDS = (
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "lam", "mu", "nu", "xi", "omicron", "pi", "rho",
    "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
)

# first token of relation surface forms; padded with numbered verbs if exhausted
_REL_WORDS = (
    "maker", "parent", "holder", "keeper", "founder", "leader", "carrier",
    "seller", "mentor", "sponsor", "tenant", "curator", "patron", "rival",
)


@dataclass
class WorldSpec:
    num_entities: int = 500
    num_relation_types: int = 8
    triples_per_relation: int = 375
    text_coverage: float = 1.0
    num_one_hop: int = 1400
    num_two_hop: int = 600
    seed: int = 0

    def validate(self):
        if min(self.num_entities, self.num_relation_types, self.triples_per_relation) <= 0:
            raise DataError("world spec counts must be positive")
        if not 0.0 <= self.text_coverage <= 1.0:
            raise DataError("text_coverage must be in [0, 1]")
        if self.triples_per_relation > self.num_entities * (self.num_entities - 1):
            raise DataError(
                f"cannot place {self.triples_per_relation} distinct triples per relation "
                f"over {self.num_entities} entities")


@dataclass(frozen=True)
class QuestionTemplate:
    """A relation path of length 1 or 2 plus a surface pattern with one seed slot."""

    path: tuple[int, ...]
    pattern: tuple[str, ...]

    def instantiate(self, seed_name_tokens) -> tuple[str, ...]:
        out = []
        for tok in self.pattern:
            if tok == SEED_SLOT:
                out.extend(seed_name_tokens)
            else:
                out.append(tok)
        return tuple(out)


def entity_name(i: int) -> str:
    return f"ent_{i} {_NAME_WORDS[i % len(_NAME_WORDS)]}"


def relation_surface(j: int) -> tuple[str, ...]:
    word = _REL_WORDS[j] if j < len(_REL_WORDS) else f"relverb{j}"
    return (word, "of")


def generate_world(spec: WorldSpec):
    """Build (KnowledgeBase, Corpus, EntityLinkSet) from the spec, deterministically."""
    spec.validate()
    rng = random.Random(spec.seed)

    entities = {i: entity_name(i) for i in range(spec.num_entities)}
    relations = {j: relation_surface(j) for j in range(spec.num_relation_types)}

    triples = []
    seen = set()
    for r in range(spec.num_relation_types):
        placed = 0
        attempts = 0
        cap = 200 * spec.triples_per_relation + 1000
        while placed < spec.triples_per_relation:
            attempts += 1
            if attempts > cap:
                raise DataError(f"could not place triples for relation {r}; spec too dense")
            s = rng.randrange(spec.num_entities)
            o = rng.randrange(spec.num_entities)
            if s == o or (s, r, o) in seen:
                continue
            seen.add((s, r, o))
            triples.append((s, r, o))
            placed += 1
    kb = KnowledgeBase(entities, relations, triples)

    num_sentences = round(spec.text_coverage * len(kb.triples))
    chosen = sorted(rng.sample(range(len(kb.triples)), num_sentences))
    documents: dict[int, Document] = {}
    links = []
    for doc_id, triple_idx in enumerate(chosen):
        s, r, o = kb.triples[triple_idx]
        s_tokens = tuple(entities[s].split())
        o_tokens = tuple(entities[o].split())
        tokens = s_tokens + relations[r] + o_tokens
        documents[doc_id] = Document(title=s_tokens, tokens=tokens)
        for pos in range(len(s_tokens)):
            links.append((s, doc_id, pos))
        for pos in range(len(s_tokens) + len(relations[r]), len(tokens)):
            links.append((o, doc_id, pos))
    corpus = Corpus(documents)
    return kb, corpus, EntityLinkSet(links)


def default_templates(kb: KnowledgeBase, max_two_hop: int | None = None,
                      seed: int = 0) -> list[QuestionTemplate]:
    """One 1-hop template per relation plus a selection of 2-hop relation pairs."""
    rel_ids = sorted(kb.relations)
    templates = [
        QuestionTemplate(path=(r,), pattern=("what", "is", SEED_SLOT, *kb.relations[r]))
        for r in rel_ids
    ]
    pairs = [(r1, r2) for r1 in rel_ids for r2 in rel_ids]
    if max_two_hop is not None and len(pairs) > max_two_hop:
        pairs = random.Random(seed).sample(pairs, max_two_hop)
        pairs.sort()
    for r1, r2 in pairs:
        pattern = ("what", "is", SEED_SLOT, *kb.relations[r1], *kb.relations[r2])
        templates.append(QuestionTemplate(path=(r1, r2), pattern=pattern))
    return templates


def oracle_answers(kb: KnowledgeBase, seed_entity: int, path) -> set[int]:
    """Follow the relation path breadth-first from the seed over the full triple set."""
    if not 1 <= len(path) <= 2:
        raise ValueError(f"relation paths must have length 1 or 2, got {len(path)}")
    out_edges = kb.out_edges()
    frontier = {seed_entity}
    for r in path:
        frontier = {o for s in frontier for o in out_edges.get(s, {}).get(r, ())}
        if not frontier:
            break
    return frontier


def generate_questions(kb: KnowledgeBase, templates: list[QuestionTemplate],
                       num_one_hop: int, num_two_hop: int, seed: int):
    """Sample (template, seed entity) pairs with nonempty oracle answers.

    Returns (questions, paths) where paths[i] is the relation path of
    questions[i]; paths drive the KB-unanswerable accounting after the KB is
    downsampled.
    """
    rng = random.Random(seed)
    questions: list[QuestionRecord] = []
    paths: list[tuple[int, ...]] = []
    next_id = 0
    for hop, want in ((1, num_one_hop), (2, num_two_hop)):
        candidates = []
        for t_idx, template in enumerate(templates):
            if len(template.path) != hop:
                continue
            viable = [s for s in sorted(kb.entities)
                      if oracle_answers(kb, s, template.path)]
            if not viable:
                log.warning("template %s has no satisfying seed entity; skipped", template.path)
                continue
            candidates.extend((t_idx, s) for s in viable)
        if want > len(candidates):
            log.warning("only %d viable %d-hop questions available (%d requested)",
                        len(candidates), hop, want)
            want = len(candidates)
        for t_idx, s in sorted(rng.sample(candidates, want)):
            template = templates[t_idx]
            answers = oracle_answers(kb, s, template.path)
            questions.append(QuestionRecord(
                id=next_id,
                tokens=template.instantiate(kb.entities[s].split()),
                seeds=(s,),
                answers=tuple(sorted(answers)),
            ))
            paths.append(template.path)
            next_id += 1
    return questions, paths


def count_kb_unanswerable(questions: list[QuestionRecord], paths, kb: KnowledgeBase) -> int:
    """Questions whose gold answers are all unreachable via their path in ``kb``.

    With full text coverage these remain answerable from sentences, which is
    what makes the incomplete-KB fusion experiments informative.
    """
    count = 0
    for q, path in zip(questions, paths):
        reachable = oracle_answers(kb, q.seeds[0], path) if q.seeds else set()
        if not reachable & set(q.answers):
            count += 1
    return count


def write_manifest(directory, spec: WorldSpec, questions, paths):
    manifest = {
        "spec": asdict(spec),
        "num_questions": len(questions),
        "question_paths": {str(q.id): list(p) for q, p in zip(questions, paths)},
    }
    path = Path(directory) / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_manifest(directory):
    path = Path(directory) / MANIFEST_FILE
    manifest = json.loads(path.read_text(encoding="utf-8"))
    spec = WorldSpec(**manifest["spec"])
    paths = {int(k): tuple(v) for k, v in manifest["question_paths"].items()}
    return spec, paths
