"""End-to-end stages shared by the CLI and the experiment harness.

A single global seed fans out to per-stage seeds through a stable hash of the
stage name, so any stage (world generation, splitting, KB subsampling,
parameter init, training) can be reproduced in isolation and grid cells that
share a stage share its randomness.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import (Corpus, EntityLinkSet, KnowledgeBase, QuestionRecord,
                   load_dataset, save_dataset, subsample_kb)
from .model import ModelConfig, ModelParams
from .retrieval import (ArticleIndex, QuestionSubgraph, RetrievalConfig,
                        WordVectorTable, build_subgraph)
from .synth import (WorldSpec, count_kb_unanswerable, default_templates,
                    generate_questions, generate_world, read_manifest,
                    write_manifest)
from .training import (LabeledExample, TrainerConfig, build_vocab, evaluate_probs,
                       make_examples, predict_probs, train, tune_threshold)

SPLIT_FRACTIONS = (0.7, 0.1, 0.2)  # train / dev / test


def stage_seed(global_seed: int, stage: str) -> int:
    """Deterministic per-stage seed derived from the global seed."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass
class World:
    kb: KnowledgeBase
    corpus: Corpus
    links: EntityLinkSet
    questions: list[QuestionRecord]
    question_paths: dict[int, tuple[int, ...]] = field(default_factory=dict)
    spec: WorldSpec | None = None


def make_world(spec: WorldSpec) -> World:
    """Generate KB, corpus, links, and questions from one spec."""
    kb, corpus, links = generate_world(spec)
    templates = default_templates(kb, max_two_hop=len(kb.relations) * 2,
                                  seed=spec.seed)
    questions, paths = generate_questions(kb, templates, spec.num_one_hop,
                                          spec.num_two_hop, seed=spec.seed + 1)
    return World(kb=kb, corpus=corpus, links=links, questions=questions,
                 question_paths={q.id: p for q, p in zip(questions, paths)},
                 spec=spec)


def save_world(world: World, directory):
    save_dataset(directory, world.kb, world.corpus, world.links, world.questions)
    paths = [world.question_paths.get(q.id, ()) for q in world.questions]
    write_manifest(directory, world.spec or WorldSpec(), world.questions, paths)


def load_world(directory) -> World:
    kb, corpus, links, questions = load_dataset(directory)
    spec = None
    paths = {}
    if (Path(directory) / "world.json").exists():
        spec, paths = read_manifest(directory)
    return World(kb=kb, corpus=corpus, links=links, questions=questions,
                 question_paths=paths, spec=spec)


def split_questions(questions: list[QuestionRecord], seed: int,
                    fractions=SPLIT_FRACTIONS) -> dict[str, list[QuestionRecord]]:
    """Deterministic shuffled train/dev/test split."""
    import random
    order = sorted(questions, key=lambda q: q.id)
    random.Random(seed).shuffle(order)
    n = len(order)
    n_train = int(fractions[0] * n)
    n_dev = int(fractions[1] * n)
    return {
        "train": order[:n_train],
        "dev": order[n_train:n_train + n_dev],
        "test": order[n_train + n_dev:],
    }


def retrieve_subgraphs(kb: KnowledgeBase, corpus: Corpus, links: EntityLinkSet,
                       questions: list[QuestionRecord], rcfg: RetrievalConfig,
                       table: WordVectorTable | None = None,
                       ) -> tuple[dict[int, QuestionSubgraph], dict]:
    """Build every question's subgraph; report answer recall and seedless counts."""
    table = table or WordVectorTable()
    index = ArticleIndex(corpus)
    subgraphs = {}
    with_answer = 0
    seedless = 0
    for q in questions:
        sg = build_subgraph(kb, corpus, links, q, rcfg, table, index)
        subgraphs[q.id] = sg
        if set(q.answers) & set(sg.entities):
            with_answer += 1
        if not q.seeds:
            seedless += 1
    report = {
        "num_questions": len(questions),
        "recall": with_answer / len(questions) if questions else 0.0,
        "seedless_questions": seedless,
    }
    return subgraphs, report


# ---------------------------------------------------------------------------
# one training/evaluation cell
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    metrics: dict
    history: list[dict]
    theta: float
    params: ModelParams
    examples: dict[str, list[LabeledExample]]
    retrieval_report: dict


def run_experiment(world: World, *, mode: str = "ef", kb_fraction: float = 1.0,
                   rcfg: RetrievalConfig | None = None,
                   mcfg: ModelConfig | None = None,
                   tcfg: TrainerConfig | None = None,
                   seed: int = 0,
                   subgraphs: dict[int, QuestionSubgraph] | None = None,
                   retrieval_report: dict | None = None,
                   split_fractions=SPLIT_FRACTIONS,
                   log_fn=None) -> ExperimentResult:
    """Subsample the KB, retrieve, train, tune the threshold, evaluate.

    ``seed`` is the global seed; subsampling, splitting, initialization, and
    training each derive their own stream from it (the seed field of ``tcfg``
    is ignored). ``subgraphs`` may be supplied to share retrieval output
    between cells that use the same KB fraction; mode restriction happens per
    cell.
    """
    rcfg = rcfg or RetrievalConfig()
    mcfg = mcfg or ModelConfig()
    base_tcfg = tcfg or TrainerConfig()

    kb = world.kb
    if kb_fraction < 1.0:
        kb = subsample_kb(kb, kb_fraction,
                          seed=stage_seed(seed, f"subsample:{kb_fraction}"))
    if subgraphs is None:
        subgraphs, retrieval_report = retrieve_subgraphs(
            kb, world.corpus, world.links, world.questions, rcfg)

    splits = split_questions(world.questions, seed=stage_seed(seed, "split"),
                             fractions=split_fractions)
    vocab = build_vocab(world.corpus, world.questions)
    examples = {}
    for name, questions in splits.items():
        examples[name], _ = make_examples(world.corpus, vocab, subgraphs,
                                          questions, mode)

    num_entities = (max(world.kb.entities) + 1) if world.kb.entities else 1
    params = ModelParams.init(
        vocab_size=len(vocab), num_entities=num_entities,
        num_relation_ids=world.kb.link_relation_id + 1,
        config=mcfg, seed=stage_seed(seed, "init"))

    tcfg = TrainerConfig(B=base_tcfg.B, epochs=base_tcfg.epochs,
                         learning_rate=base_tcfg.learning_rate, p0=base_tcfg.p0,
                         patience=base_tcfg.patience,
                         seed=stage_seed(seed, "train"))
    history = train(examples["train"], params, tcfg, mcfg,
                    dev_examples=examples["dev"], log_fn=log_fn)

    dev_probs = predict_probs(examples["dev"], params, mcfg)
    theta = tune_threshold(dev_probs, examples["dev"]) if examples["dev"] else 0.5
    test_probs = predict_probs(examples["test"], params, mcfg)
    metrics = evaluate_probs(test_probs, examples["test"], theta)
    metrics["theta"] = theta
    metrics["kb_fraction"] = kb_fraction
    metrics["mode"] = mode
    if world.question_paths:
        metrics["kb_unanswerable"] = count_kb_unanswerable(
            world.questions, [world.question_paths.get(q.id, ()) for q in world.questions], kb)
    return ExperimentResult(metrics=metrics, history=history, theta=theta,
                            params=params, examples=examples,
                            retrieval_report=retrieval_report or {})


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Named ablation variants of the model configuration."""
    cfg = ModelConfig(**base.to_dict())
    if variant == "full":
        return cfg
    if variant == "nh":
        cfg.heterogeneous_updates = False
        return cfg
    if variant == "undirected":
        cfg.directed_propagation = False
        return cfg
    if variant == "noattn":
        cfg.relation_attention = False
        return cfg
    raise ValueError(f"unknown model variant {variant!r}; "
                     "expected full, nh, undirected, or noattn")


def ablate_grid(world: World, *, kb_fractions, p0_grid, variants, mode: str,
                rcfg: RetrievalConfig, mcfg: ModelConfig, tcfg: TrainerConfig,
                seed: int, reps: int = 1, log_fn=None) -> list[dict]:
    """Cartesian grid of runs; one row per (fraction, p0, variant, rep).

    Rep 0 runs with the global seed itself, so a one-point grid reproduces a
    standalone train+eval run exactly.
    """
    rows = []
    rep_seeds = [seed] + [stage_seed(seed, f"rep:{r}") for r in range(1, reps)]
    for fraction in kb_fractions:
        for rep, rep_seed in enumerate(rep_seeds):
            kb = world.kb
            if fraction < 1.0:
                kb = subsample_kb(kb, fraction,
                                  seed=stage_seed(rep_seed, f"subsample:{fraction}"))
            subgraphs, report = retrieve_subgraphs(kb, world.corpus, world.links,
                                                   world.questions, rcfg)
            for p0 in p0_grid:
                for variant in variants:
                    cell_tcfg = TrainerConfig(
                        B=tcfg.B, epochs=tcfg.epochs, learning_rate=tcfg.learning_rate,
                        p0=p0, patience=tcfg.patience)
                    result = run_experiment(
                        world, mode=mode, kb_fraction=fraction, rcfg=rcfg,
                        mcfg=variant_config(mcfg, variant), tcfg=cell_tcfg,
                        seed=rep_seed, subgraphs=subgraphs,
                        retrieval_report=report, log_fn=log_fn)
                    row = {"kb_fraction": fraction, "p0": p0, "variant": variant,
                           "rep": rep, "seed": rep_seed}
                    row.update({k: result.metrics[k]
                                for k in ("hits1", "f1", "recall", "theta")})
                    rows.append(row)
    return rows
