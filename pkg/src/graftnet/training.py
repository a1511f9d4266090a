"""Distant supervision, the training loop, evaluation, and fusion.

Subgraph entity nodes are labeled positive exactly when they belong to the
gold answer set; training minimizes mean binary cross-entropy per question,
averaged over the batch, with KB edges randomly dropped per example per
epoch. Evaluation always runs on the full (undropped) graph. Questions with
no seed entities or an empty subgraph are skipped during training and scored
as incorrect during evaluation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import Corpus, QuestionRecord
from .errors import NumericFault
from .model import ModelConfig, ModelParams, forward
from .retrieval import QuestionSubgraph, restrict_mode

UNK_TOKEN = "<unk>"

THETA_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))
BETA_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass
class TrainerConfig:
    B: int = 8                    # batch size
    epochs: int = 20
    learning_rate: float = 1e-3
    p0: float = 0.0               # fact-dropout probability
    patience: int = 5
    seed: int = 0

    def validate(self):
        if self.B < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("p0 must lie in [0, 1]")


@dataclass
class EvalConfig:
    theta: float = 0.5

    def validate(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")


@dataclass
class LabeledExample:
    """A question with its subgraph, token ids, and per-entity labels."""

    question_id: int
    subgraph: QuestionSubgraph
    question_token_ids: tuple[int, ...]
    doc_token_ids: tuple[tuple[int, ...], ...]
    answers: tuple[int, ...]
    labels: np.ndarray | None = None

    @property
    def trainable(self) -> bool:
        return bool(self.subgraph.seeds) and len(self.subgraph.entities) > 0


def build_vocab(corpus: Corpus, questions: list[QuestionRecord]) -> dict[str, int]:
    """Token -> id over corpus and question text; id 0 is the unknown token."""
    tokens = set(corpus.vocabulary)
    for q in questions:
        tokens.update(q.tokens)
    tokens.discard(UNK_TOKEN)
    vocab = {UNK_TOKEN: 0}
    for tok in sorted(tokens):
        vocab[tok] = len(vocab)
    return vocab


def encode_tokens(tokens, vocab: dict[str, int]) -> tuple[int, ...]:
    unk = vocab[UNK_TOKEN]
    return tuple(vocab.get(t, unk) for t in tokens)


def distant_labels(subgraph: QuestionSubgraph, answers) -> np.ndarray:
    """y_v = 1 exactly when entity v is a gold answer, over subgraph entity order."""
    gold = set(answers)
    return np.array([1.0 if e in gold else 0.0 for e in subgraph.entities],
                    dtype=np.float32)


def make_examples(corpus: Corpus, vocab: dict[str, int],
                  subgraphs: dict[int, QuestionSubgraph],
                  questions: list[QuestionRecord], mode: str = "ef",
                  ) -> tuple[list[LabeledExample], float]:
    """Mode-restrict subgraphs, encode tokens, attach labels.

    Returns the examples and the answer recall: the fraction of questions
    whose subgraph retains at least one gold answer.
    """
    examples = []
    hits = 0
    for q in questions:
        sg = restrict_mode(subgraphs[q.id], mode)
        labels = distant_labels(sg, q.answers)
        if labels.sum() > 0:
            hits += 1
        examples.append(LabeledExample(
            question_id=q.id,
            subgraph=sg,
            question_token_ids=encode_tokens(q.tokens, vocab),
            doc_token_ids=tuple(encode_tokens(corpus.documents[d].tokens, vocab)
                                for d in sg.docs),
            answers=q.answers,
            labels=labels,
        ))
    recall = hits / len(questions) if questions else 0.0
    return examples, recall


def fact_dropout(subgraph: QuestionSubgraph, p0: float, rng: random.Random,
                 ) -> QuestionSubgraph:
    """Drop each KB edge independently with probability p0; link edges survive."""
    if p0 <= 0.0:
        return subgraph
    if p0 >= 1.0:
        kept = ()
    else:
        kept = tuple(e for e in subgraph.kb_edges if rng.random() >= p0)
    return replace(subgraph, kb_edges=kept)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train(examples: list[LabeledExample], params: ModelParams, tcfg: TrainerConfig,
          mcfg: ModelConfig, dev_examples: list[LabeledExample] | None = None,
          log_fn=None) -> list[dict]:
    """Fact-dropout SGD with Adam; early stopping on dev Hits@1.

    Mutates ``params`` in place, restoring the best-dev snapshot when a dev
    set is given. Returns the per-epoch history. Deterministic per seed.
    """
    tcfg.validate()
    rng = random.Random(tcfg.seed)
    trainable = [ex for ex in examples if ex.trainable]
    order = list(range(len(trainable)))

    history: list[dict] = []
    best_hits = -1.0
    best_arrays = None
    stale = 0
    for epoch in range(1, tcfg.epochs + 1):
        rng.shuffle(order)
        loss_sum = 0.0
        seen = 0
        for start in range(0, len(order), tcfg.B):
            batch = order[start:start + tcfg.B]
            for i in batch:
                ex = trainable[i]
                sg = fact_dropout(ex.subgraph, tcfg.p0, rng)
                result = forward(sg, ex.question_token_ids, ex.doc_token_ids,
                                 params, mcfg)
                loss = ad.bce_loss(result.probs, ex.labels)
                if not np.isfinite(loss.data):
                    raise NumericFault(
                        f"non-finite loss at epoch {epoch}, question {ex.question_id}: "
                        f"probs range [{result.probs.data.min()}, {result.probs.data.max()}]")
                loss_sum += float(loss.data)
                seen += 1
                ad.scale(loss, 1.0 / len(batch)).backward()
            params.store.adam_step(learning_rate=tcfg.learning_rate)

        entry = {"epoch": epoch, "train_loss": loss_sum / max(1, seen)}
        if dev_examples is not None:
            metrics = evaluate(dev_examples, params, mcfg, theta=0.5)
            entry["dev_hits1"] = metrics["hits1"]
            entry["dev_f1"] = metrics["f1"]
            if metrics["hits1"] > best_hits:
                best_hits = metrics["hits1"]
                best_arrays = params.store.state_arrays()
                stale = 0
            else:
                stale += 1
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if dev_examples is not None and stale > tcfg.patience:
            break

    if best_arrays is not None:
        params.store.load_arrays(best_arrays)
    return history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def predict_probs(examples: list[LabeledExample], params: ModelParams,
                  mcfg: ModelConfig) -> list[dict[int, float] | None]:
    """Per-question entity probabilities on the full graph; None if unanswerable."""
    out = []
    for ex in examples:
        if not ex.trainable:
            out.append(None)
            continue
        result = forward(ex.subgraph, ex.question_token_ids, ex.doc_token_ids,
                         params, mcfg)
        out.append(result.prob_map())
    return out


def top_prediction(prob_map: dict[int, float]) -> int:
    """Highest-probability entity; ties broken by ascending entity id."""
    return min(prob_map.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def question_f1(predicted: set[int], gold: set[int]) -> float:
    if not predicted or not gold:
        return 0.0
    correct = len(predicted & gold)
    if correct == 0:
        return 0.0
    precision = correct / len(predicted)
    recall = correct / len(gold)
    return 2.0 * precision * recall / (precision + recall)


def evaluate_probs(prob_maps, examples: list[LabeledExample], theta: float) -> dict:
    """Hits@1, mean per-question F1 at the threshold, and candidate answer recall.

    Unanswerable questions (prob map None) count as incorrect everywhere.
    """
    hits = 0.0
    f1 = 0.0
    recall = 0.0
    skipped = 0
    for probs, ex in zip(prob_maps, examples):
        gold = set(ex.answers)
        if probs is None:
            skipped += 1
            continue
        if gold & probs.keys():
            recall += 1.0
        if top_prediction(probs) in gold:
            hits += 1.0
        predicted = {e for e, p in probs.items() if p >= theta}
        f1 += question_f1(predicted, gold)
    n = len(examples)
    return {
        "hits1": hits / n if n else 0.0,
        "f1": f1 / n if n else 0.0,
        "recall": recall / n if n else 0.0,
        "unanswerable": skipped,
    }


def evaluate(examples: list[LabeledExample], params: ModelParams, mcfg: ModelConfig,
             theta: float) -> dict:
    return evaluate_probs(predict_probs(examples, params, mcfg), examples, theta)


def tune_threshold(prob_maps, examples: list[LabeledExample],
                   grid=THETA_GRID) -> float:
    """Grid value maximizing mean dev F1; ties go to the smallest threshold."""
    if not grid:
        raise ValueError("tune_threshold requires a nonempty grid")
    best_theta = None
    best_f1 = -1.0
    for theta in grid:
        score = evaluate_probs(prob_maps, examples, theta)["f1"]
        if score > best_f1:
            best_f1 = score
            best_theta = theta
    return best_theta


# ---------------------------------------------------------------------------
# late fusion
# ---------------------------------------------------------------------------


def late_fuse(p_kb: dict[int, float] | None, p_text: dict[int, float] | None,
              beta: float) -> dict[int, float] | None:
    """beta-weighted combination where both models score an entity; pass-through
    where only one does."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if p_kb is None and p_text is None:
        return None
    if p_kb is None:
        return dict(p_text)
    if p_text is None:
        return dict(p_kb)
    fused = {}
    for e in p_kb.keys() | p_text.keys():
        if e in p_kb and e in p_text:
            fused[e] = beta * p_kb[e] + (1.0 - beta) * p_text[e]
        elif e in p_kb:
            fused[e] = p_kb[e]
        else:
            fused[e] = p_text[e]
    return fused


def fuse_all(kb_maps, text_maps, beta: float):
    return [late_fuse(k, t, beta) for k, t in zip(kb_maps, text_maps)]


def tune_beta(kb_maps, text_maps, examples: list[LabeledExample],
              grid=BETA_GRID) -> float:
    """Ensemble weight maximizing dev Hits@1; ties go to the smallest beta."""
    best_beta = None
    best_hits = -1.0
    for beta in grid:
        fused = fuse_all(kb_maps, text_maps, beta)
        score = evaluate_probs(fused, examples, theta=0.5)["hits1"]
        if score > best_hits:
            best_hits = score
            best_beta = beta
    return best_beta
