"""Scikit-learn style front end for the propagation model.

X is a list of LabeledExample objects (question plus retrieved subgraph plus
encoded tokens); labels live inside the examples, so ``y`` is accepted and
ignored for pipeline compatibility. Hyperparameters mirror the model and
trainer configs so the estimator works with ``get_params``/``set_params``,
``clone``, and grid search.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .model import ModelConfig, ModelParams
from .training import (LabeledExample, TrainerConfig, evaluate_probs, predict_probs,
                       train, tune_threshold)


def check_examples(X) -> list[LabeledExample]:
    """Validate estimator input: a nonempty list of LabeledExample."""
    if not isinstance(X, (list, tuple)) or not X:
        raise ValueError("X must be a nonempty list of LabeledExample objects")
    for i, ex in enumerate(X):
        if not isinstance(ex, LabeledExample):
            raise ValueError(f"X[{i}] is {type(ex).__name__}, expected LabeledExample")
    return list(X)


class GraftNetClassifier(BaseEstimator):
    """Binary node classifier over question subgraphs, trained end to end.

    After ``fit``: ``params_`` holds the learned tensors, ``history_`` the
    per-epoch log, and ``theta_`` the answer threshold (tuned on ``dev`` when
    given, otherwise 0.5 or the ``theta`` constructor value).
    """

    def __init__(self, n=64, L=3, mixing_rate=0.5, heterogeneous_updates=True,
                 directed_propagation=True, relation_attention=True,
                 epochs=20, B=8, learning_rate=1e-3, p0=0.0, patience=5,
                 theta=None, seed=0):
        self.n = n
        self.L = L
        self.mixing_rate = mixing_rate
        self.heterogeneous_updates = heterogeneous_updates
        self.directed_propagation = directed_propagation
        self.relation_attention = relation_attention
        self.epochs = epochs
        self.B = B
        self.learning_rate = learning_rate
        self.p0 = p0
        self.patience = patience
        self.theta = theta
        self.seed = seed

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            n=self.n, L=self.L, mixing_rate=self.mixing_rate,
            heterogeneous_updates=self.heterogeneous_updates,
            directed_propagation=self.directed_propagation,
            relation_attention=self.relation_attention,
        )

    def fit(self, X, y=None, dev=None, vocab_size=None, num_entities=None,
            num_relation_ids=None):
        """Train on labeled examples; ``dev`` drives early stopping and the threshold.

        Vocabulary/entity/relation table sizes are inferred from the examples
        when not given; pass them explicitly if prediction-time examples may
        reference ids unseen during fitting.
        """
        examples = check_examples(X)
        dev_examples = check_examples(dev) if dev else None
        sized_over = examples + (dev_examples or [])
        if vocab_size is None:
            vocab_size = 1 + max(
                (max(ids) for ex in sized_over
                 for ids in (ex.question_token_ids, *ex.doc_token_ids) if ids),
                default=0)
        if num_entities is None:
            num_entities = 1 + max(
                (max(ex.subgraph.entities) for ex in sized_over if ex.subgraph.entities),
                default=0)
        if num_relation_ids is None:
            num_relation_ids = 1 + max(ex.subgraph.link_relation_id for ex in sized_over)

        self.model_config_ = self._model_config()
        self.params_ = ModelParams.init(vocab_size, num_entities, num_relation_ids,
                                        self.model_config_, seed=self.seed)
        tcfg = TrainerConfig(B=self.B, epochs=self.epochs,
                             learning_rate=self.learning_rate, p0=self.p0,
                             patience=self.patience, seed=self.seed)
        self.history_ = train(examples, self.params_, tcfg, self.model_config_,
                              dev_examples=dev_examples)
        if self.theta is not None:
            self.theta_ = float(self.theta)
        elif dev_examples:
            dev_probs = predict_probs(dev_examples, self.params_, self.model_config_)
            self.theta_ = tune_threshold(dev_probs, dev_examples)
        else:
            self.theta_ = 0.5
        return self

    def predict_proba(self, X) -> list[dict[int, float] | None]:
        """Per-question maps entity id -> answer probability (None if no seeds)."""
        self._check_fitted()
        examples = check_examples(X)
        for ex in examples:
            ids = [i for seq in (ex.question_token_ids, *ex.doc_token_ids) for i in seq]
            if ids and max(ids) >= self.params_.vocab_size:
                raise ValueError(
                    "example references token ids outside the fitted vocabulary; "
                    "pass vocab_size to fit()")
            if ex.subgraph.entities and max(ex.subgraph.entities) >= self.params_.num_entities:
                raise ValueError(
                    "example references entity ids outside the fitted table; "
                    "pass num_entities to fit()")
        return predict_probs(examples, self.params_, self.model_config_)

    def predict(self, X) -> list[set[int]]:
        """Thresholded answer sets at ``theta_``."""
        probs = self.predict_proba(X)
        return [set() if p is None else {e for e, v in p.items() if v >= self.theta_}
                for p in probs]

    def score(self, X, y=None) -> float:
        """Hits@1: fraction of questions whose top-scored entity is a gold answer."""
        probs = self.predict_proba(X)
        return evaluate_probs(probs, check_examples(X), self.theta_)["hits1"]

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValueError("this GraftNetClassifier instance is not fitted yet")
