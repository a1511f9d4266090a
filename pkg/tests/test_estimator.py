"""The scikit-learn style wrapper: protocol compliance and basic learning."""

import numpy as np
import pytest
from sklearn.base import clone

from graftnet.estimator import GraftNetClassifier, check_examples
from graftnet.pipeline import make_world, retrieve_subgraphs, split_questions
from graftnet.retrieval import RetrievalConfig
from graftnet.synth import WorldSpec
from graftnet.training import build_vocab, make_examples


@pytest.fixture(scope="module")
def example_sets():
    spec = WorldSpec(num_entities=40, num_relation_types=3, triples_per_relation=30,
                     text_coverage=1.0, num_one_hop=60, num_two_hop=0, seed=3)
    world = make_world(spec)
    subgraphs, _ = retrieve_subgraphs(world.kb, world.corpus, world.links,
                                      world.questions,
                                      RetrievalConfig(E=12, D=6, articles_top_k=3))
    vocab = build_vocab(world.corpus, world.questions)
    splits = split_questions(world.questions, seed=1)
    out = {"sizes": {"vocab_size": len(vocab),
                     "num_entities": max(world.kb.entities) + 1,
                     "num_relation_ids": world.kb.link_relation_id + 1}}
    for name, questions in splits.items():
        out[name], _ = make_examples(world.corpus, vocab, subgraphs, questions, "kb")
    return out


def test_get_set_params_round_trip():
    est = GraftNetClassifier(n=8, L=2, epochs=3, seed=5)
    params = est.get_params()
    assert params["n"] == 8 and params["seed"] == 5
    est.set_params(epochs=7)
    assert est.epochs == 7
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()


def test_check_examples_rejects_junk():
    with pytest.raises(ValueError):
        check_examples([])
    with pytest.raises(ValueError):
        check_examples([1, 2, 3])


def test_predict_before_fit_raises(example_sets):
    est = GraftNetClassifier(n=8, L=2)
    with pytest.raises(ValueError):
        est.predict_proba(example_sets["test"])


def test_fit_predict_score_cycle(example_sets):
    est = GraftNetClassifier(n=16, L=2, epochs=12, B=8, learning_rate=3e-3, seed=0)
    fitted = est.fit(example_sets["train"], dev=example_sets["dev"],
                     **example_sets["sizes"])
    assert fitted is est
    assert hasattr(est, "params_") and hasattr(est, "theta_")
    assert len(est.history_) <= 12

    probs = est.predict_proba(example_sets["test"])
    assert len(probs) == len(example_sets["test"])
    for p, ex in zip(probs, example_sets["test"]):
        assert p is not None
        assert set(p) == set(ex.subgraph.entities)
        assert all(0.0 < v < 1.0 for v in p.values())

    predicted = est.predict(example_sets["test"])
    assert all(isinstance(s, set) for s in predicted)

    score = est.score(example_sets["test"])
    assert 0.0 <= score <= 1.0
    # a 12-epoch run on an easy one-hop KB task should beat chance handily
    assert score >= 0.5


def test_fixed_theta_is_respected(example_sets):
    est = GraftNetClassifier(n=8, L=2, epochs=1, theta=0.25, seed=0)
    est.fit(example_sets["train"][:8])
    assert est.theta_ == 0.25
