"""World generator: counts, oracle soundness, determinism, incompleteness accounting."""

import pytest

from graftnet.data import mention_index, subsample_kb
from graftnet.errors import DataError
from graftnet.synth import (WorldSpec, count_kb_unanswerable, default_templates,
                            generate_questions, generate_world, oracle_answers)


def small_spec(**overrides):
    base = dict(num_entities=30, num_relation_types=3, triples_per_relation=20,
                text_coverage=1.0, seed=9)
    base.update(overrides)
    return WorldSpec(**base)


def test_zero_text_coverage_gives_empty_corpus():
    kb, corpus, links = generate_world(small_spec(text_coverage=0.0))
    assert len(corpus) == 0
    assert len(links) == 0


def test_full_coverage_sentence_and_link_counts():
    spec = small_spec(text_coverage=1.0)
    kb, corpus, links = generate_world(spec)
    assert len(corpus) == kb.num_triples
    # every sentence links subject and object, one link per covered token
    expected_links = 0
    for doc_id, doc in corpus.documents.items():
        title_len = len(doc.title)
        rel_len = len(doc.tokens) - title_len - 2  # object names are two tokens
        expected_links += title_len + (len(doc.tokens) - title_len - rel_len)
    assert len(links) == expected_links
    for doc in corpus.documents.values():
        assert doc.title == doc.tokens[:len(doc.title)]


def test_generated_links_satisfy_mention_inverse_property():
    kb, corpus, links = generate_world(small_spec())
    m, lpos = mention_index(links)
    for v, d, p in links.links:
        assert (d, p) in m[v]
        assert v in lpos[(d, p)]
    # all positions in bounds
    for v, d, p in links.links:
        assert 0 <= p < len(corpus.documents[d].tokens)


def test_world_generation_is_deterministic_per_seed():
    a = generate_world(small_spec(seed=4))
    b = generate_world(small_spec(seed=4))
    c = generate_world(small_spec(seed=5))
    assert a[0].triples == b[0].triples
    assert a[1].documents == b[1].documents
    assert a[0].triples != c[0].triples


def test_infeasible_spec_raises():
    with pytest.raises(DataError):
        generate_world(WorldSpec(num_entities=3, num_relation_types=1,
                                 triples_per_relation=10))


def test_oracle_one_hop_matches_adjacency():
    kb, _, _ = generate_world(small_spec())
    for s, r, o in kb.triples[:20]:
        assert o in oracle_answers(kb, s, (r,))


def test_oracle_two_hop_hand_case():
    from graftnet.data import KnowledgeBase
    kb = KnowledgeBase({0: "a x", 1: "b y", 2: "c z"}, {0: ("r1", "of"), 1: ("r2", "of")},
                       [(0, 0, 1), (1, 1, 2)])
    assert oracle_answers(kb, 0, (0, 1)) == {2}
    assert oracle_answers(kb, 0, (1,)) == set()
    assert oracle_answers(kb, 2, (0,)) == set()


def test_oracle_matches_exhaustive_enumeration():
    kb, _, _ = generate_world(small_spec(seed=21))
    triples = set(kb.triples)
    rels = sorted(kb.relations)
    for seed_entity in list(kb.entities)[:10]:
        for r1 in rels:
            expected = {o for (s, r, o) in triples if s == seed_entity and r == r1}
            assert oracle_answers(kb, seed_entity, (r1,)) == expected
            for r2 in rels:
                expected2 = {o2 for (s2, r2b, o2) in triples
                             for o1 in expected if s2 == o1 and r2b == r2}
                assert oracle_answers(kb, seed_entity, (r1, r2)) == expected2


def test_generated_questions_replay_through_oracle():
    kb, corpus, _ = generate_world(small_spec())
    templates = default_templates(kb, max_two_hop=4)
    questions, paths = generate_questions(kb, templates, num_one_hop=15,
                                          num_two_hop=5, seed=3)
    assert questions, "generator produced no questions"
    for q, path in zip(questions, paths):
        assert q.answers, "questions with no answers must never be emitted"
        assert set(q.answers) == oracle_answers(kb, q.seeds[0], path)
        # seed name appears in the question surface
        seed_tokens = kb.entities[q.seeds[0]].split()
        joined = " ".join(q.tokens)
        assert " ".join(seed_tokens) in joined
        # relation surface tokens appear too
        for r in path:
            assert " ".join(kb.relations[r]) in joined


def test_question_generation_deterministic_per_seed():
    kb, _, _ = generate_world(small_spec())
    templates = default_templates(kb, max_two_hop=4)
    a, _ = generate_questions(kb, templates, 12, 4, seed=8)
    b, _ = generate_questions(kb, templates, 12, 4, seed=8)
    assert a == b


def test_kb_unanswerable_count_after_downsampling():
    spec = small_spec(num_entities=40, triples_per_relation=40, seed=2)
    kb, corpus, _ = generate_world(spec)
    templates = default_templates(kb, max_two_hop=2)
    questions, paths = generate_questions(kb, templates, 30, 5, seed=1)

    assert count_kb_unanswerable(questions, paths, kb) == 0
    half = subsample_kb(kb, 0.5, seed=13)
    lost = count_kb_unanswerable(questions, paths, half)
    assert 0 < lost < len(questions)
    empty = subsample_kb(kb, 0.0, seed=13)
    assert count_kb_unanswerable(questions, paths, empty) == len(questions)
