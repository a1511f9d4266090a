"""Exploration sweep for the incomplete-KB protocol (one seed)."""
import sys
import time

import graftnet.pipeline as pl
from graftnet.synth import WorldSpec, default_templates, generate_questions, generate_world
from graftnet.retrieval import RetrievalConfig
from graftnet.model import ModelConfig
from graftnet.training import TrainerConfig

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0

spec = WorldSpec(num_entities=80, num_relation_types=4, triples_per_relation=120,
                 text_coverage=1.0, num_one_hop=400, num_two_hop=0, seed=7)
kb, corpus, links = generate_world(spec)
templates = default_templates(kb, max_two_hop=0, seed=spec.seed)
questions, paths = generate_questions(kb, templates, 400, 0, seed=8)
world = pl.World(kb=kb, corpus=corpus, links=links, questions=questions,
                 question_paths={q.id: p for q, p in zip(questions, paths)}, spec=spec)
print(f'questions: {len(questions)}', flush=True)

rcfg = RetrievalConfig(E=25, D=8, articles_top_k=5)
mcfg = ModelConfig(n=32, L=2)
SPLITS = (0.6, 0.15, 0.25)

def cell(mode, frac, p0, variant='full', epochs=80, patience=20):
    tcfg = TrainerConfig(B=8, epochs=epochs, learning_rate=3e-3, p0=p0, patience=patience)
    t0 = time.time()
    res = pl.run_experiment(world, mode=mode, kb_fraction=frac, rcfg=rcfg,
                            mcfg=pl.variant_config(mcfg, variant), tcfg=tcfg,
                            seed=SEED, split_fractions=SPLITS)
    m = res.metrics
    best = max((h.get('dev_hits1', 0) for h in res.history), default=0)
    print(f'{mode}@{frac} p0={p0} {variant}: hits1={m["hits1"]:.3f} f1={m["f1"]:.3f} '
          f'recall={m["recall"]:.3f} best_dev={best:.3f} '
          f'({time.time()-t0:.0f}s, {len(res.history)} ep)', flush=True)
    return res

cell('text', 1.0, 0.0)
for frac in (0.1, 0.3, 0.5):
    cell('kb', frac, 0.0)
for frac in (0.1, 0.3, 0.5):
    cell('ef', frac, 0.2)
for p0 in (0.0, 0.1, 0.3):
    cell('ef', 0.5, p0)
cell('ef', 0.5, 0.2, 'nh')
cell('ef', 1.0, 0.2, 'nh')
cell('ef', 1.0, 0.2, 'full')
