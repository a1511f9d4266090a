"""Question answering over a knowledge base fused with entity-linked text.

The pipeline: generate or load a world (KB triples, linked sentences,
questions), retrieve a per-question subgraph (personalized PageRank over the
KB plus two-stage text retrieval), propagate embeddings through the
heterogeneous graph, and classify each entity node as an answer.
"""

from .data import (Corpus, Document, EntityLinkSet, KnowledgeBase, QuestionRecord,
                   load_dataset, mention_index, save_dataset, subsample_kb)
from .estimator import GraftNetClassifier
from .model import ModelConfig, ModelParams, forward
from .params import ParamStore, load_checkpoint, save_checkpoint
from .retrieval import (QuestionSubgraph, RetrievalConfig, WordVectorTable,
                        build_subgraph, personalized_pagerank)
from .synth import WorldSpec, generate_questions, generate_world, oracle_answers
from .training import (EvalConfig, LabeledExample, TrainerConfig, evaluate,
                       late_fuse, train, tune_threshold)

__all__ = [
    "Corpus", "Document", "EntityLinkSet", "EvalConfig", "GraftNetClassifier",
    "KnowledgeBase", "LabeledExample", "ModelConfig", "ModelParams", "ParamStore",
    "QuestionRecord", "QuestionSubgraph", "RetrievalConfig", "TrainerConfig",
    "WordVectorTable", "WorldSpec", "build_subgraph", "evaluate", "forward",
    "generate_questions", "generate_world", "late_fuse", "load_checkpoint",
    "load_dataset", "mention_index", "oracle_answers", "personalized_pagerank",
    "save_checkpoint", "save_dataset", "subsample_kb", "train", "tune_threshold",
]

__version__ = "0.1.0"
