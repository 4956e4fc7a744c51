"""Weakly-supervised text classification over a keyword co-occurrence graph."""

from .corpus import Corpus, Document, KeywordSet, coverage, kf, load_corpus, load_keywords, tokenize
from .graph import KeywordGraph, Subgraph, WalkParams, build_graph, fit_walk_params, sample_walk
from .annotator import GINAnnotator, PseudoLabeling, annotate, finetune, ssl_pretrain, voting_label
from .classifier import LinearTextClassifier, self_train
from .extraction import extract_keywords, keyword_delta, score_words
from .metrics import evaluate
from .pipeline import RunConfig, run_iteration, run_until_convergence

__version__ = "0.1.0"
