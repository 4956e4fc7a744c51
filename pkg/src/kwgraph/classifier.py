"""Downstream text classifier trained on pseudo-labels.

Any object with ``train(corpus, labels)`` and ``predict(corpus)`` can stand in;
the shipped one is tf-idf bag-of-words into a linear softmax layer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np
import scipy.sparse as sp

from . import nn
from .annotator import PseudoLabeling
from .corpus import Corpus, Document

log = logging.getLogger(__name__)


class ClassifierError(ValueError):
    pass


@runtime_checkable
class TextClassifier(Protocol):
    def train(self, corpus: Corpus, labels: PseudoLabeling) -> "TextClassifier": ...

    def predict(self, corpus: Corpus) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.01


@dataclass(frozen=True)
class SelfTrainConfig:
    rounds: int = 3
    confidence_threshold: float = 0.9
    epochs: int = 5

    def __post_init__(self):
        if not 0.5 < self.confidence_threshold <= 1.0:
            raise ValueError("confidence threshold must lie in (0.5, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")


class BowFeaturizer:
    """L2-normalised tf-idf rows over the vocabulary of the corpus it was fit on."""

    def __init__(self, corpus: Corpus):
        words = sorted(corpus.doc_frequency)
        self.vocabulary = {w: i for i, w in enumerate(words)}
        df = np.array([corpus.doc_frequency[w] for w in words], dtype=np.float64)
        self.idf = np.log((1.0 + corpus.n) / (1.0 + df)) + 1.0

    def __len__(self) -> int:
        return len(self.vocabulary)

    def transform(self, docs: Sequence[Document]) -> sp.csr_matrix:
        rows, cols = [], []
        for r, doc in enumerate(docs):
            for tok in doc.tokens:
                c = self.vocabulary.get(tok)
                if c is not None:
                    rows.append(r)
                    cols.append(c)
        x = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(docs), len(self.vocabulary)))
        x.sum_duplicates()
        x = x.multiply(self.idf[None, :]).tocsr()
        norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
        norms[norms == 0] = 1.0
        return sp.csr_matrix(sp.diags(1.0 / norms) @ x)


class LinearTextClassifier:
    def __init__(self, featurizer: BowFeaturizer, num_classes: int, config: TrainConfig = TrainConfig(),
                 seed: int = 0):
        self.featurizer = featurizer
        self.num_classes = num_classes
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.weight = nn.Parameter(np.zeros((len(featurizer), num_classes)), "clf.weight")
        self.bias = nn.Parameter(np.zeros((1, num_classes)), "clf.bias")

    @classmethod
    def for_corpus(cls, corpus: Corpus, config: TrainConfig = TrainConfig(), seed: int = 0):
        return cls(BowFeaturizer(corpus), corpus.num_classes, config, seed)

    def parameters(self) -> list[nn.Parameter]:
        return [self.weight, self.bias]

    def logits(self, x: sp.csr_matrix) -> nn.Tensor:
        return nn.add(nn.spmm(x, self.weight), self.bias)

    def fit_features(self, x: sp.csr_matrix, y: np.ndarray, epochs: Optional[int] = None) -> float:
        cfg = self.config
        epochs = cfg.epochs if epochs is None else epochs
        opt = nn.OptimizerConfig(cfg.learning_rate, cfg.weight_decay)
        params = self.parameters()
        for p in params:
            p.reset_optimizer()
        loss_value = math.nan
        for _ in range(epochs):
            order = self.rng.permutation(x.shape[0])
            for a in range(0, len(order), cfg.batch_size):
                idx = order[a:a + cfg.batch_size]
                nn.zero_grad(params)
                loss = nn.cross_entropy(self.logits(x[idx]), y[idx])
                loss.backward()
                nn.adamw_step(params, opt)
                loss_value = float(loss.value[0, 0])
        return loss_value

    def train(self, corpus: Corpus, labels: PseudoLabeling, epochs: Optional[int] = None) -> "LinearTextClassifier":
        """Fit on covered documents only; uncovered documents are never read."""
        idx = labels.covered_indices()
        if not idx:
            raise ClassifierError("pseudo-labeling covers no documents")
        docs = [corpus.documents[i] for i in idx]
        y = np.array([labels.labels[i] for i in idx], dtype=np.int64)
        self.fit_features(self.featurizer.transform(docs), y, epochs)
        return self

    def predict_proba(self, corpus: Corpus) -> np.ndarray:
        x = self.featurizer.transform(corpus.documents)
        return nn.softmax(self.logits(x).value)

    def predict(self, corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
        probs = self.predict_proba(corpus)
        labels = probs.argmax(axis=1)
        return labels, probs[np.arange(len(labels)), labels]


def self_train(clf: LinearTextClassifier, corpus: Corpus, config: SelfTrainConfig = SelfTrainConfig()
               ) -> LinearTextClassifier:
    """Retrain on confident own predictions until the kept set stops changing."""
    previous = None
    for r in range(config.rounds):
        labels, conf = clf.predict(corpus)
        keep = conf >= config.confidence_threshold
        kept = (tuple(np.flatnonzero(keep)), tuple(labels[keep]))
        if not keep.any() or kept == previous:
            log.info("self-training stopped after %d rounds", r)
            break
        previous = kept
        log.info("self-training round %d: %d/%d confident", r + 1, int(keep.sum()), corpus.n)
        pl = PseudoLabeling([int(y) if k else None for y, k in zip(labels, keep)],
                            [float(c) if k else None for c, k in zip(conf, keep)])
        clf.train(corpus, pl, epochs=config.epochs)
    return clf
