"""Keyword re-extraction from classifier predictions and the keyword-change statistic."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, KeywordSet

log = logging.getLogger(__name__)

STOPWORDS = frozenset("""
a about above after again against all am an and any are as at be because been before being
below between both but by can could did do does doing down during each few for from further
had has have having he her here hers herself him himself his how i if in into is it its itself
just me more most my myself no nor not now of off on once only or other our ours ourselves out
over own same she should so some such than that the their theirs them themselves then there
these they this those through to too under until up very was we were what when where which
while who whom why will with would you your yours yourself yourselves also may might must said
says say one two new like get got us s t re ve ll d m
""".split())


@dataclass(frozen=True)
class ExtractionConfig:
    Z: int = 100
    M: float = 4
    stopwords: frozenset = STOPWORDS
    min_length: int = 2

    def __post_init__(self):
        if self.Z < 1 or self.M < 1:
            raise ValueError("Z and M must be at least 1")


@dataclass
class ScoreTable:
    words: list[str]
    tf: np.ndarray  # (words, classes)
    idf: np.ndarray  # (words,)
    M: float
    empty_classes: list[int] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.q = self.tf * self.idf[:, None] ** self.M
        self.row = {w: i for i, w in enumerate(self.words)}

    def score(self, word: str, k: int) -> float:
        return float(self.q[self.row[word], k])


def score_words(corpus: Corpus, predictions: Sequence[int], config: ExtractionConfig = ExtractionConfig()
                ) -> ScoreTable:
    """Q(w, k) = tanh(class term share) * ln(n / df(w)) ** M for every eligible word."""
    if len(predictions) != corpus.n:
        raise ValueError("need one prediction per document")
    C = corpus.num_classes
    words = sorted(w for w in corpus.doc_frequency
                   if len(w) >= config.min_length and w not in config.stopwords)
    row = {w: i for i, w in enumerate(words)}
    counts = np.zeros((len(words), C))
    class_len = np.zeros(C)
    for doc, k in zip(corpus.documents, predictions):
        class_len[k] += len(doc.tokens)
        idx = [row[t] for t in doc.tokens if t in row]
        np.add.at(counts[:, k], idx, 1.0)
    empty = [k for k in range(C) if not np.any(np.asarray(predictions) == k)]
    warnings = []
    for k in empty:
        msg = f"class {k} has no predicted documents; its scores are empty"
        log.warning(msg)
        warnings.append(msg)
    tf = np.zeros_like(counts)
    nz = class_len > 0
    tf[:, nz] = np.tanh(counts[:, nz] / class_len[nz])
    df = np.array([corpus.doc_frequency[w] for w in words], dtype=np.float64)
    idf = np.log(corpus.n / df) if len(words) else np.zeros(0)
    return ScoreTable(words, tf, idf, config.M, empty, warnings)


def extract_keywords(scores: ScoreTable, config: ExtractionConfig = ExtractionConfig()) -> KeywordSet:
    """Give each word to its best class, then keep the top Z per class (ties by word)."""
    C = scores.tf.shape[1]
    q = scores.q.copy()
    q[:, scores.empty_classes] = -np.inf
    best = np.argmax(q, axis=1) if len(scores.words) else np.zeros(0, dtype=int)
    classes = []
    for k in range(C):
        cand = [(-q[i, k], w) for i, w in enumerate(scores.words) if best[i] == k and q[i, k] > 0]
        cand.sort()
        classes.append([w for _, w in cand[:config.Z]])
    return KeywordSet(classes)


@dataclass(frozen=True)
class DeltaReport:
    delta: float
    added: tuple[str, ...]
    removed: tuple[str, ...]


def keyword_delta(previous: KeywordSet, new: KeywordSet) -> DeltaReport:
    """Share of the new (flattened) keyword set absent from the previous one."""
    prev, cur = previous.flat(), new.flat()
    if not cur:
        raise ValueError("new keyword set is empty")
    added = cur - prev
    return DeltaReport(len(added) / len(cur), tuple(sorted(added)), tuple(sorted(prev - cur)))
