"""Synthetic corpora with a context-dependent pivot keyword.

Every class owns a topical vocabulary (Zipf-weighted) and a few seed
keywords; all classes share a filler vocabulary. Class 0 additionally owns
the pivot keyword, which also turns up in other classes next to one of
their seeds:

* misled documents (an ``ambiguity`` fraction) repeat the pivot twice and
  the own seed once, so keyword counting picks class 0;
* resolved documents (``resolved_ratio`` per misled one) repeat the own
  seed twice and the pivot once, so counting gets them right.

Both kinds hit the same keyword set {pivot, own seed}, which never occurs in
a class-0 document: the hit set determines the class while the repeat
counts that drive counting are noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Document, KeywordSet

PIVOT = "pivot"
PIVOT_CLASS = 0


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 2
    topic_vocab: int = 300
    shared_vocab: int = 100
    seeds_per_class: int = 3
    ambiguity: float = 0.3
    resolved_ratio: float = 1.5
    uncovered: float = 0.2
    n: int = 5000
    min_len: int = 20
    max_len: int = 40
    topic_share: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.ambiguity < 1:
            raise ValueError("ambiguity fraction must lie in [0, 1)")
        if self.ambiguity * (1 + self.resolved_ratio) >= 1:
            raise ValueError("ambiguity * (1 + resolved_ratio) must stay below 1")
        if self.ambiguity > 0 and self.num_classes < 2:
            raise ValueError("ambiguous documents need a class other than the pivot's")
        if not 0 <= self.uncovered < 1:
            raise ValueError("uncovered fraction must lie in [0, 1)")
        if self.seeds_per_class < 2:
            raise ValueError("need at least two seeds per class")


@dataclass
class SyntheticCorpus:
    corpus: Corpus
    keywords: KeywordSet
    ambiguous: np.ndarray  # bool per document: counting is misled by the pivot
    covered: np.ndarray  # bool per document (initial keywords)

    @property
    def counting_accuracy(self) -> float:
        """Counting accuracy on covered documents, from construction bookkeeping alone."""
        cov = int(self.covered.sum())
        return float((cov - int(self.ambiguous.sum())) / cov) if cov else float("nan")


def topic_word(k: int, i: int) -> str:
    return f"c{k}t{i}"


def seed_word(k: int, j: int) -> str:
    return f"c{k}s{j}"


def shared_word(i: int) -> str:
    return f"w{i}"


def initial_keywords(spec: SynthSpec) -> KeywordSet:
    classes = []
    for k in range(spec.num_classes):
        if k == PIVOT_CLASS:
            classes.append([PIVOT] + [seed_word(k, j) for j in range(spec.seeds_per_class - 1)])
        else:
            classes.append([seed_word(k, j) for j in range(spec.seeds_per_class)])
    return KeywordSet(classes)


def generate_synthetic_corpus(spec: SynthSpec = SynthSpec()) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    keywords = initial_keywords(spec)
    zipf = 1.0 / np.arange(1, spec.topic_vocab + 1)
    zipf /= zipf.sum()
    seeds = [[w for w in ws if w != PIVOT] for ws in keywords.classes]
    others = [k for k in range(spec.num_classes) if k != PIVOT_CLASS]

    # plain documents fill classes left short by the pivot documents
    pivot_mass = spec.ambiguity * (1 + spec.resolved_ratio)
    mass = np.full(spec.num_classes, 0.0)
    mass[others] = pivot_mass / max(len(others), 1)
    deficit = np.maximum(1.0 / spec.num_classes - mass, 0.0)
    plain_p = deficit / deficit.sum() if deficit.sum() > 0 else np.full(spec.num_classes, 1 / spec.num_classes)

    docs, ambiguous, covered = [], [], []
    for i in range(spec.n):
        u = rng.random()
        kind = "misled" if u < spec.ambiguity else "resolved" if u < pivot_mass else "plain"
        if kind == "plain":
            label = int(rng.choice(spec.num_classes, p=plain_p))
        else:
            label = int(others[rng.integers(len(others))])
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        topical = rng.random(length) < spec.topic_share
        t_idx = rng.choice(spec.topic_vocab, size=length, p=zipf)
        s_idx = rng.integers(spec.shared_vocab, size=length)
        words = [topic_word(label, int(t)) if is_t else shared_word(int(s))
                 for is_t, t, s in zip(topical, t_idx, s_idx)]

        inserts: list[str] = []
        if kind != "plain":
            own = seeds[label][int(rng.integers(len(seeds[label])))]
            inserts = [PIVOT, PIVOT, own] if kind == "misled" else [PIVOT, own, own]
        elif rng.random() >= spec.uncovered:
            m = int(rng.integers(1, 4))
            inserts = [seeds[label][int(j)] for j in rng.integers(len(seeds[label]), size=m)]
            if label == PIVOT_CLASS and rng.random() < 0.5:
                inserts.append(PIVOT)
        for w in inserts:
            words.insert(int(rng.integers(len(words) + 1)), w)

        docs.append(Document.from_text(f"d{i:06d}", " ".join(words), label))
        ambiguous.append(kind == "misled")
        covered.append(bool(inserts))
    corpus = Corpus(docs, spec.num_classes)
    return SyntheticCorpus(corpus, keywords, np.array(ambiguous), np.array(covered))
