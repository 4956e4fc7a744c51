import json

import numpy as np
import pytest
import scipy.sparse as sp

from kwgraph.corpus import Corpus, Document, KeywordSet
from kwgraph.graph import KeywordGraph


def make_corpus(token_lists, num_classes=2, labels=None):
    labels = labels if labels is not None else [None] * len(token_lists)
    docs = [Document.from_text(f"d{i}", " ".join(toks), y) for i, (toks, y) in enumerate(zip(token_lists, labels))]
    return Corpus(docs, num_classes)


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


def random_keyword_corpus(rng, num_words=8, num_docs=30, num_classes=3, max_len=12):
    words = [f"k{i}" for i in range(num_words)]
    classes = [[] for _ in range(num_classes)]
    for i, w in enumerate(words):
        classes[i % num_classes].append(w)
    keywords = KeywordSet(classes)
    vocab = words + [f"f{i}" for i in range(6)]
    docs = [[vocab[j] for j in rng.integers(len(vocab), size=rng.integers(0, max_len + 1))]
            for _ in range(num_docs)]
    return make_corpus(docs, num_classes), keywords


def graph_from_weights(weights, num_classes=2):
    n = len(weights)
    classes = [[f"v{i}" for i in range(n) if i % num_classes == k] for k in range(num_classes)]
    # class-major indexing: reorder weights to follow KeywordSet indices
    ks = KeywordSet(classes)
    perm = [int(w[1:]) for w in ks.words]
    w = np.asarray(weights)[np.ix_(perm, perm)]
    return KeywordGraph(ks, sp.csr_matrix(w))


def random_graph(rng, n, density=0.3, num_classes=2):
    w = rng.integers(1, 5, size=(n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(w, 0)
    return graph_from_weights(w, num_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS: list[str] = []


def record_acceptance(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
    print(line)
    ACCEPTANCE_RESULTS.append(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
