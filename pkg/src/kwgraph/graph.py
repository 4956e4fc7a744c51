"""Keyword co-occurrence graph, induced subgraphs and weighted random walks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Corpus, Document, KeywordSet, kf

log = logging.getLogger(__name__)

MAX_WALK_LENGTH = 128


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Vertex:
    word: str
    class_id: int
    index: int


@dataclass(frozen=True)
class Subgraph:
    vertex_ids: tuple[int, ...]
    induced_edges: dict = field(default_factory=dict)  # (src, dst) -> F


@dataclass(frozen=True)
class WalkParams:
    u_s: float
    sigma2_s: float

    def __post_init__(self):
        if not self.sigma2_s >= 0:
            raise GraphError("walk-length variance must be non-negative")


class KeywordGraph:
    """Directed keyword graph; ``weights[i, j]`` holds the co-occurrence count F_ij."""

    def __init__(self, keywords: KeywordSet, weights: sp.csr_matrix, warnings: Sequence[str] = ()):
        self.keywords = keywords
        self.num_classes = keywords.num_classes
        self.vertices = [Vertex(w, keywords.class_of[w], i) for i, w in enumerate(keywords.words)]
        self.class_ids = np.array(keywords.class_ids(), dtype=np.int64)
        n = len(self.vertices)
        weights = sp.csr_matrix(weights, shape=(n, n), dtype=np.int64)
        weights.setdiag(0)
        weights.eliminate_zeros()
        weights.sort_indices()
        self.weights = weights
        self.warnings = list(warnings)
        self.out_weight_sum = np.asarray(weights.sum(axis=1)).ravel().astype(np.int64)

        # cumulative transition table: row i occupies (i, i + 1]
        indptr, w = weights.indptr, weights.data.astype(np.float64)
        row = np.repeat(np.arange(n), np.diff(indptr))
        cum = np.zeros_like(w)
        for i in np.flatnonzero(self.out_weight_sum):
            a, b = indptr[i], indptr[i + 1]
            cum[a:b] = i + np.cumsum(w[a:b]) / self.out_weight_sum[i]
        self._cum = cum
        self._row = row

        sym = (weights + weights.T).tocoo()
        keys = np.unique(sym.row.astype(np.int64) * n + sym.col)
        self._sym_keys = keys

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def node_feature_dim(self) -> int:
        return self.num_classes + self.num_vertices

    @property
    def num_edges(self) -> int:
        return self.weights.nnz

    @property
    def edges(self) -> dict:
        coo = self.weights.tocoo()
        return {(int(i), int(j)): int(f) for i, j, f in zip(coo.row, coo.col, coo.data)}

    def out_neighbors(self, i: int) -> np.ndarray:
        return self.weights.indices[self.weights.indptr[i]:self.weights.indptr[i + 1]]

    def node_features(self, vertex_ids=None) -> np.ndarray:
        """Rows ``[class one-hot ; index one-hot]`` for the given vertices."""
        ids = np.arange(self.num_vertices) if vertex_ids is None else np.asarray(vertex_ids, dtype=np.int64)
        x = np.zeros((len(ids), self.node_feature_dim))
        x[np.arange(len(ids)), self.class_ids[ids]] = 1.0
        x[np.arange(len(ids)), self.num_classes + ids] = 1.0
        return x

    def has_undirected_edge(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        keys = np.asarray(u, dtype=np.int64) * self.num_vertices + np.asarray(v, dtype=np.int64)
        if len(self._sym_keys) == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self._sym_keys, keys)
        pos = np.minimum(pos, len(self._sym_keys) - 1)
        return self._sym_keys[pos] == keys

    def induce(self, vertex_ids) -> Subgraph:
        ids = tuple(sorted({int(v) for v in vertex_ids}))
        if not ids:
            raise GraphError("a subgraph needs at least one vertex")
        sub = self.weights[list(ids)][:, list(ids)].tocoo()
        edges = {(ids[i], ids[j]): int(f) for i, j, f in zip(sub.row, sub.col, sub.data)}
        return Subgraph(ids, edges)

    def dump(self, edge_path, vertex_path) -> None:
        with open(vertex_path, "w", encoding="utf-8") as fh:
            fh.write("word\tclass\tindex\n")
            for v in self.vertices:
                fh.write(f"{v.word}\t{v.class_id}\t{v.index}\n")
        with open(edge_path, "w", encoding="utf-8") as fh:
            fh.write("src_word\tdst_word\tF\n")
            for (i, j), f in sorted(self.edges.items()):
                fh.write(f"{self.vertices[i].word}\t{self.vertices[j].word}\t{f}\n")


def build_graph(corpus: Corpus, keywords: KeywordSet) -> KeywordGraph:
    """Count every ordered pair of keyword occurrences (p < q, distinct words) per document."""
    n = len(keywords)
    if n == 0:
        raise GraphError("keyword set is empty")
    warnings = []
    for w in keywords.words:
        if w not in corpus.doc_frequency:
            msg = f"keyword {w!r} does not occur in the corpus; vertex is isolated"
            log.warning(msg)
            warnings.append(msg)
    keys = []
    for doc in corpus.documents:
        ids = [keywords.index[t] for t in doc.tokens if t in keywords.index]
        if len(ids) < 2:
            continue
        ids = np.asarray(ids, dtype=np.int64)
        p, q = np.triu_indices(len(ids), k=1)
        src, dst = ids[p], ids[q]
        keep = src != dst
        keys.append(src[keep] * n + dst[keep])
    if keys:
        flat = np.concatenate(keys)
        uniq, counts = np.unique(flat, return_counts=True)
        weights = sp.csr_matrix((counts, (uniq // n, uniq % n)), shape=(n, n), dtype=np.int64)
    else:
        weights = sp.csr_matrix((n, n), dtype=np.int64)
    return KeywordGraph(keywords, weights, warnings)


def text_to_subgraph(graph: KeywordGraph, doc: Document, keywords: KeywordSet) -> Optional[Subgraph]:
    ids = {keywords.index[t] for t in doc.tokens if t in keywords.index}
    if not ids:
        return None
    return graph.induce(ids)


def doc_vertex_sets(graph: KeywordGraph, corpus: Corpus) -> list[Optional[np.ndarray]]:
    """Distinct hit vertices per document (``None`` when uncovered)."""
    index = graph.keywords.index
    out = []
    for doc in corpus.documents:
        ids = sorted({index[t] for t in doc.tokens if t in index})
        out.append(np.asarray(ids, dtype=np.int64) if ids else None)
    return out


def fit_walk_params(corpus: Corpus, keywords: KeywordSet) -> WalkParams:
    if corpus.n < 2:
        raise GraphError("need at least two documents to estimate walk-length variance")
    counts = [kf(doc, keywords) for doc in corpus.documents]
    u = sum(counts) / len(counts)
    var = sum((c - u) ** 2 for c in counts) / (len(counts) - 1)
    return WalkParams(u, var)


def transition_probability(graph: KeywordGraph, i: int, j: int) -> float:
    total = graph.out_weight_sum[i]
    if total == 0:
        raise GraphError(f"vertex {i} has no out-edges")
    f = graph.weights[i, j]
    if f == 0:
        raise GraphError(f"no edge {i} -> {j}")
    return float(f) / float(total)


def sample_walk_lengths(params: WalkParams, rng: np.random.Generator, size=None):
    raw = rng.normal(params.u_s, math.sqrt(params.sigma2_s), size=size)
    return np.clip(np.rint(raw), 1, MAX_WALK_LENGTH).astype(np.int64)


def _step(graph: KeywordGraph, current: np.ndarray, u: np.ndarray) -> np.ndarray:
    edge = np.searchsorted(graph._cum, current + u, side="right")
    return graph.weights.indices[edge]


def walk_vertices(graph: KeywordGraph, starts, lengths, rng: np.random.Generator) -> list[np.ndarray]:
    """Run one walk per start vertex; returns the sorted distinct traversed vertices of each.

    Walks advance in lock-step; a walk halts at its length or at a sink.
    """
    current = np.array(starts, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    b = len(current)
    visited = [current.copy()]
    walker = [np.arange(b)]
    active = np.arange(b)
    for step in range(int(lengths.max(initial=0))):
        active = active[(lengths[active] > step) & (graph.out_weight_sum[current[active]] > 0)]
        if len(active) == 0:
            break
        nxt = _step(graph, current[active], rng.random(len(active)))
        current[active] = nxt
        visited.append(nxt)
        walker.append(active)
    w = np.concatenate(walker)
    v = np.concatenate(visited)
    keys = np.unique(w * graph.num_vertices + v)
    w, v = keys // graph.num_vertices, keys % graph.num_vertices
    bounds = np.searchsorted(w, np.arange(b + 1))
    return [v[bounds[i]:bounds[i + 1]] for i in range(b)]


def sample_walk(graph: KeywordGraph, start: int, params: WalkParams, rng: np.random.Generator) -> Subgraph:
    length = int(sample_walk_lengths(params, rng))
    current = int(start)
    traversed = {current}
    for _ in range(length):
        if graph.out_weight_sum[current] == 0:
            break
        current = int(_step(graph, np.array([current]), np.array([rng.random()]))[0])
        traversed.add(current)
    return graph.induce(traversed)
