"""GIN subgraph annotator: random-walk pretext training, voting finetune, annotation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import nn
from .corpus import Corpus, Document, KeywordSet
from .graph import KeywordGraph, WalkParams, doc_vertex_sets, sample_walk_lengths, walk_vertices

log = logging.getLogger(__name__)


class AnnotatorError(ValueError):
    pass


@dataclass(frozen=True)
class SslConfig:
    iterations: int = 20_000
    batch_size: int = 50
    learning_rate: float = 1e-4
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("SSL iterations must be >= 0, batch size and learning rate positive")


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-4
    weight_decay: float = 0.01


@dataclass
class GraphBatch:
    """Disjoint union of subgraphs: node features, symmetric 0/1 adjacency, per-graph pooling."""
    x0: np.ndarray
    adj: sp.csr_matrix
    pool: sp.csr_matrix

    @property
    def num_graphs(self) -> int:
        return self.pool.shape[0]


def make_batch(graph: KeywordGraph, vertex_sets: Sequence[np.ndarray]) -> GraphBatch:
    sizes = np.array([len(v) for v in vertex_sets], dtype=np.int64)
    if len(sizes) == 0 or sizes.min() == 0:
        raise AnnotatorError("every subgraph needs at least one vertex")
    b, total, maxn = len(sizes), int(sizes.sum()), int(sizes.max())
    ids = np.concatenate(vertex_sets).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    owner = np.repeat(np.arange(b), sizes)

    local = np.arange(total) - offsets[owner]
    padded = np.full((b, maxn), -1, dtype=np.int64)
    padded[owner, local] = ids
    gidx = np.full((b, maxn), -1, dtype=np.int64)
    gidx[owner, local] = np.arange(total)
    iu, ju = np.triu_indices(maxn, k=1)
    u, v = padded[:, iu], padded[:, ju]
    valid = (u >= 0) & (v >= 0)
    hit = np.zeros_like(valid)
    hit[valid] = graph.has_undirected_edge(u[valid], v[valid])
    gu, gv = gidx[:, iu][hit], gidx[:, ju][hit]
    rows = np.concatenate([gu, gv])
    cols = np.concatenate([gv, gu])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(total, total))
    pool = sp.csr_matrix((np.ones(total), (owner, np.arange(total))), shape=(b, total))
    return GraphBatch(graph.node_features(ids), adj, pool)


def gin_layer(adj, h: nn.Tensor, epsilon: nn.Tensor, mlp: nn.MLPBlock) -> nn.Tensor:
    """mlp((1 + eps) * h_v + sum of neighbour rows)."""
    if adj.shape != (h.shape[0], h.shape[0]):
        raise ValueError("adjacency must be square over the feature rows")
    return mlp(nn.add(nn.gate(h, epsilon, offset=1.0), nn.spmm(adj, h)))


def readout(layer_features: Sequence[nn.Tensor], pool) -> nn.Tensor:
    """Concatenate per-graph sums of every layer's node features."""
    return nn.concat([nn.spmm(pool, h) for h in layer_features])


class SubgraphAnnotator:
    """Interface: map a GraphBatch to class logits."""

    num_classes: int

    def forward(self, batch: GraphBatch) -> nn.Tensor:
        raise NotImplementedError

    def parameters(self) -> list[nn.Parameter]:
        raise NotImplementedError

    def predict_proba(self, batch: GraphBatch) -> np.ndarray:
        return nn.softmax(self.forward(batch).value)


class GINAnnotator(SubgraphAnnotator):
    def __init__(self, input_dim: int, num_classes: int, hidden: int = 64, num_layers: int = 3,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.input_dim, self.num_classes, self.hidden = input_dim, num_classes, hidden
        self.epsilons = [nn.Parameter(np.zeros((1, 1)), f"gin.{k}.eps") for k in range(num_layers)]
        self.mlps = [nn.MLPBlock([input_dim if k == 0 else hidden, hidden, hidden], rng, f"gin.{k}.mlp")
                     for k in range(num_layers)]
        self.head = nn.Linear(self.readout_dim, num_classes, rng, "head")

    @property
    def num_layers(self) -> int:
        return len(self.mlps)

    @property
    def readout_dim(self) -> int:
        return self.input_dim + self.num_layers * self.hidden

    def parameters(self) -> list[nn.Parameter]:
        out = []
        for eps, mlp in zip(self.epsilons, self.mlps):
            out.append(eps)
            out.extend(mlp.parameters())
        return out + self.head.parameters()

    def layer_features(self, batch: GraphBatch) -> list[nn.Tensor]:
        if batch.x0.shape[1] != self.input_dim:
            raise ValueError(f"annotator expects {self.input_dim}-dim node features, got {batch.x0.shape[1]}")
        hs = [nn.constant(batch.x0)]
        for eps, mlp in zip(self.epsilons, self.mlps):
            hs.append(gin_layer(batch.adj, hs[-1], eps, mlp))
        return hs

    def forward(self, batch: GraphBatch) -> nn.Tensor:
        return self.head(readout(self.layer_features(batch), batch.pool))

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.parameters(), [float(e.value[0, 0]) for e in self.epsilons],
                           self.epsilons[0].t)

    def load(self, path) -> None:
        header, values = nn.load_checkpoint(path)
        params = self.parameters()
        if [list(p.shape) for p in params] != [s["shape"] for s in header["params"]]:
            raise ValueError(f"{path}: checkpoint shapes do not match this model")
        for p, v in zip(params, values):
            p.value = v
            p.reset_optimizer()
            p.t = header["step"]


def new_annotator(graph: KeywordGraph, rng: np.random.Generator, hidden: int = 64,
                  num_layers: int = 3) -> GINAnnotator:
    return GINAnnotator(graph.node_feature_dim, graph.num_classes, hidden, num_layers, rng)


def _train_step(model: SubgraphAnnotator, batch: GraphBatch, targets, opt: nn.OptimizerConfig) -> float:
    params = model.parameters()
    nn.zero_grad(params)
    loss = nn.cross_entropy(model.forward(batch), targets)
    loss.backward()
    nn.adamw_step(params, opt)
    return float(loss.value[0, 0])


def ssl_pretrain(model: SubgraphAnnotator, graph: KeywordGraph, params: WalkParams, config: SslConfig,
                 rng: np.random.Generator) -> SubgraphAnnotator:
    """Teach the annotator to name the class of a random walk's start keyword."""
    empty = graph.keywords.empty_classes()
    if empty:
        raise AnnotatorError(f"class {empty[0]} has no keywords; cannot sample walk starts")
    sizes = np.array([len(ws) for ws in graph.keywords.classes], dtype=np.int64)
    starts_at = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    opt = nn.OptimizerConfig(config.learning_rate, config.weight_decay)
    for p in model.parameters():
        p.reset_optimizer()
    running = None
    for it in range(config.iterations):
        cls = rng.integers(graph.num_classes, size=config.batch_size)
        starts = starts_at[cls] + np.floor(rng.random(config.batch_size) * sizes[cls]).astype(np.int64)
        lengths = sample_walk_lengths(params, rng, config.batch_size)
        batch = make_batch(graph, walk_vertices(graph, starts, lengths, rng))
        loss = _train_step(model, batch, cls, opt)
        running = loss if running is None else 0.99 * running + 0.01 * loss
        if (it + 1) % 2000 == 0:
            log.info("ssl step %d/%d loss %.4f", it + 1, config.iterations, running)
    return model


def voting_label(doc: Document, keywords: KeywordSet) -> Optional[int]:
    """Class with the largest summed keyword term frequency; lowest index wins ties."""
    votes = [0] * keywords.num_classes
    for tok in doc.tokens:
        k = keywords.class_of.get(tok)
        if k is not None:
            votes[k] += 1
    best = max(votes)
    return votes.index(best) if best > 0 else None


def finetune(model: SubgraphAnnotator, graph: KeywordGraph, corpus: Corpus, keywords: KeywordSet,
             config: FinetuneConfig = FinetuneConfig(), rng: Optional[np.random.Generator] = None
             ) -> SubgraphAnnotator:
    """Fit the annotator to voting labels of covered texts, with a fresh optimizer."""
    rng = rng if rng is not None else np.random.default_rng(0)
    sets, targets = [], []
    for doc, vs in zip(corpus.documents, doc_vertex_sets(graph, corpus)):
        if vs is None:
            continue
        sets.append(vs)
        targets.append(voting_label(doc, keywords))
    if not sets:
        raise AnnotatorError("no document contains a keyword; nothing to finetune on")
    targets = np.asarray(targets, dtype=np.int64)
    opt = nn.OptimizerConfig(config.learning_rate, config.weight_decay)
    for p in model.parameters():
        p.reset_optimizer()
    for epoch in range(config.epochs):
        order = rng.permutation(len(sets))
        losses = []
        for a in range(0, len(order), config.batch_size):
            idx = order[a:a + config.batch_size]
            batch = make_batch(graph, [sets[i] for i in idx])
            losses.append(_train_step(model, batch, targets[idx], opt))
        log.info("finetune epoch %d loss %.4f", epoch + 1, float(np.mean(losses)))
    return model


@dataclass
class PseudoLabeling:
    labels: list[Optional[int]]
    confidences: list[Optional[float]]

    @property
    def covered_count(self) -> int:
        return sum(1 for y in self.labels if y is not None)

    def covered_indices(self) -> list[int]:
        return [i for i, y in enumerate(self.labels) if y is not None]

    def save(self, corpus: Corpus, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for doc, y, c in zip(corpus.documents, self.labels, self.confidences):
                if y is not None:
                    fh.write(json.dumps({"id": doc.id, "label": y, "confidence": c}) + "\n")

    @classmethod
    def load(cls, corpus: Corpus, path) -> "PseudoLabeling":
        by_id = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    by_id[rec["id"]] = (int(rec["label"]), float(rec["confidence"]))
        pairs = [by_id.get(d.id, (None, None)) for d in corpus.documents]
        return cls([p[0] for p in pairs], [p[1] for p in pairs])


def annotate(model: SubgraphAnnotator, graph: KeywordGraph, corpus: Corpus, keywords: KeywordSet,
             chunk: int = 1024) -> PseudoLabeling:
    sets = doc_vertex_sets(graph, corpus)
    covered = [i for i, vs in enumerate(sets) if vs is not None]
    labels: list[Optional[int]] = [None] * corpus.n
    conf: list[Optional[float]] = [None] * corpus.n
    for a in range(0, len(covered), chunk):
        idx = covered[a:a + chunk]
        probs = model.predict_proba(make_batch(graph, [sets[i] for i in idx]))
        for i, p in zip(idx, probs):
            k = int(np.argmax(p))
            labels[i], conf[i] = k, float(p[k])
    return PseudoLabeling(labels, conf)


def counting_labels(corpus: Corpus, keywords: KeywordSet) -> PseudoLabeling:
    """Keyword-counting baseline; confidence is the winning class's vote share."""
    labels: list[Optional[int]] = []
    conf: list[Optional[float]] = []
    for doc in corpus.documents:
        votes = np.zeros(keywords.num_classes)
        for tok in doc.tokens:
            k = keywords.class_of.get(tok)
            if k is not None:
                votes[k] += 1
        if votes.sum() == 0:
            labels.append(None)
            conf.append(None)
        else:
            k = int(np.argmax(votes))
            labels.append(k)
            conf.append(float(votes[k] / votes.sum()))
    return PseudoLabeling(labels, conf)
