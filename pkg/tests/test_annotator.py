import math
from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp

from kwgraph import nn
from kwgraph.annotator import (AnnotatorError, FinetuneConfig, GINAnnotator, PseudoLabeling, SslConfig, annotate,
                               counting_labels, finetune, gin_layer, make_batch, new_annotator, readout,
                               ssl_pretrain, voting_label)
from kwgraph.corpus import Document, KeywordSet
from kwgraph.graph import KeywordGraph, WalkParams, build_graph, sample_walk_lengths, walk_vertices

from conftest import graph_from_weights, make_corpus, random_graph

IDENTITY = lambda d: nn.MLPBlock.from_weights([(np.eye(d), np.zeros(d))])  # noqa: E731


def separable_graph():
    # two directed 3-cycles, one per class, no edges between them
    w = np.zeros((6, 6), dtype=int)
    for base in (0, 3):
        for i in range(3):
            w[base + i, base + (i + 1) % 3] = 1
    ks = KeywordSet([["a0", "a1", "a2"], ["b0", "b1", "b2"]])
    return KeywordGraph(ks, sp.csr_matrix(w))


class TestGinLayer:
    def test_isolated_vertex(self):
        h = nn.constant([[1.0, -2.0]])
        out = gin_layer(sp.csr_matrix((1, 1)), h, nn.Parameter([[0.0]]), IDENTITY(2))
        np.testing.assert_array_equal(out.value, h.value)

    def test_mutual_pair_sums(self):
        h = nn.constant([[1.0, 0.0], [0.0, 3.0]])
        adj = sp.csr_matrix(np.array([[0, 1], [1, 0]]))
        out = gin_layer(adj, h, nn.Parameter([[0.0]]), IDENTITY(2))
        np.testing.assert_array_equal(out.value, [[1.0, 3.0], [1.0, 3.0]])

    def test_matrix_oracle(self, rng):
        for _ in range(20):
            a = np.triu((rng.random((5, 5)) < 0.5).astype(float), 1)
            a = a + a.T
            h = rng.normal(size=(5, 4))
            eps = float(rng.normal())
            weights = [(rng.normal(size=(4, 6)), rng.normal(size=6)), (rng.normal(size=(6, 3)), rng.normal(size=3))]
            out = gin_layer(sp.csr_matrix(a), nn.constant(h), nn.Parameter([[eps]]), nn.MLPBlock.from_weights(weights))
            x = (a + np.eye(5) * (1 + eps)) @ h
            expected = np.maximum(x @ weights[0][0] + weights[0][1], 0) @ weights[1][0] + weights[1][1]
            np.testing.assert_allclose(out.value, expected, rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gin_layer(sp.csr_matrix((3, 3)), nn.constant(np.ones((2, 2))), nn.Parameter([[0.0]]), IDENTITY(2))
        with pytest.raises(ValueError):
            gin_layer(sp.csr_matrix((2, 2)), nn.constant(np.ones((2, 3))), nn.Parameter([[0.0]]), IDENTITY(2))


class TestReadout:
    def test_single_vertex(self):
        layers = [nn.constant([[1.0, 2.0]]), nn.constant([[3.0]])]
        out = readout(layers, sp.csr_matrix(np.ones((1, 1))))
        np.testing.assert_array_equal(out.value, [[1.0, 2.0, 3.0]])

    def test_cancellation(self, rng):
        f = rng.normal(size=(3, 4))
        layers = [nn.constant(np.stack([f[k], -f[k]])) for k in range(3)]
        out = readout(layers, sp.csr_matrix(np.ones((1, 2))))
        np.testing.assert_allclose(out.value, 0.0, atol=1e-15)

    def test_permutation_invariance(self, rng):
        g = random_graph(rng, 12, 0.3)
        model = GINAnnotator(g.node_feature_dim, g.num_classes, hidden=16, rng=rng)
        for _ in range(20):
            vs = rng.choice(12, size=int(rng.integers(1, 9)), replace=False)
            ref = readout(model.layer_features(make_batch(g, [vs])), make_batch(g, [vs]).pool).value
            for _ in range(5):
                perm = rng.permutation(vs)
                b = make_batch(g, [perm])
                out = readout(model.layer_features(b), b.pool).value
                assert np.abs(out - ref).max() < 1e-9


class TestBatching:
    def test_adjacency_is_symmetrized_and_unweighted(self):
        g = graph_from_weights([[0, 5, 0], [0, 0, 0], [2, 3, 0]], 1)
        b = make_batch(g, [np.array([0, 1, 2])])
        np.testing.assert_array_equal(b.adj.toarray(), [[0, 1, 1], [1, 0, 1], [1, 1, 0]])

    def test_disjoint_union(self):
        g = graph_from_weights([[0, 1], [0, 0]], 1)
        b = make_batch(g, [np.array([0, 1]), np.array([0])])
        assert b.x0.shape[0] == 3 and b.num_graphs == 2
        np.testing.assert_array_equal(b.adj.toarray(), [[0, 1, 0], [1, 0, 0], [0, 0, 0]])
        np.testing.assert_array_equal(b.pool.toarray(), [[1, 1, 0], [0, 0, 1]])

    def test_empty_subgraph_rejected(self):
        g = graph_from_weights([[0, 1], [0, 0]], 1)
        with pytest.raises(AnnotatorError):
            make_batch(g, [np.array([], dtype=int)])


class TestModel:
    def test_gradients_match_finite_differences(self, rng):
        g = random_graph(rng, 8, 0.4)
        model = GINAnnotator(g.node_feature_dim, 2, hidden=5, num_layers=2, rng=rng)
        for p in model.epsilons:
            p.value = rng.normal(size=(1, 1)) * 0.3
        b = make_batch(g, [rng.choice(8, size=5, replace=False), np.array([1, 2])])
        err = nn.finite_difference_check(lambda: nn.cross_entropy(model.forward(b), [0, 1]), model.parameters())
        assert err < 1e-5

    def test_untrained_loss_near_log_c(self):
        g = separable_graph()
        losses = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            model = new_annotator(g, rng)
            starts = rng.integers(6, size=200)
            b = make_batch(g, walk_vertices(g, starts, sample_walk_lengths(WalkParams(2, 1), rng, 200), rng))
            losses.append(nn.cross_entropy(model.forward(b), np.array(g.keywords.class_ids())[starts]).value[0, 0])
        assert abs(np.mean(losses) - math.log(2)) < 0.1 * math.log(2)

    def test_probabilities_sum_to_one(self, rng):
        g = random_graph(rng, 20, 0.2, num_classes=4)
        model = new_annotator(g, np.random.default_rng(5))
        starts = rng.integers(20, size=300)
        b = make_batch(g, walk_vertices(g, starts, sample_walk_lengths(WalkParams(5, 9), rng, 300), rng))
        p = model.predict_proba(b)
        assert p.shape == (300, 4) and np.all(p >= 0)
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-12

    def test_save_load(self, tmp_path, rng):
        g = separable_graph()
        a = new_annotator(g, np.random.default_rng(1), hidden=8)
        b = new_annotator(g, np.random.default_rng(2), hidden=8)
        a.save(tmp_path / "a.ckpt")
        b.load(tmp_path / "a.ckpt")
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.value, pb.value)
        with pytest.raises(ValueError):
            new_annotator(g, rng, hidden=4).load(tmp_path / "a.ckpt")


class TestPretrain:
    def test_separable_graph(self):
        g = separable_graph()
        rng = np.random.default_rng(0)
        model = new_annotator(g, rng, hidden=16)
        params = WalkParams(2, 1)
        ssl_pretrain(model, g, params, SslConfig(iterations=200, batch_size=50, learning_rate=1e-2), rng)
        starts = rng.integers(6, size=1000)
        b = make_batch(g, walk_vertices(g, starts, sample_walk_lengths(params, rng, 1000), rng))
        pred = model.predict_proba(b).argmax(axis=1)
        assert (pred == np.array(g.keywords.class_ids())[starts]).mean() > 0.95

    def test_empty_class_rejected(self, rng):
        ks = KeywordSet([["a"], []])
        g = build_graph(make_corpus([["a"]]), ks)
        with pytest.raises(AnnotatorError, match="class 1"):
            ssl_pretrain(new_annotator(g, rng), g, WalkParams(1, 0), SslConfig(iterations=1), rng)

    def test_deterministic(self, tmp_path):
        g = separable_graph()
        for name in ("a", "b"):
            rng = np.random.default_rng(42)
            model = new_annotator(g, rng, hidden=8)
            ssl_pretrain(model, g, WalkParams(3, 2), SslConfig(iterations=30, batch_size=10), rng)
            model.save(tmp_path / f"{name}.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def brute_force_vote(tokens, classes):
    counts = [sum(tokens.count(w) for w in ws) for ws in classes]
    if max(counts) == 0:
        return None
    for k, c in enumerate(counts):
        if c == max(counts):
            return k


class TestVoting:
    KS = KeywordSet([["windows", "microsoft"], ["car"], ["ball"]])

    @pytest.mark.parametrize("text,label", [
        ("windows car car", 1),
        ("windows and microsoft on a desk", 0),
        ("windows ball", 0),
        ("car ball ball car", 1),
        ("nothing at all", None),
    ])
    def test_examples(self, text, label):
        assert voting_label(Document.from_text("d", text), self.KS) == label

    def test_tie_goes_to_lowest_index(self):
        assert voting_label(Document.from_text("d", "ball windows"), self.KS) == 0

    def test_matches_oracle(self, rng):
        vocab = ["windows", "microsoft", "car", "ball", "the", "of"]
        for _ in range(1000):
            toks = [vocab[i] for i in rng.integers(len(vocab), size=rng.integers(0, 10))]
            assert voting_label(Document.from_text("d", " ".join(toks)), self.KS) == brute_force_vote(toks, self.KS.classes)

    def test_counting_labels_agree_with_voting(self, rng):
        vocab = ["windows", "microsoft", "car", "ball", "the"]
        docs = [[vocab[i] for i in rng.integers(len(vocab), size=rng.integers(0, 6))] for _ in range(200)]
        corpus = make_corpus(docs, 3)
        labels = counting_labels(corpus, self.KS)
        assert labels.labels == [voting_label(d, self.KS) for d in corpus.documents]
        assert all(c is None or 0 < c <= 1 for c in labels.confidences)


def context_corpus():
    # "google" is a technology keyword, but {google, ipo} only ever appears in business texts
    ks = KeywordSet([["google", "software", "windows"], ["ipo", "stock", "auction"]])
    docs = ([["google", "software", "windows", "x"]] * 30 + [["google", "google", "software"]] * 30
            + [["ipo", "stock", "auction"]] * 30 + [["google", "ipo", "ipo", "y"]] * 30
            + [["filler", "text"]] * 10)
    return make_corpus(docs, 2), ks


class TestFinetuneAndAnnotate:
    def test_epochs_zero_is_identity(self, tmp_path):
        corpus, ks = context_corpus()
        g = build_graph(corpus, ks)
        model = new_annotator(g, np.random.default_rng(0), hidden=8)
        model.save(tmp_path / "before.ckpt")
        finetune(model, g, corpus, ks, FinetuneConfig(epochs=0))
        model.save(tmp_path / "after.ckpt")
        assert (tmp_path / "before.ckpt").read_bytes() == (tmp_path / "after.ckpt").read_bytes()

    def test_uncovered_documents_do_not_matter(self, tmp_path):
        corpus, ks = context_corpus()
        covered_only = make_corpus([list(d.tokens) for d in corpus.documents if "filler" not in d.tokens], 2)
        for name, c in (("all", corpus), ("covered", covered_only)):
            g = build_graph(c, ks)
            model = new_annotator(g, np.random.default_rng(0), hidden=8)
            finetune(model, g, c, ks, FinetuneConfig(epochs=3, batch_size=16, learning_rate=1e-2),
                     np.random.default_rng(1))
            model.save(tmp_path / f"{name}.ckpt")
        assert (tmp_path / "all.ckpt").read_bytes() == (tmp_path / "covered.ckpt").read_bytes()

    def test_no_covered_documents(self):
        ks = KeywordSet([["a"], ["b"]])
        g = build_graph(make_corpus([["a", "b"]]), ks)
        with pytest.raises(AnnotatorError):
            finetune(new_annotator(g, np.random.default_rng(0)), g, make_corpus([["z"]]), ks)

    def test_degenerate_targets(self):
        ks = KeywordSet([["a", "b"], ["c"]])
        corpus = make_corpus([["a", "b"], ["a"], ["b", "a", "b"]] * 20, 2)
        g = build_graph(corpus, ks)
        model = new_annotator(g, np.random.default_rng(0), hidden=8)
        finetune(model, g, corpus, ks, FinetuneConfig(epochs=20, batch_size=16, learning_rate=1e-2))
        assert Counter(annotate(model, g, corpus, ks).labels)[0] == corpus.n

    def test_context_overrides_counting(self):
        corpus, ks = context_corpus()
        g = build_graph(corpus, ks)
        rng = np.random.default_rng(0)
        model = new_annotator(g, rng, hidden=16)
        finetune(model, g, corpus, ks, FinetuneConfig(epochs=40, batch_size=32, learning_rate=1e-2), rng)
        probe = make_corpus([["google", "ipo", "google", "google"]], 2)
        assert voting_label(probe.documents[0], ks) == 0
        assert annotate(model, g, probe, ks).labels == [1]

    def test_uncovered_get_no_label(self):
        corpus, ks = context_corpus()
        g = build_graph(corpus, ks)
        labels = annotate(new_annotator(g, np.random.default_rng(0), hidden=8), g, corpus, ks)
        for doc, y, c in zip(corpus.documents, labels.labels, labels.confidences):
            if "filler" in doc.tokens:
                assert y is None and c is None
            else:
                assert y in (0, 1) and 0.5 <= c <= 1
        assert labels.covered_count == corpus.n - 10

    def test_single_class(self):
        ks = KeywordSet([["a", "b"]])
        corpus = make_corpus([["a", "b"], ["b"], ["q"]], 1)
        g = build_graph(corpus, ks)
        labels = annotate(new_annotator(g, np.random.default_rng(0), hidden=4), g, corpus, ks)
        assert labels.labels == [0, 0, None] and labels.confidences[:2] == [1.0, 1.0]

    def test_pseudo_label_file_roundtrip(self, tmp_path):
        corpus = make_corpus([["a"], ["b"], ["c"]])
        labels = PseudoLabeling([1, None, 0], [0.75, None, 0.5])
        labels.save(corpus, tmp_path / "p.jsonl")
        assert len((tmp_path / "p.jsonl").read_text().splitlines()) == 2
        assert PseudoLabeling.load(corpus, tmp_path / "p.jsonl") == labels
