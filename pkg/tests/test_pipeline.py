import json

import numpy as np
import pytest

from kwgraph import pipeline
from kwgraph.annotator import counting_labels
from kwgraph.corpus import KeywordSet, save_corpus, save_keywords
from kwgraph.pipeline import PipelineError, RunConfig, run_until_convergence
from kwgraph.synth import SynthSpec, generate_synthetic_corpus


def small_config(**kw):
    base = dict(ssl_iterations=40, ssl_batch_size=20, ssl_learning_rate=1e-2, gin_hidden=8, gin_layers=2,
                finetune_epochs=5, finetune_batch_size=32, finetune_learning_rate=1e-2,
                classifier_epochs=5, classifier_learning_rate=1e-2, self_train_rounds=1, self_train_epochs=1,
                Z=10, max_iterations=3)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def syn():
    return generate_synthetic_corpus(SynthSpec(n=300, seed=5))


def files_of(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


class TestConfig:
    def test_roundtrip(self):
        c = small_config(seed=4)
        assert RunConfig.from_dict(c.to_dict()) == c

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown"):
            RunConfig.from_dict({"bogus": 1})

    @pytest.mark.parametrize("kw", [dict(epsilon_threshold=0), dict(max_iterations=-1), dict(Z=0),
                                    dict(self_train_threshold=0.3), dict(ssl_batch_size=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            small_config(**kw)


class TestRun:
    def test_zero_iterations(self, syn, tmp_path):
        states = run_until_convergence(small_config(max_iterations=0), tmp_path, syn.corpus, syn.keywords)
        assert states == []
        assert (tmp_path / "keywords_000.jsonl").exists()

    def test_one_iteration_artifacts(self, syn, tmp_path):
        (state,) = run_until_convergence(small_config(max_iterations=1), tmp_path, syn.corpus, syn.keywords)
        d = tmp_path / "iter_001"
        for name in ("keywords.jsonl", "pseudo_labels.jsonl", "predictions.jsonl", "delta.json", "metrics.json",
                     "state.json", "annotator.ckpt", "graph_edges.tsv", "graph_vertices.tsv", "walk_params.json"):
            assert (d / name).exists(), name
        m = state.metrics
        assert m["iteration"] == 1 and m["wall_time_s"] is None
        assert m["coverage"] == pytest.approx(syn.covered.mean())
        assert m["pseudo_covered"] == int(syn.covered.sum())
        assert 0 <= m["delta"] <= 1 and 0 <= m["micro_f1"] <= 1
        assert len(state.predictions) == syn.corpus.n
        assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 1

    def test_stop_rule(self, syn):
        states = run_until_convergence(small_config(max_iterations=4, epsilon_threshold=0.99), None,
                                       syn.corpus, syn.keywords)
        deltas = [s.delta.delta for s in states]
        assert all(d >= 0.99 for d in deltas[:-1])
        assert deltas[-1] < 0.99 or len(states) == 4

    def test_no_stop_runs_all(self, syn):
        states = run_until_convergence(small_config(max_iterations=2, epsilon_threshold=0.99), None,
                                       syn.corpus, syn.keywords, stop_on_convergence=False)
        assert [s.iteration for s in states] == [1, 2]

    def test_resume_matches_fresh_run(self, syn, tmp_path, monkeypatch):
        cfg2 = small_config(max_iterations=2, epsilon_threshold=0.01)
        run_until_convergence(cfg2, tmp_path / "fresh", syn.corpus, syn.keywords, stop_on_convergence=False)
        run_until_convergence(small_config(max_iterations=1, epsilon_threshold=0.01), tmp_path / "resumed",
                              syn.corpus, syn.keywords)
        calls = []
        real = pipeline.run_iteration
        monkeypatch.setattr(pipeline, "run_iteration", lambda *a, **k: calls.append(a[3]) or real(*a, **k))
        run_until_convergence(cfg2, tmp_path / "resumed", syn.corpus, syn.keywords, stop_on_convergence=False)
        assert calls == [2]
        fresh, resumed = files_of(tmp_path / "fresh"), files_of(tmp_path / "resumed")
        assert fresh == resumed

    def test_next_iteration(self, syn, tmp_path):
        save_corpus(syn.corpus, tmp_path / "c.jsonl")
        save_keywords(syn.keywords, tmp_path / "k.jsonl")
        cfg = small_config(max_iterations=1, corpus=str(tmp_path / "c.jsonl"), keywords=str(tmp_path / "k.jsonl"),
                           num_classes=2)
        run_until_convergence(cfg, tmp_path / "run")
        state = pipeline.next_iteration(tmp_path / "run")
        assert state.iteration == 2 and (tmp_path / "run" / "iter_002" / "state.json").exists()
        assert len((tmp_path / "run" / "metrics.jsonl").read_text().splitlines()) == 2

    def test_gold_labels_never_used(self, syn):
        cfg = small_config(max_iterations=1)
        (a,) = run_until_convergence(cfg, None, syn.corpus, syn.keywords)
        (b,) = run_until_convergence(cfg, None, syn.corpus.without_gold(), syn.keywords)
        assert a.keywords == b.keywords
        np.testing.assert_array_equal(a.predictions, b.predictions)
        assert a.pseudo_labels == b.pseudo_labels
        assert "micro_f1" not in b.metrics

    def test_counting_mode(self, syn):
        (state,) = run_until_convergence(small_config(max_iterations=1, counting=True), None,
                                         syn.corpus, syn.keywords)
        assert state.pseudo_labels == counting_labels(syn.corpus, syn.keywords)
        assert state.metrics["pseudo_accuracy"] == pytest.approx(syn.counting_accuracy)


class TestErrors:
    def test_keywords_hit_nothing(self, syn):
        with pytest.raises(PipelineError) as exc:
            run_until_convergence(small_config(), None, syn.corpus, KeywordSet([["zzzz"], ["yyyy"]]))
        assert exc.value.stage == "coverage"

    def test_empty_class_names_stage(self, syn):
        with pytest.raises(PipelineError) as exc:
            run_until_convergence(small_config(), None, syn.corpus, KeywordSet([["pivot", "c0s0"], []]))
        assert exc.value.stage == "ssl_pretrain"

    def test_class_count_mismatch(self, syn):
        with pytest.raises(ValueError):
            run_until_convergence(small_config(), None, syn.corpus, KeywordSet([["pivot"], ["c1s0"], ["c1s1"]]))

    def test_missing_paths(self):
        with pytest.raises(ValueError):
            run_until_convergence(small_config())


def test_prediction_file_errors(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text(json.dumps({"id": "a"}) + "\n")
    with pytest.raises(ValueError, match=":1:"):
        pipeline.load_predictions(p)
