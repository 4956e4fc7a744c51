"""The iterative loop: graph -> annotator -> classifier -> keyword re-extraction.

Each completed iteration is written to ``<out>/iter_NNN/`` and marked by a
``state.json`` file, so a run resumes from the last completed iteration.
Gold labels are stripped before any training stage and are only read by
:func:`iteration_metrics`.
"""

from __future__ import annotations

import contextlib
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import annotator as ann
from .classifier import LinearTextClassifier, SelfTrainConfig, TrainConfig, self_train
from .corpus import Corpus, KeywordSet, coverage, load_corpus, load_keywords, save_keywords
from .extraction import DeltaReport, ExtractionConfig, extract_keywords, keyword_delta, score_words
from .graph import build_graph, fit_walk_params
from .metrics import evaluate

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


@dataclass
class RunConfig:
    corpus: Optional[str] = None
    keywords: Optional[str] = None
    num_classes: Optional[int] = None
    Z: int = 100
    M: float = 4
    epsilon_threshold: float = 0.1
    max_iterations: int = 10
    ssl_iterations: int = 20_000
    ssl_batch_size: int = 50
    ssl_learning_rate: float = 1e-4
    finetune_epochs: int = 10
    finetune_batch_size: int = 256
    finetune_learning_rate: float = 1e-4
    gin_layers: int = 3
    gin_hidden: int = 64
    classifier_epochs: int = 20
    classifier_batch_size: int = 32
    classifier_learning_rate: float = 1e-3
    self_train_rounds: int = 3
    self_train_threshold: float = 0.9
    self_train_epochs: int = 5
    counting: bool = False
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if not 0 < self.epsilon_threshold < 1:
            raise ValueError("epsilon_threshold must lie in (0, 1)")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        # construct sub-configs once so their own checks run
        self.ssl_config()
        self.finetune_config()
        self.train_config()
        self.self_train_config()
        self.extraction_config()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def ssl_config(self) -> ann.SslConfig:
        return ann.SslConfig(self.ssl_iterations, self.ssl_batch_size, self.ssl_learning_rate)

    def finetune_config(self) -> ann.FinetuneConfig:
        return ann.FinetuneConfig(self.finetune_epochs, self.finetune_batch_size, self.finetune_learning_rate)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.classifier_epochs, self.classifier_batch_size, self.classifier_learning_rate)

    def self_train_config(self) -> SelfTrainConfig:
        return SelfTrainConfig(self.self_train_rounds, self.self_train_threshold, self.self_train_epochs)

    def extraction_config(self) -> ExtractionConfig:
        return ExtractionConfig(self.Z, self.M)


@dataclass
class IterationState:
    iteration: int
    keywords: KeywordSet  # extracted at the end of this iteration
    pseudo_labels: ann.PseudoLabeling
    predictions: np.ndarray
    confidences: np.ndarray
    delta: DeltaReport
    metrics: dict = field(default_factory=dict)


def _rngs(seed: int, iteration: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence([seed, iteration]).spawn(count)]


def pseudo_label(corpus: Corpus, keywords: KeywordSet, config: RunConfig, iteration: int = 1,
                 out_dir: Optional[Path] = None) -> ann.PseudoLabeling:
    """Graph build, walk fit, pretext training, finetune and annotation (or plain counting)."""
    if config.counting:
        with stage("annotate"):
            return ann.counting_labels(corpus, keywords)
    init_rng, ssl_rng, ft_rng = _rngs(config.seed, iteration, 3)
    with stage("build_graph"):
        graph = build_graph(corpus, keywords)
    with stage("fit_walk_params"):
        walk = fit_walk_params(corpus, keywords)
    with stage("ssl_pretrain"):
        model = ann.new_annotator(graph, init_rng, config.gin_hidden, config.gin_layers)
        ann.ssl_pretrain(model, graph, walk, config.ssl_config(), ssl_rng)
    with stage("finetune"):
        ann.finetune(model, graph, corpus, keywords, config.finetune_config(), ft_rng)
    with stage("annotate"):
        labels = ann.annotate(model, graph, corpus, keywords)
    if out_dir is not None:
        graph.dump(out_dir / "graph_edges.tsv", out_dir / "graph_vertices.tsv")
        model.save(out_dir / "annotator.ckpt")
        (out_dir / "walk_params.json").write_text(json.dumps(dataclasses.asdict(walk), sort_keys=True) + "\n")
    return labels


def iteration_metrics(corpus: Corpus, state: IterationState, cov: float) -> dict:
    out: dict = {"iteration": state.iteration, "coverage": cov, "delta": state.delta.delta,
                 "num_keywords": len(state.keywords), "pseudo_covered": state.pseudo_labels.covered_count}
    gold = corpus.gold_labels
    have = [i for i, y in enumerate(gold) if y is not None]
    if have:
        m = evaluate(state.predictions[have], [gold[i] for i in have])
        out.update(m)
        cov_idx = [i for i in have if state.pseudo_labels.labels[i] is not None]
        if cov_idx:
            pm = evaluate([state.pseudo_labels.labels[i] for i in cov_idx], [gold[i] for i in cov_idx])
            out.update({f"pseudo_{k}": v for k, v in pm.items()})
    return out


def run_iteration(corpus: Corpus, keywords: KeywordSet, config: RunConfig, iteration: int,
                  out_dir: Optional[Path] = None) -> IterationState:
    start = time.perf_counter()
    train_corpus = corpus.without_gold()
    with stage("coverage"):
        cov = coverage(train_corpus, keywords)
    if cov == 0:
        raise PipelineError("coverage", "keywords hit no documents")
    labels = pseudo_label(train_corpus, keywords, config, iteration, out_dir)
    (clf_rng,) = _rngs(config.seed, iteration + 1_000_000, 1)
    with stage("classifier_train"):
        clf = LinearTextClassifier.for_corpus(train_corpus, config.train_config(),
                                              seed=int(clf_rng.integers(2**31)))
        clf.train(train_corpus, labels)
    with stage("self_train"):
        self_train(clf, train_corpus, config.self_train_config())
    with stage("predict"):
        preds, conf = clf.predict(train_corpus)
    with stage("score_words"):
        scores = score_words(train_corpus, preds, config.extraction_config())
    with stage("extract_keywords"):
        new_keywords = extract_keywords(scores, config.extraction_config())
    with stage("keyword_delta"):
        delta = keyword_delta(keywords, new_keywords)
    state = IterationState(iteration, new_keywords, labels, preds, conf, delta)
    state.metrics = iteration_metrics(corpus, state, cov)
    state.metrics["wall_time_s"] = None if config.deterministic else time.perf_counter() - start
    log.info("iteration %d: %s", iteration, {k: v for k, v in state.metrics.items() if v is not None})
    return state


# --- persistence ----------------------------------------------------------

def iteration_dir(out: Path, iteration: int) -> Path:
    return Path(out) / f"iter_{iteration:03d}"


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def save_predictions(corpus: Corpus, labels, confidences, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc, y, c in zip(corpus.documents, labels, confidences):
            fh.write(_dump({"id": doc.id, "label": int(y), "confidence": float(c)}) + "\n")


def load_predictions(path) -> dict[str, tuple[int, float]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "id" not in rec or "label" not in rec:
                raise ValueError(f"{path}:{lineno}: expected id and label")
            out[rec["id"]] = (int(rec["label"]), float(rec.get("confidence", 1.0)))
    return out


def save_state(state: IterationState, corpus: Corpus, out: Path) -> None:
    d = iteration_dir(out, state.iteration)
    d.mkdir(parents=True, exist_ok=True)
    save_keywords(state.keywords, d / "keywords.jsonl")
    state.pseudo_labels.save(corpus, d / "pseudo_labels.jsonl")
    save_predictions(corpus, state.predictions, state.confidences, d / "predictions.jsonl")
    delta = {"delta": state.delta.delta, "added": list(state.delta.added), "removed": list(state.delta.removed)}
    (d / "delta.json").write_text(_dump(delta) + "\n")
    (d / "metrics.json").write_text(_dump(state.metrics) + "\n")
    # written last: marks the iteration complete
    (d / "state.json").write_text(_dump({"iteration": state.iteration, "complete": True}) + "\n")


def load_state(corpus: Corpus, out: Path, iteration: int) -> Optional[IterationState]:
    d = iteration_dir(out, iteration)
    if not (d / "state.json").exists():
        return None
    keywords = load_keywords(d / "keywords.jsonl", corpus.num_classes)
    pl = ann.PseudoLabeling.load(corpus, d / "pseudo_labels.jsonl")
    preds = load_predictions(d / "predictions.jsonl")
    labels = np.array([preds[doc.id][0] for doc in corpus.documents], dtype=np.int64)
    conf = np.array([preds[doc.id][1] for doc in corpus.documents])
    delta = json.loads((d / "delta.json").read_text())
    metrics = json.loads((d / "metrics.json").read_text())
    return IterationState(iteration, keywords, pl, labels, conf,
                          DeltaReport(delta["delta"], tuple(delta["added"]), tuple(delta["removed"])), metrics)


def _write_metrics_log(out: Path, states: list[IterationState]) -> None:
    with open(Path(out) / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for s in states:
            fh.write(_dump(s.metrics) + "\n")


def _limit_threads(config: RunConfig):
    if not config.deterministic:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()
    return threadpool_limits(1)


def run_until_convergence(config: RunConfig, out: Optional[Path] = None, corpus: Optional[Corpus] = None,
                          keywords: Optional[KeywordSet] = None, stop_on_convergence: bool = True
                          ) -> list[IterationState]:
    """Iterate until the keyword change drops below ``epsilon_threshold`` or ``max_iterations``."""
    if corpus is None:
        if config.corpus is None or config.num_classes is None:
            raise ValueError("config needs a corpus path and num_classes")
        corpus = load_corpus(config.corpus, config.num_classes)
    if keywords is None:
        if config.keywords is None:
            raise ValueError("config needs an initial keyword file")
        keywords = load_keywords(config.keywords, corpus.num_classes)
    if keywords.num_classes != corpus.num_classes:
        raise ValueError("keyword file and corpus disagree on the class count")
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n")
        save_keywords(keywords, out / "keywords_000.jsonl")

    states: list[IterationState] = []
    current = keywords
    with _limit_threads(config):
        for it in range(1, config.max_iterations + 1):
            state = load_state(corpus, out, it) if out is not None else None
            if state is not None:
                log.info("iteration %d already complete; resuming from it", it)
            else:
                d = iteration_dir(out, it) if out is not None else None
                if d is not None:
                    d.mkdir(parents=True, exist_ok=True)
                state = run_iteration(corpus, current, config, it, d)
                if out is not None:
                    save_state(state, corpus, out)
            states.append(state)
            if out is not None:
                _write_metrics_log(out, states)
            current = state.keywords
            if stop_on_convergence and state.delta.delta < config.epsilon_threshold:
                log.info("keyword change %.3f below %.3f; stopping", state.delta.delta, config.epsilon_threshold)
                break
    return states


def load_run(out: Path) -> tuple[RunConfig, Corpus, KeywordSet, list[IterationState]]:
    out = Path(out)
    config = RunConfig.from_dict(json.loads((out / "config.json").read_text()))
    corpus = load_corpus(config.corpus, config.num_classes)
    keywords = load_keywords(out / "keywords_000.jsonl", corpus.num_classes)
    states = []
    it = 1
    while (s := load_state(corpus, out, it)) is not None:
        states.append(s)
        it += 1
    return config, corpus, keywords, states


def next_iteration(out: Path) -> IterationState:
    """Run exactly one more iteration in an existing run directory."""
    config, corpus, keywords, states = load_run(out)
    it = len(states) + 1
    current = states[-1].keywords if states else keywords
    d = iteration_dir(out, it)
    d.mkdir(parents=True, exist_ok=True)
    with _limit_threads(config):
        state = run_iteration(corpus, current, config, it, d)
    save_state(state, corpus, out)
    _write_metrics_log(out, states + [state])
    return state
