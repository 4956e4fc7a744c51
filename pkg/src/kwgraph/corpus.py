"""Corpus loading, tokenization and keyword-occurrence primitives."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

_TOKEN_RE = re.compile(r"[^\W_]+")


class CorpusError(ValueError):
    pass


def tokenize(raw_text: str) -> list[str]:
    """Lowercase maximal runs of Unicode alphanumerics, in order."""
    return _TOKEN_RE.findall(raw_text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    raw_text: str
    tokens: tuple[str, ...]
    gold_label: Optional[int] = None

    @classmethod
    def from_text(cls, id: str, raw_text: str, gold_label: Optional[int] = None) -> "Document":
        return cls(id, raw_text, tuple(tokenize(raw_text)), gold_label)


@dataclass
class Corpus:
    documents: list[Document]
    num_classes: int
    doc_frequency: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_classes < 1:
            raise CorpusError("class count must be positive")
        for doc in self.documents:
            if doc.gold_label is not None and not 0 <= doc.gold_label < self.num_classes:
                raise CorpusError(f"document {doc.id!r}: label {doc.gold_label} outside [0, {self.num_classes})")
        if not self.doc_frequency:
            df: Counter = Counter()
            for doc in self.documents:
                df.update(set(doc.tokens))
            self.doc_frequency = dict(df)

    @property
    def n(self) -> int:
        return len(self.documents)

    @property
    def gold_labels(self) -> list[Optional[int]]:
        return [d.gold_label for d in self.documents]

    def without_gold(self) -> "Corpus":
        docs = [Document(d.id, d.raw_text, d.tokens, None) for d in self.documents]
        return Corpus(docs, self.num_classes, dict(self.doc_frequency))

    @classmethod
    def from_texts(cls, texts: Sequence[str], num_classes: int,
                   labels: Optional[Sequence[Optional[int]]] = None) -> "Corpus":
        labels = labels if labels is not None else [None] * len(texts)
        docs = [Document.from_text(str(i), t, y) for i, (t, y) in enumerate(zip(texts, labels))]
        return cls(docs, num_classes)


@dataclass(frozen=True)
class KeywordOccurrence:
    position: int
    keyword_id: int
    class_id: int


class KeywordSet:
    """Per-class keyword lists with a global vertex index.

    Vertex indices are assigned class-major, in listed order. Classes must be
    pairwise disjoint; an empty class is representable (extraction can run
    out of candidates) but rejected by the annotator.
    """

    def __init__(self, classes: Sequence[Iterable[str]]):
        self.classes: list[list[str]] = []
        self.index: dict[str, int] = {}
        self.class_of: dict[str, int] = {}
        for k, words in enumerate(classes):
            kept = []
            for w in words:
                if w in self.class_of:
                    if self.class_of[w] == k:
                        continue
                    raise CorpusError(f"keyword {w!r} assigned to classes {self.class_of[w]} and {k}")
                self.class_of[w] = k
                self.index[w] = len(self.index)
                kept.append(w)
            self.classes.append(kept)
        if not self.classes:
            raise CorpusError("keyword set needs at least one class")
        self.words: list[str] = [w for ws in self.classes for w in ws]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, KeywordSet) and self.classes == other.classes

    def __repr__(self) -> str:
        return f"KeywordSet({self.classes!r})"

    def flat(self) -> set[str]:
        return set(self.words)

    def empty_classes(self) -> list[int]:
        return [k for k, ws in enumerate(self.classes) if not ws]

    def class_ids(self) -> list[int]:
        return [self.class_of[w] for w in self.words]


def keyword_occurrences(doc: Document, keywords: KeywordSet) -> list[KeywordOccurrence]:
    out = []
    for pos, tok in enumerate(doc.tokens):
        idx = keywords.index.get(tok)
        if idx is not None:
            out.append(KeywordOccurrence(pos, idx, keywords.class_of[tok]))
    return out


def kf(doc: Document, keywords: KeywordSet) -> int:
    """Number of keyword occurrences in ``doc`` (repeats counted)."""
    return sum(1 for tok in doc.tokens if tok in keywords.index)


def term_frequency(word: str, doc: Document) -> int:
    return sum(1 for tok in doc.tokens if tok == word)


def coverage(corpus: Corpus, keywords: KeywordSet) -> float:
    if corpus.n == 0:
        raise CorpusError("coverage of an empty corpus is undefined")
    hit = sum(1 for doc in corpus.documents if any(t in keywords.index for t in doc.tokens))
    return hit / corpus.n


# --- file formats ---------------------------------------------------------

def _read_jsonl(path: Path) -> Iterable[tuple[int, object]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc.msg})") from None


def load_corpus(path, num_classes: int) -> Corpus:
    path = Path(path)
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        if not isinstance(rec, dict):
            raise CorpusError(f"{path}:{lineno}: record is not an object")
        if not isinstance(rec.get("id"), str):
            raise CorpusError(f"{path}:{lineno}: missing or non-string 'id'")
        if not isinstance(rec.get("text"), str):
            raise CorpusError(f"{path}:{lineno}: missing or non-string 'text'")
        label = rec.get("label")
        if label is not None:
            if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < num_classes:
                raise CorpusError(f"{path}:{lineno}: label must be an integer in [0, {num_classes})")
        if rec["id"] in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        docs.append(Document.from_text(rec["id"], rec["text"], label))
    return Corpus(docs, num_classes)


def save_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.documents:
            rec = {"id": d.id, "text": d.raw_text}
            if d.gold_label is not None:
                rec["label"] = d.gold_label
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_keywords(path, num_classes: Optional[int] = None) -> KeywordSet:
    path = Path(path)
    by_class: dict[int, list[str]] = {}
    for lineno, rec in _read_jsonl(path):
        if not isinstance(rec, dict) or not isinstance(rec.get("class"), int) or not isinstance(rec.get("words"), list):
            raise CorpusError(f"{path}:{lineno}: expected {{'class': int, 'words': [str, ...]}}")
        k = rec["class"]
        if k in by_class:
            raise CorpusError(f"{path}:{lineno}: class {k} listed twice")
        words = []
        for w in rec["words"]:
            toks = tokenize(w) if isinstance(w, str) else []
            if len(toks) != 1:
                raise CorpusError(f"{path}:{lineno}: keyword {w!r} is not a single token")
            words.append(toks[0])
        by_class[k] = words
    if num_classes is None:
        num_classes = max(by_class, default=-1) + 1
    extra = [k for k in by_class if not 0 <= k < num_classes]
    if extra:
        raise CorpusError(f"{path}: class index {extra[0]} outside [0, {num_classes})")
    return KeywordSet([by_class.get(k, []) for k in range(num_classes)])


def save_keywords(keywords: KeywordSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, words in enumerate(keywords.classes):
            fh.write(json.dumps({"class": k, "words": words}, ensure_ascii=False) + "\n")
