"""Corpus loading, tokenization, vocabulary construction, and featurization.

A corpus is an ordered collection of documents read from a JSON-lines file
(one object per line: ``{"id", "text", "major_label"?, "sub_label"?}``).
Labels are hierarchical: a sub label always implies a major label.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
import scipy.sparse as sp


class CorpusError(ValueError):
    """Malformed corpus file, duplicate document id, or empty corpus."""


class VocabularyError(ValueError):
    """Vocabulary construction produced no terms."""


_TOKEN_SPLIT = re.compile(r"[^a-z]+")


def tokenize(raw_text: str) -> list[str]:
    """Lowercase ``raw_text`` and split on non-alphabetic characters.

    Digit runs and punctuation act as separators (so standalone numbers
    vanish), and single-character tokens are dropped. Deterministic by
    construction.
    """
    return [t for t in _TOKEN_SPLIT.split(raw_text.lower()) if len(t) >= 2]


@dataclass(frozen=True)
class Document:
    """A single document with derived tokens and optional gold labels."""

    id: str
    raw_text: str
    tokens: tuple[str, ...]
    gold_major: str | None = None
    gold_sub: str | None = None


def make_document(
    doc_id: str,
    text: str,
    gold_major: str | None = None,
    gold_sub: str | None = None,
) -> Document:
    """Build a Document, deriving tokens from ``text``.

    A sub label without a major label violates the label hierarchy and is
    rejected.
    """
    if gold_sub is not None and gold_major is None:
        raise CorpusError(
            f"document {doc_id!r} has sub_label {gold_sub!r} without a major_label"
        )
    return Document(
        id=doc_id,
        raw_text=text,
        tokens=tuple(tokenize(text)),
        gold_major=gold_major,
        gold_sub=gold_sub,
    )


class Corpus:
    """Immutable ordered collection of documents with unique ids."""

    def __init__(self, documents: Iterable[Document]):
        docs = tuple(documents)
        if not docs:
            raise CorpusError("corpus is empty")
        index: dict[str, int] = {}
        for pos, doc in enumerate(docs):
            if doc.id in index:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            index[doc.id] = pos
        self._documents = docs
        self._index = index

    def __len__(self) -> int:
        return len(self._documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._documents)

    def __getitem__(self, position: int) -> Document:
        return self._documents[position]

    @property
    def documents(self) -> tuple[Document, ...]:
        return self._documents

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self._documents)

    def position(self, doc_id: str) -> int:
        try:
            return self._index[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def by_id(self, doc_id: str) -> Document:
        return self._documents[self.position(doc_id)]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._index

    def gold_major_map(self) -> dict[str, str]:
        """doc id -> gold major label, for documents that have one."""
        return {d.id: d.gold_major for d in self._documents if d.gold_major is not None}

    def gold_sub_map(self) -> dict[str, str]:
        return {d.id: d.gold_sub for d in self._documents if d.gold_sub is not None}

    @property
    def has_hierarchical_labels(self) -> bool:
        return all(d.gold_major is not None and d.gold_sub is not None for d in self._documents)


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSON-lines corpus file.

    Each line must parse as an object with keys ``id`` and ``text`` and
    optional ``major_label`` / ``sub_label``. Parse errors report the
    offending line number; duplicate ids and empty files are rejected.
    """
    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object per line")
            try:
                doc_id = record["id"]
                text = record["text"]
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: missing key {exc.args[0]!r}") from exc
            if not isinstance(doc_id, str) or not isinstance(text, str):
                raise CorpusError(f"{path}:{lineno}: 'id' and 'text' must be strings")
            if doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            documents.append(
                make_document(
                    doc_id,
                    text,
                    gold_major=record.get("major_label"),
                    gold_sub=record.get("sub_label"),
                )
            )
    if not documents:
        raise CorpusError(f"{path}: corpus is empty")
    return Corpus(documents)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus back to JSON-lines; inverse of :func:`load_corpus`."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in corpus:
            record: dict[str, str] = {"id": doc.id, "text": doc.raw_text}
            if doc.gold_major is not None:
                record["major_label"] = doc.gold_major
            if doc.gold_sub is not None:
                record["sub_label"] = doc.gold_sub
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def dedupe_and_filter(corpus: Corpus, min_tokens: int = 30) -> Corpus:
    """Drop exact-duplicate texts and documents shorter than ``min_tokens``.

    Standard benchmark-corpus cleanup; first occurrence of a duplicated
    text wins.
    """
    seen: set[str] = set()
    kept = []
    for doc in corpus:
        if len(doc.tokens) < min_tokens:
            continue
        if doc.raw_text in seen:
            continue
        seen.add(doc.raw_text)
        kept.append(doc)
    if not kept:
        raise CorpusError(
            f"no documents remain after dedup and the {min_tokens}-token floor"
        )
    return Corpus(kept)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a stopword file: one term per line, '#' lines are comments."""
    words = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            term = line.strip()
            if term and not term.startswith("#"):
                words.add(term)
    return frozenset(words)


def default_stopwords() -> frozenset[str]:
    """The stopword list shipped with the package."""
    text = resources.files("annotopic.data").joinpath("stopwords.txt").read_text("utf-8")
    return frozenset(
        term for term in (line.strip() for line in text.splitlines())
        if term and not term.startswith("#")
    )


@dataclass(frozen=True)
class Vocabulary:
    """Ordered term list with positions and document frequencies."""

    terms: tuple[str, ...]
    index: Mapping[str, int]
    doc_freq: Mapping[str, int]

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self.index


def build_vocabulary(
    corpus: Corpus,
    stopwords: frozenset[str] | set[str] = frozenset(),
    prune_threshold: int = 3,
    max_doc_fraction: float = 0.5,
) -> Vocabulary:
    """Collect corpus terms, dropping stopwords, rare, and too-common words.

    A term survives iff it is not a stopword, its document frequency is at
    least ``prune_threshold``, and it appears in at most ``max_doc_fraction``
    of the documents. Terms are ordered lexicographically so the vocabulary
    is deterministic for a given corpus and configuration.
    """
    doc_freq: dict[str, int] = {}
    for doc in corpus:
        for term in set(doc.tokens):
            doc_freq[term] = doc_freq.get(term, 0) + 1
    n_docs = len(corpus)
    kept = sorted(
        term
        for term, df in doc_freq.items()
        if term not in stopwords and df >= prune_threshold and df <= max_doc_fraction * n_docs
    )
    if not kept:
        raise VocabularyError(
            "vocabulary is empty after stopword removal and pruning "
            f"(threshold={prune_threshold}, max_doc_fraction={max_doc_fraction})"
        )
    return Vocabulary(
        terms=tuple(kept),
        index={term: i for i, term in enumerate(kept)},
        doc_freq={term: doc_freq[term] for term in kept},
    )


def export_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    """Write the vocabulary as audit-friendly JSON."""
    payload = {"terms": list(vocab.terms), "doc_freq": dict(vocab.doc_freq)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    payload = json.loads(Path(path).read_text("utf-8"))
    terms = tuple(payload["terms"])
    return Vocabulary(
        terms=terms,
        index={term: i for i, term in enumerate(terms)},
        doc_freq={t: int(c) for t, c in payload["doc_freq"].items()},
    )


def bow_counts(corpus: Corpus, vocab: Vocabulary) -> sp.csr_matrix:
    """Document-term occurrence counts as a sparse integer matrix."""
    rows: list[int] = []
    cols: list[int] = []
    vals: list[int] = []
    for d, doc in enumerate(corpus):
        counts: dict[int, int] = {}
        for term in doc.tokens:
            v = vocab.index.get(term)
            if v is not None:
                counts[v] = counts.get(v, 0) + 1
        for v in sorted(counts):
            rows.append(d)
            cols.append(v)
            vals.append(counts[v])
    mat = sp.csr_matrix(
        (np.asarray(vals, dtype=np.int64), (rows, cols)),
        shape=(len(corpus), len(vocab)),
    )
    mat.sort_indices()
    return mat


def tfidf_features(corpus: Corpus, vocab: Vocabulary) -> sp.csr_matrix:
    """tf-idf features: raw counts scaled by smooth idf, rows L2-normalized.

    idf(v) = ln((1 + D) / (1 + df(v))) + 1, which never reaches zero, so an
    in-vocabulary term always contributes signal. Rows with no in-vocabulary
    tokens stay all-zero.
    """
    counts = bow_counts(corpus, vocab).astype(np.float64)
    n_docs = len(corpus)
    df = np.array([vocab.doc_freq[t] for t in vocab.terms], dtype=np.float64)
    idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
    weighted = counts.multiply(idf[np.newaxis, :]).tocsr()
    norms = np.sqrt(np.asarray(weighted.multiply(weighted).sum(axis=1)).ravel())
    scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    out = sp.diags(scale).dot(weighted).tocsr()
    out.sort_indices()
    return out
