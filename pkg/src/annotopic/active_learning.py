"""Preference scoring for active document selection.

Two modes:

* ``baseline`` ranks unlabeled documents by the entropy of the classifier's
  posterior over the current label set (most confused first).
* ``topic`` first picks the topic whose documents have the highest median
  entropy-times-dominant-topic-mass score, then the highest-scoring
  document inside it.

Everything here is a pure function over immutable snapshots; the session
decides which snapshot is current and which documents are still selectable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Iterable, Sequence

import numpy as np


class NoUnlabeledDocumentsError(RuntimeError):
    """Every document is labeled or skipped; nothing to recommend."""


class ColdStartSignal(RuntimeError):
    """The classifier has fewer than two classes; scores are undefined.

    Callers fall back to the seeded-random cold-start policy.
    """


def entropy(dist: Sequence[float] | np.ndarray) -> float:
    """Natural-log entropy of a probability vector; 0*log(0) counts as 0."""
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("entropy expects a non-empty 1-D probability vector")
    if (p < -1e-12).any() or abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError(f"not a probability simplex: sum={p.sum()!r}")
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def dominant_topic(theta_d: Sequence[float] | np.ndarray) -> tuple[int, float]:
    """Index and mass of the largest topic entry (lowest index wins ties)."""
    theta = np.asarray(theta_d, dtype=np.float64)
    k = int(np.argmax(theta))
    return k, float(theta[k])


def topic_preference(entropy_value: float, theta_max: float) -> float:
    """Topic-aware preference: posterior entropy scaled by dominant-topic mass."""
    return entropy_value * theta_max


@dataclass(frozen=True)
class PreferenceScore:
    """Selection-relevant numbers for one document."""

    doc_id: str
    entropy: float
    dominant_topic: int | None = None
    theta_max: float | None = None
    topic_score: float | None = None


def compute_scores(
    doc_ids: Sequence[str],
    proba: np.ndarray,
    theta: np.ndarray | None = None,
) -> list[PreferenceScore]:
    """Score documents from classifier posteriors and (optionally) topic mass.

    ``proba`` rows align with ``doc_ids``; ``theta`` rows too when given.
    """
    scores = []
    for i, doc_id in enumerate(doc_ids):
        h = entropy(proba[i])
        if theta is not None:
            k, tmax = dominant_topic(theta[i])
            scores.append(
                PreferenceScore(
                    doc_id=doc_id,
                    entropy=h,
                    dominant_topic=k,
                    theta_max=tmax,
                    topic_score=topic_preference(h, tmax),
                )
            )
        else:
            scores.append(PreferenceScore(doc_id=doc_id, entropy=h))
    return scores


def select_topic(scores: Iterable[PreferenceScore], n_topics: int) -> int:
    """Topic whose unlabeled documents have the highest median topic score.

    ``scores`` must cover exactly the unlabeled documents. Ties resolve to
    the lowest topic index; topics with no unlabeled documents never win.
    """
    by_topic: dict[int, list[float]] = {}
    for s in scores:
        if s.dominant_topic is None or s.topic_score is None:
            raise ValueError(f"score for {s.doc_id!r} lacks topic fields")
        by_topic.setdefault(s.dominant_topic, []).append(s.topic_score)
    if not by_topic:
        raise NoUnlabeledDocumentsError("no unlabeled documents remain")
    best_k = -1
    best_median = -math.inf
    for k in range(n_topics):
        if k not in by_topic:
            continue
        m = median(by_topic[k])
        if m > best_median:
            best_median = m
            best_k = k
    return best_k


def ranked_topics(scores: Iterable[PreferenceScore], n_topics: int) -> list[int]:
    """All topics holding unlabeled documents, best median first (ties by index)."""
    by_topic: dict[int, list[float]] = {}
    for s in scores:
        if s.dominant_topic is not None and s.topic_score is not None:
            by_topic.setdefault(s.dominant_topic, []).append(s.topic_score)
    return sorted(
        (k for k in range(n_topics) if k in by_topic),
        key=lambda k: (-median(by_topic[k]), k),
    )


def next_document(
    mode: str,
    scores: Sequence[PreferenceScore],
    labeled: set[str] | frozenset[str],
    skipped: set[str] | frozenset[str] = frozenset(),
    n_topics: int | None = None,
) -> str:
    """Pick the next document to annotate.

    ``scores`` covers unlabeled documents (skipped ones included: they still
    count toward topic medians). Skipped documents are never returned. Ties
    resolve to the lowest document id.
    """
    if mode not in ("baseline", "topic"):
        raise ValueError(f"unknown selection mode {mode!r}")
    unlabeled = [s for s in scores if s.doc_id not in labeled]
    candidates = [s for s in unlabeled if s.doc_id not in skipped]
    if not candidates:
        raise NoUnlabeledDocumentsError("no unlabeled documents remain")

    if mode == "baseline":
        return min(candidates, key=lambda s: (-s.entropy, s.doc_id)).doc_id

    if n_topics is None:
        n_topics = 1 + max(
            s.dominant_topic for s in unlabeled if s.dominant_topic is not None
        )
    # Skipped documents keep influencing the medians, but if a topic's whole
    # candidate pool was skipped the next-best topic serves the pick.
    for k in ranked_topics(unlabeled, n_topics):
        in_topic = [s for s in candidates if s.dominant_topic == k]
        if in_topic:
            return min(in_topic, key=lambda s: (-s.topic_score, s.doc_id)).doc_id
    raise NoUnlabeledDocumentsError("no unlabeled documents remain")


def dump_scores_csv(scores: Sequence[PreferenceScore], path: str | Path) -> None:
    """Audit dump of one selection step."""
    lines = ["doc_id,entropy,dominant_topic,theta_max,topic_score"]
    for s in scores:
        k = "" if s.dominant_topic is None else str(s.dominant_topic)
        tm = "" if s.theta_max is None else f"{s.theta_max:.12g}"
        ts = "" if s.topic_score is None else f"{s.topic_score:.12g}"
        lines.append(f"{s.doc_id},{s.entropy:.12g},{k},{tm},{ts}")
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")
