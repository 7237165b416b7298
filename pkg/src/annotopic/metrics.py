"""Cluster-quality and topic-coherence measures.

Partition comparisons (purity, adjusted Rand index, adjusted normalized
mutual information) operate on two labelings of the same document universe.
All three are computed from the contingency table between the partitions;
adjustment terms use exact (not sampled) expectations so results are
deterministic. Topic coherence is document-level NPMI over keyword pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln


class MetricsError(ValueError):
    """Mismatched universes or degenerate inputs."""


def _as_label_arrays(
    pred: Mapping[str, object] | Sequence[object],
    gold: Mapping[str, object] | Sequence[object],
) -> tuple[np.ndarray, np.ndarray]:
    """Align two labelings over the same universe into integer arrays."""
    if isinstance(pred, Mapping) != isinstance(gold, Mapping):
        raise MetricsError("pred and gold must both be mappings or both sequences")
    if isinstance(pred, Mapping):
        if set(pred.keys()) != set(gold.keys()):
            raise MetricsError("pred and gold cover different document sets")
        keys = sorted(pred.keys())
        pred_seq = [pred[k] for k in keys]
        gold_seq = [gold[k] for k in keys]
    else:
        if len(pred) != len(gold):
            raise MetricsError(
                f"pred has {len(pred)} items but gold has {len(gold)}"
            )
        pred_seq = list(pred)
        gold_seq = list(gold)
    if not pred_seq:
        raise MetricsError("empty universe")
    _, pred_codes = np.unique(np.asarray(pred_seq, dtype=object), return_inverse=True)
    _, gold_codes = np.unique(np.asarray(gold_seq, dtype=object), return_inverse=True)
    return pred_codes.astype(np.int64), gold_codes.astype(np.int64)


def _contingency(pred_codes: np.ndarray, gold_codes: np.ndarray) -> np.ndarray:
    n_pred = int(pred_codes.max()) + 1
    n_gold = int(gold_codes.max()) + 1
    table = np.zeros((n_pred, n_gold), dtype=np.int64)
    np.add.at(table, (pred_codes, gold_codes), 1)
    return table


def purity(pred, gold) -> float:
    """Fraction of documents whose predicted cluster's majority gold class
    matches their own: (1/N) * sum_k max_j |cluster_k intersect class_j|.

    Not symmetric; gaming-aware (all-singleton predictions score 1.0).
    """
    pred_codes, gold_codes = _as_label_arrays(pred, gold)
    table = _contingency(pred_codes, gold_codes)
    return float(table.max(axis=1).sum()) / float(len(pred_codes))


def adjusted_rand_index(pred, gold) -> float:
    """Chance-corrected pairwise agreement between two partitions.

    Computed from the contingency table in the standard pair-counting form:
    (sum_ij C(n_ij,2) - E) / (max - E) with
    E = sum_i C(a_i,2) * sum_j C(b_j,2) / C(N,2) and
    max = (sum_i C(a_i,2) + sum_j C(b_j,2)) / 2.
    Identical partitions give 1.0; independent ones give ~0; can be negative.
    """
    pred_codes, gold_codes = _as_label_arrays(pred, gold)
    n = len(pred_codes)
    if n < 2:
        raise MetricsError("adjusted Rand index needs at least 2 documents")
    table = _contingency(pred_codes, gold_codes)
    a = table.sum(axis=1)
    b = table.sum(axis=0)

    def comb2(x: np.ndarray) -> np.ndarray:
        return x * (x - 1) // 2

    sum_ij = int(comb2(table).sum())
    sum_a = int(comb2(a).sum())
    sum_b = int(comb2(b).sum())
    pairs = n * (n - 1) // 2
    expected = sum_a * sum_b / pairs
    maximum = 0.5 * (sum_a + sum_b)
    if maximum == expected:
        # Both partitions all-singletons or both one-cluster: identical by
        # construction, and the adjustment denominator degenerates.
        return 1.0
    return (sum_ij - expected) / (maximum - expected)


def _entropy_from_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def expected_mutual_information(contingency: np.ndarray) -> float:
    """Exact expectation of MI under random labelings with fixed marginals.

    Hypergeometric sum over all feasible cell values n_ij; log-factorials via
    gammaln keep it stable for the corpus sizes this package targets.
    """
    a = contingency.sum(axis=1).astype(np.int64)
    b = contingency.sum(axis=0).astype(np.int64)
    n = int(a.sum())
    # log k! for k in 0..n
    log_fact = gammaln(np.arange(n + 1, dtype=np.float64) + 1.0)
    log_n_fact = log_fact[n]
    emi = 0.0
    for ai in a:
        ai = int(ai)
        for bj in b:
            bj = int(bj)
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.int64)
            log_term = (
                log_fact[ai]
                + log_fact[bj]
                + log_fact[n - ai]
                + log_fact[n - bj]
                - log_n_fact
                - log_fact[nij]
                - log_fact[ai - nij]
                - log_fact[bj - nij]
                - log_fact[n - ai - bj + nij]
            )
            emi += float(
                ((nij / n) * (np.log(n * nij) - math.log(ai * bj))) @ np.exp(log_term)
            )
    return emi


def adjusted_nmi(pred, gold) -> float:
    """Chance-adjusted normalized mutual information.

    2*(MI - E[MI]) / ((H(pred) + H(gold)) - 2*E[MI]) with the exact
    hypergeometric E[MI]. The denominator degenerates when both partitions
    are single-cluster; that case is an error.
    """
    pred_codes, gold_codes = _as_label_arrays(pred, gold)
    table = _contingency(pred_codes, gold_codes)
    n = len(pred_codes)
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    if len(a) == n and len(b) == n:
        # Both all-singletons: identical partitions, but E[MI] equals MI
        # exactly and the adjustment becomes 0/0.
        return 1.0
    h_pred = _entropy_from_counts(a)
    h_gold = _entropy_from_counts(b)
    # MI from contingency
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = np.outer(a, b)[nz].astype(np.float64)
    mi = float(((nij / n) * np.log(n * nij / outer)).sum())
    emi = expected_mutual_information(table)
    denominator = (h_pred + h_gold) - 2.0 * emi
    if abs(denominator) < 1e-15:
        raise MetricsError(
            "adjusted NMI is undefined: both partitions are single-cluster"
        )
    return (2.0 * (mi - emi)) / denominator


@dataclass(frozen=True)
class MetricsReport:
    """Purity / ARI / ANMI for one (predicted, gold) pair at one checkpoint."""

    purity: float
    ari: float
    anmi: float
    key: object | None = None  # labeled-document count or minute index


def evaluate_session(
    pred_labels: Mapping[str, str],
    gold_major: Mapping[str, str],
    key: object | None = None,
) -> MetricsReport:
    """Compare classifier predictions against gold major labels."""
    if set(pred_labels.keys()) != set(gold_major.keys()):
        raise MetricsError("prediction and gold label maps cover different documents")
    return MetricsReport(
        purity=purity(pred_labels, gold_major),
        ari=adjusted_rand_index(pred_labels, gold_major),
        anmi=adjusted_nmi(pred_labels, gold_major),
        key=key,
    )


# --- NPMI topic coherence -------------------------------------------------

_NPMI_EPS = 1e-12


def _doc_term_sets(reference: Iterable) -> list[frozenset[str]]:
    sets = []
    for doc in reference:
        tokens = doc.tokens if hasattr(doc, "tokens") else doc
        sets.append(frozenset(tokens))
    if not sets:
        raise MetricsError("empty reference corpus")
    return sets


def npmi_pair(
    x: str,
    y: str,
    doc_sets: Sequence[frozenset[str]],
    eps: float = _NPMI_EPS,
) -> float:
    """NPMI of one word pair under document-level co-occurrence.

    log(P(x,y) / (P(x)P(y))) / -log P(x,y), with eps added to every count so
    absent words never divide by zero. When both words occur in every
    document the normalizer -log P(x,y) vanishes and the value is defined
    as 0 (the unnormalized PMI is 0 there as well).
    """
    n = len(doc_sets)
    cx = sum(1 for s in doc_sets if x in s)
    cy = sum(1 for s in doc_sets if y in s)
    cxy = sum(1 for s in doc_sets if x in s and y in s)
    px = (cx + eps) / (n + eps)
    py = (cy + eps) / (n + eps)
    pxy = (cxy + eps) / (n + eps)
    denom = -math.log(pxy)
    if denom == 0.0:
        return 0.0
    # the exact value lives in [-1, 1]; clamp away float rounding spill
    return min(1.0, max(-1.0, math.log(pxy / (px * py)) / denom))


def npmi_coherence(
    topic_words: Sequence[str],
    reference: Iterable,
    eps: float = _NPMI_EPS,
) -> float:
    """Mean pairwise NPMI over the top words of one topic.

    ``reference`` is a corpus (anything iterable over documents with a
    ``tokens`` attribute, or over plain token lists); co-occurrence means
    joint presence within a document.
    """
    if len(topic_words) < 2:
        raise MetricsError("coherence needs at least two topic words")
    doc_sets = _doc_term_sets(reference)
    values = [
        npmi_pair(topic_words[i], topic_words[j], doc_sets, eps)
        for i in range(len(topic_words))
        for j in range(i + 1, len(topic_words))
    ]
    return float(np.mean(values))


def coherence_report(
    keywords_per_topic: Sequence[Sequence[str]],
    reference: Iterable,
    top_n: int = 10,
) -> list[dict]:
    """Per-topic NPMI over each topic's top ``top_n`` words."""
    doc_sets = _doc_term_sets(reference)
    report = []
    for k, words in enumerate(keywords_per_topic):
        top = list(words[:top_n])
        pairs = [
            npmi_pair(top[i], top[j], doc_sets)
            for i in range(len(top))
            for j in range(i + 1, len(top))
        ]
        report.append(
            {
                "topic": k,
                "top_words": top,
                "npmi": float(np.mean(pairs)) if pairs else 0.0,
            }
        )
    return report


def save_coherence_report(report: list[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", "utf-8")


def metrics_csv_lines(reports: Sequence[MetricsReport]) -> list[str]:
    """Render a metric timeline as CSV lines (checkpoint_key,purity,ari,anmi)."""
    lines = ["checkpoint_key,purity,ari,anmi"]
    for r in reports:
        lines.append(f"{r.key},{r.purity:.12g},{r.ari:.12g},{r.anmi:.12g}")
    return lines


def save_metrics_csv(reports: Sequence[MetricsReport], path: str | Path) -> None:
    Path(path).write_text("\n".join(metrics_csv_lines(reports)) + "\n", "utf-8")
