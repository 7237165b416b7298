"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with -s or read captured output).

Exact checks use independent oracles (pair enumeration, literal
expected-MI summation, finite differences, exhaustive enumeration, the
generating distributions of synthetic corpora). Statistical checks pin
seeds and assert orderings, not absolute values.
"""

import functools
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from numba import njit

from annotopic import topic_models as tm
from annotopic.active_learning import compute_scores, entropy, next_document, select_topic, topic_preference
from annotopic.classifier import log_loss_l2, log_loss_l2_grad
from annotopic.corpus import bow_counts, build_vocabulary, tfidf_features
from annotopic.metrics import adjusted_nmi, adjusted_rand_index, npmi_pair, purity
from annotopic.session import AnnotationSession, SessionConfig
from annotopic.simulation import SimulationConfig, export_curves, run_simulation, stratified_subsample
from synthdata import (
    greedy_match_tv,
    make_hierarchical_corpus,
    make_label_correlated_corpus,
    make_lexical_variety_corpus,
    make_topic_corpus,
)


def criterion(label):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException as exc:
                word = "SKIP" if exc.__class__.__name__ == "Skipped" else "FAIL"
                print(f"\n[ACCEPTANCE] {word}  {label}")
                raise
            print(f"\n[ACCEPTANCE] PASS  {label}")
            return result

        return wrapper

    return decorate


# =====================================================================
# criterion 1: metric oracle equivalence, exhaustive 8-element universe
# =====================================================================

def set_partitions(n, max_blocks):
    out = []

    def rec(i, labels, used):
        if i == n:
            out.append(tuple(labels))
            return
        for b in range(min(used + 1, max_blocks)):
            labels.append(b)
            rec(i + 1, labels, max(used, b + 1))
            labels.pop()

    rec(0, [], 0)
    return out


@njit(cache=True)
def _pair_contingency_keys(parts):
    """Pack each ordered pair's 4x4 overlap-count matrix into a uint64 key
    (cell counts <= 8 fit in 4 bits)."""
    n_parts, n = parts.shape
    keys = np.empty(n_parts * n_parts, dtype=np.uint64)
    idx = 0
    for a in range(n_parts):
        for b in range(n_parts):
            table = np.zeros((4, 4), dtype=np.int64)
            for i in range(n):
                table[parts[a, i], parts[b, i]] += 1
            key = np.uint64(0)
            shift = np.uint64(0)
            for r in range(4):
                for c in range(4):
                    key |= np.uint64(table[r, c]) << shift
                    shift += np.uint64(4)
            keys[idx] = key
            idx += 1
    return keys


def _key_to_labels(key):
    pred, gold = [], []
    key = int(key)
    for r in range(4):
        for c in range(4):
            count = (key >> (4 * (r * 4 + c))) & 0xF
            pred.extend([r] * count)
            gold.extend([c] * count)
    return pred, gold


def purity_oracle(pred, gold):
    clusters, classes = {}, {}
    for i, (p, g) in enumerate(zip(pred, gold)):
        clusters.setdefault(p, set()).add(i)
        classes.setdefault(g, set()).add(i)
    return sum(
        max(len(m & c) for c in classes.values()) for m in clusters.values()
    ) / len(pred)


def ari_pair_enumeration_oracle(pred, gold):
    n = len(pred)
    tp = same_pred = same_gold = 0
    for i, j in itertools.combinations(range(n), 2):
        sp_ = pred[i] == pred[j]
        sg = gold[i] == gold[j]
        same_pred += sp_
        same_gold += sg
        tp += sp_ and sg
    pairs = n * (n - 1) // 2
    expected = same_pred * same_gold / pairs
    maximum = (same_pred + same_gold) / 2
    if maximum == expected:
        return 1.0
    return (tp - expected) / (maximum - expected)


def anmi_literal_oracle(pred, gold):
    n = len(pred)
    a = [pred.count(c) for c in sorted(set(pred))]
    b = [gold.count(c) for c in sorted(set(gold))]
    clusters, classes = {}, {}
    for i, (p, g) in enumerate(zip(pred, gold)):
        clusters.setdefault(p, set()).add(i)
        classes.setdefault(g, set()).add(i)
    mi = 0.0
    for ck in clusters.values():
        for cj in classes.values():
            nij = len(ck & cj)
            if nij:
                mi += (nij / n) * math.log(n * nij / (len(ck) * len(cj)))
    emi = 0.0
    for ai in a:
        for bj in b:
            for nij in range(max(1, ai + bj - n), min(ai, bj) + 1):
                prob = Fraction(
                    math.comb(bj, nij) * math.comb(n - bj, ai - nij),
                    math.comb(n, ai),
                )
                emi += (nij / n) * math.log(n * nij / (ai * bj)) * float(prob)
    h = lambda parts: -sum(
        (len(s) / n) * math.log(len(s) / n) for s in parts.values()
    )
    denominator = h(clusters) + h(classes) - 2 * emi
    if abs(denominator) < 1e-15:
        return None  # degenerate; handled separately
    return 2 * (mi - emi) / denominator


@criterion("criterion 1: exhaustive metric oracle equivalence (8 elements, <=4 clusters)")
def test_criterion_01_metric_oracle_equivalence():
    started = time.monotonic()
    parts = np.array(set_partitions(8, 4), dtype=np.int64)
    assert len(parts) == 2795
    keys = _pair_contingency_keys(parts)
    assert len(keys) == 2795 * 2795
    unique_keys = np.unique(keys)
    # metrics depend on a partition pair only through its overlap-count
    # matrix, so checking every realizable matrix checks every pair
    for key in unique_keys:
        pred, gold = _key_to_labels(key)
        assert purity(pred, gold) == pytest.approx(
            purity_oracle(pred, gold), abs=1e-9
        )
        assert adjusted_rand_index(pred, gold) == pytest.approx(
            ari_pair_enumeration_oracle(pred, gold), abs=1e-9
        )
        expected_anmi = anmi_literal_oracle(pred, gold)
        if expected_anmi is None:
            assert len(set(pred)) == 1 and len(set(gold)) == 1
        else:
            assert adjusted_nmi(pred, gold) == pytest.approx(expected_anmi, abs=1e-9)
    elapsed = time.monotonic() - started
    print(f"  {len(unique_keys)} distinct overlap matrices across "
          f"{len(keys)} ordered pairs in {elapsed:.1f}s")
    assert elapsed < 60.0


# ===================================
# criterion 2: metric anchor cases
# ===================================

@criterion("criterion 2: metric anchor cases")
def test_criterion_02_metric_anchors():
    labels = ["a", "a", "b", "b", "c", "c"]
    assert purity(labels, labels) == 1.0
    assert adjusted_rand_index(labels, labels) == 1.0
    assert adjusted_nmi(labels, labels) == pytest.approx(1.0, abs=1e-9)

    gold = ["x", "x", "y", "y"]
    singletons = ["p0", "p1", "p2", "p3"]
    assert purity(singletons, gold) == 1.0

    constant = ["z"] * 4
    assert adjusted_rand_index(constant, gold) == pytest.approx(0.0, abs=1e-12)


# ==========================
# criterion 3: NPMI anchors
# ==========================

@criterion("criterion 3: NPMI anchors and bounds")
def test_criterion_03_npmi_anchors():
    always = [frozenset(d) for d in (["a", "b"], ["a", "b"], ["c"], ["d"])]
    assert npmi_pair("a", "b", always) == pytest.approx(1.0, abs=1e-9)

    independent = [frozenset(d) for d in (["x", "y"], ["x"], ["y"], ["z"])]
    assert npmi_pair("x", "y", independent) == pytest.approx(0.0, abs=1e-9)

    rng = np.random.default_rng(101)
    vocab = [f"w{i}" for i in range(15)]
    for _ in range(1000):
        n_docs = int(rng.integers(2, 9))
        docs = [
            frozenset(rng.choice(vocab, size=int(rng.integers(1, 7)), replace=False))
            for _ in range(n_docs)
        ]
        x, y = rng.choice(vocab, size=2, replace=False)
        assert -1.0 <= npmi_pair(str(x), str(y), docs) <= 1.0


# ======================================
# criterion 4: preference-function anchors
# ======================================

@criterion("criterion 4: preference-function anchors and selection oracles")
def test_criterion_04_preference_functions():
    started = time.monotonic()
    assert entropy([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-9)
    assert topic_preference(0.37, 0.42) == 0.37 * 0.42

    rng = np.random.default_rng(202)
    from statistics import median as stat_median

    for _ in range(1000):
        n_docs = int(rng.integers(1, 21))
        n_topics = int(rng.integers(1, 6))
        n_classes = int(rng.integers(2, 5))
        proba = rng.dirichlet(np.ones(n_classes), size=n_docs)
        theta = rng.dirichlet(np.ones(n_topics), size=n_docs)
        doc_ids = [f"d{i:02d}" for i in range(n_docs)]
        scores = compute_scores(doc_ids, proba, theta)

        h = [-sum(p * math.log(p) for p in row if p > 0) for row in proba]
        dom = [
            max(range(n_topics), key=lambda k: (theta[i][k], -k))
            for i in range(n_docs)
        ]
        ts = [h[i] * theta[i][dom[i]] for i in range(n_docs)]

        expected_baseline = doc_ids[
            min(range(n_docs), key=lambda i: (-h[i], doc_ids[i]))
        ]
        assert next_document("baseline", scores, set()) == expected_baseline

        medians = {}
        for k in range(n_topics):
            members = [ts[i] for i in range(n_docs) if dom[i] == k]
            if members:
                medians[k] = stat_median(members)
        expected_topic = min(medians, key=lambda k: (-medians[k], k))
        assert select_topic(scores, n_topics) == expected_topic
        members = [i for i in range(n_docs) if dom[i] == expected_topic]
        expected_doc = doc_ids[min(members, key=lambda i: (-ts[i], doc_ids[i]))]
        assert next_document("topic", scores, set(), n_topics=n_topics) == expected_doc
    elapsed = time.monotonic() - started
    print(f"  1000 random instances in {elapsed:.1f}s")
    assert elapsed < 30.0


# ==============================
# criterion 5: LDA recovery
# ==============================

@criterion("criterion 5: LDA recovers synthetic topics (TV < 0.2, counts consistent)")
def test_criterion_05_lda_recovery():
    started = time.monotonic()
    bow, true_phi, _ = make_topic_corpus(
        n_topics=5, n_words=100, n_docs=500, doc_len=80, seed=303
    )
    model = tm.train_lda(
        bow, n_topics=5, iterations=2000, seed=404, validate_counts=True
    )
    distances, _ = greedy_match_tv(true_phi, model.phi)
    print(f"  per-topic total variation: {[round(d, 3) for d in distances]}")
    assert all(d < 0.2 for d in distances), distances
    elapsed = time.monotonic() - started
    print(f"  2000 validated sweeps in {elapsed:.1f}s")
    assert elapsed < 300.0


# =======================================
# criterion 6: sLDA label-topic alignment
# =======================================

@criterion("criterion 6: sLDA aligns topic mass with labels (median over 5 seeds)")
def test_criterion_06_slda_alignment():
    gaps = []
    for seed in range(5):
        bow, labels, true_phi, groups = make_label_correlated_corpus(
            n_docs=300, n_words=80, doc_len=50, seed=1000 + seed
        )
        names = ["one", "two"]
        responses = np.zeros((len(labels), 2), dtype=np.int8)
        for d, lab in enumerate(labels):
            responses[d, names.index(lab)] = 1
        model, _ = tm.train_slda(
            bow, responses, names, n_topics=4, iterations=250, seed=2000 + seed
        )
        _, match = greedy_match_tv(true_phi, model.phi)
        one_topics = [match[k] for k in groups["one"]]
        ones = [d for d, lab in enumerate(labels) if lab == "one"]
        twos = [d for d, lab in enumerate(labels) if lab == "two"]
        mass_one = model.theta[np.ix_(ones, one_topics)].sum(axis=1).mean()
        mass_two = model.theta[np.ix_(twos, one_topics)].sum(axis=1).mean()
        gaps.append(mass_one - mass_two)
    print(f"  per-seed mass gaps: {[round(g, 3) for g in gaps]}")
    assert float(np.median(gaps)) >= 0.2


# =================================
# criterion 7: classifier gradients
# =================================

@criterion("criterion 7: log-loss+L2 gradient matches finite differences")
def test_criterion_07_gradient_check():
    rng = np.random.default_rng(505)
    alpha = 5e-6
    eps = 1e-5
    for _ in range(100):
        c = int(rng.integers(2, 6))
        f = int(rng.integers(2, 10))
        w = rng.normal(size=(c, f))
        b = rng.normal(size=c)
        x = rng.normal(size=f)
        y = int(rng.integers(0, c))
        grad_w, grad_b = log_loss_l2_grad(w, b, x, y, alpha)
        i, j = int(rng.integers(0, c)), int(rng.integers(0, f))
        wp, wm = w.copy(), w.copy()
        wp[i, j] += eps
        wm[i, j] -= eps
        fd = (log_loss_l2(wp, b, x, y, alpha) - log_loss_l2(wm, b, x, y, alpha)) / (2 * eps)
        denom = max(abs(fd), abs(grad_w[i, j]), 1e-8)
        assert abs(grad_w[i, j] - fd) / denom < 1e-5
        bp, bm = b.copy(), b.copy()
        bp[i] += eps
        bm[i] -= eps
        fd_b = (log_loss_l2(w, bp, x, y, alpha) - log_loss_l2(w, bm, x, y, alpha)) / (2 * eps)
        denom = max(abs(fd_b), abs(grad_b[i]), 1e-8)
        assert abs(grad_b[i] - fd_b) / denom < 1e-5


# ==================================================
# criterion 8: simulated-experiment condition ordering
# ==================================================

def _ordering_corpus():
    # 6 majors / 18 subs, high lexical variety: sparse features alone
    # generalize slowly from 400 labels, topic features do not
    corpus = make_lexical_variety_corpus(n_docs=3000, seed=8080)
    return stratified_subsample(corpus, 2000, seed=42)


def _run_ordering(corpus, condition, model, runs=5, docs=400):
    vocab = build_vocabulary(corpus, prune_threshold=3, max_doc_fraction=0.5)
    tfidf = tfidf_features(corpus, vocab)
    bow = bow_counts(corpus, vocab)
    config = SimulationConfig(
        condition=condition, docs_to_label=docs, runs=runs, seed=7
    )
    return run_simulation(
        corpus, vocab, tfidf, bow, config, topic_model=model
    )


def try_load_20newsgroups():
    try:
        from sklearn.datasets import fetch_20newsgroups

        raw = fetch_20newsgroups(
            subset="train", remove=("headers", "footers", "quotes")
        )
    except Exception as exc:  # no network path to the dataset host
        return None, str(exc)
    return raw, None


@criterion("criterion 8: topic conditions >= NONE at 400 labels (median of 5 runs)")
def test_criterion_08_condition_ordering_synthetic():
    started = time.monotonic()
    corpus = _ordering_corpus()
    vocab = build_vocabulary(corpus, prune_threshold=3, max_doc_fraction=0.5)
    bow = bow_counts(corpus, vocab)
    lda = tm.train_lda(bow, n_topics=35, iterations=2000, seed=99, terms=vocab.terms)

    # imported stand-in: the LDA theta itself through the import format
    import json as _json
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        theta_path = Path(tmp) / "theta.csv"
        lines = ["doc_id," + ",".join(f"t{i}" for i in range(35))]
        for pos, doc_id in enumerate(corpus.ids):
            lines.append(doc_id + "," + ",".join(repr(float(x)) for x in lda.theta[pos]))
        theta_path.write_text("\n".join(lines) + "\n", "utf-8")
        kw_path = Path(tmp) / "kw.json"
        kw_path.write_text(
            _json.dumps([kw[:10] for kw in lda.keywords]), "utf-8"
        )
        imported = tm.import_external_topics(theta_path, kw_path, corpus.ids)

    results = {}
    for condition, model in (("none", None), ("lda", lda), ("imported", imported)):
        curves = _run_ordering(corpus, condition, model)
        results[condition] = curves
        finals = curves.final_medians()
        print(
            f"  {condition:>8}: purity={finals['purity']:.4f} "
            f"ari={finals['ari']:.4f} anmi={finals['anmi']:.4f}"
        )

    for metric in ("purity", "anmi"):
        none_final = results["none"].final_medians()[metric]
        assert results["lda"].final_medians()[metric] >= none_final, metric
        assert results["imported"].final_medians()[metric] >= none_final, metric

    # learning is real: median purity at 400 labels beats the earliest
    # common checkpoint and the 20-label checkpoint
    for condition, curves in results.items():
        series = curves.aggregate.values["purity"]
        counts = curves.aggregate.labeled_counts
        assert series[-1] > series[0], condition
        if 20 in counts:
            assert series[-1] > series[counts.index(20)], condition

    elapsed = time.monotonic() - started
    print(f"  three conditions x 5 runs x 400 labels in {elapsed/60:.1f} min")
    assert elapsed < 1800.0


@criterion("criterion 8b: same protocol on a real 20newsgroups subsample")
def test_criterion_08b_condition_ordering_20newsgroups():
    raw, err = try_load_20newsgroups()
    if raw is None:
        pytest.skip(
            "20newsgroups is not reachable in this environment "
            f"(package-manager-only network): {err}; the ordering protocol "
            "runs on the synthetic hierarchical corpus instead (criterion 8)"
        )
    from annotopic.corpus import Corpus, make_document

    major_of = lambda name: name.split(".")[0]
    docs = []
    seen_texts = set()
    for i, (text, target) in enumerate(zip(raw.data, raw.target)):
        sub = raw.target_names[target]
        body = text.strip()
        if not body or body in seen_texts:
            continue
        seen_texts.add(body)
        doc = make_document(
            f"ng{i:06d}", body, gold_major=major_of(sub), gold_sub=sub
        )
        if len(doc.tokens) < 30:
            continue
        docs.append(doc)
    corpus = stratified_subsample(Corpus(docs), 2000, seed=42)
    vocab = build_vocabulary(corpus, prune_threshold=3, max_doc_fraction=0.5)
    bow = bow_counts(corpus, vocab)
    lda = tm.train_lda(bow, n_topics=35, iterations=2000, seed=99, terms=vocab.terms)
    none_curves = _run_ordering(corpus, "none", None)
    lda_curves = _run_ordering(corpus, "lda", lda)
    for metric in ("purity", "anmi"):
        assert (
            lda_curves.final_medians()[metric] >= none_curves.final_medians()[metric]
        ), metric


# ======================================
# criterion 9: determinism and replay
# ======================================

@criterion("criterion 9: bit-identical CSVs and exact replay of a 50-event log")
def test_criterion_09_determinism_and_replay(tmp_path):
    corpus = make_hierarchical_corpus(n_docs=200, n_major=3, subs_per_major=2, seed=33)
    vocab = build_vocabulary(corpus, prune_threshold=2, max_doc_fraction=0.6)
    tfidf = tfidf_features(corpus, vocab)
    bow = bow_counts(corpus, vocab)

    config = SimulationConfig(condition="none", docs_to_label=30, runs=2, seed=17)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    export_curves(run_simulation(corpus, vocab, tfidf, bow, config), p1)
    export_curves(run_simulation(corpus, vocab, tfidf, bow, config), p2)
    assert p1.read_bytes() == p2.read_bytes()

    session_config = SessionConfig(condition="none", seed=23)
    live = AnnotationSession(corpus, vocab, tfidf, bow, session_config)
    live_recommendations = [live.recommended_doc]
    events_applied = 0
    while events_applied < 50:
        doc = live.recommended_doc
        before = len(live.events)
        live.submit_label(doc, corpus.by_id(doc).gold_sub)
        events_applied += len(live.events) - before
        live_recommendations.append(live.recommended_doc)
    assert len(live.events) >= 50

    replayed = AnnotationSession(corpus, vocab, tfidf, bow, session_config)
    replay_recommendations = [replayed.recommended_doc]
    for event in live.events:
        replayed._replay_one(event)
        if event.kind in ("assign_label", "relabel", "skip"):
            replay_recommendations.append(replayed.recommended_doc)
    assert replay_recommendations == live_recommendations
    assert np.array_equal(replayed.classifier.weights, live.classifier.weights)
    assert np.array_equal(replayed.classifier.bias, live.classifier.bias)
    assert replayed.classifier.steps == live.classifier.steps


# ==============================================
# criterion 10: supervised retraining protocol
# ==============================================

@criterion("criterion 10: sLDA retrains at labels 50 and 100 with rebuild + reinit")
def test_criterion_10_slda_loop_protocol():
    corpus = make_hierarchical_corpus(n_docs=150, n_major=3, subs_per_major=2, seed=77)
    vocab = build_vocabulary(corpus, prune_threshold=2, max_doc_fraction=0.6)
    tfidf = tfidf_features(corpus, vocab)
    bow = bow_counts(corpus, vocab)
    responses = np.zeros((len(corpus), 0), dtype=np.int8)
    model, state = tm.train_slda(
        bow, responses, [], n_topics=6, iterations=150, seed=7, terms=vocab.terms
    )
    config = SessionConfig(
        condition="slda", seed=5, retrain_every=50, refresh_sweeps=20
    )
    session = AnnotationSession(
        corpus, vocab, tfidf, bow, config, topic_model=model, slda_state=state
    )
    classifier_generations = []
    for step in range(120):
        doc = session.recommended_doc
        clf_before = session.classifier
        session.submit_label(doc, corpus.by_id(doc).gold_sub)
        if session.classifier is not clf_before:
            classifier_generations.append(step + 1)
    assert [r.at_label_count for r in session.retrain_history] == [50, 100]
    assert all(r.features_rebuilt for r in session.retrain_history)
    assert all(r.classifier_reinitialized for r in session.retrain_history)
    # the event log confirms the cadence: retrains landed exactly after the
    # 50th and 100th assignment events
    assigns = [e for e in session.events if e.kind == "assign_label"]
    assert len(assigns) == 120
    assert 50 in classifier_generations and 100 in classifier_generations
    # between retrains the topic model stays put
    assert session.labels_since_retrain == 20
