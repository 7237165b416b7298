import json

import numpy as np
import pytest
import scipy.sparse as sp

from annotopic import topic_models as tm
from synthdata import (
    greedy_match_tv,
    make_label_correlated_corpus,
    make_topic_corpus,
    total_variation,
)


def one_word_bow(n_docs=200, n_words=2):
    rows = sp.csr_matrix(
        (np.ones(n_docs, dtype=np.int64), (range(n_docs), [0] * n_docs)),
        shape=(n_docs, n_words),
    )
    return rows


# --- configuration -------------------------------------------------------------

def test_default_configuration():
    assert tm.DEFAULT_K == 35
    assert tm.DEFAULT_ITERATIONS == 2000


def test_invalid_topic_count():
    bow = one_word_bow()
    with pytest.raises(tm.TopicModelError):
        tm.train_lda(bow, n_topics=1, iterations=5)


def test_too_few_documents_for_topic_count():
    bow = one_word_bow(n_docs=5)
    with pytest.raises(tm.TopicModelError):
        tm.train_lda(bow, n_topics=10, iterations=5)


# --- LDA ------------------------------------------------------------------------

def test_degenerate_one_word_corpus():
    bow = one_word_bow()
    model = tm.train_lda(bow, n_topics=2, iterations=50, seed=3)
    state = model._state
    beta, n_words = model.beta, 2
    for k in range(2):
        bound = 1.0 - 2 * beta * n_words / (state.n_k[k] + n_words * beta)
        assert model.phi[k, 0] >= bound
    # the dominant topic is essentially all that word
    assert model.phi[int(np.argmax(state.n_k)), 0] > 0.99
    assert np.allclose(model.theta.sum(axis=1), 1.0, atol=1e-9)
    assert (model.theta >= 0).all()


def test_phi_theta_are_row_stochastic():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=30, seed=1)
    model = tm.train_lda(bow, n_topics=3, iterations=30, seed=1)
    assert np.allclose(model.phi.sum(axis=1), 1.0, atol=1e-9)
    assert np.allclose(model.theta.sum(axis=1), 1.0, atol=1e-9)
    assert (model.phi >= 0).all() and (model.theta >= 0).all()


def test_lda_recovers_generating_topics():
    bow, true_phi, _ = make_topic_corpus(
        n_topics=3, n_words=60, n_docs=150, doc_len=40, seed=5
    )
    model = tm.train_lda(bow, n_topics=3, iterations=300, seed=11)
    distances, _ = greedy_match_tv(true_phi, model.phi)
    assert all(d < 0.2 for d in distances), distances


def test_lda_deterministic_given_seed():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=7)
    m1 = tm.train_lda(bow, n_topics=3, iterations=40, seed=42)
    m2 = tm.train_lda(bow, n_topics=3, iterations=40, seed=42)
    assert np.array_equal(m1.phi, m2.phi)
    assert np.array_equal(m1.theta, m2.theta)
    m3 = tm.train_lda(bow, n_topics=3, iterations=40, seed=43)
    assert not np.array_equal(m1.phi, m3.phi)


def test_count_consistency_validated_every_sweep():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=50, doc_len=20, seed=9)
    tm.train_lda(bow, n_topics=3, iterations=20, seed=1, validate_counts=True)


def test_empty_documents_warn_and_get_uniform_theta():
    bow = sp.csr_matrix(
        np.array([[3, 1], [0, 0], [2, 2], [1, 0]], dtype=np.int64)
    )
    with pytest.warns(UserWarning, match="empty"):
        model = tm.train_lda(bow, n_topics=2, iterations=10, seed=0)
    assert np.allclose(model.theta[1], [0.5, 0.5], atol=1e-12)


def test_log_likelihood_trend_improves():
    bow, _, _ = make_topic_corpus(
        n_topics=4, n_words=80, n_docs=120, doc_len=40, seed=13
    )
    model = tm.train_lda(
        bow, n_topics=4, iterations=200, seed=2, likelihood_every=1
    )
    lls = [ll for _, ll in model.ll_history]
    early = np.median(lls[5:15])
    late = np.median(lls[-10:])
    assert late >= early


def test_exchange_invariance_up_to_topic_permutation():
    bow, true_phi, _ = make_topic_corpus(
        n_topics=3, n_words=60, n_docs=150, doc_len=40, seed=15
    )
    perm = np.random.default_rng(1).permutation(bow.shape[0])
    permuted = sp.csr_matrix(bow.toarray()[perm])
    m1 = tm.train_lda(bow, n_topics=3, iterations=300, seed=21)
    m2 = tm.train_lda(permuted, n_topics=3, iterations=300, seed=21)
    d1, _ = greedy_match_tv(true_phi, m1.phi)
    d2, _ = greedy_match_tv(true_phi, m2.phi)
    assert all(d < 0.2 for d in d1)
    assert all(d < 0.2 for d in d2)
    # un-permute the permuted model's theta and compare dominant topics
    # through the greedy topic matching
    _, match1 = greedy_match_tv(true_phi, m1.phi)
    _, match2 = greedy_match_tv(true_phi, m2.phi)
    inv2 = np.empty(bow.shape[0], dtype=np.int64)
    inv2[perm] = np.arange(bow.shape[0])
    remap1 = {v: k for k, v in match1.items()}
    remap2 = {v: k for k, v in match2.items()}
    dom1 = [remap1[int(k)] for k in np.argmax(m1.theta, axis=1)]
    dom2_all = [remap2[int(k)] for k in np.argmax(m2.theta, axis=1)]
    dom2 = [dom2_all[inv2[d]] for d in range(bow.shape[0])]
    agreement = np.mean([a == b for a, b in zip(dom1, dom2)])
    assert agreement > 0.9


# --- fold-in inference ------------------------------------------------------------

def test_infer_theta_empty_document_uniform():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=17)
    model = tm.train_lda(bow, n_topics=3, iterations=30, seed=3)
    theta = tm.infer_theta(model, sp.csr_matrix((1, 40), dtype=np.int64), seed=0)
    assert np.allclose(theta, 1 / 3, atol=1e-12)


def test_infer_theta_close_to_training_row():
    bow, _, _ = make_topic_corpus(
        n_topics=3, n_words=60, n_docs=120, doc_len=60, seed=19
    )
    model = tm.train_lda(bow, n_topics=3, iterations=200, seed=5)
    for d in (0, 7, 33):
        theta = tm.infer_theta(model, bow.getrow(d), seed=123)
        assert total_variation(theta, model.theta[d]) < 0.15
        assert theta.sum() == pytest.approx(1.0, abs=1e-9)


def test_infer_theta_deterministic():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=23)
    model = tm.train_lda(bow, n_topics=3, iterations=30, seed=7)
    t1 = tm.infer_theta(model, bow.getrow(4), seed=9)
    t2 = tm.infer_theta(model, bow.getrow(4), seed=9)
    assert np.array_equal(t1, t2)


# --- keywords ----------------------------------------------------------------------

def test_top_keywords_count():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=29)
    terms = [f"term{i:03d}" for i in range(40)]
    model = tm.train_lda(bow, n_topics=3, iterations=20, seed=1, terms=terms)
    assert len(tm.top_keywords(model, 0, 10)) == 10
    assert len(tm.top_keywords(model, 0, 999)) == 40


def test_top_keywords_degenerate_corpus():
    model = tm.train_lda(one_word_bow(), n_topics=2, iterations=20, seed=1, terms=["tax", "law"])
    dominant = int(np.argmax(model._state.n_k))
    assert tm.top_keywords(model, dominant, 1) == ["tax"]


def test_top_keywords_order_matches_sort_oracle():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=30, n_docs=60, doc_len=25, seed=31)
    terms = [f"term{i:03d}" for i in range(30)]
    model = tm.train_lda(bow, n_topics=3, iterations=20, seed=2, terms=terms)
    for k in range(3):
        # oracle: full sort on (-phi, index)
        expected = [terms[i] for i in sorted(range(30), key=lambda i: (-model.phi[k, i], i))]
        assert model.keywords[k] == expected


def test_top_keywords_index_errors():
    model = tm.train_lda(one_word_bow(), n_topics=2, iterations=5, seed=1)
    with pytest.raises(IndexError):
        tm.top_keywords(model, 5, 3)
    with pytest.raises(ValueError):
        tm.top_keywords(model, 0, 0)


# --- supervised LDA -----------------------------------------------------------------

def test_slda_zero_label_columns_falls_back_to_lda():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=37)
    responses = np.zeros((60, 0), dtype=np.int8)
    model, state = tm.train_slda(bow, responses, [], n_topics=3, iterations=30, seed=8)
    lda = tm.train_lda(bow, n_topics=3, iterations=30, seed=8)
    assert np.array_equal(model.phi, lda.phi)
    assert np.array_equal(model.theta, lda.theta)
    assert model.source == "slda"
    assert state.eta.shape == (3, 0)


def test_slda_all_rows_unlabeled_matches_lda_trajectory():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=41)
    responses = np.zeros((60, 2), dtype=np.int8)
    model, _ = tm.train_slda(
        bow, responses, ["a", "b"], n_topics=3, iterations=30, seed=8
    )
    lda = tm.train_lda(bow, n_topics=3, iterations=30, seed=8)
    assert np.array_equal(model.phi, lda.phi)
    assert np.array_equal(model.theta, lda.theta)


def test_slda_aligns_topics_with_labels():
    bow, labels, true_phi, groups = make_label_correlated_corpus(
        n_docs=300, n_words=80, doc_len=50, seed=43
    )
    names = ["one", "two"]
    responses = np.zeros((len(labels), 2), dtype=np.int8)
    for d, lab in enumerate(labels):
        responses[d, names.index(lab)] = 1
    model, _ = tm.train_slda(
        bow, responses, names, n_topics=4, iterations=300, seed=13
    )
    _, match = greedy_match_tv(true_phi, model.phi)
    one_topics = [match[k] for k in groups["one"]]
    ones = [d for d, lab in enumerate(labels) if lab == "one"]
    twos = [d for d, lab in enumerate(labels) if lab == "two"]
    mass_one = model.theta[np.ix_(ones, one_topics)].sum(axis=1).mean()
    mass_two = model.theta[np.ix_(twos, one_topics)].sum(axis=1).mean()
    assert mass_one - mass_two >= 0.2


def test_slda_response_validation():
    bow = one_word_bow(10)
    with pytest.raises(tm.TopicModelError):
        tm.train_slda(bow, np.ones((10, 2)), ["a", "b"], n_topics=2, iterations=5)
    with pytest.raises(tm.TopicModelError):
        tm.train_slda(
            bow, np.full((10, 1), 2), ["a"], n_topics=2, iterations=5
        )
    with pytest.raises(tm.TopicModelError):
        tm.train_slda(bow, np.zeros((4, 1)), ["a"], n_topics=2, iterations=5)


def test_update_slda_responses_single_label():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=47)
    responses = np.zeros((60, 1), dtype=np.int8)
    responses[:5, 0] = 1
    model, state = tm.train_slda(
        bow, responses, ["only"], n_topics=3, iterations=20, seed=3
    )
    new_model, new_state = tm.update_slda_responses(
        state, ["only"] * 60, ["only"], refresh_sweeps=10
    )
    assert new_state.responses.shape == (60, 1)
    assert (new_state.responses == 1).all()
    assert np.allclose(new_model.phi.sum(axis=1), 1.0, atol=1e-9)


def test_update_slda_responses_label_set_growth():
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=53)
    responses = np.zeros((60, 2), dtype=np.int8)
    responses[:10, 0] = 1
    responses[10:20, 1] = 1
    model, state = tm.train_slda(
        bow, responses, ["a", "b"], n_topics=3, iterations=20, seed=4
    )
    labels_per_doc = ["a"] * 20 + ["b"] * 20 + ["c"] * 20
    new_model, new_state = tm.update_slda_responses(
        state, labels_per_doc, ["a", "b", "c"], refresh_sweeps=10
    )
    assert new_state.eta.shape == (3, 3)
    assert new_state.responses.shape == (60, 3)
    assert new_state.labels == ("a", "b", "c")
    # old state untouched
    assert state.eta.shape == (3, 2)
    assert new_state.gibbs.counts_consistent()


def test_update_slda_responses_unknown_label():
    bow = one_word_bow(10)
    responses = np.zeros((10, 1), dtype=np.int8)
    responses[0, 0] = 1
    _, state = tm.train_slda(bow, responses, ["a"], n_topics=2, iterations=5, seed=1)
    with pytest.raises(tm.TopicModelError, match="mystery"):
        tm.update_slda_responses(state, ["mystery"] * 10, ["a"], refresh_sweeps=2)


# --- imported topics -----------------------------------------------------------------

def write_import_files(tmp_path, rows, keywords, ids=None):
    k = len(rows[0])
    theta_path = tmp_path / "theta.csv"
    header = "doc_id," + ",".join(f"t{i}" for i in range(k))
    ids = ids or [f"d{i}" for i in range(len(rows))]
    lines = [header] + [
        ",".join([ids[i]] + [str(x) for x in row]) for i, row in enumerate(rows)
    ]
    theta_path.write_text("\n".join(lines) + "\n", "utf-8")
    kw_path = tmp_path / "keywords.json"
    kw_path.write_text(json.dumps(keywords), "utf-8")
    return theta_path, kw_path


def test_import_external_topics_normalizes_rows(tmp_path):
    theta_path, kw_path = write_import_files(
        tmp_path, [[2.0, 2.0], [1.0, 3.0]], [["a", "b"], ["c", "d"]]
    )
    model = tm.import_external_topics(theta_path, kw_path)
    assert model.source == "imported"
    assert model.phi is None
    assert np.allclose(model.theta[0], [0.5, 0.5])
    assert np.allclose(model.theta[1], [0.25, 0.75])
    assert model.keywords[1] == ["c", "d"]


def test_import_external_topics_zero_row_rejected(tmp_path):
    theta_path, kw_path = write_import_files(
        tmp_path, [[0.0, 0.0]], [["a"], ["b"]]
    )
    with pytest.raises(tm.TopicModelError, match="all-zero"):
        tm.import_external_topics(theta_path, kw_path)


def test_import_external_topics_negative_rejected(tmp_path):
    theta_path, kw_path = write_import_files(
        tmp_path, [[1.0, -0.5]], [["a"], ["b"]]
    )
    with pytest.raises(tm.TopicModelError, match="negative"):
        tm.import_external_topics(theta_path, kw_path)


def test_import_external_topics_id_alignment(tmp_path):
    theta_path, kw_path = write_import_files(
        tmp_path, [[1.0, 1.0]], [["a"], ["b"]], ids=["other"]
    )
    with pytest.raises(tm.TopicModelError, match="align"):
        tm.import_external_topics(theta_path, kw_path, expected_doc_ids=["mine"])


def test_import_external_topics_malformed_header(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nope,x\n1,2\n", "utf-8")
    kw = tmp_path / "kw.json"
    kw.write_text("[[\"a\"]]", "utf-8")
    with pytest.raises(tm.TopicModelError):
        tm.import_external_topics(bad, kw)


def test_import_external_topics_keyword_shape(tmp_path):
    theta_path, kw_path = write_import_files(tmp_path, [[1.0, 1.0]], [["a"]])
    with pytest.raises(tm.TopicModelError, match="keyword"):
        tm.import_external_topics(theta_path, kw_path)


# --- persistence -----------------------------------------------------------------------

def test_model_save_load_round_trip(tmp_path):
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=59)
    model = tm.train_lda(bow, n_topics=3, iterations=20, seed=6)
    path = tmp_path / "model.npz"
    tm.save_model(model, path)
    loaded = tm.load_model(path)
    assert np.array_equal(loaded.phi, model.phi)
    assert np.array_equal(loaded.theta, model.theta)
    assert loaded.keywords == model.keywords
    assert (loaded.source, loaded.alpha, loaded.beta, loaded.seed) == (
        "lda",
        model.alpha,
        model.beta,
        model.seed,
    )


def test_model_save_bytes_deterministic(tmp_path):
    bow, _, _ = make_topic_corpus(n_topics=3, n_words=40, n_docs=60, doc_len=25, seed=61)
    model = tm.train_lda(bow, n_topics=3, iterations=10, seed=6)
    p1, p2 = tmp_path / "m1.npz", tmp_path / "m2.npz"
    tm.save_model(model, p1)
    tm.save_model(model, p2)
    assert p1.read_bytes() == p2.read_bytes()
