"""Classical topic models trained by collapsed Gibbs sampling.

Two trainable models:

* plain LDA;
* a supervised variant that weights each token's topic assignment by the
  likelihood of the document's observed binary responses (one column per
  registered label, logistic link on the document's mean assignment), and
  refits the response coefficients between sampling phases. Documents
  without responses contribute no response term, and with no response
  columns at all the supervised path degenerates to plain LDA exactly.

Externally computed document-topic matrices (from neural models) are
imported from CSV/JSON instead of trained here.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _gibbs

DEFAULT_K = 35
DEFAULT_ITERATIONS = 2000
DEFAULT_ALPHA = 0.1
DEFAULT_BETA = 0.01
DEFAULT_REFRESH_SWEEPS = 100
ETA_REFIT_EVERY = 50
FOLD_IN_SWEEPS = 50
FOLD_IN_BURN_IN = 25


class TopicModelError(ValueError):
    """Invalid training configuration or malformed import files."""


@dataclass
class TopicModel:
    """Trained or imported topic representation of one corpus.

    ``phi`` is the topic-word matrix (None for imported models, which only
    ship document-topic rows and verbatim keyword lists); ``theta`` is the
    document-topic matrix; ``keywords[k]`` ranks topic k's terms by
    descending probability with ties broken by term index.
    """

    theta: np.ndarray
    keywords: list[list[str]]
    source: str
    phi: np.ndarray | None = None
    alpha: float | None = None
    beta: float | None = None
    seed: int | None = None
    ll_history: list[tuple[int, float]] = field(default_factory=list, repr=False)

    @property
    def n_topics(self) -> int:
        return self.theta.shape[1]

    @property
    def n_docs(self) -> int:
        return self.theta.shape[0]


@dataclass
class GibbsState:
    """Mutable sampler state; kept so supervised retraining can resume."""

    z: np.ndarray
    doc_of: np.ndarray
    word_of: np.ndarray
    doc_ptr: np.ndarray
    doc_len: np.ndarray
    n_dk: np.ndarray
    n_kw: np.ndarray
    n_k: np.ndarray
    alpha: float
    beta: float
    rng_state: int  # xorshift64* state, coerced to uint64 at kernel boundaries

    def clone(self) -> "GibbsState":
        return GibbsState(
            z=self.z.copy(),
            doc_of=self.doc_of,
            word_of=self.word_of,
            doc_ptr=self.doc_ptr,
            doc_len=self.doc_len,
            n_dk=self.n_dk.copy(),
            n_kw=self.n_kw.copy(),
            n_k=self.n_k.copy(),
            alpha=self.alpha,
            beta=self.beta,
            rng_state=self.rng_state,
        )

    def counts_consistent(self) -> bool:
        return bool(
            _gibbs.counts_consistent(
                self.z, self.doc_of, self.word_of, self.n_dk, self.n_kw, self.n_k
            )
        )


@dataclass
class SldaState:
    """Gibbs state plus the response side of the supervised model."""

    gibbs: GibbsState
    eta: np.ndarray  # (K, L) response coefficients
    responses: np.ndarray  # (D, L) one-hot rows; all-zero = unlabeled
    labels: tuple[str, ...]

    def clone(self) -> "SldaState":
        return SldaState(
            gibbs=self.gibbs.clone(),
            eta=self.eta.copy(),
            responses=self.responses.copy(),
            labels=self.labels,
        )


def _flatten_bow(bow) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Expand a document-term count matrix into per-token arrays."""
    mat = sp.csr_matrix(bow, dtype=np.int64)
    mat.sort_indices()
    doc_of = []
    word_of = []
    doc_len = np.zeros(mat.shape[0], dtype=np.int64)
    for d in range(mat.shape[0]):
        row = mat.getrow(d)
        n = 0
        for v, c in zip(row.indices, row.data):
            for _ in range(int(c)):
                doc_of.append(d)
                word_of.append(int(v))
            n += int(c)
        doc_len[d] = n
    doc_ptr = np.zeros(mat.shape[0] + 1, dtype=np.int64)
    np.cumsum(doc_len, out=doc_ptr[1:])
    return (
        np.asarray(doc_of, dtype=np.int32),
        np.asarray(word_of, dtype=np.int32),
        doc_ptr,
        doc_len,
    )


def _init_state(bow, n_topics: int, alpha: float, beta: float, seed: int) -> GibbsState:
    n_docs, n_words = bow.shape
    doc_of, word_of, doc_ptr, doc_len = _flatten_bow(bow)
    empty = int((doc_len == 0).sum())
    if empty:
        warnings.warn(
            f"{empty} empty documents are skipped in sampling; their topic "
            "rows come out uniform",
            stacklevel=3,
        )
    state = _gibbs.seed_to_state(seed)
    z, state = _gibbs.init_assignments(len(doc_of), n_topics, state)
    state = int(state)
    n_dk, n_kw, n_k = _gibbs.build_counts(z, doc_of, word_of, n_docs, n_topics, n_words)
    return GibbsState(
        z=z,
        doc_of=doc_of,
        word_of=word_of,
        doc_ptr=doc_ptr,
        doc_len=doc_len,
        n_dk=n_dk,
        n_kw=n_kw,
        n_k=n_k,
        alpha=alpha,
        beta=beta,
        rng_state=state,
    )


def _posterior_matrices(state: GibbsState) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed phi/theta point estimates from the final counts."""
    n_words = state.n_kw.shape[1]
    n_topics = state.n_dk.shape[1]
    phi = (state.n_kw + state.beta) / (
        state.n_k[:, np.newaxis] + n_words * state.beta
    )
    theta = (state.n_dk + state.alpha) / (
        state.doc_len[:, np.newaxis] + n_topics * state.alpha
    )
    return phi, theta


def _ranked_keywords(phi: np.ndarray, terms: Sequence[str]) -> list[list[str]]:
    # stable sort on -phi keeps ascending term index among ties
    keywords = []
    for k in range(phi.shape[0]):
        order = np.argsort(-phi[k], kind="stable")
        keywords.append([terms[i] for i in order])
    return keywords


def _validate_training_inputs(bow, n_topics: int, iterations: int) -> None:
    if n_topics < 2:
        raise TopicModelError(f"topic count must be at least 2, got {n_topics}")
    if iterations < 1:
        raise TopicModelError(f"iterations must be at least 1, got {iterations}")
    if bow.shape[0] < n_topics:
        raise TopicModelError(
            f"corpus has {bow.shape[0]} documents, fewer than {n_topics} topics"
        )


def train_lda(
    bow,
    n_topics: int = DEFAULT_K,
    iterations: int = DEFAULT_ITERATIONS,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    seed: int = 0,
    terms: Sequence[str] | None = None,
    validate_counts: bool = False,
    likelihood_every: int = 0,
) -> TopicModel:
    """Collapsed-Gibbs LDA; deterministic for a given seed.

    ``validate_counts`` rebuilds the count matrices from the assignment
    vector after every sweep and raises on any drift. ``likelihood_every``
    > 0 records the joint log likelihood each that-many sweeps.
    """
    _validate_training_inputs(bow, n_topics, iterations)
    state = _init_state(bow, n_topics, alpha, beta, seed)
    ll_history: list[tuple[int, float]] = []
    for sweep in range(1, iterations + 1):
        state.rng_state = int(
            _gibbs.lda_sweep(
                state.z,
                state.doc_of,
                state.word_of,
                state.n_dk,
                state.n_kw,
                state.n_k,
                alpha,
                beta,
                np.uint64(state.rng_state),
            )
        )
        if validate_counts and not state.counts_consistent():
            raise AssertionError(f"count matrices drifted from z at sweep {sweep}")
        if likelihood_every and sweep % likelihood_every == 0:
            ll = _gibbs.joint_log_likelihood(
                state.n_dk, state.n_kw, state.n_k, state.doc_len, alpha, beta
            )
            ll_history.append((sweep, float(ll)))
    phi, theta = _posterior_matrices(state)
    term_list = list(terms) if terms is not None else [f"w{i}" for i in range(bow.shape[1])]
    model = TopicModel(
        phi=phi,
        theta=theta,
        keywords=_ranked_keywords(phi, term_list),
        source="lda",
        alpha=alpha,
        beta=beta,
        seed=seed,
        ll_history=ll_history,
    )
    model._state = state  # kept for fold-in reuse and tests
    return model


def _fit_eta(
    eta: np.ndarray,
    zbar: np.ndarray,
    responses: np.ndarray,
    has_response: np.ndarray,
    tol: float = 1e-4,
    max_iter: int = 500,
    learning_rate: float = 1.0,
) -> np.ndarray:
    """Per-label logistic regression of responses on mean topic assignments.

    Plain gradient ascent on the mean log likelihood; z-bar rows live on the
    simplex so a unit learning rate is safely inside the curvature bound.
    """
    labeled = np.where(has_response)[0]
    if labeled.size == 0:
        return eta
    x = zbar[labeled]
    new_eta = eta.copy()
    for l in range(eta.shape[1]):
        y = responses[labeled, l].astype(np.float64)
        w = new_eta[:, l].copy()
        for _ in range(max_iter):
            p = 1.0 / (1.0 + np.exp(-(x @ w)))
            grad = x.T @ (y - p) / labeled.size
            w += learning_rate * grad
            if np.abs(grad).max() < tol:
                break
        new_eta[:, l] = w
    return new_eta


def _zbar(state: GibbsState) -> np.ndarray:
    lengths = np.maximum(state.doc_len, 1)[:, np.newaxis]
    return state.n_dk / lengths


def _validate_responses(responses: np.ndarray, n_docs: int, n_labels: int) -> np.ndarray:
    responses = np.asarray(responses)
    if responses.shape != (n_docs, n_labels):
        raise TopicModelError(
            f"responses shape {responses.shape} != ({n_docs}, {n_labels})"
        )
    if not np.isin(responses, (0, 1)).all():
        raise TopicModelError("responses must be 0/1")
    if (responses.sum(axis=1) > 1).any():
        raise TopicModelError("each document may carry at most one response")
    return responses.astype(np.int8)


def _run_slda_sweeps(
    state: GibbsState,
    eta: np.ndarray,
    responses: np.ndarray,
    sweeps: int,
    validate_counts: bool = False,
) -> np.ndarray:
    """Alternate response-weighted Gibbs sweeps with coefficient refits."""
    has_response = responses.sum(axis=1) > 0
    eta = _fit_eta(eta, _zbar(state), responses, has_response)
    for sweep in range(1, sweeps + 1):
        state.rng_state = int(
            _gibbs.slda_sweep(
                state.z,
                state.doc_of,
                state.word_of,
                state.doc_ptr,
                state.n_dk,
                state.n_kw,
                state.n_k,
                state.alpha,
                state.beta,
                eta,
                responses,
                has_response,
                np.uint64(state.rng_state),
            )
        )
        if validate_counts and not state.counts_consistent():
            raise AssertionError(f"count matrices drifted from z at sweep {sweep}")
        if sweep % ETA_REFIT_EVERY == 0 and sweep < sweeps:
            eta = _fit_eta(eta, _zbar(state), responses, has_response)
    return _fit_eta(eta, _zbar(state), responses, has_response)


def train_slda(
    bow,
    responses: np.ndarray,
    label_names: Sequence[str],
    n_topics: int = DEFAULT_K,
    iterations: int = DEFAULT_ITERATIONS,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    seed: int = 0,
    terms: Sequence[str] | None = None,
    validate_counts: bool = False,
) -> tuple[TopicModel, SldaState]:
    """Supervised LDA with binary response columns.

    ``responses`` is (D, L) one-hot per labeled document and all-zero for
    unlabeled documents. With zero response columns the sampler runs the
    plain LDA trajectory for the same seed.
    """
    label_names = tuple(label_names)
    responses = _validate_responses(responses, bow.shape[0], len(label_names))
    _validate_training_inputs(bow, n_topics, iterations)
    state = _init_state(bow, n_topics, alpha, beta, seed)
    eta = np.zeros((n_topics, len(label_names)))
    if len(label_names) == 0:
        for _ in range(iterations):
            state.rng_state = int(
                _gibbs.lda_sweep(
                    state.z,
                    state.doc_of,
                    state.word_of,
                    state.n_dk,
                    state.n_kw,
                    state.n_k,
                    alpha,
                    beta,
                    np.uint64(state.rng_state),
                )
            )
    else:
        eta = _run_slda_sweeps(state, eta, responses, iterations, validate_counts)
    phi, theta = _posterior_matrices(state)
    term_list = list(terms) if terms is not None else [f"w{i}" for i in range(bow.shape[1])]
    model = TopicModel(
        phi=phi,
        theta=theta,
        keywords=_ranked_keywords(phi, term_list),
        source="slda",
        alpha=alpha,
        beta=beta,
        seed=seed,
    )
    slda_state = SldaState(gibbs=state, eta=eta, responses=responses, labels=label_names)
    return model, slda_state


def update_slda_responses(
    state: SldaState,
    labels_per_doc: Sequence[str],
    label_names: Sequence[str],
    refresh_sweeps: int = DEFAULT_REFRESH_SWEEPS,
    terms: Sequence[str] | None = None,
) -> tuple[TopicModel, SldaState]:
    """Rebuild responses from predicted labels and resume sampling.

    The label registry may have grown since the last phase; coefficients
    for existing labels carry over and new columns start at zero. Operates
    on a clone, leaving the input state untouched.
    """
    label_names = tuple(label_names)
    label_index = {name: i for i, name in enumerate(label_names)}
    n_docs = state.gibbs.n_dk.shape[0]
    if len(labels_per_doc) != n_docs:
        raise TopicModelError(
            f"got {len(labels_per_doc)} predicted labels for {n_docs} documents"
        )
    responses = np.zeros((n_docs, len(label_names)), dtype=np.int8)
    for d, label in enumerate(labels_per_doc):
        try:
            responses[d, label_index[label]] = 1
        except KeyError:
            raise TopicModelError(f"unknown label {label!r}") from None
    new = state.clone()
    eta = np.zeros((new.gibbs.n_dk.shape[1], len(label_names)))
    for old_i, name in enumerate(state.labels):
        if name in label_index:
            eta[:, label_index[name]] = state.eta[:, old_i]
    eta = _run_slda_sweeps(new.gibbs, eta, responses, refresh_sweeps)
    phi, theta = _posterior_matrices(new.gibbs)
    term_list = (
        list(terms) if terms is not None else [f"w{i}" for i in range(phi.shape[1])]
    )
    model = TopicModel(
        phi=phi,
        theta=theta,
        keywords=_ranked_keywords(phi, term_list),
        source="slda",
        alpha=new.gibbs.alpha,
        beta=new.gibbs.beta,
    )
    return model, SldaState(gibbs=new.gibbs, eta=eta, responses=responses, labels=label_names)


def infer_theta(
    model: TopicModel,
    bow_row,
    iterations: int = FOLD_IN_SWEEPS,
    burn_in: int = FOLD_IN_BURN_IN,
    seed: int = 0,
) -> np.ndarray:
    """Fold-in inference for a single (possibly unseen) document."""
    if model.phi is None:
        raise TopicModelError("imported models cannot fold in new documents")
    row = sp.csr_matrix(bow_row)
    word_ids = np.repeat(row.indices, row.data.astype(np.int64)).astype(np.int32)
    theta, _ = _gibbs.fold_in_theta(
        word_ids,
        model.phi,
        model.alpha if model.alpha is not None else DEFAULT_ALPHA,
        iterations,
        burn_in,
        _gibbs.seed_to_state(seed),
    )
    return theta


def top_keywords(model: TopicModel, topic: int, n: int = 10) -> list[str]:
    """First n ranked keywords of one topic."""
    if not 0 <= topic < model.n_topics:
        raise IndexError(f"topic {topic} out of range [0, {model.n_topics})")
    if n < 1:
        raise ValueError(f"keyword count must be positive, got {n}")
    return list(model.keywords[topic][:n])


def import_external_topics(
    theta_path: str | Path,
    keywords_path: str | Path,
    expected_doc_ids: Sequence[str] | None = None,
) -> TopicModel:
    """Load an externally trained model's document-topic rows and keywords.

    The CSV must carry a ``doc_id,t0,...,t{K-1}`` header; rows are
    renormalized to sum to one. Keywords come verbatim from a JSON array of
    arrays (outer length K).
    """
    theta_path = Path(theta_path)
    rows: list[np.ndarray] = []
    doc_ids: list[str] = []
    with theta_path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TopicModelError(f"{theta_path}: empty theta file") from None
        if len(header) < 2 or header[0] != "doc_id":
            raise TopicModelError(
                f"{theta_path}: header must be doc_id,t0,...,t{{K-1}}"
            )
        expected_cols = ["doc_id"] + [f"t{i}" for i in range(len(header) - 1)]
        if header != expected_cols:
            raise TopicModelError(f"{theta_path}: malformed header {header!r}")
        for lineno, parts in enumerate(reader, start=2):
            if not parts:
                continue
            if len(parts) != len(header):
                raise TopicModelError(
                    f"{theta_path}:{lineno}: expected {len(header)} columns"
                )
            doc_ids.append(parts[0])
            try:
                rows.append(np.asarray([float(x) for x in parts[1:]]))
            except ValueError as exc:
                raise TopicModelError(f"{theta_path}:{lineno}: {exc}") from None
    if not rows:
        raise TopicModelError(f"{theta_path}: no document rows")
    theta = np.vstack(rows)
    if (theta < 0).any():
        raise TopicModelError(f"{theta_path}: negative topic weights")
    sums = theta.sum(axis=1)
    zero_rows = np.where(sums == 0)[0]
    if zero_rows.size:
        raise TopicModelError(
            f"{theta_path}: all-zero row for document {doc_ids[zero_rows[0]]!r}"
        )
    theta = theta / sums[:, np.newaxis]
    if expected_doc_ids is not None:
        if list(expected_doc_ids) != doc_ids:
            raise TopicModelError(
                "theta rows do not align with the corpus document ids"
            )
    keywords = json.loads(Path(keywords_path).read_text("utf-8"))
    if (
        not isinstance(keywords, list)
        or len(keywords) != theta.shape[1]
        or not all(isinstance(entry, list) for entry in keywords)
    ):
        raise TopicModelError(
            f"{keywords_path}: expected a JSON array of {theta.shape[1]} keyword arrays"
        )
    return TopicModel(
        phi=None,
        theta=theta,
        keywords=[[str(w) for w in entry] for entry in keywords],
        source="imported",
    )


def save_model(model: TopicModel, path: str | Path) -> None:
    """Single-file npz snapshot (arrays plus a JSON meta entry)."""
    meta = {
        "source": model.source,
        "alpha": model.alpha,
        "beta": model.beta,
        "seed": model.seed,
        "keywords": model.keywords,
        "has_phi": model.phi is not None,
    }
    arrays = {
        "theta": model.theta,
        "meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
    }
    if model.phi is not None:
        arrays["phi"] = model.phi
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: str | Path) -> TopicModel:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        theta = data["theta"]
        phi = data["phi"] if meta["has_phi"] else None
    return TopicModel(
        phi=phi,
        theta=theta,
        keywords=[list(k) for k in meta["keywords"]],
        source=meta["source"],
        alpha=meta["alpha"],
        beta=meta["beta"],
        seed=meta["seed"],
    )


def save_slda_state(state: SldaState, path: str | Path) -> None:
    """Persist the supervised sampler state so retraining can resume after
    a restart from exactly the same point."""
    g = state.gibbs
    meta = {
        "alpha": g.alpha,
        "beta": g.beta,
        "rng_state": int(g.rng_state),
        "labels": list(state.labels),
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            z=g.z,
            doc_of=g.doc_of,
            word_of=g.word_of,
            doc_ptr=g.doc_ptr,
            doc_len=g.doc_len,
            n_dk=g.n_dk,
            n_kw=g.n_kw,
            n_k=g.n_k,
            eta=state.eta,
            responses=state.responses,
            meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
        )


def load_slda_state(path: str | Path) -> SldaState:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        gibbs = GibbsState(
            z=data["z"],
            doc_of=data["doc_of"],
            word_of=data["word_of"],
            doc_ptr=data["doc_ptr"],
            doc_len=data["doc_len"],
            n_dk=data["n_dk"],
            n_kw=data["n_kw"],
            n_k=data["n_k"],
            alpha=float(meta["alpha"]),
            beta=float(meta["beta"]),
            rng_state=int(meta["rng_state"]),
        )
        return SldaState(
            gibbs=gibbs,
            eta=data["eta"],
            responses=data["responses"],
            labels=tuple(meta["labels"]),
        )
