"""Incrementally trained multiclass linear classifier.

A single multinomial softmax model over concatenated tf-idf + topic
features, updated one labeled document at a time with log-loss + L2
stochastic gradient steps. The learning rate follows an inverse-scaling
schedule eta_t = 1 / (alpha * (t0 + t)) with t0 fixed so the first step
uses eta0.

The model is rebuilt from scratch (then retrained over the whole buffer)
whenever the label set grows or the feature space changes; plain label
assignments keep previously learned weights.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp


class UnseenLabelError(ValueError):
    """A batch carried a label the current model was never initialized with."""


class NotEnoughClassesError(ValueError):
    """The model needs at least two distinct classes to be fitted."""


class UninitializedClassifierError(RuntimeError):
    """Prediction requested before any model was initialized."""


@dataclass(frozen=True)
class SgdHyperparams:
    loss: str = "log_loss"
    penalty: str = "l2"
    alpha: float = 5e-6
    eta0: float = 0.1
    tol: float = 1e-2
    learning_rate: str = "optimal"
    seed: int = 42
    reinit_epochs: int = 5


class LabelSet:
    """Unique label strings in creation order."""

    def __init__(self, labels: Iterable[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> bool:
        """Register a label; returns True when it is new."""
        if label in self._index:
            return False
        self._index[label] = len(self._labels)
        self._labels.append(label)
        return True

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise UnseenLabelError(f"unknown label {label!r}") from None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._labels)


class TrainingBuffer:
    """(doc id, label) pairs in assignment order; relabeling replaces."""

    def __init__(self):
        self._pairs: dict[str, str] = {}

    def assign(self, doc_id: str, label: str) -> None:
        self._pairs[doc_id] = label

    def label_of(self, doc_id: str) -> str | None:
        return self._pairs.get(doc_id)

    def pairs(self) -> list[tuple[str, str]]:
        return list(self._pairs.items())

    def doc_ids(self) -> list[str]:
        return list(self._pairs.keys())

    def distinct_labels(self) -> set[str]:
        return set(self._pairs.values())

    def __len__(self) -> int:
        return len(self._pairs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._pairs


def _as_dense_1d(x) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x.todense()).ravel().astype(np.float64)
    return np.asarray(x, dtype=np.float64).ravel()


def build_features(tfidf_row, theta_row=None) -> np.ndarray:
    """Concatenate a document's tf-idf vector with its topic distribution.

    Conditions without a topic model pass ``theta_row=None`` and get the
    tf-idf vector alone.
    """
    tfidf = _as_dense_1d(tfidf_row)
    if theta_row is None:
        return tfidf
    return np.concatenate([tfidf, np.asarray(theta_row, dtype=np.float64).ravel()])


def build_feature_matrix(tfidf: sp.spmatrix, theta: np.ndarray | None = None) -> sp.csr_matrix:
    """Whole-corpus version of :func:`build_features`."""
    if theta is None:
        return sp.csr_matrix(tfidf)
    if theta.shape[0] != tfidf.shape[0]:
        raise ValueError(
            f"tfidf has {tfidf.shape[0]} rows but theta has {theta.shape[0]}"
        )
    return sp.hstack([tfidf, sp.csr_matrix(theta)], format="csr")


def softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_loss_l2(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: int, alpha: float
) -> float:
    """Penalized log loss for one sample: -log p_y + (alpha/2)||W||^2."""
    p = softmax(weights @ x + bias)
    return float(-np.log(max(p[y], 1e-300)) + 0.5 * alpha * float((weights * weights).sum()))


def log_loss_l2_grad(
    weights: np.ndarray, bias: np.ndarray, x: np.ndarray, y: int, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`log_loss_l2` w.r.t. weights and bias."""
    p = softmax(weights @ x + bias)
    p[y] -= 1.0
    return np.outer(p, x) + alpha * weights, p


class ClassifierState:
    """Weights, bias, and label registry of the softmax model."""

    def __init__(
        self,
        labels: Sequence[str],
        n_features: int,
        hyperparams: SgdHyperparams = SgdHyperparams(),
    ):
        if len(labels) < 2:
            raise NotEnoughClassesError(
                f"need at least two classes, got {list(labels)!r}"
            )
        self.labels: tuple[str, ...] = tuple(labels)
        self.n_features = int(n_features)
        self.hyperparams = hyperparams
        self.weights = np.zeros((len(self.labels), self.n_features))
        self.bias = np.zeros(len(self.labels))
        self.steps = 0
        # Inverse-scaling schedule anchored so eta(step 0) == eta0.
        self._t0 = 1.0 / (hyperparams.alpha * hyperparams.eta0)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnseenLabelError(f"unknown label {label!r}") from None

    def _eta(self) -> float:
        return 1.0 / (self.hyperparams.alpha * (self._t0 + self.steps))

    def _sgd_step(self, x: np.ndarray, y: int) -> float:
        eta = self._eta()
        loss = log_loss_l2(self.weights, self.bias, x, y, self.hyperparams.alpha)
        grad_w, grad_b = log_loss_l2_grad(
            self.weights, self.bias, x, y, self.hyperparams.alpha
        )
        self.weights -= eta * grad_w
        self.bias -= eta * grad_b
        self.steps += 1
        return loss

    def fit_incremental(self, batch: Iterable[tuple[object, str]]) -> "ClassifierState":
        """One stochastic-gradient pass over (features, label) pairs, in order.

        Weights persist across calls; an empty batch is a no-op. Labels
        outside the registry are rejected (the caller must reinitialize).
        """
        for features, label in batch:
            y = self.label_index(label)
            x = _as_dense_1d(features)
            if x.shape[0] != self.n_features:
                raise ValueError(
                    f"feature length {x.shape[0]} != model width {self.n_features}"
                )
            self._sgd_step(x, y)
        return self

    def predict_proba(self, features) -> np.ndarray:
        x = _as_dense_1d(features)
        if x.shape[0] != self.n_features:
            raise ValueError(
                f"feature length {x.shape[0]} != model width {self.n_features}"
            )
        return softmax(self.weights @ x + self.bias)

    def predict_proba_matrix(self, feature_matrix) -> np.ndarray:
        scores = feature_matrix @ self.weights.T
        scores = np.asarray(scores) + self.bias[np.newaxis, :]
        return softmax(scores)

    def predict_all(self, feature_matrix) -> list[str]:
        """Argmax label per row; exact ties go to the earliest-created label."""
        proba = self.predict_proba_matrix(feature_matrix)
        return [self.labels[i] for i in np.argmax(proba, axis=1)]

    def clone(self) -> "ClassifierState":
        other = ClassifierState(self.labels, self.n_features, self.hyperparams)
        other.weights = self.weights.copy()
        other.bias = self.bias.copy()
        other.steps = self.steps
        return other

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "hyperparams": asdict(self.hyperparams),
            "steps": self.steps,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", "utf-8")

    @classmethod
    def from_dict(cls, payload: dict) -> "ClassifierState":
        hyper = SgdHyperparams(**payload["hyperparams"])
        weights = np.asarray(payload["weights"], dtype=np.float64)
        state = cls(payload["labels"], weights.shape[1], hyper)
        state.weights = weights
        state.bias = np.asarray(payload["bias"], dtype=np.float64)
        state.steps = int(payload["steps"])
        return state

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierState":
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))


def reinitialize(
    buffer: TrainingBuffer,
    label_set: LabelSet,
    feature_lookup: Callable[[str], object],
    hyperparams: SgdHyperparams = SgdHyperparams(),
    seed: int | None = None,
) -> ClassifierState:
    """Fresh model over the current label set, retrained on the whole buffer.

    Runs ``reinit_epochs`` shuffled passes, stopping early once the mean
    buffer loss improves by less than ``tol`` between epochs. Requires at
    least two distinct buffered labels.
    """
    if len(buffer.distinct_labels()) < 2:
        raise NotEnoughClassesError(
            "reinitialization needs at least two distinct labels in the buffer"
        )
    pairs = buffer.pairs()
    xs = [_as_dense_1d(feature_lookup(doc_id)) for doc_id, _ in pairs]
    state = ClassifierState(label_set.labels, xs[0].shape[0], hyperparams)
    ys = [state.label_index(label) for _, label in pairs]
    rng = np.random.default_rng(hyperparams.seed if seed is None else seed)
    previous = np.inf
    for _ in range(hyperparams.reinit_epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for i in order:
            total += state._sgd_step(xs[i], ys[i])
        mean_loss = total / len(pairs)
        if previous - mean_loss < hyperparams.tol:
            break
        previous = mean_loss
    return state
