"""Event-sourced annotation session engine.

A session wires the corpus features, the (optional) topic model, the
incremental classifier, and preference-based recommendation into one
state machine driven by four event kinds: create_label, assign_label,
skip, relabel. The event log plus the immutable inputs fully determine
the session state: replaying a log reproduces classifier weights and the
recommendation sequence bit for bit.

All mutating calls must come from a single writer (the HTTP service
serializes them with a per-session lock); reads work on snapshots.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp

from . import topic_models as tm
from .active_learning import (
    NoUnlabeledDocumentsError,
    compute_scores,
    next_document,
)
from .classifier import (
    ClassifierState,
    LabelSet,
    SgdHyperparams,
    TrainingBuffer,
    build_feature_matrix,
    reinitialize,
)
from .corpus import Corpus, Vocabulary
from .metrics import MetricsReport, evaluate_session

CONDITIONS = ("none", "lda", "slda", "imported")
EVENT_KINDS = ("create_label", "assign_label", "skip", "relabel")
PREVIEW_CHARS = 200


class SessionError(RuntimeError):
    pass


class UnknownDocumentError(SessionError):
    pass


class AlreadyLabeledError(SessionError):
    pass


class EventLogError(SessionError):
    pass


@dataclass(frozen=True)
class AnnotationEvent:
    seq: int
    kind: str
    doc_id: str | None
    label: str | None
    wall_time: datetime

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "kind": self.kind,
                "doc_id": self.doc_id,
                "label": self.label,
                "wall_time": self.wall_time.isoformat(),
            }
        )

    @classmethod
    def from_json_line(cls, line: str) -> "AnnotationEvent":
        try:
            payload = json.loads(line)
            return cls(
                seq=int(payload["seq"]),
                kind=payload["kind"],
                doc_id=payload.get("doc_id"),
                label=payload.get("label"),
                wall_time=datetime.fromisoformat(payload["wall_time"]),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise EventLogError(f"corrupt event line: {line!r}") from exc


@dataclass(frozen=True)
class SessionConfig:
    condition: str
    seed: int = 0
    retrain_every: int = 50
    refresh_sweeps: int = tm.DEFAULT_REFRESH_SWEEPS
    suggestions_top_n: int = 3
    highlight_threshold: float = 0.05
    detail_topics: int = 5
    detail_keywords: int = 10
    overview_keywords: int = 10
    hyperparams: SgdHyperparams = field(default_factory=SgdHyperparams)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise SessionError(f"unknown condition {self.condition!r}")


@dataclass
class RetrainRecord:
    """Audit marker for one supervised-model refresh."""

    at_label_count: int
    features_rebuilt: bool
    classifier_reinitialized: bool


def _utc_now() -> datetime:
    return datetime.now(timezone.utc)


class AnnotationSession:
    """Single-annotator labeling session over a featurized corpus."""

    def __init__(
        self,
        corpus: Corpus,
        vocab: Vocabulary,
        tfidf: sp.csr_matrix,
        bow: sp.csr_matrix,
        config: SessionConfig,
        topic_model: tm.TopicModel | None = None,
        slda_state: tm.SldaState | None = None,
        clock: Callable[[], datetime] = _utc_now,
        event_sink: Callable[[AnnotationEvent], None] | None = None,
    ):
        if config.condition != "none" and topic_model is None:
            raise SessionError(
                f"condition {config.condition!r} needs a topic model"
            )
        if config.condition == "none" and topic_model is not None:
            raise SessionError("condition 'none' must not carry a topic model")
        if config.condition == "slda" and slda_state is None:
            raise SessionError("condition 'slda' needs the supervised sampler state")
        self.corpus = corpus
        self.vocab = vocab
        self.tfidf = tfidf
        self.bow = bow
        self.config = config
        self.topic_model = topic_model
        self.slda_state = slda_state
        self.clock = clock
        self.event_sink = event_sink

        self.label_set = LabelSet()
        self.buffer = TrainingBuffer()
        self.classifier: ClassifierState | None = None
        self.events: list[AnnotationEvent] = []
        self.skipped: set[str] = set()
        self.labels_since_retrain = 0
        self.retrain_history: list[RetrainRecord] = []
        self.started_at = clock()
        self.assign_event_count = 0
        # when set, called instead of the inline supervised retrain
        self.retrain_runner: Callable[["AnnotationSession"], None] | None = None
        # the models the session started from, for replay reconstruction
        self._initial_topic_model = topic_model
        self._initial_slda_state = slda_state
        self._rng = random.Random(config.seed)
        self._rebuild_features()
        self.recommended_doc: str | None = None
        self._refresh_recommendation()

    # --- feature plumbing -------------------------------------------------

    def _rebuild_features(self) -> None:
        theta = self.topic_model.theta if self.topic_model is not None else None
        self.features = build_feature_matrix(self.tfidf, theta)

    def _feature_row(self, doc_id: str) -> np.ndarray:
        row = self.features.getrow(self.corpus.position(doc_id))
        return np.asarray(row.todense()).ravel()

    @property
    def selection_mode(self) -> str:
        return "baseline" if self.config.condition == "none" else "topic"

    # --- event helpers ------------------------------------------------------

    def _append_event(
        self,
        kind: str,
        doc_id: str | None,
        label: str | None,
        wall_time: datetime | None = None,
    ) -> AnnotationEvent:
        event = AnnotationEvent(
            seq=len(self.events) + 1,
            kind=kind,
            doc_id=doc_id,
            label=label,
            wall_time=wall_time if wall_time is not None else self.clock(),
        )
        self.events.append(event)
        if self.event_sink is not None:
            self.event_sink(event)
        return event

    # --- recommendation -----------------------------------------------------

    def _unlabeled_ids(self) -> list[str]:
        return [d.id for d in self.corpus if d.id not in self.buffer]

    def _selectable_ids(self) -> list[str]:
        return [i for i in self._unlabeled_ids() if i not in self.skipped]

    def current_scores(self):
        """Preference scores for unlabeled documents (skipped included)."""
        if self.classifier is None:
            return None
        unlabeled = self._unlabeled_ids()
        if not unlabeled:
            return []
        rows = [self.corpus.position(i) for i in unlabeled]
        proba = self.classifier.predict_proba_matrix(self.features[rows])
        theta = (
            self.topic_model.theta[rows] if self.topic_model is not None else None
        )
        return compute_scores(unlabeled, proba, theta)

    def _refresh_recommendation(self) -> None:
        selectable = self._selectable_ids()
        if not selectable:
            self.recommended_doc = None
            return
        if self.classifier is None:
            # cold start: seeded random choice until two classes exist
            self.recommended_doc = self._rng.choice(sorted(selectable))
            return
        scores = self.current_scores()
        try:
            self.recommended_doc = next_document(
                self.selection_mode,
                scores,
                labeled=set(self.buffer.doc_ids()),
                skipped=self.skipped,
                n_topics=self.topic_model.n_topics if self.topic_model else None,
            )
        except NoUnlabeledDocumentsError:
            self.recommended_doc = None

    # --- mutations -----------------------------------------------------------

    def submit_label(self, doc_id: str, label: str) -> dict:
        """Label a document (creating the label if new) and advance.

        Returns the new recommendation plus suggestions for it, mirroring
        the HTTP response shape.
        """
        if doc_id not in self.corpus:
            raise UnknownDocumentError(f"unknown document {doc_id!r}")
        if not label or not label.strip():
            raise SessionError("label must be a non-empty string")
        label = label.strip()
        if label not in self.label_set:
            self._append_event("create_label", None, label)
        kind = "relabel" if doc_id in self.buffer else "assign_label"
        event = self._append_event(kind, doc_id, label)
        self._apply_assignment(event)
        return {
            "recommended_doc": self.recommended_doc,
            "suggestions": self.suggestions_for(self.recommended_doc),
        }

    def skip_document(self, doc_id: str) -> dict:
        """Mark a document unlabelable; it leaves the candidate pool."""
        if doc_id not in self.corpus:
            raise UnknownDocumentError(f"unknown document {doc_id!r}")
        if doc_id in self.buffer:
            raise AlreadyLabeledError(f"document {doc_id!r} already has a label")
        if doc_id in self.skipped:
            raise SessionError(f"document {doc_id!r} was already skipped")
        event = self._append_event("skip", doc_id, None)
        self._apply_skip(event)
        return {"recommended_doc": self.recommended_doc}

    # --- event application (shared by live calls and replay) -------------------

    def _apply_assignment(self, event: AnnotationEvent) -> None:
        doc_id, label = event.doc_id, event.label
        self.label_set.add(label)
        was_relabel = event.kind == "relabel"
        self.buffer.assign(doc_id, label)
        self.skipped.discard(doc_id)

        if self.classifier is None:
            if len(self.buffer.distinct_labels()) >= 2:
                self._reinitialize_classifier()
        elif label not in self.classifier.labels:
            self._reinitialize_classifier()
        else:
            self.classifier.fit_incremental([(self._feature_row(doc_id), label)])

        if not was_relabel:
            self.labels_since_retrain += 1
            self.assign_event_count += 1
        if (
            self.config.condition == "slda"
            and self.classifier is not None
            and self.labels_since_retrain >= self.config.retrain_every
        ):
            if self.retrain_runner is not None:
                # deferred mode: the service trains on a cloned state and
                # installs the result through the writer later
                self.retrain_runner(self)
            else:
                self._retrain_slda()
        self._refresh_recommendation()

    def _apply_skip(self, event: AnnotationEvent) -> None:
        self.skipped.add(event.doc_id)
        self._refresh_recommendation()

    def _reinitialize_classifier(self) -> None:
        self.classifier = reinitialize(
            self.buffer,
            self.label_set,
            self._feature_row,
            hyperparams=self.config.hyperparams,
            seed=self.config.seed,
        )

    # --- supervised-model refresh ------------------------------------------------

    def surrogate_labels(self) -> list[str]:
        """A label for every document: classifier predictions, with the
        user's own labels overriding where they exist."""
        predicted = self.classifier.predict_all(self.features)
        labels = list(predicted)
        for doc_id, label in self.buffer.pairs():
            labels[self.corpus.position(doc_id)] = label
        return labels

    def _retrain_slda(self) -> None:
        model, state = tm.update_slda_responses(
            self.slda_state,
            self.surrogate_labels(),
            self.label_set.labels,
            refresh_sweeps=self.config.refresh_sweeps,
            terms=self.vocab.terms,
        )
        self.install_retrain_result(model, state)

    def install_retrain_result(
        self, model: tm.TopicModel, state: tm.SldaState
    ) -> None:
        """Swap in a freshly trained supervised model.

        The swap is atomic from the reader's perspective (single writer):
        model, features, and classifier change together, and the
        recommendation is recomputed against the new snapshot.
        """
        self.topic_model = model
        self.slda_state = state
        self._rebuild_features()
        self._reinitialize_classifier()
        self.retrain_history.append(
            RetrainRecord(
                at_label_count=self.assign_event_count,
                features_rebuilt=True,
                classifier_reinitialized=True,
            )
        )
        self.labels_since_retrain = 0
        self._refresh_recommendation()

    # --- read views -----------------------------------------------------------

    def _doc_summary(self, doc_id: str) -> dict:
        doc = self.corpus.by_id(doc_id)
        return {
            "id": doc.id,
            "preview": doc.raw_text[:PREVIEW_CHARS],
            "label": self.buffer.label_of(doc.id),
            "skipped": doc.id in self.skipped,
            "recommended": doc.id == self.recommended_doc,
        }

    def get_overview(self) -> dict:
        """Topic-grouped document browser, recommended document pinned first.

        The no-topic condition returns one flat list instead of groups.
        """
        if self.topic_model is None:
            ids = [d.id for d in self.corpus]
            if self.recommended_doc is not None:
                ids.remove(self.recommended_doc)
                ids.insert(0, self.recommended_doc)
            return {
                "condition": self.config.condition,
                "recommended_doc": self.recommended_doc,
                "groups": [],
                "documents": [self._doc_summary(i) for i in ids],
            }
        theta = self.topic_model.theta
        dominant = np.argmax(theta, axis=1)
        members: dict[int, list[str]] = {}
        for pos, doc in enumerate(self.corpus):
            members.setdefault(int(dominant[pos]), []).append(doc.id)
        pinned_topic = None
        if self.recommended_doc is not None:
            pinned_topic = int(dominant[self.corpus.position(self.recommended_doc)])
            ids = members[pinned_topic]
            ids.remove(self.recommended_doc)
            ids.insert(0, self.recommended_doc)
        topic_order = sorted(
            members.keys(), key=lambda k: (k != pinned_topic, k)
        )
        groups = [
            {
                "topic": k,
                "keywords": tm.top_keywords(
                    self.topic_model, k, self.config.overview_keywords
                ),
                "documents": [self._doc_summary(i) for i in members[k]],
            }
            for k in topic_order
        ]
        return {
            "condition": self.config.condition,
            "recommended_doc": self.recommended_doc,
            "groups": groups,
            "documents": None,
        }

    def suggestions_for(self, doc_id: str | None) -> list[dict]:
        """Existing labels ranked for one document (top slice only).

        Before the classifier exists the labels appear in creation order
        with null probabilities.
        """
        if doc_id is None:
            return []
        labels = self.label_set.labels
        if not labels:
            return []
        if self.classifier is None:
            ranked = [{"label": lab, "probability": None} for lab in labels]
        else:
            proba = self.classifier.predict_proba(self._feature_row(doc_id))
            order = np.argsort(-proba, kind="stable")
            ranked = [
                {"label": self.classifier.labels[i], "probability": float(proba[i])}
                for i in order
            ]
        return ranked[: self.config.suggestions_top_n]

    def get_document_detail(self, doc_id: str) -> dict:
        """Full text plus topic panel, highlight mask, and label suggestions."""
        if doc_id not in self.corpus:
            raise UnknownDocumentError(f"unknown document {doc_id!r}")
        doc = self.corpus.by_id(doc_id)
        detail = {
            "doc_id": doc.id,
            "text": doc.raw_text,
            "tokens": list(doc.tokens),
            "label": self.buffer.label_of(doc.id),
            "skipped": doc.id in self.skipped,
            "topics": None,
            "highlight_mask": None,
            "suggestions": self.suggestions_for(doc.id),
        }
        if self.topic_model is None:
            return detail
        theta_row = self.topic_model.theta[self.corpus.position(doc.id)]
        order = np.argsort(-theta_row, kind="stable")[: self.config.detail_topics]
        detail["topics"] = [
            {
                "topic": int(k),
                "weight": float(theta_row[k]),
                "keywords": tm.top_keywords(
                    self.topic_model, int(k), self.config.detail_keywords
                ),
            }
            for k in order
        ]
        primary = int(order[0])
        if self.topic_model.phi is not None:
            phi_k = self.topic_model.phi[primary]
            threshold = self.config.highlight_threshold
            mask = []
            for token in doc.tokens:
                v = self.vocab.index.get(token)
                mask.append(bool(v is not None and phi_k[v] > threshold))
            detail["highlight_mask"] = mask
        else:
            # imported models ship no topic-word distribution
            detail["highlight_mask"] = [False] * len(doc.tokens)
        return detail

    # --- metrics ------------------------------------------------------------------

    def _gold_majors(self) -> dict[str, str]:
        gold = self.corpus.gold_major_map()
        if len(gold) != len(self.corpus):
            raise SessionError("metrics need gold major labels for every document")
        return gold

    def _evaluate_now(self, key) -> MetricsReport:
        pred = dict(zip(self.corpus.ids, self.classifier.predict_all(self.features)))
        return evaluate_session(pred, self._gold_majors(), key=key)

    def metrics_timeline(self, key: str = "label") -> list[MetricsReport]:
        """Replay the event log, measuring cluster quality at checkpoints.

        ``key='label'`` evaluates after every labeled document;
        ``key='minute'`` samples state at each minute boundary of the
        recorded wall times. Empty until the classifier exists.
        """
        if key not in ("label", "minute"):
            raise ValueError(f"unknown timeline key {key!r}")
        gold = self._gold_majors()
        fresh = self._fresh_replica()
        reports: list[MetricsReport] = []
        if key == "label":
            for event in self.events:
                fresh._replay_one(event)
                if event.kind in ("assign_label", "relabel") and fresh.classifier:
                    reports.append(fresh._evaluate_vs(gold, key=len(fresh.buffer)))
            return reports
        if not self.events:
            return []
        anchor = self.events[0].wall_time
        total_minutes = int(
            (self.events[-1].wall_time - anchor).total_seconds() // 60
        )
        pending = list(self.events)
        for minute in range(1, total_minutes + 1):
            boundary = anchor + timedelta(minutes=minute)
            while pending and pending[0].wall_time <= boundary:
                fresh._replay_one(pending.pop(0))
            if fresh.classifier:
                reports.append(fresh._evaluate_vs(gold, key=minute))
        return reports

    def _evaluate_vs(self, gold: dict[str, str], key) -> MetricsReport:
        pred = dict(zip(self.corpus.ids, self.classifier.predict_all(self.features)))
        return evaluate_session(pred, gold, key=key)

    # --- replay ----------------------------------------------------------------------

    def _fresh_replica(self) -> "AnnotationSession":
        return AnnotationSession(
            corpus=self.corpus,
            vocab=self.vocab,
            tfidf=self.tfidf,
            bow=self.bow,
            config=self.config,
            topic_model=self._initial_topic_model,
            slda_state=self._initial_slda_state,
            clock=self.clock,
        )

    def _replay_one(self, event: AnnotationEvent) -> None:
        if event.kind == "create_label":
            self.label_set.add(event.label)
            self.events.append(event)
        elif event.kind in ("assign_label", "relabel"):
            self.events.append(event)
            self._apply_assignment(event)
        elif event.kind == "skip":
            self.events.append(event)
            self._apply_skip(event)
        else:
            raise EventLogError(f"unknown event kind {event.kind!r} at seq {event.seq}")

    @classmethod
    def replay(
        cls,
        corpus: Corpus,
        vocab: Vocabulary,
        tfidf: sp.csr_matrix,
        bow: sp.csr_matrix,
        config: SessionConfig,
        events: Iterable[AnnotationEvent],
        topic_model: tm.TopicModel | None = None,
        slda_state: tm.SldaState | None = None,
    ) -> "AnnotationSession":
        """Deterministically reconstruct a session from its event log."""
        events = list(events)
        for i, event in enumerate(events, start=1):
            if event.seq != i:
                raise EventLogError(f"event log gap: expected seq {i}, got {event.seq}")
        session = cls(
            corpus=corpus,
            vocab=vocab,
            tfidf=tfidf,
            bow=bow,
            config=config,
            topic_model=topic_model,
            slda_state=slda_state,
        )
        for event in events:
            session._replay_one(event)
        return session

    def event_log_lines(self) -> list[str]:
        return [e.to_json_line() for e in self.events]


def load_event_log(lines: Iterable[str]) -> list[AnnotationEvent]:
    """Parse and validate a JSONL event log (gapless seq from 1)."""
    events = [AnnotationEvent.from_json_line(line) for line in lines if line.strip()]
    for i, event in enumerate(events, start=1):
        if event.seq != i:
            raise EventLogError(f"event log gap: expected seq {i}, got {event.seq}")
        if event.kind not in EVENT_KINDS:
            raise EventLogError(f"unknown event kind {event.kind!r} at seq {event.seq}")
    return events
