"""HTTP JSON API over annotation sessions.

One writer lock per session serializes mutations; reads run lock-free on
the current snapshot. Every appended event is mirrored to an append-only
JSONL file (when a data directory is configured) so a restarted service
can rebuild sessions by replay.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from . import topic_models as tm
from .corpus import Corpus, Vocabulary
from .metrics import MetricsError
from .session import (
    AlreadyLabeledError,
    AnnotationSession,
    SessionConfig,
    SessionError,
    UnknownDocumentError,
    load_event_log,
)

logger = logging.getLogger("annotopic.service")


@dataclass
class CorpusBundle:
    """A featurized corpus plus the topic models available to sessions."""

    corpus: Corpus
    vocab: Vocabulary
    tfidf: object
    bow: object
    models: dict[str, tm.TopicModel] = field(default_factory=dict)
    slda_states: dict[str, tm.SldaState] = field(default_factory=dict)

    def model_for(self, condition: str) -> tm.TopicModel | None:
        if condition == "none":
            return None
        model = self.models.get(condition)
        if model is None:
            raise SessionError(f"no topic model registered for condition {condition!r}")
        return model

    def slda_state_for(self, condition: str) -> tm.SldaState | None:
        if condition != "slda":
            return None
        state = self.slda_states.get("slda")
        if state is None:
            raise SessionError("no supervised sampler state registered")
        return state


class ManagedSession:
    """A session plus its writer lock and retrain bookkeeping."""

    def __init__(
        self,
        session: AnnotationSession,
        corpus_id: str,
        background_retrain: bool = False,
    ):
        self.session = session
        self.corpus_id = corpus_id
        self.lock = threading.Lock()
        self._retrain_flags = threading.Lock()
        self._retrain_running = False
        self._retrain_pending = False
        if background_retrain:
            session.retrain_runner = self._schedule_retrain

    # Deferred supervised retraining: train on a cloned state off the writer,
    # install under the lock, coalesce triggers that land mid-training.
    def _schedule_retrain(self, session: AnnotationSession) -> None:
        with self._retrain_flags:
            if self._retrain_running:
                self._retrain_pending = True
                return
            self._retrain_running = True
        state = session.slda_state.clone()
        labels_per_doc = session.surrogate_labels()
        label_names = session.label_set.labels
        refresh = session.config.refresh_sweeps
        terms = session.vocab.terms

        def work():
            model, new_state = tm.update_slda_responses(
                state, labels_per_doc, label_names, refresh_sweeps=refresh, terms=terms
            )
            with self.lock:
                session.install_retrain_result(model, new_state)
            rerun = False
            with self._retrain_flags:
                self._retrain_running = False
                if self._retrain_pending:
                    self._retrain_pending = False
                    rerun = True
            if rerun:
                with self.lock:
                    self._schedule_retrain(session)

        threading.Thread(target=work, daemon=True).start()

    def wait_for_retrain(self, timeout: float = 60.0) -> None:
        """Test hook: block until no retrain is running or pending."""
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._retrain_flags:
                if not self._retrain_running and not self._retrain_pending:
                    return
            time.sleep(0.01)
        raise TimeoutError("retrain did not settle in time")


class SessionRegistry:
    """Corpora, models, and live sessions behind the HTTP API."""

    def __init__(self, data_dir: str | Path | None = None, background_retrain: bool = False):
        self.corpora: dict[str, CorpusBundle] = {}
        self.sessions: dict[str, ManagedSession] = {}
        self.data_dir = Path(data_dir) if data_dir else None
        self.background_retrain = background_retrain
        self._create_lock = threading.Lock()

    def register_corpus(self, corpus_id: str, bundle: CorpusBundle) -> None:
        self.corpora[corpus_id] = bundle

    def _event_log_path(self, session_id: str) -> Path | None:
        if self.data_dir is None:
            return None
        return self.data_dir / f"{session_id}.events.jsonl"

    def _meta_path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.meta.json"

    def create_session(self, corpus_id: str, config: SessionConfig) -> str:
        bundle = self.corpora.get(corpus_id)
        if bundle is None:
            raise KeyError(f"unknown corpus {corpus_id!r}")
        session_id = uuid.uuid4().hex[:12]
        sink = None
        log_path = self._event_log_path(session_id)
        if log_path is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self._meta_path(session_id).write_text(
                json.dumps(
                    {
                        "corpus_id": corpus_id,
                        "condition": config.condition,
                        "seed": config.seed,
                        "retrain_every": config.retrain_every,
                        "refresh_sweeps": config.refresh_sweeps,
                    }
                )
                + "\n",
                "utf-8",
            )
            fh = log_path.open("a", encoding="utf-8")

            def sink(event, _fh=fh, _sid=session_id):
                _fh.write(event.to_json_line() + "\n")
                _fh.flush()
                logger.info("session %s event %d %s", _sid, event.seq, event.kind)

        session = AnnotationSession(
            bundle.corpus,
            bundle.vocab,
            bundle.tfidf,
            bundle.bow,
            config,
            topic_model=bundle.model_for(config.condition),
            slda_state=bundle.slda_state_for(config.condition),
            event_sink=sink,
        )
        self.sessions[session_id] = ManagedSession(
            session, corpus_id, background_retrain=self.background_retrain
        )
        return session_id

    def restore_sessions(self) -> list[str]:
        """Rebuild persisted sessions by replaying their event logs."""
        if self.data_dir is None or not self.data_dir.exists():
            return []
        restored = []
        for meta_path in sorted(self.data_dir.glob("*.meta.json")):
            session_id = meta_path.name.removesuffix(".meta.json")
            meta = json.loads(meta_path.read_text("utf-8"))
            bundle = self.corpora.get(meta["corpus_id"])
            if bundle is None:
                continue
            config = SessionConfig(
                condition=meta["condition"],
                seed=meta["seed"],
                retrain_every=meta.get("retrain_every", 50),
                refresh_sweeps=meta.get("refresh_sweeps", tm.DEFAULT_REFRESH_SWEEPS),
            )
            log_path = self._event_log_path(session_id)
            events = []
            if log_path.exists():
                events = load_event_log(log_path.read_text("utf-8").splitlines())
            session = AnnotationSession.replay(
                bundle.corpus,
                bundle.vocab,
                bundle.tfidf,
                bundle.bow,
                config,
                events,
                topic_model=bundle.model_for(config.condition),
                slda_state=bundle.slda_state_for(config.condition),
            )
            fh = log_path.open("a", encoding="utf-8")

            def sink(event, _fh=fh, _sid=session_id):
                _fh.write(event.to_json_line() + "\n")
                _fh.flush()
                logger.info("session %s event %d %s", _sid, event.seq, event.kind)

            session.event_sink = sink
            self.sessions[session_id] = ManagedSession(
                session, meta["corpus_id"], background_retrain=self.background_retrain
            )
            restored.append(session_id)
        return restored

    def get(self, session_id: str) -> ManagedSession:
        managed = self.sessions.get(session_id)
        if managed is None:
            raise KeyError(f"unknown session {session_id!r}")
        return managed


class CreateSessionRequest(BaseModel):
    condition: str
    corpus_id: str
    config: dict = {}


class LabelRequest(BaseModel):
    doc_id: str
    label: str


class SkipRequest(BaseModel):
    doc_id: str


def create_app(registry: SessionRegistry, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="annotopic", version="0.1.0")

    def managed_or_404(session_id: str) -> ManagedSession:
        try:
            return registry.get(session_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(body: CreateSessionRequest):
        allowed = {"seed", "retrain_every", "refresh_sweeps", "suggestions_top_n"}
        unknown = set(body.config) - allowed
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown config keys: {sorted(unknown)}")
        try:
            config = SessionConfig(condition=body.condition, **body.config)
            session_id = registry.create_session(body.corpus_id, config)
        except (SessionError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}/overview")
    def overview(session_id: str):
        return managed_or_404(session_id).session.get_overview()

    @app.get("/sessions/{session_id}/documents/{doc_id}")
    def document_detail(session_id: str, doc_id: str):
        try:
            return managed_or_404(session_id).session.get_document_detail(doc_id)
        except UnknownDocumentError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/sessions/{session_id}/labels")
    def submit_label(session_id: str, body: LabelRequest):
        managed = managed_or_404(session_id)
        with managed.lock:
            try:
                return managed.session.submit_label(body.doc_id, body.label)
            except UnknownDocumentError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            except SessionError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/sessions/{session_id}/skip")
    def skip_document(session_id: str, body: SkipRequest):
        managed = managed_or_404(session_id)
        with managed.lock:
            try:
                return managed.session.skip_document(body.doc_id)
            except UnknownDocumentError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            except (AlreadyLabeledError, SessionError) as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str, key: str = "minute"):
        managed = managed_or_404(session_id)
        try:
            reports = managed.session.metrics_timeline(key=key)
        except (SessionError, MetricsError, ValueError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {
            "timeline": [
                {"key": r.key, "purity": r.purity, "ari": r.ari, "anmi": r.anmi}
                for r in reports
            ]
        }

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, offset: int = 0, limit: int = 100):
        session = managed_or_404(session_id).session
        page = session.events[offset : offset + limit]
        return {
            "total": len(session.events),
            "offset": offset,
            "events": [json.loads(e.to_json_line()) for e in page],
        }

    if static_dir is not None and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
