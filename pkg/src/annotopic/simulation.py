"""Scripted-annotator simulation over the session engine.

The scripted annotator labels whatever document the session recommends
with that document's gold sub label; cluster quality is then measured
against the gold major labels after every label, once the classifier
exists. Runs differ only by seed; aggregation takes the per-checkpoint
median across runs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import topic_models as tm
from .corpus import Corpus
from .metrics import evaluate_session
from .session import AnnotationSession, SessionConfig

METRIC_NAMES = ("purity", "ari", "anmi")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    condition: str
    docs_to_label: int = 400
    runs: int = 15
    seed: int = 0
    retrain_every: int = 50
    n_topics: int = tm.DEFAULT_K
    refresh_sweeps: int = tm.DEFAULT_REFRESH_SWEEPS

    @classmethod
    def from_json(cls, path: str | Path) -> "SimulationConfig":
        payload = json.loads(Path(path).read_text("utf-8"))
        return cls(**payload)


@dataclass
class RunCurve:
    """Metric values for one run, keyed by labeled-document count."""

    seed: int
    labeled_counts: list[int]
    values: dict[str, list[float]]  # metric name -> series

    def __len__(self) -> int:
        return len(self.labeled_counts)


@dataclass
class MetricsCurves:
    runs: list[RunCurve]
    aggregate: RunCurve  # seed field unused; medians across runs

    def final_medians(self) -> dict[str, float]:
        return {m: self.aggregate.values[m][-1] for m in METRIC_NAMES}


def aggregate_median(runs: Sequence[Sequence[float]]) -> list[float]:
    """Elementwise median across equal-length series."""
    lengths = {len(r) for r in runs}
    if len(lengths) > 1:
        raise SimulationError(f"ragged input: series lengths {sorted(lengths)}")
    if not runs or not runs[0]:
        return []
    return [float(np.median([r[i] for r in runs])) for i in range(len(runs[0]))]


def _simulate_one_run(
    corpus,
    vocab,
    tfidf,
    bow,
    config: SimulationConfig,
    run_seed: int,
    topic_model,
    slda_state,
) -> RunCurve:
    session_config = SessionConfig(
        condition=config.condition,
        seed=run_seed,
        retrain_every=config.retrain_every,
        refresh_sweeps=config.refresh_sweeps,
    )
    session = AnnotationSession(
        corpus,
        vocab,
        tfidf,
        bow,
        session_config,
        topic_model=topic_model,
        slda_state=slda_state.clone() if slda_state is not None else None,
    )
    gold = corpus.gold_major_map()
    counts: list[int] = []
    values: dict[str, list[float]] = {m: [] for m in METRIC_NAMES}
    for _ in range(config.docs_to_label):
        doc_id = session.recommended_doc
        if doc_id is None:
            break
        session.submit_label(doc_id, corpus.by_id(doc_id).gold_sub)
        if session.classifier is not None:
            pred = dict(
                zip(corpus.ids, session.classifier.predict_all(session.features))
            )
            report = evaluate_session(pred, gold, key=len(session.buffer))
            counts.append(len(session.buffer))
            values["purity"].append(report.purity)
            values["ari"].append(report.ari)
            values["anmi"].append(report.anmi)
    return RunCurve(seed=run_seed, labeled_counts=counts, values=values)


def run_simulation(
    corpus: Corpus,
    vocab,
    tfidf,
    bow,
    config: SimulationConfig,
    topic_model=None,
    slda_state=None,
) -> MetricsCurves:
    """Drive ``config.runs`` scripted sessions and aggregate their curves.

    Run r uses seed ``config.seed + r``. The aggregate covers the labeled
    counts every run reached (runs leave cold start at slightly different
    points, so the common range starts at the latest first checkpoint).
    """
    if not corpus.has_hierarchical_labels:
        raise SimulationError(
            "simulation needs gold major and sub labels on every document"
        )
    if config.docs_to_label > len(corpus):
        raise SimulationError(
            f"cannot label {config.docs_to_label} documents in a corpus of {len(corpus)}"
        )
    if config.runs < 1:
        raise SimulationError("need at least one run")
    runs = [
        _simulate_one_run(
            corpus, vocab, tfidf, bow, config, config.seed + r, topic_model, slda_state
        )
        for r in range(config.runs)
    ]
    start = max(r.labeled_counts[0] for r in runs if r.labeled_counts)
    end = min(r.labeled_counts[-1] for r in runs if r.labeled_counts)
    common = list(range(start, end + 1))
    aligned: dict[str, list[list[float]]] = {m: [] for m in METRIC_NAMES}
    for run in runs:
        index = {c: i for i, c in enumerate(run.labeled_counts)}
        for m in METRIC_NAMES:
            aligned[m].append([run.values[m][index[c]] for c in common])
    aggregate = RunCurve(
        seed=-1,
        labeled_counts=common,
        values={m: aggregate_median(aligned[m]) for m in METRIC_NAMES},
    )
    return MetricsCurves(runs=runs, aggregate=aggregate)


def export_curves(curves: MetricsCurves, path: str | Path) -> None:
    """CSV with one row per (run, checkpoint), aggregate rows run=median.

    The run column carries each run's seed, so the seeds used are part of
    the artifact.
    """
    lines = ["run,labeled_count,purity,ari,anmi"]
    for run in curves.runs:
        for i, count in enumerate(run.labeled_counts):
            lines.append(
                f"{run.seed},{count},"
                f"{run.values['purity'][i]!r},{run.values['ari'][i]!r},{run.values['anmi'][i]!r}"
            )
    agg = curves.aggregate
    for i, count in enumerate(agg.labeled_counts):
        lines.append(
            f"median,{count},"
            f"{agg.values['purity'][i]!r},{agg.values['ari'][i]!r},{agg.values['anmi'][i]!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def load_curves(path: str | Path) -> MetricsCurves:
    """Inverse of :func:`export_curves`."""
    lines = Path(path).read_text("utf-8").strip().splitlines()
    if not lines or lines[0] != "run,labeled_count,purity,ari,anmi":
        raise SimulationError(f"{path}: unexpected CSV header")
    by_run: dict[str, RunCurve] = {}
    order: list[str] = []
    for line in lines[1:]:
        run, count, purity, ari, anmi = line.split(",")
        if run not in by_run:
            by_run[run] = RunCurve(
                seed=-1 if run == "median" else int(run),
                labeled_counts=[],
                values={m: [] for m in METRIC_NAMES},
            )
            order.append(run)
        curve = by_run[run]
        curve.labeled_counts.append(int(count))
        curve.values["purity"].append(float(purity))
        curve.values["ari"].append(float(ari))
        curve.values["anmi"].append(float(anmi))
    if "median" not in by_run:
        raise SimulationError(f"{path}: no aggregate rows")
    return MetricsCurves(
        runs=[by_run[r] for r in order if r != "median"],
        aggregate=by_run["median"],
    )


def stratified_subsample(corpus: Corpus, n: int, seed: int = 0) -> Corpus:
    """Subsample preserving the gold-major label mix (largest remainder)."""
    if n > len(corpus):
        raise SimulationError(f"cannot sample {n} from {len(corpus)} documents")
    by_major: dict[str, list[int]] = {}
    for pos, doc in enumerate(corpus):
        if doc.gold_major is None:
            raise SimulationError("stratified subsampling needs gold major labels")
        by_major.setdefault(doc.gold_major, []).append(pos)
    majors = sorted(by_major)
    quotas = {}
    remainders = []
    total = len(corpus)
    assigned = 0
    for major in majors:
        exact = n * len(by_major[major]) / total
        quotas[major] = int(exact)
        assigned += int(exact)
        remainders.append((exact - int(exact), major))
    for _, major in sorted(remainders, reverse=True)[: n - assigned]:
        quotas[major] += 1
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for major in majors:
        positions = by_major[major]
        chosen = rng.choice(len(positions), size=quotas[major], replace=False)
        keep.extend(positions[i] for i in chosen)
    keep.sort()
    return Corpus(corpus[i] for i in keep)
