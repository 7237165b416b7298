"""Command-line entry points.

Subcommands: prepare (featurize a corpus), train (lda/slda), import
(external topic matrices), simulate (scripted-annotator runs), eval
(cluster metrics between two label files), serve (HTTP API + UI).

Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime error.
Every artifact-producing command writes a manifest with a config hash so
reruns are verifiable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import __version__
from . import topic_models as tm
from .corpus import (
    CorpusError,
    VocabularyError,
    bow_counts,
    build_vocabulary,
    default_stopwords,
    export_vocabulary,
    load_corpus,
    load_stopwords,
    load_vocabulary,
    save_corpus,
    tfidf_features,
)
from .metrics import MetricsError, coherence_report, evaluate_session, save_coherence_report
from .session import EventLogError, SessionError
from .simulation import (
    SimulationConfig,
    SimulationError,
    export_curves,
    run_simulation,
)

DATA_ERRORS = (
    CorpusError,
    VocabularyError,
    tm.TopicModelError,
    MetricsError,
    SimulationError,
    EventLogError,
    SessionError,
    FileNotFoundError,
)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def _write_manifest(out_dir: Path, name: str, config: dict, artifacts: list[Path]) -> Path:
    manifest = {
        "tool": "annotopic",
        "version": __version__,
        "command": name,
        "config_hash": _config_hash(config),
        "config": config,
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    return path


# --- prepare -----------------------------------------------------------------

def cmd_prepare(args) -> int:
    out_dir = Path(args.out)
    existing = [p for p in ("corpus.jsonl", "vocabulary.json", "tfidf.npz", "bow.npz")
                if (out_dir / p).exists()]
    if existing and not args.force:
        print(
            f"error: {out_dir} already holds {existing}; use --force to overwrite",
            file=sys.stderr,
        )
        return 3
    corpus = load_corpus(args.corpus)
    if args.stopwords:
        stopword_path = Path(args.stopwords)
        if not stopword_path.exists():
            raise FileNotFoundError(f"stopword file not found: {stopword_path}")
        stopwords = load_stopwords(stopword_path)
    else:
        stopwords = default_stopwords()
    vocab = build_vocabulary(
        corpus,
        stopwords=stopwords,
        prune_threshold=args.prune_threshold,
        max_doc_fraction=args.max_doc_fraction,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out_dir / "corpus.jsonl")
    export_vocabulary(vocab, out_dir / "vocabulary.json")
    with open(out_dir / "tfidf.npz", "wb") as fh:
        sp.save_npz(fh, tfidf_features(corpus, vocab))
    with open(out_dir / "bow.npz", "wb") as fh:
        sp.save_npz(fh, bow_counts(corpus, vocab))
    config = {
        "corpus": str(args.corpus),
        "stopwords": str(args.stopwords) if args.stopwords else "builtin",
        "prune_threshold": args.prune_threshold,
        "max_doc_fraction": args.max_doc_fraction,
    }
    _write_manifest(
        out_dir,
        "prepare",
        config,
        [out_dir / n for n in ("corpus.jsonl", "vocabulary.json", "tfidf.npz", "bow.npz")],
    )
    print(f"prepared {len(corpus)} documents, vocabulary size {len(vocab)} -> {out_dir}")
    return 0


def load_prepared(prepared: str | Path):
    prepared = Path(prepared)
    for name in ("corpus.jsonl", "vocabulary.json", "tfidf.npz", "bow.npz"):
        if not (prepared / name).exists():
            raise FileNotFoundError(f"missing prepared artifact: {prepared / name}")
    corpus = load_corpus(prepared / "corpus.jsonl")
    vocab = load_vocabulary(prepared / "vocabulary.json")
    tfidf = sp.load_npz(prepared / "tfidf.npz")
    bow = sp.load_npz(prepared / "bow.npz")
    return corpus, vocab, tfidf, bow


# --- train ----------------------------------------------------------------------

def _load_responses(path: Path, corpus) -> tuple[np.ndarray, list[str]]:
    labels_by_doc: dict[str, str] = {}
    label_order: list[str] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["doc_id", "label"]:
            raise CorpusError(f"{path}: expected header doc_id,label")
        for parts in reader:
            if not parts:
                continue
            doc_id, label = parts
            if doc_id not in corpus:
                raise CorpusError(f"{path}: unknown document {doc_id!r}")
            labels_by_doc[doc_id] = label
            if label not in label_order:
                label_order.append(label)
    responses = np.zeros((len(corpus), len(label_order)), dtype=np.int8)
    for doc_id, label in labels_by_doc.items():
        responses[corpus.position(doc_id), label_order.index(label)] = 1
    return responses, label_order


def cmd_train(args) -> int:
    corpus, vocab, tfidf, bow = load_prepared(args.prepared)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    variant = args.model
    if args.model == "lda":
        model = tm.train_lda(
            bow, n_topics=args.k, iterations=args.iterations, seed=args.seed,
            terms=vocab.terms,
        )
    else:
        if args.responses:
            responses, label_order = _load_responses(Path(args.responses), corpus)
        else:
            responses, label_order = np.zeros((len(corpus), 0), dtype=np.int8), []
            variant = "slda-coldstart"
        model, state = tm.train_slda(
            bow, responses, label_order,
            n_topics=args.k, iterations=args.iterations, seed=args.seed,
            terms=vocab.terms,
        )
        # an slda snapshot trained before any responses exist is flagged so
        # downstream consumers know it is the plain-LDA-equivalent model
        model.source = variant
        tm.save_slda_state(state, out.with_suffix(".state.npz"))
    tm.save_model(model, out)
    report = coherence_report(model.keywords, corpus, top_n=10)
    save_coherence_report(report, out.with_suffix(".coherence.json"))
    config = {
        "model": args.model,
        "variant": variant,
        "k": args.k,
        "iterations": args.iterations,
        "seed": args.seed,
        "prepared": str(args.prepared),
        "responses": str(args.responses) if args.responses else None,
    }
    artifacts = [out, out.with_suffix(".coherence.json")]
    if args.model == "slda":
        artifacts.append(out.with_suffix(".state.npz"))
    _write_manifest(out.parent, "train", config, artifacts)
    mean_npmi = float(np.mean([t["npmi"] for t in report]))
    print(f"trained {variant} K={args.k} iterations={args.iterations} "
          f"mean NPMI {mean_npmi:.4f} -> {out}")
    return 0


def cmd_import(args) -> int:
    expected_ids = None
    if args.prepared:
        corpus, _, _, _ = load_prepared(args.prepared)
        expected_ids = list(corpus.ids)
    model = tm.import_external_topics(args.theta, args.keywords, expected_ids)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tm.save_model(model, out)
    config = {
        "theta": str(args.theta),
        "keywords": str(args.keywords),
        "prepared": str(args.prepared) if args.prepared else None,
    }
    _write_manifest(out.parent, "import", config, [out])
    print(f"imported topic matrix K={model.n_topics} over {model.n_docs} documents -> {out}")
    return 0


# --- simulate ----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.config:
        config = SimulationConfig.from_json(args.config)
    else:
        config = SimulationConfig(condition=args.condition or "none")
    overrides = {}
    if args.condition is not None:
        overrides["condition"] = args.condition
    if args.runs is not None:
        overrides["runs"] = args.runs
    if args.docs is not None:
        overrides["docs_to_label"] = args.docs
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.retrain_every is not None:
        overrides["retrain_every"] = args.retrain_every
    if overrides:
        config = SimulationConfig(**{**config.__dict__, **overrides})
    corpus, vocab, tfidf, bow = load_prepared(args.prepared)
    model = tm.load_model(args.model) if args.model else None
    state = tm.load_slda_state(args.state) if args.state else None
    if config.condition != "none" and model is None:
        raise SessionError(f"condition {config.condition!r} needs --model")
    if config.condition == "slda" and state is None:
        raise SessionError("condition 'slda' needs --state")
    curves = run_simulation(
        corpus, vocab, tfidf, bow, config, topic_model=model, slda_state=state
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_curves(curves, out)
    config_dict = dict(config.__dict__)
    _write_manifest(out.parent, "simulate", config_dict, [out])
    finals = curves.final_medians()
    print(
        f"final medians: purity={finals['purity']:.6f} "
        f"ari={finals['ari']:.6f} anmi={finals['anmi']:.6f}"
    )
    return 0


# --- eval --------------------------------------------------------------------------

def _load_label_file(path: Path) -> dict[str, str]:
    labels = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["doc_id", "label"]:
            raise CorpusError(f"{path}: expected header doc_id,label")
        for parts in reader:
            if parts:
                labels[parts[0]] = parts[1]
    if not labels:
        raise CorpusError(f"{path}: no rows")
    return labels


def cmd_eval(args) -> int:
    pred = _load_label_file(Path(args.pred))
    gold = _load_label_file(Path(args.gold))
    if set(pred) != set(gold):
        raise MetricsError("prediction and gold files cover different documents")
    report = evaluate_session(pred, gold)
    print(json.dumps({"purity": report.purity, "ari": report.ari, "anmi": report.anmi}))
    return 0


# --- serve --------------------------------------------------------------------------

def cmd_serve(args) -> int:
    import logging

    import uvicorn

    from .service import CorpusBundle, SessionRegistry, create_app

    logging.basicConfig(level=logging.INFO, format="%(levelname)s:     %(message)s")

    corpus, vocab, tfidf, bow = load_prepared(args.prepared)
    models = {}
    slda_states = {}
    if args.model:
        model = tm.load_model(args.model)
        condition = args.condition
        models[condition] = model
        if condition == "slda":
            if not args.state:
                raise SessionError("condition 'slda' needs --state")
            slda_states["slda"] = tm.load_slda_state(args.state)
    registry = SessionRegistry(
        data_dir=args.data_dir, background_retrain=args.background_retrain
    )
    registry.register_corpus(args.corpus_id, CorpusBundle(
        corpus=corpus, vocab=vocab, tfidf=tfidf, bow=bow,
        models=models, slda_states=slda_states,
    ))
    restored = registry.restore_sessions()
    if restored:
        print(f"restored {len(restored)} persisted sessions")
    app = create_app(registry, static_dir=args.static)
    host, _, port = args.addr.partition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="info")
    return 0


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annotopic",
        description="Topic-model-assisted active learning for document annotation",
    )
    parser.add_argument("--version", action="version", version=f"annotopic {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="tokenize, prune, and featurize a corpus")
    p.add_argument("--corpus", required=True, help="JSONL corpus file")
    p.add_argument("--stopwords", help="stopword file (default: built-in list)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--prune-threshold", type=int, default=3,
                   help="minimum document frequency (default 3)")
    p.add_argument("--max-doc-fraction", type=float, default=0.5,
                   help="maximum share of documents a term may appear in")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a topic model on prepared artifacts")
    p.add_argument("--model", choices=["lda", "slda"], required=True)
    p.add_argument("--prepared", required=True, help="directory from `prepare`")
    p.add_argument("--k", type=int, default=tm.DEFAULT_K)
    p.add_argument("--iterations", type=int, default=tm.DEFAULT_ITERATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--responses", help="doc_id,label CSV of response labels (slda)")
    p.add_argument("--out", required=True, help="model snapshot path (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("import", help="import externally computed topic matrices")
    p.add_argument("--theta", required=True, help="doc_id,t0..tK-1 CSV")
    p.add_argument("--keywords", required=True, help="JSON array of keyword arrays")
    p.add_argument("--prepared", help="prepared dir for document id alignment")
    p.add_argument("--out", required=True, help="model snapshot path (.npz)")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("simulate", help="run the scripted-annotator experiment")
    p.add_argument("--prepared", required=True)
    p.add_argument("--config", help="JSON simulation config file")
    p.add_argument("--condition", choices=["none", "lda", "slda", "imported"])
    p.add_argument("--model", help="topic model snapshot (.npz)")
    p.add_argument("--state", help="supervised sampler state (.npz, slda only)")
    p.add_argument("--runs", type=int)
    p.add_argument("--docs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--retrain-every", type=int)
    p.add_argument("--out", required=True, help="metric curves CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="cluster metrics between two label files")
    p.add_argument("--pred", required=True, help="doc_id,label CSV")
    p.add_argument("--gold", required=True, help="doc_id,label CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the annotation HTTP API")
    p.add_argument("--prepared", required=True)
    p.add_argument("--condition", choices=["none", "lda", "slda", "imported"], default="none")
    p.add_argument("--model", help="topic model snapshot (.npz)")
    p.add_argument("--state", help="supervised sampler state (.npz, slda only)")
    p.add_argument("--corpus-id", default="default")
    p.add_argument("--addr", default="127.0.0.1:8000")
    p.add_argument("--data-dir", help="directory for event logs (enables persistence)")
    p.add_argument("--static", help="directory of built UI assets to serve at /")
    p.add_argument("--background-retrain", action="store_true",
                   help="run supervised retraining off the request path")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # runtime failures: port in use, BLAS errors, ...
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
