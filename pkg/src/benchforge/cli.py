"""`forge` command line: pipeline stages with shared config and seeding.

Stages: demo, ingest, index, synthesize, audit, probe, eval, serve,
aggregate, plus `pipeline` to run a csv of stages in dependency order.
Every stage writes a key<TAB>value report embedding the config hash and seed,
with matplotlib figures rendered next to it. Outputs are written to a
.partial path and renamed only on success. Exit codes: 0 ok, 1 stage
failure, 2 usage.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import annotate, audit, corpus, demo, evaluation, probes, reporting, retrieval, synthesis
from .config import ConfigError, PipelineConfig, load_config
from .dataio import atomic_output, iter_jsonl, read_instances, write_instances, write_jsonl

PIPELINE_ORDER = ("demo", "ingest", "index", "synthesize", "probe", "audit", "eval", "aggregate")


class StageError(RuntimeError):
    pass


def _report_path(out: str, explicit: str | None) -> str:
    return explicit or f"{out}.report.tsv"


def _write_report(path: str, cfg: PipelineConfig, rows) -> None:
    reporting.write_report(path, cfg.header_rows() + list(rows))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_demo(cfg: PipelineConfig) -> list[tuple[str, object]]:
    out = cfg.paths["input"]
    n_docs = int(cfg.paths.get("demo_docs", "2000"))
    n_topics = int(cfg.paths.get("demo_topics", "20"))
    source = cfg.paths.get("source", "wiki")
    fmt = cfg.paths.get("input_format", "jsonl")
    records = demo.demo_records(n_docs, cfg.global_seed, n_topics, source)
    if fmt == "stories":
        demo.write_records_stories(records, out)
    else:
        with atomic_output(out) as partial:
            demo.write_records_jsonl(records, partial)
    return [("records", len(records)), ("format", fmt), ("out", out)]


def stage_ingest(cfg: PipelineConfig) -> list[tuple[str, object]]:
    inp = cfg.paths.get("input")
    if not inp:
        raise StageError("ingest requires an input path")
    fmt = cfg.paths.get("input_format", "jsonl")
    source = cfg.paths.get("source", "wiki")
    out = cfg.paths.get("corpus", "corpus.jsonl")
    records = list(corpus.read_records(inp, fmt))
    docs, rep = corpus.ingest(records, source, cfg.global_seed, workers=cfg.workers)
    with atomic_output(out) as partial:
        corpus.write_documents(docs, partial)
    report = _report_path(out, cfg.paths.get("ingest_report"))
    rows = [
        ("records_read", rep.total_records),
        ("documents_emitted", rep.emitted),
        ("rejected_too_short", rep.rejected_short),
        ("mean_sentences", round(sum(rep.sentence_counts) / max(1, rep.emitted), 3)),
        ("mean_tokens", round(sum(rep.token_totals) / max(1, rep.emitted), 3)),
    ]
    _write_report(report, cfg, rows)
    if rep.sentence_counts:
        reporting.render_histogram(report, "sentences", rep.sentence_counts,
                                   "Sentences per document", "sentences",
                                   bins=[2.5 + i for i in range(7)])
        reporting.render_histogram(report, "tokens", rep.token_totals,
                                   "Tokens per document", "tokens")
    return rows


def stage_index(cfg: PipelineConfig) -> list[tuple[str, object]]:
    corpus_path = cfg.paths.get("corpus", "corpus.jsonl")
    out = cfg.paths.get("index", "index.jsonl")
    docs = corpus.read_documents(corpus_path)
    index = retrieval.build_index(docs, cfg.num_bins)
    with atomic_output(out) as partial:
        index.save(partial)
    report = _report_path(out, cfg.paths.get("index_report"))
    rows = [
        ("documents", index.doc_count),
        ("num_bins", index.num_bins),
        ("hash_seed", index.hash_seed),
        ("occupied_bins", len(index.bin_doc_freq)),
    ]
    _write_report(report, cfg, rows)
    if index.bin_doc_freq:
        reporting.render_histogram(report, "df", list(index.bin_doc_freq.values()),
                                   "Bin document frequencies", "document frequency")
    return rows


def _make_scorer(spec: str):
    if spec == "none":
        return None, "none", False
    if spec == "bootstrap":
        return None, "bootstrap", True
    if spec.startswith("adapter:"):
        endpoint = spec.split(":", 1)[1]
        return evaluation.AdapterScorer(evaluation.make_adapter(endpoint, [])), spec, False
    raise StageError(f"unknown scorer {spec!r}")


def stage_synthesize(cfg: PipelineConfig) -> list[tuple[str, object]]:
    corpus_path = cfg.paths.get("corpus", "corpus.jsonl")
    index_path = cfg.paths.get("index", "index.jsonl")
    out = cfg.paths.get("dataset", "dataset.jsonl")
    docs = corpus.read_documents(corpus_path)
    index = retrieval.RetrievalIndex.load(index_path)

    refs = None
    refs_path = cfg.paths.get("version_refs")
    if refs_path:
        refs = {d.id: d for d in corpus.read_documents(refs_path)}

    syn_cfg = synthesis.SynthesisConfig(
        seed=cfg.global_seed,
        similarity_cap=cfg.similarity_cap,
        top_k=cfg.top_k,
        easy_threshold=cfg.easy_threshold,
        test_fraction=cfg.test_fraction,
        strategy=cfg.paths.get("strategy", "document"),
        version_threshold=cfg.version_threshold,
        workers=cfg.workers,
    )
    scorer_spec = cfg.paths.get("scorer", "bootstrap")
    scorer, scorer_name, is_bootstrap = _make_scorer(scorer_spec)
    if is_bootstrap:
        instances, rep = synthesis.synthesize_with_bootstrap(docs, index, syn_cfg, refs)
    else:
        instances, rep = synthesis.synthesize_dataset(docs, index, scorer, syn_cfg, refs, scorer_name)

    with atomic_output(out) as partial:
        write_instances(instances, partial)
    report = _report_path(out, cfg.paths.get("synthesize_report"))
    _write_report(report, cfg, rep.rows())
    reporting.render_histogram(report, "sentences", [len(i.sentences) for i in instances],
                               "Sentences per instance", "sentences",
                               bins=[2.5 + i for i in range(7)])
    sims = [i.provenance.similarity_to_replaced for i in instances if i.incoherent]
    if sims:
        reporting.render_histogram(report, "similarity", sims,
                                   "Intruder-to-replaced similarity", "cosine",
                                   bins=[i / 20 for i in range(13)])
    reporting.render_bars(report, "labels",
                          ["coherent", "incoherent"],
                          [sum(not i.incoherent for i in instances), sum(i.incoherent for i in instances)],
                          "Label balance", "instances")
    return rep.rows()


def stage_audit(cfg: PipelineConfig) -> list[tuple[str, object]]:
    dataset = cfg.paths.get("dataset", "dataset.jsonl")
    report = cfg.paths.get("audit_report", f"{dataset}.audit.tsv")
    instances = read_instances(dataset)
    rep = audit.run_audit(
        instances,
        seed=cfg.global_seed,
        acc_margin=float(cfg.paths.get("audit_acc_margin", audit.DEFAULT_ACC_MARGIN)),
        f1_margin=float(cfg.paths.get("audit_f1_margin", audit.DEFAULT_F1_MARGIN)),
        num_bins=cfg.num_bins,
    )
    _write_report(report, cfg, rep.rows())
    reporting.render_grouped_bars(
        report, "scores", ["accuracy", "F1"],
        {"classifier": [rep.classifier_acc, rep.classifier_f1],
         "majority": [rep.majority_acc, rep.majority_f1]},
        "Standalone-sentence audit", "percent",
    )
    return rep.rows()


def stage_probe(cfg: PipelineConfig) -> list[tuple[str, object]]:
    dataset = cfg.paths.get("dataset", "dataset.jsonl")
    out = cfg.paths.get("probes_out", "probes.jsonl")
    phenomenon = cfg.paths.get("phenomenon", "all")
    target_n = int(cfg.paths.get("probe_n", "100"))
    instances = read_instances(dataset)

    wanted = list(probes.PHENOMENA) if phenomenon == "all" else [phenomenon]
    for name in wanted:
        if name not in probes.PHENOMENA:
            raise StageError(f"unknown phenomenon {name!r}")

    rows: list[tuple[str, object]] = [("dataset", dataset), ("target_n", target_n)]
    counts = []
    for name in wanted:
        suite = probes.build_probe_suite(instances, name, target_n, cfg.global_seed)
        path = out if len(wanted) == 1 else str(Path(out).with_name(f"{Path(out).stem}.{name}{Path(out).suffix}"))
        with atomic_output(path) as partial:
            write_instances(suite.probed_instances, partial)
        rows.append((f"{name}_emitted", len(suite.probes)))
        if suite.shortfall:
            rows.append((f"{name}_shortfall", suite.shortfall))
            print(f"warning: {name}: only {len(suite.probes)} applicable instances "
                  f"(requested {target_n})", file=sys.stderr)
        counts.append(len(suite.probes))
    report = _report_path(out, cfg.paths.get("probe_report"))
    _write_report(report, cfg, rows)
    reporting.render_bars(report, "applicable", wanted, counts,
                          "Probe instances emitted", "instances")
    return rows


def stage_eval(cfg: PipelineConfig) -> list[tuple[str, object]]:
    dataset = cfg.paths.get("dataset", "dataset.jsonl")
    adapter_spec = cfg.paths.get("adapter", "majority")
    mode = cfg.paths.get("eval_mode", "context")
    threshold = float(cfg.paths.get("eval_threshold", "0.5"))
    batch = int(cfg.paths.get("eval_batch", "64"))
    report = cfg.paths.get("eval_report", f"{dataset}.eval.tsv")

    instances = read_instances(dataset)
    adapter = evaluation.make_adapter(adapter_spec, instances)
    predictions = evaluation.run_adapter(instances, adapter, mode, threshold, batch)
    metrics = evaluation.evaluate(instances, predictions)
    rows = [("adapter", adapter_spec), ("mode", mode), ("threshold", threshold)]
    rows += metrics.rows()

    preds_out = cfg.paths.get("predictions_out")
    if preds_out:
        with atomic_output(preds_out) as partial:
            write_jsonl(
                (
                    {"instance_id": i, "candidate_index": idx, "prediction": p}
                    for i in sorted(predictions)
                    for idx, p in sorted(predictions[i].items())
                ),
                partial,
            )

    base_path = cfg.paths.get("base_dataset")
    if base_path:
        base_instances = read_instances(base_path)
        base_adapter = evaluation.make_adapter(adapter_spec, base_instances)
        base_predictions = evaluation.run_adapter(base_instances, base_adapter, mode, threshold, batch)
        delta = evaluation.delta_f1(base_instances, instances, base_predictions, predictions)
        rows += delta.rows()

    _write_report(report, cfg, rows)
    reporting.render_bars(
        report, "metrics",
        ["doc acc", "precision", "recall", "F1"],
        [100 * metrics.doc_accuracy, 100 * metrics.sentence_precision,
         100 * metrics.sentence_recall, 100 * metrics.sentence_f1],
        f"Evaluation ({adapter_spec}, {mode})", "percent",
    )
    return rows


def stage_aggregate(cfg: PipelineConfig) -> list[tuple[str, object]]:
    annotations_path = cfg.paths.get("annotations")
    if not annotations_path:
        raise StageError("aggregate requires an annotations export path")
    out = cfg.paths.get("labels_out", "labels.jsonl")
    rows_in = list(iter_jsonl(annotations_path))
    agg = annotate.aggregate_annotations(rows_in, min_agreement=cfg.min_agreement)
    with atomic_output(out) as partial:
        write_jsonl(
            (
                {
                    "document_id": l.document_id,
                    "majority_choice": l.majority_choice,
                    "agreement_count": l.agreement_count,
                    "retained": l.retained,
                }
                for l in agg["labels"]
            ),
            partial,
        )
    report = _report_path(out, cfg.paths.get("aggregate_report"))
    rows = [
        ("annotations", len(rows_in)),
        ("documents", len(agg["labels"])),
        ("retained_fraction", round(agg["retained_fraction"], 6)),
        ("under_annotated", len(agg["under_annotated"])),
        ("workers_scored", len(agg["worker_quality"])),
    ]
    _write_report(report, cfg, rows)
    reporting.render_histogram(
        report, "agreement",
        [l.agreement_count for l in agg["labels"]],
        "Modal agreement per document", "annotators agreeing",
        bins=[0.5 + i for i in range(6)],
    )
    return rows


def stage_serve(cfg: PipelineConfig) -> list[tuple[str, object]]:
    import uvicorn

    dataset = cfg.paths.get("dataset", "dataset.jsonl")
    controls_path = cfg.paths.get("controls")
    state_dir = cfg.paths.get("state", "annotation-state")
    if not controls_path:
        raise StageError("serve requires a controls path")
    instances = read_instances(dataset)
    test_instances = [i for i in instances if i.split == "test"]
    controls = read_instances(controls_path)
    store = annotate.AnnotationStore(state_dir)
    service = annotate.AnnotationService(
        test_instances, controls, store,
        seed=cfg.global_seed, min_agreement=cfg.min_agreement,
    )
    token = cfg.paths.get("export_token") or None
    app = annotate.create_app(service, export_token=token, ui_dir=cfg.paths.get("ui") or None)
    print(f"export token: {app.state.export_token}", file=sys.stderr)
    uvicorn.run(app, host=cfg.paths.get("host", "127.0.0.1"), port=int(cfg.paths.get("port", "8400")))
    return []


STAGES = {
    "demo": stage_demo,
    "ingest": stage_ingest,
    "index": stage_index,
    "synthesize": stage_synthesize,
    "audit": stage_audit,
    "probe": stage_probe,
    "eval": stage_eval,
    "aggregate": stage_aggregate,
    "serve": stage_serve,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="global 64-bit seed")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="generate a synthetic demo corpus")
    p.add_argument("--docs", type=int, default=2000)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--source", choices=("wiki", "news"), default="wiki")
    p.add_argument("--format", choices=("jsonl", "stories"), default="jsonl")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("ingest", help="segment and window raw records")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("jsonl", "stories"), default="jsonl")
    p.add_argument("--source", choices=("wiki", "news"), default="wiki")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_common(p)

    p = sub.add_parser("index", help="build the retrieval index")
    p.add_argument("--corpus", required=True)
    p.add_argument("--bins", type=int, default=24, help="log2 of the bin count")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_common(p)

    p = sub.add_parser("synthesize", help="generate the labeled dataset")
    p.add_argument("--corpus", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--scorer", default="bootstrap",
                   help="bootstrap, none, or adapter:<exec:cmd|http(s)://url>")
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--similarity-cap", type=float, default=synthesis.DEFAULT_SIMILARITY_CAP)
    p.add_argument("--top-k", type=int, default=synthesis.DEFAULT_TOP_K)
    p.add_argument("--easy-threshold", type=float, default=synthesis.DEFAULT_EASY_THRESHOLD)
    p.add_argument("--strategy", choices=synthesis.STRATEGIES, default="document")
    p.add_argument("--version-refs", help="paired snapshot documents (jsonl)")
    p.add_argument("--version-threshold", type=float, default=0.72)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_common(p)

    p = sub.add_parser("audit", help="standalone-sentence artefact audit")
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--acc-margin", type=float, default=audit.DEFAULT_ACC_MARGIN)
    p.add_argument("--f1-margin", type=float, default=audit.DEFAULT_F1_MARGIN)
    _add_common(p)

    p = sub.add_parser("probe", help="build linguistic-probe variants")
    p.add_argument("--dataset", required=True)
    p.add_argument("--phenomenon", default="all",
                   choices=probes.PHENOMENA + ("all",))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_common(p)

    p = sub.add_parser("eval", help="drive an adapter and score predictions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--adapter", required=True,
                   help="exec:<cmd>, http(s)://url, majority, oracle, random:<seed>")
    p.add_argument("--mode", choices=evaluation.MODES, default="context")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--base-dataset", help="unprobed dataset for delta-F1")
    p.add_argument("--predictions-out")
    p.add_argument("--report", required=True)
    _add_common(p)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--dataset", required=True)
    p.add_argument("--controls", required=True)
    p.add_argument("--port", type=int, default=8400)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--state", required=True)
    p.add_argument("--ui", help="directory of built client assets")
    p.add_argument("--export-token")
    p.add_argument("--min-agreement", type=int, default=annotate.DEFAULT_MIN_AGREEMENT)
    _add_common(p)

    p = sub.add_parser("aggregate", help="aggregate an annotation export")
    p.add_argument("--annotations", required=True)
    p.add_argument("--min-agreement", type=int, default=annotate.DEFAULT_MIN_AGREEMENT)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    _add_common(p)

    p = sub.add_parser("pipeline", help="run stages in dependency order")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", required=True, help="comma-separated stage names")
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig(global_seed=getattr(args, "seed", 0),
                         workers=getattr(args, "workers", 1))
    paths = cfg.paths
    cmd = args.command
    if cmd == "demo":
        paths.update(input=args.out, input_format=args.format, source=args.source,
                     demo_docs=str(args.docs), demo_topics=str(args.topics))
    elif cmd == "ingest":
        paths.update(input=args.input, input_format=args.format, source=args.source,
                     corpus=args.out)
        if args.report:
            paths["ingest_report"] = args.report
    elif cmd == "index":
        cfg.num_bins = 2 ** args.bins
        paths.update(corpus=args.corpus, index=args.out)
        if args.report:
            paths["index_report"] = args.report
    elif cmd == "synthesize":
        cfg.similarity_cap = args.similarity_cap
        cfg.top_k = args.top_k
        cfg.easy_threshold = args.easy_threshold
        cfg.test_fraction = args.test_frac
        cfg.version_threshold = args.version_threshold
        paths.update(corpus=args.corpus, index=args.index, dataset=args.out,
                     scorer=args.scorer, strategy=args.strategy)
        if args.version_refs:
            paths["version_refs"] = args.version_refs
        if args.report:
            paths["synthesize_report"] = args.report
    elif cmd == "audit":
        paths.update(dataset=args.dataset, audit_report=args.report,
                     audit_acc_margin=str(args.acc_margin),
                     audit_f1_margin=str(args.f1_margin))
    elif cmd == "probe":
        paths.update(dataset=args.dataset, probes_out=args.out,
                     phenomenon=args.phenomenon, probe_n=str(args.n))
        if args.report:
            paths["probe_report"] = args.report
    elif cmd == "eval":
        paths.update(dataset=args.dataset, adapter=args.adapter, eval_mode=args.mode,
                     eval_threshold=str(args.threshold), eval_batch=str(args.batch_size),
                     eval_report=args.report)
        if args.base_dataset:
            paths["base_dataset"] = args.base_dataset
        if args.predictions_out:
            paths["predictions_out"] = args.predictions_out
    elif cmd == "serve":
        cfg.min_agreement = args.min_agreement
        paths.update(dataset=args.dataset, controls=args.controls,
                     port=str(args.port), host=args.host, state=args.state)
        if args.ui:
            paths["ui"] = args.ui
        if args.export_token:
            paths["export_token"] = args.export_token
    elif cmd == "aggregate":
        cfg.min_agreement = args.min_agreement
        paths.update(annotations=args.annotations, labels_out=args.out)
        if args.report:
            paths["aggregate_report"] = args.report
    return cfg.validate()


def _run_pipeline(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"forge: {exc}", file=sys.stderr)
        return 2
    requested = [s.strip() for s in args.stages.split(",") if s.strip()]
    for name in requested:
        if name not in STAGES:
            parser.error(f"unknown stage {name!r} (choose from {', '.join(PIPELINE_ORDER)})")
        if name == "serve":
            parser.error("serve cannot run inside a pipeline; use `forge serve`")
    ordered = [s for s in PIPELINE_ORDER if s in requested]
    for name in ordered:
        try:
            STAGES[name](cfg)
        except Exception as exc:
            print(f"forge: stage {name} failed: {exc}", file=sys.stderr)
            return 1
        print(f"stage {name}: ok")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "pipeline":
        return _run_pipeline(args, parser)
    try:
        cfg = _config_from_args(args)
        STAGES[args.command](cfg)
    except ConfigError as exc:
        print(f"forge: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"forge: stage {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
