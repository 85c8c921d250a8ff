"""Command-line entry point wiring every pipeline stage to a subcommand."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import catalog as catalog_mod
from . import classifier as classifier_mod
from . import corpus as corpus_mod
from . import encoder as encoder_mod
from . import evaluation
from . import ingestion
from . import pipeline
from . import textprep
from .stores import append_records, read_records
from .taxonomy import Taxonomy, TaxonomyError, default_taxonomy, load_taxonomy

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3

_CONFIG_ERRORS = (
    pipeline.ConfigError,
    ingestion.SourceConfigError,
    TaxonomyError,
    corpus_mod.CorpusSpecError,
    FileNotFoundError,
)


def _taxonomy_arg(value: str | None) -> Taxonomy:
    return load_taxonomy(value) if value else default_taxonomy()


def _read_clean(path: str) -> list[textprep.CleanEvent]:
    return [textprep.CleanEvent.from_record(r) for r in read_records(path)]


def cmd_ingest(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    descriptors = ingestion.load_sources(args.sources, taxonomy)
    clock = None
    if args.fixed_clock:
        start = textprep.parse_timestamp(args.fixed_clock)
        if start is None:
            raise pipeline.ConfigError(f"bad --fixed-clock value {args.fixed_clock!r}")
        clock = ingestion.RunClock(start=start)
    results = ingestion.fetch_sources(descriptors, parallel=args.parallel, clock=clock)
    events = []
    for result in results:
        if result.error:
            print(f"source={result.source_id} status=failed error={result.error}")
        else:
            events.extend(result.events)
            print(f"source={result.source_id} status=ok events={len(result.events)} "
                  f"skipped_no_title={result.skipped_no_title}")
    deduped = ingestion.dedupe(events)
    written = ingestion.append_raw(args.out, deduped)
    print(f"stage=ingest status=ok written={written} deduped={len(events) - len(deduped)}")
    return EXIT_OK


def cmd_clean(args) -> int:
    hints = {}
    if args.sources:
        for desc in ingestion.load_sources(args.sources):
            if desc.locale_hint:
                hints[desc.source_id] = desc.locale_hint
    raw_events = ingestion.read_raw(args.infile)
    clean_events = [
        textprep.clean_event(r, max_chars=args.max_chars, language=hints.get(r.source_id))
        for r in raw_events
    ]
    written = append_records(args.out, (e.to_record() for e in clean_events))
    print(f"stage=clean status=ok read={len(raw_events)} written={written}")
    return EXIT_OK


def cmd_vocab(args) -> int:
    events = _read_clean(args.infile)
    vocab = textprep.build_vocab([e.text for e in events], max_size=args.size,
                                 min_freq=args.min_freq)
    vocab.save(args.out)
    print(f"stage=vocab status=ok size={vocab.size}")
    return EXIT_OK


def cmd_encode(args) -> int:
    weights = encoder_mod.load_weights(args.model)
    vocab = textprep.Vocabulary.load(args.vocab)
    events = _read_clean(args.infile)
    records = []
    for event in events:
        seq = textprep.tokenize(event.text, vocab, weights.config.max_len)
        vector = encoder_mod.encode(seq, weights)
        records.append({"text": event.text, "label": event.label,
                        "vector": [float(v) for v in vector]})
    append_records(args.out, records)
    print(f"stage=encode status=ok events={len(records)} dim={weights.config.model_dim}")
    return EXIT_OK


def _featurizer_from_args(args) -> classifier_mod.FeaturizerConfig:
    if args.featurizer.endswith(".json"):
        data = json.loads(Path(args.featurizer).read_text(encoding="utf-8"))
        return classifier_mod.FeaturizerConfig.from_dict(data)
    if args.featurizer == "hashed-ngram":
        return classifier_mod.FeaturizerConfig(
            kind="hashed-ngram", num_buckets=args.buckets, hash_seed=args.hash_seed
        )
    if args.featurizer == "encoder-cls":
        if not args.encoder_weights or not args.vocab:
            raise pipeline.ConfigError("encoder-cls needs --encoder-weights and --vocab")
        return classifier_mod.FeaturizerConfig(
            kind="encoder-cls", weights_path=args.encoder_weights, vocab_path=args.vocab
        )
    raise pipeline.ConfigError(f"unknown featurizer {args.featurizer!r}")


def cmd_train(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    events = [e for e in _read_clean(args.infile) if e.label is not None]
    if not events:
        raise pipeline.ConfigError("no labeled events to train on")
    if args.class_weights in ("auto", "none"):
        class_weights = args.class_weights
    else:
        raw = json.loads(Path(args.class_weights).read_text(encoding="utf-8"))
        class_weights = {int(k): float(v) for k, v in raw.items()}
    featurizer_cfg = _featurizer_from_args(args)
    featurizer = classifier_mod.build_featurizer(featurizer_cfg)
    data = [
        (featurizer.transform(e.text), taxonomy.first_level_of(e.label)) for e in events
    ]
    classes = tuple(n.id for n in taxonomy.first_level_nodes())
    hyper = classifier_mod.TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
        l2=args.l2, class_weights=class_weights, seed=args.seed,
    )
    model = classifier_mod.train(data, classes, hyper, featurizer_cfg)
    classifier_mod.save_model(args.out, model)
    print(f"stage=train status=ok examples={len(data)} "
          f"final_loss={model.meta.final_loss:.6f}")
    return EXIT_OK


def cmd_classify(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    model = classifier_mod.load_model(args.model)
    sources = ingestion.load_sources(args.sources, taxonomy) if args.sources else []
    cascade = classifier_mod.CascadeClassifier(sources, model, taxonomy)
    events = _read_clean(args.infile)
    predictions = [cascade.classify(e) for e in events]
    append_records(args.out, (p.to_record() for p in predictions))
    print(f"stage=classify status=ok events={len(predictions)} "
          f"model_calls={cascade.model_calls}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    predictions = [classifier_mod.Prediction.from_record(r) for r in read_records(args.pred)]
    pairs = evaluation.rolled_up_pairs(predictions, taxonomy)
    classes = tuple(n.id for n in taxonomy.first_level_nodes())
    if pairs:
        matrix = evaluation.confusion(pairs, classes)
        report = evaluation.build_report(matrix)
    else:
        matrix = None
        report = evaluation.EvalReport([], 0.0, evaluation.Averages(0, 0, 0),
                                       evaluation.Averages(0, 0, 0), 0)
    text = evaluation.render_report(report, taxonomy)
    Path(args.out).write_text(text, encoding="utf-8")
    if matrix is not None and args.confusion:
        Path(args.confusion).write_text(
            evaluation.confusion_csv(matrix, taxonomy), encoding="utf-8")
    if matrix is not None and args.normalized_confusion:
        Path(args.normalized_confusion).write_text(
            evaluation.confusion_csv(matrix, taxonomy, normalized=True), encoding="utf-8")
    accuracy = f"{report.accuracy:.4f}" if pairs else "n/a"
    print(f"stage=evaluate status=ok evaluated={len(pairs)} accuracy={accuracy}")
    return EXIT_OK


def cmd_catalog_build(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    events = _read_clean(args.events)
    predictions = [classifier_mod.Prediction.from_record(r) for r in read_records(args.pred)]
    built = catalog_mod.build_catalog(events, predictions, taxonomy)
    Path(args.out).write_bytes(catalog_mod.export_catalog(built, "jsonl"))
    print(f"stage=catalog-build status=ok entries={len(built)}")
    return EXIT_OK


def _parse_category_set(taxonomy: Taxonomy, raw: str | None):
    if raw is None:
        return None
    return frozenset(taxonomy.resolve(part.strip()).id for part in raw.split(",") if part.strip())


def cmd_catalog_filter(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    built = catalog_mod.import_catalog(Path(args.infile).read_bytes(), taxonomy, "jsonl")
    bbox = None
    if args.bbox:
        parts = [float(p) for p in args.bbox.split(",")]
        if len(parts) != 4:
            raise pipeline.ConfigError("--bbox expects lat_min,lat_max,lon_min,lon_max")
        bbox = tuple(parts)
    query = catalog_mod.CatalogQuery(
        include_categories=_parse_category_set(taxonomy, args.include),
        exclude_categories=_parse_category_set(taxonomy, args.exclude),
        city=args.city,
        bbox=bbox,
        date_from=textprep.parse_timestamp(args.date_from),
        date_to=textprep.parse_timestamp(args.date_to),
    )
    result = catalog_mod.filter_catalog(built, query)
    Path(args.out).write_bytes(catalog_mod.export_catalog(result, "jsonl"))
    print(f"stage=catalog-filter status=ok kept={len(result)} of={len(built)}")
    return EXIT_OK


def cmd_catalog_export(args) -> int:
    taxonomy = _taxonomy_arg(args.taxonomy)
    built = catalog_mod.import_catalog(Path(args.infile).read_bytes(), taxonomy, "jsonl")
    Path(args.out).write_bytes(catalog_mod.export_catalog(built, args.format))
    print(f"stage=catalog-export status=ok entries={len(built)} format={args.format}")
    return EXIT_OK


def cmd_generate_corpus(args) -> int:
    if args.spec:
        spec = corpus_mod.load_spec(args.spec)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    else:
        spec = corpus_mod.default_spec(seed=args.seed)
    events = corpus_mod.generate_corpus(spec)
    written = ingestion.append_raw(args.out, events)
    print(f"stage=generate-corpus status=ok written={written}")
    return EXIT_OK


def cmd_demo(args) -> int:
    _, summaries = pipeline.demo(args.workdir, seed=args.seed)
    for summary in summaries:
        print(summary.line())
    return EXIT_OK


def cmd_run_all(args) -> int:
    config = pipeline.load_config(args.config)
    stages = args.stages.split(",") if args.stages else None
    summaries = pipeline.run_all(config, stages=stages)
    for summary in summaries:
        print(summary.line())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventcat",
        description="Normalize heterogeneous event listings into a filterable catalog.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="fetch configured sources into the raw store")
    p.add_argument("--sources", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--taxonomy")
    p.add_argument("--fixed-clock", help="ISO timestamp for reproducible fetched_at values")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("clean", help="normalize raw events into the clean store")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sources", help="sources file for per-source locale hints")
    p.add_argument("--max-chars", type=int, default=textprep.DEFAULT_MAX_CHARS)
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("vocab", help="build the tokenizer vocabulary")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("encode", help="write encoder sentence vectors for a clean store")
    p.add_argument("--model", required=True, help="encoder weight file")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the classification head")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--featurizer", default="hashed-ngram",
                   help="hashed-ngram, encoder-cls, or a JSON config file")
    p.add_argument("--buckets", type=int, default=4096)
    p.add_argument("--hash-seed", type=int, default=0)
    p.add_argument("--encoder-weights")
    p.add_argument("--vocab")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-weights", default="auto",
                   help="auto, none, or a JSON file mapping class id to weight")
    p.add_argument("--taxonomy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="run the cascade over a clean store")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--sources")
    p.add_argument("--out", required=True)
    p.add_argument("--taxonomy")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="score predictions and render the report")
    p.add_argument("--pred", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--out", required=True)
    p.add_argument("--confusion")
    p.add_argument("--normalized-confusion")
    p.set_defaults(func=cmd_evaluate)

    cat = sub.add_parser("catalog", help="build, filter or export a catalog")
    cat_sub = cat.add_subparsers(dest="catalog_command", required=True)

    p = cat_sub.add_parser("build")
    p.add_argument("--events", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--taxonomy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_catalog_build)

    p = cat_sub.add_parser("filter")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--include", help="comma-separated category names or ids")
    p.add_argument("--exclude", help="comma-separated category names or ids")
    p.add_argument("--city")
    p.add_argument("--from", dest="date_from")
    p.add_argument("--to", dest="date_to")
    p.add_argument("--bbox", help="lat_min,lat_max,lon_min,lon_max")
    p.add_argument("--taxonomy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_catalog_filter)

    p = cat_sub.add_parser("export")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--taxonomy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_catalog_export)

    p = sub.add_parser("generate-corpus", help="write a synthetic labeled raw store")
    p.add_argument("--spec", help="corpus spec JSON (defaults to the bundled spec)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_corpus)

    p = sub.add_parser("demo", help="end-to-end run on the bundled synthetic corpus")
    p.add_argument("--workdir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("run-all", help="run pipeline stages from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", help="comma-separated subset of stages to run")
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except pipeline.StageFailure as exc:
        print(f"stage={exc.stage} status=failed error={exc.cause}", file=sys.stderr)
        return EXIT_STAGE
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # operational failure inside a stage command
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
