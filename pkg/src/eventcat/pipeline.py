"""Stage wiring: ingest, clean, features, split, train, classify, evaluate,
catalog — each stage talks to its neighbours only through files, so any
stage can be re-run in isolation and reproduces identical downstream bytes.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import catalog as catalog_mod
from . import classifier as classifier_mod
from . import corpus as corpus_mod
from . import encoder as encoder_mod
from . import evaluation
from . import ingestion
from . import textprep
from .stores import append_records, read_records
from .taxonomy import Taxonomy, default_taxonomy_text, load_taxonomy

log = logging.getLogger(__name__)

STAGES = ("ingest", "clean", "features", "split", "train", "classify", "evaluate", "catalog")

# Fixed ingestion epoch: fetched_at values must not depend on wall time or
# reruns of the same configuration would differ.
PIPELINE_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)

ENV_PREFIX = "EVENTCAT_PATH_"


class ConfigError(Exception):
    pass


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    taxonomy_path: Path
    raw_store: Path
    clean_store: Path
    train_store: Path
    test_store: Path
    vocab_path: Path
    weights_path: Path
    model_path: Path
    predictions_path: Path
    report_path: Path
    confusion_path: Path
    normalized_confusion_path: Path
    catalog_path: Path
    catalog_csv_path: Path
    sources_path: Path | None = None
    corpus_spec: corpus_mod.SyntheticCorpusSpec | None = None
    featurizer: classifier_mod.FeaturizerConfig = field(
        default_factory=lambda: classifier_mod.FeaturizerConfig(kind="hashed-ngram")
    )
    train: classifier_mod.TrainConfig = field(default_factory=classifier_mod.TrainConfig)
    encoder: dict = field(default_factory=dict)
    vocab_size: int = 2000
    vocab_min_freq: int = 1
    test_fraction: float = 0.2
    max_chars: int = textprep.DEFAULT_MAX_CHARS
    seed: int = 0
    parallel: int = 1


@dataclass
class StageSummary:
    stage: str
    counts: dict = field(default_factory=dict)

    def line(self) -> str:
        extras = "".join(f" {k}={v}" for k, v in self.counts.items())
        return f"stage={self.stage} status=ok{extras}"


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_config(path: str | Path) -> PipelineConfig:
    """Read a pipeline config file (JSON).

    Relative paths resolve against the config file's directory. Environment
    variables named EVENTCAT_PATH_<KEY> override path entries only.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc

    paths = dict(data.get("paths", {}))
    for key in list(paths):
        override = os.environ.get(ENV_PREFIX + key.upper())
        if override:
            paths[key] = override
    for key, value in os.environ.items():
        if key.startswith(ENV_PREFIX):
            paths.setdefault(key[len(ENV_PREFIX):].lower(), value)

    base = path.parent
    required = ("taxonomy", "raw", "clean", "train", "test", "vocab", "weights",
                "model", "predictions", "report", "confusion",
                "normalized_confusion", "catalog", "catalog_csv")
    missing = [k for k in required if k not in paths]
    if missing:
        raise ConfigError(f"config missing path entries: {missing}")

    seed = int(data.get("seed", 0))
    corpus_spec = None
    if data.get("corpus"):
        corpus_data = dict(data["corpus"])
        corpus_data.setdefault("seed", seed)  # the global seed reaches every stage
        corpus_spec = corpus_mod.spec_from_dict(corpus_data)
    featurizer = classifier_mod.FeaturizerConfig.from_dict(
        data.get("featurizer", {"kind": "hashed-ngram"})
    )
    train_data = dict(data.get("train", {}))
    train_data.setdefault("seed", seed)
    train_cfg = classifier_mod.TrainConfig(**train_data)
    try:
        return PipelineConfig(
            taxonomy_path=_resolve(base, paths["taxonomy"]),
            sources_path=_resolve(base, paths.get("sources")),
            raw_store=_resolve(base, paths["raw"]),
            clean_store=_resolve(base, paths["clean"]),
            train_store=_resolve(base, paths["train"]),
            test_store=_resolve(base, paths["test"]),
            vocab_path=_resolve(base, paths["vocab"]),
            weights_path=_resolve(base, paths["weights"]),
            model_path=_resolve(base, paths["model"]),
            predictions_path=_resolve(base, paths["predictions"]),
            report_path=_resolve(base, paths["report"]),
            confusion_path=_resolve(base, paths["confusion"]),
            normalized_confusion_path=_resolve(base, paths["normalized_confusion"]),
            catalog_path=_resolve(base, paths["catalog"]),
            catalog_csv_path=_resolve(base, paths["catalog_csv"]),
            corpus_spec=corpus_spec,
            featurizer=featurizer,
            train=train_cfg,
            encoder=data.get("encoder", {}),
            vocab_size=int(data.get("vocab_size", 2000)),
            vocab_min_freq=int(data.get("vocab_min_freq", 1)),
            test_fraction=float(data.get("test_fraction", 0.2)),
            max_chars=int(data.get("max_chars", textprep.DEFAULT_MAX_CHARS)),
            seed=seed,
            parallel=int(data.get("parallel", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _load_taxonomy(config: PipelineConfig) -> Taxonomy:
    if not config.taxonomy_path.exists():
        raise ConfigError(f"taxonomy file not found: {config.taxonomy_path}")
    return load_taxonomy(config.taxonomy_path)


# --- stages ---------------------------------------------------------------------


def stage_ingest(config: PipelineConfig) -> StageSummary:
    taxonomy = _load_taxonomy(config)
    clock = ingestion.RunClock(start=PIPELINE_EPOCH)
    events: list[ingestion.RawEvent] = []
    skipped = 0
    failed_sources = 0
    if config.corpus_spec is not None:
        events = corpus_mod.generate_corpus(config.corpus_spec)
    elif config.sources_path is not None:
        descriptors = ingestion.load_sources(config.sources_path, taxonomy)
        for result in ingestion.fetch_sources(descriptors, parallel=config.parallel, clock=clock):
            if result.error:
                failed_sources += 1
                continue
            events.extend(result.events)
            skipped += result.skipped_no_title
    else:
        raise ConfigError("config needs either a corpus spec or a sources file")
    deduped = ingestion.dedupe(events)
    config.raw_store.unlink(missing_ok=True)
    written = ingestion.append_raw(config.raw_store, deduped)
    return StageSummary("ingest", {
        "fetched": len(events), "skipped_no_title": skipped,
        "failed_sources": failed_sources, "deduped": len(events) - len(deduped),
        "written": written,
    })


def stage_clean(config: PipelineConfig) -> StageSummary:
    locale_hints: dict[str, str] = {}
    if config.sources_path is not None and config.sources_path.exists():
        for desc in ingestion.load_sources(config.sources_path):
            if desc.locale_hint:
                locale_hints[desc.source_id] = desc.locale_hint
    raw_events = ingestion.read_raw(config.raw_store)
    clean_events = [
        textprep.clean_event(raw, max_chars=config.max_chars,
                             language=locale_hints.get(raw.source_id))
        for raw in raw_events
    ]
    empty = sum(1 for e in clean_events if not e.text)
    config.clean_store.unlink(missing_ok=True)
    written = append_records(config.clean_store, (e.to_record() for e in clean_events))
    return StageSummary("clean", {"read": len(raw_events), "written": written, "empty_text": empty})


def stage_features(config: PipelineConfig) -> StageSummary:
    """Build the vocabulary and frozen encoder weights for encoder features.

    The hashed-ngram featurizer is stateless, so this stage is a no-op then.
    """
    if config.featurizer.kind != "encoder-cls":
        return StageSummary("features", {"featurizer": config.featurizer.kind, "built": 0})
    events = _read_clean(config.clean_store)
    vocab = textprep.build_vocab(
        [e.text for e in events], max_size=config.vocab_size, min_freq=config.vocab_min_freq
    )
    vocab.save(config.vocab_path)
    encoder_cfg = encoder_mod.EncoderConfig(
        vocab_size=vocab.size, seed=config.seed, **config.encoder
    )
    weights = encoder_mod.init_weights(encoder_cfg)
    encoder_mod.save_weights(config.weights_path, weights)
    return StageSummary("features", {
        "featurizer": "encoder-cls", "vocab_size": vocab.size, "built": 1,
    })


def _read_clean(path: Path) -> list[textprep.CleanEvent]:
    return [textprep.CleanEvent.from_record(r) for r in read_records(path)]


def stage_split(config: PipelineConfig) -> StageSummary:
    taxonomy = _load_taxonomy(config)
    events = _read_clean(config.clean_store)
    labeled = [e for e in events if e.label is not None]
    rolled = []
    for event in labeled:
        rolled.append(replace_label(event, taxonomy.first_level_of(event.label)))
    train, test = evaluation.split(
        rolled, config.test_fraction, seed=config.seed, stratified=True
    )
    for path, subset in ((config.train_store, train), (config.test_store, test)):
        path.unlink(missing_ok=True)
        append_records(path, (e.to_record() for e in subset))
    return StageSummary("split", {
        "labeled": len(labeled), "unlabeled": len(events) - len(labeled),
        "train": len(train), "test": len(test),
    })


def replace_label(event: textprep.CleanEvent, label: int) -> textprep.CleanEvent:
    if event.label == label:
        return event
    return replace(event, label=label)


def _effective_featurizer(config: PipelineConfig) -> classifier_mod.FeaturizerConfig:
    cfg = config.featurizer
    if cfg.kind == "encoder-cls":
        cfg = replace(cfg, weights_path=str(config.weights_path),
                      vocab_path=str(config.vocab_path))
    return cfg


def stage_train(config: PipelineConfig) -> StageSummary:
    taxonomy = _load_taxonomy(config)
    events = _read_clean(config.train_store)
    if not events:
        raise ConfigError(f"no training events in {config.train_store}")
    featurizer_cfg = _effective_featurizer(config)
    featurizer = classifier_mod.build_featurizer(featurizer_cfg)
    data = [(featurizer.transform(e.text), e.label) for e in events]
    classes = tuple(n.id for n in taxonomy.first_level_nodes())
    model = classifier_mod.train(data, classes, config.train, featurizer_cfg)
    classifier_mod.save_model(config.model_path, model)
    return StageSummary("train", {
        "examples": len(data), "classes": len(classes),
        "final_loss": f"{model.meta.final_loss:.6f}",
    })


def stage_classify(config: PipelineConfig) -> StageSummary:
    taxonomy = _load_taxonomy(config)
    events = _read_clean(config.test_store)
    model = classifier_mod.load_model(config.model_path)
    sources = []
    if config.sources_path is not None and config.sources_path.exists():
        sources = ingestion.load_sources(config.sources_path, taxonomy)
    cascade = classifier_mod.CascadeClassifier(sources, model, taxonomy)
    predictions = [cascade.classify(e) for e in events]
    config.predictions_path.unlink(missing_ok=True)
    append_records(config.predictions_path, (p.to_record() for p in predictions))
    methods: dict[str, int] = {}
    for p in predictions:
        methods[p.method] = methods.get(p.method, 0) + 1
    counts = {"events": len(predictions), "model_calls": cascade.model_calls}
    counts.update({f"method_{k.replace('-', '_')}": v for k, v in sorted(methods.items())})
    return StageSummary("classify", counts)


def stage_evaluate(config: PipelineConfig) -> StageSummary:
    taxonomy = _load_taxonomy(config)
    records = read_records(config.predictions_path)
    predictions = [classifier_mod.Prediction.from_record(r) for r in records]
    pairs = evaluation.rolled_up_pairs(predictions, taxonomy)
    if not pairs:
        report = evaluation.EvalReport([], 0.0, evaluation.Averages(0, 0, 0),
                                       evaluation.Averages(0, 0, 0), 0)
        config.report_path.write_text(evaluation.render_report(report, taxonomy),
                                      encoding="utf-8")
        return StageSummary("evaluate", {"evaluated": 0})
    classes = tuple(n.id for n in taxonomy.first_level_nodes())
    matrix = evaluation.confusion(pairs, classes)
    report = evaluation.build_report(matrix)
    config.report_path.parent.mkdir(parents=True, exist_ok=True)
    config.report_path.write_text(evaluation.render_report(report, taxonomy), encoding="utf-8")
    config.confusion_path.write_text(
        evaluation.confusion_csv(matrix, taxonomy), encoding="utf-8"
    )
    config.normalized_confusion_path.write_text(
        evaluation.confusion_csv(matrix, taxonomy, normalized=True), encoding="utf-8"
    )
    return StageSummary("evaluate", {
        "evaluated": len(pairs),
        "accuracy": f"{report.accuracy:.4f}",
    })


def stage_catalog(config: PipelineConfig) -> StageSummary:
    taxonomy = _load_taxonomy(config)
    events = _read_clean(config.test_store)
    predictions = [
        classifier_mod.Prediction.from_record(r)
        for r in read_records(config.predictions_path)
    ]
    built = catalog_mod.build_catalog(events, predictions, taxonomy)
    config.catalog_path.parent.mkdir(parents=True, exist_ok=True)
    config.catalog_path.write_bytes(catalog_mod.export_catalog(built, "jsonl"))
    config.catalog_csv_path.write_bytes(catalog_mod.export_catalog(built, "csv"))
    return StageSummary("catalog", {"entries": len(built)})


_STAGE_FUNCTIONS = {
    "ingest": stage_ingest,
    "clean": stage_clean,
    "features": stage_features,
    "split": stage_split,
    "train": stage_train,
    "classify": stage_classify,
    "evaluate": stage_evaluate,
    "catalog": stage_catalog,
}


def run_all(config: PipelineConfig, stages=None) -> list[StageSummary]:
    """Run the requested stages (default all) in canonical order.

    The first failing stage aborts the run; the raised StageFailure names it.
    """
    if stages is None:
        selected = list(STAGES)
    else:
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}")
        selected = [s for s in STAGES if s in set(stages)]
    summaries = []
    for stage in selected:
        started = time.monotonic()
        try:
            summary = _STAGE_FUNCTIONS[stage](config)
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure(stage, exc) from exc
        summary.counts["seconds"] = f"{time.monotonic() - started:.2f}"
        summaries.append(summary)
    return summaries


def default_config(
    workdir: str | Path,
    seed: int = 0,
    corpus_spec: corpus_mod.SyntheticCorpusSpec | None = None,
    featurizer: classifier_mod.FeaturizerConfig | None = None,
    train: classifier_mod.TrainConfig | None = None,
) -> PipelineConfig:
    """Self-contained config rooted at ``workdir``; writes the default taxonomy."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    taxonomy_path = workdir / "taxonomy.jsonl"
    if not taxonomy_path.exists():
        taxonomy_path.write_text(default_taxonomy_text(), encoding="utf-8")
    train_cfg = train or classifier_mod.TrainConfig(seed=seed)
    return PipelineConfig(
        taxonomy_path=taxonomy_path,
        raw_store=workdir / "raw.jsonl",
        clean_store=workdir / "clean.jsonl",
        train_store=workdir / "clean_train.jsonl",
        test_store=workdir / "clean_test.jsonl",
        vocab_path=workdir / "vocab.txt",
        weights_path=workdir / "encoder.weights",
        model_path=workdir / "classifier.model",
        predictions_path=workdir / "predictions.jsonl",
        report_path=workdir / "report.txt",
        confusion_path=workdir / "confusion.csv",
        normalized_confusion_path=workdir / "confusion_normalized.csv",
        catalog_path=workdir / "catalog.jsonl",
        catalog_csv_path=workdir / "catalog.csv",
        corpus_spec=corpus_spec,
        featurizer=featurizer or classifier_mod.FeaturizerConfig(kind="hashed-ngram"),
        train=train_cfg,
        seed=seed,
    )


def demo(workdir: str | Path, seed: int = 0) -> tuple[PipelineConfig, list[StageSummary]]:
    """End-to-end run on the bundled synthetic corpus."""
    config = default_config(
        workdir,
        seed=seed,
        corpus_spec=corpus_mod.default_spec(seed=seed),
    )
    summaries = run_all(config)
    return config, summaries
