"""eventcat: normalize heterogeneous event listings into one hierarchical catalog."""

__version__ = "0.1.0"

from .taxonomy import Taxonomy, TaxonomyNode, default_taxonomy, load_taxonomy
from .ingestion import RawEvent, SourceDescriptor, dedupe, fetch_source, fetch_sources
from .textprep import (
    CleanEvent,
    TokenSequence,
    Vocabulary,
    build_text,
    build_vocab,
    clean_event,
    clean_text,
    tokenize,
)
from .encoder import (
    EncoderConfig,
    EncoderWeights,
    encode,
    init_weights,
    layer_norm,
    multi_head,
    scaled_dot_attention,
    softmax,
)
from .classifier import (
    CascadeClassifier,
    ClassifierModel,
    FeaturizerConfig,
    Prediction,
    TrainConfig,
    classify_event,
    featurize,
    logistic,
    predict_proba,
    train,
)
from .evaluation import (
    ConfusionMatrix,
    EvalReport,
    aggregate,
    confusion,
    normalize_rows,
    per_class_metrics,
    render_report,
    split,
)
from .catalog import Catalog, CatalogEntry, CatalogQuery, build_catalog, export_catalog, filter_catalog, import_catalog
from .corpus import SyntheticCorpusSpec, generate_corpus
from .pipeline import PipelineConfig, demo, load_config, run_all
