"""Featurization, the multinomial logistic head, and the rule cascade.

Two interchangeable featurizers produce the input vector: hashed word
n-gram counts (L2-normalized) or the frozen encoder's sentence vector.
The head is a single coefficient matrix, one row per class with the
intercept folded in as a fixed appended 1, trained by mini-batch gradient
descent on class-weighted cross-entropy with an L2 penalty.

Classification runs as a cascade: a trusted source assigns its category
outright, then venue rules, and only then the model — so the expensive
path is skipped whenever metadata already decides the label.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import ArrayFileError, load_arrays, save_arrays
from .encoder import encode, load_weights, softmax
from .ingestion import SourceDescriptor
from .taxonomy import Taxonomy
from .textprep import CleanEvent, Vocabulary, tokenize


class ClassifierError(Exception):
    pass


class TrainingDiverged(ClassifierError):
    def __init__(self, epoch: int):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


def logistic(z):
    """1 / (1 + e^-z), overflow-safe for scalars and arrays."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    exp_z = np.exp(z[~positive])
    out[~positive] = exp_z / (1.0 + exp_z)
    return float(out) if out.ndim == 0 else out


# --- featurizers -------------------------------------------------------------


@dataclass(frozen=True)
class FeaturizerConfig:
    kind: str  # "hashed-ngram" | "encoder-cls"
    num_buckets: int = 4096
    ngram_orders: tuple[int, ...] = (1, 2)
    hash_seed: int = 0
    weights_path: str | None = None
    vocab_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("hashed-ngram", "encoder-cls"):
            raise ClassifierError(f"unknown featurizer kind {self.kind!r}")
        if self.kind == "hashed-ngram" and self.num_buckets < 2:
            raise ClassifierError("num_buckets must be >= 2")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_buckets": self.num_buckets,
            "ngram_orders": list(self.ngram_orders),
            "hash_seed": self.hash_seed,
            "weights_path": self.weights_path,
            "vocab_path": self.vocab_path,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeaturizerConfig":
        data = dict(data)
        data["ngram_orders"] = tuple(data.get("ngram_orders", (1, 2)))
        return cls(**data)


class HashedNgramFeaturizer:
    """Word n-gram counts hashed into a fixed number of buckets."""

    def __init__(self, config: FeaturizerConfig):
        self.config = config
        self._salt = config.hash_seed.to_bytes(8, "big", signed=False)

    @property
    def dim(self) -> int:
        return self.config.num_buckets

    def bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, salt=self._salt)
        return int.from_bytes(digest.digest(), "big") % self.config.num_buckets

    def transform(self, text: str) -> np.ndarray:
        tokens = text.lower().split()
        vec = np.zeros(self.config.num_buckets, dtype=np.float64)
        for order in self.config.ngram_orders:
            for i in range(len(tokens) - order + 1):
                vec[self.bucket(" ".join(tokens[i : i + order]))] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class EncoderClsFeaturizer:
    """Sentence vector from the frozen encoder (position-0 hidden state)."""

    def __init__(self, config: FeaturizerConfig):
        if not config.weights_path or not config.vocab_path:
            raise ClassifierError("encoder-cls featurizer needs weights_path and vocab_path")
        self.config = config
        self.weights = load_weights(config.weights_path)
        self.vocab = Vocabulary.load(config.vocab_path)

    @property
    def dim(self) -> int:
        return self.weights.config.model_dim

    def transform(self, text: str) -> np.ndarray:
        seq = tokenize(text, self.vocab, self.weights.config.max_len)
        return encode(seq, self.weights)


def build_featurizer(config: FeaturizerConfig):
    if config.kind == "hashed-ngram":
        return HashedNgramFeaturizer(config)
    return EncoderClsFeaturizer(config)


def featurize(event: CleanEvent, featurizer) -> np.ndarray:
    return featurizer.transform(event.text)


# --- model --------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 0.5
    batch_size: int = 128
    l2: float = 1e-4
    class_weights: str | dict[int, float] = "auto"  # "auto" | "none" | explicit map
    seed: int = 0


@dataclass
class TrainMeta:
    epochs: int
    learning_rate: float
    batch_size: int
    l2: float
    class_weights: dict[int, float]
    seed: int
    final_loss: float


@dataclass
class ClassifierModel:
    """Coefficient matrix (classes x features+1, last column = intercept)."""

    coef: np.ndarray
    classes: tuple[int, ...]
    featurizer: FeaturizerConfig
    meta: TrainMeta | None = None

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ClassifierError("need at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ClassifierError("class ids must be distinct")
        if self.coef.shape[0] != len(self.classes):
            raise ClassifierError("one coefficient row per class required")
        if not np.all(np.isfinite(self.coef)):
            raise ClassifierError("coefficients must be finite")

    @property
    def feature_dim(self) -> int:
        return self.coef.shape[1] - 1


def _with_intercept(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    ones = np.ones((x.shape[0], 1))
    return np.hstack([x, ones])


def predict_logits(x: np.ndarray, model: ClassifierModel) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.feature_dim:
        raise ClassifierError(
            f"feature dimension {x.shape[-1]} != model dimension {model.feature_dim}"
        )
    logits = _with_intercept(x) @ model.coef.T
    return logits[0] if x.ndim == 1 else logits


def predict_proba(x: np.ndarray, model: ClassifierModel) -> np.ndarray:
    """Per-class probabilities: softmax over the class logits."""
    return softmax(predict_logits(x, model), axis=-1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def loss_and_gradient(
    coef: np.ndarray,
    x: np.ndarray,
    y_index: np.ndarray,
    example_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray]:
    """Weighted cross-entropy (normalized by total example weight) plus
    0.5 * l2 * ||coef||^2 over the non-intercept columns, with its gradient.

    Normalizing by the weight sum keeps the gradient invariant under a
    uniform rescaling of the class weights.
    """
    x1 = _with_intercept(x)
    logits = x1 @ coef.T
    logp = _log_softmax(logits)
    n = x1.shape[0]
    weight_sum = example_weights.sum()
    loss = -(example_weights * logp[np.arange(n), y_index]).sum() / weight_sum
    loss += 0.5 * l2 * float((coef[:, :-1] ** 2).sum())

    p = np.exp(logp)
    delta = p
    delta[np.arange(n), y_index] -= 1.0
    grad = (delta * example_weights[:, None]).T @ x1 / weight_sum
    grad[:, :-1] += l2 * coef[:, :-1]
    return float(loss), grad


def resolve_class_weights(
    spec: str | dict[int, float], labels: list[int], classes: tuple[int, ...]
) -> dict[int, float]:
    """Materialize the per-class weight map.

    "auto" uses inverse class frequency (n / (num_classes * count_c)), which
    counteracts imbalance such as one category being twice as common.
    """
    if isinstance(spec, dict):
        missing = [c for c in classes if c not in spec]
        if missing:
            raise ClassifierError(f"class weights missing for classes {missing}")
        return {int(c): float(spec[c]) for c in classes}
    if spec == "none":
        return {c: 1.0 for c in classes}
    if spec == "auto":
        counts = {c: 0 for c in classes}
        for label in labels:
            counts[label] += 1
        n = len(labels)
        return {c: n / (len(classes) * counts[c]) for c in classes}
    raise ClassifierError(f"unknown class_weights spec {spec!r}")


def train(
    data: list[tuple[np.ndarray, int]],
    classes: tuple[int, ...] | list[int],
    hyper: TrainConfig,
    featurizer_config: FeaturizerConfig | None = None,
) -> ClassifierModel:
    """Fit the logistic head by seeded mini-batch gradient descent.

    Every class must appear at least once; coefficient matrix starts at zero.
    Raises TrainingDiverged (with the epoch) if the loss goes non-finite.
    """
    classes = tuple(int(c) for c in classes)
    if not data:
        raise ClassifierError("no training data")
    labels = [int(label) for _, label in data]
    unknown = sorted(set(labels) - set(classes))
    if unknown:
        raise ClassifierError(f"labels {unknown} missing from class list")
    absent = [c for c in classes if c not in set(labels)]
    if absent:
        raise ClassifierError(f"classes {absent} have zero training examples")

    x = np.asarray([np.asarray(vec, dtype=np.float64) for vec, _ in data])
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.asarray([class_index[label] for label in labels])
    weight_map = resolve_class_weights(hyper.class_weights, labels, classes)
    example_weights = np.asarray([weight_map[label] for label in labels])

    coef = np.zeros((len(classes), x.shape[1] + 1))
    rng = np.random.default_rng(hyper.seed)
    n = x.shape[0]
    batch = max(1, min(hyper.batch_size, n))
    loss = math.nan
    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            take = order[start : start + batch]
            loss, grad = loss_and_gradient(coef, x[take], y[take], example_weights[take], hyper.l2)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            coef -= hyper.learning_rate * grad
    final_loss, _ = loss_and_gradient(coef, x, y, example_weights, hyper.l2)
    if not math.isfinite(final_loss):
        raise TrainingDiverged(hyper.epochs)

    meta = TrainMeta(
        epochs=hyper.epochs,
        learning_rate=hyper.learning_rate,
        batch_size=hyper.batch_size,
        l2=hyper.l2,
        class_weights=weight_map,
        seed=hyper.seed,
        final_loss=final_loss,
    )
    featurizer_config = featurizer_config or FeaturizerConfig(
        kind="hashed-ngram", num_buckets=x.shape[1]
    )
    return ClassifierModel(coef=coef, classes=classes, featurizer=featurizer_config, meta=meta)


# --- hierarchical wrapper -------------------------------------------------------


@dataclass
class HierarchicalClassifier:
    """Root model over first-level ids plus optional per-branch submodels.

    The root always exists; a branch model is trained for a first-level
    category only when the data carries deeper labels under it.
    """

    root: ClassifierModel
    branches: dict[int, ClassifierModel] = field(default_factory=dict)

    def predict(self, x: np.ndarray) -> tuple[int, np.ndarray, np.ndarray]:
        """Return (leaf category, root logits, root probabilities)."""
        logits = predict_logits(x, self.root)
        probs = softmax(logits, axis=-1)
        first = self.root.classes[int(np.argmax(probs))]
        branch = self.branches.get(first)
        if branch is not None:
            leaf = branch.classes[int(np.argmax(predict_logits(x, branch)))]
            return leaf, logits, probs
        return first, logits, probs


def train_hierarchical(
    data: list[tuple[np.ndarray, int]],
    taxonomy: Taxonomy,
    hyper: TrainConfig,
    featurizer_config: FeaturizerConfig | None = None,
) -> HierarchicalClassifier:
    """Train the first-level model plus branch models where sublabels exist."""
    rolled = [(vec, taxonomy.first_level_of(label)) for vec, label in data]
    root_classes = tuple(sorted({label for _, label in rolled}))
    root = train(rolled, root_classes, hyper, featurizer_config)

    branches: dict[int, ClassifierModel] = {}
    for first in root_classes:
        subset = []
        for (vec, label), (_, rolled_label) in zip(data, rolled):
            if rolled_label == first and label != first:
                subset.append((vec, label))
        sub_classes = tuple(sorted({label for _, label in subset}))
        if len(sub_classes) >= 2:
            branches[first] = train(subset, sub_classes, hyper, featurizer_config)
    return HierarchicalClassifier(root=root, branches=branches)


# --- cascade --------------------------------------------------------------------


@dataclass(eq=False)
class Prediction:
    """Outcome for one event: category, provenance and (model-path) scores."""

    predicted: int
    method: str  # "rule-source" | "rule-venue" | "model"
    actual: int | None = None
    scores: np.ndarray | None = None
    probabilities: np.ndarray | None = None
    classes: tuple[int, ...] = ()
    text: str = ""
    event: CleanEvent | None = None

    def to_record(self) -> dict:
        scores = None
        if self.scores is not None:
            scores = {str(c): float(s) for c, s in zip(self.classes, self.scores)}
        return {
            "scores": scores,
            "pred": self.predicted,
            "actual": self.actual,
            "method": self.method,
            "text": self.text,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Prediction":
        scores = record.get("scores")
        classes: tuple[int, ...] = ()
        score_arr = None
        if scores:
            classes = tuple(sorted(int(c) for c in scores))
            score_arr = np.asarray([scores[str(c)] for c in classes])
        return cls(
            predicted=record["pred"],
            method=record.get("method", "model"),
            actual=record.get("actual"),
            scores=score_arr,
            probabilities=softmax(score_arr) if score_arr is not None else None,
            classes=classes,
            text=record.get("text", ""),
        )


class CascadeClassifier:
    """Source rule, then venue rule, then the model — cheapest path first.

    ``model_calls`` counts how often the model path actually ran, which lets
    callers verify the rules short-circuit it.
    """

    def __init__(
        self,
        sources: list[SourceDescriptor],
        model: ClassifierModel | HierarchicalClassifier,
        taxonomy: Taxonomy,
        featurizer=None,
    ):
        self.sources = {d.source_id: d for d in sources}
        self.model = model
        self.taxonomy = taxonomy
        base = model.root if isinstance(model, HierarchicalClassifier) else model
        self.featurizer = featurizer or build_featurizer(base.featurizer)
        self.model_calls = 0

    def _model_predict(self, event: CleanEvent) -> Prediction:
        self.model_calls += 1
        x = self.featurizer.transform(event.text)
        if isinstance(self.model, HierarchicalClassifier):
            predicted, logits, probs = self.model.predict(x)
            classes = self.model.root.classes
        else:
            logits = predict_logits(x, self.model)
            probs = softmax(logits, axis=-1)
            classes = self.model.classes
            predicted = classes[int(np.argmax(probs))]
        return Prediction(
            predicted=predicted,
            method="model",
            actual=event.label,
            scores=logits,
            probabilities=probs,
            classes=classes,
            text=event.text,
            event=event,
        )

    def classify(self, event: CleanEvent) -> Prediction:
        desc = self.sources.get(event.source_id)
        if desc is not None and desc.trust is not None:
            return Prediction(
                predicted=desc.trust, method="rule-source",
                actual=event.label, text=event.text, event=event,
            )
        if desc is not None and event.venue:
            category = desc.venue_rules.get(event.venue.lower())
            if category is not None:
                return Prediction(
                    predicted=category, method="rule-venue",
                    actual=event.label, text=event.text, event=event,
                )
        return self._model_predict(event)


def classify_event(
    event: CleanEvent,
    sources: list[SourceDescriptor] | dict[str, SourceDescriptor],
    model: ClassifierModel | HierarchicalClassifier,
    taxonomy: Taxonomy,
    featurizer=None,
) -> Prediction:
    """One-shot cascade classification (see CascadeClassifier for batches)."""
    if isinstance(sources, dict):
        sources = list(sources.values())
    return CascadeClassifier(sources, model, taxonomy, featurizer).classify(event)


# --- model file -------------------------------------------------------------------


def save_model(path: str | Path, model: ClassifierModel) -> None:
    meta = {
        "kind": "classifier-model",
        "classes": list(model.classes),
        "featurizer": model.featurizer.to_dict(),
        "feature_dim": model.feature_dim,
    }
    if model.meta is not None:
        meta["training"] = {
            "epochs": model.meta.epochs,
            "learning_rate": model.meta.learning_rate,
            "batch_size": model.meta.batch_size,
            "l2": model.meta.l2,
            "class_weights": {str(k): v for k, v in model.meta.class_weights.items()},
            "seed": model.meta.seed,
            "final_loss": model.meta.final_loss,
        }
    save_arrays(path, meta, {"coef": model.coef})


def load_model(path: str | Path) -> ClassifierModel:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "classifier-model":
        raise ArrayFileError(f"{path} does not hold a classifier model")
    coef = arrays["coef"]
    if coef.shape[1] != meta["feature_dim"] + 1:
        raise ArrayFileError(
            f"{path}: coefficient width {coef.shape[1]} != feature_dim+1 "
            f"({meta['feature_dim'] + 1})"
        )
    training = meta.get("training")
    train_meta = None
    if training:
        train_meta = TrainMeta(
            epochs=training["epochs"],
            learning_rate=training["learning_rate"],
            batch_size=training["batch_size"],
            l2=training["l2"],
            class_weights={int(k): v for k, v in training["class_weights"].items()},
            seed=training["seed"],
            final_loss=training["final_loss"],
        )
    return ClassifierModel(
        coef=coef,
        classes=tuple(meta["classes"]),
        featurizer=FeaturizerConfig.from_dict(meta["featurizer"]),
        meta=train_meta,
    )
