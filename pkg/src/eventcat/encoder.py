"""From-scratch transformer encoder forward pass.

Implements scaled dot-product attention, multi-head attention with per-head
projections, residual connections with post-norm layer normalization and a
position-wise ReLU feed-forward block, all in plain numpy. Weights are
frozen after seeded initialization (or loaded from file); only the
downstream classification head is ever trained, so no backward pass exists
here. The sentence representation is the hidden state at position 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import ArrayFileError, load_arrays, save_arrays
from .textprep import TokenSequence


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    model_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    max_len: int = 128
    seed: int = 0

    def __post_init__(self):
        dims = (self.vocab_size, self.num_layers, self.model_dim,
                self.num_heads, self.ffn_dim, self.max_len)
        if any(d < 1 for d in dims):
            raise EncoderError("all encoder dimensions must be >= 1")
        if self.model_dim % self.num_heads != 0:
            raise EncoderError(
                f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}"
            )

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "num_layers": self.num_layers,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "ffn_dim": self.ffn_dim,
            "max_len": self.max_len,
            "seed": self.seed,
        }


@dataclass
class LayerWeights:
    """One encoder layer: per-head projections, output mix, FFN, two norms."""

    wq: np.ndarray  # (heads, model_dim, head_dim)
    wk: np.ndarray  # (heads, model_dim, head_dim)
    wv: np.ndarray  # (heads, model_dim, head_dim)
    wo: np.ndarray  # (heads * head_dim, model_dim)
    ffn_w1: np.ndarray  # (model_dim, ffn_dim)
    ffn_b1: np.ndarray  # (ffn_dim,)
    ffn_w2: np.ndarray  # (ffn_dim, model_dim)
    ffn_b2: np.ndarray  # (model_dim,)
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray


@dataclass
class EncoderWeights:
    config: EncoderConfig
    token_embedding: np.ndarray  # (vocab_size, model_dim)
    position_embedding: np.ndarray  # (max_len, model_dim)
    layers: list[LayerWeights] = field(default_factory=list)


def softmax(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Overflow-safe softmax along ``axis`` (max is subtracted first)."""
    values = np.asarray(values, dtype=np.float64)
    shifted = values - np.max(values, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def scaled_dot_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: np.ndarray,
    return_weights: bool = False,
):
    """softmax(q kᵀ / sqrt(d_k)) v over the unmasked key positions.

    Masked key positions receive score -inf, so their mixing weight is
    exactly zero. Raises when the mask admits no key at all.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    mask = np.asarray(mask)
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0] or mask.shape[0] != k.shape[0]:
        raise EncoderError(
            f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape} mask{mask.shape}"
        )
    if not np.any(mask > 0):
        raise EncoderError("no attendable position: every key is masked")
    d_k = q.shape[1]
    scores = (q @ k.T) / np.sqrt(d_k)
    scores = np.where(mask[None, :] > 0, scores, -np.inf)
    weights = softmax(scores, axis=-1)
    out = weights @ v
    return (out, weights) if return_weights else out


def multi_head(x: np.ndarray, layer: LayerWeights, mask: np.ndarray) -> np.ndarray:
    """Self-attention: h independent heads, concatenated and mixed by wo."""
    heads = []
    for i in range(layer.wq.shape[0]):
        q = x @ layer.wq[i]
        k = x @ layer.wk[i]
        v = x @ layer.wv[i]
        heads.append(scaled_dot_attention(q, k, v, mask))
    return np.concatenate(heads, axis=-1) @ layer.wo


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row to zero mean / unit population variance, then scale."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + bias


def feed_forward(x: np.ndarray, layer: LayerWeights) -> np.ndarray:
    hidden = np.maximum(x @ layer.ffn_w1 + layer.ffn_b1, 0.0)
    return hidden @ layer.ffn_w2 + layer.ffn_b2


def encoder_layer(x: np.ndarray, layer: LayerWeights, mask: np.ndarray) -> np.ndarray:
    """Residual + norm around attention, then residual + norm around the FFN."""
    attended = layer_norm(x + multi_head(x, layer, mask), layer.ln1_gain, layer.ln1_bias)
    return layer_norm(attended + feed_forward(attended, layer), layer.ln2_gain, layer.ln2_bias)


def encode(seq: TokenSequence, weights: EncoderWeights) -> np.ndarray:
    """Run the full forward pass and return the position-0 sentence vector.

    Embeddings at masked positions are zeroed up front; combined with the
    -inf score masking this makes the output independent of whatever ids sit
    in the pad tail, bit for bit.
    """
    cfg = weights.config
    ids = np.asarray(seq.ids)
    mask = np.asarray(seq.mask)
    if ids.shape[0] != cfg.max_len:
        raise EncoderError(f"sequence length {ids.shape[0]} != max_len {cfg.max_len}")
    if np.any(ids < 0) or np.any(ids >= cfg.vocab_size):
        raise EncoderError("token id out of vocabulary range")
    x = weights.token_embedding[ids] + weights.position_embedding
    x = np.where(mask[:, None] > 0, x, 0.0)
    for layer in weights.layers:
        x = encoder_layer(x, layer, mask)
    return x[0]


def init_weights(config: EncoderConfig) -> EncoderWeights:
    """Seeded random weights: zero-mean normals with scale 1/sqrt(model_dim).

    Layer-norm gains start at 1, every bias at 0. The same seed always
    produces the same weights.
    """
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / np.sqrt(config.model_dim)

    def draw(*shape):
        return rng.normal(0.0, scale, size=shape)

    d, h, dk, dff = config.model_dim, config.num_heads, config.head_dim, config.ffn_dim
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            LayerWeights(
                wq=draw(h, d, dk),
                wk=draw(h, d, dk),
                wv=draw(h, d, dk),
                wo=draw(h * dk, d),
                ffn_w1=draw(d, dff),
                ffn_b1=np.zeros(dff),
                ffn_w2=draw(dff, d),
                ffn_b2=np.zeros(d),
                ln1_gain=np.ones(d),
                ln1_bias=np.zeros(d),
                ln2_gain=np.ones(d),
                ln2_bias=np.zeros(d),
            )
        )
    return EncoderWeights(
        config=config,
        token_embedding=draw(config.vocab_size, d),
        position_embedding=draw(config.max_len, d),
        layers=layers,
    )


_LAYER_FIELDS = (
    "wq", "wk", "wv", "wo",
    "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
    "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
)


def save_weights(path: str | Path, weights: EncoderWeights) -> None:
    arrays = {
        "token_embedding": weights.token_embedding,
        "position_embedding": weights.position_embedding,
    }
    for i, layer in enumerate(weights.layers):
        for name in _LAYER_FIELDS:
            arrays[f"layer{i}.{name}"] = getattr(layer, name)
    save_arrays(path, {"kind": "encoder-weights", "config": weights.config.to_dict()}, arrays)


def _expected_shapes(cfg: EncoderConfig) -> dict[str, tuple]:
    d, h, dk, dff = cfg.model_dim, cfg.num_heads, cfg.head_dim, cfg.ffn_dim
    shapes = {
        "token_embedding": (cfg.vocab_size, d),
        "position_embedding": (cfg.max_len, d),
    }
    per_layer = {
        "wq": (h, d, dk), "wk": (h, d, dk), "wv": (h, d, dk), "wo": (h * dk, d),
        "ffn_w1": (d, dff), "ffn_b1": (dff,), "ffn_w2": (dff, d), "ffn_b2": (d,),
        "ln1_gain": (d,), "ln1_bias": (d,), "ln2_gain": (d,), "ln2_bias": (d,),
    }
    for i in range(cfg.num_layers):
        for name, shape in per_layer.items():
            shapes[f"layer{i}.{name}"] = shape
    return shapes


def load_weights(path: str | Path) -> EncoderWeights:
    """Load a weight file, rejecting config/shape mismatches."""
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "encoder-weights":
        raise ArrayFileError(f"{path} does not hold encoder weights")
    cfg = EncoderConfig(**meta["config"])
    expected = _expected_shapes(cfg)
    if set(arrays) != set(expected):
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        raise ArrayFileError(f"{path}: weight set mismatch (missing {missing}, extra {extra})")
    for name, shape in expected.items():
        if tuple(arrays[name].shape) != shape:
            raise ArrayFileError(
                f"{path}: {name} has shape {arrays[name].shape}, expected {shape}"
            )
    layers = []
    for i in range(cfg.num_layers):
        layers.append(LayerWeights(**{n: arrays[f"layer{i}.{n}"] for n in _LAYER_FIELDS}))
    return EncoderWeights(
        config=cfg,
        token_embedding=arrays["token_embedding"],
        position_embedding=arrays["position_embedding"],
        layers=layers,
    )
