"""Tiny decoder-only transformer with rotary positions and strict causal attention.

Pre-norm blocks: rmsnorm -> multi-head causal attention (queries/keys rotated
by position id) -> residual, rmsnorm -> gelu FFN -> residual; final rmsnorm;
logits through the transposed (tied) embedding table. Linear maps carry no
biases. Causality is enforced by adding a large negative constant to masked
score entries before the softmax; the offset is far below the exp underflow
threshold, so masked attention weights are exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array, no_grad
from .errors import ConfigError, ContractError
from .tokens import TokenSequence

MASK_VALUE = -1e30

_mask_cache: dict = {}


@dataclass
class ModelConfig:
    layers: int
    heads: int
    dim: int
    vocab: int
    ffn_mult: int = 4
    rope_base: float = 10000.0

    def __post_init__(self):
        if min(self.layers, self.heads, self.dim, self.vocab, self.ffn_mult) < 1:
            raise ConfigError(f"model config counts must be >= 1: {self}")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if (self.dim // self.heads) % 2 != 0:
            raise ConfigError(f"head dim {self.dim // self.heads} must be even for rotary pairs")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass
class ModelOutput:
    hidden: Array  # (L, D) final post-norm states
    logits: Array  # (L, vocab)


def init_params(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Array]:
    p: dict[str, Array] = {}

    def w(shape):
        # fan-in scaled so activations stay near unit RMS at toy widths
        std = shape[0] ** -0.5
        return Array(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)

    p["embedding"] = Array(rng.normal(0.0, cfg.dim ** -0.5, size=(cfg.vocab, cfg.dim)).astype(dtype),
                           requires_grad=True)
    for i in range(cfg.layers):
        p[f"layer{i}.attn_norm"] = Array(np.ones(cfg.dim, dtype=dtype), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            p[f"layer{i}.{name}"] = w((cfg.dim, cfg.dim))
        p[f"layer{i}.ffn_norm"] = Array(np.ones(cfg.dim, dtype=dtype), requires_grad=True)
        p[f"layer{i}.w1"] = w((cfg.dim, cfg.ffn_mult * cfg.dim))
        p[f"layer{i}.w2"] = w((cfg.ffn_mult * cfg.dim, cfg.dim))
    p["final_norm"] = Array(np.ones(cfg.dim, dtype=dtype), requires_grad=True)
    return p


def rope_tables(position_ids, head_dim: int, base: float, dtype) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables (L, head_dim/2) for the given absolute position ids."""
    pos = np.asarray(position_ids, dtype=np.float64)
    half = head_dim // 2
    freqs = base ** (-np.arange(half, dtype=np.float64) * 2.0 / head_dim)
    angles = pos[:, None] * freqs[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def _causal_mask(length: int, dtype) -> np.ndarray:
    key = (length, np.dtype(dtype).str)
    m = _mask_cache.get(key)
    if m is None:
        m = np.triu(np.full((length, length), MASK_VALUE, dtype=dtype), k=1)
        _mask_cache[key] = m
    return m


def forward(seq: TokenSequence, params: dict[str, Array], cfg: ModelConfig,
            mode: str = "train") -> ModelOutput:
    """Run the decoder; mode="reference" records nothing (constant outputs)."""
    if mode == "reference":
        with no_grad():
            return forward(seq, params, cfg, mode="train")
    if mode != "train":
        raise ConfigError(f"forward mode must be train|reference, got {mode!r}")

    x = seq.embeddings
    length, d = x.shape
    if d != cfg.dim:
        raise ConfigError(f"sequence dim {d} != model dim {cfg.dim}")
    h_count, hd = cfg.heads, cfg.head_dim
    cos, sin = rope_tables(seq.position_ids, hd, cfg.rope_base, x.dtype)
    mask = Array(np.broadcast_to(_causal_mask(length, x.dtype), (h_count, length, length)))
    inv_sqrt = 1.0 / math.sqrt(hd)

    def split_heads(a: Array) -> Array:
        return ad.permute(ad.reshape(a, (length, h_count, hd)), (1, 0, 2))

    for i in range(cfg.layers):
        h = ad.rmsnorm(x, params[f"layer{i}.attn_norm"])
        q = ad.rope(split_heads(ad.matmul(h, params[f"layer{i}.wq"])), cos, sin)
        k = ad.rope(split_heads(ad.matmul(h, params[f"layer{i}.wk"])), cos, sin)
        v = split_heads(ad.matmul(h, params[f"layer{i}.wv"]))
        scores = ad.add(ad.scale(ad.matmul(q, ad.transpose_last2(k)), inv_sqrt), mask)
        ctx = ad.matmul(ad.softmax_lastdim(scores), v)
        ctx = ad.reshape(ad.permute(ctx, (1, 0, 2)), (length, d))
        x = ad.add(x, ad.matmul(ctx, params[f"layer{i}.wo"]))
        h2 = ad.rmsnorm(x, params[f"layer{i}.ffn_norm"])
        f = ad.gelu(ad.matmul(h2, params[f"layer{i}.w1"]))
        x = ad.add(x, ad.matmul(f, params[f"layer{i}.w2"]))

    hidden = ad.rmsnorm(x, params["final_norm"])
    logits = ad.matmul(hidden, ad.transpose_last2(params["embedding"]))
    return ModelOutput(hidden=hidden, logits=logits)


def answer_positions(seq: TokenSequence, prompt_len: int) -> list[int]:
    """Sequence positions holding answer text (text index >= prompt_len)."""
    return [p for p, tag in enumerate(seq.origin_tags)
            if tag[0] == "text" and tag[1] >= prompt_len]


def decoder_loss(out: ModelOutput, seq: TokenSequence, prompt_len: int) -> Array:
    """Next-token cross-entropy over answer positions only."""
    span = answer_positions(seq, prompt_len)
    if not span:
        raise ContractError("decoder loss: empty answer span")
    length = len(seq)
    targets = [0] * length
    ignore = [True] * length
    for p in span:
        targets[p - 1] = seq.text_ids[seq.origin_tags[p][1]]
        ignore[p - 1] = False
    return ad.cross_entropy(out.logits, targets, ignore)
