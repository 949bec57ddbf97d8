"""Visual token production and joint token-sequence assembly.

A synthetic video is encoded frame-by-frame: each frame is split into a
patch grid, every patch flattened and linearly projected, giving K tokens
per frame. Token grids flow through a D-to-D projection and are then laid
out as one flat sequence: start token, all visual tokens in frame-major
order, text tokens, end token. No separators, and no extra absolute
position embeddings are added to the visual tokens; position information
enters the model only through rotary rotations of consecutive position ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Array
from .errors import ConfigError, ContractError

START_ID = 0
END_ID = 1
PAD_ID = 2

OriginTag = tuple


@dataclass
class SyntheticVideo:
    """T grayscale frames of size G x G with values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 3 or f.shape[0] < 1 or f.shape[1] != f.shape[2]:
            raise ConfigError(f"video frames must be (T, G, G) with T >= 1, got {f.shape}")
        if f.min() < 0.0 or f.max() > 1.0:
            raise ConfigError("frame values must lie in [0, 1]")
        self.frames = f

    @property
    def t(self) -> int:
        return self.frames.shape[0]

    @property
    def g(self) -> int:
        return self.frames.shape[1]


@dataclass
class TokenGrid:
    """Per-video visual tokens, frames x slots x dims."""

    tokens: Array  # (T, K, D)

    @property
    def t(self) -> int:
        return self.tokens.shape[0]

    @property
    def k(self) -> int:
        return self.tokens.shape[1]

    @property
    def d(self) -> int:
        return self.tokens.shape[2]


@dataclass
class TokenSequence:
    """Assembled model input: embeddings plus per-position bookkeeping.

    origin_tags mirror the layout: ("start",), ("visual", frame, slot),
    ("text", n) indexing into text_ids, ("end",). Position ids are always
    consecutive from zero.
    """

    embeddings: Array  # (L, D)
    position_ids: list[int]
    origin_tags: list[OriginTag]
    text_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.origin_tags)

    def visual_positions(self) -> list[int]:
        return [p for p, tag in enumerate(self.origin_tags) if tag[0] == "visual"]


def frame_patches(frames: np.ndarray, patch: int, dtype) -> np.ndarray:
    """Split (T, G, G) frames into (T*K, (G/P)^2) flattened patches, K = P^2."""
    t, g, _ = frames.shape
    if g % patch != 0:
        raise ConfigError(f"frame size {g} not divisible by patch grid {patch}")
    s = g // patch
    tiles = frames.reshape(t, patch, s, patch, s).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(tiles.reshape(t * patch * patch, s * s), dtype=dtype)


def encode_frames(video: SyntheticVideo, enc_w: Array, enc_b: Array, patch: int) -> TokenGrid:
    """Per-frame patch encoder: flatten non-overlapping patches, shared linear map."""
    k = patch * patch
    if video.g % patch != 0:
        raise ConfigError(f"frame size {video.g} not divisible by patch grid {patch}")
    patch_len = (video.g // patch) ** 2
    if enc_w.shape[0] != patch_len:
        raise ConfigError(f"encoder weights {enc_w.shape} do not fit {video.g}x{video.g} frames "
                          f"with patch grid {patch} (need first dim {patch_len})")
    d = enc_w.shape[1]
    patches = Array(frame_patches(video.frames, patch, enc_w.dtype))
    tok = ad.add(ad.matmul(patches, enc_w), enc_b)
    return TokenGrid(ad.reshape(tok, (video.t, k, d)))


def project_visual(grid: TokenGrid, fp_w: Array, fp_b: Array) -> TokenGrid:
    """Apply the D-to-D visual projection independently to every token."""
    d = grid.d
    if fp_w.shape != (d, d) or fp_b.shape != (d,):
        raise ConfigError(f"projection params {fp_w.shape}/{fp_b.shape} do not match token dim {d}")
    flat = ad.reshape(grid.tokens, (grid.t * grid.k, d))
    out = ad.add(ad.matmul(flat, fp_w), fp_b)
    return TokenGrid(ad.reshape(out, (grid.t, grid.k, d)))


def assemble_sequence(grid: TokenGrid, text_ids: list[int], embedding: Array,
                      include_end: bool = True) -> TokenSequence:
    """Lay out start + visual (frame-major) + text (+ end) as one sequence.

    Visual tokens enter as embeddings directly; text ids go through the
    trainable table. include_end=False builds the generation prefix used
    during greedy decoding.
    """
    t, k, d = grid.t, grid.k, grid.d
    if embedding.shape[1] != d:
        raise ContractError(f"embedding dim {embedding.shape[1]} != token dim {d}")
    start = ad.embed(embedding, [START_ID])
    vis = ad.reshape(grid.tokens, (t * k, d))
    parts = [start, vis]
    tags: list[OriginTag] = [("start",)]
    tags += [("visual", i, j) for i in range(t) for j in range(k)]
    if text_ids:
        parts.append(ad.embed(embedding, text_ids))
        tags += [("text", n) for n in range(len(text_ids))]
    if include_end:
        parts.append(ad.embed(embedding, [END_ID]))
        tags.append(("end",))
    emb = ad.concat_rows(parts)
    return TokenSequence(emb, list(range(len(tags))), tags, list(text_ids))
