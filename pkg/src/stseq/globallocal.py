"""Global-local input: pooled global context as a residual on sampled frames.

The global branch mean-pools tokens per slot across all frames; the local
branch keeps a centered uniform subsample of frames. A two-layer per-token
MLP (hidden width 4D, final layer zero-initialized) maps the pooled tokens
to a residual that is broadcast onto every local frame, so at initialization
the fused input is exactly the local input.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Array
from .errors import ConfigError, ContractError
from .tokens import TokenGrid


def init_projector(dim: int, rng: np.random.Generator, dtype=np.float32) -> dict[str, Array]:
    """fm params; the up-projection is random, the output layer all-zero."""
    hidden = 4 * dim
    return {
        "fm.w1": Array(rng.normal(0.0, dim ** -0.5, size=(dim, hidden)).astype(dtype), requires_grad=True),
        "fm.b1": Array(np.zeros(hidden, dtype=dtype), requires_grad=True),
        "fm.w2": Array(np.zeros((hidden, dim), dtype=dtype), requires_grad=True),
        "fm.b2": Array(np.zeros(dim, dtype=dtype), requires_grad=True),
    }


def global_pool(grid: TokenGrid) -> Array:
    """Per-slot mean over frames: (T, K, D) -> (K, D)."""
    return ad.mean_axis0(grid.tokens)


def local_frame_indices(t_total: int, t_local: int) -> list[int]:
    """Centered uniform stride: floor((k + 0.5) * T / T_local)."""
    if t_local > t_total:
        raise ConfigError(f"cannot sample {t_local} local frames from {t_total}")
    return [int((k + 0.5) * t_total / t_local) for k in range(t_local)]


def sample_local(grid: TokenGrid, t_local: int) -> TokenGrid:
    idx = local_frame_indices(grid.t, t_local)
    return TokenGrid(ad.take_rows(grid.tokens, idx))


def projector_residual(pooled: Array, params: dict[str, Array]) -> Array:
    h = ad.gelu(ad.add(ad.matmul(pooled, params["fm.w1"]), params["fm.b1"]))
    return ad.add(ad.matmul(h, params["fm.w2"]), params["fm.b2"])


def fuse_global_local(local: TokenGrid, pooled: Array, params: dict[str, Array] | None,
                      variant: str = "adapter") -> TokenGrid:
    """Broadcast-add the global residual onto every local frame.

    variant="adapter" routes the pooled tokens through fm; "simply-add" adds
    them raw (the no-projector ablation).
    """
    if pooled.shape != (local.k, local.d):
        raise ContractError(f"pooled shape {pooled.shape} does not match local grid "
                            f"(K={local.k}, D={local.d})")
    if variant == "adapter":
        if params is None:
            raise ConfigError("adapter variant needs projector params")
        residual = projector_residual(pooled, params)
    elif variant == "simply-add":
        residual = pooled
    else:
        raise ConfigError(f"unknown fuse variant {variant!r}")
    return TokenGrid(ad.add(local.tokens, residual))
