"""Dynamic visual-token masking.

A mask rate rho is drawn from a normal distribution centered at 0.5 and
truncated to [0.3, 0.7] by rejection (sigma here is a standard deviation:
with sigma=0.1 roughly 95% of untruncated draws already land in-range).
Masked visual tokens are removed outright, shortening the sequence; text,
start and end positions are never touched, and the survivors are renumbered
with consecutive position ids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError
from .tokens import TokenSequence

RHO_MEAN = 0.5
RHO_LOW = 0.3
RHO_HIGH = 0.7


@dataclass
class MaskPlan:
    """Sampled rate plus the masked/kept split over the T*K flat visual indices."""

    rho: float
    masked: list[int]
    kept: list[int]
    total: int

    def __post_init__(self):
        if set(self.masked) & set(self.kept):
            raise ContractError("mask plan: masked and kept overlap")
        if len(self.masked) + len(self.kept) != self.total:
            raise ContractError("mask plan: masked + kept must cover all visual positions")


def sample_mask_rate(sigma: float, rng: np.random.Generator,
                     mean: float = RHO_MEAN) -> float:
    """Draw rho ~ Normal(mean, sigma) truncated to [0.3, 0.7] by rejection.

    sigma=0 returns the mean exactly (the mean argument exists for tests
    that force degenerate rates).
    """
    if sigma < 0:
        raise ConfigError(f"mask-rate sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return mean
    while True:
        r = rng.normal(mean, sigma)
        if RHO_LOW <= r <= RHO_HIGH:
            return float(r)


def sample_mask_rate_uniform(low: float, high: float, rng: np.random.Generator) -> float:
    if not 0.0 <= low <= high <= 1.0:
        raise ConfigError(f"uniform mask-rate bounds [{low}, {high}] invalid")
    return float(rng.uniform(low, high))


def build_mask_plan(t: int, k: int, rho: float, rng: np.random.Generator) -> MaskPlan:
    """Choose round(rho*T*K) flat indices uniformly, frame-agnostic.

    The count is clamped so at least one visual token survives whenever
    any are present (round-half-to-even via Python round).
    """
    total = t * k
    if total < 1:
        raise ConfigError(f"need at least one visual position, got T={t}, K={k}")
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"mask rate must be in [0, 1], got {rho}")
    n = round(rho * total)
    if rho > 0:
        n = min(n, total - 1)
    masked = sorted(rng.choice(total, size=n, replace=False).tolist()) if n else []
    masked_set = frozenset(masked)
    kept = [i for i in range(total) if i not in masked_set]
    return MaskPlan(rho=rho, masked=masked, kept=kept, total=total)


def apply_mask(seq: TokenSequence, plan: MaskPlan, renumber: bool = True) -> TokenSequence:
    """Remove masked visual positions; everything else survives in order.

    Surviving positions get consecutive ids by default; renumber=False keeps
    the pre-mask ids (ablation toggle).
    """
    vis_positions = seq.visual_positions()
    if len(vis_positions) != plan.total:
        raise ContractError(f"mask plan covers {plan.total} visual positions, "
                            f"sequence has {len(vis_positions)}")
    masked_set = frozenset(plan.masked)
    keep: list[int] = []
    vis_seen = 0
    for p, tag in enumerate(seq.origin_tags):
        if tag[0] == "visual":
            if vis_seen not in masked_set:
                keep.append(p)
            vis_seen += 1
        else:
            keep.append(p)
    emb = ad.take_rows(seq.embeddings, keep)
    tags = [seq.origin_tags[p] for p in keep]
    pos = list(range(len(keep))) if renumber else [seq.position_ids[p] for p in keep]
    return TokenSequence(emb, pos, tags, list(seq.text_ids))
