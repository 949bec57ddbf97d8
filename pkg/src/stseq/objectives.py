"""Masked-run vs reference-run reconstruction loss and the total objective.

Surviving visual tokens of the masked pass are paired with their originals
in the unmasked reference pass by origin tag; the loss is the mean squared
difference of their final hidden states. The reference side carries no
gradient. The total objective is the unweighted sum of this term and the
decoder loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Array
from .errors import ContractError, NumericError
from .masking import MaskPlan
from .tokens import TokenSequence


@dataclass
class PairSelection:
    """(position in masked run, position in reference run) per surviving token."""

    pairs: list[tuple[int, int]]


def select_pairs(masked_seq: TokenSequence, full_seq: TokenSequence,
                 plan: MaskPlan) -> PairSelection:
    """Match surviving visual tokens to their reference positions by origin tag."""
    full_by_tag = {tag: p for p, tag in enumerate(full_seq.origin_tags) if tag[0] == "visual"}
    masked_tags = [(p, tag) for p, tag in enumerate(masked_seq.origin_tags) if tag[0] == "visual"]

    expected = len(plan.kept)
    if len(masked_tags) != expected:
        raise ContractError(f"masked sequence has {len(masked_tags)} visual tokens, "
                            f"plan keeps {expected}")
    pairs = []
    for p, tag in masked_tags:
        q = full_by_tag.get(tag)
        if q is None:
            raise ContractError(f"origin tag {tag} from masked run missing in reference run")
        pairs.append((p, q))
    return PairSelection(pairs)


def mvm_loss(masked_hidden: Array, reference_hidden: Array, sel: PairSelection) -> Array:
    """Mean squared hidden-state difference over selected pairs.

    reference_hidden is consumed as a constant; gradient flows only into the
    masked run. An empty selection (rho ~ 1) yields 0 with a warning.
    """
    if not sel.pairs:
        warnings.warn("mvm_loss: empty pair selection (mask rate ~ 1); returning 0")
        return Array(np.zeros((), dtype=masked_hidden.dtype))
    a = ad.take_rows(masked_hidden, [p for p, _ in sel.pairs])
    b = reference_hidden.data[[q for _, q in sel.pairs]]
    return ad.mse_pairs(a, b)


def total_loss(l_mvm: Array, l_llm: Array) -> Array:
    for name, term in (("masked-reconstruction", l_mvm), ("decoder", l_llm)):
        if not np.isfinite(term.data).all():
            raise NumericError(f"total loss: {name} term is non-finite ({term.data})")
    return ad.add(l_mvm, l_llm)
