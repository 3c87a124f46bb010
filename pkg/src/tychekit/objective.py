"""Segmentation losses for candidate sets.

All functions take torch tensors so they can be back-propagated; the last two
dimensions are spatial and everything before them is treated as batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

__all__ = [
    "DICE_EPS",
    "CE_CLAMP",
    "LossValue",
    "soft_dice_loss",
    "binary_cross_entropy",
    "combined_dice_ce",
    "best_candidate_loss",
    "soft_dice_distance_matrix",
    "ged2_loss",
]

DICE_EPS = 1e-5
CE_CLAMP = 1e-7


def _check_shapes(pred, truth):
    if pred.shape[-2:] != truth.shape[-2:]:
        raise ValueError(
            f"shape mismatch: prediction {tuple(pred.shape)} vs truth {tuple(truth.shape)}"
        )


def soft_dice_loss(pred, truth, eps=DICE_EPS):
    """``1 - (2 sum(p g) + eps) / (sum p + sum g + eps)`` over the last two dims."""
    _check_shapes(pred, truth)
    truth = truth.to(pred.dtype)
    inter = (pred * truth).sum(dim=(-2, -1))
    total = pred.sum(dim=(-2, -1)) + truth.sum(dim=(-2, -1))
    return 1.0 - (2.0 * inter + eps) / (total + eps)


def binary_cross_entropy(pred, truth, clamp=CE_CLAMP):
    _check_shapes(pred, truth)
    truth = truth.to(pred.dtype)
    p = pred.clamp(clamp, 1.0 - clamp)
    ce = -(truth * torch.log(p) + (1.0 - truth) * torch.log1p(-p))
    return ce.mean(dim=(-2, -1))


def combined_dice_ce(pred, truth, w_dice=1.0, w_ce=1.0):
    if w_dice < 0 or w_ce < 0 or (w_dice == 0 and w_ce == 0):
        raise ValueError(f"invalid loss weights (w_dice={w_dice}, w_ce={w_ce})")
    loss = 0.0
    if w_dice:
        loss = loss + w_dice * soft_dice_loss(pred, truth)
    if w_ce:
        loss = loss + w_ce * binary_cross_entropy(pred, truth)
    return loss


@dataclass
class LossValue:
    value: torch.Tensor  # scalar (or per-batch) minimum
    components: torch.Tensor  # (..., K) per-candidate losses
    argmin: torch.Tensor  # (...) index of the winning candidate


def best_candidate_loss(candidates, truth, w_dice=1.0, w_ce=1.0) -> LossValue:
    """Minimum over candidates of the Dice + CE loss against one truth mask.

    ``candidates`` is ``(..., K, H, W)`` and ``truth`` ``(..., H, W)``.  Only
    the winning candidate receives gradient; ties go to the lowest index.
    """
    if candidates.ndim < 3 or candidates.shape[-3] < 1:
        raise ValueError("candidates must be (..., K, H, W) with K >= 1")
    _check_shapes(candidates, truth)
    comps = combined_dice_ce(candidates, truth.unsqueeze(-3), w_dice, w_ce)
    # torch.argmin returns the first index among ties
    idx = torch.argmin(comps.detach(), dim=-1)
    value = torch.gather(comps, -1, idx.unsqueeze(-1)).squeeze(-1)
    return LossValue(value, comps, idx)


def soft_dice_distance_matrix(a, b, eps=DICE_EPS):
    """Pairwise soft Dice loss between sets ``a`` (..., M, H, W) and ``b`` (..., N, H, W)."""
    return soft_dice_loss(a.unsqueeze(-3), b.unsqueeze(-4).to(a.dtype), eps)


def ged2_loss(candidates, raters, eps=DICE_EPS):
    """Differentiable squared generalized energy distance with soft Dice distance.

    ``2/(KR) sum d(c, r) - 1/R^2 sum d(r, r') - 1/K^2 sum d(c, c')`` with
    diagonal pairs kept in both self terms.
    """
    k = candidates.shape[-3]
    if k < 2:
        raise ValueError(f"ged2_loss needs K >= 2 candidates, got {k}")
    if raters.shape[-3] < 1:
        raise ValueError("ged2_loss needs at least one rater")
    raters = raters.to(candidates.dtype)
    cross = soft_dice_distance_matrix(candidates, raters, eps).mean(dim=(-2, -1))
    rr = soft_dice_distance_matrix(raters, raters, eps).mean(dim=(-2, -1))
    cc = soft_dice_distance_matrix(candidates, candidates, eps).mean(dim=(-2, -1))
    return 2.0 * cross - rr - cc
