"""Metrics for stochastic segmentation on binarized masks.

Candidate sets are arrays ``(K, H, W)`` of probabilities (binarized at
``threshold``) and rater sets are ``(R, H, W)`` binary masks.  The mask
distance used throughout is ``1 - Dice``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "binarize",
    "dice",
    "dice_matrix",
    "best_candidate_dice",
    "mean_dice",
    "ged2",
    "sample_diversity",
    "hungarian_matching_dice",
    "MetricReport",
    "aggregate",
]


def binarize(x, threshold=0.5):
    x = np.asarray(x)
    if x.dtype == bool:
        return x
    if np.issubdtype(x.dtype, np.integer):
        return x > 0
    return x >= threshold


def dice(a, b) -> float:
    """``2|a & b| / (|a| + |b|)``; two empty masks score 1."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def dice_matrix(a, b) -> np.ndarray:
    """Pairwise Dice between mask sets ``(M, H, W)`` and ``(N, H, W)``."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"shape mismatch: {a.shape[1:]} vs {b.shape[1:]}")
    fa = a.reshape(a.shape[0], -1).astype(np.int64)
    fb = b.reshape(b.shape[0], -1).astype(np.int64)
    inter = fa @ fb.T
    total = fa.sum(1)[:, None] + fb.sum(1)[None, :]
    out = np.ones(total.shape, dtype=float)
    nz = total > 0
    out[nz] = 2.0 * inter[nz] / total[nz]
    return out


def _sets(candidates, raters, threshold):
    c = binarize(candidates, threshold)
    if c.ndim == 2:
        c = c[None]
    if raters is None:
        return c, None
    r = binarize(raters, threshold)
    if r.ndim == 2:
        r = r[None]
    if c.shape[0] < 1 or r.shape[0] < 1:
        raise ValueError("need at least one candidate and one rater")
    return c, r


def best_candidate_dice(candidates, raters, threshold=0.5) -> float:
    """Max over candidates of the rater-averaged Dice."""
    c, r = _sets(candidates, raters, threshold)
    return float(dice_matrix(c, r).mean(axis=1).max())


def mean_dice(candidates, raters, threshold=0.5) -> float:
    """Dice averaged over all candidate/rater pairs."""
    c, r = _sets(candidates, raters, threshold)
    return float(dice_matrix(c, r).mean())


def ged2(candidates, raters, threshold=0.5) -> float:
    """Squared generalized energy distance, ``d = 1 - Dice``, diagonals kept."""
    c, r = _sets(candidates, raters, threshold)
    cross = 1.0 - dice_matrix(c, r)
    rr = 1.0 - dice_matrix(r, r)
    cc = 1.0 - dice_matrix(c, c)
    return float(2.0 * cross.mean() - rr.mean() - cc.mean())


def sample_diversity(candidates, threshold=0.5) -> float:
    """Mean ``1 - Dice`` over unordered pairs of distinct candidate indices."""
    c, _ = _sets(candidates, None, threshold)
    k = c.shape[0]
    if k < 2:
        raise ValueError(f"sample diversity needs K >= 2 candidates, got {k}")
    d = 1.0 - dice_matrix(c, c)
    iu = np.triu_indices(k, 1)
    return float(d[iu].mean())


def hungarian_matching_dice(candidates, raters, threshold=0.5) -> float:
    """Mean Dice of the optimal one-to-one matching after duplicating both
    sets to ``lcm(K, R)`` members."""
    c, r = _sets(candidates, raters, threshold)
    k, n_r = c.shape[0], r.shape[0]
    size = math.lcm(k, n_r)
    scores = dice_matrix(c, r)
    tiled = np.tile(scores, (size // k, size // n_r))
    rows, cols = linear_sum_assignment(1.0 - tiled)
    return float(tiled[rows, cols].mean())


@dataclass
class MetricReport:
    records: list[dict] = field(default_factory=list)
    aggregates: dict[str, dict] = field(default_factory=dict)

    def values(self, metric: str) -> list[float]:
        return [rec["value"] for rec in self.records if rec["metric"] == metric]


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    n = int(v.size)
    if n == 0:
        raise ValueError("cannot aggregate zero records")
    mean = float(v.mean())
    if n == 1:
        half = 0.0
        sd = 0.0
    else:
        sd = float(v.std(ddof=1))
        half = 1.96 * sd / math.sqrt(n)
    return {"mean": mean, "sd": sd, "ci95": half, "n": n}


def aggregate(records) -> MetricReport:
    """Mean and normal-approximation 95% CI half-width per metric.

    ``records`` are dicts with at least ``metric`` and ``value`` keys.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot aggregate zero records")
    by_metric: dict[str, list[float]] = {}
    for rec in records:
        value = float(rec["value"])
        if not math.isfinite(value):
            raise ValueError(f"non-finite value for {rec['metric']}: {value}")
        by_metric.setdefault(rec["metric"], []).append(value)
    aggs = {m: _summary(v) for m, v in sorted(by_metric.items())}
    return MetricReport(records, aggs)
