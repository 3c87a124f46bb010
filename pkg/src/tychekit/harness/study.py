"""Analysis sweeps: number of candidates, context size, input noise, and the
ICTTA augmentation family."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..seeding import derive_seed
from .evaluation import (
    EvalResult,
    ICTTASampler,
    TycheSampler,
    collect_candidates,
    score_draws,
    write_aggregate,
    write_csv,
)

STUDY_KINDS = ("k_sweep", "context_sweep", "noise_ablation", "ictta_family_ablation")

DEFAULT_GRIDS = {
    "k_sweep": [1, 2, 4, 8],
    "context_sweep": [1, 2, 4, 8, 16],
    "noise_ablation": ["zero", "constant", "random"],
    "ictta_family_ablation": ["none", "ictta_light", "ictta", "ictta_high"],
}

AXIS_LABELS = {
    "k_sweep": "number of candidates K",
    "context_sweep": "context size",
    "noise_ablation": "input noise",
    "ictta_family_ablation": "ICTTA family",
}


@dataclass
class StudyResult:
    kind: str
    grid: list
    points: dict = field(default_factory=dict)  # grid value -> EvalResult

    def series(self, metric: str):
        """(grid values, means, CI half-widths) for points that report ``metric``."""
        xs, means, cis = [], [], []
        for x in self.grid:
            agg = self.points[x].report.aggregates.get(metric)
            if agg is None:
                continue
            xs.append(x)
            means.append(agg["mean"])
            cis.append(agg["ci95"])
        return xs, means, cis

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "grid": self.grid,
            "points": {str(x): self.points[x].report.aggregates for x in self.grid},
        }


def _metrics_for(metrics, k):
    return [m for m in metrics if not (m == "sample_diversity" and k < 2)]


def run_study(kind, model, dataset, cfg, grid=None, k_mode="prefix") -> StudyResult:
    """Evaluate ``model`` over a grid.

    In ``prefix`` mode the K sweep runs one forward pass with ``max(grid)``
    candidates per draw and scores the first K of them, so candidate sets
    are nested across grid points and best-candidate Dice cannot decrease
    with K.  ``independent`` runs a separate K-candidate pass per point.
    """
    if kind not in STUDY_KINDS:
        raise ValueError(f"unknown study kind {kind!r}; choose from {STUDY_KINDS}")
    grid = list(grid or DEFAULT_GRIDS[kind])
    if not grid:
        raise ValueError("study grid is empty")
    e = cfg.eval
    seed = derive_seed(cfg.seed, "eval")
    result = StudyResult(kind, grid)

    def collect(sampler, k, context_size=e.context_size):
        return collect_candidates(sampler, dataset, e.split, context_size, k,
                                  e.n_context_draws, seed, e.max_episodes)

    if kind == "k_sweep":
        if any(int(k) < 1 for k in grid):
            raise ValueError(f"K values must be >= 1, got {grid}")
        sampler = TycheSampler(model, noise=e.noise, seed=seed)
        if k_mode == "prefix":
            draws = collect(sampler, max(grid))
            for k in grid:
                result.points[k] = score_draws(draws, _metrics_for(e.metrics, k), e.threshold, k=k)
        elif k_mode == "independent":
            for k in grid:
                result.points[k] = score_draws(collect(sampler, k), _metrics_for(e.metrics, k), e.threshold)
        else:
            raise ValueError(f"k_mode must be prefix or independent, got {k_mode!r}")
    elif kind == "context_sweep":
        sampler = TycheSampler(model, noise=e.noise, seed=seed)
        for s in grid:
            draws = collect(sampler, e.k, context_size=int(s))
            result.points[s] = score_draws(draws, _metrics_for(e.metrics, e.k), e.threshold)
    elif kind == "noise_ablation":
        for mode in grid:
            sampler = TycheSampler(model, noise=mode, seed=seed)
            result.points[mode] = score_draws(collect(sampler, e.k), _metrics_for(e.metrics, e.k), e.threshold)
    else:
        base = TycheSampler(model, noise="zero", seed=seed).deterministic()
        ic = cfg.ictta
        for family in grid:
            sampler = ICTTASampler(base, family, ic.include_identity, seed, ic.per_image)
            result.points[family] = score_draws(collect(sampler, ic.k), _metrics_for(e.metrics, ic.k), e.threshold)
    return result


def save_study(result: StudyResult, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for x in result.grid:
        point_dir = out_dir / f"point-{x}"
        write_csv(result.points[x].rows, point_dir / "episodes.csv")
        write_aggregate(result.points[x], point_dir / "aggregate.json", {"point": x})
    path = out_dir / "study.json"
    path.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def load_study(path) -> StudyResult:
    """Rebuild a study summary (aggregates only) from ``study.json``."""
    from ..stochmetrics import MetricReport

    d = json.loads(Path(path).read_text())
    grid = d["grid"]
    points = {x: EvalResult([], MetricReport([], d["points"][str(x)])) for x in grid}
    return StudyResult(d["kind"], grid, points)
