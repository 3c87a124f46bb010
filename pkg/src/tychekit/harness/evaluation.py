"""Evaluation protocol: several context draws per target, K candidates per
draw, metrics averaged over draws and aggregated over targets."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .. import stochmetrics as sm
from ..ictta import ICTTAConfig, predict_stochastic
from ..model import TycheNet, make_noise
from ..seeding import derive_seed
from ..synthdata import Dataset, Episode, sample_episode

log = logging.getLogger(__name__)

CSV_SCHEMA = "tychekit.episode-metrics/1"
CSV_COLUMNS = ["episode_id", "draw", "metric", "value"]

METRICS = {
    "dice": sm.mean_dice,
    "best_candidate_dice": sm.best_candidate_dice,
    "ged2": sm.ged2,
    "sample_diversity": None,
    "hungarian_dice": sm.hungarian_matching_dice,
}


class TycheSampler:
    """Candidate generator backed by a trained TycheNet."""

    def __init__(self, model: TycheNet, noise: str = "random", seed: int = 0):
        self.model = model.eval()
        self.noise = noise
        self.seed = seed
        self._dtype = next(model.parameters()).dtype

    def __call__(self, episode: Episode, k: int, key=()) -> np.ndarray:
        h, w = episode.target.shape
        z = make_noise(k, (h, w), self.model.config.noise_channels, self.noise,
                       derive_seed(self.seed, "noise", *key), self._dtype)
        with torch.no_grad():
            probs = self.model(
                torch.as_tensor(episode.target[None], dtype=self._dtype),
                torch.as_tensor(episode.context_images[None], dtype=self._dtype),
                torch.as_tensor(episode.context_masks[None], dtype=self._dtype),
                z[None],
            )
        return probs[0].numpy().astype(np.float32)

    def deterministic(self):
        """Single-map predictor: one candidate with zero noise."""
        model, dtype = self.model, self._dtype
        h, w = model.config.input_size

        def predict(target, context_images, context_masks):
            z = torch.zeros(1, 1, model.config.noise_channels, *target.shape, dtype=dtype)
            with torch.no_grad():
                p = model(
                    torch.as_tensor(target[None], dtype=dtype),
                    torch.as_tensor(context_images[None], dtype=dtype),
                    torch.as_tensor(context_masks[None], dtype=dtype),
                    z,
                )
            return p[0, 0].numpy()

        return predict


class ICTTASampler:
    """Candidate generator that wraps a deterministic predictor with ICTTA."""

    def __init__(self, predictor, family="ictta", include_identity=True, seed=0, per_image=False):
        self.predictor = predictor
        self.family = family
        self.include_identity = include_identity
        self.seed = seed
        self.per_image = per_image

    def __call__(self, episode: Episode, k: int, key=()) -> np.ndarray:
        cfg = ICTTAConfig(k=k, family=self.family, include_identity=self.include_identity,
                          base_seed=derive_seed(self.seed, "ictta", *key), per_image=self.per_image)
        return predict_stochastic(self.predictor, episode, cfg)


@dataclass
class Draw:
    task_id: str
    index: int
    draw: int
    episode: Episode
    candidates: np.ndarray


def collect_candidates(sampler, dataset: Dataset, split="test", context_size=16, k=8,
                       n_draws=5, seed=0, max_episodes=0) -> list[Draw]:
    """Run the sampler on every (target, context draw) of a split.

    Targets come from ``split``; contexts come from the same task's dev split.
    """
    out = []
    for ti, tid in enumerate(sorted(dataset.tasks)):
        targets = dataset.split(tid, split)
        if not targets:
            continue
        dev = dataset.split(tid, "dev")
        n = len(targets) if not max_episodes else min(max_episodes, len(targets))
        for idx in range(n):
            for draw in range(n_draws):
                ep = sample_episode(targets, context_size,
                                    derive_seed(seed, "context", ti, idx, draw),
                                    context_pool=dev, target_index=idx, task_id=tid)
                cands = sampler(ep, k, key=(ti, idx, draw))
                out.append(Draw(tid, idx, draw, ep, cands))
    if not out:
        raise ValueError(f"split {split!r} is empty for every task")
    return out


_warned: set = set()


def episode_metrics(candidates, raters, metrics, threshold=0.5) -> dict[str, float]:
    values = {}
    for name in metrics:
        if name not in METRICS:
            raise ValueError(f"unknown metric {name!r}; known: {sorted(METRICS)}")
        if name == "sample_diversity":
            if candidates.shape[0] < 2:
                if name not in _warned:
                    warnings.warn("sample_diversity needs K >= 2; skipped", stacklevel=2)
                    _warned.add(name)
                continue
            values[name] = sm.sample_diversity(candidates, threshold)
            continue
        if raters is None or len(raters) == 0:
            warnings.warn(f"{name}: no rater data; skipped", stacklevel=2)
            continue
        values[name] = METRICS[name](candidates, raters, threshold)
    return values


@dataclass
class EvalResult:
    rows: list[dict]  # per (episode, draw, metric)
    report: sm.MetricReport  # per-episode means aggregated over episodes

    def episode_means(self, metric: str) -> dict[str, float]:
        return {r["episode_id"]: r["value"] for r in self.report.records if r["metric"] == metric}

    def mean(self, metric: str) -> float:
        return self.report.aggregates[metric]["mean"]


def score_draws(draws: list[Draw], metrics, threshold=0.5, k=None) -> EvalResult:
    """Metrics per draw (optionally on the first ``k`` candidates), averaged
    over draws per episode, then aggregated."""
    rows = []
    for d in draws:
        cands = d.candidates if k is None else d.candidates[:k]
        ep_id = d.episode.target_id
        for name, value in episode_metrics(cands, d.episode.raters, metrics, threshold).items():
            rows.append({"episode_id": ep_id, "draw": d.draw, "metric": name, "value": value})
    grouped: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        grouped.setdefault((r["episode_id"], r["metric"]), []).append(r["value"])
    records = [
        {"episode_id": ep, "metric": m, "value": float(np.mean(v)), "n_draws": len(v)}
        for (ep, m), v in grouped.items()
    ]
    return EvalResult(rows, sm.aggregate(records))


def evaluate(sampler, dataset: Dataset, eval_cfg, seed=0, k=None) -> EvalResult:
    k = eval_cfg.k if k is None else k
    draws = collect_candidates(
        sampler, dataset, eval_cfg.split, eval_cfg.context_size, k,
        eval_cfg.n_context_draws, seed, eval_cfg.max_episodes,
    )
    return score_draws(draws, eval_cfg.metrics, eval_cfg.threshold)


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r["episode_id"], r["draw"], r["metric"], repr(float(r["value"]))])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {CSV_COLUMNS}, got {reader.fieldnames}")
        return [
            {"episode_id": r["episode_id"], "draw": int(r["draw"]), "metric": r["metric"],
             "value": float(r["value"])}
            for r in reader
        ]


def write_aggregate(result: EvalResult, path, extra=None) -> Path:
    path = Path(path)
    payload = {"csv_schema": CSV_SCHEMA, "aggregates": result.report.aggregates, **(extra or {})}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
