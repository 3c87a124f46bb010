"""In-context test-time augmentation (Tyche-IS).

Turns any deterministic in-context predictor into a stochastic one by
perturbing the target and its context images with one shared intensity
transform per candidate.  The individual predictions are the output; they
are never averaged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .augment import AugmentationSpec, ContractViolation, get_family, ictta_augment_episode
from .synthdata import Episode

__all__ = ["DeterministicPredictor", "ICTTAConfig", "predict_stochastic"]

# (target (H, W), context_images (S, H, W), context_masks (S, H, W)) -> (H, W)
DeterministicPredictor = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass
class ICTTAConfig:
    k: int = 8
    family: str | AugmentationSpec = "ictta"
    include_identity: bool = True
    base_seed: int = 0
    per_image: bool = False

    def spec(self) -> AugmentationSpec:
        spec = get_family(self.family) if isinstance(self.family, str) else self.family
        if not spec.intensity_only:
            raise ContractViolation(
                f"ICTTA needs an intensity-only family, {spec.family!r} is not"
            )
        return spec


def predict_stochastic(model: DeterministicPredictor, episode: Episode, cfg: ICTTAConfig) -> np.ndarray:
    """``(K, H, W)`` candidate probability maps ordered by candidate index."""
    if cfg.k < 1:
        raise ValueError(f"need K >= 1 candidates, got {cfg.k}")
    spec = cfg.spec()
    outputs = []
    for k in range(cfg.k):
        if k == 0 and cfg.include_identity:
            ep = episode
        else:
            ep = ictta_augment_episode(episode, spec, [cfg.base_seed, k], per_image=cfg.per_image)
        pred = np.asarray(model(ep.target, ep.context_images, ep.context_masks), dtype=np.float32)
        if pred.shape != episode.target.shape:
            raise ValueError(
                f"predictor returned shape {pred.shape}, expected {episode.target.shape}"
            )
        outputs.append(pred)
    return np.stack(outputs)
