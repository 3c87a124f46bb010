"""Episodic training of TycheNet."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..augment import apply, get_family, sample_transform
from ..model import TycheNet, make_noise
from ..objective import best_candidate_loss, combined_dice_ce, ged2_loss
from ..seeding import derive_seed
from ..synthdata import BlobSpec, Dataset, Episode, build_dataset, sample_episode
from .checkpoint import Checkpoint
from .config import ExperimentConfig

log = logging.getLogger(__name__)

# config sections that determine a trained checkpoint
TRAIN_SECTIONS = ("data", "model", "train", "loss")


class TrainingDiverged(RuntimeError):
    pass


def dataset_from_config(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    size = (d.size, d.size)
    spec = BlobSpec(
        size=size,
        n_raters=d.n_raters,
        disk_radius_range=tuple(d.disk_radius_range),
        deform_scale=None if d.deform_scale < 0 else d.deform_scale,
        deform_smoothness=None if d.deform_smoothness < 0 else d.deform_smoothness,
        pixel_noise_std=d.pixel_noise_std,
        seed=cfg.seed,
    )
    return build_dataset(
        blob_spec=spec,
        n_blob_examples=d.n_blob_examples,
        n_shape_tasks=d.n_shape_tasks,
        n_shape_examples=d.n_shape_examples,
        size=size,
        fractions=tuple(d.fractions),
        seed=cfg.seed,
    )


def configure_determinism() -> None:
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def augment_episode(ep: Episode, task_family: str, in_task_family: str, key) -> Episode:
    """Training augmentation: one task-level transform shared by the whole
    episode, then an independent in-task transform per image."""
    target, raters = ep.target, ep.raters
    images, masks = list(ep.context_images), list(ep.context_masks)
    if task_family != "none":
        t = sample_transform(get_family(task_family), derive_seed(*key, 1))
        target, raters = apply(t, target, raters, index=0)
        for j in range(len(images)):
            images[j], masks[j] = apply(t, images[j], masks[j], index=j + 1)
    if in_task_family != "none":
        spec = get_family(in_task_family)
        t = sample_transform(spec, derive_seed(*key, 2, 0))
        target, raters = apply(t, target, raters)
        for j in range(len(images)):
            t = sample_transform(spec, derive_seed(*key, 2, j + 1))
            images[j], masks[j] = apply(t, images[j], masks[j])
    return ep.replace(
        target=target, raters=raters,
        context_images=np.stack(images), context_masks=np.stack(masks),
    )


def episode_tensors(episodes: list[Episode], dtype=torch.float32):
    target = torch.from_numpy(np.stack([e.target for e in episodes]).astype(np.float32))
    ci = torch.from_numpy(np.stack([e.context_images for e in episodes]).astype(np.float32))
    cm = torch.from_numpy(np.stack([e.context_masks for e in episodes]).astype(np.float32))
    return target.to(dtype), ci.to(dtype), cm.to(dtype)


def batch_loss(probs, episodes, raters_idx, loss_cfg):
    if loss_cfg.kind == "best_candidate":
        truth = torch.from_numpy(
            np.stack([e.raters[r] for e, r in zip(episodes, raters_idx)]).astype(np.float32)
        ).to(probs.dtype)
        return best_candidate_loss(probs, truth, loss_cfg.w_dice, loss_cfg.w_ce).value.mean()
    if loss_cfg.kind == "plain":
        truth = torch.from_numpy(
            np.stack([e.raters[r] for e, r in zip(episodes, raters_idx)]).astype(np.float32)
        ).to(probs.dtype)
        return combined_dice_ce(probs, truth.unsqueeze(1), loss_cfg.w_dice, loss_cfg.w_ce).mean()
    losses = [
        ged2_loss(probs[i], torch.from_numpy(e.raters.astype(np.float32)).to(probs.dtype))
        for i, e in enumerate(episodes)
    ]
    return torch.stack(losses).mean()


@dataclass
class TrainResult:
    model: TycheNet
    checkpoint: Checkpoint
    loss_curve: list[float] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)


def _epoch_plan(dataset: Dataset, cfg: ExperimentConfig, epoch: int):
    items = []
    for tid in sorted(dataset.tasks):
        n_dev = len(dataset.splits[tid]["dev"])
        if n_dev < cfg.train.context_size + 1:
            raise ValueError(
                f"task {tid!r}: dev split has {n_dev} examples, need context_size + 1 = "
                f"{cfg.train.context_size + 1}"
            )
        items.extend((tid, i) for i in range(n_dev))
    rng = np.random.default_rng(derive_seed(cfg.seed, "order", epoch))
    order = [items[i] for i in rng.permutation(len(items))]
    n = cfg.train.episodes_per_epoch or len(order)
    return [order[i % len(order)] for i in range(n)]


def _val_score(model, dataset, cfg, epoch):
    from .evaluation import TycheSampler, collect_candidates
    from ..stochmetrics import best_candidate_dice

    sampler = TycheSampler(model, noise=cfg.train.noise, seed=derive_seed(cfg.seed, "val"))
    rows = collect_candidates(
        sampler, dataset, split="val", context_size=cfg.train.context_size,
        k=cfg.train.k_train, n_draws=1, seed=derive_seed(cfg.seed, "val"),
        max_episodes=cfg.train.val_episodes,
    )
    return float(np.mean([best_candidate_dice(c.candidates, c.episode.raters) for c in rows]))


def train(
    cfg: ExperimentConfig,
    dataset: Dataset | None = None,
    run_dir=None,
    init: Checkpoint | None = None,
    dtype=torch.float32,
) -> TrainResult:
    """Train with Adam on episodes drawn from the dev splits.

    Every random choice (epoch order, context draw, rater, augmentation,
    noise) is keyed on ``(seed, epoch, position)``.
    """
    cfg.validate()
    configure_determinism()
    if dataset is None:
        dataset = dataset_from_config(cfg)
    if init is not None:
        model = init.build_model()
        start_state = dict(init.train_state)
    else:
        model = TycheNet(cfg.model_config())
        start_state = {}
    model = model.to(dtype)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.train.lr, betas=(0.9, 0.999))

    t = cfg.train
    size = (cfg.data.size, cfg.data.size)
    run_dir = Path(run_dir) if run_dir else None
    loss_curve, step_losses, val_curve = [], [], []
    best_val, best_state, since_best = -math.inf, None, 0
    step = 0
    base_epoch = int(start_state.get("epoch", 0)) if init is not None else 0

    def state(epoch):
        return {
            "epoch": base_epoch + epoch,
            "step": int(start_state.get("step", 0)) + step,
            "loss_curve": list(start_state.get("loss_curve", [])) + loss_curve,
            "val_curve": val_curve,
            "seed": cfg.seed,
            "loss_kind": cfg.loss.kind,
            "config_hash": cfg.hash(TRAIN_SECTIONS),
        }

    for epoch in range(t.epochs):
        model.train()
        plan = _epoch_plan(dataset, cfg, epoch)
        epoch_losses = []
        for b0 in range(0, len(plan), t.batch_episodes):
            episodes, raters_idx, noises = [], [], []
            for pos in range(b0, min(b0 + t.batch_episodes, len(plan))):
                tid, idx = plan[pos]
                dev = dataset.split(tid, "dev")
                key = (cfg.seed, "train", base_epoch + epoch, pos)
                ep = sample_episode(dev, t.context_size, derive_seed(*key, "episode"),
                                    target_index=idx, task_id=tid)
                ep = augment_episode(ep, t.augment_task, t.augment_in_task, key)
                rng = np.random.default_rng(derive_seed(*key, "rater"))
                raters_idx.append(int(rng.integers(ep.raters.shape[0])))
                noises.append(make_noise(t.k_train, size, cfg.model.noise_channels, t.noise,
                                         derive_seed(*key, "noise"), dtype))
                episodes.append(ep)
            target, ci, cm = episode_tensors(episodes, dtype)
            probs = model(target, ci, cm, torch.stack(noises))
            loss = batch_loss(probs, episodes, raters_idx, cfg.loss)
            if not torch.isfinite(loss):
                ids = [e.target_id for e in episodes]
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at epoch {epoch}, step {step}, targets {ids}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            step_losses.append(float(loss.item()))
            epoch_losses.append(float(loss.item()))
        loss_curve.append(float(np.mean(epoch_losses)))
        log.info("epoch %d loss %.4f", base_epoch + epoch, loss_curve[-1])

        if t.patience > 0:
            model.eval()
            score = _val_score(model, dataset, cfg, epoch)
            val_curve.append(score)
            if score > best_val:
                best_val, since_best = score, 0
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            else:
                since_best += 1
        if run_dir is not None:
            Checkpoint.from_model(model, state(epoch + 1)).save(run_dir / "checkpoint.tyck")
        if t.patience > 0 and since_best >= t.patience:
            log.info("early stop at epoch %d (best val %.4f)", base_epoch + epoch, best_val)
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint.from_model(model, state(len(loss_curve)))
    if run_dir is not None:
        ckpt.save(run_dir / "checkpoint.tyck")
        with open(run_dir / "loss_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for i, v in enumerate(step_losses):
                w.writerow([i, repr(v)])
    return TrainResult(model, ckpt, loss_curve, step_losses, val_curve)
