"""On-disk episodes for ``predict`` and the files it writes.

An episode directory holds::

    target.png                 8-bit grayscale target image
    context/<name>_image.png   8-bit grayscale context images
    context/<name>_mask.png    binary context masks (any nonzero pixel is foreground)
    raters/<name>.png          optional annotations of the target
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..synthdata import Episode

PROB_SCALE = 65535


class EpisodeFormatError(ValueError):
    pass


def _read_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "1", "I;16", "I", "P", "LA"):
                raise EpisodeFormatError(f"{path}: expected a grayscale PNG, got mode {im.mode}")
            if im.mode in ("I;16", "I"):
                return np.asarray(im, dtype=np.float64) / PROB_SCALE
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, SyntaxError) as exc:
        raise EpisodeFormatError(f"{path}: not a readable image ({exc})") from None


def _write_image(img: np.ndarray, path: Path) -> None:
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="L").save(path)


def _write_mask(mask: np.ndarray, path: Path) -> None:
    Image.fromarray(np.asarray(mask).astype(bool)).save(path)


def save_episode(episode: Episode, root) -> Path:
    root = Path(root)
    (root / "context").mkdir(parents=True, exist_ok=True)
    _write_image(episode.target, root / "target.png")
    for j in range(episode.context_size):
        name = episode.context_ids[j] if episode.context_ids else f"{j:03d}"
        _write_image(episode.context_images[j], root / "context" / f"{name}_image.png")
        _write_mask(episode.context_masks[j], root / "context" / f"{name}_mask.png")
    if episode.raters is not None and len(episode.raters):
        (root / "raters").mkdir(exist_ok=True)
        for r, mask in enumerate(episode.raters):
            _write_mask(mask, root / "raters" / f"rater{r}.png")
    return root


def load_episode(root, size=None) -> Episode:
    """Read an episode directory; ``size`` (H, W) is checked when given."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"episode directory not found: {root}")
    target_path = root / "target.png"
    if not target_path.is_file():
        raise FileNotFoundError(f"missing target image: {target_path}")
    ctx_dir = root / "context"
    if not ctx_dir.is_dir():
        raise FileNotFoundError(f"missing context directory: {ctx_dir}")

    target = _read_gray(target_path)
    shape = target.shape
    if size is not None and tuple(size) != shape:
        raise EpisodeFormatError(
            f"{target_path}: image is {shape[0]}x{shape[1]}, the model expects {size[0]}x{size[1]}"
        )

    def check(arr, path):
        if arr.shape != shape:
            raise EpisodeFormatError(
                f"{path}: size {arr.shape[0]}x{arr.shape[1]} differs from target {shape[0]}x{shape[1]}"
            )
        return arr

    names = sorted(p.name[: -len("_image.png")] for p in ctx_dir.glob("*_image.png"))
    if not names:
        raise EpisodeFormatError(f"{ctx_dir}: no context images (*_image.png)")
    images, masks = [], []
    for name in names:
        mask_path = ctx_dir / f"{name}_mask.png"
        if not mask_path.is_file():
            raise FileNotFoundError(f"context image {name}_image.png has no mask: {mask_path}")
        images.append(check(_read_gray(ctx_dir / f"{name}_image.png"), ctx_dir / f"{name}_image.png"))
        masks.append(check(_read_gray(mask_path), mask_path) > 0)

    raters = np.zeros((0, *shape), dtype=np.uint8)
    rater_dir = root / "raters"
    if rater_dir.is_dir():
        paths = sorted(rater_dir.glob("*.png"))
        if paths:
            raters = np.stack([check(_read_gray(p), p) > 0 for p in paths]).astype(np.uint8)

    return Episode(
        target=target.astype(np.float32),
        raters=raters,
        context_images=np.stack(images).astype(np.float32),
        context_masks=np.stack(masks).astype(np.float32),
        task_id=root.name,
        seed=0,
        target_id="target",
        context_ids=tuple(names),
    )


def write_predictions(candidates: np.ndarray, out_dir, metadata: dict, threshold=0.5) -> dict:
    """Write per-candidate binary masks, 16-bit probability maps and
    ``predict.json``; returns the metadata as written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, prob in enumerate(candidates):
        mask_name, prob_name = f"candidate_{k:02d}_mask.png", f"candidate_{k:02d}_prob.png"
        _write_mask(prob >= threshold, out_dir / mask_name)
        q = np.round(np.clip(prob, 0, 1) * PROB_SCALE).astype(np.uint16)
        Image.fromarray(q).save(out_dir / prob_name)
        files.append({"mask": mask_name, "prob": prob_name, "max_prob": float(prob.max())})
    meta = {**metadata, "threshold": threshold, "k": len(candidates), "candidates": files}
    (out_dir / "predict.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def read_predictions(out_dir):
    """``(masks (K, H, W) bool, probs (K, H, W) float, metadata)``."""
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "predict.json").read_text())
    masks, probs = [], []
    for c in meta["candidates"]:
        masks.append(np.asarray(Image.open(out_dir / c["mask"]).convert("L")) > 0)
        probs.append(np.asarray(Image.open(out_dir / c["prob"]), dtype=np.float64) / PROB_SCALE)
    return np.stack(masks), np.stack(probs), meta
