"""Synthetic segmentation data: multi-rater blobs, single-rater shape tasks,
episode sampling, splits, and the on-disk dataset format."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "BlobSpec",
    "Example",
    "TaskData",
    "Dataset",
    "Episode",
    "generate_blob_example",
    "generate_blob_task",
    "generate_shape_task",
    "sample_episode",
    "split_dataset",
    "smooth_displacement",
    "warp",
    "save_dataset",
    "load_dataset",
    "build_dataset",
]

DATASET_FORMAT = "tychekit-dataset"
DATASET_VERSION = 1


def _check_size(size, divisor=None):
    h, w = size
    for s in (h, w):
        if s < 8 or s & (s - 1):
            raise ValueError(f"image sides must be powers of two >= 8, got {h}x{w}")
        if divisor and s % divisor:
            raise ValueError(f"image side {s} is not divisible by {divisor}")
    return int(h), int(w)


@dataclass
class BlobSpec:
    size: tuple[int, int] = (32, 32)
    n_raters: int = 4
    disk_radius_range: tuple[float, float] = (0.15, 0.3)
    center_jitter: float = 0.1
    # deformation parameters in pixels at 128 px; None -> 8 px scaled with size
    deform_scale: float | None = None
    deform_smoothness: float | None = None
    rater_weights: tuple[float, ...] | None = None
    pixel_noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.size = tuple(int(s) for s in self.size)
        self.disk_radius_range = tuple(float(r) for r in self.disk_radius_range)
        if self.rater_weights is not None:
            self.rater_weights = tuple(float(w) for w in self.rater_weights)

    @property
    def alpha(self) -> float:
        if self.deform_scale is not None:
            return float(self.deform_scale)
        return 8.0 * min(self.size) / 128.0

    @property
    def sigma(self) -> float:
        if self.deform_smoothness is not None:
            return float(self.deform_smoothness)
        return 8.0 * min(self.size) / 128.0

    @property
    def weights(self) -> np.ndarray:
        if self.rater_weights is None:
            return np.full(self.n_raters, 1.0 / self.n_raters)
        return np.asarray(self.rater_weights, dtype=float)

    def validate(self, divisor: int | None = None) -> None:
        _check_size(self.size, divisor)
        if self.n_raters < 1:
            raise ValueError("n_raters must be >= 1")
        w = self.weights
        if w.shape != (self.n_raters,):
            raise ValueError(f"need {self.n_raters} rater weights, got {w.shape[0]}")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"rater weights must lie on the simplex, got {w}")
        if self.alpha < 0:
            raise ValueError("deform_scale must be >= 0")
        if self.sigma <= 0:
            raise ValueError("deform_smoothness must be > 0")
        if self.pixel_noise_std < 0:
            raise ValueError("pixel_noise_std must be >= 0")
        lo, hi = self.disk_radius_range
        if not 0 < lo <= hi < 0.5:
            raise ValueError(f"invalid disk radius range {self.disk_radius_range}")
        if lo * min(self.size) < 1.0:
            raise ValueError(
                f"radius range {self.disk_radius_range} gives disks under one pixel "
                f"at {self.size[0]}x{self.size[1]}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["size"] = list(self.size)
        d["disk_radius_range"] = list(self.disk_radius_range)
        if self.rater_weights is not None:
            d["rater_weights"] = list(self.rater_weights)
        return d


@dataclass
class Example:
    id: str
    image: np.ndarray  # (H, W) float32 in [0, 1]
    raters: np.ndarray  # (R, H, W) uint8 in {0, 1}

    @property
    def n_raters(self) -> int:
        return self.raters.shape[0]


@dataclass
class TaskData:
    task_id: str
    examples: list[Example]
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.examples)

    def by_id(self, ids) -> list[Example]:
        lookup = {ex.id: ex for ex in self.examples}
        return [lookup[i] for i in ids]


@dataclass
class Episode:
    target: np.ndarray  # (H, W)
    raters: np.ndarray  # (R, H, W)
    context_images: np.ndarray  # (S, H, W)
    context_masks: np.ndarray  # (S, H, W)
    task_id: str
    seed: int
    target_id: str = ""
    context_ids: tuple[str, ...] = ()

    @property
    def context_size(self) -> int:
        return self.context_images.shape[0]

    def replace(self, **changes) -> "Episode":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return Episode(**d)


def smooth_displacement(rng, shape, alpha, sigma):
    """Smoothed Gaussian displacement field ``(2, H, W)``.

    White noise is smoothed with a Gaussian kernel of width ``sigma`` and
    rescaled by the kernel's L2 norm, so each component has per-pixel
    standard deviation ``alpha`` (in pixels).
    """
    h, w = shape
    noise = rng.standard_normal((2, h, w))
    if alpha == 0:
        return np.zeros((2, h, w))
    delta = np.zeros((h, w))
    delta[h // 2, w // 2] = 1.0
    kernel_norm = np.sqrt(np.sum(ndimage.gaussian_filter(delta, sigma, mode="constant") ** 2))
    smoothed = np.stack(
        [ndimage.gaussian_filter(noise[c], sigma, mode="reflect") for c in range(2)]
    )
    return alpha * smoothed / kernel_norm


def warp(image, displacement, order=1):
    """Sample ``image`` at ``x + displacement(x)``; border pixels clamped."""
    h, w = image.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    coords = np.stack([rows + displacement[0], cols + displacement[1]])
    return ndimage.map_coordinates(image, coords, order=order, mode="nearest")


def _disk(shape, center, radius):
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return ((rows - center[0]) ** 2 + (cols - center[1]) ** 2 <= radius**2).astype(float)


def generate_blob_example(spec: BlobSpec, index: int = 0, divisor: int | None = None):
    """One blob image and its rater masks.

    All raters start from one disk (jittered centre, random radius); each
    rater warps it with its own smoothed deformation.  The image is the
    weighted sum of the warped disks plus Gaussian pixel noise, clamped to
    [0, 1].
    """
    spec.validate(divisor)
    rng = np.random.default_rng([int(spec.seed), int(index)])
    h, w = spec.size
    side = min(h, w)
    jitter = spec.center_jitter * side
    center = (
        (h - 1) / 2 + rng.uniform(-jitter, jitter),
        (w - 1) / 2 + rng.uniform(-jitter, jitter),
    )
    lo, hi = spec.disk_radius_range
    weights = spec.weights
    disk = _disk((h, w), center, rng.uniform(lo, hi) * side)
    image = np.zeros((h, w))
    raters = np.zeros((spec.n_raters, h, w), dtype=np.uint8)
    for i in range(spec.n_raters):
        field_ = smooth_displacement(rng, (h, w), spec.alpha, spec.sigma)
        blob = warp(disk, field_)
        raters[i] = blob >= 0.5
        image += weights[i] * blob
    if not raters.any(axis=(1, 2)).all():
        raise ValueError("blob generation produced an empty rater mask")
    if spec.pixel_noise_std > 0:
        image += rng.normal(0.0, spec.pixel_noise_std, size=(h, w))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return image, raters


def generate_blob_task(spec: BlobSpec, n_examples: int, task_id: str = "blobs") -> TaskData:
    examples = []
    for i in range(n_examples):
        image, raters = generate_blob_example(spec, index=i)
        examples.append(Example(f"{task_id}-{i:05d}", image, raters))
    return TaskData(task_id, examples, {"kind": "blobs", "spec": spec.to_dict()})


SHAPE_CLASSES = ("disk", "square", "triangle", "ellipse", "ring", "cross")


def _shape_mask(kind, shape, center, scale, angle, aspect):
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    y, x = rows - center[0], cols - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u, v = c * x + s * y, -s * x + c * y
    if kind == "disk":
        m = u**2 + v**2 <= scale**2
    elif kind == "square":
        m = np.maximum(abs(u), abs(v)) <= scale * 0.85
    elif kind == "ellipse":
        m = (u / scale) ** 2 + (v / (scale * aspect)) ** 2 <= 1
    elif kind == "ring":
        r2 = u**2 + v**2
        m = (r2 <= scale**2) & (r2 >= (0.55 * scale) ** 2)
    elif kind == "cross":
        arm = 0.35 * scale
        m = ((abs(u) <= arm) & (abs(v) <= scale)) | ((abs(v) <= arm) & (abs(u) <= scale))
    elif kind == "triangle":
        # equilateral triangle with circumradius ``scale``
        m = np.ones_like(u, dtype=bool)
        for k in range(3):
            a = 2 * math.pi * k / 3
            m &= (u * math.cos(a) + v * math.sin(a)) <= scale / 2
    else:
        raise ValueError(f"unknown shape class {kind!r}")
    return m.astype(np.uint8)


def shape_task_params(task_seed: int) -> dict:
    rng = np.random.default_rng([int(task_seed), 0x5EED])
    fg, bg = rng.uniform(0.0, 1.0, size=2)
    if abs(fg - bg) < 0.3:
        fg = min(1.0, bg + 0.4) if bg < 0.6 else bg - 0.4
    return {
        "shape": SHAPE_CLASSES[int(rng.integers(len(SHAPE_CLASSES)))],
        "foreground": float(fg),
        "background": float(bg),
        "scale_range": [float(rng.uniform(0.15, 0.22)), float(rng.uniform(0.25, 0.35))],
        "aspect": float(rng.uniform(0.4, 0.8)),
        "texture_std": float(rng.uniform(0.0, 0.08)),
        "edge_blur": float(rng.uniform(0.3, 1.2)),
    }


def generate_shape_task(task_seed: int, n_examples: int, size=(32, 32)) -> TaskData:
    """A family of single-rater images sharing one shape class and intensity profile."""
    if n_examples < 2:
        raise ValueError("a shape task needs at least 2 examples")
    h, w = _check_size(size)
    params = shape_task_params(task_seed)
    side = min(h, w)
    examples = []
    for i in range(n_examples):
        rng = np.random.default_rng([int(task_seed), int(i)])
        center = (
            (h - 1) / 2 + rng.uniform(-0.12, 0.12) * side,
            (w - 1) / 2 + rng.uniform(-0.12, 0.12) * side,
        )
        scale = rng.uniform(*params["scale_range"]) * side
        angle = rng.uniform(0, 2 * math.pi)
        mask = _shape_mask(params["shape"], (h, w), center, scale, angle, params["aspect"])
        if not mask.any():
            mask = _shape_mask("disk", (h, w), center, scale, 0.0, 1.0)
        soft = ndimage.gaussian_filter(mask.astype(float), params["edge_blur"])
        image = params["background"] + (params["foreground"] - params["background"]) * soft
        image += rng.normal(0.0, params["texture_std"], size=(h, w))
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        examples.append(Example(f"shape{task_seed}-{i:05d}", image, mask[None]))
    return TaskData(f"shape{task_seed}", examples, {"kind": "shape", "task_seed": task_seed, **params})


def sample_episode(pool, context_size, rng_seed, context_pool=None, target_index=None, task_id=None):
    """Sample a target (with all its raters) and ``context_size`` other examples.

    ``pool`` is a :class:`TaskData` or a list of examples.  The context is
    drawn from ``context_pool`` when given (e.g. the dev split while the
    target comes from test), otherwise from ``pool`` itself; the target is
    never part of its own context.  Each context pair uses one uniformly
    drawn rater.
    """
    if isinstance(pool, TaskData):
        task_id = task_id or pool.task_id
        pool = pool.examples
    if isinstance(context_pool, TaskData):
        context_pool = context_pool.examples
    if context_size < 1:
        raise ValueError("context_size must be >= 1")
    if not pool:
        raise ValueError("cannot sample an episode from an empty pool")
    rng = np.random.default_rng(rng_seed)
    if target_index is None:
        target_index = int(rng.integers(len(pool)))
    target = pool[target_index]
    source = pool if context_pool is None else context_pool
    candidates = [ex for ex in source if ex.id != target.id]
    if len(candidates) < context_size:
        raise ValueError(
            f"pool too small: {len(candidates)} context candidates for context_size "
            f"{context_size}"
        )
    chosen = rng.choice(len(candidates), size=context_size, replace=False)
    images, masks, ids = [], [], []
    for j in chosen:
        ex = candidates[int(j)]
        r = int(rng.integers(ex.n_raters))
        images.append(ex.image)
        masks.append(ex.raters[r])
        ids.append(ex.id)
    return Episode(
        target=target.image,
        raters=target.raters,
        context_images=np.stack(images),
        context_masks=np.stack(masks),
        task_id=task_id or "",
        seed=int(rng_seed) if np.ndim(rng_seed) == 0 else 0,
        target_id=target.id,
        context_ids=tuple(ids),
    )


def split_dataset(pool, fractions=(0.6, 0.2, 0.2), seed=0, allow_empty=False):
    """Deterministic disjoint partition into (dev, val, test).

    Val and test sizes are ``round(fraction * n)``; dev takes the rest.
    Empty parts are rejected unless ``allow_empty``.
    """
    items = list(pool.examples if isinstance(pool, TaskData) else pool)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError(f"need three non-negative fractions, got {fractions}")
    if not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(items)
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    n_dev = n - n_val - n_test
    if n_dev < 0:
        raise ValueError("split sizes exceed pool size")
    if not allow_empty and min(n_dev, n_val, n_test) == 0:
        raise ValueError(
            f"empty split: sizes (dev, val, test) = ({n_dev}, {n_val}, {n_test})"
        )
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    return shuffled[:n_dev], shuffled[n_dev : n_dev + n_val], shuffled[n_dev + n_val :]


@dataclass
class Dataset:
    tasks: dict[str, TaskData]
    splits: dict[str, dict[str, list[str]]]
    meta: dict = field(default_factory=dict)

    def split(self, task_id: str, name: str) -> list[Example]:
        return self.tasks[task_id].by_id(self.splits[task_id][name])


def build_dataset(
    blob_spec: BlobSpec | None = None,
    n_blob_examples: int = 0,
    n_shape_tasks: int = 0,
    n_shape_examples: int = 0,
    size=(32, 32),
    fractions=(0.6, 0.2, 0.2),
    seed: int = 0,
) -> Dataset:
    tasks = {}
    if n_blob_examples:
        spec = blob_spec or BlobSpec(size=size, seed=seed)
        tasks["blobs"] = generate_blob_task(spec, n_blob_examples)
    for t in range(n_shape_tasks):
        task = generate_shape_task(seed * 1000 + t, n_shape_examples, size)
        tasks[task.task_id] = task
    if not tasks:
        raise ValueError("dataset has no tasks")
    splits = {}
    for i, (tid, task) in enumerate(tasks.items()):
        dev, val, test = split_dataset(task, fractions, seed=[seed, i])
        splits[tid] = {
            "dev": [e.id for e in dev],
            "val": [e.id for e in val],
            "test": [e.id for e in test],
        }
    meta = {
        "size": list(size),
        "seed": seed,
        "fractions": list(fractions),
        "n_blob_examples": n_blob_examples,
        "n_shape_tasks": n_shape_tasks,
        "n_shape_examples": n_shape_examples,
        "blob_spec": (blob_spec or BlobSpec(size=size, seed=seed)).to_dict()
        if n_blob_examples
        else None,
    }
    return Dataset(tasks, splits, meta)


def save_dataset(dataset: Dataset, root) -> Path:
    """Write ``meta.json`` plus 8-bit image PNGs and 1-bit mask PNGs."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    tasks_meta = {}
    for tid, task in dataset.tasks.items():
        tdir = root / tid
        tdir.mkdir(exist_ok=True)
        entries = []
        for ex in task.examples:
            img = np.round(np.clip(ex.image, 0, 1) * 255).astype(np.uint8)
            Image.fromarray(img, mode="L").save(tdir / f"{ex.id}_image.png")
            for r in range(ex.n_raters):
                mask = Image.fromarray(ex.raters[r].astype(bool))
                mask.save(tdir / f"{ex.id}_rater{r}.png")
            entries.append({"id": ex.id, "n_raters": int(ex.n_raters)})
        tasks_meta[tid] = {
            "params": task.params,
            "examples": entries,
            "splits": dataset.splits[tid],
        }
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        **dataset.meta,
        "tasks": tasks_meta,
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return root


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no dataset metadata at {meta_path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format") != DATASET_FORMAT or meta.get("version") != DATASET_VERSION:
        raise ValueError(
            f"unsupported dataset format {meta.get('format')!r} v{meta.get('version')}"
        )
    tasks, splits = {}, {}
    for tid, tmeta in meta.pop("tasks").items():
        examples = []
        for entry in tmeta["examples"]:
            ex_id = entry["id"]
            img = np.asarray(Image.open(root / tid / f"{ex_id}_image.png").convert("L"))
            raters = np.stack(
                [
                    np.asarray(Image.open(root / tid / f"{ex_id}_rater{r}.png").convert("L")) > 0
                    for r in range(entry["n_raters"])
                ]
            ).astype(np.uint8)
            examples.append(Example(ex_id, (img / 255.0).astype(np.float32), raters))
        tasks[tid] = TaskData(tid, examples, tmeta.get("params", {}))
        splits[tid] = tmeta["splits"]
    meta.pop("format")
    meta.pop("version")
    return Dataset(tasks, splits, meta)
