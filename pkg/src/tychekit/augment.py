"""Seeded augmentation pipelines.

An :class:`AugmentationSpec` lists transforms with an inclusion probability
and parameter ranges.  :func:`sample_transform` draws a concrete, replayable
:class:`SampledTransform` from it, and :func:`apply` runs that transform on an
image and (optionally) its masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .synthdata import Episode, smooth_displacement, warp

__all__ = [
    "ContractViolation",
    "TransformSpec",
    "AugmentationSpec",
    "SampledTransform",
    "INTENSITY_TRANSFORMS",
    "GEOMETRIC_TRANSFORMS",
    "LABEL_TRANSFORMS",
    "FAMILIES",
    "get_family",
    "family_from_list",
    "sample_transform",
    "apply",
    "ictta_augment_episode",
]


class ContractViolation(ValueError):
    """An augmentation was asked to do something its family forbids."""


INTENSITY_TRANSFORMS = {
    "gaussian_noise",
    "gaussian_blur",
    "flip_intensities",
    "sharpness",
    "brightness_contrast",
}
GEOMETRIC_TRANSFORMS = {"random_affine", "elastic", "horizontal_flip", "vertical_flip"}
LABEL_TRANSFORMS = {"sobel_edges_label"}
ICTTA_FAMILIES = {"ictta", "ictta_high", "ictta_light", "none"}

# parameter names each transform needs; values are (lo, hi) ranges or constants
_PARAMS = {
    "gaussian_noise": {"mu", "sigma"},
    "gaussian_blur": {"sigma", "k"},
    "flip_intensities": set(),
    "sharpness": {"sharpness"},
    "brightness_contrast": {"brightness", "contrast"},
    "random_affine": {"degrees", "translate", "scale"},
    "elastic": {"alpha", "sigma"},
    "horizontal_flip": set(),
    "vertical_flip": set(),
    "sobel_edges_label": set(),
}


@dataclass(frozen=True)
class TransformSpec:
    name: str
    p: float
    params: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.name not in _PARAMS:
            raise ValueError(f"unknown transform {self.name!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"{self.name}: probability {self.p} outside [0, 1]")
        missing = _PARAMS[self.name] - set(self.params)
        extra = set(self.params) - _PARAMS[self.name]
        if missing or extra:
            raise ValueError(
                f"{self.name}: missing params {sorted(missing)}, unknown {sorted(extra)}"
            )
        for key, val in self.params.items():
            lo, hi = _range(val)
            if lo > hi:
                raise ValueError(f"{self.name}.{key}: empty range {val}")
        checks = {
            ("gaussian_noise", "sigma"): lambda lo, hi: lo >= 0,
            ("gaussian_blur", "sigma"): lambda lo, hi: lo > 0,
            ("gaussian_blur", "k"): lambda lo, hi: lo == hi and lo >= 1 and lo % 2 == 1,
            ("brightness_contrast", "contrast"): lambda lo, hi: lo >= 0,
            ("sharpness", "sharpness"): lambda lo, hi: lo >= 0,
            ("random_affine", "translate"): lambda lo, hi: 0 <= lo and hi <= 1,
            ("random_affine", "scale"): lambda lo, hi: lo > 0,
            ("elastic", "alpha"): lambda lo, hi: lo >= 0,
            ("elastic", "sigma"): lambda lo, hi: lo > 0,
        }
        for key in self.params:
            check = checks.get((self.name, key))
            if check and not check(*_range(self.params[key])):
                raise ValueError(f"{self.name}.{key}: value {self.params[key]} out of bounds")


def _range(val):
    if isinstance(val, (list, tuple)):
        lo, hi = val
        return float(lo), float(hi)
    return float(val), float(val)


@dataclass(frozen=True)
class AugmentationSpec:
    family: str
    transforms: tuple[TransformSpec, ...] = ()

    def __post_init__(self):
        for t in self.transforms:
            t.validate()
        if self.family in ICTTA_FAMILIES and not self.intensity_only:
            bad = [t.name for t in self.transforms if t.name not in INTENSITY_TRANSFORMS]
            raise ContractViolation(
                f"family {self.family!r} must be intensity-only, found {bad}"
            )

    @property
    def intensity_only(self) -> bool:
        return all(t.name in INTENSITY_TRANSFORMS for t in self.transforms)


def _t(name, p, **params):
    return TransformSpec(name, p, params)


_BC = dict(brightness=(-0.1, 0.1), contrast=(0.5, 1.5))

FAMILIES: dict[str, AugmentationSpec] = {
    "none": AugmentationSpec("none"),
    "in_task": AugmentationSpec(
        "in_task",
        (
            _t("random_affine", 0.25, degrees=(-25, 25), translate=(0, 0.1), scale=(0.9, 1.1)),
            _t("brightness_contrast", 0.5, **_BC),
            _t("elastic", 0.8, alpha=(1, 2.5), sigma=(7, 9)),
            _t("sharpness", 0.25, sharpness=5),
            _t("flip_intensities", 0.5),
            _t("gaussian_blur", 0.25, sigma=(0.1, 1.0), k=5),
            _t("gaussian_noise", 0.25, mu=(0, 0.05), sigma=(0, 0.05)),
        ),
    ),
    "task_level": AugmentationSpec(
        "task_level",
        (
            _t("random_affine", 0.5, degrees=(0, 360), translate=(0, 0.2), scale=(0.8, 1.1)),
            _t("brightness_contrast", 0.5, brightness=(-0.1, 0.1), contrast=(0.8, 1.2)),
            _t("gaussian_blur", 0.5, sigma=(0.1, 1.1), k=5),
            _t("gaussian_noise", 0.5, mu=(0, 0.05), sigma=(0, 0.05)),
            _t("elastic", 0.5, alpha=(1, 2), sigma=(6, 8)),
            _t("sharpness", 0.5, sharpness=5),
            _t("horizontal_flip", 0.5),
            _t("vertical_flip", 0.5),
            _t("sobel_edges_label", 0.5),
        ),
    ),
    "ictta": AugmentationSpec(
        "ictta",
        (
            _t("gaussian_blur", 0.25, sigma=(0.1, 1.0), k=5),
            _t("gaussian_noise", 0.25, mu=(0, 0.05), sigma=(0, 0.05)),
            _t("flip_intensities", 0.5),
            _t("sharpness", 0.25, sharpness=5),
            _t("brightness_contrast", 0.25, **_BC),
        ),
    ),
    "ictta_high": AugmentationSpec(
        "ictta_high",
        (
            _t("gaussian_blur", 0.25, sigma=(0.5, 1.0), k=5),
            _t("gaussian_noise", 0.5, mu=(0.4, 0.5), sigma=(0.1, 0.2)),
            _t("flip_intensities", 0.5),
            _t("sharpness", 0.25, sharpness=5),
            _t("brightness_contrast", 0.25, **_BC),
        ),
    ),
    "ictta_light": AugmentationSpec(
        "ictta_light",
        (
            _t("gaussian_blur", 0.25, sigma=(0.1, 1.0), k=5),
            _t("gaussian_noise", 0.25, mu=(0, 0.05), sigma=(0, 0.05)),
        ),
    ),
    "light": AugmentationSpec(
        "light",
        (
            _t("gaussian_blur", 0.5, sigma=(0.1, 1.5), k=7),
            _t("gaussian_noise", 0.5, mu=(0, 0.1), sigma=(0, 0.1)),
            _t("elastic", 0.25, alpha=(1, 2), sigma=(6, 8)),
        ),
    ),
    "heavy": AugmentationSpec(
        "heavy",
        (
            _t("gaussian_blur", 0.5, sigma=(0.1, 1.5), k=7),
            _t("gaussian_noise", 0.25, mu=(0, 0.1), sigma=(0, 0.1)),
            _t("elastic", 0.25, alpha=(1, 2), sigma=(6, 8)),
            _t("random_affine", 0.5, degrees=(0, 360), translate=(0, 0.2), scale=(0.8, 1.1)),
            _t("brightness_contrast", 0.5, **_BC),
            _t("horizontal_flip", 0.5),
            _t("vertical_flip", 0.5),
            _t("sharpness", 0.5, sharpness=5),
        ),
    ),
}


def get_family(name: str) -> AugmentationSpec:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown augmentation family {name!r}; known: {sorted(FAMILIES)}") from None


def family_from_list(family: str, items: list[dict]) -> AugmentationSpec:
    """Build a custom family from ``[{"name": ..., "p": ..., "params": {...}}, ...]``."""
    transforms = []
    for item in items:
        unknown = set(item) - {"name", "p", "params"}
        if unknown:
            raise ValueError(f"unknown transform keys {sorted(unknown)}")
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in item.get("params", {}).items()}
        transforms.append(TransformSpec(item["name"], float(item["p"]), params))
    return AugmentationSpec(family, tuple(transforms))


@dataclass(frozen=True)
class SampledTransform:
    family: str
    steps: tuple[tuple[str, dict], ...]  # included transforms with concrete params
    seed: int = 0

    @property
    def is_identity(self) -> bool:
        return not self.steps

    @property
    def intensity_only(self) -> bool:
        return all(name in INTENSITY_TRANSFORMS for name, _ in self.steps)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.steps]


def sample_transform(spec: AugmentationSpec, seed) -> SampledTransform:
    """Include each transform with its probability and draw its parameters
    uniformly from their ranges."""
    rng = np.random.default_rng(seed)
    steps = []
    for t in spec.transforms:
        # draw for every transform so later inclusions do not shift with p
        include = rng.random() < t.p
        params = {}
        for key in sorted(t.params):
            lo, hi = _range(t.params[key])
            params[key] = float(rng.uniform(lo, hi)) if hi > lo else lo
        if t.name == "random_affine":
            # translate is a magnitude bound; draw signed per-axis shifts
            bound = params.pop("translate")
            params["shift"] = (float(rng.uniform(-bound, bound)), float(rng.uniform(-bound, bound)))
        if include:
            steps.append((t.name, params))
    return SampledTransform(spec.family, tuple(steps), int(rng.integers(2**31)))


def _blur_kernel(sigma, k):
    x = np.arange(k) - (k - 1) / 2
    kern = np.exp(-0.5 * (x / sigma) ** 2)
    return kern / kern.sum()


def _sharpen(image, amount):
    smooth = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]], dtype=float) / 13.0
    blurred = ndimage.convolve(image, smooth, mode="reflect")
    return image + amount * (image - blurred)


def _affine_matrix(shape, degrees, scale, shift):
    h, w = shape
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    # output -> input mapping for ndimage.affine_transform, about the centre
    inv = np.array([[c, s], [-s, c]]) / scale
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    offset_px = np.array([shift[0] * h, shift[1] * w])
    offset = center - inv @ (center + offset_px)
    return inv, offset


def _size_scale(shape):
    # elastic parameters are quoted for 128 px images
    return min(shape) / 128.0


def _apply_geometric(name, params, image, masks, rng):
    if name == "horizontal_flip":
        return image[:, ::-1].copy(), None if masks is None else masks[:, :, ::-1].copy()
    if name == "vertical_flip":
        return image[::-1].copy(), None if masks is None else masks[:, ::-1].copy()
    if name == "random_affine":
        mat, off = _affine_matrix(image.shape, params["degrees"], params["scale"], params["shift"])
        out = ndimage.affine_transform(image, mat, off, order=1, mode="constant", cval=0.0)
        if masks is not None:
            masks = np.stack(
                [ndimage.affine_transform(m, mat, off, order=0, mode="constant") for m in masks]
            )
        return out, masks
    if name == "elastic":
        s = _size_scale(image.shape)
        field_ = smooth_displacement(rng, image.shape, params["alpha"] * s, params["sigma"] * s)
        out = warp(image, field_, order=1)
        if masks is not None:
            masks = np.stack([warp(m, field_, order=0) for m in masks])
        return out, masks
    raise ValueError(f"not a geometric transform: {name}")


def _apply_intensity(name, params, image, rng):
    if name == "gaussian_noise":
        return image + rng.normal(params["mu"], params["sigma"], size=image.shape)
    if name == "gaussian_blur":
        kern = _blur_kernel(params["sigma"], int(params["k"]))
        out = ndimage.convolve1d(image, kern, axis=0, mode="reflect")
        return ndimage.convolve1d(out, kern, axis=1, mode="reflect")
    if name == "flip_intensities":
        return 1.0 - image
    if name == "sharpness":
        return _sharpen(image, params["sharpness"] - 1.0)
    if name == "brightness_contrast":
        return params["contrast"] * image + params["brightness"]
    raise ValueError(f"not an intensity transform: {name}")


def _sobel_edges(mask):
    m = mask.astype(float)
    mag = np.hypot(ndimage.sobel(m, axis=0, mode="nearest"), ndimage.sobel(m, axis=1, mode="nearest"))
    return (mag > 0).astype(np.uint8)


def apply(transform: SampledTransform, image, mask=None, index: int = 0):
    """Apply a sampled transform; returns ``(image, mask)``.

    ``mask`` may be ``(H, W)`` or a stack ``(R, H, W)``; geometric transforms
    move every mask with the image (nearest-neighbour) and label transforms
    replace masks.  ``index`` selects the random stream for stochastic
    transforms so several images under one transform get distinct noise.
    """
    if transform.is_identity:
        return image, mask
    if mask is not None and transform.family in ICTTA_FAMILIES:
        raise ContractViolation(
            f"{transform.family!r} transforms are intensity-only and never touch masks"
        )
    if mask is None and any(
        n in GEOMETRIC_TRANSFORMS or n in LABEL_TRANSFORMS for n in transform.names
    ):
        raise ContractViolation("geometric and label transforms need the mask")
    dtype = np.asarray(image).dtype
    out = np.asarray(image, dtype=float)
    masks = None
    if mask is not None:
        mask = np.asarray(mask)
        masks = mask[None] if mask.ndim == 2 else mask
    rng = np.random.default_rng([transform.seed, int(index)])
    for step, (name, params) in enumerate(transform.steps):
        if name in INTENSITY_TRANSFORMS:
            out = _apply_intensity(name, params, out, rng)
        elif name in GEOMETRIC_TRANSFORMS:
            # the geometric stream is shared across images so masks and
            # every image of an episode see the same warp
            geo_rng = np.random.default_rng([transform.seed, 10_000 + step])
            out, masks = _apply_geometric(name, params, out, masks, geo_rng)
        else:
            masks = np.stack([_sobel_edges(m) for m in masks])
        out = np.clip(out, 0.0, 1.0)
    out = out.astype(dtype if np.issubdtype(dtype, np.floating) else np.float32)
    if masks is not None:
        masks = (masks > 0).astype(mask.dtype)
        if mask.ndim == 2:
            masks = masks[0]
    return out, masks


def ictta_augment_episode(episode: Episode, spec: AugmentationSpec, seed, per_image=False) -> Episode:
    """Apply one intensity-only transform to the target and every context image.

    Labels and raters are passed through untouched.  With ``per_image`` each
    context image gets its own independently sampled transform.
    """
    if not spec.intensity_only:
        raise ContractViolation(f"family {spec.family!r} is not intensity-only")
    transform = sample_transform(spec, seed)
    if transform.is_identity and not per_image:
        return episode
    target, _ = apply(transform, episode.target, index=0)
    images = []
    for j, img in enumerate(episode.context_images):
        t = sample_transform(spec, [*np.atleast_1d(seed), j + 1]) if per_image else transform
        images.append(apply(t, img, index=j + 1)[0])
    return episode.replace(target=target, context_images=np.stack(images))
