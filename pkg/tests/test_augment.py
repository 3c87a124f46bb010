import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tychekit.augment import (
    FAMILIES,
    AugmentationSpec,
    ContractViolation,
    SampledTransform,
    TransformSpec,
    apply,
    family_from_list,
    get_family,
    ictta_augment_episode,
    sample_transform,
)
from tychekit.synthdata import Episode


def forced(spec):
    return AugmentationSpec(
        spec.family, tuple(TransformSpec(t.name, 1.0, t.params) for t in spec.transforms)
    )


def off(spec):
    return AugmentationSpec(
        spec.family, tuple(TransformSpec(t.name, 0.0, t.params) for t in spec.transforms)
    )


def _episode(rng, s=3, size=16):
    return Episode(
        target=rng.random((size, size)).astype(np.float32),
        raters=(rng.random((2, size, size)) > 0.5).astype(np.uint8),
        context_images=rng.random((s, size, size)).astype(np.float32),
        context_masks=(rng.random((s, size, size)) > 0.5).astype(np.float32),
        task_id="t",
        seed=0,
    )


def test_ictta_families_are_intensity_only():
    for name in ("ictta", "ictta_high", "ictta_light", "none"):
        assert get_family(name).intensity_only
    assert not get_family("heavy").intensity_only
    with pytest.raises(ContractViolation):
        AugmentationSpec("ictta", (TransformSpec("horizontal_flip", 0.5),))
    with pytest.raises(ValueError, match="unknown augmentation family"):
        get_family("medium")


def test_spec_validation():
    with pytest.raises(ValueError, match="outside"):
        TransformSpec("flip_intensities", 1.5).validate()
    with pytest.raises(ValueError, match="missing"):
        TransformSpec("gaussian_noise", 0.5, {"mu": 0}).validate()
    with pytest.raises(ValueError, match="out of bounds"):
        TransformSpec("gaussian_blur", 0.5, {"sigma": 1.0, "k": 4}).validate()
    with pytest.raises(ValueError, match="unknown transform"):
        TransformSpec("solarize", 0.5).validate()
    spec = family_from_list("custom", [{"name": "gaussian_noise", "p": 1, "params": {"mu": 0, "sigma": [0, 0.1]}}])
    assert spec.transforms[0].params["sigma"] == (0, 0.1)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_sampling_extremes(name):
    spec = FAMILIES[name]
    assert sample_transform(off(spec), 3).is_identity
    t = sample_transform(forced(spec), 3)
    assert t.names == [x.name for x in spec.transforms]
    for (tname, params), tspec in zip(t.steps, spec.transforms):
        for key, val in params.items():
            if key == "shift":
                bound = tspec.params["translate"][1]
                assert all(-bound <= s <= bound for s in val)
                continue
            rng_ = tspec.params[key]
            lo, hi = (rng_, rng_) if np.isscalar(rng_) else rng_
            assert lo <= val <= hi
    assert sample_transform(spec, 11) == sample_transform(spec, 11)


def test_identity_returns_input(rng):
    img = rng.random((16, 16))
    mask = rng.random((16, 16)) > 0.5
    out, m = apply(SampledTransform("heavy", ()), img, mask)
    assert out is img and m is mask


def test_flip_intensities(rng):
    img = rng.random((16, 16))
    t = SampledTransform("ictta", (("flip_intensities", {}),))
    out, m = apply(t, img)
    assert np.allclose(out, 1 - img) and m is None
    t_geo = SampledTransform("in_task", (("flip_intensities", {}),))
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    _, m2 = apply(t_geo, img, mask)
    assert np.array_equal(m2, mask)


def test_gaussian_noise_moments():
    img = np.full((128, 128), 0.5)
    t = SampledTransform("ictta", (("gaussian_noise", {"mu": 0.0, "sigma": 0.05}),), seed=8)
    out, _ = apply(t, img)
    diff = out - img
    assert abs(diff.mean()) < 0.01
    assert abs(diff.std() - 0.05) < 0.01


def test_brightness_contrast_and_clamp():
    img = np.array([[0.0, 0.5], [0.8, 1.0]])
    t = SampledTransform("ictta", (("brightness_contrast", {"brightness": 0.1, "contrast": 1.5}),))
    out, _ = apply(t, img)
    assert np.allclose(out, np.clip(1.5 * img + 0.1, 0, 1))


def test_blur_and_sharpen_preserve_constant_images():
    img = np.full((16, 16), 0.3)
    for step in (("gaussian_blur", {"sigma": 0.8, "k": 5}), ("sharpness", {"sharpness": 5.0})):
        out, _ = apply(SampledTransform("ictta", (step,)), img)
        assert np.allclose(out, img)


def test_ictta_transform_refuses_masks(rng):
    t = SampledTransform("ictta", (("flip_intensities", {}),))
    with pytest.raises(ContractViolation):
        apply(t, rng.random((8, 8)), np.ones((8, 8)))


def test_geometric_needs_mask(rng):
    t = SampledTransform("heavy", (("horizontal_flip", {}),))
    with pytest.raises(ContractViolation):
        apply(t, rng.random((8, 8)))


def test_geometric_moves_image_and_mask_together(rng):
    img = rng.random((16, 16))
    mask = (img > 0.5).astype(np.uint8)
    flip = SampledTransform("heavy", (("horizontal_flip", {}),))
    out, m = apply(flip, img, mask)
    assert np.allclose(out, img[:, ::-1]) and np.array_equal(m, mask[:, ::-1])

    # a quarter turn about the centre lands on the pixel grid; border pixels
    # may fall a rounding error outside and take the fill value
    rot = SampledTransform("heavy", (("random_affine", {"degrees": 90.0, "scale": 1.0, "shift": (0, 0)}),))
    out, m = apply(rot, img, mask)
    inner = (slice(1, -1), slice(1, -1))
    turned = [np.rot90(img, r)[inner] for r in (1, -1)]
    assert any(np.allclose(out[inner], x, atol=1e-9) for x in turned)
    assert np.array_equal(m[inner], (out[inner] > 0.5).astype(np.uint8))


def test_elastic_is_replayable(rng):
    img = rng.random((32, 32))
    mask = (img > 0.5).astype(np.uint8)
    t = sample_transform(forced(AugmentationSpec("x", (TransformSpec("elastic", 1, {"alpha": (1, 2), "sigma": (6, 8)}),))), 5)
    a = apply(t, img, mask)
    b = apply(t, img, mask)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert not np.allclose(a[0], img)
    assert set(np.unique(a[1])) <= {0, 1}


def test_sobel_label(rng):
    mask = np.zeros((16, 16), np.uint8)
    mask[4:12, 4:12] = 1
    t = SampledTransform("task_level", (("sobel_edges_label", {}),))
    img = rng.random((16, 16))
    out, edges = apply(t, img, mask)
    assert np.array_equal(out, img.astype(out.dtype))
    assert edges[8, 8] == 0 and edges[4, 8] == 1 and edges[0, 0] == 0


def test_ictta_episode_labels_untouched(rng):
    ep = _episode(rng)
    spec = forced(get_family("ictta"))
    out = ictta_augment_episode(ep, spec, seed=3)
    assert out.context_masks is ep.context_masks and out.raters is ep.raters
    assert not np.allclose(out.target, ep.target)
    other = ictta_augment_episode(ep, spec, seed=4)
    assert not np.array_equal(out.target, other.target)
    same = ictta_augment_episode(ep, get_family("none"), seed=3)
    assert same is ep


def test_ictta_episode_shared_vs_per_image(rng):
    ep = _episode(rng)
    spec = AugmentationSpec("ictta", (TransformSpec("brightness_contrast", 1.0, {"brightness": (-0.1, 0.1), "contrast": (0.5, 1.5)}),))
    shared = ictta_augment_episode(ep, spec, seed=1)
    t = sample_transform(spec, 1)
    c, b = t.steps[0][1]["contrast"], t.steps[0][1]["brightness"]
    assert np.allclose(shared.context_images, np.clip(c * ep.context_images + b, 0, 1), atol=1e-6)
    per = ictta_augment_episode(ep, spec, seed=1, per_image=True)
    assert not np.allclose(per.context_images, shared.context_images)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(FAMILIES)), st.integers(0, 2**31))
def test_outputs_stay_in_unit_range(name, seed):
    rng = np.random.default_rng(seed)
    img = rng.random((16, 16)).astype(np.float32)
    mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
    t = sample_transform(get_family(name), seed)
    out, m = apply(t, img, None if t.intensity_only and name in ("ictta", "ictta_high", "ictta_light", "none") else mask)
    assert out.dtype == np.float32 and out.min() >= 0 and out.max() <= 1
    if m is not None:
        assert set(np.unique(m)) <= {0, 1}
