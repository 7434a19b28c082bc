from __future__ import annotations

import numpy as np
import pytest

from dynstereo.correlation import build_correlation
from dynstereo.data import StereoVideo
from dynstereo.synth import (
    Layer,
    SceneError,
    SceneSpec,
    augment,
    diagnostic_features,
    generate,
    random_spec,
    read_spec,
    spec_from_manifest,
    spec_to_manifest,
    write_scene,
)


def two_layer_spec(frames=3):
    return SceneSpec(seed=0, height=24, width=64, frames=frames, focal=100.0, baseline=0.1,
                     background_depth=2.5, background_texture=11,
                     layers=(Layer(7, "rect", 30.0, 12.0, 9.0, 6.0, 10.0 / 12.0, vx=1.0),))


def test_disparity_values_follow_focal_baseline_over_depth():
    scene = generate(two_layer_spec())
    assert set(np.unique(scene.disparity.values)) == {4.0, 12.0}


@pytest.mark.parametrize("seed", range(6))
def test_photometric_consistency_on_unoccluded_pixels(seed):
    scene = generate(random_spec(seed, 32, 64, 4, max_disparity=12))
    d = scene.disparity.values.astype(int)
    assert np.array_equal(d, scene.disparity.values)
    ok = ~scene.occlusion & scene.in_view
    assert ok.mean() > 0.5
    for t in range(scene.spec.frames):
        ys, xs = np.nonzero(ok[t])
        np.testing.assert_allclose(scene.video.right[t][:, ys, xs - d[t, ys, xs]],
                                   scene.video.left[t][:, ys, xs], atol=1e-6)


def test_occluded_pixels_exist_beside_a_near_layer():
    scene = generate(two_layer_spec())
    assert scene.occlusion.any()
    # layer at left columns [21, 39) with d=12 sits at [9, 27) in the right view;
    # background (d=4) at left columns [13, 21) maps into that span
    row = scene.occlusion[0, 12]
    assert row[13:21].all() and not row[:13].any() and not row[21:].any()


def test_diagnostic_argmax_recovers_disparity():
    scene = generate(two_layer_spec(frames=2))
    feats = diagnostic_features(-scene.disparity.values)
    arg = build_correlation(feats[:, 0], feats[:, 1]).argmax(-1)
    ok = ~scene.occlusion & scene.in_view
    cols = np.arange(64)[None, None]
    assert np.array_equal((cols - arg)[ok], scene.disparity.values[ok].astype(int))


def test_diagnostic_rejects_fractional_shift():
    with pytest.raises(ValueError):
        diagnostic_features(np.full((1, 2, 4), 0.5))


def test_random_spec_is_seeded_and_bounded():
    a, b = random_spec(5), random_spec(5)
    assert a == b and random_spec(6) != a
    assert 0.04 <= a.baseline <= 0.30
    for t in range(a.frames):
        for layer in (None, *a.layers):
            assert a.disparity_of(layer, t) <= 24


def test_validate_rejects_too_large_disparity():
    spec = SceneSpec(seed=0, width=16, focal=100.0, baseline=1.0, background_depth=5.0)
    with pytest.raises(SceneError, match="background disparity"):
        generate(spec)
    with pytest.raises(SceneError):
        random_spec(0, width=20, max_disparity=24)


def test_manifest_round_trip(tmp_path):
    spec = random_spec(3)
    assert spec_from_manifest(spec_to_manifest(spec)) == spec
    scene = generate(random_spec(3, 16, 32, 2, max_disparity=8))
    write_scene(scene, tmp_path / "s")
    assert read_spec(tmp_path / "s" / "manifest.txt") == scene.spec
    assert generate(read_spec(tmp_path / "s" / "manifest.txt")).video.left.tobytes() == scene.video.left.tobytes()


def test_manifest_missing_key_raises():
    m = spec_to_manifest(random_spec(1))
    del m["focal"]
    with pytest.raises(SceneError, match="focal"):
        spec_from_manifest(m)


def test_augment_identity_settings_and_determinism():
    rng = np.random.default_rng(0)
    v = StereoVideo(rng.random((3, 3, 8, 12)), rng.random((3, 3, 8, 12)))
    same = augment(v, 0, saturation=1.0, stretch=1.0, erase_prob=0.0)
    np.testing.assert_allclose(same.left, v.left, atol=1e-6)
    np.testing.assert_allclose(same.right, v.right, atol=1e-6)
    a, b = augment(v, 4), augment(v, 4)
    assert np.array_equal(a.right, b.right)
    gray = augment(v, 0, saturation=0.0, stretch=1.0, erase_prob=0.0)
    np.testing.assert_allclose(gray.left.std(axis=1), 0, atol=1e-6)


def test_augment_erasing_fills_mean_color():
    v = StereoVideo(np.zeros((2, 3, 20, 20)), np.ones((2, 3, 20, 20)) * 0.5)
    out = augment(v, 1, saturation=1.0, stretch=1.0, erase_prob=1.0)
    np.testing.assert_allclose(out.right, 0.5, atol=1e-6)
