"""Frozen backbone: feature layout, mask scoring, purity, monotonicity."""

import math

import numpy as np
import pytest

from activeprompt.backbone import (
    SCORE_THRESHOLD,
    SIGMA_MASK,
    ToyBackbone,
    prompt_influence_score,
)
from activeprompt.core import Image, Prompt, PromptSet
from activeprompt.synth import SceneSpec, generate_scene


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SceneSpec("blobs", seed=21))


@pytest.fixture(scope="module")
def backbone():
    return ToyBackbone()


def uniform_image(h=32, w=32, value=0.5):
    return Image(np.full((h, w), value))


class TestFeatures:
    def test_empty_prompts_channels(self, scene, backbone):
        img, _ = scene
        f = backbone.compute_features(img, PromptSet()).values
        assert f.shape == (64, 64, 32)
        assert np.all(f[:, :, 8:24] == 0.0)
        assert np.all(f[:, :, 26] == 1.0)
        assert np.all(f[:, :, 27] == 1.0)
        assert np.all(f[:, :, 28] == 0.0)
        assert np.all(f[:, :, 29] == 0.0)
        assert np.all(f[:, :, 30] == 0.0)
        assert np.all(f[:, :, 31] == 1.0)

    def test_inclusion_kernel_peaks_at_prompt(self, scene, backbone):
        img, _ = scene
        ps = PromptSet().add(Prompt(20, 30, 1))
        f = backbone.compute_features(img, ps).values
        assert f[20, 30, 8] == pytest.approx(1.0, abs=1e-12)

    def test_similarity_channel_on_uniform_image(self, backbone):
        img = uniform_image()
        ps = PromptSet().add(Prompt(10, 12, 1))
        f = backbone.compute_features(img, ps).values
        assert f[10, 12, 12] == pytest.approx(1.0, abs=1e-12)

    def test_shape_fixed_regardless_of_prompts(self, scene, backbone):
        img, gt = scene
        ps = PromptSet()
        for i in range(4):
            f = backbone.compute_features(img, ps).values
            assert f.shape == (64, 64, 32)
            ps = ps.add(Prompt(i, i, int(gt.values[i, i])))

    def test_purity_bit_identical(self, scene, backbone):
        img, _ = scene
        ps = PromptSet().add(Prompt(5, 6, 1)).add(Prompt(40, 41, 0))
        a = backbone.predict_mask(img, ps)
        b = backbone.predict_mask(img, ps)
        assert np.array_equal(a.features.values, b.features.values)
        assert np.array_equal(a.mask.values, b.mask.values)
        assert np.array_equal(a.score_map, b.score_map)


class TestPredictMask:
    def test_no_prompts_empty_mask(self, scene, backbone):
        img, _ = scene
        out = backbone.predict_mask(img, PromptSet())
        assert out.mask.area == 0

    def test_uniform_image_disk(self, backbone):
        # score = exp(-r^2 / (2*24^2)) > 0.05 inside radius 24*sqrt(2 ln 20)
        img = uniform_image(64, 64)
        ps = PromptSet().add(Prompt(32, 32, 1))
        out = backbone.predict_mask(img, ps)
        radius = SIGMA_MASK * math.sqrt(2.0 * math.log(1.0 / SCORE_THRESHOLD))
        rr, cc = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
        d = np.hypot(rr - 32, cc - 32)
        expected = (d < radius).astype(np.uint8)
        assert np.array_equal(out.mask.values, expected)

    def test_cancellation_at_shared_location(self, backbone):
        img = uniform_image()
        s = prompt_influence_score(img.values, [(10, 10)], [(10, 10)])
        assert s[10, 10] == pytest.approx(0.0, abs=1e-15)
        assert not (s[10, 10] > SCORE_THRESHOLD)

    def test_monotone_prompt_response(self, scene, backbone):
        img, _ = scene
        rng = np.random.default_rng(3)
        base_incl = [(20, 20)]
        base_excl = [(50, 10)]
        s0 = prompt_influence_score(img.values, base_incl, base_excl)
        for _ in range(10):
            loc = (int(rng.integers(64)), int(rng.integers(64)))
            s_incl = prompt_influence_score(img.values, base_incl + [loc], base_excl)
            s_excl = prompt_influence_score(img.values, base_incl, base_excl + [loc])
            assert (s_incl >= s0 - 1e-15).all()
            assert (s_excl <= s0 + 1e-15).all()

    def test_mask_requires_inclusion(self, scene, backbone):
        img, _ = scene
        ps = PromptSet().add(Prompt(8, 8, 0))
        out = backbone.predict_mask(img, ps)
        assert out.mask.area == 0
