"""Scene generation, prompt-set strategies, splits, and PGM round-trips."""

import numpy as np
import pytest

from activeprompt.core import BinaryMask, ContractViolation
from activeprompt.synth import (
    PROMPT_STRATEGIES,
    SceneSpec,
    TrainingExample,
    boundary_pixels,
    generate_scene,
    generate_training_prompt_sets,
    image_from_pgm,
    image_to_pgm_bytes,
    mask_from_pgm,
    mask_to_pgm_bytes,
    read_pgm,
    split_dataset,
    write_pgm,
)


def brute_force_perimeter(mask: np.ndarray) -> int:
    """Discrete perimeter: pixel edges facing background or the image border."""
    h, w = mask.shape
    count = 0
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                    count += 1
    return count


class TestGenerateScene:
    def test_deterministic(self):
        spec = SceneSpec("blobs", seed=123)
        img1, m1 = generate_scene(spec)
        img2, m2 = generate_scene(spec)
        assert np.array_equal(img1.values, img2.values)
        assert np.array_equal(m1.values, m2.values)

    @pytest.mark.parametrize("profile", ["blobs", "rings", "thin"])
    def test_area_constraint(self, profile):
        for seed in range(30):
            _, mask = generate_scene(SceneSpec(profile, seed=seed))
            frac = mask.area / (64 * 64)
            assert 0.02 <= frac <= 0.60

    def test_shapes_match_spec_size(self):
        img, mask = generate_scene(SceneSpec("rings", size=48, seed=9))
        assert img.shape == (48, 48)
        assert mask.shape == (48, 48)

    def test_thin_profile_is_thin(self):
        # area/perimeter stays below 2 px for a 2-px-wide polyline
        for seed in range(100):
            _, mask = generate_scene(SceneSpec("thin", seed=seed))
            per = brute_force_perimeter(mask.values)
            assert mask.area / per < 2.0

    def test_invalid_spec(self):
        with pytest.raises(ContractViolation):
            SceneSpec("squares", seed=0)
        with pytest.raises(ContractViolation):
            SceneSpec("blobs", foreground_mean=0.5, background_mean=0.5)


@pytest.fixture(scope="module")
def blob_scene():
    return generate_scene(SceneSpec("blobs", seed=42))


class TestTrainingPromptSets:
    @pytest.fixture
    def scene(self, blob_scene):
        return blob_scene

    def test_six_sets_with_count_bounds(self, scene):
        img, gt = scene
        sets = generate_training_prompt_sets(img, gt, seed=0)
        assert len(sets) == len(PROMPT_STRATEGIES)
        for ps in sets:
            assert 3 <= len(ps) <= 10

    def test_labels_read_from_gt(self, scene):
        img, gt = scene
        for seed in range(10):
            for ps in generate_training_prompt_sets(img, gt, seed=seed):
                for p in ps.prompts:
                    assert p.label == gt.values[p.row, p.col]

    def test_boundary_set_near_boundary(self, scene):
        img, gt = scene
        bnd = np.argwhere(boundary_pixels(gt))
        sets = generate_training_prompt_sets(img, gt, seed=7)
        boundary_set = sets[PROMPT_STRATEGIES.index("boundary")]
        for p in boundary_set.prompts:
            d = np.sqrt(((bnd - [p.row, p.col]) ** 2).sum(axis=1)).min()
            assert d <= 5.0

    def test_deterministic(self, scene):
        img, gt = scene
        a = generate_training_prompt_sets(img, gt, seed=3)
        b = generate_training_prompt_sets(img, gt, seed=3)
        assert [ps.prompts for ps in a] == [ps.prompts for ps in b]

    def test_empty_gt_rejected(self, scene):
        img, _ = scene
        with pytest.raises(ContractViolation):
            generate_training_prompt_sets(img, BinaryMask.empty(64, 64), seed=0)

    def test_example_rejects_contradicting_label(self, scene):
        img, gt = scene
        loc = tuple(np.argwhere(gt.values == 1)[0])
        from activeprompt.core import Prompt, PromptSet

        bad = PromptSet((Prompt(loc[0], loc[1], 0),), 0)
        with pytest.raises(ContractViolation):
            TrainingExample(img, bad, gt)


class TestSplitDataset:
    def test_sizes_20(self):
        train, val, test = split_dataset(20, seed=1)
        assert (len(train), len(val), len(test)) == (14, 3, 3)

    def test_sizes_100_seed42(self):
        train, val, test = split_dataset(100, seed=42)
        assert (len(train), len(val), len(test)) == (70, 15, 15)

    def test_deterministic(self):
        assert split_dataset(31, seed=5) == split_dataset(31, seed=5)

    def test_disjoint_exhaustive(self):
        for n in (7, 13, 64):
            train, val, test = split_dataset(n, seed=2)
            combined = sorted(train + val + test)
            assert combined == list(range(n))

    def test_too_small(self):
        with pytest.raises(ContractViolation):
            split_dataset(6)


class TestPgm:
    def test_image_round_trip(self, tmp_path):
        img, mask = generate_scene(SceneSpec("rings", seed=4))
        p = tmp_path / "img.pgm"
        write_pgm(p, image_to_pgm_bytes(img))
        back = image_from_pgm(read_pgm(p))
        # 8-bit quantization: within half a level
        assert np.abs(back.values - img.values).max() <= 0.5 / 255 + 1e-12

    def test_mask_round_trip_exact(self, tmp_path):
        _, mask = generate_scene(SceneSpec("thin", seed=8))
        p = tmp_path / "mask.pgm"
        write_pgm(p, mask_to_pgm_bytes(mask))
        raw = read_pgm(p)
        assert set(np.unique(raw)) <= {0, 255}
        assert np.array_equal(mask_from_pgm(raw).values, mask.values)
