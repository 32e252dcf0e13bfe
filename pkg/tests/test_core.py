"""Value types and pixel math: identities, conventions, and edge cases."""

import math

import numpy as np
import pytest

from activeprompt.core import (
    EPS,
    BinaryMask,
    ContractViolation,
    Image,
    ProbabilityMap,
    Prompt,
    PromptSet,
    binary_entropy,
    iou,
)


def mask_from(rows):
    return BinaryMask(np.array(rows, dtype=np.uint8))


class TestImage:
    def test_rejects_small(self):
        with pytest.raises(ContractViolation):
            Image(np.zeros((4, 4)))

    def test_rejects_out_of_range(self):
        v = np.zeros((8, 8))
        v[0, 0] = 1.5
        with pytest.raises(ContractViolation):
            Image(v)

    def test_rejects_nan(self):
        v = np.zeros((8, 8))
        v[3, 3] = np.nan
        with pytest.raises(ContractViolation):
            Image(v)

    def test_values_read_only(self):
        img = Image(np.zeros((8, 8)))
        with pytest.raises(ValueError):
            img.values[0, 0] = 1.0


class TestIoU:
    def test_identical_nonempty(self):
        a = mask_from([[1, 1], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0]])
        assert iou(a, a) == 1.0

    def test_disjoint(self):
        a = mask_from([[1, 0], [0, 0]])
        b = mask_from([[0, 1], [0, 0]])
        assert iou(a, b) == 0.0

    def test_hand_counted_third(self):
        # a = top row, b = left column: intersection 1 pixel, union 3
        a = mask_from([[1, 1], [0, 0]])
        b = mask_from([[1, 0], [1, 0]])
        assert iou(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_both_empty_is_one(self):
        a = BinaryMask.empty(4, 4)
        assert iou(a, a) == 1.0

    def test_symmetry_random(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a = BinaryMask(rng.integers(0, 2, (6, 5)).astype(np.uint8))
            b = BinaryMask(rng.integers(0, 2, (6, 5)).astype(np.uint8))
            assert iou(a, b) == iou(b, a)
            assert iou(a, a) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            iou(BinaryMask.empty(4, 4), BinaryMask.empty(4, 5))


class TestBinaryEntropy:
    def test_half_is_ln2(self):
        assert binary_entropy(0.5) == pytest.approx(math.log(2.0), abs=1e-15)

    def test_endpoint_within_clamp_tolerance(self):
        assert 0.0 <= binary_entropy(0.0) <= 2e-6
        assert 0.0 <= binary_entropy(1.0) <= 2e-6

    def test_point_nine(self):
        # -0.9 ln 0.9 - 0.1 ln 0.1, evaluated independently
        expected = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
        assert expected == pytest.approx(0.325083, abs=1e-6)
        assert binary_entropy(0.9) == pytest.approx(expected, abs=1e-12)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(5)
        p = rng.random(5000)
        h = binary_entropy(p)
        assert np.allclose(h, binary_entropy(1.0 - p), atol=1e-12)
        assert (h >= 0).all()
        assert (h <= math.log(2.0) + 1e-15).all()

    def test_vectorized_matches_scalar(self):
        p = np.array([0.1, 0.5, 0.73])
        h = binary_entropy(p)
        for i, x in enumerate(p):
            assert h[i] == binary_entropy(float(x))


class TestPromptSet:
    def test_rejects_duplicate_location(self):
        ps = PromptSet().add(Prompt(1, 2, 1))
        with pytest.raises(ContractViolation):
            ps.add(Prompt(1, 2, 0))

    def test_iteration_counts_inserts(self):
        ps = PromptSet()
        for i in range(5):
            ps = ps.add(Prompt(i, 0, 1))
        assert ps.iteration == 5
        assert len(ps) == 5

    def test_label_validation(self):
        with pytest.raises(ContractViolation):
            Prompt(0, 0, 2)

    def test_partitions(self):
        ps = PromptSet().add(Prompt(0, 0, 1)).add(Prompt(0, 1, 0)).add(Prompt(1, 0, 1))
        assert len(ps.inclusions()) == 2
        assert len(ps.exclusions()) == 1


class TestProbabilityMap:
    def test_clamps_endpoints(self):
        pm = ProbabilityMap(np.array([[0.0, 1.0], [0.5, 0.25]]))
        assert pm.values.min() == EPS
        assert pm.values.max() == 1.0 - EPS

    def test_rejects_out_of_range(self):
        with pytest.raises(ContractViolation):
            ProbabilityMap(np.array([[1.5, 0.0]]))
