"""Frozen promptable segmenter: deterministic features and mask prediction.

This is a desk-scale stand-in for a frozen foundation segmenter. It is
pure and stateless: identical (image, prompts) inputs produce
bit-identical outputs, and nothing here is ever trained. The feature
layout is fixed at 32 channels; the mask comes from a kernel-weighted
prompt influence score. Any object with the same two methods can replace
it downstream (see ``PromptableBackbone``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import ndimage

from .core import BinaryMask, ContractViolation, Image, PromptSet

FEATURE_CHANNELS = 32

# Mask scoring constants: spatial kernel width, intensity kernel width,
# and the acceptance threshold on the signed influence score.
SIGMA_MASK = 24.0
SIGMA_INTENSITY = 0.1
SCORE_THRESHOLD = 0.05

# Spatial influence widths for the prompt feature channels.
_INFLUENCE_SIGMAS = (4.0, 8.0, 16.0, 32.0)


@dataclass(frozen=True)
class FeatureMap:
    """H x W x 32 feature grid; a deterministic function of (image, prompts)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != FEATURE_CHANNELS:
            raise ContractViolation(
                f"feature map must be HxWx{FEATURE_CHANNELS}, got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ContractViolation("feature values must be finite")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BackboneOutput:
    features: FeatureMap
    mask: BinaryMask
    score_map: np.ndarray


class PromptableBackbone(Protocol):
    """Contract a real foundation-model adapter would implement."""

    def compute_features(self, image: Image, prompts: PromptSet) -> FeatureMap: ...

    def predict_mask(self, image: Image, prompts: PromptSet) -> BackboneOutput: ...


def prompt_influence_score(
    image_values: np.ndarray,
    inclusion_points: list[tuple[int, int]],
    exclusion_points: list[tuple[int, int]],
) -> np.ndarray:
    """Signed influence score s(q): inclusion pull minus exclusion push.

    w(q, p) = exp(-||q - p||^2 / (2 sigma_m^2)) * exp(-(I(q) - I(p))^2 / (2 sigma_I^2))
    """
    h, w = image_values.shape
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    score = np.zeros((h, w), dtype=np.float64)
    for pts, sign in ((inclusion_points, 1.0), (exclusion_points, -1.0)):
        for (pr, pc) in pts:
            d2 = (rr - pr) ** 2 + (cc - pc) ** 2
            di2 = (image_values - image_values[pr, pc]) ** 2
            score += sign * np.exp(-d2 / (2.0 * SIGMA_MASK**2)) * np.exp(
                -di2 / (2.0 * SIGMA_INTENSITY**2)
            )
    return score


class ToyBackbone:
    """Deterministic feature extractor + mask predictor over point prompts.

    Observationally pure: the per-image channel cache only memoizes values
    that are a function of the (immutable) image alone.
    """

    def __init__(self):
        self._image_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _check(self, image: Image, prompts: PromptSet) -> None:
        for p in prompts.prompts:
            if not (0 <= p.row < image.height and 0 <= p.col < image.width):
                raise ContractViolation(f"prompt {p.location} out of bounds")

    def _image_channels(self, image: Image) -> np.ndarray:
        """Channels 0-7 and 24-25, which depend on the image only."""
        key = id(image.values)
        hit = self._image_cache.get(key)
        if hit is not None and hit[0] is image.values:
            return hit[1]
        img = image.values
        h, w = img.shape
        f = np.zeros((h, w, FEATURE_CHANNELS), dtype=np.float64)
        f[:, :, 0] = img
        blurs = {s: ndimage.gaussian_filter(img, s, mode="reflect") for s in (1, 2, 4, 8)}
        for i, s in enumerate((1, 2, 4, 8)):
            f[:, :, 1 + i] = blurs[s]
        for i, s in enumerate((1, 2)):
            gy, gx = np.gradient(blurs[s])
            f[:, :, 5 + i] = np.hypot(gy, gx)
        mean5 = ndimage.uniform_filter(img, size=5, mode="reflect")
        mean5_sq = ndimage.uniform_filter(img * img, size=5, mode="reflect")
        f[:, :, 7] = np.maximum(mean5_sq - mean5 * mean5, 0.0)
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        f[:, :, 24] = rr / max(h - 1, 1)
        f[:, :, 25] = cc / max(w - 1, 1)
        f.setflags(write=False)
        self._image_cache[key] = (img, f)
        return f

    def compute_features(self, image: Image, prompts: PromptSet) -> FeatureMap:
        return self.predict_mask(image, prompts).features

    def predict_mask(self, image: Image, prompts: PromptSet) -> BackboneOutput:
        self._check(image, prompts)
        img = image.values
        h, w = img.shape
        incl = [p.location for p in prompts.inclusions()]
        excl = [p.location for p in prompts.exclusions()]

        f = self._image_channels(image).copy()
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        for base, pts in ((8, incl), (16, excl)):
            if not pts:
                continue  # channels stay zero
            d2 = np.stack([(rr - r) ** 2 + (cc - c) ** 2 for (r, c) in pts])
            sim = np.stack(
                [
                    np.exp(-((img - img[r, c]) ** 2) / (2.0 * SIGMA_INTENSITY**2))
                    for (r, c) in pts
                ]
            )
            for i, sp in enumerate(_INFLUENCE_SIGMAS):
                spatial = np.exp(-d2 / (2.0 * sp * sp))
                f[:, :, base + i] = spatial.max(axis=0)
                f[:, :, base + 4 + i] = (spatial * sim).max(axis=0)

        norm = float(max(h, w))
        for ch, pts in ((26, incl), (27, excl)):
            if pts:
                d = np.sqrt(
                    np.min(
                        np.stack([(rr - r) ** 2 + (cc - c) ** 2 for (r, c) in pts]),
                        axis=0,
                    )
                )
                f[:, :, ch] = np.minimum(d / norm, 1.0)
            else:
                f[:, :, ch] = 1.0
        f[:, :, 28] = len(incl) / 15.0
        f[:, :, 29] = len(excl) / 15.0

        score = prompt_influence_score(img, incl, excl)
        f[:, :, 30] = score
        f[:, :, 31] = 1.0

        if incl:
            mask = (score > SCORE_THRESHOLD).astype(np.uint8)
        else:
            mask = np.zeros((h, w), dtype=np.uint8)
        return BackboneOutput(FeatureMap(f), BinaryMask(mask), score)
