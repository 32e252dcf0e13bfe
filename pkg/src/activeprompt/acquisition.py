"""Acquisition scoring and query selection over posterior ensembles.

Disagreement among K posterior-sampled probability maps is summarized
per pixel as mutual information (predictive entropy minus the mean
per-sample entropy) or as plain predictive entropy; the next query is
the top-scoring unqueried candidate. The error-driven selector (which
peeks at ground truth) and the seeded random score map live here too.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .backbone import FeatureMap
from .core import EPS, BinaryMask, ContractViolation, binary_entropy
from .head import HeadParams, ensemble_forward

STRATEGY_NAMES = ("bald", "entropy", "random", "oracle", "human_replay")


class CandidatesExhausted(RuntimeError):
    """Every admissible candidate location has already been queried."""


class ScoreKind(str, Enum):
    MUTUAL_INFORMATION = "mutual_information"
    PREDICTIVE_ENTROPY = "predictive_entropy"
    RANDOM = "random"
    ORACLE_ERROR = "oracle_error"


@dataclass(frozen=True)
class EnsembleMaps:
    """Stack of K probability maps, one per posterior sample."""

    probs: np.ndarray  # (K, H, W), already clamped

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] < 1:
            raise ContractViolation("ensemble must be a nonempty (K, H, W) stack")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def k(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[1:]

    def mean_map(self) -> np.ndarray:
        return self.probs.mean(axis=0)


@dataclass(frozen=True)
class ScoreMap:
    values: np.ndarray
    kind: ScoreKind

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractViolation("score map must be 2-D")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("scores must be finite")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class StrategyKind:
    """Query strategy selector plus its strategy-specific config."""

    name: str
    seed: int | None = None
    replay_path: str | Path | None = None

    def __post_init__(self):
        if self.name not in STRATEGY_NAMES:
            raise ContractViolation(f"unknown strategy {self.name!r}")
        if self.name == "human_replay" and self.replay_path is None:
            raise ContractViolation("human_replay needs a replay log path")

    @property
    def uses_ensemble(self) -> bool:
        return self.name in ("bald", "entropy")


def predictive_ensemble(
    features: FeatureMap, samples: list[HeadParams]
) -> EnsembleMaps:
    """One dropout-off forward pass per posterior sample, in sample order.

    Runs the single-precision batched inference path; probability maps
    land within float32 resolution of per-sample head_forward calls.
    """
    if not samples:
        raise ContractViolation("need at least one posterior sample")
    arch = samples[0].arch
    if features.values.shape[2] != arch.in_channels:
        raise ContractViolation("feature channels do not match head input")
    for s in samples[1:]:
        if s.arch != arch:
            raise ContractViolation("posterior samples must share one architecture")
    probs = ensemble_forward(features.values, samples)
    return EnsembleMaps(np.clip(probs.astype(np.float64), EPS, 1.0 - EPS))


def mutual_information_map(ensemble: EnsembleMaps) -> ScoreMap:
    """Per-pixel mutual information in nats: h2(mean p) - mean h2(p_k).

    Tiny negatives from floating-point cancellation are clamped to zero.
    """
    mean = ensemble.mean_map()
    mi = binary_entropy(mean) - binary_entropy(ensemble.probs).mean(axis=0)
    return ScoreMap(np.maximum(mi, 0.0), ScoreKind.MUTUAL_INFORMATION)


def predictive_entropy_map(ensemble: EnsembleMaps) -> ScoreMap:
    return ScoreMap(binary_entropy(ensemble.mean_map()), ScoreKind.PREDICTIVE_ENTROPY)


def random_score_map(shape: tuple[int, int], seed) -> ScoreMap:
    """Uniform(0,1) scores: argmax selection becomes a uniform random query."""
    return ScoreMap(np.random.default_rng(seed).random(shape), ScoreKind.RANDOM)


def select_next(
    scores: ScoreMap,
    queried: set[tuple[int, int]],
    stride: int = 1,
) -> tuple[int, int]:
    """Argmax over the candidate lattice, excluding queried locations.

    Ties break toward the lowest row-major linear index. A stride > 1
    restricts candidates to a subsampled lattice.
    """
    h, w = scores.shape
    valid = np.zeros((h, w), dtype=bool)
    valid[::stride, ::stride] = True
    for (r, c) in queried:
        if 0 <= r < h and 0 <= c < w:
            valid[r, c] = False
    if not valid.any():
        raise CandidatesExhausted("all candidate locations already queried")
    masked = np.where(valid, scores.values, -np.inf)
    flat = int(np.argmax(masked))
    return (flat // w, flat % w)


_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def oracle_error_map(predicted: BinaryMask, gt: BinaryMask) -> ScoreMap:
    if predicted.shape != gt.shape:
        raise ContractViolation("mask shapes differ")
    err = np.abs(
        predicted.values.astype(np.int16) - gt.values.astype(np.int16)
    ).astype(np.float64)
    return ScoreMap(err, ScoreKind.ORACLE_ERROR)


def oracle_select(
    predicted: BinaryMask, gt: BinaryMask, queried: set[tuple[int, int]]
) -> tuple[int, int] | None:
    """Most interior unqueried pixel of the largest 4-connected error region.

    Error pixels are |predicted - gt| = 1 minus already-queried locations.
    "Interior" means maximal Euclidean distance to the component's
    boundary (nearest in-image non-component pixel); all ties break toward
    the lowest row-major linear index. Returns None when no error remains.
    """
    if predicted.shape != gt.shape:
        raise ContractViolation("mask shapes differ")
    err = predicted.values != gt.values
    for (r, c) in queried:
        if 0 <= r < err.shape[0] and 0 <= c < err.shape[1]:
            err[r, c] = False
    if not err.any():
        return None
    labels, n_comp = ndimage.label(err, structure=_FOUR_CONN)
    sizes = np.bincount(labels.ravel())[1:]
    largest = np.flatnonzero(sizes == sizes.max()) + 1
    w = err.shape[1]
    best = None
    for cid in largest:
        comp = labels == cid
        if comp.all():
            dist = np.full(comp.shape, np.inf)
        else:
            dist = ndimage.distance_transform_edt(comp)
        masked = np.where(comp, dist, -np.inf)
        flat = int(np.argmax(masked))
        if best is None or flat < best[0] * w + best[1]:
            best = (flat // w, flat % w)
    return best


# ------------------------------------------------------------------ wire exports


def score_map_payload(scores: ScoreMap) -> dict:
    """JSON-serializable export: header plus the row-major float32 grid."""
    v32 = scores.values.astype(np.float32)
    return {
        "height": int(scores.shape[0]),
        "width": int(scores.shape[1]),
        "kind": scores.kind.value,
        "max_value": float(v32.max()) if v32.size else 0.0,
        "values": [float(x) for x in v32.ravel()],
    }


def score_map_png(scores: ScoreMap) -> bytes:
    """8-bit grayscale heatmap (display-only; the float grid is exact)."""
    from PIL import Image as PILImage

    v = scores.values
    top = v.max()
    if top > 0:
        u8 = np.round(np.clip(v, 0.0, None) / top * 255.0).astype(np.uint8)
    else:
        u8 = np.zeros(v.shape, dtype=np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8, mode="L").save(buf, format="PNG")
    return buf.getvalue()
