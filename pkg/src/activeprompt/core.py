"""Shared value types and elementary pixel-grid math.

Coordinates are integer (row, col), row-major. All maps (images, masks,
probability and score grids) share that layout. Every type here is an
immutable value; the wrapped numpy arrays are marked read-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probabilities are clamped into [EPS, 1 - EPS] before any logarithm.
EPS = 1e-7


class ContractViolation(ValueError):
    """An operation was called outside its stated preconditions."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """Grayscale image with per-pixel intensity in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractViolation("image must be a 2-D array")
        if v.shape[0] < 8 or v.shape[1] < 8:
            raise ContractViolation(f"image must be at least 8x8, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("image intensities must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ContractViolation("image intensities must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BinaryMask:
    """Per-pixel bit grid; 1 = foreground."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ContractViolation("mask must be a 2-D array")
        if v.dtype != np.uint8:
            u = v.astype(np.uint8)
            if not np.array_equal(u, v):
                raise ContractViolation("mask values must be 0/1")
            v = u
        if not np.isin(v, (0, 1)).all():
            raise ContractViolation("mask values must be 0/1")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def empty(cls, height: int, width: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class Prompt:
    """A point prompt: (row, col) plus inclusion (1) / exclusion (0) label."""

    row: int
    col: int
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ContractViolation(f"prompt label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "row", int(self.row))
        object.__setattr__(self, "col", int(self.col))
        object.__setattr__(self, "label", int(self.label))

    @property
    def location(self) -> tuple[int, int]:
        return (self.row, self.col)


@dataclass(frozen=True)
class PromptSet:
    """Ordered prompt history; the evolving conditioning context.

    No two prompts may share a location. ``iteration`` counts interaction
    rounds and equals the prompt count for sessions seeded empty.
    """

    prompts: tuple[Prompt, ...] = ()
    iteration: int = 0

    def __post_init__(self):
        prompts = tuple(self.prompts)
        locs = [p.location for p in prompts]
        if len(set(locs)) != len(locs):
            raise ContractViolation("duplicate prompt location")
        object.__setattr__(self, "prompts", prompts)

    def add(self, prompt: Prompt) -> "PromptSet":
        """Return a new set with `prompt` appended and the round counter bumped."""
        if prompt.location in self.locations():
            raise ContractViolation(f"location {prompt.location} already prompted")
        return PromptSet(self.prompts + (prompt,), self.iteration + 1)

    def locations(self) -> set[tuple[int, int]]:
        return {p.location for p in self.prompts}

    def inclusions(self) -> tuple[Prompt, ...]:
        return tuple(p for p in self.prompts if p.label == 1)

    def exclusions(self) -> tuple[Prompt, ...]:
        return tuple(p for p in self.prompts if p.label == 0)

    def __len__(self) -> int:
        return len(self.prompts)


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel foreground probability, clamped into [EPS, 1 - EPS]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractViolation("probability map must be a 2-D array")
        if not np.all(np.isfinite(v)):
            raise ContractViolation("probabilities must be finite")
        if v.min() < -1e-12 or v.max() > 1.0 + 1e-12:
            raise ContractViolation("probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", _freeze(np.clip(v, EPS, 1.0 - EPS)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks.

    Two empty masks agree perfectly by convention (returns 1.0).
    """
    if a.shape != b.shape:
        raise ContractViolation(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = np.count_nonzero(a.values & b.values)
    union = np.count_nonzero(a.values | b.values)
    if union == 0:
        return 1.0
    return inter / union


def binary_entropy(p):
    """Binary entropy h2(p) in nats, elementwise over arrays or scalars.

    p is clamped into [EPS, 1 - EPS] before the logarithms, so endpoints
    are safe and return a value below 2e-6 instead of nan.
    """
    q = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    h = -q * np.log(q) - (1.0 - q) * np.log1p(-q)
    if np.isscalar(p) or np.ndim(p) == 0:
        return float(h)
    return h
