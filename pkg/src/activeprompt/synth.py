"""Synthetic scene generation, training prompt sets, and dataset splits.

Scenes are grayscale images of a single foreground region (blobs, a ring,
or a thin dilated polyline) over a darker background with Gaussian noise.
Everything is deterministic for a fixed seed. Scenes persist as binary
PGM (P5) files plus a JSON manifest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import BinaryMask, ContractViolation, Image, Prompt, PromptSet

PROFILES = ("blobs", "rings", "thin")

# Fixed order of the six training prompt-set strategies.
PROMPT_STRATEGIES = (
    "random",
    "boundary",
    "center",
    "grid",
    "mixed",
    "uncertainty",
)

_MIN_AREA_FRAC = 0.02
_MAX_AREA_FRAC = 0.60
_MAX_ATTEMPTS = 100


class GenerationError(RuntimeError):
    """Rejection sampling failed to produce an admissible scene."""


@dataclass(frozen=True)
class SceneSpec:
    profile: str
    size: int = 64
    foreground_mean: float = 0.7
    background_mean: float = 0.3
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ContractViolation(f"unknown profile {self.profile!r}")
        if self.size < 8:
            raise ContractViolation("scene size must be at least 8")
        if self.foreground_mean == self.background_mean:
            raise ContractViolation("foreground and background means must differ")
        if self.noise_sigma < 0:
            raise ContractViolation("noise sigma must be nonnegative")


@dataclass(frozen=True)
class TrainingExample:
    """Image + prompt set + ground truth, with labels read from the mask."""

    image: Image
    prompts: PromptSet
    gt_mask: BinaryMask

    def __post_init__(self):
        if self.image.shape != self.gt_mask.shape:
            raise ContractViolation("image and mask shapes differ")
        for p in self.prompts.prompts:
            if not (0 <= p.row < self.image.height and 0 <= p.col < self.image.width):
                raise ContractViolation(f"prompt {p.location} out of bounds")
            if p.label != int(self.gt_mask.values[p.row, p.col]):
                raise ContractViolation(
                    f"prompt label at {p.location} contradicts ground truth"
                )


def _grid(size):
    rr, cc = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return rr.astype(np.float64), cc.astype(np.float64)


def _blobs_mask(size, rng):
    rr, cc = _grid(size)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
        a = rng.uniform(size / 10, size / 4)
        b = rng.uniform(size / 10, size / 4)
        theta = rng.uniform(0, np.pi)
        u = (rr - cy) * np.cos(theta) + (cc - cx) * np.sin(theta)
        v = -(rr - cy) * np.sin(theta) + (cc - cx) * np.cos(theta)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return mask


def _rings_mask(size, rng):
    rr, cc = _grid(size)
    cy, cx = rng.uniform(0.35 * size, 0.65 * size, size=2)
    r_out = rng.uniform(size / 6, size / 3)
    r_in = r_out * rng.uniform(0.45, 0.75)
    d = np.hypot(rr - cy, cc - cx)
    return (d <= r_out) & (d > r_in)


def _thin_mask(size, rng):
    # 4-segment polyline rasterized densely, then dilated to 2 px width
    # by unioning the (0,0),(0,1),(1,0),(1,1) shifts.
    pts = rng.uniform(2, size - 3, size=(5, 2))
    line = np.zeros((size, size), dtype=bool)
    for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
        n = 4 * size
        t = np.linspace(0.0, 1.0, n)
        rows = np.clip(np.round(r0 + t * (r1 - r0)).astype(int), 0, size - 1)
        cols = np.clip(np.round(c0 + t * (c1 - c0)).astype(int), 0, size - 1)
        line[rows, cols] = True
    mask = np.zeros_like(line)
    for dr in (0, 1):
        for dc in (0, 1):
            mask[dr:, dc:] |= line[: size - dr, : size - dc]
    return mask


_PROFILE_FNS = {"blobs": _blobs_mask, "rings": _rings_mask, "thin": _thin_mask}


def generate_scene(spec: SceneSpec) -> tuple[Image, BinaryMask]:
    """Deterministically draw one scene; rejection-sample the mask area."""
    rng = np.random.default_rng(spec.seed)
    n_pix = spec.size * spec.size
    for _ in range(_MAX_ATTEMPTS):
        mask = _PROFILE_FNS[spec.profile](spec.size, rng)
        frac = mask.sum() / n_pix
        if _MIN_AREA_FRAC <= frac <= _MAX_AREA_FRAC:
            break
    else:
        raise GenerationError(
            f"no admissible {spec.profile} mask after {_MAX_ATTEMPTS} attempts"
        )
    base = np.where(mask, spec.foreground_mean, spec.background_mean)
    img = base + rng.normal(0.0, spec.noise_sigma, size=(spec.size, spec.size))
    return Image(np.clip(img, 0.0, 1.0)), BinaryMask(mask.astype(np.uint8))


def boundary_pixels(mask: BinaryMask) -> np.ndarray:
    """Bool grid of mask pixels with at least one 4-connected background neighbor."""
    m = mask.values.astype(bool)
    eroded = ndimage.binary_erosion(
        m, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]), border_value=0
    )
    return m & ~eroded


def _pick_from(rng, candidates, taken):
    """Draw an untaken (row, col) uniformly from a boolean candidate grid."""
    idx = np.flatnonzero(candidates)
    for _ in range(_MAX_ATTEMPTS):
        if idx.size == 0:
            break
        flat = int(idx[rng.integers(idx.size)])
        loc = (flat // candidates.shape[1], flat % candidates.shape[1])
        if loc not in taken:
            return loc
    return None


def _grid_points(shape, count):
    g = int(np.ceil(np.sqrt(count)))
    rows = np.linspace(0, shape[0] - 1, g + 2)[1:-1]
    cols = np.linspace(0, shape[1] - 1, g + 2)[1:-1]
    pts = [(int(round(r)), int(round(c))) for r in rows for c in cols]
    return pts


def generate_training_prompt_sets(
    image: Image, gt: BinaryMask, seed: int
) -> list[PromptSet]:
    """Six prompt sets (one per strategy), 3-10 prompts each, labels from gt.

    Strategies: uniform random; boundary-focused (within 5 px of a mask
    boundary pixel); center-biased Gaussian around the mask centroid
    (sigma = size/8); uniform grid lattice; mixed (alternating the
    others); and intensity-midpoint sampling standing in for
    uncertainty-driven placement. Draws that cannot be satisfied fall
    back to uniform random.
    """
    if gt.area == 0:
        raise ContractViolation("ground-truth mask is empty")
    rng = np.random.default_rng(seed)
    h, w = image.shape
    all_pix = np.ones((h, w), dtype=bool)

    bnd = boundary_pixels(gt)
    if bnd.any():
        near_boundary = ndimage.distance_transform_edt(~bnd) <= 5.0
    else:
        near_boundary = all_pix
    centroid = ndimage.center_of_mass(gt.values)
    sigma_c = max(h, w) / 8.0
    if gt.area < h * w:
        fg_mean = float(image.values[gt.values == 1].mean())
        bg_mean = float(image.values[gt.values == 0].mean())
        midpoint = 0.5 * (fg_mean + bg_mean)
    else:
        midpoint = 0.5
    ambiguous = np.abs(image.values - midpoint) <= 0.1

    def draw_random(taken, _state):
        return _pick_from(rng, all_pix, taken)

    def draw_boundary(taken, _state):
        return _pick_from(rng, near_boundary, taken)

    def draw_center(taken, _state):
        for _ in range(_MAX_ATTEMPTS):
            r = int(round(rng.normal(centroid[0], sigma_c)))
            c = int(round(rng.normal(centroid[1], sigma_c)))
            if 0 <= r < h and 0 <= c < w and (r, c) not in taken:
                return (r, c)
        return None

    def draw_grid(taken, state):
        pts = state.setdefault("pts", _grid_points((h, w), 10))
        while pts:
            loc = pts.pop(0)
            if loc not in taken:
                return loc
        return None

    def draw_uncertainty(taken, _state):
        return _pick_from(rng, ambiguous, taken)

    basic = [draw_random, draw_boundary, draw_center, draw_grid, draw_uncertainty]

    def draw_mixed(taken, state):
        i = state.setdefault("i", 0)
        state["i"] = i + 1
        return basic[i % len(basic)](taken, state.setdefault("sub", {}))

    drawers = {
        "random": draw_random,
        "boundary": draw_boundary,
        "center": draw_center,
        "grid": draw_grid,
        "mixed": draw_mixed,
        "uncertainty": draw_uncertainty,
    }

    sets = []
    for name in PROMPT_STRATEGIES:
        count = int(rng.integers(3, 11))
        taken: set[tuple[int, int]] = set()
        prompts = []
        state: dict = {}
        for _ in range(count):
            loc = drawers[name](taken, state)
            if loc is None:
                loc = _pick_from(rng, all_pix, taken)
            if loc is None:
                break
            taken.add(loc)
            prompts.append(Prompt(loc[0], loc[1], int(gt.values[loc])))
        sets.append(PromptSet(tuple(prompts), iteration=0))
    return sets


def split_dataset(n: int, seed: int = 42) -> tuple[list[int], list[int], list[int]]:
    """Seed-deterministic 70/15/15 index partition (floor arithmetic)."""
    if n < 7:
        raise ContractViolation(f"need at least 7 items to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(0.7 * n))
    n_val = int(np.floor(0.15 * n))
    train = order[:n_train]
    val = order[n_train : n_train + n_val]
    test = order[n_train + n_val :]
    return train.tolist(), val.tolist(), test.tolist()


# ---------------------------------------------------------------- PGM + manifest


def write_pgm(path, values: np.ndarray) -> None:
    """Binary 8-bit PGM (P5)."""
    v = np.asarray(values, dtype=np.uint8)
    header = f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + v.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM: {path}")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM supported")
    pos += 1
    return np.frombuffer(data[pos : pos + h * w], dtype=np.uint8).reshape(h, w)


def image_to_pgm_bytes(image: Image) -> np.ndarray:
    return np.round(image.values * 255.0).astype(np.uint8)


def image_from_pgm(values: np.ndarray) -> Image:
    return Image(values.astype(np.float64) / 255.0)


def mask_to_pgm_bytes(mask: BinaryMask) -> np.ndarray:
    return (mask.values * 255).astype(np.uint8)


def mask_from_pgm(values: np.ndarray) -> BinaryMask:
    return BinaryMask((values >= 128).astype(np.uint8))


def write_manifest(path, entries: list[dict]) -> None:
    """Manifest is a JSON array of {id, image_path, mask_path, split}."""
    Path(path).write_text(json.dumps(entries, indent=2) + "\n")


def read_manifest(path) -> list[dict]:
    return json.loads(Path(path).read_text())


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    image: Image
    gt_mask: BinaryMask
    split: str


def write_scene_dir(
    out_dir, scenes: list[tuple[Image, BinaryMask]], seed: int = 42
) -> None:
    """Persist scenes as PGM pairs plus a manifest with a 70/15/15 split."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, val, test = split_dataset(len(scenes), seed=seed)
    split_of = {}
    for i in train:
        split_of[i] = "train"
    for i in val:
        split_of[i] = "val"
    for i in test:
        split_of[i] = "test"
    entries = []
    for i, (img, mask) in enumerate(scenes):
        sid = f"scene_{i:04d}"
        img_name = f"{sid}.pgm"
        mask_name = f"{sid}_mask.pgm"
        write_pgm(out / img_name, image_to_pgm_bytes(img))
        write_pgm(out / mask_name, mask_to_pgm_bytes(mask))
        entries.append(
            {
                "id": sid,
                "image_path": img_name,
                "mask_path": mask_name,
                "split": split_of[i],
            }
        )
    write_manifest(out / "manifest.json", entries)


def load_scene_dir(data_dir) -> list[SceneRecord]:
    """Read every scene listed in a directory's manifest."""
    root = Path(data_dir)
    entries = read_manifest(root / "manifest.json")
    out = []
    for e in entries:
        img = image_from_pgm(read_pgm(root / e["image_path"]))
        mask = mask_from_pgm(read_pgm(root / e["mask_path"]))
        out.append(SceneRecord(e["id"], img, mask, e["split"]))
    return out


def discover_datasets(data_dir) -> dict[str, list[SceneRecord]]:
    """One dataset if the dir holds a manifest, else one per child dir."""
    root = Path(data_dir)
    if (root / "manifest.json").exists():
        return {root.name: load_scene_dir(root)}
    found = {}
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "manifest.json").exists():
            found[child.name] = load_scene_dir(child)
    if not found:
        raise FileNotFoundError(f"no manifest.json under {root}")
    return found
