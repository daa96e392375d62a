"""Jigsaw permutation of a reference image.

Square patches are cut on a grid anchored at the foreground bounding box,
patches with too much background are dropped, the survivors are shuffled and
mirrored, and the result is packed into a mosaic whose width is fixed to the
canvas width while its height follows the patch count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, SparseReferenceError
from .imaging import mask_bbox, resize_bilinear

DEFAULT_CANVAS_WIDTH = 832


@dataclass(frozen=True)
class JigsawConfig:
    patch_fraction: float = 0.10
    background_threshold: float = 0.10
    canvas_width: int = DEFAULT_CANVAS_WIDTH
    flip_horizontal_prob: float = 0.5
    flip_vertical_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.patch_fraction <= 1:
            raise ConfigError("patch_fraction must lie in (0, 1]")
        if not 0 <= self.background_threshold <= 1:
            raise ConfigError("background_threshold must lie in [0, 1]")
        if int(self.canvas_width) != self.canvas_width or self.canvas_width < 1:
            raise ConfigError("canvas_width must be a positive integer")
        for p in (self.flip_horizontal_prob, self.flip_vertical_prob):
            if not 0 <= p <= 1:
                raise ConfigError("flip probabilities must lie in [0, 1]")

    def patch_side(self, width: int, height: int) -> int:
        # round half up
        return max(1, int(math.floor(self.patch_fraction * min(width, height) + 0.5)))


@dataclass
class PatchSet:
    patches: np.ndarray  # (N, s, s, 3)
    patch_side: int
    source_grid_coords: list[tuple[int, int]]  # pixel (row, col) origin of each patch
    flips: np.ndarray | None = None  # (N, 2) bool: horizontal, vertical
    discarded: list[tuple[int, int, float]] = field(default_factory=list)
    fractions: list[float] = field(default_factory=list)  # background fraction of kept patches

    def __len__(self):
        return len(self.patches)


def _check_inputs(reference: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    reference = np.asarray(reference, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if reference.ndim != 3 or reference.shape[2] != 3:
        raise ShapeError(f"reference must be (H, W, 3), got {reference.shape}")
    if mask.shape != reference.shape[:2]:
        raise ShapeError(f"mask {mask.shape} does not match reference {reference.shape[:2]}")
    return reference, mask


def extract_patches(reference: np.ndarray, mask: np.ndarray, cfg: JigsawConfig) -> PatchSet:
    reference, mask = _check_inputs(reference, mask)
    box = mask_bbox(mask)
    if box is None:
        raise SparseReferenceError("reference too sparse: mask has no foreground")
    r0, r1, c0, c1 = box
    H, W = mask.shape
    s = cfg.patch_side(W, H)

    tiles, coords, fractions, discarded = [], [], [], []
    # cells must lie fully inside the image
    for r in range(r0, min(r1, H - s + 1), s):
        for c in range(c0, min(c1, W - s + 1), s):
            frac = 1.0 - np.count_nonzero(mask[r:r + s, c:c + s]) / (s * s)
            if frac <= cfg.background_threshold:
                tiles.append(reference[r:r + s, c:c + s])
                coords.append((r, c))
                fractions.append(frac)
            else:
                discarded.append((r, c, frac))
    if not tiles:
        raise SparseReferenceError(
            f"reference too sparse: no {s}x{s} patch has <= "
            f"{cfg.background_threshold:.0%} background"
        )
    return PatchSet(np.stack(tiles), s, coords, None, discarded, fractions)


def permute_patches(ps: PatchSet, cfg: JigsawConfig) -> PatchSet:
    """Seeded shuffle plus independent horizontal/vertical mirrors per patch."""
    n = len(ps)
    if n == 0:
        raise SparseReferenceError("cannot permute an empty patch set")
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(n)
    flip_h = rng.random(n) < cfg.flip_horizontal_prob
    flip_v = rng.random(n) < cfg.flip_vertical_prob
    out = ps.patches[order].copy()
    for i in range(n):
        if flip_h[i]:
            out[i] = out[i][:, ::-1]
        if flip_v[i]:
            out[i] = out[i][::-1]
    return PatchSet(
        patches=out,
        patch_side=ps.patch_side,
        source_grid_coords=[ps.source_grid_coords[k] for k in order],
        flips=np.stack([flip_h, flip_v], axis=1),
        discarded=list(ps.discarded),
        fractions=[ps.fractions[k] for k in order] if ps.fractions else [],
    )


def grid_shape(num_patches: int, patch_side: int, canvas_width: int) -> tuple[int, int]:
    cols = max(1, canvas_width // patch_side)
    return math.ceil(num_patches / cols), cols


def tile_grid(ps: PatchSet, cfg: JigsawConfig) -> np.ndarray:
    """Row-major grid before resizing; trailing cells cycle from the first patch."""
    n, s = len(ps), ps.patch_side
    if n == 0:
        raise SparseReferenceError("cannot pack an empty patch set")
    rows, cols = grid_shape(n, s, cfg.canvas_width)
    grid = np.empty((rows * s, cols * s, 3), dtype=ps.patches.dtype)
    for k in range(rows * cols):
        src = k if k < n else (k - n) % n
        r, c = divmod(k, cols)
        grid[r * s:(r + 1) * s, c * s:(c + 1) * s] = ps.patches[src]
    return grid


def fit_to_canvas(img: np.ndarray, canvas_width: int) -> np.ndarray:
    h, w = img.shape[:2]
    if w == canvas_width:
        return img.astype(np.float64, copy=True)
    height = max(1, int(math.floor(h * canvas_width / w + 0.5)))
    return resize_bilinear(img, canvas_width, height)


def pack_mosaic(ps: PatchSet, cfg: JigsawConfig) -> np.ndarray:
    return fit_to_canvas(tile_grid(ps, cfg), cfg.canvas_width)


def jigsaw(reference: np.ndarray, mask: np.ndarray, cfg: JigsawConfig) -> np.ndarray:
    """Full permutation; ``patch_fraction == 1`` just crops the foreground and resizes."""
    reference, mask = _check_inputs(reference, mask)
    if cfg.patch_fraction == 1.0:
        box = mask_bbox(mask)
        if box is None:
            raise SparseReferenceError("reference too sparse: mask has no foreground")
        r0, r1, c0, c1 = box
        return fit_to_canvas(reference[r0:r1, c0:c1], cfg.canvas_width)
    return pack_mosaic(permute_patches(extract_patches(reference, mask, cfg), cfg), cfg)
