"""How much spatial structure survives the jigsaw mosaic at different patch sizes.

For each patch fraction we report how many patches pass the background filter
and which share of horizontally/vertically adjacent source patches stay adjacent
in the mosaic. A fraction of 1.0 keeps the whole crop, i.e. all structure.
"""
import argparse
from dataclasses import dataclass

import numpy as np

from retexkit.errors import SparseReferenceError
from retexkit.jigsaw import JigsawConfig, extract_patches, grid_shape, permute_patches


@dataclass
class SweepConfig:
    fractions: tuple = (0.05, 0.10, 0.15, 0.25)
    trials: int = 20
    size: int = 128
    seed: int = 0


def ellipse_reference(rng, size):
    img = rng.random((size, size, 3))
    yy, xx = np.mgrid[0:size, 0:size] / size
    ry, rx = rng.uniform(0.3, 0.45, 2)
    mask = ((yy - 0.5) / ry) ** 2 + ((xx - 0.5) / rx) ** 2 <= 1
    return img, mask


def kept_adjacency(ps, perm, canvas_width):
    s = ps.patch_side
    src = set(ps.source_grid_coords)
    pairs = {(a, b) for a in src for b in ((a[0], a[1] + s), (a[0] + s, a[1])) if b in src}
    if not pairs:
        return float("nan")
    cols = grid_shape(len(perm), s, canvas_width)[1]
    at = perm.source_grid_coords
    laid = set()
    for k in range(len(at)):
        if k % cols + 1 < cols and k + 1 < len(at):
            laid.add((at[k], at[k + 1]))
        if k + cols < len(at):
            laid.add((at[k], at[k + cols]))
    return len(pairs & laid) / len(pairs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=SweepConfig.trials)
    ap.add_argument("--seed", type=int, default=SweepConfig.seed)
    args = ap.parse_args()
    cfg = SweepConfig(trials=args.trials, seed=args.seed)
    rng = np.random.default_rng(cfg.seed)
    refs = [ellipse_reference(rng, cfg.size) for _ in range(cfg.trials)]
    print(f"{'fraction':>8} {'patches':>8} {'adjacency kept':>15}")
    for frac in cfg.fractions:
        counts, kept = [], []
        for i, (img, mask) in enumerate(refs):
            jc = JigsawConfig(patch_fraction=frac, canvas_width=cfg.size, seed=i)
            try:
                ps = extract_patches(img, mask, jc)
            except SparseReferenceError:
                continue
            counts.append(len(ps))
            kept.append(kept_adjacency(ps, permute_patches(ps, jc), jc.canvas_width))
        if not counts:
            print(f"{frac:>8.2f} {'n/a':>8} {'n/a':>15}  (every reference too sparse)")
            continue
        print(f"{frac:>8.2f} {np.mean(counts):>8.1f} {np.nanmean(kept):>15.3f}")
    print(f"{1.0:>8.2f} {1:>8d} {1.0:>15.3f}  (whole crop, no permutation)")


if __name__ == "__main__":
    main()
