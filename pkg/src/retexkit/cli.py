"""``retexkit`` command line: render-pairs, jigsaw, assemble, evaluate, fmcheck.

Exit codes: 0 success, 2 I/O or input format, 3 domain (e.g. empty foreground),
4 shape/config. Every command appends one JSON line to ``manifest.jsonl`` next
to its output.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .conditioning import DropoutConfig, assemble_sample, deserialize_sample, serialize_sample
from .errors import ConfigError, InputError, RetexError
from .flowmatch import DISTILLED_STEPS, TEACHER_STEPS, run_invariant_suite
from .imaging import load_clip, load_image, load_mask, load_mask_clip, save_image
from .jigsaw import DEFAULT_CANVAS_WIDTH, JigsawConfig, jigsaw
from .mesh_io import load_mesh
from .metrics import FlowParams, MetricsConfig, evaluate, load_embeddings
from .renderer import DEFAULT_FRAMES, generate_dataset
from .seeding import derive_seed

log = logging.getLogger("retexkit")

MANIFEST_NAME = "manifest.jsonl"


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return w, h


def resolve_threads(value: int | None) -> int:
    if value is None:
        value = int(os.environ.get("RETEXKIT_THREADS", "1") or 1)
    return max(1, value)


def append_manifest(directory: Path, entry: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST_NAME, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _stage(command: str, args: argparse.Namespace, inputs, outputs, seed, started) -> dict:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "command": command,
        "config": json.loads(json.dumps(config, default=str)),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "toolkit_version": __version__,
        "wall_time": round(time.time() - started, 3),
    }


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def cmd_render_pairs(args) -> int:
    started = time.time()
    meshes = []
    for p in args.meshes:
        path = _require_file(p, "mesh file")
        meshes.append((path.stem, load_mesh(path)))
    width, height = args.size
    out = Path(args.out)
    manifest = generate_dataset(
        meshes, out, pairs_per_mesh=args.pairs_per_mesh, seed=args.seed,
        num_frames=args.frames, width=width, height=height, fps=args.fps,
        threads=resolve_threads(args.threads),
    )
    outputs = [out / "manifest.json"]
    for s in manifest["samples"]:
        outputs += [out / p for p in s["paths"].values()]
    append_manifest(out, _stage("render-pairs", args, args.meshes, outputs, args.seed, started))
    print(f"rendered {len(manifest['samples'])} pairs into {out}")
    return 0


def _jigsaw_config(args) -> JigsawConfig:
    base = {}
    if getattr(args, "config", None):
        cfg_path = _require_file(args.config, "jigsaw config")
        try:
            base = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{cfg_path}: {exc}") from exc
    overrides = {
        "patch_fraction": args.patch_fraction,
        "background_threshold": args.threshold,
        "canvas_width": args.canvas_width,
        "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return JigsawConfig(**base)
    except TypeError as exc:
        raise ConfigError(f"bad jigsaw config: {exc}") from exc


def cmd_jigsaw(args) -> int:
    started = time.time()
    cfg = _jigsaw_config(args)
    ref = load_image(_require_file(args.reference, "reference image"))
    mask = load_mask(_require_file(args.mask, "reference mask"))
    mosaic = jigsaw(ref, mask, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_image(out, mosaic)
    append_manifest(out.parent, _stage("jigsaw", args, [args.reference, args.mask], [out],
                                       cfg.seed, started))
    print(f"wrote {mosaic.shape[1]}x{mosaic.shape[0]} mosaic to {out}")
    return 0


def cmd_assemble(args) -> int:
    started = time.time()
    for p, what in ((args.source, "source clip"), (args.mask, "mask clip"),
                    (args.untextured, "untextured clip"), (args.reference, "reference image"),
                    (args.ref_mask, "reference mask")):
        _require_file(p, what)
    source = load_clip(args.source)
    mask = load_mask_clip(args.mask)
    untextured = load_clip(args.untextured)
    jig_cfg = replace(_jigsaw_config(args), seed=derive_seed(args.seed, "jigsaw"))
    drop_cfg = DropoutConfig(args.drop_prob, derive_seed(args.seed, "dropout"))
    sample = assemble_sample(source, mask, untextured, load_image(args.reference),
                             load_mask(args.ref_mask), jig_cfg, drop_cfg)
    out = Path(args.out)
    serialize_sample(sample, out, extra={
        "inputs": {"source": str(args.source), "mask": str(args.mask),
                   "untextured": str(args.untextured), "reference": str(args.reference),
                   "ref_mask": str(args.ref_mask)},
        "seed": args.seed,
    })
    if args.verify:
        if deserialize_sample(out) != sample:
            raise InputError(f"{out}: round-trip check failed")
    outputs = [out / "conditions.rtk", out / "reference.rtk", out / "sample.json"]
    append_manifest(out, _stage("assemble", args, [args.source, args.mask, args.untextured,
                                                   args.reference, args.ref_mask],
                                outputs, args.seed, started))
    state = "dropped (white reference, empty mask)" if sample.dropped else "kept"
    print(f"assembled sample {sample.packed().shape} into {out}; conditions {state}")
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    src = load_clip(_require_file(args.source, "source clip"))
    edited = load_clip(_require_file(args.edited, "edited clip"))
    mask = load_mask_clip(_require_file(args.mask, "mask clip"))
    reference = load_image(_require_file(args.reference, "reference image")) \
        if args.reference else None
    emb = load_embeddings(_require_file(args.embeddings, "embeddings")) \
        if args.embeddings else None
    ref_emb = load_embeddings(_require_file(args.reference_embeddings, "reference embeddings")) \
        if args.reference_embeddings else None
    scale = {"255": "eight_bit_0_255", "1": "unit_0_1"}[args.pixel_scale]
    cfg = MetricsConfig(dilation_radius=args.dilation, pixel_scale=scale,
                        ewarp=FlowParams(iterations=args.flow_iterations))
    report = evaluate(src, edited, mask, reference, emb, ref_emb, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    inputs = [p for p in (args.source, args.edited, args.mask, args.reference, args.embeddings,
                          args.reference_embeddings) if p]
    append_manifest(out.parent, _stage("evaluate", args, inputs, [out], None, started))
    bg = report.background
    print(f"background mse={bg['mse']:.4f} psnr={bg['psnr']:.2f} ssim={bg['ssim']:.4f}; "
          f"ewarp={report.motion['ewarp']}")
    return 0


def cmd_fmcheck(args) -> int:
    steps = sorted({1, args.steps, TEACHER_STEPS})
    results = run_invariant_suite(seed=args.seed, steps=steps, trials=args.trials,
                                  velocity_fault=args.inject_fault)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}")
    ok = all(r.passed for r in results)
    print("all invariants hold" if ok else "invariant failures detected")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "fmcheck.json").write_text(json.dumps([asdict(r) for r in results], indent=2))
    return 0 if ok else 1


def _add_jigsaw_flags(p: argparse.ArgumentParser) -> None:
    # unset flags fall back to the --config file, then to JigsawConfig defaults
    p.add_argument("--patch-fraction", type=float,
                   help="patch side over reference side, default 0.10 (1.0 disables permutation)")
    p.add_argument("--threshold", type=float,
                   help="max background fraction of a kept patch, default 0.10")
    p.add_argument("--canvas-width", type=int, help=f"default {DEFAULT_CANVAS_WIDTH}")
    p.add_argument("--config", help="JSON file with JigsawConfig fields (flags override)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retexkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-pairs", help="render textured/untextured training pairs")
    p.add_argument("meshes", nargs="+", help="mesh files (.obj); sibling .png/.ppm is the texture")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs-per-mesh", type=int, default=8)
    p.add_argument("--frames", type=int, default=DEFAULT_FRAMES)
    p.add_argument("--size", type=parse_size, default=(832, 480), help="WxH (default 832x480)")
    p.add_argument("--fps", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_render_pairs)

    p = sub.add_parser("jigsaw", help="jigsaw-permute a reference image")
    p.add_argument("--reference", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_jigsaw_flags(p)
    p.set_defaults(func=cmd_jigsaw)

    p = sub.add_parser("assemble", help="build a conditioning sample tensor")
    p.add_argument("--source", required=True, help="source clip directory")
    p.add_argument("--mask", required=True, help="object mask clip directory")
    p.add_argument("--untextured", required=True, help="untextured clip directory")
    p.add_argument("--reference", required=True)
    p.add_argument("--ref-mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--drop-prob", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verify", action="store_true", help="re-read the written sample and compare")
    _add_jigsaw_flags(p)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("evaluate", help="score an edited clip against its source")
    p.add_argument("--source", required=True)
    p.add_argument("--edited", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--reference")
    p.add_argument("--embeddings", help="features of the edited result (JSON or .rtk)")
    p.add_argument("--reference-embeddings", help="features of the reference (JSON or .rtk)")
    p.add_argument("--dilation", type=int, default=16)
    p.add_argument("--pixel-scale", choices=("255", "1"), default="255")
    p.add_argument("--flow-iterations", type=int, default=FlowParams().iterations)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fmcheck", help="run the flow-matching invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=DISTILLED_STEPS)
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--out")
    p.add_argument("--inject-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_fmcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RetexError as exc:
        print(f"retexkit {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"retexkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
