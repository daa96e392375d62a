"""Image and clip helpers shared by every stage.

Conventions: RGB images are float arrays of shape (H, W, 3) in [0, 1];
clips stack frames as (T, H, W, 3); masks are bool arrays (H, W) or (T, H, W).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ClipFormatError, InputError, ShapeError

DEFAULT_FPS = 16

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB array; the last axis must hold the channels."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[-1] != 3:
        raise ShapeError(f"expected 3 channels, got shape {img.shape}")
    return img @ LUMA_WEIGHTS


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight (row0, row1, col0, col1) box of a 2-D mask, ends exclusive."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def _axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres, clamped at the borders
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_bilinear(img: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear resize of an (H, W[, C]) array to (height, width[, C])."""
    if width < 1 or height < 1:
        raise ShapeError(f"resize target must be positive, got {width}x{height}")
    img = np.asarray(img, dtype=np.float64)
    r0, r1, fr = _axis_coords(img.shape[0], height)
    c0, c1, fc = _axis_coords(img.shape[1], width)
    extra = (1,) * (img.ndim - 2)
    fr = fr.reshape((-1, 1) + extra)
    fc = fc.reshape((1, -1) + extra)
    top = img[r0][:, c0] + (img[r0][:, c1] - img[r0][:, c0]) * fc
    bot = img[r1][:, c0] + (img[r1][:, c1] - img[r1][:, c0]) * fc
    return top + (bot - top) * fr


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG or binary PPM as float RGB in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc
    return arr / 255.0


def save_image(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def load_mask(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read mask {path}: {exc}") from exc
    return arr >= 128


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def frame_name(index: int) -> str:
    return f"f{index + 1:04d}.png"


def save_clip(directory: str | Path, frames: np.ndarray, fps: int = DEFAULT_FPS) -> Path:
    """Write an RGB clip (T, H, W, 3) or mask clip (T, H, W) as a frame directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames)
    is_mask = frames.ndim == 3
    for i, frame in enumerate(frames):
        if is_mask:
            save_mask(directory / frame_name(i), frame)
        else:
            save_image(directory / frame_name(i), frame)
    meta = {
        "width": int(frames.shape[2]),
        "height": int(frames.shape[1]),
        "num_frames": int(frames.shape[0]),
        "fps": int(fps),
        "kind": "mask" if is_mask else "rgb",
    }
    (directory / "clip.json").write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def read_clip_meta(directory: str | Path) -> dict:
    directory = Path(directory)
    meta_path = directory / "clip.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError as exc:
        raise ClipFormatError(f"{directory}: missing clip.json") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ClipFormatError(f"{meta_path}: {exc}") from exc
    for key in ("width", "height", "num_frames"):
        if not isinstance(meta.get(key), int) or meta[key] < 1:
            raise ClipFormatError(f"{meta_path}: field {key!r} must be a positive integer")
    return meta


def load_clip(directory: str | Path, as_mask: bool = False) -> np.ndarray:
    directory = Path(directory)
    meta = read_clip_meta(directory)
    loader = load_mask if as_mask else load_image
    frames = []
    for i in range(meta["num_frames"]):
        path = directory / frame_name(i)
        if not path.exists():
            raise ClipFormatError(f"{directory}: missing frame {path.name}")
        frame = loader(path)
        if frame.shape[:2] != (meta["height"], meta["width"]):
            raise ClipFormatError(
                f"{path}: size {frame.shape[1]}x{frame.shape[0]} disagrees with clip.json"
            )
        frames.append(frame)
    return np.stack(frames)


def load_mask_clip(directory: str | Path) -> np.ndarray:
    return load_clip(directory, as_mask=True)
