"""Assembly of per-sample conditioning bundles and their on-disk tensor format.

Tensor file (``.rtk``): magic ``RTK1``, four little-endian u32 values
(num_frames, height, width, channels), then float32 data in frame-major,
row-major, channel-last order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, TensorFormatError
from .jigsaw import JigsawConfig, jigsaw

MAGIC = b"RTK1"
HEADER = struct.Struct("<4s4I")
CHANNELS_PER_FRAME = 7
CHANNEL_ORDER = ("bg_r", "bg_g", "bg_b", "unt_r", "unt_g", "unt_b", "mask")
DEFAULT_FILL = (0.5, 0.5, 0.5)

CONDITIONS_FILE = "conditions.rtk"
REFERENCE_FILE = "reference.rtk"
SAMPLE_MANIFEST = "sample.json"


@dataclass(frozen=True)
class DropoutConfig:
    drop_probability: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.drop_probability <= 1:
            raise ConfigError("drop_probability must lie in [0, 1]")


def default_layout() -> dict:
    return {
        "channels_per_frame": CHANNELS_PER_FRAME,
        "channel_order": list(CHANNEL_ORDER),
        "reference_prepended": True,
    }


@dataclass(eq=False)
class ConditioningSample:
    reference: np.ndarray  # (Hr, canvas_width, 3) float32
    mask_clip: np.ndarray  # (T, H, W) float32 in {0, 1}
    background_clip: np.ndarray  # (T, H, W, 3) float32
    untextured_clip: np.ndarray  # (T, H, W, 3) float32
    dropped: bool = False
    layout: dict = field(default_factory=default_layout)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=np.float32)
        self.mask_clip = np.asarray(self.mask_clip, dtype=np.float32)
        self.background_clip = np.asarray(self.background_clip, dtype=np.float32)
        self.untextured_clip = np.asarray(self.untextured_clip, dtype=np.float32)
        t, h, w = self.mask_clip.shape
        for name in ("background_clip", "untextured_clip"):
            if getattr(self, name).shape != (t, h, w, 3):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != {(t, h, w, 3)}")
        if self.reference.ndim != 3 or self.reference.shape[2] != 3:
            raise ShapeError(f"reference must be (H, W, 3), got {self.reference.shape}")
        if not np.isin(self.mask_clip, (0.0, 1.0)).all():
            raise ShapeError("mask values must be 0 or 1")

    def packed(self) -> np.ndarray:
        """(T, H, W, 7) tensor: background RGB, untextured RGB, mask."""
        return np.concatenate(
            [self.background_clip, self.untextured_clip, self.mask_clip[..., None]], axis=-1
        )

    def __eq__(self, other):
        if not isinstance(other, ConditioningSample):
            return NotImplemented
        return (self.dropped == other.dropped
                and self.reference.shape == other.reference.shape
                and np.array_equal(self.reference, other.reference)
                and self.mask_clip.shape == other.mask_clip.shape
                and np.array_equal(self.packed(), other.packed()))


def _check_clip_dims(source, mask):
    source = np.asarray(source)
    mask = np.asarray(mask)
    if source.ndim != 4 or source.shape[-1] != 3:
        raise ShapeError(f"clip must be (T, H, W, 3), got {source.shape}")
    if mask.shape != source.shape[:3]:
        raise ShapeError(f"mask clip {mask.shape} does not match clip {source.shape[:3]}")


def make_background(source: np.ndarray, mask: np.ndarray,
                    fill=DEFAULT_FILL) -> np.ndarray:
    """Replace masked pixels with ``fill``; everything else is copied."""
    _check_clip_dims(source, mask)
    source = np.asarray(source)
    fill = np.broadcast_to(np.asarray(fill, dtype=source.dtype), (3,))
    return np.where(np.asarray(mask, dtype=bool)[..., None], fill, source)


def assemble_sample(source: np.ndarray, mask: np.ndarray, untextured: np.ndarray,
                    reference_img: np.ndarray, ref_mask: np.ndarray,
                    jig_cfg: JigsawConfig | None = None,
                    drop_cfg: DropoutConfig | None = None,
                    fill=DEFAULT_FILL) -> ConditioningSample:
    jig_cfg = jig_cfg or JigsawConfig()
    drop_cfg = drop_cfg or DropoutConfig()
    _check_clip_dims(source, mask)
    if np.shape(untextured) != np.shape(source):
        raise ShapeError(f"untextured clip {np.shape(untextured)} != source {np.shape(source)}")
    mask = np.asarray(mask, dtype=bool)

    reference = jigsaw(reference_img, ref_mask, jig_cfg)
    background = make_background(source, mask, fill)
    rng = np.random.default_rng(drop_cfg.seed)
    dropped = bool(rng.random() < drop_cfg.drop_probability)
    mask_clip = mask.astype(np.float32)
    if dropped:
        reference = np.ones_like(reference)
        mask_clip = np.zeros_like(mask_clip)
    return ConditioningSample(
        reference=reference,
        mask_clip=mask_clip,
        background_clip=background,
        untextured_clip=untextured,
        dropped=dropped,
        meta={"jigsaw": asdict(jig_cfg), "dropout": asdict(drop_cfg), "fill": list(fill)},
    )


def write_tensor(path: str | Path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 4:
        raise ShapeError(f"tensor must be 4-D (frames, height, width, channels), got {data.shape}")
    header = HEADER.pack(MAGIC, *data.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise TensorFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, t, h, w, c = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TensorFormatError(f"{path}: bad magic {magic!r}")
    expected = t * h * w * c * 4
    payload = len(raw) - HEADER.size
    if payload != expected:
        kind = "truncated payload" if payload < expected else "trailing bytes after payload"
        raise TensorFormatError(
            f"{path}: {kind}: header says {t}x{h}x{w}x{c} ({expected} bytes), found {payload}"
        )
    return np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(t, h, w, c).astype(np.float32)


def serialize_sample(sample: ConditioningSample, directory: str | Path,
                     extra: dict | None = None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(directory / CONDITIONS_FILE, sample.packed())
    write_tensor(directory / REFERENCE_FILE, sample.reference[None])
    t, h, w = sample.mask_clip.shape
    manifest = {
        "conditions": CONDITIONS_FILE,
        "reference": REFERENCE_FILE,
        "num_frames": t,
        "height": h,
        "width": w,
        "reference_height": int(sample.reference.shape[0]),
        "reference_width": int(sample.reference.shape[1]),
        "dropped": sample.dropped,
        "layout": sample.layout,
        **sample.meta,
        **(extra or {}),
    }
    (directory / SAMPLE_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def deserialize_sample(directory: str | Path) -> ConditioningSample:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / SAMPLE_MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise TensorFormatError(f"{directory}: unreadable sample manifest: {exc}") from exc
    packed = read_tensor(directory / manifest.get("conditions", CONDITIONS_FILE))
    ref = read_tensor(directory / manifest.get("reference", REFERENCE_FILE))
    dims = (manifest["num_frames"], manifest["height"], manifest["width"], CHANNELS_PER_FRAME)
    if packed.shape != dims:
        raise TensorFormatError(f"{directory}: conditions tensor {packed.shape} != manifest {dims}")
    ref_dims = (1, manifest["reference_height"], manifest["reference_width"], 3)
    if ref.shape != ref_dims:
        raise TensorFormatError(f"{directory}: reference tensor {ref.shape} != manifest {ref_dims}")
    meta = {k: manifest[k] for k in ("jigsaw", "dropout", "fill") if k in manifest}
    return ConditioningSample(
        reference=ref[0],
        mask_clip=packed[..., 6],
        background_clip=packed[..., 0:3],
        untextured_clip=packed[..., 3:6],
        dropped=bool(manifest["dropped"]),
        layout=manifest.get("layout", default_layout()),
        meta=meta,
    )
