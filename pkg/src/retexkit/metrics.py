"""Evaluation protocol: background fidelity, foreground similarity, temporal warp error."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from scipy import ndimage

from .errors import ConfigError, EmptyRegionError, InputError, ShapeError
from .imaging import mask_bbox, resize_bilinear, to_gray

PSNR_CAP = 99.0
PIXEL_SCALES = {"unit_0_1": 1.0, "eight_bit_0_255": 255.0}
EWARP_UNIT = 1e-3

# report slot -> key looked up in the embedding files
FOREGROUND_SLOTS = {"clip_slot": "clip", "dino_slot": "dino", "lpips_slot": "lpips",
                    "dream_slot": "dream"}
BACKGROUND_SLOTS = {"lpips_slot": "bg_lpips"}
EMBEDDING_KEYS = ("clip", "dino", "lpips", "dream", "bg_lpips")


@dataclass(frozen=True)
class FlowParams:
    alpha: float = 0.03
    iterations: int = 150
    warps: int = 3
    presmooth: float = 1.0
    consistency_threshold: float = 1.0  # pixels

    def __post_init__(self):
        if self.alpha <= 0 or self.iterations < 1 or self.warps < 1 or self.presmooth < 0:
            raise ConfigError("invalid flow parameters")


@dataclass(frozen=True)
class MetricsConfig:
    dilation_radius: int = 16
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    pixel_scale: str = "eight_bit_0_255"
    ewarp: FlowParams = field(default_factory=FlowParams)

    def __post_init__(self):
        if self.dilation_radius < 0:
            raise ConfigError("dilation_radius must be >= 0")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError("ssim_window must be a positive odd integer")
        if self.pixel_scale not in PIXEL_SCALES:
            raise ConfigError(f"pixel_scale must be one of {sorted(PIXEL_SCALES)}")

    @property
    def max_value(self) -> float:
        return PIXEL_SCALES[self.pixel_scale]


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Square (L-infinity) dilation; 3-D input is treated as a stack of frames."""
    if radius < 0:
        raise ConfigError("dilation radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    size = 2 * radius + 1
    footprint = (size, size) if mask.ndim == 2 else (1,) * (mask.ndim - 2) + (size, size)
    return ndimage.maximum_filter(mask, size=footprint, mode="constant", cval=False)


def psnr_from_mse(mse: float, max_value: float) -> float:
    if mse == 0:
        return PSNR_CAP
    return 10.0 * math.log10(max_value ** 2 / mse)


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    x = np.arange(window) - (window - 1) / 2
    k = np.exp(-x ** 2 / (2 * sigma ** 2))
    return k / k.sum()


def _wfilter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(img, kernel, axis=0, mode="constant")
    return ndimage.correlate1d(out, kernel, axis=1, mode="constant")


def masked_ssim(x: np.ndarray, y: np.ndarray, region: np.ndarray | None,
                cfg: MetricsConfig) -> float:
    """Gaussian-window SSIM whose local statistics only use pixels inside ``region``.

    Window weights are renormalised over the region, so values outside it never
    affect the score. The map is averaged over region pixels.
    """
    return float(np.mean(ssim_map(x, y, region, cfg)[1]))


def ssim_map(x: np.ndarray, y: np.ndarray, region: np.ndarray | None,
             cfg: MetricsConfig) -> tuple[np.ndarray, np.ndarray]:
    """Region-restricted SSIM values; returns (selected-pixel mask, values there)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if region is None:
        region = np.ones(x.shape, dtype=bool)
    m = region.astype(np.float64)
    if not m.any():
        raise EmptyRegionError("SSIM region is empty")
    k = _gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma)
    xm, ym = x * m, y * m
    norm = _wfilter(m, k)
    sel = region & (norm > 0)
    w = norm[sel]
    mu_x = _wfilter(xm, k)[sel] / w
    mu_y = _wfilter(ym, k)[sel] / w
    sxx = np.maximum(_wfilter(xm * x, k)[sel] / w - mu_x * mu_x, 0.0)
    syy = np.maximum(_wfilter(ym * y, k)[sel] / w - mu_y * mu_y, 0.0)
    sxy = _wfilter(xm * y, k)[sel] / w - mu_x * mu_y
    c1 = (cfg.ssim_k1 * cfg.max_value) ** 2
    c2 = (cfg.ssim_k2 * cfg.max_value) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return sel, num / den


def _as_clip(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def _as_mask_clip(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    return mask[None] if mask.ndim == 2 else mask


def background_metrics(src: np.ndarray, edited: np.ndarray, mask_clip: np.ndarray,
                       cfg: MetricsConfig | None = None) -> dict:
    """MSE/PSNR/SSIM outside the dilated object mask, per frame then averaged.

    ``psnr`` is derived from the frame-averaged MSE so it always agrees with the
    reported ``mse``; the mean of per-frame PSNRs is kept as ``psnr_frame_mean``.
    """
    cfg = cfg or MetricsConfig()
    src, edited, masks = _as_clip(src), _as_clip(edited), _as_mask_clip(mask_clip)
    if src.shape != edited.shape:
        raise ShapeError(f"source {src.shape} and edited {edited.shape} differ")
    if masks.shape != src.shape[:3]:
        raise ShapeError(f"mask {masks.shape} does not match clip {src.shape[:3]}")
    scale = cfg.max_value
    region = ~dilate_mask(masks, cfg.dilation_radius)
    mses, psnrs, ssims = [], [], []
    for t in range(src.shape[0]):
        if not region[t].any():
            raise EmptyRegionError(f"frame {t}: no background left after dilation")
        a, b = src[t] * scale, edited[t] * scale
        mse = float(np.mean((a[region[t]] - b[region[t]]) ** 2))
        mses.append(mse)
        psnrs.append(psnr_from_mse(mse, scale))
        ssims.append(masked_ssim(to_gray(a), to_gray(b), region[t], cfg))
    mse = float(np.mean(mses))
    return {
        "mse": mse,
        "psnr": psnr_from_mse(mse, scale),
        "ssim": float(np.mean(ssims)),
        "psnr_frame_mean": float(np.mean(psnrs)),
        "per_frame": {"mse": mses, "psnr": psnrs, "ssim": ssims},
    }


def foreground_crop(image_or_clip: np.ndarray, mask: np.ndarray, target_w: int,
                    target_h: int) -> np.ndarray:
    """Tight mask bounding box, bilinearly resized; clips give one crop per non-empty frame."""
    data = np.asarray(image_or_clip, dtype=np.float64)
    single = data.ndim == 3
    data, masks = _as_clip(data), _as_mask_clip(mask)
    if masks.shape != data.shape[:3]:
        raise ShapeError(f"mask {masks.shape} does not match {data.shape[:3]}")
    crops = []
    for frame, m in zip(data, masks):
        box = mask_bbox(m)
        if box is None:
            continue
        r0, r1, c0, c1 = box
        crops.append(resize_bilinear(frame[r0:r1, c0:c1], target_w, target_h))
    if not crops:
        raise EmptyRegionError("foreground mask is empty")
    return crops[0] if single else np.stack(crops)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or a.shape != b.shape:
        raise ShapeError(f"cosine similarity needs equal non-empty vectors ({a.size} vs {b.size})")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ShapeError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class FlowField:
    u: np.ndarray  # horizontal displacement, pixels
    v: np.ndarray  # vertical displacement, pixels
    valid: np.ndarray  # bool


_HS_AVG = np.array([[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]])


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at float pixel coordinates; returns (values, inside-image mask)."""
    h, w = img.shape[:2]
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 1)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx, fy = xc - x0, yc - y0
    if img.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = img[y0, x0] + (img[y0, x1] - img[y0, x0]) * fx
    bot = img[y1, x0] + (img[y1, x1] - img[y1, x0]) * fx
    return top + (bot - top) * fy, inside


def warp(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backward warp: output(p) = img(p + (u, v))."""
    h, w = img.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return bilinear_sample(img, xx + u, yy + v)


def horn_schunck(frame_a: np.ndarray, frame_b: np.ndarray,
                 params: FlowParams) -> tuple[np.ndarray, np.ndarray]:
    """Flow (u, v) with frame_b(p + (u, v)) ~ frame_a(p); iterative re-warping refines it."""
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if params.presmooth > 0:
        a = ndimage.gaussian_filter(a, params.presmooth, mode="nearest")
        b = ndimage.gaussian_filter(b, params.presmooth, mode="nearest")
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    alpha2 = params.alpha ** 2
    for _ in range(params.warps):
        bw, _ = warp(b, u, v)
        avg = 0.5 * (a + bw)
        iy, ix = np.gradient(avg)
        it = bw - a
        u0, v0 = u.copy(), v.copy()
        denom = alpha2 + ix ** 2 + iy ** 2
        for _ in range(params.iterations):
            ua = ndimage.correlate(u, _HS_AVG, mode="nearest")
            va = ndimage.correlate(v, _HS_AVG, mode="nearest")
            resid = (ix * (ua - u0) + iy * (va - v0) + it) / denom
            u = ua - ix * resid
            v = va - iy * resid
    return u, v


def estimate_flow(frame_t: np.ndarray, frame_t1: np.ndarray,
                  params: FlowParams | None = None) -> FlowField:
    """Dense flow from ``frame_t`` to ``frame_t1`` with forward-backward validity."""
    params = params or FlowParams()
    a = np.asarray(frame_t, dtype=np.float64)
    b = np.asarray(frame_t1, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"flow needs two equal 2-D frames, got {a.shape} and {b.shape}")
    u, v = horn_schunck(a, b, params)
    ub, vb = horn_schunck(b, a, params)
    ub_at, inside = warp(ub, u, v)
    vb_at, _ = warp(vb, u, v)
    err = np.hypot(u + ub_at, v + vb_at)
    valid = inside & (err <= params.consistency_threshold)
    return FlowField(u, v, valid)


def warp_error(frame_t: np.ndarray, frame_t1: np.ndarray, u: np.ndarray, v: np.ndarray,
               valid: np.ndarray | None = None) -> float:
    """Mean squared error between frame_t warped onto frame_t1 and frame_t1 itself.

    (u, v) maps pixels of frame_t1 into frame_t: warped(p) = frame_t(p + (u, v)).
    """
    warped, inside = warp(np.asarray(frame_t, dtype=np.float64), u, v)
    keep = inside if valid is None else inside & valid
    if not keep.any():
        raise EmptyRegionError("no valid pixels to compare after warping")
    diff = (warped - np.asarray(frame_t1, dtype=np.float64))[keep]
    return float(np.mean(diff ** 2))


def ewarp(clip: np.ndarray, cfg: MetricsConfig | None = None) -> float:
    """Temporal warping error on unit scale, in units of 1e-3."""
    cfg = cfg or MetricsConfig()
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim == 3:
        clip = clip[..., None]
    if clip.shape[0] < 2:
        raise ShapeError("ewarp needs at least two frames")
    gray = to_gray(clip) if clip.shape[-1] == 3 else clip[..., 0]
    errors = []
    for t in range(clip.shape[0] - 1):
        # flow from t+1 into t, so frame t can be pulled onto frame t+1
        flow = estimate_flow(gray[t + 1], gray[t], cfg.ewarp)
        try:
            errors.append(warp_error(clip[t], clip[t + 1], flow.u, flow.v, flow.valid))
        except EmptyRegionError:
            raise EmptyRegionError(f"frame pair {t}->{t + 1}: every pixel is occluded") from None
    return float(np.mean(errors)) / EWARP_UNIT


@dataclass
class MetricsReport:
    background: dict
    foreground: dict
    motion: dict
    metadata: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        validate_report(d)
        return cls(d["background"], d["foreground"], d["motion"], d["metadata"])

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


_NUM_OR_NULL = {"type": ["number", "null"]}
REPORT_SCHEMA = {
    "type": "object",
    "required": ["background", "foreground", "motion", "metadata"],
    "properties": {
        "background": {
            "type": "object",
            "required": ["mse", "psnr", "ssim", "lpips_slot"],
            "properties": {
                "mse": {"type": "number", "minimum": 0},
                "psnr": {"type": "number"},
                "ssim": {"type": "number", "minimum": -1, "maximum": 1},
                "lpips_slot": _NUM_OR_NULL,
            },
        },
        "foreground": {
            "type": "object",
            "required": list(FOREGROUND_SLOTS),
            "properties": {k: {"type": ["number", "null"], "minimum": -1, "maximum": 1}
                           for k in FOREGROUND_SLOTS},
        },
        "motion": {
            "type": "object",
            "required": ["ewarp"],
            "properties": {"ewarp": {"type": ["number", "null"], "minimum": 0}},
        },
        "metadata": {
            "type": "object",
            "required": ["dilation_radius", "frames_evaluated", "pixel_scale"],
            "properties": {
                "dilation_radius": {"type": "integer", "minimum": 0},
                "frames_evaluated": {"type": "integer", "minimum": 1},
                "pixel_scale": {"enum": list(PIXEL_SCALES)},
            },
        },
    },
}


def validate_report(d: dict) -> None:
    try:
        jsonschema.validate(d, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise InputError(f"invalid metrics report: {exc.message}") from None


def load_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    """JSON ``{key: [floats]}`` or an RTK1 tensor whose rows follow ``EMBEDDING_KEYS``."""
    path = Path(path)
    if path.suffix == ".rtk":
        from .conditioning import read_tensor

        data = read_tensor(path)
        rows = data.reshape(-1, data.shape[2] * data.shape[3]) if data.shape[0] == 1 \
            else data.reshape(data.shape[0], -1)
        if len(rows) > len(EMBEDDING_KEYS):
            raise InputError(f"{path}: {len(rows)} rows but only {len(EMBEDDING_KEYS)} slots")
        return {k: rows[i].astype(np.float64) for i, k in enumerate(EMBEDDING_KEYS[:len(rows)])}
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read embeddings {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError(f"{path}: embeddings must be a JSON object")
    out = {}
    for key, vec in raw.items():
        key = key.removesuffix("_slot")
        try:
            out[key] = np.asarray(vec, dtype=np.float64).ravel()
        except (TypeError, ValueError) as exc:
            raise InputError(f"{path}: slot {key!r} is not a numeric vector") from exc
    return out


def _slot(edited: dict | None, ref: dict | None, key: str) -> float | None:
    if not edited or not ref or key not in edited or key not in ref:
        return None
    return cosine_similarity(edited[key], ref[key])


def evaluate(src: np.ndarray, edited: np.ndarray, mask: np.ndarray,
             reference: np.ndarray | None = None, embeddings: dict | None = None,
             reference_embeddings: dict | None = None,
             cfg: MetricsConfig | None = None) -> MetricsReport:
    """Full report for one edited clip (or image).

    ``embeddings`` hold features of the edited result and ``reference_embeddings``
    the matching features of the reference (``bg_lpips`` pairs edited and source
    backgrounds). Slots without both vectors stay null.
    """
    cfg = cfg or MetricsConfig()
    bg = background_metrics(src, edited, mask, cfg)
    clip = _as_clip(edited)
    motion = ewarp(clip, cfg) if clip.shape[0] >= 2 else None
    foreground = {slot: _slot(embeddings, reference_embeddings, key)
                  for slot, key in FOREGROUND_SLOTS.items()}
    metadata = {
        "dilation_radius": cfg.dilation_radius,
        "frames_evaluated": int(clip.shape[0]),
        "pixel_scale": cfg.pixel_scale,
        "psnr_frame_mean": bg["psnr_frame_mean"],
        "per_frame": bg["per_frame"],
        "ewarp_unit": EWARP_UNIT,
    }
    if reference is not None:
        ref = np.asarray(reference)
        metadata["foreground_crop_size"] = [int(ref.shape[1]), int(ref.shape[0])]
    report = MetricsReport(
        background={"mse": bg["mse"], "psnr": bg["psnr"], "ssim": bg["ssim"],
                    "lpips_slot": _slot(embeddings, reference_embeddings, "bg_lpips")},
        foreground=foreground,
        motion={"ewarp": motion},
        metadata=metadata,
    )
    validate_report(report.to_dict())
    return report
