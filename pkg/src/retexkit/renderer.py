"""Software rasteriser for paired textured / gray-clay renders of a mesh.

World frame is right-handed with +Y up. The camera looks down its own +Z
(forward) axis; image rows grow downwards. A point light sits exactly at the
camera eye and has no distance falloff.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InputError, RenderError
from .imaging import DEFAULT_FPS, save_clip
from .mesh_io import Mesh
from .seeding import derive_rng

TRAJECTORY_KINDS = ("orbital", "arc", "zoom_in", "zoom_out")
MIN_DISTANCE = 1.5  # camera distance floor, in bounding radii
NEAR = 1e-6
DEFAULT_FRAMES = 33
DEFAULT_WIDTH, DEFAULT_HEIGHT = 832, 480


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise RenderError(f"cannot normalise vector {v}")
    return v / n


@dataclass(frozen=True)
class CameraPose:
    eye: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float] = (0.0, 1.0, 0.0)
    focal: float = float(DEFAULT_HEIGHT)
    image_width: int = DEFAULT_WIDTH
    image_height: int = DEFAULT_HEIGHT

    def basis(self) -> np.ndarray:
        """Rows are the camera right, up and forward axes in world coordinates."""
        eye = np.asarray(self.eye, dtype=np.float64)
        target = np.asarray(self.look_at, dtype=np.float64)
        if np.array_equal(eye, target):
            raise RenderError("camera eye coincides with look_at")
        if self.focal <= 0 or self.image_width < 1 or self.image_height < 1:
            raise RenderError("focal and image size must be positive")
        forward = _unit(target - eye)
        right = np.cross(forward, _unit(self.up))
        if np.linalg.norm(right) < 1e-9:
            raise RenderError("up vector is parallel to the view direction")
        right = right / np.linalg.norm(right)
        true_up = np.cross(right, forward)
        return np.stack([right, true_up, forward])

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.eye)) @ self.basis().T

    def camera_to_pixels(self, cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = self.image_width / 2 + self.focal * cam[..., 0] / cam[..., 2]
        y = self.image_height / 2 - self.focal * cam[..., 1] / cam[..., 2]
        return x, y

    def project(self, points: np.ndarray) -> np.ndarray:
        """Pixel coordinates (x, y) of world points; pixel (i, j) has centre (j+.5, i+.5)."""
        return np.stack(self.camera_to_pixels(self.to_camera(points)), axis=-1)


@dataclass(frozen=True)
class Trajectory:
    kind: str = "orbital"
    num_frames: int = DEFAULT_FRAMES
    base_distance: float = 2.5  # in bounding radii
    angular_span: float = math.pi / 2
    elevation: float = math.radians(15)
    zoom_ratio: float = 1.0
    start_azimuth: float = 0.0

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ConfigError(f"unknown trajectory kind {self.kind!r}")
        if self.num_frames < 1:
            raise ConfigError("trajectory needs at least one frame")
        if self.base_distance < MIN_DISTANCE:
            raise ConfigError(f"base_distance must be >= {MIN_DISTANCE} bounding radii")
        if self.zoom_ratio <= 0:
            raise ConfigError("zoom_ratio must be positive")
        if self.kind == "zoom_in" and self.zoom_ratio > 1:
            raise ConfigError("zoom_in needs zoom_ratio in (0, 1]")
        if self.kind == "zoom_out" and self.zoom_ratio < 1:
            raise ConfigError("zoom_out needs zoom_ratio >= 1")
        if abs(self.elevation) >= math.pi / 2 - 1e-3:
            raise ConfigError("elevation must stay clear of the poles")


def _eye_at(center, dist, azimuth, elevation):
    offset = np.array([
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
        math.cos(elevation) * math.cos(azimuth),
    ])
    return np.asarray(center, dtype=np.float64) + dist * offset


def generate_trajectory(traj: Trajectory, sphere: tuple[Sequence[float], float],
                        width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                        focal: float | None = None) -> list[CameraPose]:
    center, radius = sphere
    if not radius > 0:
        raise RenderError("bounding radius must be positive")
    center = tuple(float(c) for c in center)
    focal = float(height if focal is None else focal)
    n = traj.num_frames
    d = traj.base_distance * radius
    # fraction along the clip, endpoints included
    frac = [i / (n - 1) if n > 1 else 0.0 for i in range(n)]

    eyes = []
    if traj.kind in ("orbital", "arc"):
        for i in range(n):
            az = traj.start_azimuth + traj.angular_span * i / n
            el = traj.elevation if traj.kind == "orbital" else traj.elevation * (2 * frac[i] - 1)
            eyes.append(_eye_at(center, d, az, el))
    else:
        end = traj.zoom_ratio * d
        if end < MIN_DISTANCE * radius:
            raise ConfigError("zoom would move the camera inside the bounding sphere")
        for f in frac:
            eyes.append(_eye_at(center, d + (end - d) * f, traj.start_azimuth, traj.elevation))

    return [CameraPose(eye=tuple(e.tolist()), look_at=center, focal=focal,
                       image_width=width, image_height=height) for e in eyes]


@dataclass(frozen=True)
class RenderConfig:
    material_mode: str = "textured"  # or "untextured_gray"
    gray_albedo: float = 0.5
    light_intensity: float = 1.0
    pose_rotation: float = 0.0  # radians added per frame about pose_axis
    pose_axis: tuple[float, float, float] | None = None  # None: drawn from the seed
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    background_color: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.material_mode not in ("textured", "untextured_gray"):
            raise ConfigError(f"unknown material mode {self.material_mode!r}")
        if not 0 < self.gray_albedo <= 1:
            raise ConfigError("gray_albedo must lie in (0, 1]")
        if not self.light_intensity > 0:
            raise ConfigError("light_intensity must be positive")


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = _unit(axis)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * (kx @ kx)


def posed_vertices(mesh: Mesh, cfg: RenderConfig, frame_index: int) -> np.ndarray:
    angle = cfg.pose_rotation * frame_index
    verts = mesh.vertices
    if angle != 0.0:
        if cfg.pose_axis is None:
            raise ConfigError("pose_rotation set without a pose_axis")
        center, _ = mesh.bounding_sphere
        verts = (verts - center) @ rotation_matrix(cfg.pose_axis, angle).T + center
    return verts + np.asarray(cfg.translation, dtype=np.float64)


def _sample_texture(tex: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = tex.shape[:2]
    # v = 0 is the bottom row of the image; clamp to the edge texels
    x = np.clip(u * w - 0.5, 0.0, w - 1)
    y = np.clip((1.0 - v) * h - 0.5, 0.0, h - 1)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = tex[y0, x0] + (tex[y0, x1] - tex[y0, x0]) * fx
    bot = tex[y1, x0] + (tex[y1, x1] - tex[y1, x0]) * fx
    return top + (bot - top) * fy


def render_frame(mesh: Mesh, pose: CameraPose, cfg: RenderConfig,
                 frame_index: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rasterise one frame.

    Returns ``(image, coverage, depth)``: float RGB in [0, 1], a bool silhouette
    and the camera-space depth (``inf`` where nothing was drawn).
    """
    textured = cfg.material_mode == "textured"
    if textured and (mesh.texture is None or mesh.face_uvs is None):
        raise RenderError("textured render needs a mesh with uvs and a texture")

    W, H, f = pose.image_width, pose.image_height, pose.focal
    cx, cy = W / 2.0, H / 2.0
    cam = pose.to_camera(posed_vertices(mesh, cfg, frame_index))
    if (cam[:, 2] <= NEAR).any():
        raise RenderError("geometry reaches behind the camera near plane")
    sx, sy = pose.camera_to_pixels(cam)
    inv_z = 1.0 / cam[:, 2]

    depth = np.full((H, W), np.inf)
    face_id = np.full((H, W), -1, dtype=np.int64)
    bary = np.zeros((H, W, 3))

    for fi, (a, b, c) in enumerate(mesh.faces):
        xs = np.array([sx[a], sx[b], sx[c]])
        ys = np.array([sy[a], sy[b], sy[c]])
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if abs(area) < 1e-12:
            continue
        j0 = max(int(math.floor(xs.min() - 0.5)), 0)
        j1 = min(int(math.ceil(xs.max() - 0.5)), W - 1)
        i0 = max(int(math.floor(ys.min() - 0.5)), 0)
        i1 = min(int(math.ceil(ys.max() - 0.5)), H - 1)
        if j0 > j1 or i0 > i1:
            continue
        px = np.arange(j0, j1 + 1) + 0.5
        py = (np.arange(i0, i1 + 1) + 0.5)[:, None]
        w0 = ((xs[1] - px) * (ys[2] - py) - (xs[2] - px) * (ys[1] - py)) / area
        w1 = ((xs[2] - px) * (ys[0] - py) - (xs[0] - px) * (ys[2] - py)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        iz = w0 * inv_z[a] + w1 * inv_z[b] + w2 * inv_z[c]
        z = 1.0 / iz
        win = depth[i0:i1 + 1, j0:j1 + 1]
        closer = inside & (z < win)
        if not closer.any():
            continue
        win[closer] = z[closer]
        face_id[i0:i1 + 1, j0:j1 + 1][closer] = fi
        # perspective-correct weights
        pw = np.stack([w0 * inv_z[a], w1 * inv_z[b], w2 * inv_z[c]], axis=-1) / iz[..., None]
        bary[i0:i1 + 1, j0:j1 + 1][closer] = pw[closer]

    coverage = face_id >= 0
    image = np.empty((H, W, 3))
    image[:] = np.asarray(cfg.background_color, dtype=np.float64)
    if coverage.any():
        rows, cols = np.nonzero(coverage)
        fids = face_id[rows, cols]
        tri = cam[mesh.faces]  # (F, 3, 3)
        normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        # face the camera: the eye is the camera-space origin
        flip = np.einsum("ij,ij->i", normals, -tri[:, 0]) < 0
        normals[flip] *= -1
        z = depth[rows, cols]
        points = np.stack([(cols + 0.5 - cx) / f * z, -(rows + 0.5 - cy) / f * z, z], axis=1)
        to_light = -points / np.linalg.norm(points, axis=1, keepdims=True)
        lambert = np.maximum(0.0, np.einsum("ij,ij->i", normals[fids], to_light))
        if textured:
            w = bary[rows, cols]
            tuv = mesh.uvs[mesh.face_uvs[fids]]  # (P, 3, 2)
            uv = np.einsum("pk,pkd->pd", w, tuv)
            albedo = _sample_texture(mesh.texture, uv[:, 0], uv[:, 1])
        else:
            albedo = np.full((len(rows), 3), cfg.gray_albedo)
        shade = albedo * cfg.light_intensity * lambert[:, None]
        image[rows, cols] = shade
    np.clip(image, 0.0, 1.0, out=image)
    return image, coverage, depth


@dataclass
class PairedClip:
    textured: np.ndarray  # (T, H, W, 3)
    untextured: np.ndarray  # (T, H, W, 3)
    coverage: np.ndarray  # (T, H, W) bool
    untextured_coverage: np.ndarray = field(repr=False, default=None)
    poses: list[CameraPose] = field(default_factory=list, repr=False)


def render_clip(mesh: Mesh, poses: Sequence[CameraPose], cfg: RenderConfig,
                threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Render every pose; frame parameters depend only on the frame index."""
    def one(i):
        return render_frame(mesh, poses[i], cfg, frame_index=i)

    if threads > 1 and len(poses) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(poses))))
    else:
        results = [one(i) for i in range(len(poses))]
    frames = np.stack([r[0] for r in results])
    coverage = np.stack([r[1] for r in results])
    return frames, coverage


def random_axis(rng: np.random.Generator) -> tuple[float, float, float]:
    v = rng.normal(size=3)
    return tuple((v / np.linalg.norm(v)).tolist())


def render_pair(mesh: Mesh, traj: Trajectory, cfg: RenderConfig, seed: int = 0,
                width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                focal: float | None = None, threads: int = 1) -> PairedClip:
    """Render the textured and gray passes under one shared camera/light/pose schedule.

    The seed only matters when ``cfg.pose_axis`` is None: it picks the axis.
    """
    center, radius = mesh.bounding_sphere
    if radius <= 0:
        raise RenderError("degenerate mesh: all vertices coincide")
    if cfg.pose_axis is None:
        cfg = replace(cfg, pose_axis=random_axis(derive_rng(seed, "pose_axis")))
    poses = generate_trajectory(traj, (center, radius), width, height, focal)
    textured, cov_t = render_clip(mesh, poses, replace(cfg, material_mode="textured"), threads)
    untextured, cov_u = render_clip(mesh, poses, replace(cfg, material_mode="untextured_gray"),
                                    threads)
    if not np.array_equal(cov_t, cov_u):
        raise RenderError("silhouettes of the two passes diverged")
    return PairedClip(textured, untextured, cov_t, cov_u, poses)


@dataclass(frozen=True)
class AugmentationRanges:
    kinds: tuple[str, ...] = TRAJECTORY_KINDS
    light_intensity: tuple[float, float] = (0.7, 1.3)
    pose_rotation: tuple[float, float] = (-0.05, 0.05)  # radians per frame
    max_translation: float = 0.25  # bounding radii
    base_distance: tuple[float, float] = (2.2, 3.5)
    angular_span: tuple[float, float] = (math.pi / 6, math.pi)
    elevation: tuple[float, float] = (0.0, math.radians(30))
    zoom_in_ratio: tuple[float, float] = (0.7, 0.95)
    zoom_out_ratio: tuple[float, float] = (1.05, 1.5)

    def __post_init__(self):
        for lo, hi in (self.light_intensity, self.pose_rotation, self.base_distance,
                       self.angular_span, self.elevation, self.zoom_in_ratio,
                       self.zoom_out_ratio):
            if lo > hi:
                raise ConfigError("augmentation range has lo > hi")
        if self.light_intensity[0] <= 0:
            raise ConfigError("light intensity range must be positive")
        if not 0 <= self.max_translation <= 0.25:
            raise ConfigError("max_translation must lie in [0, 0.25] bounding radii")
        if self.base_distance[0] < MIN_DISTANCE:
            raise ConfigError(f"base_distance range must start at >= {MIN_DISTANCE}")
        bad = set(self.kinds) - set(TRAJECTORY_KINDS)
        if bad or not self.kinds:
            raise ConfigError(f"bad trajectory kinds {sorted(bad)}")


def sample_augmentation(rng: np.random.Generator, ranges: AugmentationRanges, radius: float,
                        num_frames: int) -> tuple[Trajectory, RenderConfig]:
    u = rng.uniform
    kind = ranges.kinds[int(rng.integers(len(ranges.kinds)))]
    base = u(*ranges.base_distance)
    zoom = 1.0
    if kind == "zoom_in":
        # keep the end of the zoom outside the 1.5-radius floor
        lo = max(ranges.zoom_in_ratio[0], MIN_DISTANCE / base)
        zoom = u(lo, max(lo, ranges.zoom_in_ratio[1]))
        zoom = min(zoom, 1.0)
    elif kind == "zoom_out":
        zoom = u(*ranges.zoom_out_ratio)
    traj = Trajectory(
        kind=kind,
        num_frames=num_frames,
        base_distance=base,
        angular_span=u(*ranges.angular_span),
        elevation=u(*ranges.elevation),
        zoom_ratio=zoom,
        start_azimuth=u(0.0, 2 * math.pi),
    )
    offset = rng.normal(size=3)
    offset *= u(0.0, ranges.max_translation) * radius / np.linalg.norm(offset)
    cfg = RenderConfig(
        light_intensity=u(*ranges.light_intensity),
        pose_rotation=u(*ranges.pose_rotation),
        pose_axis=random_axis(rng),
        translation=tuple(offset.tolist()),
    )
    return traj, cfg


def generate_dataset(meshes: Sequence[tuple[str, Mesh]], out_dir: str | Path,
                     pairs_per_mesh: int = 8, aug_ranges: AugmentationRanges | None = None,
                     seed: int = 0, num_frames: int = DEFAULT_FRAMES,
                     width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                     fps: int = DEFAULT_FPS, threads: int = 1) -> dict:
    """Render ``pairs_per_mesh`` augmented pairs per mesh and write them plus ``manifest.json``."""
    if pairs_per_mesh < 1:
        raise ConfigError("pairs_per_mesh must be >= 1")
    aug_ranges = aug_ranges or AugmentationRanges()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory {out_dir} is not writable: {exc}") from exc

    samples = []
    for mi, (name, mesh) in enumerate(meshes):
        _, radius = mesh.bounding_sphere
        if radius <= 0:
            raise RenderError(f"{name}: degenerate mesh")
        for pj in range(pairs_per_mesh):
            rng = derive_rng(seed, mi, pj)
            traj, cfg = sample_augmentation(rng, aug_ranges, radius, num_frames)
            pair = render_pair(mesh, traj, cfg, seed=seed, width=width, height=height,
                               threads=threads)
            sample_dir = out_dir / f"mesh{mi:04d}_pair{pj:02d}"
            paths = {}
            for part, frames in (("textured", pair.textured), ("untextured", pair.untextured),
                                 ("coverage", pair.coverage)):
                save_clip(sample_dir / part, frames, fps=fps)
                paths[part] = str((sample_dir / part).relative_to(out_dir))
            samples.append({
                "mesh": name,
                "mesh_index": mi,
                "pair_index": pj,
                "trajectory": asdict(traj),
                "render": {k: v for k, v in asdict(cfg).items() if k != "material_mode"},
                "paths": paths,
            })

    manifest = {
        "seed": seed,
        "pairs_per_mesh": pairs_per_mesh,
        "num_frames": num_frames,
        "width": width,
        "height": height,
        "fps": fps,
        "augmentation": asdict(aug_ranges),
        "samples": samples,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
