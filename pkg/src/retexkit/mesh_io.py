"""Reader/writer for a small subset of the Wavefront OBJ text format.

Only ``v``, ``vt`` and ``f`` lines are honoured. Everything else (normals,
groups, materials, ...) is skipped and counted in ``Mesh.skipped_lines``.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np

from .errors import MeshError
from .imaging import load_image

TEXTURE_SUFFIXES = (".png", ".ppm")

log = logging.getLogger(__name__)


def compute_bounding_sphere(mesh) -> tuple[np.ndarray, float]:
    """Centroid of the vertices and the largest distance from it.

    Accepts a ``Mesh`` or a bare (N, 3) vertex array.
    """
    vertices = getattr(mesh, "vertices", mesh)
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) == 0:
        raise MeshError("cannot bound an empty vertex list")
    center = vertices.mean(axis=0)
    radius = float(np.sqrt(((vertices - center) ** 2).sum(axis=1)).max())
    return center, radius


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray  # (N, 3)
    faces: np.ndarray  # (F, 3) zero-based vertex indices
    uvs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    face_uvs: np.ndarray | None = None  # (F, 3) zero-based uv indices
    texture: np.ndarray | None = None  # (H, W, 3) floats in [0, 1]
    skipped_lines: int = 0

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        uvs = np.array(self.uvs, dtype=np.float64).reshape(-1, 2)
        face_uvs = None
        if self.face_uvs is not None:
            face_uvs = np.array(self.face_uvs, dtype=np.int64).reshape(-1, 3)
        texture = None
        if self.texture is not None:
            texture = np.array(self.texture, dtype=np.float64)
            if texture.ndim != 3 or texture.shape[2] != 3 or texture.size == 0:
                raise MeshError(f"texture must be an (H, W, 3) array, got {texture.shape}")

        if not np.isfinite(verts).all() or not np.isfinite(uvs).all():
            raise MeshError("vertex and uv coordinates must be finite")
        if len(faces) == 0:
            raise MeshError("mesh has no triangles")
        if faces.min() < 0 or faces.max() >= len(verts):
            raise MeshError("vertex index out of range")
        if ((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])).any():
            raise MeshError("triangle repeats a vertex index")
        if face_uvs is not None:
            if face_uvs.shape != faces.shape:
                raise MeshError("face_uvs must match faces in shape")
            if face_uvs.min() < 0 or face_uvs.max() >= len(uvs):
                raise MeshError("uv index out of range")
            if texture is None:
                raise MeshError("faces carry uv indices but no texture was supplied")

        for name, arr in (("vertices", verts), ("faces", faces), ("uvs", uvs),
                          ("face_uvs", face_uvs), ("texture", texture)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        return compute_bounding_sphere(self.vertices)

    @property
    def has_uvs(self) -> bool:
        return self.face_uvs is not None

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (same(self.vertices, other.vertices) and same(self.faces, other.faces)
                and same(self.uvs, other.uvs) and same(self.face_uvs, other.face_uvs)
                and same(self.texture, other.texture))

    __hash__ = None


def _parse_float(token: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MeshError(f"line {lineno}: malformed number {token!r}") from None
    if not math.isfinite(value):
        raise MeshError(f"line {lineno}: non-finite number {token!r}")
    return value


def _parse_index(token: str, count: int, lineno: int, what: str) -> int:
    try:
        idx = int(token)
    except ValueError:
        raise MeshError(f"line {lineno}: malformed {what} index {token!r}") from None
    # OBJ indices are 1-based; negative values count back from the latest element
    resolved = idx - 1 if idx > 0 else count + idx
    if idx == 0 or not 0 <= resolved < count:
        raise MeshError(f"line {lineno}: {what} index {idx} out of range (have {count})")
    return resolved


def parse_mesh(text: str | TextIO, texture: np.ndarray | None = None) -> Mesh:
    if isinstance(text, str):
        text = io.StringIO(text)
    vertices: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_uvs: list[tuple[int, int, int]] = []
    faces_with_uv = faces_without_uv = 0
    skipped = 0

    for lineno, raw in enumerate(text, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "v":
            if len(rest) < 3:
                raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            # a 4th (w) or colour components are tolerated and dropped
            vertices.append([_parse_float(t, lineno) for t in rest[:3]])
        elif head == "vt":
            if len(rest) < 2:
                raise MeshError(f"line {lineno}: texture coordinate needs 2 values")
            uvs.append([_parse_float(t, lineno) for t in rest[:2]])
        elif head == "f":
            if len(rest) < 3:
                raise MeshError(f"line {lineno}: face needs at least 3 vertices")
            vidx, tidx = [], []
            for corner in rest:
                parts = corner.split("/")
                vidx.append(_parse_index(parts[0], len(vertices), lineno, "vertex"))
                if len(parts) > 1 and parts[1]:
                    tidx.append(_parse_index(parts[1], len(uvs), lineno, "uv"))
            if tidx and len(tidx) != len(vidx):
                raise MeshError(f"line {lineno}: face mixes corners with and without uvs")
            if tidx:
                faces_with_uv += 1
            else:
                faces_without_uv += 1
            for k in range(1, len(vidx) - 1):
                tri = (vidx[0], vidx[k], vidx[k + 1])
                if len(set(tri)) != 3:
                    raise MeshError(f"line {lineno}: degenerate face repeats vertex {tri}")
                faces.append(tri)
                if tidx:
                    face_uvs.append((tidx[0], tidx[k], tidx[k + 1]))
        else:
            skipped += 1

    if skipped:
        log.warning("ignored %d unsupported mesh lines", skipped)
    if faces_with_uv and faces_without_uv:
        raise MeshError("mesh mixes faces with and without uv coordinates")
    if not faces:
        raise MeshError("mesh has no faces")
    return Mesh(
        vertices=np.array(vertices).reshape(-1, 3),
        faces=np.array(faces),
        uvs=np.array(uvs).reshape(-1, 2),
        face_uvs=np.array(face_uvs) if faces_with_uv else None,
        texture=texture,
        skipped_lines=skipped,
    )


def serialize_mesh(mesh: Mesh) -> str:
    """Inverse of ``parse_mesh`` (texture is not embedded in the text)."""
    out = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    out += [f"vt {u!r} {v!r}" for u, v in mesh.uvs.tolist()]
    if mesh.face_uvs is None:
        out += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    else:
        for (a, b, c), (ta, tb, tc) in zip(mesh.faces.tolist(), mesh.face_uvs.tolist()):
            out.append(f"f {a + 1}/{ta + 1} {b + 1}/{tb + 1} {c + 1}/{tc + 1}")
    return "\n".join(out) + "\n"


def find_texture(mesh_path: Path) -> Path | None:
    for suffix in TEXTURE_SUFFIXES:
        candidate = mesh_path.with_suffix(suffix)
        if candidate.exists():
            return candidate
    return None


def load_mesh(path: str | Path, texture_path: str | Path | None = None) -> Mesh:
    """Load a mesh file; a sibling ``<stem>.png``/``<stem>.ppm`` is used as texture."""
    path = Path(path)
    if not path.is_file():
        raise MeshError(f"mesh file not found: {path}")
    tex_path = Path(texture_path) if texture_path else find_texture(path)
    texture = load_image(tex_path) if tex_path else None
    try:
        with path.open(encoding="utf-8") as fh:
            return parse_mesh(fh, texture=texture)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise MeshError(f"{path}: not UTF-8 text ({exc})") from None
