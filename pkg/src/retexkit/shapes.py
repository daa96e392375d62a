"""Procedural textured meshes for demos and tests."""
from __future__ import annotations

import numpy as np

from .mesh_io import Mesh


def checker_texture(size: int = 32, cells: int = 4, colors=((0.9, 0.2, 0.1), (0.1, 0.4, 0.9))):
    idx = (np.arange(size) * cells // size)
    board = (idx[:, None] + idx[None, :]) % 2
    return np.asarray(colors, dtype=np.float64)[board]


def uv_sphere(rings: int = 8, segments: int = 12, radius: float = 1.0,
              texture: np.ndarray | None = None, jitter: float = 0.0,
              rng: np.random.Generator | None = None) -> Mesh:
    """Latitude/longitude sphere with poles, optional radial noise, uv-mapped."""
    rng = rng or np.random.default_rng(0)
    verts, uvs = [], []
    for i in range(1, rings):
        theta = np.pi * i / rings
        for j in range(segments + 1):
            phi = 2 * np.pi * j / segments
            r = radius * (1 + jitter * rng.uniform(-1, 1)) if j < segments else None
            verts.append((theta, phi, r))
            uvs.append((j / segments, 1 - i / rings))
    # seam column duplicates the uv but reuses the first vertex position
    positions = []
    index = {}
    for k, (theta, phi, r) in enumerate(verts):
        j = k % (segments + 1)
        if j == segments:
            index[k] = index[k - segments]
            continue
        index[k] = len(positions)
        positions.append((r * np.sin(theta) * np.cos(phi), r * np.cos(theta),
                          r * np.sin(theta) * np.sin(phi)))
    top = len(positions)
    positions.append((0.0, radius, 0.0))
    bottom = len(positions)
    positions.append((0.0, -radius, 0.0))
    uvs.append((0.5, 1.0))
    uvs.append((0.5, 0.0))
    top_uv, bottom_uv = len(uvs) - 2, len(uvs) - 1

    faces, face_uvs = [], []
    row = segments + 1
    for j in range(segments):
        faces.append((top, index[j + 1], index[j]))
        face_uvs.append((top_uv, j + 1, j))
        last = (rings - 2) * row
        faces.append((bottom, index[last + j], index[last + j + 1]))
        face_uvs.append((bottom_uv, last + j, last + j + 1))
    for i in range(rings - 2):
        for j in range(segments):
            a, b = i * row + j, i * row + j + 1
            c, d = a + row, b + row
            faces += [(index[a], index[b], index[d]), (index[a], index[d], index[c])]
            face_uvs += [(a, b, d), (a, d, c)]
    if texture is None:
        texture = checker_texture()
    return Mesh(np.array(positions), np.array(faces), np.array(uvs), np.array(face_uvs), texture)


def cube(size: float = 1.0, texture: np.ndarray | None = None) -> Mesh:
    h = size / 2
    corners = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    uvs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
    faces, face_uvs = [], []
    for q in quads:
        faces += [(q[0], q[1], q[2]), (q[0], q[2], q[3])]
        face_uvs += [(0, 1, 2), (0, 2, 3)]
    if texture is None:
        texture = checker_texture()
    return Mesh(corners, np.array(faces), uvs, np.array(face_uvs), texture)
