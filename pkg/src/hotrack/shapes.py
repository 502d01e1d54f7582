"""Closed primitive meshes used by the synthetic benchmarks and tests."""

from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


def icosphere(radius=0.05, subdivisions=3, center=(0.0, 0.0, 0.0)):
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    V = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriangleMesh(V, np.array(faces))


def box(size=(0.06, 0.06, 0.1), center=(0.0, 0.0, 0.0), subdivisions=0):
    """Axis-aligned box; ``subdivisions`` splits every face into a finer grid."""
    half = np.asarray(size, dtype=float) / 2.0
    n = subdivisions + 1
    verts, faces = [], []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            a1, a2 = (axis + 1) % 3, (axis + 2) % 3
            base = len(verts)
            for i in range(n + 1):
                for j in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sign * half[axis]
                    p[a1] = -half[a1] + 2 * half[a1] * i / n
                    p[a2] = -half[a2] + 2 * half[a2] * j / n
                    verts.append(p)
            for i in range(n):
                for j in range(n):
                    v00 = base + i * (n + 1) + j
                    v10, v01, v11 = v00 + n + 1, v00 + 1, v00 + n + 2
                    if sign > 0:
                        faces += [(v00, v10, v11), (v00, v11, v01)]
                    else:
                        faces += [(v00, v11, v10), (v00, v01, v11)]
    V = np.array(verts) + np.asarray(center, dtype=float)
    # merge duplicated edge vertices so the surface is closed
    V, inv = np.unique(np.round(V, 12), axis=0, return_inverse=True)
    F = inv.reshape(-1)[np.array(faces)]
    return TriangleMesh(V, F)


def cylinder(radius=0.035, height=0.12, segments=64, center=(0.0, 0.0, 0.0)):
    """Closed cylinder whose symmetry axis is +z."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(segments)], axis=1)
    bottom = ring + [0, 0, -height / 2]
    top = ring + [0, 0, height / 2]
    V = np.vstack([bottom, top, [[0, 0, -height / 2], [0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [(i, j, segments + j), (i, segments + j, segments + i)]
        faces += [(cb, j, i), (ct, segments + i, segments + j)]
    return TriangleMesh(V + np.asarray(center, dtype=float), np.array(faces))


PRIMITIVES = {
    "sphere": lambda: icosphere(0.045, 3),
    "box": lambda: box((0.06, 0.07, 0.10)),
    "cylinder": lambda: cylinder(0.035, 0.12, 64),
}

# symmetry used when evaluating object pose on each primitive
PRIMITIVE_SYMMETRY = {"sphere": "full", "box": None, "cylinder": (0.0, 0.0, 1.0)}
