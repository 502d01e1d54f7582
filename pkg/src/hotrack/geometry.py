"""Shared 3D types: rigid transforms, point clouds, meshes, cameras.

Conventions: points are ``(N, 3)`` float64 arrays in meters, rotations are
3x3 matrices, and a :class:`RigidTransform` maps ``x -> R @ x + t``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    CorruptFile,
    DegenerateConfiguration,
    EmptyReference,
    LengthMismatch,
)

BACKGROUND = 0
HAND = 1
OBJECT = 2

_ORTHO_TOL = 1e-6


def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def axis_angle_to_matrix(rotvec):
    """Rodrigues formula; accepts ``(3,)`` or ``(..., 3)``."""
    rotvec = np.asarray(rotvec, dtype=float)
    if rotvec.ndim > 1:
        flat = rotvec.reshape(-1, 3)
        out = np.stack([axis_angle_to_matrix(r) for r in flat])
        return out.reshape(rotvec.shape[:-1] + (3, 3))
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # second-order expansion keeps the result orthonormal to ~1e-24
        K = skew(rotvec)
        return np.eye(3) + K + 0.5 * K @ K
    K = skew(rotvec / angle)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * K @ K


def matrix_to_axis_angle(R):
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-8:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - angle < 1e-4:
        # near pi the antisymmetric part vanishes; recover the axis from R + I
        M = (R + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(M)))
        axis = M[:, i] / np.sqrt(max(M[i, i], 1e-300))
        axis /= np.linalg.norm(axis)
        # resolve the sign ambiguity with the (tiny) antisymmetric part
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        if np.dot(w, axis) < 0:
            axis = -axis
        return axis * angle
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return w * (angle / (2.0 * np.sin(angle)))


def rotation_angle(R_a, R_b=None):
    """Geodesic angle (radians) of ``R_a`` or between ``R_a`` and ``R_b``."""
    R = R_a if R_b is None else np.asarray(R_a).T @ np.asarray(R_b)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos))


def random_rotation(rng):
    """Uniformly distributed proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform has non-finite entries")
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation is not a proper orthonormal matrix")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_axis_angle(cls, rotvec, translation=(0.0, 0.0, 0.0)):
        return cls(axis_angle_to_matrix(rotvec), translation)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_inverse(self, points):
        """``R^-1 (x - t)`` without forming the inverse transform."""
        points = np.asarray(points, dtype=float)
        return (points - self.translation) @ self.rotation

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def rotvec(self):
        return matrix_to_axis_angle(self.rotation)

    def allclose(self, other, atol=1e-9):
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def to_dict(self):
        return {
            "rotation": [float(v) for v in self.rotation.ravel()],
            "translation": [float(v) for v in self.translation],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"], dtype=float).reshape(3, 3), d["translation"])

    def __repr__(self):
        angle = np.degrees(rotation_angle(self.rotation))
        return f"RigidTransform(angle={angle:.3f}deg, t={np.round(self.translation, 6).tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points with optional per-point labels (see ``HAND``, ``OBJECT``)."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite points")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.uint8).reshape(-1)
            if labels.shape[0] != pts.shape[0]:
                raise LengthMismatch("labels and points differ in length")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.points.shape[0]

    @property
    def centroid(self):
        return self.points.mean(axis=0)

    def select(self, label):
        if self.labels is None:
            raise ValueError("cloud has no labels")
        mask = self.labels == label
        return PointCloud(self.points[mask], self.labels[mask])

    def transformed(self, transform):
        return PointCloud(transform.apply(self.points), self.labels)

    def subsample(self, max_points, rng):
        if len(self) <= max_points:
            return self
        idx = np.sort(rng.choice(len(self), size=max_points, replace=False))
        return PointCloud(self.points[idx], None if self.labels is None else self.labels[idx])


_POC_MAGIC = b"POC1"


def save_point_cloud(cloud, path):
    """Binary layout: ``POC1``, u32 count, count*3 f32, then count u8 labels if present."""
    with open(path, "wb") as fh:
        fh.write(_POC_MAGIC)
        fh.write(struct.pack("<I", len(cloud)))
        fh.write(np.asarray(cloud.points, dtype="<f4").tobytes())
        if cloud.labels is not None:
            fh.write(np.asarray(cloud.labels, dtype=np.uint8).tobytes())


def load_point_cloud(path):
    data = Path(path).read_bytes()
    if data[:4] != _POC_MAGIC:
        raise CorruptFile(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise CorruptFile(f"{path}: truncated header")
    (n,) = struct.unpack_from("<I", data, 4)
    end = 8 + 12 * n
    if len(data) < end:
        raise CorruptFile(f"{path}: truncated point block")
    pts = np.frombuffer(data, dtype="<f4", count=3 * n, offset=8).reshape(n, 3).astype(float)
    labels = None
    if len(data) > end:
        if len(data) != end + n:
            raise CorruptFile(f"{path}: label block has wrong size")
        labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=end).copy()
    return PointCloud(pts, labels)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if f.size:
            area2 = np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
            f = f[area2 > 1e-14]
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    def transformed(self, transform):
        return TriangleMesh(transform.apply(self.vertices), self.triangles)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def sample_surface(self, n, rng):
        """Area-weighted uniform samples on the surface."""
        v, f = self.vertices, self.triangles
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        tri = rng.choice(len(f), size=n, p=area / area.sum())
        r1 = np.sqrt(rng.random(n))
        r2 = rng.random(n)
        w0, w1, w2 = 1.0 - r1, r1 * (1.0 - r2), r1 * r2
        return w0[:, None] * a[tri] + w1[:, None] * b[tri] + w2[:, None] * c[tri]


def load_obj(path):
    """Read ``v`` and ``f`` records of a Wavefront OBJ; polygons are fanned."""
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise CorruptFile(f"{path}:{lineno}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.triangles:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def kabsch_align(source, target):
    """Least-squares rigid transform taking ``source`` onto ``target``.

    Returns the proper rotation ``R`` and translation ``T`` minimizing
    ``sum ||target_i - (R source_i + T)||^2``. Reflections are corrected by
    flipping the singular vector of the smallest singular value.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise LengthMismatch(f"source has {len(src)} points, target has {len(dst)}")
    if len(src) < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    A, B = src - mu_s, dst - mu_d
    for pts in (A, B):
        sv = np.linalg.svd(pts, compute_uv=False)
        if sv[0] < 1e-12 or sv[1] < 1e-9 * max(sv[0], 1.0):
            raise DegenerateConfiguration("points are collinear or coincident")
    H = A.T @ B
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, mu_d - R @ mu_s)


def back_project(depth_image, intrinsics, labels=None):
    """Lift valid depth pixels (z > 0) to camera-space points ``z K^-1 [u v 1]``.

    ``labels`` may be a per-pixel image; it is normalized to per-point labels.
    Points are emitted in row-major pixel order.
    """
    depth = np.asarray(depth_image, dtype=float)
    v, u = np.nonzero(depth > 0)
    z = depth[v, u]
    x = (u - intrinsics.cx) / intrinsics.fx * z
    y = (v - intrinsics.cy) / intrinsics.fy * z
    pts = np.stack([x, y, z], axis=1)
    point_labels = None
    if labels is not None:
        point_labels = np.asarray(labels)[v, u]
    return PointCloud(pts, point_labels)


class _Behind:
    """Sentinel returned by :func:`project` for points at or behind the camera."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Behind"

    def __bool__(self):
        return False


Behind = _Behind()


def project(point, intrinsics):
    x, y, z = (float(c) for c in point)
    if z <= 0:
        return Behind
    return (intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy)


def project_points(points, intrinsics):
    """Vectorized pinhole projection; returns ``(uv, in_front)``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    in_front = z > 0
    safe = np.where(in_front, z, 1.0)
    uv = np.stack([intrinsics.fx * pts[:, 0] / safe + intrinsics.cx,
                   intrinsics.fy * pts[:, 1] / safe + intrinsics.cy], axis=1)
    return uv, in_front


def _as_points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def nearest_distances(query, reference):
    """Exact per-query Euclidean distance to the closest reference point."""
    q, r = _as_points(query), _as_points(reference)
    if len(r) == 0:
        raise EmptyReference("reference cloud is empty")
    if len(q) == 0:
        return np.zeros(0)
    d, _ = cKDTree(r).query(q, k=1, eps=0.0)
    return d
