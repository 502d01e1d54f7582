"""Dense signed distance grids of object meshes.

Values live at cell centers ``origin + spacing * (i, j, k)`` and are
negative inside the surface. Queries interpolate trilinearly; points outside
the grid get the value at the clamped point plus their distance to the grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import CorruptFile, NonOrientableMesh

SDF_MAGIC = b"SDF1"
SDF_VERSION = 1
DEFAULT_RESOLUTION = 128
_HEADER = struct.Struct("<4sB3ddIII")

# transverse ray offsets as fractions of the spacing; irrational-ish so rays
# do not graze mesh edges that sit on grid lines
_RAY_OFFSETS = ((0.000137, 0.000291), (0.000223, 0.000113), (0.000179, 0.000251))


@dataclass(frozen=True, eq=False)
class SdfGrid:
    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        origin = np.array(self.origin, dtype=float).reshape(3)
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("values must be a 3D array with at least 2 cells per axis")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError("SDF values must be finite")
        origin.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "values", values)

    @property
    def dims(self):
        return tuple(int(n) for n in self.values.shape)

    @property
    def upper(self):
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def cell_centers(self):
        axes = [self.origin[a] + self.spacing * np.arange(n) for a, n in enumerate(self.dims)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def query(self, points):
        """Signed distance at one point ``(3,)`` or many ``(N, 3)``."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = _kernels.trilinear_query(self.values, self.origin, self.spacing,
                                       np.ascontiguousarray(pts.reshape(-1, 3)))
        return float(out[0]) if single else out

    __call__ = query


def query(grid, x):
    return grid.query(x)


def build_from_mesh(mesh, resolution=DEFAULT_RESOLUTION, padding=None, max_inconsistent=0.01):
    """Sample the signed distance of a closed mesh on a regular grid.

    ``resolution`` is the number of cells along the longest padded axis and
    ``padding`` (meters) expands the mesh bounding box on every side; it
    defaults to 10% of the box diagonal. Magnitudes are exact distances to the
    nearest triangle; signs come from a majority vote of ray parities along
    the three axes.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    V = np.ascontiguousarray(mesh.vertices, dtype=float)
    F = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
    lo, hi = V.min(axis=0), V.max(axis=0)
    if padding is None:
        padding = 0.1 * float(np.linalg.norm(hi - lo))
    lo, hi = lo - padding, hi + padding
    extent = hi - lo
    spacing = float(extent.max()) / (resolution - 1)
    dims = np.maximum(np.ceil(extent / spacing - 1e-9).astype(np.int64) + 1, 2)
    # center the grid on the padded box
    origin = 0.5 * (lo + hi) - 0.5 * spacing * (dims - 1)

    dist = _kernels.unsigned_distance_grid(origin, spacing, int(dims[0]), int(dims[1]), int(dims[2]), V, F, 8)
    votes = np.zeros(tuple(dims), dtype=np.int8)
    for axis in range(3):
        ea, eb = (o * spacing for o in _RAY_OFFSETS[axis])
        par = _kernels.ray_parity_axis(origin, spacing, dims, V, F, axis, ea, eb)
        # kernel returns the grid with the ray axis first; move it back
        votes += np.moveaxis(par, 0, axis) if axis == 0 else _unroll(par, axis)
    inside = votes >= 2
    inconsistent = np.count_nonzero((votes == 1) | (votes == 2))
    if inconsistent > max_inconsistent * votes.size:
        raise NonOrientableMesh(
            f"sign votes disagree on {inconsistent} of {votes.size} cells; mesh is not watertight")
    values = np.where(inside, -dist, dist)
    return SdfGrid(origin, spacing, values.astype(np.float32))


def _unroll(par, axis):
    # par is indexed (axis, axis+1, axis+2) cyclically
    if axis == 1:
        return np.transpose(par, (2, 0, 1))
    return np.transpose(par, (1, 2, 0))


def save(grid, path):
    nx, ny, nz = grid.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SDF_MAGIC, SDF_VERSION, *grid.origin, grid.spacing, nx, ny, nz))
        fh.write(np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes())


def load(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, ox, oy, oz, spacing, nx, ny, nz = _HEADER.unpack_from(data, 0)
    if magic != SDF_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != SDF_VERSION:
        raise CorruptFile(f"{path}: unsupported version {version} (expected {SDF_VERSION})")
    count = nx * ny * nz
    if len(data) != _HEADER.size + 4 * count:
        raise CorruptFile(f"{path}: expected {count} values, file holds {(len(data) - _HEADER.size) // 4}")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    return SdfGrid((ox, oy, oz), spacing, values.reshape((nx, ny, nz), order="F"))
