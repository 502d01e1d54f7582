"""Articulated right-hand model: skeleton, forward kinematics, skinning.

Joint order is the wrist followed by four joints per finger (thumb, index,
middle, ring, pinky), each listed base to tip. The wrist and the five finger
bases form the rigid set used for canonicalization. Each finger carries three
articulated joints with an axis-angle rotation expressed in the rest frame of
its parent, giving a 45-vector pose.

Two shape modes are supported. The procedural mode (default) scales the 15
finger bones of a skeleton read from ``skeleton.cfg``; the model-data mode
reads a template mesh with shape blend shapes, joint regressor and skinning
weights from an ``HND1`` file.
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .. import _kernels
from ..errors import CorruptFile, ImplausibleJoints, ModelDataMissing
from ..geometry import RigidTransform, axis_angle_to_matrix, kabsch_align

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
N_JOINTS = 21
PARENTS = np.array([-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19])
BASE_JOINTS = (0, 1, 5, 9, 13, 17)
TIP_JOINTS = (4, 8, 12, 16, 20)
# articulated joint a (= 3 * finger + level) rotates finger bone a
ARTICULATED = tuple(1 + 4 * f + l for f in range(5) for l in range(3))
FINGER_BONES = tuple((j, j + 1) for j in ARTICULATED)
PALM_BONES = tuple((0, 1 + 4 * f) for f in range(5))
KNUCKLE_BONES = ((5, 9), (9, 13), (13, 17))
CAPSULE_BONES = FINGER_BONES + PALM_BONES + KNUCKLE_BONES
SCALE_RANGE = (0.6, 1.4)
MAX_BONE_LENGTH = 0.2
PALM_NORMAL = np.array([0.0, 0.0, -1.0])


def _vec(text):
    return np.array([float(t) for t in text.split()])


@dataclass(frozen=True, eq=False)
class HandSkeleton:
    """Rest layout of the procedural hand (all arrays read-only)."""

    mcp: np.ndarray  # (5, 3) finger base offsets from the wrist
    directions: np.ndarray  # (5, 3) unit rest direction per finger
    lengths: np.ndarray  # (15,) rest finger bone lengths
    radii: np.ndarray  # (15,) capsule radius per finger bone
    palm_radius: float = 0.012
    knuckle_radius: float = 0.011

    parents = PARENTS
    base = BASE_JOINTS

    @classmethod
    def load(cls, path=None):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        if path is None:
            parser.read_string(resources.files("hotrack.data").joinpath("skeleton.cfg").read_text())
        else:
            with open(path) as fh:
                parser.read_file(fh)
        mcp = np.stack([_vec(parser["palm"][f]) for f in FINGERS])
        dirs = np.stack([_vec(parser["directions"][f]) for f in FINGERS])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        lengths = np.concatenate([_vec(parser["lengths"][f]) for f in FINGERS])
        radii = np.concatenate([_vec(parser["radii"][f]) for f in FINGERS])
        if lengths.shape != (15,) or radii.shape != (15,) or np.any(lengths <= 0):
            raise ValueError("skeleton config needs 3 positive lengths and radii per finger")
        return cls(mcp, dirs, lengths, radii,
                   float(parser["radii"].get("palm", 0.012)), float(parser["radii"].get("knuckle", 0.011)))

    def flexion_axis(self, finger):
        axis = np.cross(self.directions[finger], PALM_NORMAL)
        return axis / np.linalg.norm(axis)


@dataclass(frozen=True, eq=False)
class HandShape:
    """Shape code: 15 bone scales (procedural) or 10 blend weights (model data)."""

    betas: np.ndarray
    mode: str = "procedural"

    def __post_init__(self):
        b = np.array(self.betas, dtype=float).reshape(-1)
        if self.mode == "procedural":
            if b.shape != (15,):
                raise ValueError("procedural shapes have 15 bone scales")
            if np.any(b < SCALE_RANGE[0] - 1e-12) or np.any(b > SCALE_RANGE[1] + 1e-12):
                raise ValueError("bone scales must lie in [0.6, 1.4]")
        elif self.mode == "model":
            if b.shape != (10,):
                raise ValueError("model-data shapes have 10 coefficients")
        else:
            raise ValueError(f"unknown shape mode {self.mode!r}")
        b.flags.writeable = False
        object.__setattr__(self, "betas", b)

    @classmethod
    def neutral(cls, mode="procedural"):
        return cls(np.ones(15) if mode == "procedural" else np.zeros(10), mode)

    def to_list(self):
        return [float(v) for v in self.betas]


@dataclass(frozen=True, eq=False)
class HandPose:
    theta: np.ndarray
    global_transform: RigidTransform = field(default_factory=RigidTransform)
    residual: float | None = None

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(45)
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)

    def with_global(self, transform):
        return HandPose(self.theta, transform, self.residual)

    def to_dict(self):
        return {"theta": [float(v) for v in self.theta], **self.global_transform.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["theta"]), RigidTransform.from_dict(d))


@dataclass(frozen=True, eq=False)
class HandMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    contact_regions: tuple  # 5 index arrays into ``vertices``, thumb..pinky


@dataclass(frozen=True, eq=False)
class HandModelData:
    """Template-mesh hand model loaded from an ``HND1`` file."""

    template: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    joint_regressor: np.ndarray  # (21, V)
    weights: np.ndarray  # (V, 16): wrist then the 15 articulated joints
    shape_basis: np.ndarray  # (10, V, 3)
    pose_basis: np.ndarray  # (P, 45)
    pose_mean: np.ndarray  # (45,)


_HND_MAGIC = b"HND1"


def save_model_data(data, path):
    """``HND1`` then u32 counts (V, F, shape dims, pose components) and the
    arrays as little-endian f32 (faces u32) in field order."""
    V, F = len(data.template), len(data.faces)
    with open(path, "wb") as fh:
        fh.write(_HND_MAGIC)
        fh.write(struct.pack("<4I", V, F, data.shape_basis.shape[0], data.pose_basis.shape[0]))
        fh.write(np.asarray(data.template, "<f4").tobytes())
        fh.write(np.asarray(data.faces, "<u4").tobytes())
        for arr in (data.joint_regressor, data.weights, data.shape_basis, data.pose_basis, data.pose_mean):
            fh.write(np.asarray(arr, "<f4").tobytes())


def load_model_data(path):
    raw = Path(path).read_bytes()
    if raw[:4] != _HND_MAGIC or len(raw) < 20:
        raise CorruptFile(f"{path}: not an HND1 hand model file")
    V, F, S, P = struct.unpack_from("<4I", raw, 4)
    sizes = [("template", "<f4", (V, 3)), ("faces", "<u4", (F, 3)), ("joint_regressor", "<f4", (21, V)),
             ("weights", "<f4", (V, 16)), ("shape_basis", "<f4", (S, V, 3)), ("pose_basis", "<f4", (P, 45)),
             ("pose_mean", "<f4", (45,))]
    off = 20
    arrays = {}
    for name, dt, shape in sizes:
        n = int(np.prod(shape))
        if off + 4 * n > len(raw):
            raise CorruptFile(f"{path}: truncated at {name}")
        arrays[name] = np.frombuffer(raw, dt, n, off).reshape(shape).astype(float if dt == "<f4" else np.int64)
        off += 4 * n
    if off != len(raw):
        raise CorruptFile(f"{path}: {len(raw) - off} trailing bytes")
    if S != 10:
        raise CorruptFile(f"{path}: expected 10 shape components, found {S}")
    return HandModelData(**arrays)


def _capsule_profile(rings_cap=3):
    """(z_frac, z_rad, r_frac) samples along a capsule profile, base to tip.

    Position along the axis is ``z_frac * L + z_rad * r`` and the ring radius
    is ``r_frac * r``.
    """
    prof = [(0.0, -1.0, 0.0)]
    for i in range(1, rings_cap + 1):
        phi = 0.5 * np.pi * i / (rings_cap + 1)
        prof.append((0.0, -np.cos(phi), np.sin(phi)))
    for zf in (0.0, 0.25, 0.5, 0.75, 1.0):
        prof.append((zf, 0.0, 1.0))
    for i in range(rings_cap, 0, -1):
        phi = 0.5 * np.pi * i / (rings_cap + 1)
        prof.append((1.0, np.cos(phi), np.sin(phi)))
    prof.append((1.0, 1.0, 0.0))
    return np.array(prof)


def _capsule_template(segments=10, rings_cap=3):
    """Unit capsule template: profile parameters per vertex and triangles."""
    prof = _capsule_profile(rings_cap)
    ang = 2 * np.pi * np.arange(segments) / segments
    params, faces = [(*prof[0], 1.0, 0.0)], []
    ring_start = []
    for p in prof[1:-1]:
        ring_start.append(len(params))
        for a in ang:
            params.append((*p, np.cos(a), np.sin(a)))
    top = len(params)
    params.append((*prof[-1], 1.0, 0.0))
    for s in range(segments):
        faces.append((0, ring_start[0] + (s + 1) % segments, ring_start[0] + s))
    for r in range(len(ring_start) - 1):
        a0, a1 = ring_start[r], ring_start[r + 1]
        for s in range(segments):
            t = (s + 1) % segments
            faces.append((a0 + s, a0 + t, a1 + t))
            faces.append((a0 + s, a1 + t, a1 + s))
    last = ring_start[-1]
    for s in range(segments):
        faces.append((top, last + s, last + (s + 1) % segments))
    return np.array(params), np.array(faces)


def _frame_from_z(direction):
    """Rotation taking +z onto ``direction``."""
    z = direction / np.linalg.norm(direction)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    return np.stack([x, np.cross(z, x), z], axis=1)


def bone_lengths(joints):
    """Lengths of the 15 finger bones of ``(..., 21, 3)`` joints."""
    J = np.asarray(joints, dtype=float)
    parents = np.array([p for p, _ in FINGER_BONES])
    children = np.array([c for _, c in FINGER_BONES])
    return np.linalg.norm(J[..., children, :] - J[..., parents, :], axis=-1)


def rotations_from_theta(thetas):
    """``(M, 45)`` axis-angles to ``(M, 15, 3, 3)`` local rotations."""
    th = np.ascontiguousarray(np.asarray(thetas, dtype=float).reshape(-1, 3))
    return _kernels.rodrigues_batch(th).reshape(-1, 15, 3, 3)


class HandModel:
    """Forward kinematics, skinning and canonicalization for one hand."""

    def __init__(self, skeleton=None, model_data=None, capsule_segments=10, capsule_rings=3):
        self.skeleton = skeleton or HandSkeleton.load()
        self.model_data = model_data
        self._cap_params, self._cap_faces = _capsule_template(capsule_segments, capsule_rings)

    @property
    def mode(self):
        return "model" if self.model_data is not None else "procedural"

    def neutral_shape(self):
        return HandShape.neutral(self.mode)

    def _check_shape(self, shape):
        if shape.mode == "model" and self.model_data is None:
            raise ModelDataMissing("model-data shape requested but no hand model file is loaded")

    def rest_joints(self, shape=None):
        """Joint positions at ``theta = 0`` in canonical hand space."""
        shape = shape or self.neutral_shape()
        self._check_shape(shape)
        if shape.mode == "model":
            md = self.model_data
            verts = md.template + np.tensordot(shape.betas, md.shape_basis, axes=1)
            J = md.joint_regressor @ verts
            return J - J[0]
        sk = self.skeleton
        J = np.zeros((N_JOINTS, 3))
        lengths = sk.lengths * shape.betas
        for f in range(5):
            base = 1 + 4 * f
            J[base] = sk.mcp[f]
            for l in range(3):
                J[base + l + 1] = J[base + l] + sk.directions[f] * lengths[3 * f + l]
        return J

    def base_joints(self, shape=None):
        return self.rest_joints(shape)[list(BASE_JOINTS)]

    def rest_bone_lengths(self, shape=None):
        return bone_lengths(self.rest_joints(shape))

    def fk_batch(self, shape, thetas, rest=None, return_rotations=False):
        """Joints ``(M, 21, 3)`` for each row of ``thetas`` ``(M, 45)``."""
        rest = self.rest_joints(shape) if rest is None else rest
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        m = thetas.shape[0]
        local = rotations_from_theta(thetas)
        glob = np.empty_like(local)
        J = np.broadcast_to(rest, (m, N_JOINTS, 3)).copy()
        for f in range(5):
            G = None
            for l in range(3):
                a = 3 * f + l
                G = local[:, a] if G is None else G @ local[:, a]
                glob[:, a] = G
                p, c = FINGER_BONES[a]
                J[:, c] = J[:, p] + G @ (rest[c] - rest[p])
        return (J, glob) if return_rotations else J

    def forward_kinematics(self, shape, theta):
        """Canonical-space joints for one pose; base joints never move."""
        return self.fk_batch(shape, np.asarray(theta).reshape(1, 45))[0]

    def joints(self, shape, pose):
        """Camera-space joints of a posed hand."""
        return pose.global_transform.apply(self.forward_kinematics(shape, pose.theta))

    def finger_fk_batch(self, rest, finger, thetas9):
        """Positions ``(M, 3, 3)`` of one finger's three moving joints."""
        th = np.ascontiguousarray(np.asarray(thetas9, dtype=float).reshape(-1, 3))
        local = _kernels.rodrigues_batch(th).reshape(-1, 3, 3, 3)
        base = 1 + 4 * finger
        out = np.empty((local.shape[0], 3, 3))
        G = None
        prev = rest[base]
        for l in range(3):
            G = local[:, l] if G is None else G @ local[:, l]
            prev = prev + G @ (rest[base + l + 1] - rest[base + l])
            out[:, l] = prev
        return out

    # -- surface -----------------------------------------------------------

    def capsule_radii(self):
        sk = self.skeleton
        return np.concatenate([sk.radii, np.full(5, sk.palm_radius), np.full(3, sk.knuckle_radius)])

    def capsule_segments(self, joints):
        """Capsule endpoints ``(..., S, 3)`` for camera- or canonical-space joints."""
        J = np.asarray(joints)
        a = np.array([p for p, _ in CAPSULE_BONES])
        b = np.array([c for _, c in CAPSULE_BONES])
        return J[..., a, :], J[..., b, :]

    def _capsule_local(self, rest):
        """Per-capsule vertex offsets in the rest frame, plus vertex bookkeeping."""
        radii = self.capsule_radii()
        P = self._cap_params
        verts, faces, owner, tip_half = [], [], [], []
        for c, (p, q) in enumerate(CAPSULE_BONES):
            d = rest[q] - rest[p]
            L = np.linalg.norm(d)
            Q = _frame_from_z(d)
            r = radii[c]
            z = P[:, 0] * L + P[:, 1] * r
            local = np.stack([P[:, 2] * r * P[:, 3], P[:, 2] * r * P[:, 4], z], axis=1)
            faces.append(self._cap_faces + len(owner))
            verts.append(local @ Q.T)
            owner += [c] * len(P)
            tip_half.append(z >= 0.5 * L)
        return np.vstack(verts), np.vstack(faces), np.array(owner), np.concatenate(tip_half)

    def skin_mesh(self, shape, pose, mode=None):
        """Posed hand surface in camera space.

        Procedural mode sweeps a capsule around every bone; model-data mode
        applies linear blend skinning to the template. Asking for
        ``mode="model"`` without loaded data raises :class:`ModelDataMissing`.
        """
        mode = mode or self.mode
        if mode == "model":
            if self.model_data is None:
                raise ModelDataMissing("no hand model data loaded")
            return self._lbs_mesh(shape, pose)
        rest = self.rest_joints(shape)
        J, glob = self.fk_batch(shape, pose.theta[None], rest=rest, return_rotations=True)
        J, glob = J[0], glob[0]
        local, faces, owner, tip_half = self._capsule_local(rest)
        rots = np.concatenate([glob, np.broadcast_to(np.eye(3), (8, 3, 3))])
        starts = np.array([J[p] for p, _ in CAPSULE_BONES])
        verts = np.einsum("vij,vj->vi", rots[owner], local) + starts[owner]
        verts = pose.global_transform.apply(verts)
        regions = tuple(np.nonzero((owner == 3 * f + 2) & tip_half)[0] for f in range(5))
        return HandMesh(verts, faces, regions)

    def surface_template(self, shape):
        """Cached per-shape capsule layout used by :meth:`surface_batch`."""
        key = (shape.mode, shape.betas.tobytes())
        cache = getattr(self, "_surface_cache", None)
        if cache is None or cache[0] != key:
            rest = self.rest_joints(shape)
            local, faces, owner, tip_half = self._capsule_local(rest)
            regions = tuple(np.nonzero((owner == 3 * f + 2) & tip_half)[0] for f in range(5))
            self._surface_cache = (key, rest, local, faces, owner, regions)
        return self._surface_cache[1:]

    def surface_batch(self, shape, thetas, rotations=None, translations=None, subset=None):
        """Posed surface vertices ``(M, V, 3)`` for a batch of poses.

        ``rotations``/``translations`` are the per-candidate global transforms.
        Vertex order matches :meth:`skin_mesh`; ``subset`` selects vertices.
        """
        thetas = np.atleast_2d(thetas)
        m = len(thetas)
        if self.mode == "model":
            out = np.stack([self._lbs_mesh(shape, HandPose(th)).vertices for th in thetas])
            if subset is not None:
                out = out[:, subset]
        elif subset is not None:
            rest, local, _, owner, _ = self.surface_template(shape)
            J, glob = self.fk_batch(shape, thetas, rest=rest, return_rotations=True)
            rots = np.concatenate([glob, np.broadcast_to(np.eye(3), (m, 8, 3, 3))], axis=1)
            starts = J[:, [p for p, _ in CAPSULE_BONES]]
            own = owner[subset]
            out = np.einsum("mvij,vj->mvi", rots[:, own], local[subset]) + starts[:, own]
        else:
            rest, local, _, owner, _ = self.surface_template(shape)
            J, glob = self.fk_batch(shape, thetas, rest=rest, return_rotations=True)
            rots = np.concatenate([glob, np.broadcast_to(np.eye(3), (m, 8, 3, 3))], axis=1)
            starts = J[:, [p for p, _ in CAPSULE_BONES]]
            # group by capsule: (M, C, 3, 3) x (C, n, 3)
            n_per = np.bincount(owner)
            if np.all(n_per == n_per[0]):
                loc = local.reshape(len(n_per), n_per[0], 3)
                out = np.einsum("mcij,cnj->mcni", rots, loc) + starts[:, :, None, :]
                out = out.reshape(m, -1, 3)
            else:
                out = np.einsum("mvij,vj->mvi", rots[:, owner], local) + starts[:, owner]
        if rotations is not None:
            out = np.einsum("mij,mvj->mvi", np.asarray(rotations), out)
        if translations is not None:
            out = out + np.asarray(translations)[:, None, :]
        return out

    def _lbs_mesh(self, shape, pose):
        md = self.model_data
        verts = md.template + np.tensordot(shape.betas, md.shape_basis, axes=1)
        rest = md.joint_regressor @ verts
        J, glob = self.fk_batch(shape, pose.theta[None], rest=rest, return_rotations=True)
        J, glob = J[0], glob[0]
        rots = np.concatenate([np.eye(3)[None], glob])
        centers_rest = rest[[0] + list(ARTICULATED)]
        centers_posed = J[[0] + list(ARTICULATED)]
        # per-transform candidate positions, then blend: (16, V, 3)
        cand = np.einsum("kij,kvj->kvi", rots, verts[None] - centers_rest[:, None]) + centers_posed[:, None]
        posed = np.einsum("vk,kvi->vi", md.weights, cand) - rest[0]
        posed = pose.global_transform.apply(posed)
        rest_tips = rest[list(TIP_JOINTS)] - rest[0]
        base_verts = verts - rest[0]
        regions = tuple(np.nonzero(np.linalg.norm(base_verts - t, axis=1) < 0.012)[0] for t in rest_tips)
        return HandMesh(posed, md.faces, regions)

    # -- fitting -----------------------------------------------------------

    def canon_pose(self, shape, base_camera):
        """Rigid transform taking canonical base joints onto observed ones."""
        return kabsch_align(self.base_joints(shape), np.asarray(base_camera).reshape(6, 3))

    def fit_shape(self, joints, optimizer_config=None):
        """Shape whose rest bone lengths best match ``joints`` in L1."""
        observed = bone_lengths(joints)
        if np.any(observed <= 0) or np.any(observed > MAX_BONE_LENGTH):
            raise ImplausibleJoints(f"bone lengths out of range: {np.round(observed, 4).tolist()}")
        if self.mode == "procedural":
            scales = np.clip(observed / self.skeleton.lengths, *SCALE_RANGE)
            return HandShape(scales)
        return self._fit_model_shape(observed[None], optimizer_config)

    def fit_shape_to_lengths(self, length_history, optimizer_config=None):
        """Shape minimizing the mean L1 bone-length mismatch over snapshots."""
        hist = np.atleast_2d(np.asarray(length_history, dtype=float))
        if self.mode == "procedural":
            # per-bone L1 optimum over snapshots is the median
            scales = np.clip(np.median(hist, axis=0) / self.skeleton.lengths, *SCALE_RANGE)
            return HandShape(scales)
        return self._fit_model_shape(hist, optimizer_config)

    def _fit_model_shape(self, hist, optimizer_config):
        from ..gfo import OptConfig, OptProblem, optimize

        md = self.model_data
        children = np.array([c for _, c in FINGER_BONES])
        parents = np.array([p for p, _ in FINGER_BONES])

        def batch(B):
            verts = md.template[None] + np.einsum("ms,svk->mvk", B, md.shape_basis)
            J = np.einsum("jv,mvk->mjk", md.joint_regressor, verts)
            L = np.linalg.norm(J[:, children] - J[:, parents], axis=-1)
            return np.abs(L[:, None, :] - hist[None]).sum(-1).mean(-1)

        cfg = optimizer_config or OptConfig(particles=256, iterations=60, initial_step=1.0, seed=0)
        res = optimize(OptProblem(None, np.zeros(10), batch_energy=batch), cfg)
        return HandShape(res.x, "model")
