"""Hand-object energies and the hand-pose refinement search.

The object pose is held fixed; only the hand pose ``(theta, R, T)`` moves.
Energy terms: maximum penetration of the hand surface into the object SDF,
attraction of fingertip contact regions toward the surface (switched on only
when the pre-refinement hand already penetrates deeper than a gate), joint
agreement with the visible predicted joints, and the fraction of hand points
projecting outside the hand-object silhouette.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NoVisibleJoints
from .geometry import CameraIntrinsics, RigidTransform, project_points
from .gfo import OptConfig, OptProblem, ParticleOptimizer
from .hand.model import HandPose


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    mask: np.ndarray  # (height, width) bool, True inside the hand-object silhouette
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        m = np.asarray(self.mask).astype(bool)
        if m.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(f"mask shape {m.shape} does not match intrinsics "
                             f"{(self.intrinsics.height, self.intrinsics.width)}")
        object.__setattr__(self, "mask", m)

    @classmethod
    def from_labels(cls, labels, intrinsics):
        return cls(np.asarray(labels) > 0, intrinsics)


def write_pgm(mask, path):
    m = np.asarray(mask)
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(np.where(m > 0, 255, 0).astype(np.uint8).tobytes())


def read_pgm(path):
    """Binary PGM (P5, maxval < 256); nonzero pixels are inside."""
    data = open(path, "rb").read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pix.reshape(h, w) > 0


def _sdf_values(points, sdf, obj_pose):
    """Signed distances of camera-space points ``(..., 3)`` to the posed object."""
    pts = np.asarray(points, dtype=float)
    local = (pts.reshape(-1, 3) - obj_pose.translation) @ obj_pose.rotation
    vals = _kernels.trilinear_query(sdf.values, sdf.origin, sdf.spacing, np.ascontiguousarray(local))
    return vals.reshape(pts.shape[:-1])


def e_penetr(hand_points, sdf, obj_pose):
    """Maximum penetration depth (>= 0) of hand surface points into the object."""
    vals = _sdf_values(_vertices(hand_points), sdf, obj_pose)
    return float(max(0.0, -vals.min())) if vals.size else 0.0


def e_attr(contact_points, sdf, obj_pose):
    """Sum of positive signed distances of fingertip contact points."""
    vals = _sdf_values(_vertices(contact_points), sdf, obj_pose)
    return float(np.maximum(vals, 0.0).sum())


def e_joint(joints, predicted, visible, norm="l2"):
    """Mean per-visible-joint distance between hand joints and predictions."""
    visible = np.asarray(visible, dtype=bool)
    if not visible.any():
        raise NoVisibleJoints("no visible joints")
    diff = np.asarray(joints)[..., visible, :] - np.asarray(predicted)[visible]
    if norm == "l1":
        return np.abs(diff).sum(-1).mean(-1)
    return np.linalg.norm(diff, axis=-1).mean(-1)


def e_sil(hand_points, mask):
    """Fraction of hand points whose projection falls outside the silhouette.

    Points at or behind the camera plane count as outside.
    """
    pts = _vertices(hand_points)
    flat = pts.reshape(-1, 3)
    uv, front = project_points(flat, mask.intrinsics)
    u = np.rint(uv[:, 0]).astype(np.int64)
    v = np.rint(uv[:, 1]).astype(np.int64)
    h, w = mask.mask.shape
    inside = front & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    hit = np.zeros(len(flat), dtype=bool)
    hit[inside] = mask.mask[v[inside], u[inside]]
    return (~hit).reshape(pts.shape[:-1]).mean(-1)


def _vertices(x):
    return np.asarray(getattr(x, "vertices", x), dtype=float)


@dataclass
class RefineConfig:
    w_pen: float = 1000.0
    w_attr: float = 0.1
    w_joint: float = 100.0
    w_sil: float = 1.0
    gate: float = 0.003
    joint_norm: str = "l2"
    max_rotation: float = np.radians(10.0)
    max_translation: float = 0.03
    passes: int = 2
    global_optimizer: OptConfig = field(default_factory=lambda: OptConfig(
        particles=256, iterations=20, initial_step=np.array([0.02, 0.02, 0.02, 0.003, 0.003, 0.003]),
        tolerance=1e-3, seed=3))
    finger_optimizer: OptConfig = field(default_factory=lambda: OptConfig(
        particles=256, iterations=24, initial_step=0.1, tolerance=1e-3, seed=4))

    def __post_init__(self):
        if min(self.w_pen, self.w_attr, self.w_joint, self.w_sil) < 0:
            raise ValueError("energy weights must be non-negative")
        if self.gate <= 0:
            raise ValueError("gate threshold must be positive")


@dataclass
class RefineContext:
    """Per-frame observations and instrumentation for one refinement."""

    model: object
    shape: object
    sdf: object
    obj_pose: RigidTransform
    predicted_joints: np.ndarray
    visible: np.ndarray
    mask: SilhouetteMask | None = None
    gate_on: bool | None = None
    counts: dict = field(default_factory=lambda: {"pen": 0, "attr": 0, "joint": 0, "sil": 0})

    def decide_gate(self, pose, config):
        """Fix the attraction gate from the pre-refinement pose."""
        verts = self.model.skin_mesh(self.shape, pose).vertices
        self.gate_on = e_penetr(verts, self.sdf, self.obj_pose) > config.gate
        return self.gate_on


def _terms(ctx, config, verts, regions, joints, fixed=None):
    """Gated energy for ``M`` candidates.

    ``verts`` ``(M, V, 3)`` are camera-space surface points that move with the
    candidates and ``regions`` indexes the contact points among them.
    ``fixed`` carries the contribution of surface points that do not move:
    ``(max depth, attraction sum, outside count, point count)``.
    """
    m = len(verts)
    pen0, attr0, out0, n0 = fixed or (0.0, 0.0, 0.0, 0)
    total = np.zeros(m)
    if config.w_pen > 0 or (ctx.gate_on and config.w_attr > 0):
        vals = _sdf_values(verts, ctx.sdf, ctx.obj_pose)
    if config.w_pen > 0:
        total += config.w_pen * np.maximum(np.maximum(-vals.min(axis=1), 0.0), pen0)
        ctx.counts["pen"] += m
    if ctx.gate_on and config.w_attr > 0:
        total += config.w_attr * (np.maximum(vals[:, regions], 0.0).sum(axis=1) + attr0)
        ctx.counts["attr"] += m
    if config.w_joint > 0:
        total += config.w_joint * e_joint(joints, ctx.predicted_joints, ctx.visible, config.joint_norm)
        ctx.counts["joint"] += m
    if config.w_sil > 0 and ctx.mask is not None:
        n = verts.shape[1]
        total += config.w_sil * (e_sil(verts, ctx.mask) * n + out0) / (n + n0)
        ctx.counts["sil"] += m
    return total


def _fixed_part(ctx, config, verts, regions):
    """Contribution tuple of a static point set, see :func:`_terms`."""
    if len(verts) == 0:
        return 0.0, 0.0, 0.0, 0
    vals = _sdf_values(verts, ctx.sdf, ctx.obj_pose)
    attr = float(np.maximum(vals[regions], 0.0).sum()) if ctx.gate_on else 0.0
    out = float(e_sil(verts[None], ctx.mask)[0] * len(verts)) if ctx.mask is not None else 0.0
    return float(max(-vals.min(), 0.0)), attr, out, len(verts)


def _regions(model, shape):
    if model.mode == "model":
        return model.skin_mesh(shape, HandPose(np.zeros(45))).contact_regions
    return model.surface_template(shape)[4]


def _posed_joints(model, shape, thetas, rotations, translations):
    J = model.fk_batch(shape, thetas)
    return np.einsum("mij,mnj->mni", rotations, J) + translations[:, None, :]


def gated_energy(pose, ctx, config=None):
    """Weighted sum of the refinement terms for one hand pose."""
    config = config or RefineConfig()
    if ctx.gate_on is None:
        ctx.decide_gate(pose, config)
    g = pose.global_transform
    R, t = g.rotation[None], g.translation[None]
    verts = ctx.model.surface_batch(ctx.shape, pose.theta[None], R, t)
    regions = np.concatenate(_regions(ctx.model, ctx.shape))
    J = _posed_joints(ctx.model, ctx.shape, pose.theta[None], R, t)
    return float(_terms(ctx, config, verts, regions, J)[0])


def _finger_split(model, shape, finger):
    """Vertex indices moved by one finger's articulation and the contact
    indices among them, or ``None`` when every vertex may move."""
    if model.mode == "model":
        return None
    _, _, _, owner, regions = model.surface_template(shape)
    moving = np.nonzero((owner < 15) & (owner // 3 == finger))[0]
    local = np.searchsorted(moving, regions[finger])
    return moving, local


def refine_hand(pose, ctx, config=None):
    """Search for a hand pose with lower gated energy near ``pose``.

    Global rotation stays within ``max_rotation`` and translation within
    ``max_translation`` of the input; the finger articulation is searched
    one finger at a time. The object pose is never modified. Returns
    ``(pose, info)``; the input pose comes back unchanged when nothing
    better is found.
    """
    config = config or RefineConfig()
    model, shape = ctx.model, ctx.shape
    if ctx.gate_on is None:
        ctx.decide_gate(pose, config)
    e_init = gated_energy(pose, ctx, config)
    g0 = pose.global_transform
    theta = np.array(pose.theta)
    x_glob = np.zeros(6)
    regions = np.concatenate(_regions(model, shape))
    opt_g = ParticleOptimizer(config.global_optimizer)
    opt_f = ParticleOptimizer(config.finger_optimizer)

    def globals_of(X):
        Rs = _kernels.rodrigues_batch(np.ascontiguousarray(X[:, :3]))
        # rotate about the wrist (canonical origin), then translate
        return Rs @ g0.rotation, g0.translation + X[:, 3:]

    def global_step(x_glob):
        canon = model.surface_batch(shape, theta[None])[0]
        fk = model.forward_kinematics(shape, theta)

        def global_batch(X):
            out = np.full(len(X), np.inf)
            ok = (np.linalg.norm(X[:, :3], axis=1) <= config.max_rotation) & \
                 (np.linalg.norm(X[:, 3:], axis=1) <= config.max_translation)
            if ok.any():
                R, t = globals_of(X[ok])
                verts = np.einsum("mij,vj->mvi", R, canon) + t[:, None, :]
                J = np.einsum("mij,nj->mni", R, fk) + t[:, None, :]
                out[ok] = _terms(ctx, config, verts, regions, J)
            return out

        return opt_g.optimize(OptProblem(None, x_glob, batch_energy=global_batch)).x

    def finger_step(f, x_glob):
        R_fix, t_fix = globals_of(x_glob[None])
        idx = slice(9 * f, 9 * f + 9)
        split = _finger_split(model, shape, f)
        if split is None:
            moving, local_regions, fixed = None, regions, None
        else:
            moving, local_regions = split
            all_verts = model.surface_batch(shape, theta[None], R_fix, t_fix)[0]
            rest_mask = np.ones(len(all_verts), dtype=bool)
            rest_mask[moving] = False
            static_regions = np.nonzero(np.isin(np.nonzero(rest_mask)[0], regions))[0]
            fixed = _fixed_part(ctx, config, all_verts[rest_mask], static_regions)
        base = theta.copy()

        def finger_batch(X):
            th = np.broadcast_to(base, (len(X), 45)).copy()
            th[:, idx] = X
            R = np.repeat(R_fix, len(X), 0)
            t = np.repeat(t_fix, len(X), 0)
            verts = model.surface_batch(shape, th, R, t, subset=moving)
            J = _posed_joints(model, shape, th, R, t)
            return _terms(ctx, config, verts, local_regions, J, fixed)

        theta[idx] = opt_f.optimize(OptProblem(None, theta[idx], batch_energy=finger_batch)).x

    # fingers first: a local articulation fix is preferred over moving the
    # whole hand, which would displace every joint
    for _ in range(config.passes):
        for f in range(5):
            finger_step(f, x_glob)
        x_glob = global_step(x_glob)
    R, t = globals_of(x_glob[None])
    candidate = HandPose(theta, RigidTransform(R[0], t[0]))
    e_final = gated_energy(candidate, ctx, config)
    info = {"energy_before": e_init, "gate_on": ctx.gate_on}
    if not e_final < e_init:
        return pose, {**info, "energy_after": e_init, "improved": False}
    return candidate, {**info, "energy_after": e_final, "improved": True}
