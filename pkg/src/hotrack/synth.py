"""Synthetic grasp sequences: grasp placement, trajectories, depth rendering.

A sequence has a pre-grasp phase (frames ``0..k``) in which the hand moves
from a pulled-back, nearly open pose to the grasp, and an in-grasp phase in
which hand and object move together. The camera drifts smoothly between two
random offsets over the sequence. Frames are rendered with a z-buffer and a
parametric depth noise model.
"""

from __future__ import annotations

import configparser
import functools
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial.transform import Rotation, Slerp

from . import _kernels, sdf as sdf_mod, shapes
from .errors import ConfigError, Rejected, SequenceIOError
from .geometry import (
    BACKGROUND, HAND, OBJECT, CameraIntrinsics, RigidTransform, TriangleMesh,
    axis_angle_to_matrix, load_obj, save_obj,
)
from .hand.ik import sample_anatomical_theta, theta_from_flexion
from .hand.model import FINGERS, HandPose, HandShape
from .refine import _sdf_values, e_penetr

DEFAULT_INTRINSICS = CameraIntrinsics(525.0, 525.0, 320.0, 240.0, 640, 480)
GRASP_NAMES = ("power", "pinch", "tripod")
CONTACT_DISTANCE = 0.005
# tessellation of the rendered procedural hand; fine enough that the chord
# error (~0.1 mm) stays below the fitting noise floor
RENDER_SEGMENTS = 32
RENDER_RINGS = 8


# -- noise -----------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.002
    quantization: float = 0.001
    dropout: float = 0.02
    edge_band: int = 2

    def __post_init__(self):
        if min(self.sigma, self.quantization, self.dropout, self.edge_band) < 0:
            raise ValueError("noise parameters must be non-negative")
        if self.dropout > 1:
            raise ValueError("dropout is a probability")

    @classmethod
    def none(cls):
        return cls(0.0, 0.0, 0.0, 0)

    def to_dict(self):
        return {"sigma": self.sigma, "quantization": self.quantization,
                "dropout": self.dropout, "edge_band": self.edge_band}

    def apply(self, depth, labels, rng):
        """Noisy copies of ``depth``/``labels``; dropped pixels become background."""
        depth = np.array(depth, dtype=np.float64)
        labels = np.array(labels, dtype=np.uint8)
        valid = depth > 0
        if self.sigma > 0:
            depth[valid] += rng.normal(0.0, self.sigma, size=int(valid.sum()))
        if self.quantization > 0:
            depth[valid] = np.round(depth[valid] / self.quantization) * self.quantization
        drop = valid & (depth <= 0)
        if self.dropout > 0:
            drop |= valid & (rng.random(depth.shape) < self.dropout)
        if self.edge_band > 0:
            drop |= valid & ~binary_erosion(valid, iterations=int(self.edge_band), border_value=0)
        depth[drop] = 0.0
        labels[drop] = BACKGROUND
        return depth.astype(np.float32), labels


# -- rendering -------------------------------------------------------------

def render_depth(meshes, intrinsics=DEFAULT_INTRINSICS):
    """Noiseless depth and labels for ``[(camera-space mesh, label), ...]``."""
    depth = np.zeros((intrinsics.height, intrinsics.width))
    labels = np.zeros((intrinsics.height, intrinsics.width), dtype=np.uint8)
    for mesh, label in meshes:
        V = np.ascontiguousarray(mesh.vertices, dtype=float)
        F = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
        ids = np.full(len(F), label, dtype=np.uint8)
        _kernels.rasterize(V, F, ids, intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy,
                           intrinsics.width, intrinsics.height, depth, labels)
    return depth, labels


def render_frame(scene, intrinsics=DEFAULT_INTRINSICS, noise=None, seed=0):
    """Render one frame of ``scene`` (a :class:`FrameScene`) and apply noise."""
    meshes = [(scene.object_mesh.transformed(scene.object_pose), OBJECT)]
    if scene.hand_mesh is not None:
        meshes.append((scene.hand_mesh, HAND))
    depth, labels = render_depth(meshes, intrinsics)
    noise = noise or NoiseModel.none()
    return noise.apply(depth, labels, np.random.default_rng(seed))


@dataclass
class FrameScene:
    object_mesh: TriangleMesh  # object frame
    object_pose: RigidTransform  # object -> camera
    hand_mesh: object = None  # camera-space hand surface, if any


# -- grasps ----------------------------------------------------------------

@dataclass
class GraspSpec:
    name: str
    approach: np.ndarray  # object frame, object -> hand
    finger_direction: np.ndarray
    palm_gap: float
    palm_shift: float
    preshape: float
    flexion: np.ndarray  # (15,) radians at full closure
    abduction: np.ndarray  # (5,) radians


def _floats(text, n, where):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError:
        raise ConfigError(f"{where}: expected {n} numbers, got {text!r}") from None
    if len(vals) != n:
        raise ConfigError(f"{where}: expected {n} numbers, got {len(vals)}")
    return vals


def load_grasp(name_or_path):
    """Grasp spec from a shipped name (power, pinch, tripod) or a file path."""
    if name_or_path in GRASP_NAMES:
        text = resources.files("hotrack.data.grasps").joinpath(f"{name_or_path}.cfg").read_text()
        name = name_or_path
    else:
        with open(name_or_path) as fh:
            text = fh.read()
        name = os.path.splitext(os.path.basename(name_or_path))[0]
    cp = configparser.ConfigParser()
    cp.read_string(text)
    try:
        g = cp["grasp"]
        approach = np.array(_floats(g["approach"], 3, "grasp.approach"))
        fdir = np.array(_floats(g["finger_direction"], 3, "grasp.finger_direction"))
        flex = np.concatenate([_floats(cp["flexion"][f], 3, f"flexion.{f}") for f in FINGERS])
        abd = np.array([_floats(cp["abduction"][f], 1, f"abduction.{f}")[0] for f in FINGERS])
        spec = GraspSpec(name, approach / np.linalg.norm(approach), fdir, float(g["palm_gap"]),
                         float(g.get("palm_shift", "0")), float(g.get("preshape", "0.1")),
                         np.radians(flex), np.radians(abd))
    except KeyError as exc:
        raise ConfigError(f"grasp {name}: missing {exc}") from None
    return spec


def _hand_frame(approach, finger_direction):
    """Hand rotation: back of the hand along ``approach``, fingers along the
    component of ``finger_direction`` orthogonal to it."""
    z = approach / np.linalg.norm(approach)
    y = finger_direction - z * (finger_direction @ z)
    if np.linalg.norm(y) < 1e-9:
        raise ConfigError("finger_direction is parallel to approach")
    y /= np.linalg.norm(y)
    return np.stack([np.cross(y, z), y, z], axis=1)


def _bisect(fn, lo, hi, iters=40):
    """Root of an increasing ``fn`` on ``[lo, hi]``."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fn(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def settle_grasp(spec, model, shape, sdf, contact=0.0003):
    """Place the hand against the object and close each finger to contact.

    Returns a :class:`HandPose` whose global transform maps hand space to the
    object frame.
    """
    R = _hand_frame(spec.approach, spec.finger_direction)
    rest = model.rest_joints(shape)
    anchor = rest[[0, 5, 9, 13, 17]].mean(axis=0) - np.array([0.0, spec.palm_shift, 0.0])
    center = sdf.origin + 0.5 * (sdf.upper - sdf.origin)
    ident = RigidTransform()
    scales = np.full(5, spec.preshape)

    def theta_of(s):
        return theta_from_flexion(model, spec.flexion * np.repeat(s, 3), spec.abduction)

    def min_sdf(theta, t, subset=None):
        v = model.surface_batch(shape, theta[None], R[None], t[None], subset=subset)[0]
        return float(_sdf_values(v, sdf, ident).min())

    def placement(D):
        return center + spec.approach * D - R @ anchor

    theta = theta_of(scales)
    D = _bisect(lambda D: min_sdf(theta, placement(D)) - spec.palm_gap, 0.0, 0.4)
    t = placement(D)
    owner = model.surface_template(shape)[3]
    for f in (1, 2, 3, 4, 0):
        subset = np.nonzero((owner < 15) & (owner // 3 == f))[0]

        def gap(s, f=f):
            sc = scales.copy()
            sc[f] = s
            return min_sdf(theta_of(sc), t, subset) - contact

        if gap(scales[f]) <= 0:
            continue
        grid = np.linspace(scales[f], 1.0, 41)
        hit = next((i for i, s in enumerate(grid) if gap(s) <= 0), None)
        scales[f] = 1.0 if hit is None else _bisect(lambda s: -gap(s), grid[hit - 1], grid[hit], 30)
    return HandPose(theta_of(scales), RigidTransform(R, t))


@functools.lru_cache(maxsize=16)
def primitive_sdf(name, resolution=sdf_mod.DEFAULT_RESOLUTION):
    return sdf_mod.build_from_mesh(shapes.PRIMITIVES[name](), resolution)


# -- trajectories ----------------------------------------------------------

@dataclass
class TrajectoryConfig:
    frames: int = 100
    k_range: tuple = (40, 60)
    pullback: tuple = (0.08, 0.12)
    initial_rotation: float = np.radians(15.0)
    initial_flexion: float = 0.15  # fraction of the anatomical range
    camera_rotation: float = np.radians(5.0)
    camera_translation: float = 0.03
    lift: float = 0.08
    lift_rotation: float = np.radians(20.0)
    object_distance: float = 0.5
    view_azimuth: tuple = (np.radians(25.0), np.radians(50.0))
    max_penetration: float = 0.005

    def __post_init__(self):
        lo, hi = self.k_range
        if not (1 <= lo <= hi < self.frames):
            raise ConfigError(f"k_range {self.k_range} must satisfy 1 <= lo <= hi < frames")
        if self.max_penetration <= 0:
            raise ConfigError("max_penetration must be positive")


@dataclass
class Trajectory:
    """Camera-space ground truth for every frame."""

    object_poses: list  # RigidTransform object -> camera
    hand_poses: list | None  # HandPose with camera-space global transform
    camera_poses: list  # RigidTransform world -> camera
    k: int
    shape: HandShape | None = None
    grasp: str = ""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.object_poses)

    def hand_in_object(self, t):
        return self.object_poses[t].inverse().compose(self.hand_poses[t].global_transform)


def _camera_path(rng, n, max_rot, max_trans):
    ends = []
    for _ in range(2):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        ends.append((axis * rng.uniform(0, max_rot), rng.uniform(-max_trans, max_trans, size=3)))
    slerp = Slerp([0.0, 1.0], Rotation.from_rotvec([ends[0][0], ends[1][0]]))
    s = np.linspace(0.0, 1.0, n)
    rots = slerp(s).as_matrix()
    return [RigidTransform(rots[i], (1 - s[i]) * ends[0][1] + s[i] * ends[1][1]) for i in range(n)]


def base_object_pose(rng, approach, finger_direction, config):
    """World pose of the object, oriented so the camera looks at the back of
    the grasping hand from a random side angle."""
    R_h = _hand_frame(approach, finger_direction)
    az = rng.uniform(*config.view_azimuth) * rng.choice([-1.0, 1.0])
    # desired camera-frame directions of the hand back (z) and fingers (y)
    back = np.array([np.sin(az), 0.0, -np.cos(az)])
    fingers = np.array([0.0, -1.0, 0.0])
    target = _hand_frame(back, fingers)
    R = target @ R_h.T
    R = axis_angle_to_matrix(back * rng.uniform(-0.3, 0.3)) @ R
    return RigidTransform(R, np.array([0.0, 0.0, config.object_distance]) + R @ approach * -0.02)


def generate_trajectory(grasp_pose, object_mesh, rng, model=None, shape=None, sdf=None,
                        config=None, approach=None, finger_direction=None):
    """Pre-grasp interpolation and in-grasp co-motion around ``grasp_pose``.

    ``grasp_pose.global_transform`` maps hand space to the object frame.
    Raises :class:`Rejected` naming the first pre-grasp frame whose hand
    penetrates the object by more than ``config.max_penetration``.
    """
    from .hand.model import HandModel

    config = config or TrajectoryConfig()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    model = model or HandModel()
    shape = shape or model.neutral_shape()
    sdf = sdf or sdf_mod.build_from_mesh(object_mesh, 64)
    G = grasp_pose.global_transform
    approach = G.rotation[:, 2] if approach is None else np.asarray(approach, dtype=float)
    finger_direction = G.rotation[:, 1] if finger_direction is None else np.asarray(finger_direction)
    n = config.frames
    k = int(rng.integers(config.k_range[0], config.k_range[1] + 1))

    # initial hand pose: nearly open, tilted, pulled back along the approach
    theta0 = sample_anatomical_theta(model, rng, config.initial_flexion)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    tilt = axis_angle_to_matrix(axis * rng.uniform(0, config.initial_rotation))
    R0 = tilt @ G.rotation
    wrist_back = G.translation + approach * rng.uniform(*config.pullback)
    H0 = RigidTransform(R0, wrist_back)

    slerp = Slerp([0.0, 1.0], Rotation.from_matrix([H0.rotation, G.rotation]))
    rel = []
    for t in range(k + 1):
        s = t / k
        th = (1 - s) * theta0 + s * grasp_pose.theta
        Rt = slerp([s]).as_matrix()[0]
        rel.append(HandPose(th, RigidTransform(Rt, (1 - s) * H0.translation + s * G.translation)))
    rel[0] = HandPose(theta0, H0)
    rel[k] = HandPose(np.array(grasp_pose.theta), G)
    ident = RigidTransform()
    for t, pose in enumerate(rel):
        depth = e_penetr(model.skin_mesh(shape, pose), sdf, ident)
        if depth > config.max_penetration:
            raise Rejected(f"pre-grasp frame {t} penetrates {depth * 1000:.1f} mm", frame=t, depth=depth)

    W0 = base_object_pose(rng, approach, finger_direction, config)
    up = np.array([0.0, -1.0, 0.0])
    lift_axis = rng.normal(size=3)
    lift_axis /= np.linalg.norm(lift_axis)
    cams = _camera_path(rng, n, config.camera_rotation, config.camera_translation)
    objects, hands = [], []
    for t in range(n):
        if t <= k:
            W = W0
            H = rel[t]
        else:
            s = (t - k) / (n - 1 - k)
            # lift about the object's center
            Rl = axis_angle_to_matrix(lift_axis * s * config.lift_rotation)
            W = RigidTransform(Rl @ W0.rotation, W0.translation + up * s * config.lift)
            H = rel[k]
        obj = cams[t].compose(W)
        objects.append(obj)
        hands.append(HandPose(H.theta, obj.compose(H.global_transform)))
    return Trajectory(objects, hands, cams, k, shape, meta={"theta0": theta0.tolist()})


def generate_object_motion(rng, frames=100, max_rotation=np.radians(2.0), max_translation=0.01,
                           distance=0.5, bounds=(0.08, 0.06, 0.08)):
    """Smooth random object motion with per-frame steps under the given bounds."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    R = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
    t = np.array([0.0, 0.0, distance]) + rng.uniform(-0.02, 0.02, size=3)
    omega = rng.normal(size=3)
    vel = rng.normal(size=3)
    center = np.array([0.0, 0.0, distance])
    poses = [RigidTransform(R, t)]
    for _ in range(frames - 1):
        omega = 0.9 * omega + 0.3 * rng.normal(size=3)
        vel = 0.9 * vel + 0.3 * rng.normal(size=3)
        off = t - center
        for i in range(3):
            if abs(off[i]) > bounds[i] and np.sign(vel[i]) == np.sign(off[i]):
                vel[i] = -vel[i]
        w = omega / max(np.linalg.norm(omega), 1e-12) * max_rotation * rng.uniform(0.3, 0.95)
        v = vel / max(np.linalg.norm(vel), 1e-12) * max_translation * rng.uniform(0.2, 0.9)
        R = axis_angle_to_matrix(w) @ R
        t = t + v
        poses.append(RigidTransform(R, t))
    return poses


def hand_contact(model, shape, hand_pose, sdf, obj_pose):
    """Ground-truth contact flag: penetration, or a fingertip region within 5 mm."""
    mesh = model.skin_mesh(shape, hand_pose)
    vals = _sdf_values(mesh.vertices, sdf, obj_pose)
    regions = np.concatenate(mesh.contact_regions)
    return bool(vals.min() < 0 or vals[regions].min() < CONTACT_DISTANCE)


# -- sequence files --------------------------------------------------------

@dataclass
class Sequence:
    path: str
    meta: dict
    intrinsics: CameraIntrinsics
    gt: list
    object_mesh: TriangleMesh

    def __len__(self):
        return len(self.gt)

    def frame(self, t):
        h, w = self.intrinsics.height, self.intrinsics.width
        try:
            depth = np.fromfile(os.path.join(self.path, f"depth_{t:04d}.bin"), dtype="<f4")
            labels = np.fromfile(os.path.join(self.path, f"labels_{t:04d}.bin"), dtype=np.uint8)
        except OSError as exc:
            raise SequenceIOError(f"{self.path}: frame {t}: {exc}") from None
        if depth.size != h * w or labels.size != h * w:
            raise SequenceIOError(f"{self.path}: frame {t} has the wrong size")
        return depth.reshape(h, w), labels.reshape(h, w)

    def object_pose(self, t):
        return RigidTransform.from_dict(self.gt[t]["object"])

    def hand_pose(self, t):
        h = self.gt[t].get("hand")
        return None if h is None else HandPose.from_dict(h)

    def hand_joints(self, t):
        h = self.gt[t].get("hand")
        return None if h is None else np.array(h["joints"])

    @property
    def hand_shape(self):
        s = self.meta.get("hand_shape")
        return None if s is None else HandShape(np.array(s["betas"]), s["mode"])


def frame_gt(trajectory, t, model=None, sdf=None):
    rec = {"frame": t, "phase": "pre" if t < trajectory.k else "in",
           "object": trajectory.object_poses[t].to_dict(),
           "camera": trajectory.camera_poses[t].to_dict()}
    if trajectory.hand_poses is not None:
        pose = trajectory.hand_poses[t]
        rec["hand"] = {**pose.to_dict(), "joints": model.joints(trajectory.shape, pose).tolist()}
        if sdf is not None:
            rec["contact"] = hand_contact(model, trajectory.shape, pose, sdf, trajectory.object_poses[t])
    return rec


def render_model(model):
    """Hand model used for rendering: the same hand, finely tessellated."""
    from .hand.model import HandModel

    if model.mode == "model":
        return model
    return HandModel(model.skeleton, None, RENDER_SEGMENTS, RENDER_RINGS)


def render_trajectory(trajectory, object_mesh, model=None, intrinsics=DEFAULT_INTRINSICS,
                      noise=None, seed=0):
    """Rendered ``(depth, labels)`` for every frame; frame ``t`` uses seed ``seed + t``."""
    frames = []
    fine = render_model(model) if trajectory.hand_poses is not None else None
    for t in range(len(trajectory)):
        hand = None
        if fine is not None:
            hand = fine.skin_mesh(trajectory.shape, trajectory.hand_poses[t])
        scene = FrameScene(object_mesh, trajectory.object_poses[t], hand)
        frames.append(render_frame(scene, intrinsics, noise, seed + t))
    return frames


def pack_sequence(path, trajectory, frames, object_mesh, intrinsics=DEFAULT_INTRINSICS,
                  noise=None, seed=0, model=None, sdf=None, extra=None):
    """Write a sequence directory and return its path."""
    try:
        os.makedirs(path, exist_ok=True)
        for t, (depth, labels) in enumerate(frames):
            np.asarray(depth, dtype="<f4").tofile(os.path.join(path, f"depth_{t:04d}.bin"))
            np.asarray(labels, dtype=np.uint8).tofile(os.path.join(path, f"labels_{t:04d}.bin"))
        save_obj(object_mesh, os.path.join(path, "object.obj"))
        with open(os.path.join(path, "gt.jsonl"), "w") as fh:
            for t in range(len(trajectory)):
                fh.write(json.dumps(frame_gt(trajectory, t, model, sdf)) + "\n")
        meta = {
            "intrinsics": intrinsics.to_dict(),
            "seed": int(seed),
            "k": int(trajectory.k),
            "frames": len(trajectory),
            "noise": (noise or NoiseModel.none()).to_dict(),
            "mesh": "object.obj",
            "grasp": trajectory.grasp,
        }
        if trajectory.shape is not None:
            meta["hand_shape"] = {"betas": trajectory.shape.to_list(), "mode": trajectory.shape.mode}
        meta.update(trajectory.meta)
        meta.update(extra or {})
        with open(os.path.join(path, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise SequenceIOError(f"cannot write sequence {path}: {exc}") from None
    return path


def load_sequence(path):
    try:
        with open(os.path.join(path, "meta.json")) as fh:
            meta = json.load(fh)
        with open(os.path.join(path, "gt.jsonl")) as fh:
            gt = [json.loads(line) for line in fh if line.strip()]
        mesh = load_obj(os.path.join(path, meta.get("mesh", "object.obj")))
    except (OSError, ValueError, KeyError) as exc:
        raise SequenceIOError(f"cannot read sequence {path}: {exc}") from None
    return Sequence(path, meta, CameraIntrinsics.from_dict(meta["intrinsics"]), gt, mesh)


def make_grasp_sequence(seed, object_name="sphere", grasp="power", noise=None, config=None,
                        model=None, shape_jitter=0.08, attempts=20):
    """Settle a shipped grasp on a primitive and build a trajectory.

    Rejected trajectories are redrawn from the same seeded generator.
    Returns ``(trajectory, mesh, sdf, model)``.
    """
    from .hand.model import HandModel

    rng = np.random.default_rng(seed)
    model = model or HandModel()
    shape = HandShape(np.clip(1.0 + rng.uniform(-shape_jitter, shape_jitter, 15), 0.6, 1.4))
    mesh = shapes.PRIMITIVES[object_name]()
    grid = primitive_sdf(object_name)
    spec = load_grasp(grasp)
    pose = settle_grasp(spec, model, shape, grid)
    last = None
    for _ in range(attempts):
        try:
            traj = generate_trajectory(pose, mesh, rng, model, shape, grid, config,
                                       spec.approach, spec.finger_direction)
        except Rejected as exc:
            last = exc
            continue
        traj.grasp = grasp
        traj.meta.update({"object": object_name})
        return traj, mesh, grid, model
    raise last


def object_trajectory(seed, object_name="sphere", frames=100, **motion):
    """Object-only trajectory with a fixed camera: ``(trajectory, mesh, sdf)``."""
    rng = np.random.default_rng(seed)
    mesh = shapes.PRIMITIVES[object_name]()
    poses = generate_object_motion(rng, frames, **motion)
    traj = Trajectory(poses, None, [RigidTransform()] * frames, 0, grasp="",
                      meta={"object": object_name})
    return traj, mesh, primitive_sdf(object_name)


def object_sequence(seed, object_name="sphere", frames=100, sigma=0.001, points=2048,
                    intrinsics=DEFAULT_INTRINSICS, **motion):
    """Object-only sequence: ``(poses, clouds, mesh, sdf)``.

    Each frame is rendered with Gaussian depth noise ``sigma`` only, back
    projected and subsampled to at most ``points`` object points.
    """
    from .geometry import back_project

    traj, mesh, grid = object_trajectory(seed, object_name, frames, **motion)
    rng = np.random.default_rng([seed, 1])
    frames_ = render_trajectory(traj, mesh, None, intrinsics, NoiseModel(sigma, 0.0, 0.0, 0), seed * 100003)
    clouds = []
    for depth, labels in frames_:
        pts = back_project(depth, intrinsics, labels).select(OBJECT).points
        if len(pts) > points:
            pts = pts[np.sort(rng.choice(len(pts), points, replace=False))]
        clouds.append(pts)
    return traj.object_poses, clouds, mesh, grid


# -- refinement scenes ------------------------------------------------------

@dataclass
class ContactScene:
    model: object
    shape: HandShape
    sdf: object
    object_pose: RigidTransform  # object -> camera
    true_pose: HandPose  # camera space
    pose: HandPose  # perturbed camera-space pose handed to refinement


def _scene_base(object_name, grasp, model, distance):
    from .hand.model import HandModel

    model = model or HandModel()
    shape = model.neutral_shape()
    grid = primitive_sdf(object_name)
    settled = settle_grasp(load_grasp(grasp), model, shape, grid)
    obj = RigidTransform(np.eye(3), np.array([0.0, 0.0, distance]))
    return model, shape, grid, obj, settled.with_global(obj.compose(settled.global_transform))


def penetration_scene(object_name="sphere", grasp="power", finger=1, depth=0.008, model=None,
                      distance=0.5):
    """A settled grasp whose ``finger`` is flexed further until the hand
    penetrates the object by ``depth``."""
    model, shape, grid, obj, true = _scene_base(object_name, grasp, model, distance)
    axis = model.skeleton.flexion_axis(finger)

    def flexed(a):
        th = np.array(true.theta)
        for l in range(3):
            th[9 * finger + 3 * l: 9 * finger + 3 * l + 3] += a * axis
        return HandPose(th, true.global_transform)

    def pen(a):
        return e_penetr(model.skin_mesh(shape, flexed(a)).vertices, grid, obj)

    if pen(1.0) < depth:
        raise ValueError(f"flexing finger {finger} cannot reach {depth} m of penetration")
    a = _bisect(lambda a: pen(a) - depth, 0.0, 1.0)
    return ContactScene(model, shape, grid, obj, true, flexed(a))


def hover_scene(object_name="sphere", grasp="power", gap=0.03, model=None, distance=0.5):
    """The settled grasp pulled back along the approach axis until the
    closest hand point is ``gap`` from the surface."""
    model, shape, grid, obj, true = _scene_base(object_name, grasp, model, distance)
    approach = obj.rotation @ true.global_transform.rotation @ np.array([0.0, 0.0, 1.0])

    def moved(d):
        g = true.global_transform
        return HandPose(true.theta, RigidTransform(g.rotation, g.translation + approach * d))

    def closest(d):
        return float(_sdf_values(model.skin_mesh(shape, moved(d)).vertices, grid, obj).min())

    d = _bisect(lambda d: closest(d) - gap, 0.0, 0.2)
    pose = moved(d)
    return ContactScene(model, shape, grid, obj, pose, pose)
