"""Rigid object tracking against a signed distance field.

Each frame searches a 6-d delta (axis-angle rotation applied on the left of
the previous rotation, plus a translation) minimizing the mean absolute SDF
value of the observed object points mapped into the object frame. A bounded
history cloud of near-surface canonical points is maintained for external
shape refitting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import EmptyCloud
from .geometry import PointCloud, RigidTransform, axis_angle_to_matrix
from .gfo import OptConfig, OptProblem, ParticleOptimizer

SHAPE_UPDATE_PERIOD = 10
DIVERGENCE_FACTOR = 5.0


def _default_optimizer():
    return OptConfig(particles=256, iterations=16,
                     initial_step=np.array([math.radians(3.0)] * 3 + [0.01] * 3),
                     tolerance=1e-3, seed=0)


@dataclass
class ObjectTrackConfig:
    optimizer: OptConfig = field(default_factory=_default_optimizer)
    max_points: int = 512
    history_size: int = 1000
    history_lambda: float | None = None  # defaults to twice the grid spacing
    shape_update_period: int = SHAPE_UPDATE_PERIOD
    sensor_sigma: float = 0.002
    divergence_factor: float = DIVERGENCE_FACTOR
    seed: int = 0

    def __post_init__(self):
        if self.max_points < 1 or self.history_size < 1:
            raise ValueError("max_points and history_size must be positive")
        if self.shape_update_period < 1:
            raise ValueError("shape_update_period must be positive")


@dataclass
class ObjectTrackState:
    pose: RigidTransform  # object -> camera
    sdf: object
    history: PointCloud
    capacity: int = 1000
    history_lambda: float = 0.0
    frame: int = 0  # frames aggregated so far
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))


@dataclass
class ObjectFrameResult:
    frame: int
    pose: RigidTransform
    energy: float
    previous_energy: float
    diverged: bool
    points: int

    def to_dict(self):
        return {"frame": self.frame, **self.pose.to_dict(), "energy": self.energy,
                "diverged": self.diverged}


def _points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def sdf_energy(pose, cloud, sdf):
    """Mean ``|psi(pose^-1 x)|`` over the cloud."""
    pts = np.ascontiguousarray(_points(cloud))
    if len(pts) == 0:
        raise EmptyCloud("object cloud is empty")
    return float(_kernels.sdf_abs_mean_batch(sdf.values, sdf.origin, sdf.spacing, pts,
                                             pose.rotation[None], pose.translation[None])[0])


def noise_floor(sdf, sensor_sigma):
    """Expected energy of a correctly posed, noisy surface sample: the mean
    absolute Gaussian deviation plus a quarter cell of interpolation error."""
    return sensor_sigma * math.sqrt(2.0 / math.pi) + 0.25 * sdf.spacing


def history_split(t, capacity):
    """Sizes ``(|S1|, |S2|)`` kept from the old history and drawn from frame ``t``."""
    if t < 1:
        raise ValueError("frame count starts at 1")
    # round half up in exact integer arithmetic
    s1 = (2 * (t - 1) * capacity + t) // (2 * t)
    return s1, capacity - s1


def init_state(pose, sdf, cloud=None, config=None):
    """Tracking state from the frame-0 pose; ``cloud`` seeds the history."""
    config = config or ObjectTrackConfig()
    lam = config.history_lambda if config.history_lambda is not None else 2.0 * sdf.spacing
    state = ObjectTrackState(pose, sdf, PointCloud(np.zeros((0, 3))), config.history_size, lam,
                             rng=np.random.default_rng(config.seed))
    if cloud is not None and len(_points(cloud)):
        aggregate_history(state, cloud)
    return state


def aggregate_history(state, cloud):
    """Forget old points and add near-surface new ones; returns the history.

    With ``t`` frames aggregated (this one included), a random
    ``round((t-1)N/t)``-subset of the old history is kept and the remainder
    is drawn from this frame's canonical points with ``|psi| < lambda``.
    """
    state.frame += 1
    t = state.frame
    n1, n2 = history_split(t, state.capacity)
    old = state.history.points
    rng = state.rng
    keep = old if len(old) <= n1 else old[np.sort(rng.choice(len(old), n1, replace=False))]
    canon = state.pose.apply_inverse(_points(cloud))
    near = canon[np.abs(state.sdf.query(canon)) < state.history_lambda] if len(canon) else canon
    new = near if len(near) <= n2 else near[np.sort(rng.choice(len(near), n2, replace=False))]
    state.history = PointCloud(np.concatenate([keep, new]) if len(keep) or len(new) else np.zeros((0, 3)))
    return state.history


def shape_update_hook(state, period=SHAPE_UPDATE_PERIOD):
    """Snapshot of the history every ``period`` frames, otherwise ``None``."""
    if state.frame == 0 or state.frame % period != 0:
        return None
    return PointCloud(state.history.points.copy())


def track_frame(state, cloud, config=None):
    """Update ``state.pose`` from this frame's object cloud (camera space)."""
    config = config or ObjectTrackConfig()
    pts = _points(cloud)
    if len(pts) == 0:
        raise EmptyCloud("object cloud is empty")
    if len(pts) > config.max_points:
        pts = pts[np.sort(state.rng.choice(len(pts), config.max_points, replace=False))]
    sdf = state.sdf
    prev = state.pose
    pts = np.ascontiguousarray(pts)

    def batch(X):
        R = _kernels.rodrigues_batch(np.ascontiguousarray(X[:, :3])) @ prev.rotation
        t = prev.translation + X[:, 3:]
        return _kernels.sdf_abs_mean_batch(sdf.values, sdf.origin, sdf.spacing, pts,
                                           np.ascontiguousarray(R), np.ascontiguousarray(t))

    res = ParticleOptimizer(config.optimizer).optimize(OptProblem(None, np.zeros(6), batch_energy=batch))
    pose = RigidTransform(axis_angle_to_matrix(res.x[:3]) @ prev.rotation, prev.translation + res.x[3:])
    state.pose = pose
    aggregate_history(state, cloud)
    diverged = res.energy > config.divergence_factor * noise_floor(sdf, config.sensor_sigma)
    return ObjectFrameResult(state.frame - 1, pose, float(res.energy), float(res.initial_energy),
                             bool(diverged), len(pts))


class ObjectTracker:
    """Online object tracker for one sequence."""

    def __init__(self, sdf, initial_pose, cloud=None, config=None):
        self.config = config or ObjectTrackConfig()
        self.state = init_state(initial_pose, sdf, cloud, self.config)
        self.snapshots = []

    def track(self, cloud):
        result = track_frame(self.state, cloud, self.config)
        snap = shape_update_hook(self.state, self.config.shape_update_period)
        if snap is not None:
            self.snapshots.append((self.state.frame, snap))
        return result


def write_pose_jsonl(results, path):
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_pose_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
