"""Optimization-based inverse kinematics and pose sampling helpers."""

from __future__ import annotations

import numpy as np

from ..errors import NoConvergence
from ..geometry import RigidTransform
from ..gfo import OptConfig, OptProblem, ParticleOptimizer
from .model import HandPose

IK_CONFIG = OptConfig(particles=256, iterations=40, initial_step=0.2, tolerance=1e-4, seed=0)

# flexion ranges (radians) per level: base, middle, distal
_FLEX_RANGE = np.radians([[0.0, 75.0], [0.0, 90.0], [0.0, 70.0]])
_THUMB_FLEX_RANGE = np.radians([[0.0, 40.0], [0.0, 50.0], [0.0, 60.0]])


def theta_from_flexion(model, flexion, abduction=None):
    """Pose vector from per-joint flexion angles ``(15,)`` and per-finger
    abduction ``(5,)`` (radians, applied at the finger base)."""
    flexion = np.asarray(flexion, dtype=float).reshape(15)
    abduction = np.zeros(5) if abduction is None else np.asarray(abduction, dtype=float).reshape(5)
    theta = np.zeros((15, 3))
    for f in range(5):
        axis = model.skeleton.flexion_axis(f)
        for l in range(3):
            theta[3 * f + l] = flexion[3 * f + l] * axis
        theta[3 * f] += abduction[f] * np.array([0.0, 0.0, 1.0])
    return theta.reshape(45)


def sample_anatomical_theta(model, rng, max_fraction=1.0):
    """Random plausible pose: flexion inside typical ranges, mild abduction."""
    flex = np.empty(15)
    for f in range(5):
        ranges = _THUMB_FLEX_RANGE if f == 0 else _FLEX_RANGE
        for l in range(3):
            lo, hi = ranges[l]
            flex[3 * f + l] = rng.uniform(lo, lo + max_fraction * (hi - lo))
    abd = rng.uniform(-0.2, 0.2, size=5) * max_fraction
    return theta_from_flexion(model, flex, abd)


def inverse_kinematics(model, joints_target, shape, theta_init=None, global_transform=None,
                       config=None, passes=3, max_residual=0.02):
    """Pose whose forward kinematics best matches canonical-space targets.

    The search minimizes the summed squared joint error with the particle
    optimizer, one finger (9 parameters) at a time, for ``passes`` sweeps.
    Raises :class:`NoConvergence` (carrying the best pose) when the final
    mean joint error exceeds ``max_residual`` meters.
    """
    target = np.asarray(joints_target, dtype=float).reshape(21, 3)
    theta = np.zeros(45) if theta_init is None else np.array(theta_init, dtype=float).reshape(45)
    cfg = config or IK_CONFIG
    opt = ParticleOptimizer(cfg)
    rest = model.rest_joints(shape)
    for _ in range(passes):
        for f in range(5):
            idx = slice(9 * f, 9 * f + 9)
            goal = target[2 + 4 * f: 5 + 4 * f]

            def batch(X, f=f, goal=goal):
                pts = model.finger_fk_batch(rest, f, X)
                return ((pts - goal) ** 2).sum(axis=(1, 2))

            res = opt.optimize(OptProblem(None, theta[idx], batch_energy=batch))
            theta[idx] = res.x
    fk = model.forward_kinematics(shape, theta)
    residual = float(np.linalg.norm(fk - target, axis=1).mean())
    pose = HandPose(theta, global_transform or RigidTransform(), residual)
    if residual > max_residual:
        raise NoConvergence(f"IK residual {residual * 1000:.1f} mm exceeds {max_residual * 1000:.0f} mm", pose)
    return pose
