"""Per-frame hand joint tracking from a segmented hand point cloud.

Each frame the previous joints give a canonicalizing rigid transform for the
new cloud and a coarse joint estimate (previous joints shifted by the cloud
centroid motion). The joints are then refined by fitting the capsule hand
surface to the canonical cloud, with every joint's update capped at 3 cm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .. import _kernels
from ..errors import EmptyCloud, NoConvergence
from ..geometry import PointCloud, RigidTransform, axis_angle_to_matrix, kabsch_align, nearest_distances
from ..gfo import OptConfig, OptProblem, ParticleOptimizer
from .ik import inverse_kinematics
from .model import BASE_JOINTS, CAPSULE_BONES, HandPose, bone_lengths

log = logging.getLogger(__name__)

VISIBILITY_THRESHOLD = 0.02
MAX_JOINT_UPDATE = 0.03
SHAPE_UPDATE_PERIOD = 10
DEGRADED_LENGTH_RATIO = 0.3
FINGER_ORDER = (1, 2, 3, 4, 0)


@dataclass
class HandTrackConfig:
    max_points: int = 256
    passes: int = 2
    joint_weight: float = 0.1
    # weak pull toward the previous articulation; keeps unobserved fingers
    # from drifting along directions the cloud cannot see
    theta_prior: float = 5e-4
    # scaling a finger's articulation as a whole (curling) is exempt from the
    # prior, so occluded tips follow the visible joints of their finger
    curl_free: bool = True
    max_update: float = MAX_JOINT_UPDATE
    visibility: float = VISIBILITY_THRESHOLD
    global_optimizer: OptConfig = field(default_factory=lambda: OptConfig(
        particles=256, iterations=20, initial_step=np.array([0.03, 0.03, 0.03, 0.005, 0.005, 0.005]),
        tolerance=1e-3, seed=0))
    finger_optimizer: OptConfig = field(default_factory=lambda: OptConfig(
        particles=256, iterations=20, initial_step=0.08, tolerance=1e-3, seed=1))
    fail_energy: float = 0.01
    update_shape: bool = False
    seed: int = 0


@dataclass
class HandTrackState:
    joints: np.ndarray  # camera space (21, 3)
    shape: object
    theta: np.ndarray
    centroid: np.ndarray | None
    frame: int = 0
    length_history: list = field(default_factory=list)  # (frame, 15 lengths)
    degraded: bool = False


@dataclass
class HandFrameResult:
    frame: int
    joints: np.ndarray
    theta: np.ndarray
    global_transform: RigidTransform
    coarse: np.ndarray
    fit_energy: float = float("nan")
    bound_joints: int = 0
    converged: bool = True
    empty: bool = False
    shape_updated: bool = False

    def to_dict(self):
        return {
            "frame": self.frame,
            "joints": np.round(self.joints, 7).tolist(),
            "theta": np.round(self.theta, 7).tolist(),
            **self.global_transform.to_dict(),
            "fit_energy": self.fit_energy,
            "bound_joints": self.bound_joints,
            "converged": self.converged,
            "empty": self.empty,
        }


def visibility(joints, hand_cloud, threshold=VISIBILITY_THRESHOLD):
    """Per-joint flag: within ``threshold`` of some hand point."""
    if len(_points(hand_cloud)) == 0:
        raise EmptyCloud("hand cloud is empty")
    return nearest_distances(np.asarray(joints).reshape(-1, 3), _points(hand_cloud)) <= threshold


def _points(cloud):
    return cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)


def init_state(model, joints_camera, cloud=None, shape=None, theta_init=None):
    """Tracking state from the frame-0 joints (and optionally the frame-0 cloud)."""
    J = np.asarray(joints_camera, dtype=float).reshape(21, 3)
    shape = shape or model.fit_shape(J)
    canon = model.canon_pose(shape, J[list(BASE_JOINTS)])
    try:
        pose = inverse_kinematics(model, canon.apply_inverse(J), shape, theta_init)
    except NoConvergence as exc:
        pose = exc.result
    centroid = None if cloud is None or len(_points(cloud)) == 0 else _points(cloud).mean(axis=0)
    state = HandTrackState(J.copy(), shape, np.array(pose.theta), centroid)
    state.length_history.append((0, bone_lengths(J)))
    return state


def canonicalize_frame(model, state, cloud):
    """Canonical cloud, coarse canonical joints and the canonicalizing transform."""
    pts = _points(cloud)
    if len(pts) == 0:
        raise EmptyCloud("hand cloud is empty")
    canon = model.canon_pose(state.shape, state.joints[list(BASE_JOINTS)])
    centroid = pts.mean(axis=0)
    shift = np.zeros(3) if state.centroid is None else centroid - state.centroid
    coarse = canon.apply_inverse(state.joints + shift)
    return canon.apply_inverse(pts), coarse, canon


def _pose_params(rest_fk, coarse):
    """Rigid offset placing the FK base joints onto the coarse ones."""
    return kabsch_align(rest_fk[list(BASE_JOINTS)], coarse[list(BASE_JOINTS)])


class HandTracker:
    """Online joint tracker for one sequence."""

    def __init__(self, model, state, config=None):
        self.model = model
        self.state = state
        self.config = config or HandTrackConfig()
        self._rng = np.random.default_rng(self.config.seed)
        self._radii = model.capsule_radii()
        self._cap_a = np.array([p for p, _ in CAPSULE_BONES])
        self._cap_b = np.array([c for _, c in CAPSULE_BONES])

    def refine_joints(self, canon_points, coarse):
        """Fit ``(theta, dR, dT)`` to the canonical cloud; returns
        ``(joints, theta, offset, energy, bound_count, converged)``."""
        cfg = self.config
        model, shape = self.model, self.state.shape
        rest = model.rest_joints(shape)
        pts = canon_points
        if len(pts) > cfg.max_points:
            pts = pts[np.sort(self._rng.choice(len(pts), cfg.max_points, replace=False))]
        pts = np.ascontiguousarray(pts)
        theta = self.state.theta.copy()
        theta_prev = self.state.theta.copy()
        fk0 = model.forward_kinematics(shape, theta)
        offset = _pose_params(fk0, coarse)
        vis = visibility(coarse, canon_points, cfg.visibility)
        n_vis = max(int(vis.sum()), 1)
        # same reference set as the visibility decision, so a visible joint
        # starts with zero hinge
        tree = cKDTree(canon_points)
        radii = self._radii

        J_start = offset.apply(fk0)
        d_start = tree.query(J_start)[0]

        def hinge(J, joints):
            # visible joints should stay within the visibility radius of the
            # cloud; by the triangle inequality only joints whose start distance
            # plus displacement exceeds the radius need a query
            sel = [j for j in joints if vis[j]]
            if not sel:
                return np.zeros(J.shape[0])
            q = J[:, sel]
            bound = d_start[sel] + np.linalg.norm(q - J_start[sel], axis=-1)
            out = np.zeros(bound.shape)
            check = bound > cfg.visibility
            if check.any():
                d = tree.query(q[check])[0]
                out[check] = np.maximum(d - cfg.visibility, 0.0)
            return out.sum(axis=1)

        def energy_of(J_batch, caps=None, base=None, joints=range(21), fixed_hinge=0.0):
            a, b = J_batch[:, self._cap_a], J_batch[:, self._cap_b]
            r = radii
            if caps is not None:
                a, b, r = a[:, caps], b[:, caps], radii[caps]
            if base is None:
                base = np.full(len(pts), 1e300)
            fit = _kernels.capsule_fit_batch(pts, np.ascontiguousarray(a), np.ascontiguousarray(b), r, base)
            return fit + cfg.joint_weight * (hinge(J_batch, joints) + fixed_hinge) / n_vis

        opt_g = ParticleOptimizer(cfg.global_optimizer)
        opt_f = ParticleOptimizer(cfg.finger_optimizer)
        for _ in range(cfg.passes):
            fk = model.forward_kinematics(shape, theta)
            R0, t0 = offset.rotation, offset.translation

            seg = (np.ascontiguousarray(fk[self._cap_a]), np.ascontiguousarray(fk[self._cap_b]))
            ref_local = (pts - t0) @ R0
            ref_signed = np.stack([_kernels.capsule_union_signed(
                ref_local, seg[0][q:q + 1], seg[1][q:q + 1], radii[q:q + 1]) for q in range(len(radii))], axis=1)
            ref_min = ref_signed.min(axis=1, keepdims=True)

            def global_batch(X, fk=fk, R0=R0, t0=t0, ref_local=ref_local):
                Rs = _kernels.rodrigues_batch(np.ascontiguousarray(X[:, :3]))
                R = Rs @ R0
                J = fk @ R.transpose(0, 2, 1) + (t0 + X[:, 3:])[:, None, :]
                # points in hand space for every candidate; signed distances are
                # 1-Lipschitz, so capsules farther than the minimum plus twice
                # the largest displacement can never be the nearest
                local = (pts[None] - (t0 + X[:, 3:])[:, None, :]) @ R
                delta = np.sqrt(((local - ref_local) ** 2).sum(-1)).max()
                mask = ref_signed <= ref_min + 2.0 * delta + 1e-12
                fit = _kernels.capsule_fit_pruned(pts, np.ascontiguousarray(J[:, self._cap_a]),
                                                  np.ascontiguousarray(J[:, self._cap_b]), radii, mask)
                return fit + cfg.joint_weight * hinge(J, range(21)) / n_vis

            res = opt_g.optimize(OptProblem(None, np.zeros(6), batch_energy=global_batch))
            offset = RigidTransform(axis_angle_to_matrix(res.x[:3]) @ offset.rotation, offset.translation + res.x[3:])
            # the thumb goes last so it never grabs points of stale fingers
            for f in FINGER_ORDER:
                caps = np.array([3 * f, 3 * f + 1, 3 * f + 2])
                others = np.setdiff1d(np.arange(len(CAPSULE_BONES)), caps)
                J_cur = offset.apply(model.forward_kinematics(shape, theta))
                base = _kernels.capsule_union_signed(
                    pts, np.ascontiguousarray(J_cur[self._cap_a[others]]),
                    np.ascontiguousarray(J_cur[self._cap_b[others]]), radii[others])
                idx = slice(9 * f, 9 * f + 9)
                moving_joints = list(range(2 + 4 * f, 5 + 4 * f))
                static = [j for j in range(21) if j not in moving_joints]
                fixed = float(hinge(J_cur[None], static)[0])
                dev = theta - theta_prev
                dev[idx] = 0.0
                dev_sq = float(dev @ dev)

                ref = _kernels.capsule_union_signed(
                    pts, np.ascontiguousarray(J_cur[self._cap_a[caps]]),
                    np.ascontiguousarray(J_cur[self._cap_b[caps]]), radii[caps])

                prev_f = theta_prev[idx]
                nrm = np.linalg.norm(prev_f)
                curl = prev_f / nrm if cfg.curl_free and nrm > 1e-6 else np.zeros(9)

                def finger_batch(X, f=f, caps=caps, base=base, ref=ref, J_cur=J_cur, mj=moving_joints,
                                 fixed=fixed, prev=prev_f, dev_sq=dev_sq, curl=curl):
                    moving = offset.apply(model.finger_fk_batch(rest, f, X).reshape(-1, 3)).reshape(-1, 3, 3)
                    J = np.broadcast_to(J_cur, (len(X), 21, 3)).copy()
                    J[:, 2 + 4 * f: 5 + 4 * f] = moving
                    # a point whose static distance already beats the finger's
                    # reference distance minus the largest joint move is unaffected
                    delta = np.sqrt(((moving - J_cur[mj]) ** 2).sum(-1)).max()
                    active = ref - delta < base
                    a = np.ascontiguousarray(J[:, self._cap_a[caps]])
                    b = np.ascontiguousarray(J[:, self._cap_b[caps]])
                    fit = np.abs(base[~active]).sum()
                    if active.any():
                        fit = fit + active.sum() * _kernels.capsule_fit_batch(
                            np.ascontiguousarray(pts[active]), a, b, radii[caps], np.ascontiguousarray(base[active]))
                    fit = fit / len(pts)
                    d = X - prev
                    d = d - np.outer(d @ curl, curl)
                    prior = cfg.theta_prior * np.sqrt(dev_sq + (d ** 2).sum(axis=1))
                    return fit + cfg.joint_weight * (hinge(J, mj) + fixed) / n_vis + prior

                res = opt_f.optimize(OptProblem(None, theta[idx], batch_energy=finger_batch))
                theta[idx] = res.x
        J = offset.apply(model.forward_kinematics(shape, theta))
        final = float(energy_of(J[None])[0]) + cfg.theta_prior * float(np.linalg.norm(theta - theta_prev))
        move = np.linalg.norm(J - coarse, axis=1)
        over = move > cfg.max_update
        if over.any():
            J = J.copy()
            J[over] = coarse[over] + (J[over] - coarse[over]) * (cfg.max_update / move[over])[:, None]
        return J, theta, offset, final, int(over.sum()), final <= cfg.fail_energy

    def track(self, cloud):
        """Advance one frame with the segmented hand cloud (camera space)."""
        state = self.state
        state.frame += 1
        pts = _points(cloud)
        if len(pts) == 0:
            # full occlusion: keep the previous estimate and flag the frame
            canon = self.model.canon_pose(state.shape, state.joints[list(BASE_JOINTS)])
            return HandFrameResult(state.frame, state.joints.copy(), state.theta.copy(), canon,
                                   canon.apply_inverse(state.joints), empty=True, converged=False)
        canon_pts, coarse, canon = canonicalize_frame(self.model, state, pts)
        J_c, theta, offset, energy, n_bound, ok = self.refine_joints(canon_pts, coarse)
        if not ok:
            log.debug("frame %d: fit energy %.4f above threshold", state.frame, energy)
        J = canon.apply(J_c)
        state.joints = J
        state.theta = theta
        state.centroid = pts.mean(axis=0)
        rest_len = self.model.rest_bone_lengths(state.shape)
        state.degraded = bool(np.any(np.abs(bone_lengths(J) / rest_len - 1.0) > DEGRADED_LENGTH_RATIO))
        updated = False
        if self.config.update_shape:
            new_shape = update_hand_shape(self.model, state, state.frame)
            updated = new_shape is not None
        return HandFrameResult(state.frame, J, theta, canon.compose(offset), coarse, energy, n_bound, ok,
                               shape_updated=updated)


def update_hand_shape(model, state, frame_index):
    """Every 10th frame, refit the shape to the bone lengths recorded on
    earlier 10th frames; returns the new shape or ``None`` (unchanged)."""
    if frame_index % SHAPE_UPDATE_PERIOD != 0:
        return None
    history = [L for i, L in state.length_history if i < frame_index and i % SHAPE_UPDATE_PERIOD == 0]
    state.length_history.append((frame_index, bone_lengths(state.joints)))
    if not history:
        return None
    state.shape = model.fit_shape_to_lengths(np.array(history))
    return state.shape
