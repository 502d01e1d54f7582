"""Evaluation metrics for hand and object tracking."""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyCloud, EmptyObject, LengthMismatch
from .geometry import PointCloud, nearest_distances
from .refine import e_penetr

PCK_THRESHOLDS = np.arange(20, 51) / 1000.0
# errors are rounded before threshold tests so that values constructed at a
# threshold compare at the threshold rather than a rounding error away
_DEG_DECIMALS = 9
_M_DECIMALS = 12


class _NotInContact:
    """Marker returned for frames excluded from contact metrics."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NotInContact"

    def __bool__(self):
        return False


NotInContact = _NotInContact()

penetration_depth = e_penetr


def _cloud(x):
    return x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=float).reshape(-1, 3)


def mpjpe(pred, gt):
    """Mean Euclidean per-joint distance; accepts ``(21, 3)`` or ``(T, 21, 3)``."""
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"shape {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def per_joint_errors(pred, gt):
    pred, gt = np.asarray(pred, dtype=float), np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise LengthMismatch(f"shape {pred.shape} vs {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def disjointedness(hand_mesh, object_vertices, contact_gt):
    """Mean over the five finger regions of the mean nearest-object-vertex
    distance, or ``NotInContact`` when the frame is not a contact frame."""
    obj = _cloud(object_vertices)
    if len(obj) == 0:
        raise EmptyObject("object has no vertices")
    if not contact_gt:
        return NotInContact
    verts = np.asarray(hand_mesh.vertices)
    per_region = [nearest_distances(verts[np.asarray(r)], obj).mean() for r in hand_mesh.contact_regions]
    return float(np.mean(per_region))


def _geodesic_deg(Ra, Rb):
    R = Ra.T @ Rb
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return math.degrees(math.atan2(s, c))


def rotation_error_deg(pred, gt, symmetry=None):
    """Rotation error in degrees.

    ``symmetry`` is ``None`` (geodesic angle), an object-frame axis vector
    (angle between predicted and true axis directions) or ``"full"`` (any
    rotation is equivalent, error 0).
    """
    if symmetry is None or (isinstance(symmetry, str) and symmetry == "none"):
        err = _geodesic_deg(pred.rotation, gt.rotation)
    elif isinstance(symmetry, str):
        if symmetry != "full":
            raise ValueError(f"unknown symmetry {symmetry!r}")
        err = 0.0
    else:
        a = np.asarray(symmetry, dtype=float)
        a = a / np.linalg.norm(a)
        u, v = pred.rotation @ a, gt.rotation @ a
        err = math.degrees(math.atan2(np.linalg.norm(np.cross(u, v)), float(u @ v)))
    return round(err, _DEG_DECIMALS)


def translation_error(pred, gt):
    return round(float(np.linalg.norm(pred.translation - gt.translation)), _M_DECIMALS)


def pose_errors(pred, gt, symmetry=None):
    """Per-frame ``(rotation_deg, translation_m)`` arrays."""
    if len(pred) != len(gt) or len(gt) == 0:
        raise LengthMismatch(f"{len(pred)} predicted vs {len(gt)} ground-truth poses")
    rot = np.array([rotation_error_deg(p, g, symmetry) for p, g in zip(pred, gt)])
    trans = np.array([translation_error(p, g) for p, g in zip(pred, gt)])
    return rot, trans


def accuracy_from_errors(rot_deg, trans_m):
    """Fractions of frames strictly under 5 deg / 5 cm and 10 deg / 10 cm."""
    rot_deg, trans_m = np.asarray(rot_deg, dtype=float), np.asarray(trans_m, dtype=float)
    if rot_deg.shape != trans_m.shape or rot_deg.size == 0:
        raise LengthMismatch("error arrays must be equal-length and non-empty")
    return {
        "acc_5_5": float(np.mean((rot_deg < 5.0) & (trans_m < 0.05))),
        "acc_10_10": float(np.mean((rot_deg < 10.0) & (trans_m < 0.10))),
    }


def pose_accuracy(pred, gt, symmetry=None):
    return accuracy_from_errors(*pose_errors(pred, gt, symmetry))


def chamfer_cd(m1, m2):
    """Sum of the two directed mean nearest-neighbour distances (not squared)."""
    a, b = _cloud(m1), _cloud(m2)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("chamfer distance needs two non-empty clouds")
    return float(nearest_distances(a, b).mean() + nearest_distances(b, a).mean())


def pck_auc(errors, thresholds=PCK_THRESHOLDS):
    """PCK curve (fraction of errors strictly below each threshold) and its
    trapezoidal area normalized by the threshold span."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("no errors given")
    if np.any(e < 0):
        raise ValueError("errors must be non-negative")
    th = np.asarray(thresholds, dtype=float)
    curve = (e[None, :] < th[:, None]).mean(axis=1)
    span = th[-1] - th[0]
    auc = float(np.sum((curve[1:] + curve[:-1]) * np.diff(th)) / 2.0 / span)
    return curve, auc


def transform_poses(poses, T):
    """Apply ``T`` on the left of every pose (for invariance checks)."""
    return [T.compose(p) for p in poses]


__all__ = ["NotInContact", "PCK_THRESHOLDS", "accuracy_from_errors", "chamfer_cd", "disjointedness",
           "mpjpe", "per_joint_errors", "pck_auc", "penetration_depth", "pose_accuracy", "pose_errors",
           "rotation_error_deg", "translation_error"]
