from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotrack import metrics
from hotrack.errors import EmptyCloud, EmptyObject, LengthMismatch
from hotrack.geometry import RigidTransform, axis_angle_to_matrix, random_rotation
from hotrack.hand.model import HandMesh
from hotrack.metrics import (
    PCK_THRESHOLDS,
    NotInContact,
    accuracy_from_errors,
    chamfer_cd,
    disjointedness,
    mpjpe,
    pck_auc,
    pose_accuracy,
    pose_errors,
    rotation_error_deg,
)
from hotrack.refine import e_penetr


def brute_cd(a, b):
    d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def test_mpjpe_examples(rng):
    J = rng.normal(size=(21, 3))
    assert mpjpe(J, J) == 0.0
    K = J.copy()
    K[4] += np.array([0.0, 0.021, 0.0])
    assert mpjpe(K, J) == pytest.approx(0.001, abs=1e-15)
    P, G = rng.normal(size=(21, 3)), rng.normal(size=(21, 3))
    loop = sum(np.sqrt(sum((P[j, k] - G[j, k]) ** 2 for k in range(3))) for j in range(21)) / 21
    assert mpjpe(P, G) == pytest.approx(loop, rel=1e-12)
    with pytest.raises(LengthMismatch):
        mpjpe(P, G[:20])


def test_penetration_depth_shared():
    assert metrics.penetration_depth is e_penetr


def test_disjointedness_examples():
    xs = np.linspace(-0.05, 0.05, 11)
    obj = np.array([[x, y, 0.0] for x in xs for y in xs])
    hand = np.vstack([obj[[0, 12, 24, 36, 48]] + [0, 0, 0.01], obj[[60, 72, 84, 96, 108]] + [0, 0, 0.01]])
    regions = tuple(np.array([i, i + 5]) for i in range(5))
    mesh = HandMesh(hand, np.zeros((0, 3), int), regions)
    assert disjointedness(mesh, obj, True) == pytest.approx(0.01, abs=1e-15)
    touching = HandMesh(obj[:10], np.zeros((0, 3), int), regions)
    assert disjointedness(touching, obj, True) == 0.0
    assert disjointedness(mesh, obj, False) is NotInContact
    assert not NotInContact
    with pytest.raises(EmptyObject):
        disjointedness(mesh, np.zeros((0, 3)), True)


def _rotated(T, deg, axis=(0.0, 0.0, 1.0)):
    a = np.asarray(axis, float)
    R = axis_angle_to_matrix(np.radians(deg) * a / np.linalg.norm(a))
    return RigidTransform(T.rotation @ R, T.translation)


def test_pose_accuracy_examples(rng):
    gt = [RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3)) for _ in range(10)]
    assert pose_accuracy(gt, gt) == {"acc_5_5": 1.0, "acc_10_10": 1.0}
    pred = [RigidTransform(_rotated(g, 4.0, (1, 0, 0)).rotation, g.translation + [0.04, 0, 0]) for g in gt]
    rot, trans = pose_errors(pred, gt)
    assert np.allclose(rot, 4.0) and np.allclose(trans, 0.04)
    assert pose_accuracy(pred, gt)["acc_5_5"] == 1.0
    with pytest.raises(LengthMismatch):
        pose_accuracy(pred[:3], gt)


def test_strict_boundaries(rng):
    gt = [RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3)) for _ in range(5)]
    at5 = [_rotated(g, 5.0, rng.normal(size=3)) for g in gt]
    assert pose_accuracy(at5, gt)["acc_5_5"] == 0.0
    assert pose_accuracy(at5, gt)["acc_10_10"] == 1.0
    shift = [RigidTransform(g.rotation, g.translation + [0.0, 0.05, 0.0]) for g in gt]
    assert pose_accuracy(shift, gt)["acc_5_5"] == 0.0
    at10 = [RigidTransform(_rotated(g, 10.0).rotation, g.translation + [0.1, 0, 0]) for g in gt]
    assert pose_accuracy(at10, gt) == {"acc_5_5": 0.0, "acc_10_10": 0.0}
    assert accuracy_from_errors([4.999999], [0.049999])["acc_5_5"] == 1.0


def test_axis_symmetry(rng):
    g = RigidTransform(random_rotation(rng), np.zeros(3))
    spun = _rotated(g, 90.0, (0, 0, 1))
    assert rotation_error_deg(spun, g, np.array([0.0, 0.0, 1.0])) == 0.0
    assert rotation_error_deg(spun, g) == pytest.approx(90.0)
    tilted = _rotated(g, 3.0, (1, 0, 0))
    assert rotation_error_deg(tilted, g, np.array([0.0, 0.0, 1.0])) == pytest.approx(3.0)
    assert rotation_error_deg(tilted, g, "full") == 0.0
    with pytest.raises(ValueError):
        rotation_error_deg(tilted, g, "bogus")


def test_chamfer_examples(rng):
    a = rng.normal(size=(50, 3))
    assert chamfer_cd(a, a) == 0.0
    assert chamfer_cd([[0, 0, 0]], [[0, 0, 1]]) == 2.0
    with pytest.raises(EmptyCloud):
        chamfer_cd(a, np.zeros((0, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.integers(1, 300), st.integers(0, 2**31 - 1))
def test_chamfer_brute_force_and_symmetry(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert chamfer_cd(a, b) == pytest.approx(brute_cd(a, b), rel=1e-12, abs=1e-15)
    assert chamfer_cd(a, b) == pytest.approx(chamfer_cd(b, a), rel=1e-12)


def test_pck_examples():
    curve, auc = pck_auc(np.zeros(42))
    assert np.all(curve == 1.0) and auc == pytest.approx(1.0)
    curve, auc = pck_auc(np.full(42, 0.06))
    assert np.all(curve == 0.0) and auc == 0.0
    # a step at 35 mm with strict '<' on a 1 mm lattice: the curve is 0 up to
    # and including 35 mm, 1 from 36 mm; the trapezoid gives (15 - 0.5)/30
    curve, auc = pck_auc(np.full(42, 0.035))
    assert curve[PCK_THRESHOLDS <= 0.035].max() == 0.0 and curve[PCK_THRESHOLDS > 0.035].min() == 1.0
    assert auc == pytest.approx(29 / 60)
    assert abs(auc - 0.5) <= 0.5 / 30 + 1e-12
    with pytest.raises(ValueError):
        pck_auc([-0.01])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metric_properties(seed):
    rng = np.random.default_rng(seed)
    gt = [RigidTransform(random_rotation(rng), rng.uniform(-0.5, 0.5, 3)) for _ in range(8)]
    pred = [RigidTransform(_rotated(g, rng.uniform(0, 15), rng.normal(size=3)).rotation,
                           g.translation + rng.normal(0, 0.04, 3)) for g in gt]
    acc = pose_accuracy(pred, gt)
    assert acc["acc_10_10"] >= acc["acc_5_5"]
    T = RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))
    r1, t1 = pose_errors(pred, gt)
    r2, t2 = pose_errors(metrics.transform_poses(pred, T), metrics.transform_poses(gt, T))
    assert np.allclose(r1, r2, atol=1e-6) and np.allclose(t1, t2, atol=1e-9)
    J, G = rng.normal(size=(21, 3)), rng.normal(size=(21, 3))
    assert mpjpe(T.apply(J), T.apply(G)) == pytest.approx(mpjpe(J, G), rel=1e-9)
    assert chamfer_cd(T.apply(J), T.apply(G)) == pytest.approx(chamfer_cd(J, G), rel=1e-9)
    curve, _ = pck_auc(rng.uniform(0, 0.07, 100))
    assert np.all(np.diff(curve) >= 0)
