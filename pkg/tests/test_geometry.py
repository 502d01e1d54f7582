from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hotrack.errors import CorruptFile, DegenerateConfiguration, EmptyReference, LengthMismatch
from hotrack.geometry import (
    HAND,
    OBJECT,
    Behind,
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    TriangleMesh,
    axis_angle_to_matrix,
    back_project,
    kabsch_align,
    load_obj,
    load_point_cloud,
    matrix_to_axis_angle,
    nearest_distances,
    project,
    project_points,
    random_rotation,
    rotation_angle,
    save_obj,
    save_point_cloud,
)

K = CameraIntrinsics(fx=500.0, fy=520.0, cx=320.0, cy=240.0, width=640, height=480)


def brute_nn(q, r):
    return np.sqrt(((q[:, None, :] - r[None, :, :]) ** 2).sum(-1)).min(axis=1)


def random_transform(rng):
    return RigidTransform(random_rotation(rng), rng.uniform(-1, 1, 3))


# -- rigid transforms ----------------------------------------------------

def test_identity_inverse_is_identity():
    assert RigidTransform.identity().inverse().allclose(RigidTransform.identity(), atol=0)


def test_compose_with_inverse_is_identity(rng):
    for _ in range(20):
        T = random_transform(rng)
        assert T.compose(T.inverse()).allclose(RigidTransform.identity(), atol=1e-9)
        assert (T @ T.inverse()).allclose(RigidTransform.identity(), atol=1e-9)


def test_apply_round_trip(rng):
    for _ in range(20):
        T = random_transform(rng)
        p = rng.normal(size=(50, 3))
        assert np.abs(T.apply_inverse(T.apply(p)) - p).max() < 1e-9


def test_compose_order(rng):
    A, B = random_transform(rng), random_transform(rng)
    p = rng.normal(size=(10, 3))
    assert np.allclose(A.compose(B).apply(p), A.apply(B.apply(p)), atol=1e-12)


def test_rejects_improper_rotation():
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_dict_round_trip(rng):
    T = random_transform(rng)
    assert RigidTransform.from_dict(T.to_dict()).allclose(T, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3))
def test_axis_angle_round_trip(v):
    v = np.array(v)
    assume(np.linalg.norm(v) < 3.0)
    R = axis_angle_to_matrix(v)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.allclose(axis_angle_to_matrix(matrix_to_axis_angle(R)), R, atol=1e-9)
    assert rotation_angle(R) == pytest.approx(np.linalg.norm(v), abs=1e-7)


# -- kabsch ----------------------------------------------------------------

def test_kabsch_identity(rng):
    pts = rng.normal(size=(6, 3))
    T = kabsch_align(pts, pts)
    assert T.allclose(RigidTransform.identity(), atol=1e-12)


def test_kabsch_recovers_known_transform(rng, model):
    base = model.base_joints()
    for _ in range(50):
        T0 = random_transform(rng)
        T = kabsch_align(base, T0.apply(base))
        assert np.abs(T.rotation - T0.rotation).max() < 1e-9
        assert np.abs(T.translation - T0.translation).max() < 1e-9


def test_kabsch_reindexing_invariance(rng):
    src = rng.normal(size=(8, 3))
    dst = random_transform(rng).apply(src) + rng.normal(0, 0.01, (8, 3))
    perm = rng.permutation(8)
    assert kabsch_align(src, dst).allclose(kabsch_align(src[perm], dst[perm]), atol=1e-12)


def test_kabsch_perturbed_point_beats_grid_search(rng, model):
    src = model.base_joints()
    T0 = RigidTransform(axis_angle_to_matrix([0.1, -0.2, 0.3]), [0.01, 0.02, 0.4])
    dst = T0.apply(src)
    dst[2] += np.array([0.001, 0.0, 0.0])

    def rms(T):
        return float(np.sqrt(((T.apply(src) - dst) ** 2).sum(axis=1).mean()))

    best = rms(kabsch_align(src, dst))
    assert best <= 0.001
    # brute force over a 1 deg / 1 mm lattice around the truth
    grid = []
    for d in itertools.product((-1, 0, 1), repeat=6):
        R = axis_angle_to_matrix(np.radians(d[:3])) @ T0.rotation
        grid.append(rms(RigidTransform(R, T0.translation + 0.001 * np.array(d[3:]))))
    assert best <= min(grid) + 1e-12


def test_kabsch_errors():
    with pytest.raises(LengthMismatch):
        kabsch_align(np.zeros((4, 3)), np.zeros((5, 3)))
    line = np.outer(np.arange(5.0), [1.0, 0.0, 0.0])
    with pytest.raises(DegenerateConfiguration):
        kabsch_align(line, line)
    with pytest.raises(DegenerateConfiguration):
        kabsch_align(np.ones((4, 3)), np.ones((4, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_kabsch_property_random_rotations(seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(7, 3))
    T0 = random_transform(rng)
    T = kabsch_align(src, T0.apply(src))
    assert np.abs(T.rotation - T0.rotation).max() < 1e-9
    assert np.abs(T.translation - T0.translation).max() < 1e-9


# -- camera ----------------------------------------------------------------

def test_back_project_examples():
    depth = np.zeros((480, 640))
    depth[240, 320] = 1.0
    cloud = back_project(depth, K)
    assert np.allclose(cloud.points, [[0.0, 0.0, 1.0]])
    k2 = CameraIntrinsics(fx=100.0, fy=100.0, cx=50.0, cy=40.0, width=200, height=100)
    d = np.zeros((100, 200))
    d[40, 150] = 2.0
    assert np.allclose(back_project(d, k2).points, [[2.0, 0.0, 2.0]])


def test_back_project_empty_and_labels():
    assert len(back_project(np.zeros((480, 640)), K)) == 0
    depth = np.zeros((480, 640))
    labels = np.zeros((480, 640), np.uint8)
    depth[10, 10], labels[10, 10] = 0.5, HAND
    depth[20, 30], labels[20, 30] = 0.6, OBJECT
    cloud = back_project(depth, K, labels)
    assert list(cloud.labels) == [HAND, OBJECT]
    assert len(cloud.select(OBJECT)) == 1


def test_project_examples():
    assert project((0, 0, 1), K) == (320.0, 240.0)
    assert project((1, 0, 1), K) == (820.0, 240.0)
    assert project((0, 0, -1), K) is Behind
    assert not Behind


def test_back_project_project_round_trip(rng):
    depth = np.zeros((480, 640))
    vs, us = rng.integers(0, 480, 200), rng.integers(0, 640, 200)
    depth[vs, us] = rng.uniform(0.3, 2.0, 200)
    cloud = back_project(depth, K)
    uv, front = project_points(cloud.points, K)
    v, u = np.nonzero(depth > 0)
    assert front.all()
    assert np.abs(uv - np.stack([u, v], axis=1)).max() < 1e-6


# -- nearest neighbours -------------------------------------------------------

def test_nearest_distances_examples():
    assert np.array_equal(nearest_distances([[0, 0, 0]], [[0, 0, 1], [0, 2, 0]]), [1.0])
    pts = np.random.default_rng(0).normal(size=(30, 3))
    assert np.all(nearest_distances(pts, pts) == 0.0)
    with pytest.raises(EmptyReference):
        nearest_distances(pts, np.zeros((0, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 500), st.integers(1, 500), st.integers(0, 2**31 - 1))
def test_nearest_distances_brute_force(nq, nr, seed):
    rng = np.random.default_rng(seed)
    q, r = rng.normal(size=(nq, 3)), rng.normal(size=(nr, 3))
    assert np.allclose(nearest_distances(q, r), brute_nn(q, r), rtol=0, atol=1e-12)


# -- clouds and meshes ----------------------------------------------------

def test_point_cloud_io_round_trip(tmp_path, rng):
    cloud = PointCloud(rng.normal(size=(40, 3)).astype(np.float32), rng.integers(0, 3, 40))
    path = tmp_path / "c.poc"
    save_point_cloud(cloud, path)
    back = load_point_cloud(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.labels, cloud.labels)
    data = path.read_bytes()
    assert data[:4] == b"POC1"
    path.write_bytes(data[:20])
    with pytest.raises(CorruptFile):
        load_point_cloud(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CorruptFile):
        load_point_cloud(path)


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])
    with pytest.raises(LengthMismatch):
        PointCloud(np.zeros((3, 3)), [1, 2])


def test_subsample_keeps_order(rng):
    cloud = PointCloud(np.arange(30.0).reshape(10, 3))
    sub = cloud.subsample(4, rng)
    assert len(sub) == 4 and np.all(np.diff(sub.points[:, 0]) > 0)
    assert cloud.subsample(20, rng) is cloud


def test_obj_round_trip(tmp_path):
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
                        [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    path = tmp_path / "m.obj"
    save_obj(mesh, path)
    back = load_obj(path)
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_sample_surface_on_mesh(rng):
    mesh = TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    pts = mesh.sample_surface(200, rng)
    assert np.allclose(pts[:, 2], 0) and np.all(pts[:, :2].sum(axis=1) <= 1 + 1e-12)
