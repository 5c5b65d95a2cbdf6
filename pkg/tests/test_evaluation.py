import numpy as np
import pytest

from mvrecon.errors import EmptyMesh, EmptyPointSet, NoOverlap
from mvrecon.evaluation import (
    MetricsReport,
    chamfer,
    depth_rmse,
    fscore,
    sample_mesh,
    triangle_areas,
)


def brute_nearest(queries, targets):
    d = np.linalg.norm(queries[:, None, :] - targets[None, :, :], axis=2)
    return d.min(axis=1)


def test_chamfer_identical_sets(rng):
    pts = rng.normal(size=(50, 3))
    assert chamfer(pts, pts) == (0.0, 0.0, 0.0)


def test_chamfer_single_pair():
    assert chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == (1.0, 1.0, 1.0)


def test_chamfer_hand_example():
    pred = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    gt = np.array([[1.0, 0, 0]])
    c, acc, comp = chamfer(pred, gt)
    assert (c, acc, comp) == (1.0, 1.0, 1.0)


def test_chamfer_symmetry(rng):
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(60, 3))
    c1, acc1, comp1 = chamfer(a, b)
    c2, acc2, comp2 = chamfer(b, a)
    assert c1 == c2
    assert acc1 == comp2 and comp1 == acc2


def test_chamfer_matches_brute_force(rng):
    a = rng.normal(size=(300, 3))
    b = rng.normal(size=(200, 3))
    _, acc, comp = chamfer(a, b)
    assert acc == pytest.approx(brute_nearest(a, b).mean(), abs=1e-12)
    assert comp == pytest.approx(brute_nearest(b, a).mean(), abs=1e-12)


def test_fscore_identical_and_disjoint(rng):
    pts = rng.normal(size=(30, 3))
    assert fscore(pts, pts, tau=0.5) == (1.0, 1.0, 1.0)
    far = pts + 100.0
    assert fscore(far, pts, tau=0.5) == (0.0, 0.0, 0.0)


def test_fscore_hand_count():
    pred = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    gt = np.array([[0.0, 0, 0]])
    f, p, r = fscore(pred, gt, tau=1.0)
    assert (p, r) == (0.5, 1.0)
    assert f == pytest.approx(2 / 3)


def test_fscore_monotone_in_tau(rng):
    a = rng.normal(size=(100, 3))
    b = rng.normal(size=(100, 3))
    scores = [fscore(a, b, tau=t)[0] for t in (0.05, 0.2, 0.5, 1.0, 3.0)]
    assert scores == sorted(scores)


def test_fscore_symmetry(rng):
    a = rng.normal(size=(40, 3))
    b = rng.normal(size=(70, 3))
    f1, p1, r1 = fscore(a, b, tau=0.4)
    f2, p2, r2 = fscore(b, a, tau=0.4)
    assert f1 == f2 and p1 == r2 and r1 == p2


def test_empty_point_sets_rejected():
    pts = np.ones((3, 3))
    empty = np.zeros((0, 3))
    with pytest.raises(EmptyPointSet):
        chamfer(empty, pts)
    with pytest.raises(EmptyPointSet):
        fscore(pts, empty, tau=0.1)


def test_depth_rmse_cases():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    valid = np.ones((2, 2), bool)
    assert depth_rmse(a, valid, a, valid) == (0.0, 4)
    rmse, n = depth_rmse(a + 2.0, valid, a, valid)
    assert rmse == pytest.approx(2.0)
    b = a.copy()
    b[0, 0] += 3
    b[0, 1] += 4
    mask = np.array([[True, True], [False, False]])
    rmse2, n2 = depth_rmse(b, mask, a, valid)
    assert n2 == 2
    assert rmse2 == pytest.approx(np.sqrt(12.5))


def test_depth_rmse_permutation_invariant(rng):
    a = rng.uniform(1, 5, size=(8, 8))
    b = rng.uniform(1, 5, size=(8, 8))
    valid = rng.random((8, 8)) > 0.3
    r1, _ = depth_rmse(a, valid, b, valid)
    perm = rng.permutation(64)
    r2, _ = depth_rmse(
        a.reshape(-1)[perm].reshape(8, 8), valid.reshape(-1)[perm].reshape(8, 8),
        b.reshape(-1)[perm].reshape(8, 8), valid.reshape(-1)[perm].reshape(8, 8),
    )
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_depth_rmse_no_overlap():
    a = np.ones((2, 2))
    with pytest.raises(NoOverlap):
        depth_rmse(a, np.zeros((2, 2), bool), a, np.ones((2, 2), bool))
    with pytest.raises(NoOverlap):
        depth_rmse(a, np.ones((2, 2), bool), np.ones((3, 3)), np.ones((3, 3), bool))


def test_sample_mesh_inside_triangle():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0]])
    tris = np.array([[0, 1, 2]])
    pts = sample_mesh(verts, tris, 500, seed=3)
    assert pts.shape == (500, 3)
    assert np.all(pts[:, 2] == 0.0)
    assert np.all(pts[:, 0] >= 0) and np.all(pts[:, 1] >= 0)
    assert np.all(pts[:, 0] + pts[:, 1] <= 1.0 + 1e-12)


def test_sample_mesh_area_weighting():
    # triangles with areas 0.5 and 1.5 (ratio 1:3)
    verts = np.array(
        [[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [10.0, 0, 0], [13.0, 0, 0], [10.0, 1, 0]]
    )
    tris = np.array([[0, 1, 2], [3, 4, 5]])
    areas = triangle_areas(verts, tris)
    assert areas.tolist() == [0.5, 1.5]
    n = 4000
    pts = sample_mesh(verts, tris, n, seed=0)
    n_small = int((pts[:, 0] < 5).sum())
    p = 0.25
    sigma = np.sqrt(n * p * (1 - p))
    assert abs(n_small - n * p) < 3 * sigma


def test_sample_mesh_edge_cases():
    verts = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0]])
    tris = np.array([[0, 1, 2]])
    assert sample_mesh(verts, tris, 0).shape == (0, 3)
    with pytest.raises(EmptyMesh):
        sample_mesh(verts, np.zeros((0, 3), np.int64), 10)
    a = sample_mesh(verts, tris, 100, seed=7)
    b = sample_mesh(verts, tris, 100, seed=7)
    assert np.array_equal(a, b)


def test_report_serialization():
    rep = MetricsReport(
        chamfer=0.1, accuracy=0.08, completeness=0.12, fscore=0.9,
        precision=0.88, recall=0.92, threshold=0.05, depth_rmse=0.01,
    )
    text = rep.to_json()
    assert '"chamfer": 0.1' in text
    table = rep.to_table()
    assert "fscore" in table and "0.9" in table
