import numpy as np
import pytest

from collabmesh import geometry as geo
from collabmesh.geometry import GeometryError, Mesh


def unit_cube(side=1.0, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                 dtype=np.float64) * side
    v = v - side / 2 + c
    f = np.array([
        [0, 1, 3], [0, 3, 2],       # x=lo
        [4, 6, 7], [4, 7, 5],       # x=hi
        [0, 4, 5], [0, 5, 1],       # y=lo
        [2, 3, 7], [2, 7, 6],       # y=hi
        [0, 2, 6], [0, 6, 4],       # z=lo
        [1, 5, 7], [1, 7, 3],       # z=hi
    ])
    return Mesh(v, f)


def brute_chamfer(a, b):
    # O(n^2) all-pairs oracle, independent of the library path
    d_ab = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return 0.5 * (d_ab.min(axis=1).sum() + d_ab.min(axis=0).sum())


def test_mesh_rejects_bad_faces():
    with pytest.raises(GeometryError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(GeometryError):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))


def test_cube_watertight():
    assert unit_cube().is_watertight()


def test_obj_roundtrip(tmp_path):
    m = unit_cube(0.3, center=(0.1, -0.2, 0.05))
    path = tmp_path / "cube.obj"
    geo.save_obj(path, m)
    m2 = geo.load_obj(path)
    assert np.allclose(m.vertices, m2.vertices)
    assert (m.faces == m2.faces).all()


# -- chamfer -------------------------------------------------------------------

def test_chamfer_identity():
    pts = np.random.default_rng(0).normal(size=(20, 3))
    assert geo.chamfer_distance(pts, pts) == 0.0


def test_chamfer_singletons():
    a = np.array([[0.0, 0.0, 0.0]])
    b = np.array([[1.0, 0.0, 0.0]])
    assert geo.chamfer_distance(a, b) == pytest.approx(1.0)


def test_chamfer_matches_bruteforce():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.normal(size=(50, 3))
        b = rng.normal(size=(50, 3))
        assert geo.chamfer_distance(a, b) == pytest.approx(brute_chamfer(a, b), abs=0)


def test_chamfer_kdtree_path_matches_bruteforce():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(400, 3))
    b = rng.normal(size=(300, 3))
    assert geo.chamfer_distance(a, b) == pytest.approx(brute_chamfer(a, b), rel=1e-12)


def test_chamfer_symmetric_nonnegative():
    rng = np.random.default_rng(3)
    for _ in range(10):
        a = rng.normal(size=(17, 3))
        b = rng.normal(size=(9, 3))
        ab = geo.chamfer_distance(a, b)
        assert ab == geo.chamfer_distance(b, a)
        assert ab >= 0


def test_chamfer_empty_errors():
    with pytest.raises(GeometryError):
        geo.chamfer_distance(np.zeros((0, 3)), np.zeros((3, 3)))


# -- sampling ------------------------------------------------------------------

def unit_square_mesh():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64)
    f = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(v, f)


def test_sample_surface_mean():
    pts = geo.sample_surface(unit_square_mesh(), 10_000, seed=4)
    assert np.allclose(pts.mean(axis=0), [0.5, 0.5, 0.0], atol=0.02)


def test_sample_surface_in_plane():
    m = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=np.float64),
             np.array([[0, 1, 2]]))
    pts = geo.sample_surface(m, 500, seed=5)
    assert np.allclose(pts[:, 2], 0.0)
    assert (pts[:, 0] >= -1e-12).all() and (pts[:, 1] >= -1e-12).all()
    assert (pts[:, 0] + pts[:, 1] <= 1 + 1e-12).all()


def test_sample_surface_deterministic():
    m = unit_square_mesh()
    assert (geo.sample_surface(m, 64, seed=6) == geo.sample_surface(m, 64, seed=6)).all()


def test_sample_surface_zero_area():
    m = Mesh(np.zeros((3, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(GeometryError):
        geo.sample_surface(m, 10)


# -- inside test / penetration -------------------------------------------------

def test_points_inside_cube():
    cube = unit_cube()
    pts = np.array([[0, 0, 0], [0.3, 0.3, -0.3], [0.6, 0, 0], [2, 2, 2]],
                   dtype=np.float64)
    assert list(geo.points_inside(pts, cube)) == [True, True, False, False]


def test_penetration_disjoint():
    assert geo.penetration_depth(unit_cube(0.2, (5, 5, 5)), unit_cube()) == 0.0


def test_penetration_cube_center():
    hand = Mesh(np.array([[0.0, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]]),
                np.array([[0, 1, 2]]))
    depth = geo.penetration_depth(hand, unit_cube())
    assert depth == pytest.approx(0.5, abs=1e-9)


def test_penetration_inside_sphere():
    # vertex 1 mm inside a 10 mm sphere -> depth 1 mm
    from collabmesh.objdec import build_icosphere
    sphere = build_icosphere(3)
    obj = Mesh(sphere.vertices * 0.010, sphere.faces)
    hand = Mesh(np.array([[0.009, 0.0, 0.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]]),
                np.array([[0, 1, 2]]))
    depth = geo.penetration_depth(hand, obj)
    assert depth == pytest.approx(0.001, abs=5e-5)


def test_penetration_open_mesh_errors():
    open_obj = Mesh(unit_cube().vertices, unit_cube().faces[:-1])
    hand = Mesh(np.zeros((3, 3)) + [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
                np.array([[0, 1, 2]]))
    with pytest.raises(GeometryError, match="voxel"):
        geo.penetration_depth(hand, open_obj)


# -- intersection volume -------------------------------------------------------

def test_intersection_volume_disjoint():
    a = unit_cube(0.01)
    b = unit_cube(0.01, (0.1, 0, 0))
    assert geo.intersection_volume(a, b, 0.005) == 0.0


def test_intersection_volume_identical_cubes():
    a = unit_cube(0.01)   # 1 cm cube = 1 cm^3
    vol = geo.intersection_volume(a, unit_cube(0.01), 0.005)
    assert abs(vol - 1.0) <= 0.75


def test_intersection_volume_half_overlap():
    a = unit_cube(0.01)
    b = unit_cube(0.01, (0.005, 0, 0))
    vol = geo.intersection_volume(a, b, 0.005)
    assert abs(vol - 0.5) <= 0.75


def test_intersection_volume_bounded_by_each():
    a = unit_cube(0.012)
    b = unit_cube(0.012, (0.004, 0.002, 0))
    vs = 0.003
    va = geo.voxelize(a, vs).volume() * geo.CM3
    vb = geo.voxelize(b, vs).volume() * geo.CM3
    assert geo.intersection_volume(a, b, vs) <= min(va, vb) + 1e-12


def test_voxelize_open_mesh_errors():
    with pytest.raises(GeometryError):
        geo.voxelize(Mesh(unit_cube().vertices, unit_cube().faces[:-1]), 0.1)


# -- procrustes ----------------------------------------------------------------

def random_rotation(seed):
    q = np.random.default_rng(seed).normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


def test_procrustes_exact_recovery():
    gt = np.random.default_rng(7).normal(size=(21, 3))
    pred = gt @ random_rotation(8).T + np.array([0.3, -0.1, 2.0])
    aligned = geo.procrustes_align(pred, gt)
    assert np.allclose(aligned, gt, atol=1e-9)


def test_procrustes_scale_invariance():
    gt = np.random.default_rng(9).normal(size=(10, 3))
    aligned = geo.procrustes_align(2.0 * gt, gt)
    assert np.allclose(aligned, gt, atol=1e-9)


def test_procrustes_matches_closed_form_residual():
    rng = np.random.default_rng(10)
    gt = rng.normal(size=(15, 3))
    pred = gt @ random_rotation(11).T + 0.1 * rng.normal(size=(15, 3))
    res = ((geo.procrustes_align(pred, gt) - gt) ** 2).sum()
    # oracle: residual must be invariant to pre-applied similarity transforms
    pre = 1.7 * pred @ random_rotation(12).T + np.array([5.0, 0.0, -2.0])
    res2 = ((geo.procrustes_align(pre, gt) - gt) ** 2).sum()
    assert res == pytest.approx(res2, abs=1e-9)


def test_procrustes_degenerate_errors():
    with pytest.raises(GeometryError):
        geo.procrustes_align(np.zeros((5, 3)), np.random.default_rng(0).normal(size=(5, 3)))


# -- pose metrics --------------------------------------------------------------

def test_pose_metrics_perfect():
    gt = np.random.default_rng(13).normal(size=(21, 3)) * 0.1
    m = geo.pose_metrics(gt, gt, [5, 10, 20])
    assert m["mean_epe_mm"] == 0.0
    assert (m["pck"] == 1.0).all()
    assert m["f_score"][5.0] == 1.0


def test_pose_metrics_step():
    gt = np.zeros((21, 3))
    pred = gt + np.array([0.010, 0, 0])  # exactly 10 mm off
    m = geo.pose_metrics(pred, gt, [5, 20])
    assert m["pck"][0] == 0.0
    assert m["pck"][1] == 1.0


def test_pose_metrics_mixed():
    gt = np.zeros((2, 3))
    pred = np.array([[0, 0, 0], [0.030, 0, 0]])
    m = geo.pose_metrics(pred, gt, [20])
    assert m["pck"][0] == 0.5


def test_pck_monotone_auc_bounded():
    rng = np.random.default_rng(14)
    gt = rng.normal(size=(21, 3)) * 0.05
    pred = gt + rng.normal(size=(21, 3)) * 0.01
    m = geo.pose_metrics(pred, gt, np.linspace(0, 50, 26))
    assert (np.diff(m["pck"]) >= 0).all()
    assert 0.0 <= m["auc"] <= 1.0


def test_pose_metrics_empty_thresholds():
    with pytest.raises(GeometryError):
        geo.pose_metrics(np.zeros((3, 3)), np.zeros((3, 3)), [])
