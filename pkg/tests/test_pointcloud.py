import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import grid_cloud
from roadhazard.pointcloud import (
    CloudFormatError,
    DegenerateFaceError,
    LabeledCloud,
    PointCloud,
    brute_force_neighbors,
    build_neighbor_graph,
    downsample,
    face_normal,
    load_cloud,
    save_cloud,
    estimate_point_normals,
)


def test_load_three_line_xyz(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0\n1 0 0\n0 1 0\n")
    cloud = load_cloud(p)
    assert isinstance(cloud, PointCloud) and cloud.m == 3


def test_parse_error_reports_line(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("0 0 0\na b c\n")
    with pytest.raises(CloudFormatError) as exc:
        load_cloud(p)
    assert exc.value.line == 2
    assert "line 2" in str(exc.value)


def test_empty_file_is_error(tmp_path):
    p = tmp_path / "c.xyz"
    p.write_text("")
    with pytest.raises(CloudFormatError):
        load_cloud(p)


def test_labeled_and_ply(tmp_path):
    p = tmp_path / "l.xyz"
    p.write_text("0 0 0 1\n1 0 0 0\n")
    lc = load_cloud(p, "labeled-xyz")
    assert isinstance(lc, LabeledCloud) and lc.labels.tolist() == [1, 0]
    p.write_text("0 0 0 2\n")
    with pytest.raises(CloudFormatError):
        load_cloud(p, "labeled-xyz")
    ply = tmp_path / "c.ply"
    ply.write_text("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                   "property float z\nproperty float intensity\nend_header\n1 2 3 9\n4 5 6 9\n")
    assert load_cloud(ply, "ply-ascii").vertices.tolist() == [[1, 2, 3], [4, 5, 6]]


@pytest.mark.parametrize("fmt", ["xyz-ascii", "ply-ascii"])
def test_round_trip_nine_digits(tmp_path, fmt):
    rng = np.random.default_rng(0)
    verts = np.array([[float(f"{x:.9g}") for x in row] for row in rng.normal(size=(50, 3)) * 100])
    path = tmp_path / "c.txt"
    save_cloud(PointCloud(verts), path, fmt)
    assert np.array_equal(load_cloud(path, fmt).vertices, verts)


def test_two_points_k1():
    g = build_neighbor_graph(PointCloud([[0, 0, 0], [1, 0, 0]]), 1)
    assert g.indices.tolist() == [[1], [0]]


def test_k_equal_m_is_error():
    with pytest.raises(ValueError):
        build_neighbor_graph(PointCloud(np.zeros((3, 3)) + np.arange(3)[:, None]), 3)


def test_knn_matches_brute_force_random():
    verts = np.random.default_rng(1).uniform(size=(500, 3))
    g = build_neighbor_graph(PointCloud(verts), 8)
    assert np.array_equal(g.indices, brute_force_neighbors(verts, 8))


def test_knn_ties_on_grid_use_lower_index():
    cloud = grid_cloud(n=15)
    g = build_neighbor_graph(cloud, 12)
    assert np.array_equal(g.indices, brute_force_neighbors(cloud.vertices, 12))


@given(st.integers(0, 10_000), st.integers(5, 60), st.integers(1, 4))
def test_knn_exact_property(seed, m, k):
    rng = np.random.default_rng(seed)
    # integer coordinates produce many exact ties
    verts = rng.integers(0, 4, size=(m, 3)).astype(float)
    g = build_neighbor_graph(PointCloud(verts), k)
    assert np.array_equal(g.indices, brute_force_neighbors(verts, k))
    assert np.all(np.diff(g.distances, axis=1) >= 0)
    assert not np.any(g.indices == np.arange(m)[:, None])


def test_face_normal_right_hand_rule():
    assert np.allclose(face_normal((0, 0, 0), (1, 0, 0), (0, 1, 0)), (0, 0, 1))
    with pytest.raises(DegenerateFaceError):
        face_normal((0, 0, 0), (1, 1, 1), (2, 2, 2))


def test_face_normal_random_matches_cross_product():
    rng = np.random.default_rng(2)
    for _ in range(100):
        a, b, c = rng.normal(size=(3, 3))
        ref = np.cross(b - a, c - a)
        assert np.allclose(face_normal(a, b, c), ref / np.linalg.norm(ref), atol=1e-12)


def test_planar_normals_point_up():
    cloud = grid_cloud()
    n = estimate_point_normals(cloud, build_neighbor_graph(cloud, 8)).normals
    assert np.allclose(n, [0, 0, 1], atol=1e-6)


def test_sphere_normals_face_interior_sensor():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(800, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    cloud = PointCloud(v, sensor_origin=(0, 0, 0))
    n = estimate_point_normals(cloud, build_neighbor_graph(cloud, 10)).normals
    assert np.all(np.einsum("ij,ij->i", n, -v) > 0.9)


def test_saddle_normals_match_gradient():
    xs = np.linspace(-0.5, 0.5, 41)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    v = np.column_stack([gx.ravel(), gy.ravel(), (gx ** 2 - gy ** 2).ravel()])
    cloud = PointCloud(v, sensor_origin=(0, 0, 10))
    n = estimate_point_normals(cloud, build_neighbor_graph(cloud, 8)).normals
    ref = np.column_stack([-2 * v[:, 0], 2 * v[:, 1], np.ones(len(v))])
    ref /= np.linalg.norm(ref, axis=1, keepdims=True)
    interior = (np.abs(v[:, 0]) < 0.4) & (np.abs(v[:, 1]) < 0.4)
    angle = np.arccos(np.clip(np.einsum("ij,ij->i", n, ref), -1, 1))
    assert angle[interior].max() < 0.05


@given(st.integers(0, 10_000))
def test_normals_unit_and_oriented(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-1, 1, size=(80, 3)) * [1, 1, 0.2]
    origin = rng.uniform(-3, 3, size=3)
    cloud = PointCloud(v, sensor_origin=origin)
    n = estimate_point_normals(cloud, build_neighbor_graph(cloud, 6)).normals
    assert np.all(np.abs(np.linalg.norm(n, axis=1) - 1) <= 1e-9)
    assert np.all(np.einsum("ij,ij->i", n, origin - v) >= 0)


def test_downsample_rules():
    cloud = PointCloud(np.random.default_rng(4).normal(size=(10_000, 3)))
    assert downsample(cloud, 1.0) is cloud
    a = downsample(cloud, 0.05, seed=7)
    b = downsample(cloud, 0.05, seed=7)
    assert a.m == 500 and np.array_equal(a.vertices, b.vertices)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            downsample(cloud, bad)


def test_downsample_carries_labels():
    verts = np.arange(300, dtype=float).reshape(100, 3)
    labels = (np.arange(100) % 2).astype(np.int8)
    sub = downsample(LabeledCloud(PointCloud(verts), labels), 0.3, seed=1)
    assert sub.cloud.m == 30
    assert np.array_equal(sub.labels, (sub.vertices[:, 0] / 3 % 2).astype(np.int8))
