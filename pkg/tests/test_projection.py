import numpy as np
import pytest
from hypothesis import given, strategies as st

from roadhazard.projection import (
    EMPTY,
    CameraModel,
    ClassImage,
    fill_gaps,
    parse_palette,
    project,
    project_point,
    render_classes,
    transform_from_camera,
    transform_to_camera,
    write_image,
)

CAM = CameraModel(100, 100, 320, 240, 640, 480)


def test_transform():
    p = np.array([[0.0, 0.0, 3.0]])
    assert np.array_equal(transform_to_camera(p, CAM), p)
    cam = CameraModel(100, 100, 320, 240, 640, 480, (0, 0, 1))
    assert np.array_equal(transform_to_camera(p, cam), [[0, 0, 2]])
    q = np.random.default_rng(0).normal(size=(10, 3))
    cam = CameraModel(1, 1, 0, 0, 1, 1, (0.3, -2.0, 7.1))
    assert np.allclose(transform_from_camera(transform_to_camera(q, cam), cam), q, atol=1e-12)


def test_project_examples():
    assert project_point((0, 0, 5), CAM) == (320, 240)
    assert project_point((1, 1, 2), CAM) == (370, 290)
    assert project_point((0, 0, -1), CAM) is None
    assert project_point((0, 0, 0), CAM) is None
    assert project_point((100, 0, 1), CAM) is None


def test_round_half_up():
    cam = CameraModel(1, 1, 0, 0, 10, 10)
    assert project_point((2.5, 1.5, 1), cam) == (3, 2)


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraModel(0, 1, 0, 0, 10, 10)
    with pytest.raises(ValueError):
        CameraModel(1, 1, 10, 0, 10, 10)


def test_render_rules():
    assert not render_classes(np.zeros((0, 3)), [], CAM).filled().any()
    img = render_classes([[0, 0, 2], [0, 0, 5]], [1, 2], CAM)
    assert img.classes[240, 320] == 1 and img.depth[240, 320] == 2
    img = render_classes([[0, 0, 5], [0, 0, 2]], [2, 1], CAM)
    assert img.classes[240, 320] == 1


@given(st.integers(0, 1000))
def test_render_bounds_and_translation(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, (200, 3))
    cls = rng.integers(0, 5, 200)
    cam = CameraModel(50, 50, 32, 24, 64, 48, (0, 0, -6))
    img = render_classes(pts, cls, cam)
    assert img.filled().sum() <= len(pts)
    assert np.all(np.isfinite(img.depth[img.filled()])) and np.all(img.depth[img.filled()] > 0)
    shift = rng.normal(size=3)
    cam2 = CameraModel(50, 50, 32, 24, 64, 48, tuple(np.array(cam.lidar_to_camera) + shift))
    img2 = render_classes(pts + shift, cls, cam2)
    assert np.array_equal(img.classes, img2.classes)


def seed_image(w=9, h=7, at=(3, 4), cls=2, depth=1.0):
    img = ClassImage.empty(w, h)
    img.classes[at] = cls
    img.depth[at] = depth
    return img


def test_fill_zero_and_plus():
    img = seed_image()
    assert np.array_equal(fill_gaps(img, 0).classes, img.classes)
    one = fill_gaps(img, 1, 4)
    assert one.filled().sum() == 5
    assert all(one.classes[p] == 2 for p in [(3, 4), (2, 4), (4, 4), (3, 3), (3, 5)])
    assert fill_gaps(img, 1, 8).filled().sum() == 9


def test_fill_full_and_ties():
    img = seed_image()
    full = fill_gaps(img, img.width + img.height, 4)
    assert full.filled().all()
    tie = ClassImage.empty(3, 1)
    tie.classes[0, 0], tie.depth[0, 0] = 3, 2.0
    tie.classes[0, 2], tie.depth[0, 2] = 1, 5.0
    out = fill_gaps(tie, 1)
    assert out.classes[0, 1] == 3 and out.depth[0, 1] == 2.0
    tie.depth[0, 2] = 2.0
    assert fill_gaps(tie, 1).classes[0, 1] == 1
    # an orthogonal neighbour beats a nearer-depth diagonal one
    d = ClassImage.empty(2, 2)
    d.classes[0, 1], d.depth[0, 1] = 4, 9.0
    d.classes[1, 0], d.depth[1, 0] = 0, 9.0
    d.classes[0, 0] = EMPTY
    d.classes[1, 1], d.depth[1, 1] = 2, 0.5
    assert fill_gaps(d, 1, 8).classes[0, 0] == 0
    with pytest.raises(ValueError):
        fill_gaps(img, -1)
    with pytest.raises(ValueError):
        fill_gaps(img, 1, 6)


@given(st.integers(0, 1000), st.integers(0, 6), st.sampled_from([4, 8]))
def test_fill_monotone(seed, iters, conn):
    rng = np.random.default_rng(seed)
    img = ClassImage.empty(12, 10)
    mask = rng.random((10, 12)) < 0.05
    img.classes[mask] = rng.integers(0, 5, mask.sum())
    img.depth[mask] = rng.uniform(1, 9, mask.sum())
    a = fill_gaps(img, iters, conn)
    b = fill_gaps(img, iters + 1, conn)
    assert np.array_equal(a.classes[mask], img.classes[mask])
    assert np.all(b.filled() >= a.filled())


def test_write_image(tmp_path):
    empty = ClassImage.empty(3, 2)
    write_image(empty, tmp_path / "e.ppm")
    text = (tmp_path / "e.ppm").read_text()
    assert text.startswith("P3\n3 2\n255\n")
    assert set(text.splitlines()[3:]) == {"0 0 0"}
    img = seed_image(3, 2, (1, 2), 4)
    write_image(img, tmp_path / "b.ppm", binary=True)
    data = (tmp_path / "b.ppm").read_bytes()
    assert data.startswith(b"P6\n3 2\n255\n") and data[-3:] == bytes([255, 0, 0])
    write_image(img, tmp_path / "a.ppm")
    write_image(img, tmp_path / "b2.ppm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b2.ppm").read_bytes()
    with pytest.raises(OSError):
        write_image(img, tmp_path / "missing" / "x.ppm")


def test_palette():
    pal = parse_palette({"class.0": "1,2,3", "background": "9,9,9"})
    assert pal[0] == (1, 2, 3) and pal["background"] == (9, 9, 9) and pal[4] == (255, 0, 0)
    with pytest.raises(ValueError):
        parse_palette({"class.x": "1,2,3"})
    with pytest.raises(ValueError):
        parse_palette({"class.1": "1,2,300"})
    img = seed_image(2, 2, (0, 0), 7)
    with pytest.raises(ValueError):
        write_image(img, "/dev/null")
