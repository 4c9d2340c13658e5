import colorsys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import flood_fill_blobs
from rgbdtrack.geometry import kinect_camera, look_at, register_frame
from rgbdtrack.markers import (
    HsvFrame,
    HsvRange,
    MarkerObservation,
    compute_pose,
    extract_centroids,
    morph_open,
    observe_markers,
    rgb_to_hsv,
    threshold_mask,
)
from rgbdtrack.simulator import CameraSimulator, Scene, SensorProfile, SubcircularTrajectory

masks = arrays(bool, st.tuples(st.integers(1, 24), st.integers(1, 24)))
hue = st.floats(0, 360)
unit = st.floats(0, 1)


def _hsv_of(rgb):
    return rgb_to_hsv(np.array([[rgb]], dtype=np.uint8))


def test_pure_red():
    f = _hsv_of((255, 0, 0))
    assert (f.h[0, 0], f.s[0, 0], f.v[0, 0]) == (0.0, 1.0, 1.0)


def test_gray_has_zero_saturation():
    f = _hsv_of((128, 128, 128))
    assert f.s[0, 0] == 0.0 and f.v[0, 0] == pytest.approx(128 / 255)


@given(arrays(np.uint8, (4, 5, 3)))
def test_matches_colorsys(rgb):
    f = rgb_to_hsv(rgb)
    for y in range(4):
        for x in range(5):
            h, s, v = colorsys.rgb_to_hsv(*(rgb[y, x] / 255.0))
            assert f.s[y, x] == pytest.approx(s, abs=1e-12)
            assert f.v[y, x] == pytest.approx(v, abs=1e-12)
            if s > 0:
                dh = abs(f.h[y, x] - 360 * h) % 360
                assert min(dh, 360 - dh) < 1e-9


def test_hsv_more_stable_than_rgb_under_illumination_change():
    rng = np.random.default_rng(0)
    surface = rng.uniform(60, 250, (200, 3))
    bright, dim = surface.astype(np.uint8), (0.7 * surface).astype(np.uint8)
    rgb_diff = np.linalg.norm(bright.astype(float) - dim, axis=1).mean()

    def scaled(a):
        f = rgb_to_hsv(a[None])
        return np.stack([f.h[0] / 360, f.s[0], f.v[0]], axis=1) * 255

    hb, hd = scaled(bright), scaled(dim)
    dh = np.abs(hb[:, 0] - hd[:, 0])
    hb[:, 0] = 0
    hd[:, 0] = np.minimum(dh, 255 - dh)
    hsv_diff = np.linalg.norm(hb - hd, axis=1).mean()
    assert hsv_diff < rgb_diff


def test_threshold_full_and_empty():
    f = rgb_to_hsv(np.random.default_rng(1).integers(0, 256, (10, 10, 3), dtype=np.uint8))
    assert threshold_mask(f, HsvRange()).all()
    assert not threshold_mask(f, HsvRange(val=(0.6, 0.4))).any()


def test_hue_wraparound():
    f = HsvFrame(np.array([[5.0, 355.0, 180.0]]), np.ones((1, 3)), np.ones((1, 3)))
    m = threshold_mask(f, HsvRange(hue=(350.0, 10.0)))
    assert m.tolist() == [[True, True, False]]


@given(
    arrays(float, (6, 6), elements=hue.filter(lambda h: h < 360)),
    arrays(float, (6, 6), elements=unit),
    arrays(float, (6, 6), elements=unit),
    st.tuples(hue, hue), st.tuples(unit, unit), st.tuples(unit, unit),
    st.floats(0, 30), st.floats(0, 0.3),
)  # fmt: skip
def test_threshold_monotone_in_range(h, s, v, hr, sr, vr, dh, ds):
    f = HsvFrame(h, s, v)
    small = HsvRange(tuple(sorted(hr)), tuple(sorted(sr)), tuple(sorted(vr)))
    big = HsvRange(
        (max(small.hue[0] - dh, 0.0), min(small.hue[1] + dh, 360.0)),
        (max(small.sat[0] - ds, 0.0), min(small.sat[1] + ds, 1.0)),
        (max(small.val[0] - ds, 0.0), min(small.val[1] + ds, 1.0)),
    )
    assert np.all(threshold_mask(f, big) >= threshold_mask(f, small))


def test_open_removes_speck():
    m = np.zeros((9, 9), bool)
    m[4, 4] = True
    assert not morph_open(m, 1).any()


def test_open_keeps_large_rectangle():
    m = np.zeros((20, 30), bool)
    m[3:12, 5:20] = True
    np.testing.assert_array_equal(morph_open(m, 1), m)


def test_open_border_counts_as_false():
    # a two-row strip along the edge survives only if outside pixels counted as true
    m = np.zeros((10, 10), bool)
    m[:2, :] = True
    assert not morph_open(m, 1).any()
    m[:3, :3] = True
    np.testing.assert_array_equal(np.argwhere(morph_open(m, 1)), np.argwhere(m[:3, :3]))


@given(masks, st.integers(1, 3))
def test_open_idempotent(m, r):
    once = morph_open(m, r)
    np.testing.assert_array_equal(morph_open(once, r), once)


@given(masks, st.integers(1, 3))
def test_open_anti_extensive(m, r):
    assert not np.any(morph_open(m, r) & ~m)


def test_open_rejects_zero_radius():
    with pytest.raises(ValueError):
        morph_open(np.ones((3, 3), bool), 0)


def test_square_centroid_and_area():
    m = np.zeros((21, 21), bool)
    m[8:13, 8:13] = True
    (b,) = extract_centroids(m)
    assert b.centroid == (10.0, 10.0) and b.area == 25


def test_two_blobs_sorted_by_area():
    m = np.zeros((20, 20), bool)
    m[1:3, 1:3] = True
    m[10:15, 10:15] = True
    blobs = extract_centroids(m)
    assert [b.area for b in blobs] == [25, 4]


def test_diagonal_pixels_are_connected():
    m = np.eye(6, dtype=bool)
    assert len(extract_centroids(m)) == 1


def test_min_area_filters():
    m = np.zeros((10, 10), bool)
    m[0, 0] = True
    m[5:8, 5:8] = True
    assert [b.area for b in extract_centroids(m, min_area=9)] == [9]


@given(masks)
def test_centroids_equal_brute_force_means(m):
    expect = flood_fill_blobs(m)
    got = sorted((b.centroid[0], b.centroid[1], b.area) for b in extract_centroids(m))
    assert got == sorted(expect)


@given(masks, st.integers(0, 10), st.integers(0, 10))
def test_centroids_translation_equivariant(m, dx, dy):
    h, w = m.shape
    shifted = np.zeros((h + dy, w + dx), bool)
    shifted[dy:, dx:] = m
    a = sorted((b.area, b.centroid[0] + dx, b.centroid[1] + dy) for b in extract_centroids(m))
    b = sorted((c.area, c.centroid[0], c.centroid[1]) for c in extract_centroids(shifted))
    assert [x[0] for x in a] == [x[0] for x in b]
    np.testing.assert_allclose(np.array(a).reshape(-1, 3), np.array(b).reshape(-1, 3), rtol=0, atol=1e-12)


def test_pose_of_equilateral_triangle():
    a = np.array([[1.0, 0, 0], [-0.5, np.sqrt(3) / 2, 0], [-0.5, -np.sqrt(3) / 2, 0]]) + [2, 3, 0.3]
    pose = compute_pose(a)
    np.testing.assert_allclose(pose.position, [2, 3, 0.3], atol=1e-15)
    assert pose.yaw == pytest.approx(0.0, abs=1e-15)


def test_pose_missing_marker():
    assert compute_pose(((0, 0, 0), None, (1, 1, 0))) is None
    assert compute_pose(MarkerObservation((None, None, None), (None, None, None))) is None


def test_pose_collinear_is_no_measurement():
    assert compute_pose(((0, 0, 0), (1, 0, 0), (2, 0, 0))) is None


@given(st.tuples(*[st.floats(-3, 3)] * 9))
def test_pose_invariant_to_rear_relabeling(v):
    p = np.array(v).reshape(3, 3)
    a, b = compute_pose(p), compute_pose(p[[0, 2, 1]])
    if a is None:
        assert b is None
    else:
        np.testing.assert_allclose(a.position, b.position, atol=1e-12)
        assert a.yaw == pytest.approx(b.yaw, abs=1e-12)


def test_observe_markers_on_simulated_frame():
    scene = Scene(SubcircularTrajectory())
    cam = kinect_camera(look_at((2.6, 0.0, 2.4), (0.0, 0.0, 0.2)))
    sim = CameraSimulator(scene, cam, SensorProfile())
    depth, color, truth = sim.synthesize(10)
    cloud = register_frame(depth, color, cam)
    up = cam.camera_to_world.rotation.T @ [0, 0, 1]
    rear = HsvRange((40.0, 80.0), (0.5, 1.0), (0.5, 1.0))
    front = HsvRange((280.0, 320.0), (0.5, 1.0), (0.5, 1.0))
    obs = observe_markers(cloud, rear, front, up)
    assert obs.complete
    world = cam.camera_to_world.apply(obs.array())
    # markers sit on the plate; their mean 3D point is within a few cm of the true centre
    np.testing.assert_allclose(world[:, :2], truth[3][:, :2], atol=0.03)
    pose = compute_pose(tuple(world))
    assert abs(np.angle(np.exp(1j * (pose.yaw - truth[2])))) < 0.1


def test_observe_markers_occluded():
    scene = Scene(SubcircularTrajectory())
    cam = kinect_camera(look_at((2.6, 0.0, 2.4), (0.0, 0.0, 0.2)))
    depth, color, _ = CameraSimulator(scene, cam, SensorProfile()).synthesize(10, occluded=True)
    obs = observe_markers(register_frame(depth, color, cam), HsvRange((40, 80)), HsvRange((280, 320)), (0, 0, 1))
    assert not obs.complete and obs.visible == (False, False, False)
    assert np.all(np.isnan(obs.array()))
