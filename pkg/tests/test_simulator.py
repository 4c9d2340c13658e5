import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rgbdtrack.geometry import INVALID, kinect_camera, look_at
from rgbdtrack.simulator import (
    MAX_DEPTH,
    MIN_DEPTH,
    CameraSimulator,
    GroundTruthLog,
    Scene,
    SensorProfile,
    SubcircularTrajectory,
    WaypointTrajectory,
    depth_to_disparity,
    disparity_to_depth,
    level_depth,
    level_gap,
    quantize_depth,
    synthesize_frame,
    trajectory_from_dict,
)

PROFILE = SensorProfile()


def _camera():
    return kinect_camera(look_at((2.6, 0.0, 2.4), (0.0, 0.0, 0.2)))


def _static_scene(**kw):
    return Scene(WaypointTrajectory(((0.0, 0.3, 0.2), (1.0, 0.3, 0.2 + 1e-9))), **kw)


def test_zero_disparity_is_invalid():
    assert disparity_to_depth(PROFILE.doff, PROFILE) == INVALID
    assert disparity_to_depth(PROFILE.doff + 5, PROFILE) == INVALID


def test_unit_disparity():
    assert disparity_to_depth(PROFILE.doff - 8, PROFILE) == pytest.approx(PROFILE.baseline * PROFILE.ir_focal)


@given(st.floats(MIN_DEPTH, MAX_DEPTH))
def test_depth_disparity_round_trip_within_one_step(z):
    kd = np.round(depth_to_disparity(z, PROFILE))
    back = disparity_to_depth(kd, PROFILE)
    assert abs(back - z) <= level_gap(z, PROFILE)


def test_quantize_level_unchanged():
    z = level_depth(1000, PROFILE.doff, PROFILE.bf)
    assert quantize_depth(z, PROFILE) == pytest.approx(z, rel=1e-15)


def test_quantize_midpoint_goes_to_closer_depth():
    kd = 1000
    near, far = level_depth(kd, PROFILE.doff, PROFILE.bf), level_depth(kd + 1, PROFILE.doff, PROFILE.bf)
    # the depth whose continuous disparity is exactly kd + 0.5
    mid = PROFILE.bf / ((PROFILE.doff - (kd + 0.5)) / 8.0)
    assert near < mid < far
    assert quantize_depth(mid, PROFILE) == pytest.approx(near, rel=1e-12)


def test_level_gap_grows_with_depth():
    assert level_gap(4.0, PROFILE) > level_gap(1.0, PROFILE)
    # gap ~ z^2 / (8 b f) for 1/8-pixel disparity steps
    assert level_gap(3.0, PROFILE) == pytest.approx(9.0 / (8 * PROFILE.bf), rel=0.02)


@given(st.floats(MIN_DEPTH, MAX_DEPTH), st.floats(MIN_DEPTH, MAX_DEPTH))
def test_level_gap_monotone(a, b):
    a, b = sorted((a, b))
    assert level_gap(a, PROFILE) <= level_gap(b, PROFILE) + 1e-15


def test_quantize_rejects_nonpositive():
    with pytest.raises(ValueError):
        quantize_depth(0.0, PROFILE)


def test_static_noiseless_frames_identical():
    scene, cam = _static_scene(), _camera()
    sim = CameraSimulator(scene, cam, PROFILE)
    d0, c0, _ = sim.synthesize(0)
    for t in (1, 5, 17):
        d, c, _ = sim.synthesize(t)
        np.testing.assert_array_equal(d.data, d0.data)
        np.testing.assert_array_equal(c.data, c0.data)


def test_full_dropout_all_invalid():
    prof = SensorProfile(dropout_rate=1.0)
    depth, _, _ = synthesize_frame(_static_scene(), _camera(), prof, 0)
    assert np.all(depth.data == INVALID)


def test_depth_inside_valid_range():
    prof = SensorProfile(noise_b=0.01, offset_poly=(0, 0, 0.02), dropout_rate=0.05, seed=3)
    depth, _, _ = synthesize_frame(_static_scene(), _camera(), prof, 4)
    v = depth.data[depth.data != INVALID]
    assert v.size > 0 and v.min() >= MIN_DEPTH and v.max() <= MAX_DEPTH


def test_marker_discs_at_projected_positions():
    scene, cam = Scene(SubcircularTrajectory()), _camera()
    sim = CameraSimulator(scene, cam, PROFILE)
    world_to_rgb = cam.ir_to_rgb.compose(cam.camera_to_world.inverse())
    for t in (0, 40, 90):
        _, color, truth = sim.synthesize(t)
        for m, disc, col in zip(truth[3], sim.marker_discs(t), sim._fg):
            p = world_to_rgb.apply(m)
            u = p[0] * cam.rgb.fx / p[2] + cam.rgb.cx
            v = p[1] * cam.rgb.fy / p[2] + cam.rgb.cy
            assert abs(disc[0] - u) < 0.5 and abs(disc[1] - v) < 0.5
            # the painted disc is centred on the projection
            ys, xs = np.nonzero(np.all(color.data == col, axis=-1))
            near = (xs - u) ** 2 + (ys - v) ** 2 <= disc[2] ** 2 + 1
            assert abs(xs[near].mean() - u) < 0.5 and abs(ys[near].mean() - v) < 0.5


def test_noiseless_depth_error_within_half_gap():
    from rgbdtrack.simulator import pixel_rays

    scene, cam = _static_scene(), _camera()
    depth, _, _ = synthesize_frame(scene, cam, PROFILE, 0)
    rays = pixel_rays(cam)
    origin = cam.camera_to_world.translation
    pos, _ = scene.robot_pose(0)
    # rays are scaled to unit optical depth, so the hit parameter is the depth
    z_floor = -origin[2] / rays[..., 2]
    z_plate = (pos[2] - origin[2]) / rays[..., 2]
    hit = origin[:2] + z_plate[..., None] * rays[..., :2]
    on_plate = np.hypot(*(hit - pos[:2]).transpose(2, 0, 1)) <= scene.plate_radius
    z_true = np.where(on_plate, z_plate, z_floor)
    ok = (depth.data > 0) & (rays[..., 2] < 0)
    err = depth.data[ok] - z_true[ok]
    half = 0.5 * level_gap(z_true[ok], PROFILE)
    assert ok.sum() > 1000
    assert np.all(np.abs(err) <= half + 1e-9)
    assert abs(err.mean()) <= half.mean()


def test_determinism():
    prof = SensorProfile(noise_b=0.004, dropout_rate=0.02, seed=9)
    scene, cam = Scene(SubcircularTrajectory()), _camera()
    a = synthesize_frame(scene, cam, prof, 12)
    b = synthesize_frame(scene, cam, prof, 12)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def test_noise_makes_most_pixels_fluctuate():
    scene, cam = _static_scene(), _camera()
    # sigma of at least one level gap at the farthest in-range depth
    prof = SensorProfile(noise_b=level_gap(MAX_DEPTH, PROFILE) / MAX_DEPTH**2, seed=1)
    sim = CameraSimulator(scene, cam, prof)
    frames = np.array([sim.depth(t).data for t in range(8)])
    valid = np.all(frames > 0, axis=0)
    fluct = np.any(frames != frames[:1], axis=0) & valid
    assert fluct.sum() / valid.sum() > 0.5


def test_negative_frame_rejected():
    with pytest.raises(ValueError):
        CameraSimulator(_static_scene(), _camera(), PROFILE).synthesize(-1)


def test_scene_validation():
    with pytest.raises(ValueError):
        Scene(SubcircularTrajectory(), marker_layout=((0, 0, 0), (1, 0, 0), (2, 0, 0)))
    with pytest.raises(ValueError):
        Scene(SubcircularTrajectory(), marker_color=(212.0, 0.25, 0.55))


def test_profile_validation():
    with pytest.raises(ValueError):
        SensorProfile(dropout_rate=1.5)
    with pytest.raises(ValueError):
        SensorProfile(baseline=0)


def test_robot_outside_view_still_produces_frame():
    scene = Scene(WaypointTrajectory(((0.0, -1.9, -1.9), (1.0, -1.9, -1.8))))
    cam = kinect_camera(look_at((2.6, 0.0, 2.4), (2.6, 2.0, 2.0)))
    depth, color, truth = synthesize_frame(scene, cam, PROFILE, 0)
    assert depth.data.shape == (480, 640) and color.data.shape == (480, 640, 3)


def test_ground_truth_csv_round_trip(tmp_path):
    scene = Scene(SubcircularTrajectory())
    log = GroundTruthLog()
    for k in range(5):
        pos, yaw = scene.robot_pose(k)
        log.append(k, pos, yaw, scene.marker_positions(k))
    log.to_csv(tmp_path / "gt.csv")
    back = GroundTruthLog.from_csv(tmp_path / "gt.csv")
    np.testing.assert_array_equal(back.positions, log.positions)
    np.testing.assert_array_equal(np.array(back.markers), np.array(log.markers))


def test_trajectory_dict_round_trip():
    t = SubcircularTrajectory(radius=0.9, period=25.0)
    back = trajectory_from_dict(t.to_dict())
    assert back == t
    with pytest.raises(ValueError):
        trajectory_from_dict({"type": "spiral"})


def test_subcircular_heading_follows_velocity():
    t = SubcircularTrajectory()
    p0, yaw = t.pose(3.0)
    p1, _ = t.pose(3.0 + 1e-6)
    assert np.arctan2(p1[1] - p0[1], p1[0] - p0[0]) == pytest.approx(yaw, abs=1e-5)
