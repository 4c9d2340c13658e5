"""End-to-end scenario runner, RMS evaluation and throughput benchmark."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import CameraConfig, CorrectionConfig, FilterConfig, FusionConfig, ScenarioConfig
from .correction import (
    CorrectionModel,
    apply_correction,
    calibration_samples,
    filter_unreliable,
    fit_correction,
)
from .fusion import MODES, CameraOutput, fuse_frame, to_world
from .geometry import CameraModel, kinect_camera, look_at, register_frame
from .markers import observe_markers, compute_pose
from .parallel import get_threads, physical_cores, set_threads
from .pixel_kalman import DepthNoiseModel, PixelKalmanGrid, filter_frame
from .simulator import CameraSimulator, GroundTruthLog, Scene, SensorProfile, trajectory_from_dict
from .tracker import MarkerTracker, default_robust_params, make_motion_model

FILTERS = ("raw", "kf", "rf")
REFERENCE_FPS = 25.0


# -- RMS -------------------------------------------------------------------


@dataclass(frozen=True)
class RmsResult:
    per_axis: tuple[float, float, float]
    overall: float
    n_used: int
    n_excluded: int

    def to_dict(self) -> dict:
        x, y, z = self.per_axis
        return {"x": x, "y": y, "z": z, "overall": self.overall, "n_used": self.n_used, "n_excluded": self.n_excluded}


def compute_rms(trajectory, truth) -> RmsResult:
    """Per-axis and overall RMS; rows of ``trajectory`` containing NaN are excluded and counted."""
    est = np.asarray(trajectory, dtype=float).reshape(-1, 3)
    ref = truth.positions if isinstance(truth, GroundTruthLog) else np.asarray(truth, dtype=float).reshape(-1, 3)
    if len(est) != len(ref):
        raise ValueError(f"trajectory has {len(est)} frames but truth has {len(ref)}")
    ok = np.all(np.isfinite(est), axis=1)
    if not ok.any():
        raise ValueError("no frame has an estimate")
    mse = np.mean((est[ok] - ref[ok]) ** 2, axis=0)
    return RmsResult(tuple(float(v) for v in np.sqrt(mse)), float(np.sqrt(mse.sum())), int(ok.sum()), int((~ok).sum()))


# -- scenario construction --------------------------------------------------


def ring_cameras(n: int = 5, radius: float = 2.6, height: float = 2.4, target=(0.0, 0.0, 0.2), profiles=None):
    """``n`` cameras evenly spaced on a circle, all aimed at ``target``."""
    cams = []
    for i in range(n):
        a = 2 * np.pi * i / n
        prof = profiles[i] if profiles is not None else SensorProfile()
        cams.append(CameraConfig((radius * np.cos(a), radius * np.sin(a), height), tuple(target), prof))
    return tuple(cams)


def standard_profiles() -> tuple[SensorProfile, ...]:
    """Mix of healthy and drifty sensors; the drifty devices are also the noisier ones."""
    common = dict(noise_a=0.001, noise_block=32, noise_correlation=0.9)
    return (
        SensorProfile(noise_b=0.0030, offset_poly=(0.0, 0.0, 0.002), **common),
        SensorProfile(noise_b=0.0040, offset_poly=(0.0, 0.0, 0.011), **common),
        SensorProfile(noise_b=0.0035, offset_poly=(0.0, 0.003, 0.001), **common),
        SensorProfile(noise_b=0.0045, offset_poly=(-0.005, 0.0, 0.009), **common),
        SensorProfile(noise_b=0.0030, offset_poly=(0.0, 0.0, 0.003), **common),
    )


def standard_config(frames: int = 600, seed: int = 2013, **kw) -> ScenarioConfig:
    """Five cameras around a robot on a subcircular loop.

    The nominal measurement noise ``r_pos`` is deliberately optimistic; the
    robust filter's ``m2`` term accounts for the mismatch.
    """
    defaults = dict(
        cameras=ring_cameras(profiles=standard_profiles()),
        trajectory={
            "type": "subcircular", "radius": 0.95, "radius_wobble": 0.1, "period": 30.0, "speed_wobble": 0.1,
        },
        frames=frames,
        seed=seed,
        filter=FilterConfig(q_accel=0.2, r_pos=0.0015, m1=0.3, m2=0.008),
        correction=CorrectionConfig(samples=20000),
        fusion=FusionConfig(),
    )  # fmt: skip
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def build_scene(config: ScenarioConfig) -> Scene:
    extra = {k: tuple(v) if isinstance(v, list) else v for k, v in config.scene.items()}
    if "marker_layout" in extra:
        extra["marker_layout"] = tuple(tuple(m) for m in extra["marker_layout"])
    return Scene(trajectory_from_dict(config.trajectory), dt=config.dt, **extra)


def build_camera(c: CameraConfig) -> CameraModel:
    return kinect_camera(look_at(c.position, c.target))


def camera_profile(config: ScenarioConfig, i: int) -> SensorProfile:
    # every camera gets its own noise stream derived from the scenario seed
    return replace(config.cameras[i].profile, seed=config.seed * 1000 + i)


def build_correction(config: ScenarioConfig, profile: SensorProfile) -> CorrectionModel:
    samples = calibration_samples(profile, config.correction.samples)
    if config.correction.enabled:
        return fit_correction(samples, profile.doff, profile.bf, config.correction.degree)
    ident = CorrectionModel.identity(profile)
    resid = samples[:, 0] - samples[:, 1]
    return replace(ident, residual_rms=float(np.sqrt(np.mean(resid**2))))


# -- running ----------------------------------------------------------------


@dataclass
class CameraTrack:
    """Per-camera outputs in the camera frame: raw and filtered marker positions."""

    camera_id: int
    raw: np.ndarray  # (frames, 3, 3)
    filtered: dict  # kind -> (positions (frames, 3, 3), covariances (frames, 3, 3, 3), predicted (frames, 3))
    residual_rms: float


@dataclass
class RunResult:
    config: ScenarioConfig
    truth: GroundTruthLog
    cameras: list
    world: list  # CameraModel per camera
    poses: dict  # (camera_id, filter) -> (positions (frames, 3), yaws (frames,), trace_P (frames,))
    fused: dict  # mode -> (positions, yaws, trace_P, weights (frames, n_cams))
    report: dict = field(default_factory=dict)


def _process_camera(config, i, scene, threads):
    c = config.cameras[i]
    cam = build_camera(c)
    profile = camera_profile(config, i)
    model = build_correction(config, profile)
    sim = CameraSimulator(scene, cam, profile, threads)
    grid = PixelKalmanGrid.fresh(cam.height, cam.width)
    pf = config.pixel_filter
    noise = DepthNoiseModel(profile.bf, pf.measurement_scale, pf.process_scale)
    up = cam.camera_to_world.rotation.T @ np.array([0.0, 0.0, 1.0])
    seg = config.segmentation
    hidden = [(o.start, o.end) for o in config.occlusions if o.camera == i]
    raw = np.full((config.frames, 3, 3), np.nan)
    for k in range(config.frames):
        occluded = any(s <= k < e for s, e in hidden)
        depth, color, _ = sim.synthesize(k, occluded)
        depth = apply_correction(filter_unreliable(depth, model.valid_range), model, threads)
        if pf.enabled:
            grid, depth = filter_frame(grid, depth, noise, pf.P0, pf.reset_after, threads)
        cloud = register_frame(depth, color, cam, threads)
        obs = observe_markers(cloud, seg.rear, seg.front, up, seg.kernel_radius, seg.min_area)
        if obs.complete:
            raw[k] = obs.array()
    return cam, model, raw


def _track_camera(config, raw):
    fc = config.filter
    motion = make_motion_model(config.dt, fc.q_accel, fc.r_pos)
    params = default_robust_params(
        motion, fc.theta, fc.alpha, fc.m1, fc.m2, fc.n_scale, fc.s1, fc.s2, fc.epsilon, fc.form
    )
    out = {}
    n = len(raw)
    for kind in ("kf", "rf"):
        pos = np.full((n, 3, 3), np.nan)
        cov = np.full((n, 3, 3, 3), np.nan)
        pred = np.zeros((n, 3), dtype=bool)
        for j in range(3):
            tr = MarkerTracker(motion, params, kind)
            for k in range(n):
                est = tr.step(raw[k, j])
                if est is None:
                    continue
                pos[k, j] = est.x[:3]
                cov[k, j] = est.P[:3, :3]
                pred[k, j] = est.predicted_only
        out[kind] = (pos, cov, pred)
    # raw measurements are scored with the nominal measurement covariance
    rcov = np.where(np.isfinite(raw[..., None]), motion.R, np.nan)
    out["raw"] = (raw, rcov, np.zeros((n, 3), dtype=bool))
    return out


def _poses(markers_world: np.ndarray):
    n = len(markers_world)
    pos = np.full((n, 3), np.nan)
    yaw = np.full(n, np.nan)
    for k in range(n):
        m = markers_world[k]
        if not np.all(np.isfinite(m)):
            continue
        p = compute_pose(tuple(m))
        if p is not None:
            pos[k], yaw[k] = p.position, p.yaw
    return pos, yaw


@dataclass
class Observations:
    """Output of the image stages: ground truth plus raw camera-frame marker positions."""

    truth: GroundTruthLog
    cameras: list  # CameraModel
    residual_rms: list  # per camera, from the correction fit
    raw: list  # per camera (frames, 3, 3), NaN where the markers were not all found
    seconds: float


def observe_scenario(config: ScenarioConfig) -> Observations:
    """Simulate every camera and run correction, pixel filtering, registration and extraction."""
    t_start = time.perf_counter()
    scene = build_scene(config)
    truth = GroundTruthLog()
    for k in range(config.frames):
        pos, yaw = scene.robot_pose(k)
        markers = scene.marker_positions(k)
        truth.append(k, markers.mean(axis=0), yaw, markers)
    cams, resid, raws = [], [], []
    for i in range(len(config.cameras)):
        cam, model, raw = _process_camera(config, i, scene, config.threads)
        cams.append(cam)
        resid.append(model.residual_rms)
        raws.append(raw)
    return Observations(truth, cams, resid, raws, time.perf_counter() - t_start)


def run_scenario(config: ScenarioConfig, out_dir=None, observations: Observations | None = None) -> RunResult:
    """Full run: image stages (unless ``observations`` are supplied), tracking, fusion and scoring.

    Supplying observations from :func:`observe_scenario` on the same image
    settings lets filter and fusion parameters be varied without re-simulating.
    """
    t_start = time.perf_counter()
    obs = observations if observations is not None else observe_scenario(config)
    if len(obs.raw) != len(config.cameras) or len(obs.truth) != config.frames:
        raise ValueError("observations do not match the configuration")
    tracks = [
        CameraTrack(i, raw, _track_camera(config, raw), rr)
        for i, (raw, rr) in enumerate(zip(obs.raw, obs.residual_rms))
    ]
    cams = obs.cameras
    poses = {}
    for tr, cam in zip(tracks, cams):
        e = cam.camera_to_world
        for kind in FILTERS:
            pos, cov, _ = tr.filtered[kind]
            p, y = _poses(e.apply(pos))
            trace = np.trace(np.mean(cov, axis=1), axis1=1, axis2=2)
            poses[(tr.camera_id, kind)] = (p, y, trace)

    fused = {m: _fuse_all(config, tracks, cams, poses, m) for m in MODES}
    result = RunResult(config, obs.truth, tracks, cams, poses, fused)
    elapsed = time.perf_counter() - t_start + (obs.seconds if observations is not None else 0.0)
    result.report = make_report(result, fps=config.frames / elapsed)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _fuse_all(config, tracks, cams, poses, mode):
    kind = config.fusion.filter
    n = config.frames
    ids = [t.camera_id for t in tracks]
    pos = np.full((n, 3), np.nan)
    yaw = np.full(n, np.nan)
    trace = np.full(n, np.nan)
    weights = np.full((n, len(tracks)), np.nan)
    for k in range(n):
        outputs = []
        for tr, cam in zip(tracks, cams):
            p, c, pred = tr.filtered[kind]
            if not np.all(np.isfinite(p[k])):
                continue
            K = tr.residual_rms**2 * np.eye(3)
            ests = tuple(to_world(p[k, j], c[k, j], cam, tr.camera_id, K, bool(pred[k, j])) for j in range(3))
            y = poses[(tr.camera_id, kind)][1][k]
            outputs.append(CameraOutput(tr.camera_id, ests, None if np.isnan(y) else float(y)))
        f = fuse_frame(outputs, mode, config.fusion.kappa, config.fusion.raw_distance)
        if f is None:
            continue
        pos[k] = f.position
        yaw[k] = np.nan if f.yaw is None else f.yaw
        trace[k] = np.trace(f.P)
        for cid, w in zip(f.camera_ids, f.weights):
            weights[k, ids.index(cid)] = w
    return pos, yaw, trace, weights


# -- reporting --------------------------------------------------------------


def make_report(result: RunResult, fps: float | None = None) -> dict:
    cfg = result.config
    cams = []
    for tr in result.cameras:
        entry = {"camera": tr.camera_id, "residual_rms": tr.residual_rms}
        for kind in FILTERS:
            entry[kind] = compute_rms(result.poses[(tr.camera_id, kind)][0], result.truth).to_dict()
        cams.append(entry)
    fused = {m: compute_rms(result.fused[m][0], result.truth).to_dict() for m in MODES}
    return {
        "seed": cfg.seed,
        "frames": cfg.frames,
        "fusion_filter": cfg.fusion.filter,
        "fusion_mode": cfg.fusion.mode,
        "cameras": cams,
        "fused": fused,
        "overall": fused[cfg.fusion.mode],
        "fps": fps,
        "config": cfg.to_dict(),
    }


TRAJ_HEADER = ["frame", "source", "filter", "x", "y", "z", "yaw", "trace_P"]


def _fmt(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def write_outputs(result: RunResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.truth.to_csv(out / "groundtruth.csv")
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_HEADER)
        for (cid, kind), (p, y, t) in result.poses.items():
            for k in range(len(p)):
                w.writerow([k, f"camera{cid}", kind, *(_fmt(v) for v in p[k]), _fmt(y[k]), _fmt(t[k])])
        for mode, (p, y, t, _) in result.fused.items():
            for k in range(len(p)):
                w.writerow([k, "fused", mode, *(_fmt(v) for v in p[k]), _fmt(y[k]), _fmt(t[k])])
    mode = result.config.fusion.mode
    p, y, t, wts = result.fused[mode]
    with open(out / "fused.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "x", "y", "z", "yaw", "trace_P"] + [f"w_camera{c.camera_id}" for c in result.cameras])
        for k in range(len(p)):
            w.writerow([k, *(_fmt(v) for v in p[k]), _fmt(y[k]), _fmt(t[k]), *(_fmt(v) for v in wts[k])])
    report = {k: v for k, v in result.report.items() if k != "fps"}
    # wall-clock speed varies between runs; kept apart so the report is reproducible
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    (out / "timing.json").write_text(json.dumps({"fps": result.report.get("fps")}, indent=2) + "\n")


def load_trajectories(path) -> dict:
    """Read ``trajectories.csv`` back into ``(source, filter) -> (frames, 3)`` arrays."""
    rows: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            key = (r["source"], r["filter"])
            vals = [float(r[a]) if r[a] else np.nan for a in "xyz"]
            rows.setdefault(key, []).append((int(r["frame"]), vals))
    return {k: np.array([v for _, v in sorted(rows[k])]) for k in rows}


# -- benchmark -------------------------------------------------------------


def _per_pixel_stages(frames, cams, models, grids, noise, threads):
    for (depth, color), cam, model, grid in zip(frames, cams, models, grids):
        d = apply_correction(filter_unreliable(depth, model.valid_range), model, threads)
        _, d = filter_frame(grid, d, noise, threads=threads)
        register_frame(d, color, cam, threads)


def benchmark(config: ScenarioConfig, thread_counts=(1,), runs: int = 5, frames_per_run: int = 10) -> dict:
    """Frames per second of the per-pixel stages for all cameras, median over ``runs``.

    One frame means one synchronised set: every camera's depth and colour
    image goes through correction, pixel filtering and registration.
    """
    if runs < 1 or frames_per_run < 1:
        raise ValueError("runs and frames_per_run must be >= 1")
    scene = build_scene(config)
    cams, models, sims = [], [], []
    for i, c in enumerate(config.cameras):
        cam = build_camera(c)
        prof = camera_profile(config, i)
        cams.append(cam)
        models.append(build_correction(config, prof))
        sims.append(CameraSimulator(scene, cam, prof))
    data = [[s.synthesize(k)[:2] for s in sims] for k in range(frames_per_run)]
    noise = DepthNoiseModel(process_scale=config.pixel_filter.process_scale)
    rows = []
    previous = get_threads()
    for n in thread_counts:
        set_threads(n)
        grids = [PixelKalmanGrid.fresh(c.height, c.width) for c in cams]
        _per_pixel_stages(data[0], cams, models, grids, noise, n)  # warm-up
        fps = []
        for _ in range(runs):
            t0 = time.perf_counter()
            for frame in data:
                _per_pixel_stages(frame, cams, models, grids, noise, n)
            fps.append(frames_per_run / (time.perf_counter() - t0))
        rows.append({"threads": n, "fps": float(np.median(fps)), "runs": fps})
    set_threads(previous)
    base = rows[0]["fps"]
    for r in rows:
        r["speedup"] = r["fps"] / base
    return {
        "cameras": len(cams),
        "resolution": [cams[0].width, cams[0].height],
        "physical_cores": physical_cores(),
        "results": rows,
        "reference_fps": REFERENCE_FPS,
    }


def format_benchmark(table: dict) -> str:
    lines = [f"{table['cameras']} cameras at {table['resolution'][0]}x{table['resolution'][1]}, "
             f"{table['physical_cores']} physical core(s)"]
    lines.append(f"{'threads':>8} {'fps':>10} {'speedup':>8}")
    for r in table["results"]:
        lines.append(f"{r['threads']:>8d} {r['fps']:>10.2f} {r['speedup']:>8.2f}")
    lines.append(f"{'ref':>8} {table['reference_fps']:>10.2f}  (25 fps reference figure)")
    return "\n".join(lines)
