"""Depth correction before and after fitting, for each standard profile and a strongly drifty one."""

import argparse

import numpy as np

from rgbdtrack.correction import apply_correction, calibration_samples, fit_correction, sample_readings
from rgbdtrack.geometry import INVALID, DepthFrame
from rgbdtrack.harness import standard_profiles
from rgbdtrack.simulator import SensorProfile


def evaluate(profile, n, degree, rng):
    model = fit_correction(calibration_samples(profile, n), profile.doff, profile.bf, degree)
    s = sample_readings(profile, rng.uniform(0.8, 4.5, n), rng)
    corrected = apply_correction(DepthFrame(s[None, :, 0], 0), model).data[0]
    kept = corrected != INVALID
    pre = np.sqrt(np.mean((s[:, 0] - s[:, 1]) ** 2))
    post = np.sqrt(np.mean((corrected[kept] - s[kept, 1]) ** 2))
    return pre, post


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--degree", type=int, default=8)
    args = p.parse_args()

    rng = np.random.default_rng(0)
    profiles = list(standard_profiles())
    profiles.append(SensorProfile(noise_a=0.001, noise_b=0.004, offset_poly=(0.0, 0.0, 0.011), seed=7))
    names = [f"camera{i}" for i in range(len(profiles) - 1)] + ["drifty"]
    print(f"{'sensor':>8} {'before':>8} {'after':>8} {'ratio':>6}")
    for name, prof in zip(names, profiles):
        pre, post = evaluate(prof, args.samples, args.degree, rng)
        print(f"{name:>8} {pre:8.4f} {post:8.4f} {post / pre:6.3f}")


if __name__ == "__main__":
    main()
