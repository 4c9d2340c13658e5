import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rgbdtrack.harness import run_scenario, standard_config

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
CRITERIA: dict = {}


def record(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def flood_fill_blobs(mask) -> list:
    """Brute-force 8-connected components as ``(mean x, mean y, area)``, independent of any library labeler."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    blobs = []
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or seen[y0, x0]:
                continue
            stack, pix = [(y0, x0)], []
            seen[y0, x0] = True
            while stack:
                y, x = stack.pop()
                pix.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        v, u = y + dy, x + dx
                        if 0 <= v < h and 0 <= u < w and mask[v, u] and not seen[v, u]:
                            seen[v, u] = True
                            stack.append((v, u))
            ys, xs = np.array(pix).T
            blobs.append((xs.mean(), ys.mean(), len(pix)))
    return blobs


@pytest.fixture(scope="session")
def standard_run(tmp_path_factory):
    """The standard five-camera scenario at 600 frames, with its wall-clock time."""
    out = tmp_path_factory.mktemp("standard")
    t0 = time.perf_counter()
    result = run_scenario(standard_config(), out_dir=out)
    return result, time.perf_counter() - t0, out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
