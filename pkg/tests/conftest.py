import numpy as np
import pytest
from hypothesis import settings

from lcforecast.ingest import LaneLayout, Recording, Track

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_track(vid, frames, x, y=0.0, vx=30.0, vy=0.0, ax=0.0, ay=0.0, lane=1):
    frames = np.asarray(frames, dtype=np.int64)
    n = len(frames)
    full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
    return Track(vid, frames, full(x), full(y), full(vx), full(vy), full(ax), full(ay),
                 np.broadcast_to(np.asarray(lane, dtype=np.int64), (n,)).copy())


def make_recording(tracks, lanes=(1, 2, 3), direction=1, frame_rate=25.0, rid="rec"):
    return Recording(LaneLayout(tuple(lanes), direction, frame_rate),
                     {t.vehicle_id: t for t in tracks}, "synthetic", rid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fd_relative_errors(flat, f, analytic, step=1e-5, floor=1e-6):
    """Central differences of scalar `f()` w.r.t. every entry of `flat` (perturbed in place).

    Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps partials
    near zero from being judged against finite-difference round-off alone.
    """
    errs = np.empty(flat.size)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        n = (up - down) / (2 * step)
        a = analytic[i]
        errs[i] = abs(a - n) / max(abs(a), abs(n), floor)
    return errs
