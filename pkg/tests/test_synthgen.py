import numpy as np
import pytest
from hypothesis import given, strategies as st

from lcforecast.errors import ValidationError
from lcforecast.synthgen import (
    LaneChangeEvent, ScenarioConfig, generate_scenario, lane_centers, quintic_lateral,
)


def test_quintic_boundaries():
    assert quintic_lateral(0, 4, 3.5) == 0
    assert quintic_lateral(4, 4, 3.5) == 3.5
    assert quintic_lateral(2, 4, 3.5) == pytest.approx(1.75, abs=1e-15)


@pytest.mark.parametrize("t,T", [(-0.1, 4), (4.1, 4), (1, 0), (0, -2)])
def test_quintic_domain(t, T):
    with pytest.raises(ValueError):
        quintic_lateral(t, T, 3.5)


@given(st.floats(0.5, 10), st.floats(0.5, 6))
def test_quintic_endpoint_derivatives_vanish(T, W):
    h = 1e-4 * T
    f = lambda t: quintic_lateral(min(max(t, 0), T), T, W)
    # one-sided differences at the ends: slope and curvature scale as h^2 and h
    assert abs(f(h) - f(0)) / h < 1e-6 * W
    assert abs(f(T) - f(T - h)) / h < 1e-6 * W
    assert abs(quintic_lateral(T, T, W) - W) <= 1e-12 * W


def test_empty_scenario():
    rec = generate_scenario(ScenarioConfig(vehicle_count=0, duration=1))
    assert rec.tracks == {}


def test_constant_speed_kinematics():
    rec = generate_scenario(ScenarioConfig(vehicle_count=1, duration=1, speed_range=(30, 30), seed=3))
    t = rec.tracks[1]
    k = np.arange(25)
    assert len(t) == 25
    np.testing.assert_allclose(t.x, t.x[0] + 30 * k / 25, rtol=0, atol=1e-12)
    assert np.all(t.vx == 30)


def _lanes_from_y(rec, cfg, vid):
    # brute force: nearest lane centre per frame, an exact tie keeps the previous lane
    centers = lane_centers(cfg.lane_count, cfg.lane_width)
    out = []
    for v in rec.tracks[vid].y:
        d = [abs(v - c) for c in centers]
        best = [i for i, x in enumerate(d) if x == min(d)]
        out.append(best[0] if len(best) == 1 else out[-1])
    return np.array(out)


def test_single_left_change_moves_one_lane():
    cfg = ScenarioConfig(vehicle_count=1, duration=8, seed=1, lane_count=3,
                         lane_change_events=[LaneChangeEvent(0, 50, "left", 100)])
    # start in the rightmost lane is not guaranteed, so force a feasible layout by retrying seeds
    for seed in range(20):
        cfg.seed = seed
        try:
            rec = generate_scenario(cfg)
            break
        except ValidationError:
            continue
    lanes = _lanes_from_y(rec, cfg, 1)
    assert lanes[50] - lanes[150] == 1
    pos = rec.layout.position(rec.tracks[1].lane_id)
    np.testing.assert_array_equal(pos, lanes)


def test_infeasible_event_rejected():
    cfg = ScenarioConfig(vehicle_count=1, lane_count=1, duration=8,
                         lane_change_events=[LaneChangeEvent(0, 10, "left", 50)])
    with pytest.raises(ValidationError):
        generate_scenario(cfg)


def test_event_past_end_rejected():
    cfg = ScenarioConfig(vehicle_count=1, lane_count=2, duration=2,
                         lane_change_events=[LaneChangeEvent(0, 10, "left", 50)])
    with pytest.raises(ValidationError):
        generate_scenario(cfg)


def test_overlapping_events_rejected():
    cfg = ScenarioConfig(vehicle_count=1, lane_count=5, duration=10,
                         lane_change_events=[LaneChangeEvent(0, 10, "left", 50),
                                             LaneChangeEvent(0, 40, "left", 50)])
    with pytest.raises(ValidationError):
        generate_scenario(cfg)


def test_slow_speed_rejected():
    with pytest.raises(ValidationError):
        generate_scenario(ScenarioConfig(speed_range=(20, 30)))


def test_fractional_frame_count_rejected():
    with pytest.raises(ValidationError):
        generate_scenario(ScenarioConfig(duration=1.01))


def test_default_event_duration_in_range():
    cfg = ScenarioConfig(vehicle_count=30, duration=30, random_lane_changes=40, seed=5)
    rec = generate_scenario(cfg)
    durs = [e["durationFrames"] for e in rec.events]
    assert durs and min(durs) >= 50 and max(durs) <= 150


scenarios = st.builds(
    ScenarioConfig,
    lane_count=st.integers(2, 4),
    duration=st.sampled_from([4.0, 8.0, 12.0]),
    vehicle_count=st.integers(1, 6),
    random_lane_changes=st.integers(0, 6),
    seed=st.integers(0, 2**32),
    ramp=st.sampled_from([None, "on", "off"]),
)


@given(scenarios)
def test_deterministic(cfg):
    a, b = generate_scenario(cfg), generate_scenario(cfg)
    assert a.events == b.events
    for vid in a.tracks:
        for attr in ("x", "y", "vx", "vy", "ax", "ay", "lane_id", "neighbors"):
            assert np.array_equal(getattr(a.tracks[vid], attr), getattr(b.tracks[vid], attr))


@given(scenarios)
def test_lateral_continuity(cfg):
    rec = generate_scenario(cfg)
    for t in rec.tracks.values():
        assert np.all(np.abs(np.diff(t.y)) <= cfg.lane_width / 2)


@given(scenarios)
def test_each_event_is_one_lane_transition(cfg):
    rec = generate_scenario(cfg)
    per_vehicle = {}
    for e in rec.events:
        per_vehicle.setdefault(e["vehicleId"], []).append(e)
    for vid, t in rec.tracks.items():
        pos = rec.layout.position(t.lane_id)
        changes = np.flatnonzero(np.diff(pos))
        evs = per_vehicle.get(vid, [])
        assert len(changes) == len(evs)
        for e, c in zip(sorted(evs, key=lambda e: e["startFrame"]), changes):
            assert e["startFrame"] <= c < e["startFrame"] + e["durationFrames"]
            assert pos[c + 1] - pos[c] == (-1 if e["direction"] == "left" else 1)


def test_on_ramp_vehicles_leave_the_ramp_lane():
    cfg = ScenarioConfig(vehicle_count=20, duration=30, ramp="on", random_lane_changes=10, seed=9)
    # 30 s is longer than any maneuver, so every ramp vehicle must merge
    rec = generate_scenario(cfg)
    ramp = cfg.lane_count  # rightmost lane id
    for t in rec.tracks.values():
        if t.lane_id[0] == ramp:
            assert t.lane_id[-1] != ramp
        else:
            assert ramp not in t.lane_id


def test_off_ramp_only_entered_from_adjacent_lane():
    cfg = ScenarioConfig(vehicle_count=20, duration=30, ramp="off", random_lane_changes=10, seed=9)
    rec = generate_scenario(cfg)
    exit_lane = cfg.lane_count
    entered = [t for t in rec.tracks.values() if exit_lane in t.lane_id]
    assert entered
    for t in rec.tracks.values():
        assert t.lane_id[0] != exit_lane
