"""Deterministic synthetic highway recordings.

Vehicles drive at constant speed along x; lateral motion is lane-centred
except during scripted lane changes, which follow a quintic profile with
zero lateral velocity and acceleration at both ends. Ramp layouts turn the
rightmost lane into an acceleration lane (``"on"``) or an exit lane
(``"off"``).
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError
from .ingest import LaneLayout, Recording, Track, resolve_neighbors

MIN_SPEED = 27.8  # m/s, i.e. 100 km/h
DURATION_RANGE = (2.0, 6.0)  # seconds for one lane change


@dataclass
class LaneChangeEvent:
    vehicle_index: int
    start_frame: int
    direction: str  # "left" or "right"
    duration_frames: Optional[int] = None

    def __post_init__(self):
        self.direction = self.direction.lower()
        if self.direction not in ("left", "right"):
            raise ValidationError(f"direction must be 'left' or 'right', got {self.direction!r}")

    @property
    def step(self):
        return -1 if self.direction == "left" else 1


@dataclass
class ScenarioConfig:
    lane_count: int = 3
    lane_width: float = 3.5
    frame_rate: float = 25.0
    duration: float = 60.0
    vehicle_count: int = 30
    speed_range: tuple = (28.0, 38.0)
    lane_change_events: list = field(default_factory=list)
    random_lane_changes: int = 0
    ramp: Optional[str] = None  # None, "on" or "off"
    min_gap: float = 20.0
    seed: int = 0
    recording_id: str = "synth"

    def __post_init__(self):
        self.speed_range = tuple(self.speed_range)
        self.lane_change_events = [
            e if isinstance(e, LaneChangeEvent) else LaneChangeEvent(**e)
            for e in self.lane_change_events
        ]

    @property
    def frame_count(self):
        return int(round(self.frame_rate * self.duration))

    def validate(self):
        if self.lane_count < 1:
            raise ValidationError("lane_count must be >= 1")
        if not self.lane_width > 0 or not self.duration > 0 or not self.frame_rate > 0:
            raise ValidationError("lane_width, duration and frame_rate must be positive")
        if abs(self.frame_rate * self.duration - self.frame_count) > 1e-9:
            raise ValidationError("frame_rate * duration must be an integer frame count")
        if self.vehicle_count < 0:
            raise ValidationError("vehicle_count must be >= 0")
        lo, hi = self.speed_range
        if lo < MIN_SPEED or hi < lo:
            raise ValidationError(f"speed_range must satisfy {MIN_SPEED} <= min <= max")
        if self.ramp not in (None, "on", "off"):
            raise ValidationError(f"ramp must be None, 'on' or 'off', got {self.ramp!r}")
        if self.ramp and self.lane_count < 2:
            raise ValidationError("ramp layouts need at least two lanes")

    def to_dict(self):
        d = asdict(self)
        d["speed_range"] = list(self.speed_range)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def quintic_lateral(t, T, W):
    """Lateral offset after time `t` of a lane change of length `T` over width `W`."""
    if not T > 0:
        raise ValueError(f"maneuver duration must be positive, got {T}")
    if t < 0 or t > T:
        raise ValueError(f"t={t} outside [0, {T}]")
    tau = t / T
    return W * (10 * tau**3 - 15 * tau**4 + 6 * tau**5)


def _quintic(tau, T, W):
    """Offset, velocity and acceleration arrays for normalised time `tau`."""
    pos = W * (10 * tau**3 - 15 * tau**4 + 6 * tau**5)
    vel = W * (30 * tau**2 - 60 * tau**3 + 30 * tau**4) / T
    acc = W * (60 * tau - 180 * tau**2 + 120 * tau**3) / T**2
    return pos, vel, acc


def lane_centers(lane_count, lane_width):
    """Lateral centre of each lane, leftmost first. Left is +y for +x travel."""
    return (lane_count - 1 - np.arange(lane_count) + 0.5) * lane_width


def _draw_duration(rng, frame_rate):
    lo, hi = DURATION_RANGE
    return int(round(rng.uniform(lo, hi) * frame_rate))


def _random_events(config, rng, initial_lanes, exclude, mainline):
    """Spread `random_lane_changes` events over eligible vehicles in time order."""
    n_frames = config.frame_count
    eligible = [v for v in range(config.vehicle_count) if v not in exclude]
    if not eligible or config.random_lane_changes <= 0:
        return []
    owners = rng.choice(eligible, size=config.random_lane_changes)
    events = []
    for v in sorted(set(owners.tolist())):
        m = int(np.sum(owners == v))
        seg = n_frames // m
        lane = int(initial_lanes[v])
        for k in range(m):
            dur = _draw_duration(rng, config.frame_rate)
            if dur > seg:
                continue
            start = k * seg + int(rng.integers(0, seg - dur + 1))
            options = [d for d, step in (("left", -1), ("right", 1)) if lane + step in mainline]
            if not options:
                continue
            direction = options[int(rng.integers(len(options)))]
            events.append(LaneChangeEvent(v, start, direction, dur))
            lane += -1 if direction == "left" else 1
    return events


def _ramp_events(config, rng, initial_lanes):
    n_frames = config.frame_count
    ramp_lane = config.lane_count - 1
    events = []
    for v in range(config.vehicle_count):
        dur = _draw_duration(rng, config.frame_rate)
        if dur > n_frames:
            continue
        latest = max(n_frames // 2 - dur, 0)
        start = int(rng.integers(0, latest + 1))
        if config.ramp == "on" and initial_lanes[v] == ramp_lane:
            events.append(LaneChangeEvent(v, start, "left", dur))
        elif config.ramp == "off" and initial_lanes[v] == ramp_lane - 1 and rng.random() < 0.5:
            events.append(LaneChangeEvent(v, start, "right", dur))
    return events


def _check_events(config, events, initial_lanes):
    n_frames = config.frame_count
    per_vehicle = {}
    for e in events:
        if not 0 <= e.vehicle_index < config.vehicle_count:
            raise ValidationError(f"event references unknown vehicle index {e.vehicle_index}")
        if e.duration_frames is None or e.duration_frames < 1:
            raise ValidationError("event duration must be at least one frame")
        if e.start_frame < 0 or e.start_frame + e.duration_frames > n_frames:
            raise ValidationError(
                f"event for vehicle {e.vehicle_index} exceeds the recording "
                f"({e.start_frame} + {e.duration_frames} > {n_frames})")
        per_vehicle.setdefault(e.vehicle_index, []).append(e)
    for v, evs in per_vehicle.items():
        evs.sort(key=lambda e: e.start_frame)
        lane = int(initial_lanes[v])
        prev_end = -1
        for e in evs:
            if e.start_frame < prev_end:
                raise ValidationError(f"overlapping lane changes for vehicle {v}")
            lane += e.step
            if not 0 <= lane < config.lane_count:
                raise ValidationError(
                    f"vehicle {v}: change {e.direction} at frame {e.start_frame} leaves the road")
            prev_end = e.start_frame + e.duration_frames
    return per_vehicle


def generate_scenario(config):
    """Build a Recording from `config`; identical configs give identical output."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n, n_frames, fr, W = config.vehicle_count, config.frame_count, config.frame_rate, config.lane_width
    centers = lane_centers(config.lane_count, W)
    layout = LaneLayout(tuple(range(1, config.lane_count + 1)), 1, float(fr))

    mainline = set(range(config.lane_count))
    if config.ramp == "off":
        mainline.discard(config.lane_count - 1)
        initial_lanes = rng.integers(0, config.lane_count - 1, size=n)
    else:
        initial_lanes = rng.integers(0, config.lane_count, size=n)
    if config.ramp == "on":
        mainline.discard(config.lane_count - 1)
    speeds = rng.uniform(*config.speed_range, size=n)
    x0 = np.zeros(n)
    for lane in range(config.lane_count):
        members = np.flatnonzero(initial_lanes == lane)
        if not len(members):
            continue
        gaps = config.min_gap + rng.uniform(0.0, 3 * config.min_gap, size=len(members))
        x0[members] = np.cumsum(gaps) - gaps[0]

    events = []
    for e in config.lane_change_events:
        dur = e.duration_frames if e.duration_frames is not None else _draw_duration(rng, fr)
        events.append(LaneChangeEvent(e.vehicle_index, e.start_frame, e.direction, dur))
    scripted = {e.vehicle_index for e in events}
    if config.ramp:
        ramp = _ramp_events(config, rng, initial_lanes)
        ramp = [e for e in ramp if e.vehicle_index not in scripted]
        events += ramp
        scripted |= {e.vehicle_index for e in ramp}
        if config.ramp == "on":
            scripted |= set(np.flatnonzero(initial_lanes == config.lane_count - 1).tolist())
    events += _random_events(config, rng, initial_lanes, scripted, mainline)
    per_vehicle = _check_events(config, events, initial_lanes)

    k = np.arange(n_frames)
    t = k / fr
    tracks = {}
    for v in range(n):
        x = x0[v] + speeds[v] * k / fr
        y = np.full(n_frames, centers[initial_lanes[v]])
        vy = np.zeros(n_frames)
        ay = np.zeros(n_frames)
        lane = int(initial_lanes[v])
        lane_idx = np.full(n_frames, lane)
        for e in per_vehicle.get(v, []):
            T = e.duration_frames / fr
            t0 = e.start_frame / fr
            span = slice(e.start_frame, e.start_frame + e.duration_frames + 1)
            tau = np.clip((t[span] - t0) / T, 0.0, 1.0)
            pos, vel, acc = _quintic(tau, T, W)
            y[span] = centers[lane] - e.step * pos
            vy[span] = -e.step * vel
            ay[span] = -e.step * acc
            lane += e.step
            y[e.start_frame + e.duration_frames:] = centers[lane]
            # the lane id flips once the boundary is strictly passed; the quintic is
            # point-symmetric about its midpoint, so that is the first frame past T/2
            crossed = e.start_frame + e.duration_frames // 2 + 1
            lane_idx[crossed:] = lane
        tracks[v + 1] = Track(
            vehicle_id=v + 1, frame=k.astype(np.int64),
            x=x, y=y, vx=np.full(n_frames, speeds[v]), vy=vy,
            ax=np.zeros(n_frames), ay=ay,
            lane_id=np.asarray(layout.lane_ids, dtype=np.int64)[lane_idx],
        )

    ordered = sorted(events, key=lambda e: (e.vehicle_index, e.start_frame))
    recording = Recording(
        layout=layout, tracks=tracks, source="synthetic", recording_id=config.recording_id,
        events=[
            {"vehicleId": e.vehicle_index + 1, "startFrame": e.start_frame,
             "durationFrames": e.duration_frames, "direction": e.direction}
            for e in ordered
        ],
    )
    return resolve_neighbors(recording)


def load_scenario_config(path):
    data = json.loads(Path(path).read_text())
    return ScenarioConfig.from_dict(data.get("scenario", data))
