"""Recording model and CSV I/O for HighD/ExiD-style track files.

A recording is a set of per-vehicle tracks plus the lane layout needed to
resolve "left" and "right" in the driver's frame. Neighbor slots follow the
drone-dataset convention: eight surrounding vehicles per ego and frame,
identified by vehicle id (0 = no vehicle).
"""

import csv
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ParseError, ValidationError

BASE_COLUMNS = [
    "frame", "id", "x", "y", "xVelocity", "yVelocity",
    "xAcceleration", "yAcceleration", "laneId",
]
NEIGHBOR_COLUMNS = [
    "precedingId", "followingId",
    "leftPrecedingId", "leftAlongsideId", "leftFollowingId",
    "rightPrecedingId", "rightAlongsideId", "rightFollowingId",
]

VEHICLE_LENGTH = 5.0  # nominal, used for the alongside overlap test
SOURCES = ("synthetic", "highd-like", "exid-like")


class NeighborSlot(IntEnum):
    PRECEDING = 0
    FOLLOWING = 1
    LEFT_PRECEDING = 2
    LEFT_ALONGSIDE = 3
    LEFT_FOLLOWING = 4
    RIGHT_PRECEDING = 5
    RIGHT_ALONGSIDE = 6
    RIGHT_FOLLOWING = 7

    @property
    def camel(self):
        head, *rest = self.name.lower().split("_")
        return head + "".join(w.capitalize() for w in rest)


@dataclass(frozen=True)
class LaneLayout:
    lane_ids: tuple  # leftmost to rightmost in the driver's frame
    driving_direction: int = 1
    frame_rate: float = 25.0

    def __post_init__(self):
        if len(set(self.lane_ids)) != len(self.lane_ids):
            raise ValidationError(f"duplicate lane ids in {self.lane_ids}")
        if not self.frame_rate > 0:
            raise ValidationError(f"frame rate must be positive, got {self.frame_rate}")
        if self.driving_direction not in (1, -1):
            raise ValidationError("driving direction must be +1 or -1")

    def position(self, lane_ids):
        """Map lane ids to their left-to-right index; -1 for unknown ids."""
        lookup = {lid: i for i, lid in enumerate(self.lane_ids)}
        return np.array([lookup.get(int(l), -1) for l in np.atleast_1d(lane_ids)], dtype=np.int64)


@dataclass
class Track:
    vehicle_id: int
    frame: np.ndarray
    x: np.ndarray
    y: np.ndarray
    vx: np.ndarray
    vy: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    lane_id: np.ndarray
    neighbors: Optional[np.ndarray] = None  # (n_frames, 8) vehicle ids, 0 = empty

    def __len__(self):
        return len(self.frame)

    def row(self, frame):
        """Index of `frame` in this track, or None."""
        i = int(np.searchsorted(self.frame, frame))
        if i < len(self.frame) and self.frame[i] == frame:
            return i
        return None

    def state(self):
        return np.column_stack([self.x, self.y, self.vx, self.vy, self.ax, self.ay])


@dataclass
class Recording:
    layout: LaneLayout
    tracks: dict  # vehicle_id -> Track, ascending ids
    source: str = "synthetic"
    recording_id: str = "rec"
    events: list = field(default_factory=list)  # scripted lane changes (synthetic only)

    @property
    def frame_rate(self):
        return self.layout.frame_rate

    def frames(self):
        if not self.tracks:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate([t.frame for t in self.tracks.values()]))

    def has_neighbors(self):
        return bool(self.tracks) and all(t.neighbors is not None for t in self.tracks.values())

    def stacked(self):
        """All rows concatenated, sorted by (vehicle_id, frame)."""
        tracks = [self.tracks[k] for k in sorted(self.tracks)]
        if not tracks:
            return {
                "id": np.zeros(0, np.int64), "frame": np.zeros(0, np.int64),
                "state": np.zeros((0, 6)), "lane_id": np.zeros(0, np.int64),
            }
        return {
            "id": np.concatenate([np.full(len(t), t.vehicle_id, np.int64) for t in tracks]),
            "frame": np.concatenate([t.frame for t in tracks]),
            "state": np.concatenate([t.state() for t in tracks]),
            "lane_id": np.concatenate([t.lane_id for t in tracks]),
        }


def _validate(recording):
    lanes = set(recording.layout.lane_ids)
    for vid, t in recording.tracks.items():
        if vid <= 0:
            raise ValidationError(f"vehicle ids must be positive (0 encodes no neighbor), got {vid}")
        if len(t.frame) > 1 and np.any(np.diff(t.frame) <= 0):
            raise ValidationError(f"frames of vehicle {vid} are not strictly increasing")
        unknown = set(np.unique(t.lane_id).tolist()) - lanes
        if unknown:
            raise ValidationError(f"vehicle {vid} uses unknown lane id(s) {sorted(unknown)}")


def read_meta(meta_path):
    meta = json.loads(Path(meta_path).read_text())
    try:
        layout = LaneLayout(
            lane_ids=tuple(int(v) for v in meta["laneIdsLeftToRight"]),
            driving_direction=int(meta.get("drivingDirection", 1)),
            frame_rate=float(meta.get("frameRate", 25)),
        )
    except KeyError as err:
        raise ParseError(f"{meta_path}: missing key {err}") from None
    return layout, meta


def parse_recording(tracks_path, meta_path, source=None, recording_id=None):
    """Load a tracks CSV and its JSON meta into a Recording.

    Neighbor columns are optional as a group; when absent the tracks carry
    ``neighbors=None`` and :func:`resolve_neighbors` fills them in.
    """
    tracks_path = Path(tracks_path)
    layout, meta = read_meta(meta_path)
    rows = {}
    with tracks_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{tracks_path}: line 1: missing header")
        header = [h.strip() for h in header]
        if header == BASE_COLUMNS:
            with_neighbors = False
        elif header == BASE_COLUMNS + NEIGHBOR_COLUMNS:
            with_neighbors = True
        else:
            raise ParseError(f"{tracks_path}: line 1: unexpected header {header}")
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise ParseError(f"{tracks_path}: line {lineno}: expected {width} fields, got {len(rec)}")
            try:
                frame, vid = int(rec[0]), int(rec[1])
                vals = [float(v) for v in rec[2:8]]
                lane = int(rec[8])
                nbrs = [int(v) for v in rec[9:]]
            except ValueError as err:
                raise ParseError(f"{tracks_path}: line {lineno}: {err}") from None
            if not all(np.isfinite(vals)):
                raise ParseError(f"{tracks_path}: line {lineno}: non-finite value")
            rows.setdefault(vid, []).append((frame, *vals, lane, *nbrs))

    tracks = {}
    for vid in sorted(rows):
        data = rows[vid]
        frames = np.array([r[0] for r in data], dtype=np.int64)
        arr = np.array([r[1:7] for r in data], dtype=np.float64)
        tracks[vid] = Track(
            vehicle_id=vid, frame=frames,
            x=arr[:, 0], y=arr[:, 1], vx=arr[:, 2], vy=arr[:, 3], ax=arr[:, 4], ay=arr[:, 5],
            lane_id=np.array([r[7] for r in data], dtype=np.int64),
            neighbors=np.array([r[8:] for r in data], dtype=np.int64).reshape(len(data), 8)
            if with_neighbors else None,
        )
    recording = Recording(
        layout=layout,
        tracks=tracks,
        source=source or meta.get("source", "synthetic"),
        recording_id=recording_id or meta.get("recordingId", tracks_path.name.split("_")[0]),
        events=meta.get("laneChanges", []),
    )
    _validate(recording)
    if with_neighbors:
        _check_neighbor_refs(recording)
    return recording


def _check_neighbor_refs(recording):
    st = recording.stacked()
    present = set(zip(st["frame"].tolist(), st["id"].tolist()))
    for vid, t in recording.tracks.items():
        for f, row in zip(t.frame.tolist(), t.neighbors.tolist()):
            for n in row:
                if n and (f, n) not in present:
                    raise ValidationError(
                        f"vehicle {vid} frame {f}: neighbor {n} not present at that frame")


def write_recording(recording, out_dir):
    """Write ``<id>_tracks.csv`` and ``<id>_meta.json``; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracks_path = out_dir / f"{recording.recording_id}_tracks.csv"
    meta_path = out_dir / f"{recording.recording_id}_meta.json"
    with_neighbors = recording.has_neighbors()
    with tracks_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASE_COLUMNS + (NEIGHBOR_COLUMNS if with_neighbors else []))
        for vid in sorted(recording.tracks):
            t = recording.tracks[vid]
            cols = [t.x.tolist(), t.y.tolist(), t.vx.tolist(), t.vy.tolist(),
                    t.ax.tolist(), t.ay.tolist()]
            for i, f in enumerate(t.frame.tolist()):
                row = [f, vid] + [repr(c[i]) for c in cols] + [int(t.lane_id[i])]
                if with_neighbors:
                    row += t.neighbors[i].tolist()
                w.writerow(row)
    meta = {
        "recordingId": recording.recording_id,
        "source": recording.source,
        "frameRate": recording.layout.frame_rate,
        "laneIdsLeftToRight": list(recording.layout.lane_ids),
        "drivingDirection": recording.layout.driving_direction,
        "laneChanges": recording.events,
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return tracks_path, meta_path


def find_recordings(data_dir):
    """Pairs of (tracks, meta) paths in a directory, sorted by recording id."""
    data_dir = Path(data_dir)
    pairs = []
    for tp in sorted(data_dir.glob("*_tracks.csv")):
        mp = data_dir / tp.name.replace("_tracks.csv", "_meta.json")
        if mp.exists():
            pairs.append((tp, mp))
    return pairs


def _slot_matrix(ids, s, lane_pos, length=VEHICLE_LENGTH):
    """Neighbor ids (n, 8) for vehicles observed at one instant.

    `s` is the longitudinal coordinate in the driver's frame and `lane_pos`
    the left-to-right lane index. Slot selection uses the longitudinal gap.
    """
    n = len(ids)
    out = np.zeros((n, 8), dtype=np.int64)
    if n < 2:
        return out
    gap = s[None, :] - s[:, None]  # other minus ego, positive = ahead
    dlane = lane_pos[None, :] - lane_pos[:, None]
    not_self = ~np.eye(n, dtype=bool)
    same = (dlane == 0) & not_self
    left = dlane == -1
    right = dlane == 1
    overlap = np.abs(gap) < length
    masks = [
        same & (gap > 0),
        same & (gap < 0),
        left & (gap >= length),
        left & overlap,
        left & (gap <= -length),
        right & (gap >= length),
        right & overlap,
        right & (gap <= -length),
    ]
    dist = np.abs(gap)
    for k, m in enumerate(masks):
        d = np.where(m, dist, np.inf)
        j = np.argmin(d, axis=1)
        hit = np.isfinite(d[np.arange(n), j])
        out[hit, k] = ids[j[hit]]
    return out


def assign_neighbors(recording, frame):
    """Neighbor slots for every vehicle present at `frame`.

    Returns ``{vehicle_id: {NeighborSlot: vehicle_id or None}}``.
    """
    ids, s, pos = [], [], []
    for vid in sorted(recording.tracks):
        t = recording.tracks[vid]
        i = t.row(frame)
        if i is None:
            continue
        ids.append(vid)
        s.append(t.x[i] * recording.layout.driving_direction)
        pos.append(recording.layout.position(t.lane_id[i])[0])
    ids = np.array(ids, dtype=np.int64)
    mat = _slot_matrix(ids, np.array(s, dtype=float), np.array(pos, dtype=np.int64))
    return {
        int(v): {slot: (int(mat[r, slot]) or None) for slot in NeighborSlot}
        for r, v in enumerate(ids)
    }


def resolve_neighbors(recording, overwrite=False):
    """Fill every track's neighbor columns by recomputation, frame by frame."""
    if recording.has_neighbors() and not overwrite:
        return recording
    st = recording.stacked()
    n = len(st["id"])
    result = np.zeros((n, 8), dtype=np.int64)
    if n:
        s = st["state"][:, 0] * recording.layout.driving_direction
        pos = recording.layout.position(st["lane_id"]) if n else st["lane_id"]
        order = np.argsort(st["frame"], kind="stable")
        frames_sorted = st["frame"][order]
        cuts = np.flatnonzero(np.diff(frames_sorted)) + 1
        for group in np.split(order, cuts):
            result[group] = _slot_matrix(st["id"][group], s[group], pos[group])
    start = 0
    for vid in sorted(recording.tracks):
        t = recording.tracks[vid]
        t.neighbors = result[start:start + len(t)]
        start += len(t)
    return recording
