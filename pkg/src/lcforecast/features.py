"""Observation windows, horizon labels, balancing and train/test splits.

Each sample is a 5-frame window flattened frame-major into 150 values: per
frame the ego state (x, y, vx, vy, ax, ay) followed by (dp, dv, da) for the
eight neighbor slots in canonical order.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ValidationError
from .ingest import NeighborSlot, resolve_neighbors

N_FRAMES = 5
EGO_ATTRS = ("x", "y", "vx", "vy", "ax", "ay")
REL_ATTRS = ("dp", "dv", "da")
PER_FRAME = len(EGO_ATTRS) + len(NeighborSlot) * len(REL_ATTRS)  # 30
N_FEATURES = N_FRAMES * PER_FRAME  # 150
FEATURE_ORDERING_VERSION = 1
MISSING = (500.0, 0.0, 0.0)
DEFAULT_HORIZONS = (1, 2, 3, 4)
TRAIN_FRACTION = 0.8


class Label(IntEnum):
    LCL = 0
    LK = 1
    LCR = 2

    @property
    def lane_change(self):
        return self is not Label.LK

    @property
    def direction(self):
        if self is Label.LK:
            return None
        return "left" if self is Label.LCL else "right"


@dataclass(frozen=True)
class EgoState:
    x: float = 0.0
    y: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0


def rel_dp(ego, sur):
    return float(np.hypot(sur.x - ego.x, sur.y - ego.y))


def rel_dv(ego, sur):
    return float(np.hypot(sur.vx - ego.vx, sur.vy - ego.vy))


def rel_da(ego, sur):
    return float(np.hypot(sur.ax - ego.ax, sur.ay - ego.ay))


def feature_name(index):
    if not 0 <= index < N_FEATURES:
        raise IndexError(f"feature index {index} outside [0, {N_FEATURES})")
    frame, rem = divmod(index, PER_FRAME)
    if rem < len(EGO_ATTRS):
        return f"t{frame}_ego_{EGO_ATTRS[rem]}"
    slot, attr = divmod(rem - len(EGO_ATTRS), len(REL_ATTRS))
    return f"t{frame}_{NeighborSlot(slot).camel}_{REL_ATTRS[attr]}"


FEATURE_NAMES = tuple(feature_name(i) for i in range(N_FEATURES))
_NAME_INDEX = {n: i for i, n in enumerate(FEATURE_NAMES)}


def feature_index(name):
    try:
        return _NAME_INDEX[name]
    except KeyError:
        raise KeyError(f"unknown feature name {name!r}") from None


@dataclass
class SampleWindow:
    features: np.ndarray
    label: Label
    recording_id: str
    vehicle_id: int
    anchor_frame: int
    horizon_s: float


@dataclass
class SampleSet:
    """Column-oriented collection of samples."""

    X: np.ndarray
    y: np.ndarray
    recording_id: np.ndarray
    vehicle_id: np.ndarray
    anchor_frame: np.ndarray
    horizon_s: np.ndarray

    def __len__(self):
        return len(self.y)

    def __getitem__(self, i):
        return SampleWindow(self.X[i], Label(int(self.y[i])), str(self.recording_id[i]),
                            int(self.vehicle_id[i]), int(self.anchor_frame[i]),
                            float(self.horizon_s[i]))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.X[idx], self.y[idx], self.recording_id[idx],
                         self.vehicle_id[idx], self.anchor_frame[idx], self.horizon_s[idx])

    def counts(self):
        return {lab.name: int(np.sum(self.y == lab)) for lab in Label}

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, N_FEATURES)), np.zeros(0, np.int64), np.zeros(0, dtype=object),
                   np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(*(np.concatenate([getattr(s, f) for s in sets])
                     for f in ("X", "y", "recording_id", "vehicle_id", "anchor_frame", "horizon_s")))


@dataclass
class DatasetSplit:
    train: SampleSet
    test: SampleSet
    seed: int
    mode: str = "by-track"
    ratio: tuple = (0.8, 0.2)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        if len(X) == 0:
            raise ValidationError("cannot fit normalisation on an empty set")
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def horizon_frames(horizon_s, frame_rate):
    return int(round(horizon_s * frame_rate))


class _Index:
    """Row lookup by (vehicle_id, frame) over a recording's stacked rows."""

    def __init__(self, recording):
        resolve_neighbors(recording)
        st = recording.stacked()
        self.ids, self.frames, self.state = st["id"], st["frame"], st["state"]
        self.lane_pos = recording.layout.position(st["lane_id"]) if len(self.ids) else st["lane_id"]
        self.neighbors = (np.concatenate([recording.tracks[k].neighbors for k in sorted(recording.tracks)])
                          if recording.tracks else np.zeros((0, 8), np.int64))
        self.span = int(self.frames.max()) + 1 if len(self.frames) else 1
        self.keys = self.ids * self.span + self.frames  # ascending by construction

    def lookup(self, ids, frames):
        ids = np.asarray(ids, dtype=np.int64)
        frames = np.asarray(frames, dtype=np.int64)
        ok = (frames >= 0) & (frames < self.span) & (ids > 0)
        keys = ids * self.span + np.clip(frames, 0, self.span - 1)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, max(len(self.keys) - 1, 0))
        found = ok & (len(self.keys) > 0)
        if len(self.keys):
            found &= self.keys[pos] == keys
        return np.where(found, pos, -1)


def _frame_rows(index, missing=MISSING, rows=None):
    """30-feature block per stacked row of the recording (or the given rows)."""
    rows = np.arange(len(index.ids)) if rows is None else np.asarray(rows)
    ego = index.state[rows]
    out = np.empty((len(rows), PER_FRAME))
    out[:, :6] = ego
    for slot in NeighborSlot:
        j = index.lookup(index.neighbors[rows, slot], index.frames[rows])
        have = j >= 0
        sur = index.state[np.where(have, j, 0)]
        d = sur - ego
        block = np.column_stack([np.hypot(d[:, 0], d[:, 1]), np.hypot(d[:, 2], d[:, 3]),
                                 np.hypot(d[:, 4], d[:, 5])])
        block[~have] = missing
        out[:, 6 + 3 * slot: 9 + 3 * slot] = block
    return out


def build_window(recording, vehicle_id, anchor_frame, missing=MISSING):
    """150-vector ending at `anchor_frame`, or None if history is incomplete."""
    track = recording.tracks[vehicle_id]
    rows = [track.row(anchor_frame - k) for k in range(N_FRAMES - 1, -1, -1)]
    if any(r is None for r in rows):
        return None
    index = _Index(recording)
    start = index.lookup([vehicle_id], [anchor_frame - N_FRAMES + 1])[0]
    return _frame_rows(index, missing, np.arange(start, start + N_FRAMES)).reshape(-1)


def _label_from_positions(now, later):
    return np.where(later < now, Label.LCL, np.where(later > now, Label.LCR, Label.LK)).astype(np.int64)


def label_at_horizon(recording, vehicle_id, anchor_frame, horizon_s):
    """Net lane displacement over the horizon, or None if the track is too short."""
    track = recording.tracks[vehicle_id]
    h = horizon_frames(horizon_s, recording.frame_rate)
    i, j = track.row(anchor_frame), track.row(anchor_frame + h)
    if i is None or j is None:
        return None
    pos = recording.layout.position([track.lane_id[i], track.lane_id[j]])
    return Label(int(_label_from_positions(pos[0], pos[1])))


def extract_samples(recording, horizon_s, missing=MISSING):
    """All (vehicle, anchor) samples with full history and a labelled horizon.

    Ordered by vehicle id, then anchor frame.
    """
    index = _Index(recording)
    n = len(index.ids)
    if n == 0:
        return SampleSet.empty()
    rows = _frame_rows(index, missing)
    h = horizon_frames(horizon_s, recording.frame_rate)
    anchors = np.arange(N_FRAMES - 1, n)
    first = anchors - (N_FRAMES - 1)
    valid = (index.ids[first] == index.ids[anchors]) & \
            (index.frames[anchors] - index.frames[first] == N_FRAMES - 1)
    future = index.lookup(index.ids[anchors], index.frames[anchors] + h)
    valid &= future >= 0
    anchors, future = anchors[valid], future[valid]
    offsets = np.arange(-(N_FRAMES - 1), 1)
    X = rows[anchors[:, None] + offsets[None, :]].reshape(len(anchors), N_FEATURES)
    y = _label_from_positions(index.lane_pos[anchors], index.lane_pos[future])
    return SampleSet(
        X=X, y=y,
        recording_id=np.full(len(anchors), recording.recording_id, dtype=object),
        vehicle_id=index.ids[anchors].copy(),
        anchor_frame=index.frames[anchors].copy(),
        horizon_s=np.full(len(anchors), float(horizon_s)),
    )


def balanced_indices(labels, seed, n_classes=3):
    """Indices that downsample every class to the minority count, sorted."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    members = [np.flatnonzero(labels == c) for c in range(n_classes)]
    m = min(len(g) for g in members)
    keep = [np.sort(rng.choice(g, size=m, replace=False)) if m < len(g) else g for g in members]
    return np.sort(np.concatenate(keep)).astype(np.int64)


def balance_classes(samples, seed, n_classes=3):
    return samples.subset(balanced_indices(samples.y, seed, n_classes))


def split(samples, seed, mode="by-track", train_fraction=TRAIN_FRACTION):
    """80:20 partition; ``by-track`` keeps each vehicle's samples on one side."""
    n = len(samples)
    rng = np.random.default_rng(seed)
    n_test = n - int(round(train_fraction * n))
    if mode == "by-sample":
        perm = rng.permutation(n)
        test_idx = np.sort(perm[:n_test])
    elif mode == "by-track":
        keys = np.array([f"{r}\x00{v}" for r, v in zip(samples.recording_id, samples.vehicle_id)])
        uniq, inverse = np.unique(keys, return_inverse=True)
        sizes = np.bincount(inverse, minlength=len(uniq))
        chosen, total = [], 0
        for g in rng.permutation(len(uniq)):
            if total >= n_test:
                break
            chosen.append(g)
            total += sizes[g]
        test_idx = np.flatnonzero(np.isin(inverse, chosen))
    else:
        raise ValidationError(f"unknown split mode {mode!r}")
    mask = np.zeros(n, dtype=bool)
    mask[test_idx] = True
    return DatasetSplit(samples.subset(np.flatnonzero(~mask)), samples.subset(test_idx),
                        seed=seed, mode=mode, ratio=(train_fraction, 1 - train_fraction))


def slot_occupancy(samples):
    """Fraction of (sample, frame) cells where each neighbor slot is filled."""
    if len(samples) == 0:
        return {slot.camel: 0.0 for slot in NeighborSlot}
    out = {}
    for slot in NeighborSlot:
        cols = [f * PER_FRAME + 6 + 3 * slot for f in range(N_FRAMES)]
        out[slot.camel] = float(np.mean(samples.X[:, cols] != MISSING[0]))
    return out
