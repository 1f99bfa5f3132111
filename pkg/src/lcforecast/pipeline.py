"""E2E and cascaded (Multi-L) workflows, evaluation, timing and importance."""

import time
from dataclasses import dataclass, field

import numpy as np

from . import seqnet
from .errors import ValidationError
from .features import (
    FEATURE_NAMES, N_FRAMES, Label, Normalizer, balanced_indices, extract_samples,
)

CLASS_NAMES = {
    "e2e": ("LCL", "LK", "LCR"),
    "lane_change": ("LK", "LC"),
    "direction": ("Left", "Right"),
}


@dataclass
class CascadeModel:
    model1: seqnet.NetworkParams  # lane change (1) vs keep (0)
    model2: seqnet.NetworkParams  # right (1) vs left (0)
    normalizer: Normalizer = None
    histories: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model1.config.output_size != 1 or self.model2.config.output_size != 1:
            raise ValidationError("cascade members must be binary networks")


def project_labels(labels, task):
    """Map three-class labels onto a network's target encoding."""
    labels = np.asarray(labels, dtype=np.int64)
    if task == "e2e":
        return labels
    if task == "lane_change":
        return (labels != Label.LK).astype(np.int64)
    if task == "direction":
        return (labels == Label.LCR).astype(np.int64)
    raise ValidationError(f"unknown task {task!r}")


def _fit(X, y, config, normalizer):
    params = seqnet.init_params(config)
    params.normalizer = normalizer
    return seqnet.fit(normalizer.transform(X), y, config, params)


def train_e2e(dataset, config, normalizer=None):
    """Three-class network on the train split; returns (params, history)."""
    train = dataset.train
    if len(train) == 0:
        raise ValidationError("empty training split")
    config = config.replace(output_size=3, task="e2e")
    normalizer = normalizer or Normalizer.fit(train.X)
    return _fit(train.X, train.y, config, normalizer)


def train_cascade(dataset, config, normalizer=None, seed=0):
    """Lane-change detector on all train samples, direction model on LC samples only.

    Each stage is re-balanced over its two classes before training.
    """
    train = dataset.train
    if len(train) == 0:
        raise ValidationError("empty training split")
    normalizer = normalizer or Normalizer.fit(train.X)
    y1 = project_labels(train.y, "lane_change")
    idx1 = balanced_indices(y1, seed, n_classes=2)
    if len(idx1) == 0:
        raise ValidationError("lane-change model needs both LC and LK samples")
    cfg1 = config.replace(output_size=1, task="lane_change")
    m1, h1 = _fit(train.X[idx1], y1[idx1], cfg1, normalizer)

    lc = np.flatnonzero(y1 == 1)
    y2 = project_labels(train.y[lc], "direction")
    idx2 = lc[balanced_indices(y2, seed + 1, n_classes=2)]
    if len(idx2) == 0:
        raise ValidationError("direction model needs both left and right lane changes in the train split")
    cfg2 = config.replace(output_size=1, task="direction", init_seed=config.init_seed + 1,
                          train_seed=config.train_seed + 1)
    m2, h2 = _fit(train.X[idx2], project_labels(train.y[idx2], "direction"), cfg2, normalizer)
    return CascadeModel(m1, m2, normalizer, {"lane_change": h1, "direction": h2})


def _logit(params, Z):
    return seqnet.forward(params, Z)[:, 0]


def cascade_decide(logit_change, logit_right):
    """Composite label from stage logits (> 0 means LC, resp. Right); LK short-circuits."""
    logit_change = np.asarray(logit_change)
    return np.where(logit_change > 0, np.where(np.asarray(logit_right) > 0, Label.LCR, Label.LCL),
                    Label.LK).astype(np.int64)


def cascade_predict(cascade, window):
    """Label for one raw window; model2 runs only when model1 detects a change."""
    z = cascade.normalizer.transform(window)[None, :]
    if _logit(cascade.model1, z)[0] <= 0:
        return Label.LK
    return Label.LCR if _logit(cascade.model2, z)[0] > 0 else Label.LCL


def predict_batch(model, X):
    """(decisions, probabilities) over raw windows for a network or cascade.

    For a cascade the probabilities are composite over (LCL, LK, LCR).
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(model, CascadeModel):
        Z = model.normalizer.transform(X)
        l1, l2 = _logit(model.model1, Z), _logit(model.model2, Z)
        p1 = seqnet.probabilities(l1[:, None])[:, 1]
        p2 = seqnet.probabilities(l2[:, None])[:, 1]
        probs = np.column_stack([p1 * (1 - p2), 1 - p1, p1 * p2])
        return cascade_decide(l1, l2), probs
    return seqnet.predict(model, X)


def model_task(model):
    return "e2e" if isinstance(model, CascadeModel) else model.config.task


def model_param_count(model):
    if isinstance(model, CascadeModel):
        return model.model1.size() + model.model2.size()
    return model.size()


@dataclass
class MetricsReport:
    confusion: np.ndarray
    classes: tuple
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: dict
    samples: int
    inference_mean_s: float = None
    inference_std_s: float = None
    averaging: str = "macro"

    def to_dict(self):
        out = {
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "perClass": self.per_class,
            "samples": self.samples,
            "averaging": self.averaging,
        }
        if self.inference_mean_s is not None:
            out["timing"] = {"meanInferenceSeconds": self.inference_mean_s,
                             "stdInferenceSeconds": self.inference_std_s}
        return out


def _safe_div(a, b):
    return float(a) / float(b) if b else 0.0


def confusion_matrix(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm, classes=None):
    """Accuracy plus macro precision/recall/F1; empty denominators give 0."""
    cm = np.asarray(cm, dtype=np.int64)
    k = cm.shape[0]
    classes = tuple(classes) if classes else tuple(str(i) for i in range(k))
    total = int(cm.sum())
    per_class = {}
    for c in range(k):
        tp = cm[c, c]
        p = _safe_div(tp, cm[:, c].sum())
        r = _safe_div(tp, cm[c, :].sum())
        per_class[classes[c]] = {
            "precision": p, "recall": r, "f1": _safe_div(2 * p * r, p + r),
            "support": int(cm[c, :].sum()),
        }
    mean = lambda key: float(np.mean([v[key] for v in per_class.values()]))
    return MetricsReport(
        confusion=cm, classes=classes, accuracy=_safe_div(np.trace(cm), total),
        precision=mean("precision"), recall=mean("recall"), f1=mean("f1"),
        per_class=per_class, samples=total,
    )


def evaluate(model, samples, timing_repetitions=0, timing_limit=200):
    """MetricsReport over test samples; cascades are scored on the 3-class truth."""
    task = model_task(model)
    truth = project_labels(samples.y, task)
    pred, _ = predict_batch(model, samples.X)
    report = metrics_from_confusion(confusion_matrix(truth, pred, len(CLASS_NAMES[task])),
                                    CLASS_NAMES[task])
    if timing_repetitions and len(samples):
        mean, std = measure_inference(model, samples.X[:timing_limit], timing_repetitions)
        report.inference_mean_s, report.inference_std_s = mean, std
    return report


def _predict_one(model):
    if isinstance(model, CascadeModel):
        return lambda w: cascade_predict(model, w)
    return lambda w: seqnet.predict(model, w)


def measure_inference(model, windows, repetitions=5):
    """Per-sample wall-clock mean and std over `repetitions`, after one warm-up pass."""
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if len(windows) == 0:
        raise ValidationError("no windows to time")
    run = _predict_one(model)
    for w in windows:
        run(w)
    per_sample = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for w in windows:
            run(w)
        per_sample.append((time.perf_counter() - t0) / len(windows))
    return float(np.mean(per_sample)), float(np.std(per_sample))


@dataclass
class ImportanceReport:
    scores: np.ndarray  # (n_classes, n_features)
    classes: tuple
    k: int = 15

    def ranking(self, cls):
        c = self.classes.index(cls)
        order = np.lexsort((np.arange(self.scores.shape[1]), -self.scores[c]))
        return [(FEATURE_NAMES[j], float(self.scores[c, j])) for j in order[:self.k]]

    def to_csv(self):
        cols = ["rank"]
        for c in self.classes:
            cols += [c, f"{c}_score"]
        lines = [",".join(cols)]
        ranked = [self.ranking(c) for c in self.classes]
        for r in range(self.k):
            row = [str(r + 1)]
            for lst in ranked:
                row += [lst[r][0], repr(lst[r][1])]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def _recalls(truth, pred, n_classes):
    cm = confusion_matrix(truth, pred, n_classes)
    support = cm.sum(axis=1)
    return np.where(support > 0, np.diag(cm) / np.maximum(support, 1), 0.0)


def permutation_importance(model, samples, seed, k=15, repeats=5):
    """Per-class recall drop when one feature column is shuffled.

    Samples are put in a canonical order first and the shuffle for column j,
    repeat r is drawn from a generator keyed on (seed, j, r), so the result
    does not depend on the order samples are passed in.
    """
    task = model_task(model)
    n_classes = len(CLASS_NAMES[task])
    order = np.lexsort(np.column_stack([samples.X, samples.y]).T[::-1])
    X = samples.X[order]
    truth = project_labels(samples.y[order], task)
    base = _recalls(truth, predict_batch(model, X)[0], n_classes)
    n, d = X.shape
    scores = np.zeros((n_classes, d))
    for j in range(d):
        stacked = np.tile(X, (repeats, 1))
        for r in range(repeats):
            perm = np.random.default_rng([seed, j, r]).permutation(n)
            stacked[r * n:(r + 1) * n, j] = X[perm, j]
        pred = predict_batch(model, stacked)[0].reshape(repeats, n)
        drops = [base - _recalls(truth, pred[r], n_classes) for r in range(repeats)]
        scores[:, j] = np.mean(drops, axis=0)
    return ImportanceReport(scores, CLASS_NAMES[task], k)


@dataclass
class TimelineRow:
    frame: int
    predicted: int
    probabilities: np.ndarray
    truth: int


def prediction_timeline(model, recording, vehicle_id, horizon_s):
    """Sliding predictions over every eligible anchor of one track."""
    samples = extract_samples(recording, horizon_s)
    mine = samples.subset(np.flatnonzero(samples.vehicle_id == vehicle_id))
    if len(mine) == 0:
        return []
    dec, probs = predict_batch(model, mine.X)
    if not isinstance(model, CascadeModel) and model.config.task != "e2e":
        truth = project_labels(mine.y, model.config.task)
    else:
        truth = mine.y
    return [TimelineRow(int(f), int(d), p, int(t))
            for f, d, p, t in zip(mine.anchor_frame, dec, probs, truth)]


def timeline_csv(rows, classes=CLASS_NAMES["e2e"]):
    head = ["frame", "predicted", "truth"] + [f"p_{c}" for c in classes]
    lines = [",".join(head)]
    for r in rows:
        lines.append(",".join([str(r.frame), classes[r.predicted], classes[r.truth]]
                              + [repr(float(p)) for p in r.probabilities]))
    return "\n".join(lines) + "\n"


def min_track_frames(horizon_s, frame_rate):
    return N_FRAMES + int(round(horizon_s * frame_rate))
