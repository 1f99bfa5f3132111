"""Stacked LSTM classifier in plain numpy with exact BPTT and RMSProp.

Layout per LSTM layer follows the double-bias convention: input weights
(4h x in), recurrent weights (4h x h), input bias and recurrent bias (4h),
with gates stacked in the order input, forget, cell, output. The final
hidden state of the top layer goes through a ReLU and an affine head.
All arithmetic is float64.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ValidationError
from .features import FEATURE_ORDERING_VERSION, Normalizer

TASKS = {3: ("e2e",), 1: ("lane_change", "direction")}
MAGIC = b"LCLSTM\x00\x01"


@dataclass
class NetworkConfig:
    input_size: int = 150
    hidden_size: int = 128
    num_layers: int = 2
    dropout: float = 0.2
    output_size: int = 3
    sequence_mode: str = "flat"  # "flat": 1 step x 150, "sequential": 5 steps x 30
    frames: int = 5
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    alpha: float = 0.9
    eps: float = 1e-8
    init_seed: int = 0
    train_seed: int = 0
    task: str = "e2e"  # "e2e", "lane_change" or "direction"

    def __post_init__(self):
        if self.hidden_size < 1 or self.num_layers < 1 or self.input_size < 1:
            raise ValidationError("sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.output_size not in TASKS:
            raise ValidationError(f"output_size must be 1 or 3, got {self.output_size}")
        if self.task not in TASKS[self.output_size]:
            raise ValidationError(f"task {self.task!r} incompatible with output_size {self.output_size}")
        if self.sequence_mode not in ("flat", "sequential"):
            raise ValidationError(f"unknown sequence_mode {self.sequence_mode!r}")
        if self.sequence_mode == "sequential" and self.input_size % self.frames:
            raise ValidationError("input_size must be divisible by frames in sequential mode")

    @property
    def seq_len(self):
        return 1 if self.sequence_mode == "flat" else self.frames

    @property
    def step_size(self):
        return self.input_size // self.seq_len

    def replace(self, **kw):
        return NetworkConfig(**{**asdict(self), **kw})


@dataclass
class LstmLayerParams:
    w_ih: np.ndarray
    w_hh: np.ndarray
    b_ih: np.ndarray
    b_hh: np.ndarray


@dataclass
class NetworkParams:
    """All weights as views into one flat float64 buffer (canonical order)."""

    config: NetworkConfig
    layers: list
    head_w: np.ndarray
    head_b: np.ndarray
    normalizer: Optional[Normalizer] = None
    flat: Optional[np.ndarray] = None

    def named_arrays(self):
        """(name, array) pairs in canonical serialisation order."""
        out = []
        for k, layer in enumerate(self.layers):
            for attr in ("w_ih", "w_hh", "b_ih", "b_hh"):
                out.append((f"lstm{k}.{attr}", getattr(layer, attr)))
        out += [("head.w", self.head_w), ("head.b", self.head_b)]
        return out

    def size(self):
        return sum(a.size for _, a in self.named_arrays())

    def copy(self):
        out = _allocate(self.config)
        out.flat[...] = self.flat
        out.normalizer = self.normalizer
        return out

    def zeros_like(self):
        out = _allocate(self.config)
        out.normalizer = self.normalizer
        return out


def _shapes(config):
    h = config.hidden_size
    shapes = []
    for k in range(config.num_layers):
        n_in = config.step_size if k == 0 else h
        shapes += [(4 * h, n_in), (4 * h, h), (4 * h,), (4 * h,)]
    return shapes + [(config.output_size, h), (config.output_size,)]


def _allocate(config):
    shapes = _shapes(config)
    flat = np.zeros(sum(int(np.prod(s)) for s in shapes))
    views, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        views.append(flat[off:off + n].reshape(s))
        off += n
    layers = [LstmLayerParams(*views[4 * k:4 * k + 4]) for k in range(config.num_layers)]
    return NetworkParams(config, layers, views[-2], views[-1], flat=flat)


def param_count(config):
    h, total = config.hidden_size, 0
    for layer in range(config.num_layers):
        n_in = config.step_size if layer == 0 else h
        total += 4 * h * (n_in + h + 2)
    return total + config.output_size * h + config.output_size


def init_params(config):
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights; zero biases except forget-gate input bias = 1."""
    rng = np.random.default_rng(config.init_seed)
    h = config.hidden_size
    bound = 1.0 / np.sqrt(h)
    params = _allocate(config)
    for layer in params.layers:
        layer.w_ih[...] = rng.uniform(-bound, bound, size=layer.w_ih.shape)
        layer.w_hh[...] = rng.uniform(-bound, bound, size=layer.w_hh.shape)
        layer.b_ih[h:2 * h] = 1.0
    params.head_w[...] = rng.uniform(-bound, bound, size=params.head_w.shape)
    return params


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_cell(x, h_prev, c_prev, layer):
    """One LSTM step; works on single vectors or (batch, features) arrays."""
    H = layer.w_hh.shape[1]
    if np.shape(x)[-1] != layer.w_ih.shape[1] or np.shape(h_prev)[-1] != H or np.shape(c_prev)[-1] != H:
        raise ValueError("lstm_cell: input/state shapes do not match layer parameters")
    z = x @ layer.w_ih.T + layer.b_ih + h_prev @ layer.w_hh.T + layer.b_hh
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def _layer_forward(layer, xs, keep):
    B, T, _ = xs.shape
    H = layer.w_hh.shape[1]
    zx = xs @ layer.w_ih.T + (layer.b_ih + layer.b_hh)
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    steps = []
    for t in range(T):
        z = zx[:, t] + h @ layer.w_hh.T if t else zx[:, t]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        if keep:
            steps.append((i, f, g, o, c_prev, h_prev, tc))
    return hs, steps


def _layer_backward(layer, xs, steps, dhs):
    B, T, _ = xs.shape
    H = layer.w_hh.shape[1]
    dz_all = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    dw_hh = np.zeros_like(layer.w_hh)
    for t in reversed(range(T)):
        i, f, g, o, c_prev, h_prev, tc = steps[t]
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate([
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dz_all[:, t] = dz
        dc_next = dc * f
        dh_next = dz @ layer.w_hh
        if t:
            dw_hh += dz.T @ h_prev
    flat = dz_all.reshape(B * T, 4 * H)
    db = flat.sum(axis=0)
    grads = LstmLayerParams(flat.T @ xs.reshape(B * T, -1), dw_hh, db, db.copy())
    return grads, (flat @ layer.w_ih).reshape(B, T, -1)


def to_sequence(params_or_config, X):
    cfg = getattr(params_or_config, "config", params_or_config)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return X.reshape(len(X), cfg.seq_len, cfg.step_size)


def dropout_masks(config, batch, rng, rate=None):
    """Inverted-dropout masks for the inputs of layers 2..L."""
    rate = config.dropout if rate is None else rate
    shape = (batch, config.seq_len, config.hidden_size)
    if rate == 0:
        return [np.ones(shape) for _ in range(config.num_layers - 1)]
    return [(rng.random(shape) >= rate) / (1.0 - rate) for _ in range(config.num_layers - 1)]


def forward(params, X, masks=None, keep_cache=False):
    """Logits for windows `X` (n x input_size). `masks` enables training-mode dropout."""
    xs = to_sequence(params, X)
    inputs, caches = [], []
    seq = xs
    for k, layer in enumerate(params.layers):
        if k and masks is not None:
            seq = seq * masks[k - 1]
        inputs.append(seq)
        seq, steps = _layer_forward(layer, seq, keep_cache)
        caches.append(steps)
    last = seq[:, -1]
    act = np.maximum(last, 0.0)
    logits = act @ params.head_w.T + params.head_b
    if not keep_cache:
        return logits
    return logits, {"inputs": inputs, "steps": caches, "last": last, "act": act,
                    "hs": seq, "masks": masks}


def loss(logits, labels, output_size=None):
    """Mean cross-entropy: softmax for 3 outputs, logistic for a single logit."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    output_size = logits.shape[1] if output_size is None else output_size
    if output_size == 1:
        z = logits[:, 0]
        return float(np.mean(np.logaddexp(0.0, z) - labels * z))
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def _dlogits(logits, labels):
    n = len(labels)
    if logits.shape[1] == 1:
        return (_sigmoid(logits[:, 0]) - labels)[:, None] / n
    p = softmax(logits)
    p[np.arange(n), labels] -= 1.0
    return p / n


def backward(params, X, labels, masks=None, out=None):
    """Mean-over-batch loss and exact gradients (same structure as `params`).

    `out` is an optional gradient buffer from ``params.zeros_like()``, reused
    across calls; every entry is overwritten.
    """
    labels = np.asarray(labels, dtype=np.int64)
    logits, cache = forward(params, X, masks=masks, keep_cache=True)
    value = loss(logits, labels)
    grads = params.zeros_like() if out is None else out
    dlog = _dlogits(logits, labels)
    grads.head_w[...] = dlog.T @ cache["act"]
    grads.head_b[...] = dlog.sum(axis=0)
    dlast = (dlog @ params.head_w) * (cache["last"] > 0)
    dhs = np.zeros_like(cache["hs"])
    dhs[:, -1] = dlast
    for k in reversed(range(len(params.layers))):
        layer = params.layers[k]
        g, dxs = _layer_backward(layer, cache["inputs"][k], cache["steps"][k], dhs)
        for attr in ("w_ih", "w_hh", "b_ih", "b_hh"):
            getattr(grads.layers[k], attr)[...] = getattr(g, attr)
        if k:
            dhs = dxs * masks[k - 1] if masks is not None else dxs
    return value, grads


def softmax(logits):
    z = np.atleast_2d(logits)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class RmsPropState:
    lr: float = 1e-3
    alpha: float = 0.9
    eps: float = 1e-8
    square_avg: Optional[np.ndarray] = None  # same layout as NetworkParams.flat
    _scratch: Optional[np.ndarray] = field(default=None, repr=False)


def rmsprop_step(params, grads, state):
    """Elementwise v <- a*v + (1-a)*g^2, p <- p - lr*g/(sqrt(v)+eps), in place."""
    g = grads.flat
    if state.square_avg is None:
        state.square_avg = np.zeros_like(params.flat)
        state._scratch = np.empty_like(params.flat)
    v, buf = state.square_avg, state._scratch
    v *= state.alpha
    np.multiply(g, g, out=buf)
    buf *= 1.0 - state.alpha
    v += buf
    np.sqrt(v, out=buf)
    buf += state.eps
    np.divide(g, buf, out=buf)
    buf *= state.lr
    params.flat -= buf
    return params, state


def _targets(labels):
    return np.asarray(labels, dtype=np.int64)


def fit(X, y, config, params=None):
    """Train with seeded shuffling and dropout; returns (params, history).

    History rows are (epoch, mean training loss, eval-mode training accuracy).
    """
    X = np.asarray(X, dtype=np.float64)
    y = _targets(y)
    if len(X) == 0:
        raise ValidationError("empty training set")
    params = init_params(config) if params is None else params
    state = RmsPropState(config.lr, config.alpha, config.eps)
    rng = np.random.default_rng(config.train_seed)
    grads = params.zeros_like()
    history = []
    n = len(X)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            masks = dropout_masks(config, len(idx), rng)
            value, grads = backward(params, X[idx], y[idx], masks, out=grads)
            total += value * len(idx)
            rmsprop_step(params, grads, state)
        acc = float(np.mean(decide(forward(params, X)) == y))
        history.append((epoch, total / n, acc))
    return params, history


def decide(logits):
    """Class decisions: argmax (ties to lowest index) or logit > 0 for binary."""
    logits = np.atleast_2d(logits)
    if logits.shape[1] == 1:
        return (logits[:, 0] > 0).astype(np.int64)
    return np.argmax(logits, axis=1)


def probabilities(logits):
    logits = np.atleast_2d(logits)
    if logits.shape[1] == 1:
        p = _sigmoid(logits[:, 0])
        return np.column_stack([1.0 - p, p])
    return softmax(logits)


def predict(params, windows):
    """Eval-mode (decisions, probabilities) for raw windows; normalises if configured."""
    X = np.asarray(windows, dtype=np.float64)
    single = X.ndim == 1
    if params.normalizer is not None:
        X = params.normalizer.transform(X)
    logits = forward(params, X)
    dec, prob = decide(logits), probabilities(logits)
    if single:
        return int(dec[0]), prob[0]
    return dec, prob


def history_csv(history):
    lines = ["epoch,meanLoss,trainAccuracy"]
    lines += [f"{e},{l!r},{a!r}" for e, l, a in history]
    return "\n".join(lines) + "\n"


def save_model(params, path, precision=64, metadata=None):
    """Write magic, header length, JSON header, then a little-endian parameter block."""
    if precision not in (32, 64):
        raise ValidationError("precision must be 32 or 64")
    dtype = "<f8" if precision == 64 else "<f4"
    header = {
        "config": asdict(params.config),
        "dtype": dtype,
        "featureOrderingVersion": FEATURE_ORDERING_VERSION,
        "normalizer": params.normalizer.to_dict() if params.normalizer is not None else None,
        "arrays": [[name, list(a.shape)] for name, a in params.named_arrays()],
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for _, a in params.named_arrays())
    data = MAGIC + struct.pack("<I", len(blob)) + blob + body
    Path(path).write_bytes(data)
    return len(data)


def load_model(path):
    """Inverse of save_model; returns (params, header)."""
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a model file (bad magic)")
    off = len(MAGIC)
    (hlen,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    header = json.loads(data[off:off + hlen])
    off += hlen
    config = NetworkConfig(**header["config"])
    params = _allocate(config)
    dtype = np.dtype(header["dtype"])
    for (name, arr), (hname, shape) in zip(params.named_arrays(), header["arrays"]):
        if name != hname or list(arr.shape) != shape:
            raise ValidationError(f"{path}: array layout mismatch at {hname}")
        n = arr.size * dtype.itemsize
        arr[...] = np.frombuffer(data, dtype=dtype, count=arr.size, offset=off).reshape(arr.shape)
        off += n
    if off != len(data):
        raise ValidationError(f"{path}: trailing bytes after parameter block")
    if header.get("normalizer"):
        params.normalizer = Normalizer.from_dict(header["normalizer"])
    return params, header


def fingerprint(params):
    return hashlib.sha256(np.ascontiguousarray(params.flat, dtype="<f8").tobytes()).hexdigest()[:16]
