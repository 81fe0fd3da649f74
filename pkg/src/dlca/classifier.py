"""LSTM photocurrent classifier written directly in numpy.

Architecture: one LSTM layer (input 1, hidden 40) whose final hidden state
feeds Dense(40, ReLU) -> Dense(20, sigmoid) -> Dense(4, softmax).

The LSTM keeps its four gates stacked in a single matrix ``W`` of shape
``(4*hidden, hidden + 2)`` acting on ``[h, x, 1]``; row blocks are, in
order, forget, input, output and candidate.  Batches are processed with the
sample index along axis 0, so gradient reductions always sum in a fixed
order and training is bit-reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .container import FormatError
from .datasets import PhotocurrentDataset, Standardizer

MAGIC = b"DLCAMODL"
FORMAT_VERSION = 1
N_CLASSES = 4
LOSS_FLOOR = 1e-12
PARAM_NAMES = ("W", "W1", "b1", "W2", "b2", "W3", "b3")

__all__ = [
    "LstmClassifier", "AdamState", "TrainConfig", "TrainResult", "EvalResult", "TrainingDiverged",
    "FormatError", "init_model", "zero_model", "forward", "forward_batch", "loss", "batch_loss", "backward",
    "adam_step", "train", "evaluate", "confidence_report", "hidden_activation_trace", "write_trace_csv",
    "save_model", "load_model",
]


class TrainingDiverged(FloatingPointError):
    """Training produced a non-finite loss or parameter."""


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


@dataclass
class LstmClassifier:
    params: dict
    hidden: int = 40
    dense: tuple[int, int] = (40, 20)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        H, (d1, d2) = self.hidden, self.dense
        want = {"W": (4 * H, H + 2), "W1": (d1, H), "b1": (d1,), "W2": (d2, d1), "b2": (d2,),
                "W3": (N_CLASSES, d2), "b3": (N_CLASSES,)}
        for k, shape in want.items():
            if k not in self.params or self.params[k].shape != shape:
                got = None if k not in self.params else self.params[k].shape
                raise ValueError(f"parameter {k} has shape {got}, expected {shape}")

    def check_finite(self):
        for k in PARAM_NAMES:
            if not np.all(np.isfinite(self.params[k])):
                raise TrainingDiverged(f"parameter {k} is not finite")

    @property
    def standardizer(self) -> Standardizer | None:
        s = self.info.get("standardizer")
        return Standardizer(**s) if s else None

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return forward_batch(self, X)[0]

    def copy(self) -> "LstmClassifier":
        return LstmClassifier({k: v.copy() for k, v in self.params.items()}, self.hidden, self.dense,
                              dict(self.info))


def init_model(seed: int, hidden: int = 40, dense: tuple[int, int] = (40, 20)) -> LstmClassifier:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    d1, d2 = dense

    def u(rows, fan_in):
        b = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-b, b, size=(rows, fan_in))

    W = np.zeros((4 * hidden, hidden + 2))
    W[:, :hidden + 1] = u(4 * hidden, hidden + 1)
    W[:hidden, hidden + 1] = 1.0
    params = {"W": W, "W1": u(d1, hidden), "b1": np.zeros(d1), "W2": u(d2, d1), "b2": np.zeros(d2),
              "W3": u(N_CLASSES, d2), "b3": np.zeros(N_CLASSES)}
    return LstmClassifier(params, hidden, tuple(dense))


def zero_model(hidden: int = 40, dense: tuple[int, int] = (40, 20)) -> LstmClassifier:
    d1, d2 = dense
    shapes = {"W": (4 * hidden, hidden + 2), "W1": (d1, hidden), "b1": (d1,), "W2": (d2, d1),
              "b2": (d2,), "W3": (N_CLASSES, d2), "b3": (N_CLASSES,)}
    return LstmClassifier({k: np.zeros(s) for k, s in shapes.items()}, hidden, tuple(dense))


# -- forward ------------------------------------------------------------------------

def forward_batch(model: LstmClassifier, X: np.ndarray):
    """Run a ``(B, T)`` batch; returns ``(probs (B, 4), cache)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a (batch, time) array")
    B, T = X.shape
    p = model.params
    H = model.hidden
    W = p["W"]
    Wh_T = W[:, :H].T.copy()
    wx = W[:, H]
    b = W[:, H + 1]
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    hs[0] = h
    cs[0] = c
    for t in range(T):
        a = h @ Wh_T + np.multiply.outer(X[:, t], wx) + b
        s = _sigmoid(a[:, :3 * H])
        g = np.tanh(a[:, 3 * H:])
        c = s[:, :H] * c + s[:, H:2 * H] * g
        h = s[:, 2 * H:] * np.tanh(c)
        gates[t, :, :3 * H] = s
        gates[t, :, 3 * H:] = g
        hs[t + 1] = h
        cs[t + 1] = c
    z1 = h @ p["W1"].T + p["b1"]
    a1 = np.maximum(z1, 0.0)
    a2 = _sigmoid(a1 @ p["W2"].T + p["b2"])
    probs = _softmax(a2 @ p["W3"].T + p["b3"])
    cache = {"X": X, "hs": hs, "cs": cs, "gates": gates, "z1": z1, "a1": a1, "a2": a2, "probs": probs}
    return probs, cache


def forward(model: LstmClassifier, current):
    """Single sequence; returns ``(probs (4,), hidden_trace (hidden, T))``."""
    model.check_finite()
    probs, cache = forward_batch(model, np.asarray(current, dtype=np.float64)[None, :])
    return probs[0], cache["hs"][1:, 0, :].T.copy()


def loss(probs, label: int) -> float:
    return float(-math.log(max(float(probs[label]), LOSS_FLOOR)))


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOSS_FLOOR))))


# -- backward -----------------------------------------------------------------------

def backward(model: LstmClassifier, cache: dict, labels) -> dict:
    """Gradients of the mean cross-entropy over the batch held in ``cache``."""
    labels = np.asarray(labels)
    p = model.params
    H = model.hidden
    X, hs, cs, gates = cache["X"], cache["hs"], cache["cs"], cache["gates"]
    B, T = X.shape
    dz3 = cache["probs"].copy()
    dz3[np.arange(B), labels] -= 1.0
    dz3 /= B
    g = {"W3": dz3.T @ cache["a2"], "b3": dz3.sum(0)}
    a2 = cache["a2"]
    dz2 = (dz3 @ p["W3"]) * a2 * (1 - a2)
    g["W2"] = dz2.T @ cache["a1"]
    g["b2"] = dz2.sum(0)
    dz1 = (dz2 @ p["W2"]) * (cache["z1"] > 0)
    g["W1"] = dz1.T @ hs[T]
    g["b1"] = dz1.sum(0)

    Wh = p["W"][:, :H]
    dh = dz1 @ p["W1"]
    dc = np.zeros((B, H))
    da = np.empty((T, B, 4 * H))
    for t in range(T - 1, -1, -1):
        gt = gates[t]
        f, i, o, cand = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1 - tc * tc)
        dat = da[t]
        dat[:, :H] = dc * cs[t] * f * (1 - f)
        dat[:, H:2 * H] = dc * cand * i * (1 - i)
        dat[:, 2 * H:3 * H] = dh * tc * o * (1 - o)
        dat[:, 3 * H:] = dc * i * (1 - cand * cand)
        dh = dat @ Wh
        dc = dc * f
    dW = np.empty_like(p["W"])
    flat = da.reshape(T * B, 4 * H)
    dW[:, :H] = flat.T @ hs[:T].reshape(T * B, H)
    dW[:, H] = flat.T @ X.T.reshape(T * B)
    dW[:, H + 1] = flat.sum(0)
    g["W"] = dW
    return g


# -- optimiser ----------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """Canonical Adam update with bias correction, applied in place."""
    for k, gk in grads.items():
        if params[k].shape != gk.shape:
            raise ValueError(f"gradient for {k} has shape {gk.shape}, parameter has {params[k].shape}")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for k, gk in grads.items():
        m = state.m.setdefault(k, np.zeros_like(gk))
        v = state.v.setdefault(k, np.zeros_like(gk))
        m *= state.beta1
        m += (1 - state.beta1) * gk
        v *= state.beta2
        v += (1 - state.beta2) * gk * gk
        params[k] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# -- training / evaluation ----------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 32
    shuffle_seed: int = 0
    init_seed: int = 0
    lr: float = 1e-3
    hidden: int = 40

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass
class TrainResult:
    model: LstmClassifier
    losses: np.ndarray
    config: TrainConfig


def train(train_set: PhotocurrentDataset, config: TrainConfig = TrainConfig(),
          standardizer: Standardizer | None = None, progress=None) -> TrainResult:
    """Mini-batch Adam over ``config.epochs`` seeded shuffles of ``train_set``.

    ``train_set`` must already be preprocessed.  ``standardizer`` is only
    recorded in the model so that raw data can be evaluated later.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    model = init_model(config.init_seed, config.hidden)
    model.info = {"train_config": asdict(config), "n_train": len(train_set),
                  "transforms": list(train_set.metadata.transforms), "seq_len": train_set.seq_len}
    if standardizer is not None:
        model.info["standardizer"] = asdict(standardizer)
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.shuffle_seed)
    X, y = train_set.currents, train_set.labels
    losses = []
    for _ in range(config.epochs):
        order = rng.permutation(len(y))
        for lo in range(0, len(y), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            probs, cache = forward_batch(model, X[idx])
            L = batch_loss(probs, y[idx])
            if not math.isfinite(L):
                raise TrainingDiverged(f"non-finite loss at optimiser step {state.step} (batch starting {lo})")
            losses.append(L)
            adam_step(model.params, backward(model, cache, y[idx]), state)
            model.check_finite()
            if progress is not None:
                progress(state.step, L)
    return TrainResult(model, np.array(losses), config)


def predict_proba(model, X: np.ndarray, batch: int = 1024) -> np.ndarray:
    return np.concatenate([model.predict_proba(X[lo:lo + batch]) for lo in range(0, len(X), batch)])


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # rows: truth, columns: prediction
    n: int

    @property
    def per_class_accuracy(self) -> np.ndarray:
        tot = self.confusion.sum(axis=1)
        return np.divide(np.diag(self.confusion), tot, out=np.full(N_CLASSES, np.nan), where=tot > 0)


def _check_len(model, ds):
    want = getattr(model, "info", {}).get("seq_len")
    if want is not None and want != ds.seq_len:
        raise ValueError(f"model was trained on length {want}, dataset has length {ds.seq_len}")


def evaluate(model, test_set: PhotocurrentDataset) -> EvalResult:
    _check_len(model, test_set)
    pred = predict_proba(model, test_set.currents).argmax(axis=1)
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (test_set.labels, pred), 1)
    return EvalResult(float(np.mean(pred == test_set.labels)), conf, len(test_set))


def confidence_report(model, test_set: PhotocurrentDataset) -> np.ndarray:
    """Rows per class: ground-truth count, prediction count, summed ground-truth probability."""
    _check_len(model, test_set)
    probs = predict_proba(model, test_set.currents)
    y = test_set.labels
    out = np.zeros((N_CLASSES, 3))
    out[:, 0] = np.bincount(y, minlength=N_CLASSES)
    out[:, 1] = np.bincount(probs.argmax(axis=1), minlength=N_CLASSES)
    out[:, 2] = np.bincount(y, weights=probs[np.arange(len(y)), y], minlength=N_CLASSES)
    return out


def hidden_activation_trace(model: LstmClassifier, current) -> np.ndarray:
    return forward(model, current)[1]


def write_trace_csv(trace: np.ndarray, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit"] + [f"t{j}" for j in range(trace.shape[1])])
        for u, row in enumerate(trace):
            w.writerow([u] + [repr(float(v)) for v in row])


# -- checkpoints --------------------------------------------------------------------

def save_model(model: LstmClassifier, path):
    meta = {"architecture": {"input": 1, "hidden": model.hidden, "dense": list(model.dense),
                             "classes": N_CLASSES, "gate_order": "f,i,o,g"},
            "params": [[k, list(model.params[k].shape)] for k in PARAM_NAMES], "info": model.info}
    blob = b"".join(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes() for k in PARAM_NAMES)
    container.write(path, MAGIC, FORMAT_VERSION, meta, blob)


def load_model(path) -> LstmClassifier:
    meta, payload = container.read(path, MAGIC, FORMAT_VERSION)
    try:
        arch = meta["architecture"]
        specs = [(k, tuple(s)) for k, s in meta["params"]]
        hidden, dense = int(arch["hidden"]), tuple(arch["dense"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed model metadata ({exc})") from exc
    need = sum(8 * math.prod(s) for _, s in specs)
    if len(payload) != need:
        raise FormatError(f"{path}: parameter blob holds {len(payload)} bytes, expected {need}")
    params, off = {}, 0
    for k, s in specs:
        n = math.prod(s)
        params[k] = np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(s).astype(np.float64)
        off += 8 * n
    try:
        return LstmClassifier(params, hidden, dense, meta.get("info", {}))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
