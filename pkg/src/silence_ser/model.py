"""Seed-deterministic multitask regressor trained by minimizing a weighted CCC loss.

The network standardizes its input, runs a hidden stack (tanh dense layers,
or LSTM layers), and predicts valence, arousal and dominance with three
linear scalar heads. Gradients are computed by hand-written reverse mode in
float64; optimization is Adam with early stopping on validation loss.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

from .metrics import CccReport, TaskWeights, evaluate, multitask_loss, multitask_loss_and_grad

CHECKPOINT_FORMAT = "silence-ser-model"
CHECKPOINT_VERSION = 1
STD_FLOOR = 1e-8
FULL_HIDDEN = (512, 512, 512)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden: tuple = (64, 64, 64)
    mode: str = "vector"  # "vector" (N x D) or "sequence" (N x T x D)
    cell: str = "dense"  # "dense" or "lstm"; sequence mode requires "lstm"
    seq_len: int = 300
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("input_dim and every hidden size must be >= 1")
        if self.mode not in ("vector", "sequence"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.cell not in ("dense", "lstm"):
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.mode == "sequence" and self.cell != "lstm":
            raise ValueError("sequence mode needs the lstm cell")
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")

    @property
    def timesteps(self) -> int:
        return self.seq_len if self.mode == "sequence" else 1

    @classmethod
    def full_shape(cls, input_dim=47, mode="vector", seq_len=3409, seed=0):
        """Three 512-unit LSTM layers, as used for the full-size experiments."""
        return cls(input_dim, FULL_HIDDEN, mode, "lstm", seq_len, seed)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int | None = None  # None: full batch
    weights: TaskWeights = field(default_factory=TaskWeights)

    def __post_init__(self):
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("need 0 < patience < max_epochs")


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring; 3-D input is reduced over samples and frames."""

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        flat = X.reshape(-1, X.shape[-1])
        self.mean_ = flat.mean(axis=0)
        self.scale_ = np.maximum(flat.std(axis=0), STD_FLOOR)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.mean_.shape[0]:
            raise ValueError(f"expected {self.mean_.shape[0]} features, got {X.shape[-1]}")
        return (X - self.mean_) / self.scale_


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Network:
    """Parameters plus an optional fitted :class:`Standardizer`."""

    def __init__(self, config: ModelConfig, params: dict, standardizer: Standardizer | None = None):
        self.config = config
        self.params = params
        self.standardizer = standardizer

    def copy(self) -> "Network":
        return Network(self.config, {k: v.copy() for k, v in self.params.items()}, self.standardizer)

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


def _param_shapes(cfg: ModelConfig):
    shapes = []
    fan = cfg.input_dim
    for i, h in enumerate(cfg.hidden):
        if cfg.cell == "dense":
            shapes += [(f"W{i}", (fan, h)), (f"b{i}", (h,))]
        else:
            shapes += [(f"Wx{i}", (fan, 4 * h)), (f"Wh{i}", (h, 4 * h)), (f"b{i}", (4 * h,))]
        fan = h
    shapes += [("W_head", (cfg.hidden[-1] * cfg.timesteps, 3)), ("b_head", (3,))]
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return int(sum(math.prod(s) for _, s in _param_shapes(cfg)))


def init_network(cfg: ModelConfig) -> Network:
    """Glorot-uniform weights from a generator seeded by ``cfg.seed``; zero biases
    except LSTM forget gates, which start at 1."""
    rng = np.random.default_rng(cfg.seed)
    params = {}
    for name, shape in _param_shapes(cfg):
        if name.startswith("b"):
            p = np.zeros(shape)
            if cfg.cell == "lstm" and name != "b_head":
                h = shape[0] // 4
                p[h : 2 * h] = 1.0
        else:
            fan_in = shape[0]
            fan_out = shape[1] // 4 if name.startswith(("Wx", "Wh")) else shape[1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            p = rng.uniform(-limit, limit, size=shape)
        params[name] = p
    return Network(cfg, params)


# --- forward / backward ---------------------------------------------------


def _check_input(net: Network, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    cfg = net.config
    want = 2 if cfg.mode == "vector" else 3
    if X.ndim != want:
        raise ValueError(f"{cfg.mode} mode expects a {want}-D batch, got shape {X.shape}")
    if X.shape[-1] != cfg.input_dim:
        raise ValueError(f"expected {cfg.input_dim} input features, got {X.shape[-1]}")
    if cfg.mode == "sequence" and X.shape[1] != cfg.seq_len:
        raise ValueError(f"expected sequences of length {cfg.seq_len}, got {X.shape[1]}")
    return X


def _lstm_forward(x, Wx, Wh, b):
    n, steps, _ = x.shape
    h_size = Wh.shape[0]
    h = np.zeros((n, h_size))
    c = np.zeros((n, h_size))
    hs = np.empty((n, steps, h_size))
    cache = []
    for t in range(steps):
        z = x[:, t] @ Wx + h @ Wh + b
        i = _sigmoid(z[:, :h_size])
        f = _sigmoid(z[:, h_size : 2 * h_size])
        g = np.tanh(z[:, 2 * h_size : 3 * h_size])
        o = _sigmoid(z[:, 3 * h_size :])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[:, t] = h
        cache.append((h_prev, c_prev, i, f, g, o, tc))
    return hs, cache


def _lstm_backward(x, Wx, Wh, cache, dhs):
    n, steps, _ = x.shape
    h_size = Wh.shape[0]
    dWx, dWh = np.zeros_like(Wx), np.zeros_like(Wh)
    db = np.zeros(4 * h_size)
    dx = np.empty_like(x)
    dh_next = np.zeros((n, h_size))
    dc_next = np.zeros((n, h_size))
    for t in reversed(range(steps)):
        h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = dhs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate(
            [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g * g), do * o * (1 - o)],
            axis=1,
        )
        dWx += x[:, t].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ Wx.T
        dh_next = dz @ Wh.T
        dc_next = dc * f
    return dx, dWx, dWh, db


def _forward(net: Network, X):
    cfg, p = net.config, net.params
    if net.standardizer is None:
        raise ValueError("network has no fitted standardizer")
    a = net.standardizer.transform(_check_input(net, X))
    caches = []
    if cfg.cell == "dense":
        for i in range(len(cfg.hidden)):
            inp = a
            a = np.tanh(inp @ p[f"W{i}"] + p[f"b{i}"])
            caches.append((inp, a))
        flat = a
    else:
        seq = a[:, None, :] if cfg.mode == "vector" else a
        for i in range(len(cfg.hidden)):
            inp = seq
            seq, cache = _lstm_forward(inp, p[f"Wx{i}"], p[f"Wh{i}"], p[f"b{i}"])
            caches.append((inp, cache))
        flat = seq.reshape(seq.shape[0], -1)
    return flat @ p["W_head"] + p["b_head"], flat, caches


def forward(net: Network, X) -> np.ndarray:
    """Predict an N x 3 (valence, arousal, dominance) matrix."""
    return _forward(net, X)[0]


def loss_and_grad(net: Network, X, Y, weights: TaskWeights | None = None):
    """Multitask CCC loss and its exact gradient for every parameter."""
    cfg, p = net.config, net.params
    Y = np.asarray(Y, dtype=np.float64)
    if Y.shape[0] < 2:
        raise ValueError("loss needs a batch of at least two rows")
    preds, flat, caches = _forward(net, X)
    loss, dpred = multitask_loss_and_grad(preds, Y, weights)

    grads = {"W_head": flat.T @ dpred, "b_head": dpred.sum(axis=0)}
    dflat = dpred @ p["W_head"].T
    if cfg.cell == "dense":
        da = dflat
        for i in reversed(range(len(cfg.hidden))):
            inp, out = caches[i]
            dz = da * (1.0 - out * out)
            grads[f"W{i}"] = inp.T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ p[f"W{i}"].T
    else:
        dseq = dflat.reshape(dflat.shape[0], cfg.timesteps, cfg.hidden[-1])
        for i in reversed(range(len(cfg.hidden))):
            inp, cache = caches[i]
            dseq, dWx, dWh, db = _lstm_backward(inp, p[f"Wx{i}"], p[f"Wh{i}"], cache, dseq)
            grads[f"Wx{i}"], grads[f"Wh{i}"], grads[f"b{i}"] = dWx, dWh, db
    return loss, grads


def grad(net: Network, X, Y, weights: TaskWeights | None = None) -> dict:
    return loss_and_grad(net, X, Y, weights)[1]


# --- training ---------------------------------------------------------------


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` epochs
    without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss``; returns True when it is a new best."""
        if loss < self.best:
            self.best, self.best_epoch, self.wait = loss, epoch, 0
            return True
        self.wait += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.wait >= self.patience


class Adam:
    def __init__(self, params: dict, tc: TrainConfig):
        self.tc = tc
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        tc = self.tc
        self.t += 1
        c1 = 1.0 - tc.beta1**self.t
        c2 = 1.0 - tc.beta2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = tc.beta1 * self.m[k] + (1.0 - tc.beta1) * g
            self.v[k] = tc.beta2 * self.v[k] + (1.0 - tc.beta2) * g * g
            params[k] -= tc.learning_rate * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + tc.epsilon)


def _batches(n, batch_size, rng):
    if batch_size is None or batch_size >= n:
        return [np.arange(n)]
    order = rng.permutation(n)
    # a trailing batch of one has no CCC; fold it into the previous batch
    cuts = list(range(batch_size, n, batch_size))
    if n - cuts[-1] < 2:
        cuts.pop()
    return np.split(order, cuts)


def train(net: Network, X_train, Y_train, X_val, Y_val, tc: TrainConfig | None = None):
    """Fit the standardizer on the training split, then run Adam with early stopping.

    Returns ``(best_network, history)`` where ``best_network`` is the snapshot
    with the lowest validation loss and ``history`` is a list of per-epoch
    dicts (epoch, train_loss, val_loss, val_ccc_v/a/d).
    """
    tc = tc or TrainConfig()
    X_train, Y_train = np.asarray(X_train, dtype=np.float64), np.asarray(Y_train, dtype=np.float64)
    X_val, Y_val = np.asarray(X_val, dtype=np.float64), np.asarray(Y_val, dtype=np.float64)
    if len(X_train) < 2 or len(X_val) < 2:
        raise ValueError("training and validation splits need at least two rows each")
    net = net.copy()
    net.standardizer = Standardizer().fit(X_train)
    opt = Adam(net.params, tc)
    rng = np.random.default_rng(net.config.seed + 1)
    stopper = EarlyStopping(tc.patience)
    best = net.copy()
    history = []

    for epoch in range(1, tc.max_epochs + 1):
        batch_losses = []
        for idx in _batches(len(X_train), tc.batch_size, rng):
            loss, grads = loss_and_grad(net, X_train[idx], Y_train[idx], tc.weights)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(
                    f"non-finite loss/gradient at epoch {epoch} "
                    f"(batch of {len(idx)}, loss={loss}, |x|max={np.abs(X_train[idx]).max():.3g})"
                )
            batch_losses.append(loss * len(idx))
            opt.step(net.params, grads)
        train_loss = float(sum(batch_losses) / len(X_train))

        preds = forward(net, X_val)
        val_loss = multitask_loss(preds, Y_val, tc.weights)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report = evaluate(preds, Y_val)
        history.append({
            "epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
            "val_ccc_v": report.valence, "val_ccc_a": report.arousal, "val_ccc_d": report.dominance,
        })
        if stopper.update(epoch, val_loss):
            best = net.copy()
        if stopper.should_stop:
            break
    return best, history


def predict_and_evaluate(net: Network, X, Y) -> CccReport:
    return evaluate(forward(net, X), Y)


# --- checkpoints ----------------------------------------------------------


def save_network(net: Network, path, extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(net.config),
        "standardizer": None if net.standardizer is None else {
            "mean": net.standardizer.mean_.tolist(), "scale": net.standardizer.scale_.tolist(),
        },
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in net.params.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_network(path):
    """Returns ``(network, extra)`` from a checkpoint written by :func:`save_network`."""
    with open(os.fspath(path), encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    cfg = ModelConfig(**doc["config"])
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    std = None
    if doc["standardizer"] is not None:
        std = Standardizer()
        std.mean_ = np.array(doc["standardizer"]["mean"])
        std.scale_ = np.array(doc["standardizer"]["scale"])
    return Network(cfg, params, std), doc.get("extra", {})


# --- estimator ------------------------------------------------------------


def pad_sequences(sequences, seq_len: int) -> np.ndarray:
    """Truncate or zero-pad a list of (frames x D) arrays to ``seq_len`` frames."""
    sequences = [np.asarray(s, dtype=np.float64) for s in sequences]
    dim = sequences[0].shape[1]
    out = np.zeros((len(sequences), seq_len, dim))
    for i, s in enumerate(sequences):
        k = min(seq_len, s.shape[0])
        out[i, :k] = s[:k]
    return out


class MultitaskRegressor(RegressorMixin, BaseEstimator):
    """Valence/arousal/dominance regressor trained on a weighted CCC loss.

    Parameters
    ----------
    hidden : tuple of int, default=(64, 64, 64)
        Hidden layer sizes.
    cell : {"dense", "lstm"}, default="dense"
        Hidden layer type. ``mode="sequence"`` requires ``"lstm"``.
    mode : {"vector", "sequence"}, default="vector"
        Input is ``N x D`` (vector) or ``N x T x D`` (sequence).
    seq_len : int, default=300
        Sequence length the network is built for (sequence mode only).
    seed : int, default=0
    max_epochs, patience : int
        Epoch budget and early-stopping patience.
    learning_rate : float, default=1e-3
    batch_size : int or None, default=None
        None trains full-batch.
    weights : tuple of 3 floats, default=(0.1, 0.5, 0.4)
        Loss weights for valence, arousal and dominance.
    validation_fraction : float, default=0.1
        Share of the training rows held out for early stopping when ``fit``
        is not given explicit validation data.

    Attributes
    ----------
    network_ : Network
        Best-validation snapshot.
    history_ : list of dict
        Per-epoch training record.
    """

    def __init__(self, hidden=(64, 64, 64), cell="dense", mode="vector", seq_len=300, seed=0,
                 max_epochs=100, patience=10, learning_rate=1e-3, batch_size=None,
                 weights=(0.1, 0.5, 0.4), validation_fraction=0.1):
        self.hidden = hidden
        self.cell = cell
        self.mode = mode
        self.seq_len = seq_len
        self.seed = seed
        self.max_epochs = max_epochs
        self.patience = patience
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.weights = weights
        self.validation_fraction = validation_fraction

    def _validate(self, X, y=None, reset=True):
        kw = dict(dtype=np.float64, allow_nd=self.mode == "sequence")
        if y is None:
            return validate_data(self, X, reset=reset, **kw)
        return validate_data(self, X, y, multi_output=True, reset=reset, **kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.max_epochs, self.patience, self.learning_rate,
                           batch_size=self.batch_size, weights=TaskWeights(*self.weights))

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = self._validate(X, y)
        y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
        if y.shape[1] != 3:
            raise ValueError(f"y must have 3 columns (valence, arousal, dominance), got {y.shape[1]}")
        if X_val is None:
            rng = np.random.default_rng(self.seed)
            order = rng.permutation(len(X))
            n_val = max(2, int(round(len(X) * self.validation_fraction)))
            val_idx, tr_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
            X, X_val, y, y_val = X[tr_idx], X[val_idx], y[tr_idx], y[val_idx]
        else:
            X_val = check_array(X_val, dtype=np.float64, allow_nd=self.mode == "sequence")
            y_val = np.asarray(y_val, dtype=np.float64)
        steps = X.shape[1] if self.mode == "sequence" else self.seq_len
        cfg = ModelConfig(X.shape[-1], tuple(self.hidden), self.mode, self.cell, steps, self.seed)
        self.network_, self.history_ = train(init_network(cfg), X, y, X_val, y_val, self.train_config())
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = self._validate(X, reset=False)
        return forward(self.network_, X)

    def score(self, X, y, sample_weight=None):
        """Mean CCC over the three dimensions."""
        return self.evaluate(X, y).mean

    def evaluate(self, X, y) -> CccReport:
        return evaluate(self.predict(X), y)
