"""Stacked LSTM regressor: cell, dropout, dense head, presets, and model files.

Cell equations (gate blocks stacked in the order i, f, g, o)::

    z   = W x_t + U h_{t-1} + b
    i   = sigmoid(z_i)    f = sigmoid(z_f)    o = sigmoid(z_o)
    g   = tanh(z_g)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Every LSTM layer returns its full hidden sequence and starts from
h_0 = c_0 = 0. The batched forward pass keeps everything needed by
:func:`pourlstm.training.backward` in a :class:`ForwardCache`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from . import numerics as nx
from .numerics import Rng, ShapeError

N_FEATURES = 9
GATE_ORDER = ("i", "f", "g", "o")
FORMAT_VERSION = 1
PRESETS = ("starting", "second", "final")


@dataclass
class LstmLayerParams:
    W: np.ndarray  # 4H x D
    U: np.ndarray  # 4H x H
    b: np.ndarray  # 4H x 1

    def __post_init__(self):
        self.W = nx.as_matrix(self.W)
        self.U = nx.as_matrix(self.U)
        self.b = nx.as_matrix(self.b)
        H = self.U.shape[1]
        if self.U.shape != (4 * H, H):
            raise ShapeError(f"U must be 4H x H, got {self.U.shape}")
        if self.W.shape[0] != 4 * H:
            raise ShapeError(f"W must have 4H={4 * H} rows, got {self.W.shape}")
        if self.b.shape != (4 * H, 1):
            raise ShapeError(f"b must be {4 * H} x 1, got {self.b.shape}")

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, rng: Rng, input_size: int, hidden_size: int, forget_bias: float = 1.0):
        H = hidden_size
        b = np.zeros((4 * H, 1))
        b[H:2 * H] = forget_bias
        return cls(nx.glorot_uniform(rng, 4 * H, input_size), nx.glorot_uniform(rng, 4 * H, H), b)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int):
        H = hidden_size
        return cls(np.zeros((4 * H, input_size)), np.zeros((4 * H, H)), np.zeros((4 * H, 1)))


@dataclass
class DenseParams:
    W: np.ndarray  # 1 x H
    b: np.ndarray  # 1 x 1

    def __post_init__(self):
        self.W = nx.as_matrix(self.W)
        self.b = nx.as_matrix(self.b)
        if self.W.shape[0] != 1 or self.b.shape != (1, 1):
            raise ShapeError(f"dense head must map to one output, got W {self.W.shape}, b {self.b.shape}")

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, rng: Rng, input_size: int):
        return cls(nx.glorot_uniform(rng, 1, input_size), np.zeros((1, 1)))


@dataclass
class Dropout:
    rate: float

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")


Layer = Union[LstmLayerParams, Dropout, DenseParams]


@dataclass
class NetworkSpec:
    layers: list
    input_size: int = N_FEATURES
    preset_name: str = "custom"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.layers or not isinstance(self.layers[-1], DenseParams):
            raise ValueError("the last layer must be the dense head")
        if sum(isinstance(l, DenseParams) for l in self.layers) != 1:
            raise ValueError("exactly one dense layer is allowed")
        width = self.input_size
        for k, layer in enumerate(self.layers):
            if isinstance(layer, LstmLayerParams):
                if layer.input_size != width:
                    raise ShapeError(f"layer {k}: LSTM expects {layer.input_size} inputs, receives {width}")
                width = layer.hidden_size
            elif isinstance(layer, DenseParams):
                if layer.input_size != width:
                    raise ShapeError(f"layer {k}: dense head expects {layer.input_size} inputs, receives {width}")
            elif not isinstance(layer, Dropout):
                raise TypeError(f"layer {k}: unsupported layer type {type(layer).__name__}")

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed ``"<layer index>.<name>"``, in layer order.

        The arrays are the live ones: updating them in place updates the net.
        """
        out = {}
        for k, layer in enumerate(self.layers):
            if isinstance(layer, LstmLayerParams):
                out[f"{k}.W"], out[f"{k}.U"], out[f"{k}.b"] = layer.W, layer.U, layer.b
            elif isinstance(layer, DenseParams):
                out[f"{k}.W"], out[f"{k}.b"] = layer.W, layer.b
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    @property
    def dropout_rates(self) -> list[float]:
        return [l.rate for l in self.layers if isinstance(l, Dropout)]

    @property
    def lstm_layers(self) -> list[LstmLayerParams]:
        return [l for l in self.layers if isinstance(l, LstmLayerParams)]

    def copy(self) -> NetworkSpec:
        return NetworkSpec.from_dict(self.to_dict())

    def without_dropout(self) -> NetworkSpec:
        """Copy sharing the same parameter arrays, with every dropout rate set to 0."""
        layers = [Dropout(0.0) if isinstance(l, Dropout) else l for l in self.layers]
        return NetworkSpec(layers, self.input_size, self.preset_name)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, LstmLayerParams):
                layers.append({
                    "kind": "lstm",
                    "input_size": layer.input_size,
                    "hidden_size": layer.hidden_size,
                    "W": layer.W.tolist(),
                    "U": layer.U.tolist(),
                    "b": layer.b.tolist(),
                })
            elif isinstance(layer, Dropout):
                layers.append({"kind": "dropout", "rate": layer.rate})
            else:
                layers.append({
                    "kind": "dense",
                    "input_size": layer.input_size,
                    "output_size": 1,
                    "W": layer.W.tolist(),
                    "b": layer.b.tolist(),
                })
        return {
            "format_version": FORMAT_VERSION,
            "preset_name": self.preset_name,
            "input_size": self.input_size,
            "gate_order": list(GATE_ORDER),
            "layers": layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {d.get('format_version')!r}")
        if tuple(d.get("gate_order", GATE_ORDER)) != GATE_ORDER:
            raise ValueError(f"gate order must be {list(GATE_ORDER)}, got {d['gate_order']}")
        layers = []
        for entry in d["layers"]:
            kind = entry["kind"]
            if kind == "lstm":
                layers.append(LstmLayerParams(entry["W"], entry["U"], entry["b"]))
            elif kind == "dropout":
                layers.append(Dropout(float(entry["rate"])))
            elif kind == "dense":
                layers.append(DenseParams(entry["W"], entry["b"]))
            else:
                raise ValueError(f"unknown layer kind {kind!r}")
        return cls(layers, int(d["input_size"]), d.get("preset_name", "custom"))


def build_preset(name: str, rng: Rng, hidden_size: int = 16, input_size: int = N_FEATURES) -> NetworkSpec:
    """Construct one of the three named architectures.

    ``starting``: LSTM, Dense(1)
    ``second``:   LSTM x5, Dropout(0.2), Dense(1)
    ``final``:    LSTM x5, Dropout(0.2), LSTM, Dropout(0.15), Dense(1)
    """
    if name == "starting":
        plan = ["lstm", "dense"]
    elif name == "second":
        plan = ["lstm"] * 5 + [0.2, "dense"]
    elif name == "final":
        plan = ["lstm"] * 5 + [0.2, "lstm", 0.15, "dense"]
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")

    layers, width = [], input_size
    for item in plan:
        if item == "lstm":
            layers.append(LstmLayerParams.init(rng, width, hidden_size))
            width = hidden_size
        elif item == "dense":
            layers.append(DenseParams.init(rng, width))
        else:
            layers.append(Dropout(item))
    return NetworkSpec(layers, input_size, name)


def zero_network(name: str, hidden_size: int = 16, input_size: int = N_FEATURES, dense_bias: float = 0.0) -> NetworkSpec:
    net = build_preset(name, Rng(0), hidden_size, input_size)
    for p in net.parameters().values():
        p[...] = 0.0
    net.layers[-1].b[0, 0] = dense_bias
    return net


# --- single step, column-vector form -------------------------------------------------

def lstm_cell_step(p: LstmLayerParams, x_t, h_prev, c_prev):
    """One cell update on column vectors (x_t: D x 1, h_prev and c_prev: H x 1).

    Returns ``(h_t, c_t, gate_cache)`` where gate_cache maps i, f, g, o, c to H x 1 arrays.
    """
    H = p.hidden_size
    x_t, h_prev, c_prev = nx.as_matrix(x_t), nx.as_matrix(h_prev), nx.as_matrix(c_prev)
    if x_t.shape != (p.input_size, 1):
        raise ShapeError(f"x_t must be {p.input_size} x 1, got {x_t.shape}")
    if h_prev.shape != (H, 1) or c_prev.shape != (H, 1):
        raise ShapeError(f"h_prev and c_prev must be {H} x 1, got {h_prev.shape} and {c_prev.shape}")
    z = nx.add(nx.add(nx.matmul(p.W, x_t), nx.matmul(p.U, h_prev)), p.b)
    i = nx.sigmoid(z[:H])
    f = nx.sigmoid(z[H:2 * H])
    g = nx.tanh(z[2 * H:3 * H])
    o = nx.sigmoid(z[3 * H:])
    c = nx.add(nx.hadamard(f, c_prev), nx.hadamard(i, g))
    h = nx.hadamard(o, nx.tanh(c))
    return h, c, {"i": i, "f": f, "g": g, "o": o, "c": c}


# --- dropout -------------------------------------------------------------------------

def dropout_apply(rate: float, rng: Rng | None, x, mode: str = "train"):
    """Inverted dropout.

    In train mode each entry survives with probability ``1 - rate`` and is
    scaled by ``1 / (1 - rate)``. Returns ``(output, keep_mask)``; infer mode
    (or rate 0) is the identity with an all-true mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "infer" or rate == 0.0:
        return x.copy(), np.ones(x.shape, dtype=bool)
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an Rng")
    keep = rng.random(x.shape) >= rate
    return np.where(keep, x / (1.0 - rate), 0.0), keep


# --- batched layer passes ------------------------------------------------------------

@dataclass
class LstmCache:
    x: np.ndarray      # N x T x D layer input
    gates: np.ndarray  # N x T x 4H activated gates [i, f, g, o]
    c: np.ndarray      # N x T x H
    tanh_c: np.ndarray
    h: np.ndarray      # N x T x H


@dataclass
class DropoutCache:
    keep: np.ndarray
    rate: float


@dataclass
class DenseCache:
    x: np.ndarray


@dataclass
class ForwardCache:
    layers: list = field(default_factory=list)
    steps: int = 0
    mode: str = "train"


def lstm_layer_forward(p: LstmLayerParams, x: np.ndarray):
    N, T, _ = x.shape
    H = p.hidden_size
    proj = x @ p.W.T + p.b[:, 0]  # input contribution for all steps at once
    Ut = p.U.T
    gates = np.empty((N, T, 4 * H))
    c_all = np.empty((N, T, H))
    tc_all = np.empty((N, T, H))
    h_all = np.empty((N, T, H))
    h = np.zeros((N, H))
    c = np.zeros((N, H))
    for t in range(T):
        z = proj[:, t] + h @ Ut
        a = gates[:, t]
        a[:, :2 * H] = nx.sigmoid(z[:, :2 * H])
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        a[:, 3 * H:] = nx.sigmoid(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
        tc = np.tanh(c)
        h = a[:, 3 * H:] * tc
        c_all[:, t], tc_all[:, t], h_all[:, t] = c, tc, h
    return h_all, LstmCache(x, gates, c_all, tc_all, h_all)


def lstm_layer_backward(p: LstmLayerParams, cache: LstmCache, dh_seq: np.ndarray):
    """Backpropagation through time for one layer.

    Returns ``(dx, {"W": dW, "U": dU, "b": db})``.
    """
    N, T, H = dh_seq.shape
    D = p.input_size
    a, c_all, tc_all = cache.gates, cache.c, cache.tanh_c
    dz_all = np.empty((N, T, 4 * H))
    dh_next = np.zeros((N, H))
    dc_next = np.zeros((N, H))
    U = p.U
    for t in range(T - 1, -1, -1):
        i, f = a[:, t, :H], a[:, t, H:2 * H]
        g, o = a[:, t, 2 * H:3 * H], a[:, t, 3 * H:]
        tc = tc_all[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        c_prev = c_all[:, t - 1] if t > 0 else np.zeros((N, H))
        dz = dz_all[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U
    h_prev = np.zeros_like(cache.h)
    h_prev[:, 1:] = cache.h[:, :-1]
    dz_flat = dz_all.reshape(N * T, 4 * H)
    grads = {
        "W": dz_flat.T @ cache.x.reshape(N * T, D),
        "U": dz_flat.T @ h_prev.reshape(N * T, H),
        "b": dz_flat.sum(axis=0)[:, None],
    }
    dx = dz_all @ p.W
    return dx, grads


def _as_batch(inputs, input_size: int) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected inputs of shape (N, T, {input_size}), got {x.shape}")
    if x.shape[2] != input_size:
        raise ShapeError(f"expected {input_size} features per timestep, got {x.shape[2]}")
    if x.shape[1] < 1:
        raise ShapeError("sequences need at least one timestep")
    return x


def forward_batch(net: NetworkSpec, inputs, mode: str = "infer", rng: Rng | None = None):
    """Run the network over an N x T x D batch.

    Returns ``(predictions N x T x 1, ForwardCache)``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = _as_batch(inputs, net.input_size)
    cache = ForwardCache(steps=x.shape[1], mode=mode)
    for layer in net.layers:
        if isinstance(layer, LstmLayerParams):
            out, lc = lstm_layer_forward(layer, x)
        elif isinstance(layer, Dropout):
            out, keep = dropout_apply(layer.rate, rng, x, mode)
            lc = DropoutCache(keep, layer.rate if mode == "train" else 0.0)
        else:
            out = x @ layer.W.T + layer.b[0, 0]
            lc = DenseCache(x)
        cache.layers.append(lc)
        x = out
    return x, cache


def forward_sequence(net: NetworkSpec, inputs, mode: str = "infer", rng: Rng | None = None):
    """Run one T x D sequence; returns ``(predictions T x 1, ForwardCache)``.

    T is free: a net trained on 1099-step padding runs an 834-step sequence as is.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a T x {net.input_size} sequence, got {x.shape}")
    pred, cache = forward_batch(net, x[None], mode, rng)
    return pred[0], cache


def predict(net: NetworkSpec, inputs) -> np.ndarray:
    """Inference-mode predictions for a T x D sequence or an N x T x D batch."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        return forward_sequence(net, x)[0]
    return forward_batch(net, x)[0]


# --- model files ---------------------------------------------------------------------

def save_model(net: NetworkSpec, path, norm_stats: dict | None = None) -> None:
    """Write the model as JSON; floats use shortest round-trip repr."""
    doc = net.to_dict()
    doc["norm_stats"] = norm_stats
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path):
    """Returns ``(net, norm_stats_dict_or_None)``."""
    doc = json.loads(Path(path).read_text())
    return NetworkSpec.from_dict(doc), doc.get("norm_stats")
