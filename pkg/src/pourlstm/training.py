"""Losses, backpropagation through time, gradient checking, clipping, Adam, training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import (
    DenseCache,
    DenseParams,
    Dropout,
    DropoutCache,
    ForwardCache,
    LstmCache,
    LstmLayerParams,
    NetworkSpec,
    forward_batch,
    lstm_layer_backward,
)
from .numerics import Rng, ShapeError

log = logging.getLogger(__name__)

LOSS_KINDS = ("mse", "masked_mse")


class DivergenceError(RuntimeError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, epoch: int, batch: int | None, history: TrainHistory | None = None):
        where = f"epoch {epoch}" + (f", batch {batch}" if batch is not None else "")
        super().__init__(f"training diverged (non-finite loss) at {where}")
        self.epoch = epoch
        self.batch = batch
        self.history = history


def normalize_loss_kind(kind: str) -> str:
    if kind == "masked":
        return "masked_mse"
    if kind not in LOSS_KINDS:
        raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {kind!r}")
    return kind


# --- losses ----------------------------------------------------------------------------

def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    if pred.size == 0:
        raise ValueError("loss needs at least one value")
    return pred, target


def _check_mask(mask, pred):
    mask = np.asarray(mask, dtype=bool)
    if mask.size != pred.size:
        raise ShapeError(f"mask of shape {mask.shape} does not cover predictions of shape {pred.shape}")
    return mask.reshape(pred.shape)


def mse(pred, target) -> float:
    """Mean of squared residuals over every position."""
    pred, target = _check_pair(pred, target)
    r = pred - target
    return float(np.sum(r * r) / r.size)


def masked_mse(pred, target, mask) -> float:
    """Mean squared residual over mask-true positions only.

    Across a batch the squared residuals of all sequences are pooled and
    divided by the total number of true positions.
    """
    pred, target = _check_pair(pred, target)
    mask = _check_mask(mask, pred)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("mask selects no positions; masked loss is undefined")
    r = np.where(mask, pred - target, 0.0)
    return float(np.sum(r * r) / n)


def loss_and_grad(pred, target, mask, loss_kind: str):
    """Loss value and its derivative with respect to ``pred``."""
    loss_kind = normalize_loss_kind(loss_kind)
    pred, target = _check_pair(pred, target)
    if loss_kind == "mse":
        r = pred - target
        n = r.size
    else:
        mask = _check_mask(mask, pred)
        n = int(mask.sum())
        if n == 0:
            raise ValueError("mask selects no positions; masked loss is undefined")
        r = np.where(mask, pred - target, 0.0)
    return float(np.sum(r * r) / n), (2.0 / n) * r


# --- backpropagation -----------------------------------------------------------------

def backward_from_output(net: NetworkSpec, cache: ForwardCache, dpred) -> dict[str, np.ndarray]:
    """Propagate dL/dpred (N x T x 1) back through every layer."""
    if len(cache.layers) != len(net.layers):
        raise ValueError(f"cache holds {len(cache.layers)} layers, network has {len(net.layers)}")
    dout = np.asarray(dpred, dtype=np.float64)
    if dout.ndim == 2:
        dout = dout[None]
    if dout.shape[1] != cache.steps:
        raise ShapeError(f"gradient covers {dout.shape[1]} steps, cache holds {cache.steps}")
    grads = {}
    for k in range(len(net.layers) - 1, -1, -1):
        layer, lc = net.layers[k], cache.layers[k]
        if isinstance(layer, DenseParams) and isinstance(lc, DenseCache):
            H = layer.input_size
            flat = dout.reshape(-1, 1)
            grads[f"{k}.W"] = flat.T @ lc.x.reshape(-1, H)
            grads[f"{k}.b"] = flat.sum(axis=0, keepdims=True)
            dout = dout @ layer.W
        elif isinstance(layer, Dropout) and isinstance(lc, DropoutCache):
            dout = np.where(lc.keep, dout / (1.0 - lc.rate), 0.0)
        elif isinstance(layer, LstmLayerParams) and isinstance(lc, LstmCache):
            dout, g = lstm_layer_backward(layer, lc, dout)
            grads[f"{k}.W"], grads[f"{k}.U"], grads[f"{k}.b"] = g["W"], g["U"], g["b"]
        else:
            raise ValueError(f"layer {k}: cache entry {type(lc).__name__} does not match {type(layer).__name__}")
    return {name: grads[name] for name in net.parameters()}


def backward(net: NetworkSpec, cache: ForwardCache, pred, target, mask, loss_kind: str) -> dict[str, np.ndarray]:
    """Exact gradients of the selected loss for every parameter, keyed like ``net.parameters()``."""
    _, dpred = loss_and_grad(pred, target, mask, loss_kind)
    return backward_from_output(net, cache, dpred)


def _batched(inputs, target, mask):
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    y = y.reshape(x.shape[0], x.shape[1], 1)
    m = np.ones(y.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(y.shape[:2])
    return x, y, m


def compute_loss(net: NetworkSpec, inputs, target, mask, loss_kind: str) -> float:
    """Inference-mode loss (dropout off)."""
    x, y, m = _batched(inputs, target, mask)
    pred, _ = forward_batch(net, x, "infer")
    return loss_and_grad(pred, y, m, loss_kind)[0]


def reference_loss(net: NetworkSpec, inputs, target, mask, loss_kind: str, dtype=np.longdouble):
    """Loss from a plain per-sequence, per-step evaluation of the cell equations.

    Written independently of the batched engine and run in extended precision
    so finite differences built on it are not swamped by float64 roundoff.
    Dropout layers are skipped (inference semantics).
    """
    loss_kind = normalize_loss_kind(loss_kind)
    x, y, m = _batched(inputs, target, mask)
    x, y = x.astype(dtype), y.astype(dtype)
    half = dtype(0.5)

    def sig(z):
        return half * (1 + np.tanh(half * z))

    total, count = dtype(0), 0
    for s in range(x.shape[0]):
        seq = [x[s, t].reshape(-1, 1) for t in range(x.shape[1])]
        for layer in net.layers:
            if isinstance(layer, LstmLayerParams):
                W, U, b = (a.astype(dtype) for a in (layer.W, layer.U, layer.b))
                H = layer.hidden_size
                h = np.zeros((H, 1), dtype=dtype)
                c = np.zeros((H, 1), dtype=dtype)
                out = []
                for xt in seq:
                    z = W @ xt + U @ h + b
                    c = sig(z[H:2 * H]) * c + sig(z[:H]) * np.tanh(z[2 * H:3 * H])
                    h = sig(z[3 * H:]) * np.tanh(c)
                    out.append(h)
                seq = out
            elif isinstance(layer, DenseParams):
                W, b = layer.W.astype(dtype), layer.b.astype(dtype)
                seq = [W @ ht + b for ht in seq]
        for t, pt in enumerate(seq):
            if loss_kind == "mse" or m[s, t]:
                r = pt[0, 0] - y[s, t, 0]
                total += r * r
                count += 1
    if count == 0:
        raise ValueError("mask selects no positions; masked loss is undefined")
    return total / count


def compare_gradients(net: NetworkSpec, inputs, target, mask=None, loss_kind: str = "masked_mse",
                      h: float = 1e-5, dtype=np.longdouble):
    """Analytic and central-difference gradients, both keyed by parameter name.

    The analytic side is :func:`backward` on a train-mode pass with dropout
    rates forced to 0. The numeric side perturbs each parameter by +-h and
    evaluates :func:`reference_loss`. Parameters are restored bit-for-bit.
    """
    x, y, m = _batched(inputs, target, mask)
    plain = net.without_dropout()
    pred, cache = forward_batch(plain, x, "train")
    analytic = backward(plain, cache, pred, y, m, loss_kind)
    numeric = {}
    for name, p in plain.parameters().items():
        est = np.empty_like(p)
        for j in range(p.size):
            saved = p.flat[j]
            p.flat[j] = saved + h
            up = reference_loss(plain, x, y, m, loss_kind, dtype)
            p.flat[j] = saved - h
            down = reference_loss(plain, x, y, m, loss_kind, dtype)
            p.flat[j] = saved
            # divide by the step actually taken after float64 rounding of saved +- h
            taken = dtype(saved + h) - dtype(saved - h)
            est.flat[j] = float((up - down) / taken) if taken else 0.0
        numeric[name] = est
    return analytic, numeric


def max_relative_error(analytic: dict, numeric: dict, floor: float = 1e-8) -> float:
    worst = 0.0
    for name, g in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(g), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(g - n) / denom)))
    return worst


def grad_check(net: NetworkSpec, inputs, target, mask=None, loss_kind: str = "masked_mse",
               h: float = 1e-5, corrupt: bool = False, dtype=np.longdouble) -> float:
    """Max relative error between backprop and central differences.

    ``corrupt`` inflates the largest analytic entry by 10% before comparing,
    which must make the check fail; it exists to prove the checker can.
    """
    analytic, numeric = compare_gradients(net, inputs, target, mask, loss_kind, h, dtype)
    if corrupt:
        name = max(analytic, key=lambda k: np.max(np.abs(analytic[k])))
        j = int(np.argmax(np.abs(analytic[name])))
        analytic[name].flat[j] *= 1.1
    return max_relative_error(analytic, numeric)


# --- clipping and Adam ---------------------------------------------------------------

def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients together when their global L2 norm exceeds ``clip_norm``."""
    if clip_norm <= 0:
        raise ValueError(f"clip_norm must be positive, got {clip_norm}")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    s = clip_norm / norm
    return {k: g * s for k, g in grads.items()}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float = 1e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, lr, beta1, beta2, eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"{k}: gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# --- training loop -------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    clip_norm: float | None = 5.0
    loss_kind: str = "masked_mse"
    seed: int = 0
    shuffle: bool = True
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    record_timing: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        self.loss_kind = normalize_loss_kind(self.loss_kind)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    wall_ms: float


@dataclass
class TrainHistory:
    config: dict
    epochs: list = field(default_factory=list)
    param_checksum: str | None = None
    status: str = "running"

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": [asdict(r) for r in self.epochs],
            "param_checksum": self.param_checksum,
            "status": self.status,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> TrainHistory:
        return cls(d["config"], [EpochRecord(**r) for r in d["epochs"]], d.get("param_checksum"), d.get("status", "completed"))

    @property
    def train_losses(self) -> list[float]:
        return [r.train_loss for r in self.epochs]

    @property
    def val_losses(self) -> list[float]:
        return [r.val_loss for r in self.epochs]


def param_checksum(net: NetworkSpec) -> str:
    h = hashlib.sha256()
    for p in net.parameters().values():
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def _slice(batch, idx, loss_kind):
    x, y, m = batch.inputs[idx], batch.targets[idx], batch.mask[idx]
    if loss_kind == "masked_mse":
        # trailing all-padding steps contribute nothing to a masked loss
        t = int(np.max(batch.lengths[idx]))
        x, y, m = x[:, :t], y[:, :t], m[:, :t]
    return x, y, m


def evaluate_loss(net: NetworkSpec, batch, loss_kind: str, chunk: int = 64) -> float:
    """Full-pass loss over a padded batch with dropout off, pooled across chunks."""
    loss_kind = normalize_loss_kind(loss_kind)
    total, count = 0.0, 0
    n = batch.inputs.shape[0]
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        x, y, m = _slice(batch, idx, loss_kind)
        pred, _ = forward_batch(net, x, "infer")
        r = pred - y if loss_kind == "mse" else np.where(m[..., None], pred - y, 0.0)
        total += float(np.sum(r * r))
        count += r.size if loss_kind == "mse" else int(m.sum())
    return total / count


def _run_epochs(net, train_set, val_set, cfg, rng, params, state, history, on_epoch):
    n = train_set.inputs.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            x, y, m = _slice(train_set, idx, cfg.loss_kind)
            pred, cache = forward_batch(net, x, "train", rng)
            loss, dpred = loss_and_grad(pred, y, m, cfg.loss_kind)
            grads = backward_from_output(net, cache, dpred)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                history.status = "diverged"
                history.param_checksum = param_checksum(net)
                raise DivergenceError(epoch, b, history)
            if cfg.clip_norm is not None:
                grads = clip_gradients(grads, cfg.clip_norm)
            adam_step(params, grads, state)

        train_loss = evaluate_loss(net, train_set, cfg.loss_kind)
        val_loss = evaluate_loss(net, val_set, cfg.loss_kind) if val_set is not None else None
        wall_ms = (time.perf_counter() - t0) * 1000.0 if cfg.record_timing else 0.0
        if not np.isfinite(train_loss) or (val_loss is not None and not np.isfinite(val_loss)):
            history.status = "diverged"
            history.param_checksum = param_checksum(net)
            raise DivergenceError(epoch, None, history)
        rec = EpochRecord(epoch, train_loss, val_loss, wall_ms)
        history.epochs.append(rec)
        log.debug("epoch %d train %.6g val %s", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(rec)


def train(net: NetworkSpec, train_set, val_set, cfg: TrainConfig, on_epoch=None) -> TrainHistory:
    """Mini-batch Adam training; mutates ``net`` in place.

    Each epoch: seeded shuffle, then per batch forward (train mode), loss,
    backward, optional global-norm clipping and one Adam step. Train and
    validation losses are then recomputed over the full sets with dropout off.
    ``on_epoch`` is called with each :class:`EpochRecord` as it is produced.
    """
    if train_set.inputs.shape[2] != net.input_size:
        raise ShapeError(f"training data has {train_set.inputs.shape[2]} features, net expects {net.input_size}")
    rng = Rng(cfg.seed)
    params = net.parameters()
    state = AdamState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = TrainHistory(config=asdict(cfg))

    with np.errstate(over="ignore", invalid="ignore"):
        _run_epochs(net, train_set, val_set, cfg, rng, params, state, history, on_epoch)

    history.status = "completed"
    history.param_checksum = param_checksum(net)
    return history
