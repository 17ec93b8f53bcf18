"""Pouring corpora: schema, JSON Lines I/O, padding, splitting, scaling, synthesis.

Each trial carries two time series, the rotation angle ``theta`` (degrees)
and the measured weight ``force`` (lbf), plus eight per-trial constants:
weights before pouring, with an empty cup and after pouring (lbf), the
receiving cup's diameter and height, the pouring container's diameter and
height (mm), and the material density ``rho``.

The network input at each timestep is the nine features in ``INPUT_FEATURES``
order (angle first, then the eight constants tiled over time); the target is
the weight.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng, sigmoid

INPUT_FEATURES = ("theta", "f_init", "f_empty", "f_final", "d_cup", "h_cup", "d_ctn", "h_ctn", "rho")
CONSTANT_FEATURES = INPUT_FEATURES[1:]
RECORD_KEYS = ("theta", "force") + CONSTANT_FEATURES
POSITIVE_FEATURES = ("d_cup", "h_cup", "d_ctn", "h_ctn")


class CorpusError(ValueError):
    """Malformed corpus record; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class MotionSequence:
    theta: np.ndarray
    force: np.ndarray
    f_init: float
    f_empty: float
    f_final: float
    d_cup: float
    h_cup: float
    d_ctn: float
    h_ctn: float
    rho: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.force = np.asarray(self.force, dtype=np.float64).reshape(-1)
        if len(self.theta) != len(self.force):
            raise ValueError(f"theta has {len(self.theta)} steps but force has {len(self.force)}")
        if len(self.theta) < 1:
            raise ValueError("a sequence needs at least one timestep")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.force))):
            raise ValueError("theta and force must be finite")
        for name in CONSTANT_FEATURES:
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            setattr(self, name, value)
        for name in POSITIVE_FEATURES:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def constants(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in CONSTANT_FEATURES)

    def features(self) -> np.ndarray:
        """T x 9 input matrix."""
        out = np.empty((len(self), len(INPUT_FEATURES)))
        out[:, 0] = self.theta
        out[:, 1:] = self.constants
        return out

    def to_record(self) -> dict:
        rec = {"theta": self.theta.tolist(), "force": self.force.tolist()}
        rec.update(zip(CONSTANT_FEATURES, self.constants))
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> MotionSequence:
        missing = [k for k in RECORD_KEYS if k not in rec]
        if missing:
            raise ValueError(f"missing key(s): {', '.join(missing)}")
        return cls(**{k: rec[k] for k in RECORD_KEYS})


@dataclass
class Dataset:
    sequences: list
    provenance: str = "real"

    def __len__(self) -> int:
        return len(self.sequences)

    def __getitem__(self, i) -> MotionSequence:
        return self.sequences[i]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.sequences], dtype=np.int64)

    def subset(self, indices) -> Dataset:
        return Dataset([self.sequences[i] for i in indices], self.provenance)


@dataclass
class PaddedBatch:
    inputs: np.ndarray   # N x Tmax x 9
    targets: np.ndarray  # N x Tmax x 1
    mask: np.ndarray     # N x Tmax, True on real timesteps
    lengths: np.ndarray  # N

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def t_max(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> PaddedBatch:
        idx = np.asarray(indices)
        return PaddedBatch(self.inputs[idx], self.targets[idx], self.mask[idx], self.lengths[idx])

    def unpad(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """``(inputs T x 9, targets T x 1)`` of sequence ``i`` without padding."""
        t = int(self.lengths[i])
        return self.inputs[i, :t], self.targets[i, :t]


# --- JSON Lines ----------------------------------------------------------------------

def _lines(source):
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def parse_corpus(source, provenance: str = "real") -> Dataset:
    """Read a JSON Lines corpus (path, open file, or iterable of lines).

    Blank lines are skipped. Any invalid record raises :class:`CorpusError`
    carrying its line number.
    """
    seqs = []
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"invalid JSON ({e.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise CorpusError("record must be a JSON object", lineno)
        try:
            seqs.append(MotionSequence.from_record(rec))
        except (TypeError, ValueError) as e:
            raise CorpusError(str(e), lineno) from None
    return Dataset(seqs, provenance)


def write_corpus(ds: Dataset, dest) -> None:
    """Write one JSON object per line. Floats print in shortest round-trip form."""
    text = "".join(json.dumps(s.to_record()) + "\n" for s in ds.sequences)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


# --- padding -------------------------------------------------------------------------

def pad_and_mask(ds: Dataset, t_max: int | None = None) -> PaddedBatch:
    """Zero-pad every sequence to ``t_max`` steps (default: the longest one)."""
    if len(ds) == 0:
        raise ValueError("cannot pad an empty dataset")
    lengths = ds.lengths
    longest = int(lengths.max())
    if t_max is None:
        t_max = longest
    elif t_max < longest:
        raise ValueError(f"t_max={t_max} is shorter than the longest sequence ({longest})")
    n = len(ds)
    inputs = np.zeros((n, t_max, len(INPUT_FEATURES)))
    targets = np.zeros((n, t_max, 1))
    for i, s in enumerate(ds.sequences):
        t = len(s)
        inputs[i, :t] = s.features()
        targets[i, :t, 0] = s.force
    mask = np.arange(t_max)[None, :] < lengths[:, None]
    return PaddedBatch(inputs, targets, mask, lengths)


# --- splitting -----------------------------------------------------------------------

def split_sizes(n: int, ratios=(0.80, 0.15, 0.05)) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if n < 3:
        raise ValueError(f"need at least 3 sequences to split, got {n}")
    # the epsilon guards products like 0.15 * 20 = 3.0000000000000004 in the other direction
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    return n_train, n_val, n - n_train - n_val


def split_indices(n: int, ratios=(0.80, 0.15, 0.05), seed: int = 0, shuffle: bool = True):
    n_train, n_val, _ = split_sizes(n, ratios)
    order = Rng(seed).permutation(n) if shuffle else np.arange(n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(ds: Dataset, ratios=(0.80, 0.15, 0.05), seed: int = 0, shuffle: bool = True):
    """Train/validation/test datasets: floor, floor, remainder (1307 -> 1045/196/66)."""
    return tuple(ds.subset(idx) for idx in split_indices(len(ds), ratios, seed, shuffle))


# --- min-max scaling -----------------------------------------------------------------

@dataclass
class NormStats:
    mins: np.ndarray
    maxs: np.ndarray
    features: tuple = INPUT_FEATURES

    @property
    def degenerate(self) -> list[str]:
        return [f for f, lo, hi in zip(self.features, self.mins, self.maxs) if hi == lo]

    def to_dict(self) -> dict:
        return {f: {"min": float(lo), "max": float(hi)} for f, lo, hi in zip(self.features, self.mins, self.maxs)}

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        missing = [f for f in INPUT_FEATURES if f not in d]
        if missing:
            raise ValueError(f"normalization stats missing feature(s): {', '.join(missing)}")
        return cls(np.array([d[f]["min"] for f in INPUT_FEATURES], dtype=np.float64),
                   np.array([d[f]["max"] for f in INPUT_FEATURES], dtype=np.float64))


def normalize_fit(data) -> NormStats:
    """Per-feature min and max over real (unpadded) timesteps of a Dataset or PaddedBatch."""
    batch = pad_and_mask(data) if isinstance(data, Dataset) else data
    real = batch.inputs[batch.mask]
    return NormStats(real.min(axis=0), real.max(axis=0))


def normalize_apply(batch: PaddedBatch, stats: NormStats) -> PaddedBatch:
    """Map features to (x - min) / (max - min); padding stays 0, targets untouched.

    Features with zero range map to 0. Values outside the fitted range are not clamped.
    """
    span = stats.maxs - stats.mins
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (batch.inputs - stats.mins) / safe, 0.0)
    inputs = np.where(batch.mask[..., None], scaled, 0.0)
    return PaddedBatch(inputs, batch.targets.copy(), batch.mask.copy(), batch.lengths.copy())


def normalize_features(x: np.ndarray, stats: NormStats) -> np.ndarray:
    """Scale an unpadded T x 9 input matrix."""
    span = stats.maxs - stats.mins
    return np.where(span > 0, (x - stats.mins) / np.where(span > 0, span, 1.0), 0.0)


# --- synthetic corpus ----------------------------------------------------------------

@dataclass
class SynthRanges:
    t_range: tuple = (64, 128)
    d_cup: tuple = (60.0, 100.0)
    h_cup: tuple = (80.0, 140.0)
    d_ctn: tuple = (50.0, 90.0)
    h_ctn: tuple = (70.0, 160.0)
    rho: tuple = (0.9, 1.4)
    f_empty: tuple = (0.05, 0.15)
    fill: tuple = (0.3, 0.8)           # f_init - f_empty
    remaining: tuple = (0.05, 0.4)     # share of the fill left after pouring
    theta_end: float = 120.0
    jitter: float = 0.5                # relative spread of angle increments, < 1
    steepness: float = 0.25            # logistic slope per degree, times rho


def pour_onset(d_ctn: float, h_ctn: float) -> float:
    """Angle in degrees where pouring starts: the container's rim-to-base diagonal angle."""
    return float(np.degrees(np.arctan2(h_ctn, d_ctn)))


def synth_sequence(rng: Rng, length: int, r: SynthRanges, noise: float = 0.0) -> MotionSequence:
    d_cup = rng.uniform(*r.d_cup)
    h_cup = rng.uniform(*r.h_cup)
    d_ctn = rng.uniform(*r.d_ctn)
    h_ctn = rng.uniform(*r.h_ctn)
    rho = rng.uniform(*r.rho)
    f_empty = rng.uniform(*r.f_empty)
    f_init = f_empty + rng.uniform(*r.fill)
    f_final = f_empty + rng.uniform(*r.remaining) * (f_init - f_empty)

    theta = np.zeros(length)
    if length > 1:
        steps = 1.0 + r.jitter * rng.uniform(-1.0, 1.0, length - 1)
        theta[1:] = np.cumsum(steps)
        theta *= r.theta_end / theta[-1]
    k = r.steepness * rho
    onset = pour_onset(d_ctn, h_ctn)
    drop = sigmoid(-k * (theta - onset))
    force = f_final + (f_init - f_final) * drop
    if noise > 0:
        force = force + rng.normal(0.0, noise, length)
    return MotionSequence(theta, force, f_init, f_empty, f_final, d_cup, h_cup, d_ctn, h_ctn, rho)


def synth_generate(n: int, seed: int = 0, t_range: tuple | None = None, noise: float = 0.0,
                   ranges: SynthRanges | None = None) -> Dataset:
    """Seeded synthetic pouring corpus.

    The angle climbs from 0 to ``theta_end`` degrees in jittered positive
    steps. The weight follows a logistic drop from ``f_init`` to ``f_final``
    centred on the pour-onset angle, with slope proportional to ``rho``,
    plus optional Gaussian noise of standard deviation ``noise``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    r = ranges or SynthRanges()
    if t_range is not None:
        r = SynthRanges(**{**r.__dict__, "t_range": tuple(t_range)})
    lo, hi = r.t_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid t_range {r.t_range}")
    rng = Rng(seed)
    seqs = [synth_sequence(rng, int(rng.integers(lo, hi + 1)), r, noise) for _ in range(n)]
    return Dataset(seqs, "synthetic")


# --- prediction CSV ------------------------------------------------------------------

def format_prediction_csv(actual, predicted) -> str:
    actual = np.asarray(actual, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if actual.shape != predicted.shape:
        raise ValueError("actual and predicted lengths differ")
    buf = io.StringIO()
    buf.write("t,actual,predicted\n")
    for t, (a, p) in enumerate(zip(actual.tolist(), predicted.tolist())):
        buf.write(f"{t},{a!r},{p!r}\n")
    return buf.getvalue()


def write_prediction_csv(path, actual, predicted) -> None:
    Path(path).write_text(format_prediction_csv(actual, predicted), encoding="utf-8")


def read_prediction_csv(source) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parse ``t,actual,predicted`` text (path or string); returns (t, actual, predicted)."""
    text = Path(source).read_text(encoding="utf-8") if isinstance(source, Path) else source
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["t", "actual", "predicted"]:
        raise ValueError("expected header t,actual,predicted")
    body = rows[1:]
    t = np.array([int(r[0]) for r in body], dtype=np.int64)
    actual = np.array([float(r[1]) for r in body])
    predicted = np.array([float(r[2]) for r in body])
    return t, actual, predicted
