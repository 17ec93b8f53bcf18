"""Stacked-LSTM per-timestep force regression for robotic pouring, in plain numpy."""

from .data import (
    INPUT_FEATURES,
    CorpusError,
    Dataset,
    MotionSequence,
    NormStats,
    PaddedBatch,
    normalize_apply,
    normalize_fit,
    pad_and_mask,
    parse_corpus,
    split,
    synth_generate,
    write_corpus,
)
from .model import (
    NetworkSpec,
    build_preset,
    forward_batch,
    forward_sequence,
    load_model,
    predict,
    save_model,
)
from .numerics import Rng, ShapeError
from .training import (
    AdamState,
    DivergenceError,
    TrainConfig,
    TrainHistory,
    grad_check,
    masked_mse,
    mse,
    train,
)

__version__ = "0.1.0"
