"""Command-line pipeline: synth, split, train, eval, predict, gradcheck.

Exit codes: 0 success, 2 usage or data-contract error, 3 training divergence,
4 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as D
from .model import (
    N_FEATURES,
    PRESETS,
    build_preset,
    forward_batch,
    forward_sequence,
    load_model,
    save_model,
)
from .numerics import Rng, ShapeError
from .training import DivergenceError, TrainConfig, evaluate_loss, grad_check, train

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_CHECK_FAILED = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _writable(path) -> Path:
    p = Path(path)
    parent = p.parent if str(p.parent) else Path(".")
    if not parent.is_dir():
        raise UsageError(f"directory {parent} does not exist")
    if not os.access(parent, os.W_OK):
        raise UsageError(f"directory {parent} is not writable")
    if p.is_dir():
        raise UsageError(f"{p} is a directory")
    return p


def _report_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create report directory {p}: {e}") from None
    if not os.access(p, os.W_OK):
        raise UsageError(f"report directory {p} is not writable")
    return p


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return p


def _indices(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--indices expects comma-separated integers, got {text!r}") from None


def _load_model(path):
    net, stats = load_model(_existing(path))
    if net.input_size != N_FEATURES:
        raise UsageError(f"model expects {net.input_size} features per step, corpora provide {N_FEATURES}")
    return net, (D.NormStats.from_dict(stats) if stats else None)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# --- commands ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    out = _writable(args.out)
    ds = D.synth_generate(args.n, seed=args.seed, t_range=(args.t_min, args.t_max), noise=args.noise)
    D.write_corpus(ds, out)
    print(f"wrote {len(ds)} sequences to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    ds = D.parse_corpus(_existing(args.corpus))
    out = Path(args.out)
    _report_dir(out)
    parts = D.split(ds, seed=args.seed, shuffle=not args.no_shuffle)
    for name, part in zip(("train", "val", "test"), parts):
        D.write_corpus(part, out / f"{name}.jsonl")
        print(f"{name} {len(part)}")
    return EXIT_OK


def cmd_train(args) -> int:
    corpus = _existing(args.corpus)
    model_out = _writable(args.out)
    history_out = _writable(args.history or model_out.with_suffix(".history.json"))
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}")
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        clip_norm=None if args.no_clip else args.clip_norm,
        loss_kind=args.loss,
        seed=args.seed,
        shuffle=not args.no_shuffle,
        lr=args.lr,
        record_timing=not args.no_timing,
    )

    ds = D.parse_corpus(corpus)
    train_ds, val_ds, test_ds = D.split(ds, seed=args.seed, shuffle=not args.no_shuffle)
    t_max = args.t_max or int(ds.lengths.max())
    train_b, val_b = D.pad_and_mask(train_ds, t_max), D.pad_and_mask(val_ds, t_max)
    stats = None
    if args.normalize:
        stats = D.normalize_fit(train_b)
        train_b, val_b = D.normalize_apply(train_b, stats), D.normalize_apply(val_b, stats)

    net = build_preset(args.preset, Rng(args.seed), hidden_size=args.hidden_size)

    def show(rec):
        print(f"{rec.epoch} {rec.train_loss!r} {rec.val_loss!r}", flush=True)

    run = {
        "preset": args.preset,
        "hidden_size": args.hidden_size,
        "normalize": bool(args.normalize),
        "t_max": t_max,
        "split_sizes": [len(train_ds), len(val_ds), len(test_ds)],
    }
    try:
        history = train(net, train_b, val_b, cfg, on_epoch=show)
    except DivergenceError as e:
        if e.history is not None:
            e.history.config.update(run)
            history_out.write_text(e.history.to_json())
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    history.config.update(run)
    save_model(net, model_out, stats.to_dict() if stats else None)
    history_out.write_text(history.to_json())
    return EXIT_OK


def _evaluate(net, stats, ds):
    batch = D.pad_and_mask(ds)
    if stats is not None:
        batch = D.normalize_apply(batch, stats)
    preds = np.concatenate([forward_batch(net, batch.inputs[s:s + 64])[0] for s in range(0, len(batch), 64)])
    r = preds - batch.targets
    rm = np.where(batch.mask[..., None], r, 0.0)
    per_seq = (rm * rm).sum(axis=(1, 2)) / batch.lengths
    metrics = {
        "masked_mse": float((rm * rm).sum() / batch.mask.sum()),
        "mse": float((r * r).sum() / r.size),
        "per_sequence": [{"index": i, "masked_mse": float(v)} for i, v in enumerate(per_seq)],
    }
    return metrics


def _sequence_prediction(net, stats, seq: D.MotionSequence) -> np.ndarray:
    x = seq.features()
    if stats is not None:
        x = D.normalize_features(x, stats)
    return forward_sequence(net, x)[0][:, 0]


def cmd_eval(args) -> int:
    net, stats = _load_model(args.model)
    ds = D.parse_corpus(_existing(args.corpus))
    report = _report_dir(args.report_dir)
    wanted = _indices(args.indices)
    bad = [i for i in wanted if not 0 <= i < len(ds)]
    if bad:
        raise UsageError(f"indices out of range for {len(ds)} sequences: {bad}")
    metrics = _evaluate(net, stats, ds)
    (report / "metrics.json").write_text(_dump(metrics))
    for i in wanted:
        D.write_prediction_csv(report / f"sequence_{i}.csv", ds[i].force, _sequence_prediction(net, stats, ds[i]))
    print(f"masked_mse {metrics['masked_mse']!r}")
    print(f"mse {metrics['mse']!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    net, stats = _load_model(args.model)
    ds = D.parse_corpus(_existing(args.corpus))
    if not 0 <= args.index < len(ds):
        raise UsageError(f"index {args.index} out of range for {len(ds)} sequences")
    seq = ds[args.index]
    sys.stdout.write(D.format_prediction_csv(seq.force, _sequence_prediction(net, stats, seq)))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    net = build_preset(args.preset, Rng(args.seed), hidden_size=args.hidden_size)
    rng = Rng(args.seed + 1)
    n, t = 2, args.steps
    x = rng.normal(0.0, 1.0, (n, t, N_FEATURES))
    y = rng.normal(0.0, 1.0, (n, t, 1))
    lengths = np.array([t, max(1, (2 * t) // 3)])
    mask = np.arange(t)[None, :] < lengths[:, None]
    ok = True
    for kind in ("mse", "masked_mse"):
        err = grad_check(net, x, y, mask, kind, h=args.h, corrupt=args.corrupt)
        passed = err < args.tol
        ok &= passed
        print(f"{kind} max_rel_error={err:.3e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# --- parser --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="pourlstm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON file of flag values; explicit flags win")
        if corpus:
            p.add_argument("--corpus", required=True, help="JSON Lines corpus")

    p = sub.add_parser("synth", help="write a synthetic corpus")
    common(p, corpus=False)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--t-min", type=int, default=64)
    p.add_argument("--t-max", type=int, default=128)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="write train/val/test corpora (80/15/5)")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-shuffle", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a preset")
    common(p)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--history", help="history JSON path (default: <out>.history.json)")
    p.add_argument("--preset", choices=PRESETS, default="final")
    p.add_argument("--hidden-size", type=int, default=16)
    p.add_argument("--loss", choices=("mse", "masked", "masked_mse"), default="masked")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--t-max", type=int, help="padding length (default: longest sequence)")
    p.add_argument("--no-timing", action="store_true", help="record wall_ms as 0 for reproducible history files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics and per-sequence CSVs for a corpus")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--report-dir", "--out", dest="report_dir", required=True)
    p.add_argument("--indices", help="comma-separated sequence indices to export as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="t,actual,predicted CSV for one sequence on stdout")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    common(p, corpus=False)
    p.add_argument("--preset", choices=PRESETS, default="final")
    p.add_argument("--hidden-size", type=int, default=3)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help="inflate one analytic entry by 10%% (checker self-test)")
    p.set_defaults(func=cmd_gradcheck)
    return parser, sub


def parse_args(argv=None):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            parser.error(f"cannot read --config {args.config}: {e}")
        if not isinstance(overrides, dict):
            parser.error("--config must hold a JSON object")
        cmd_parser = sub.choices[args.command]
        known = {a.dest for a in cmd_parser._actions}
        unknown = sorted(set(k.replace("-", "_") for k in overrides) - known)
        if unknown:
            parser.error(f"--config has unknown keys: {', '.join(unknown)}")
        cmd_parser.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, D.CorpusError, ShapeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
