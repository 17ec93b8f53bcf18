"""
Unseen cups and shorter sequences
=================================

Trains on sequences padded to 128 steps, then evaluates on a separate corpus
whose receiving and pouring containers come from different size ranges and
whose longest sequence is 96 steps. The same network runs both lengths as is.
Running it with and without min-max input scaling is instructive. The
unseen container sizes fall outside the ranges the scaler was fitted on,
so the scaled inputs leave [0, 1] and scaling is not a free win here.
"""

import numpy as np

from pourlstm import Rng, TrainConfig, build_preset, normalize_apply, normalize_fit, pad_and_mask, synth_generate, train
from pourlstm.data import SynthRanges, normalize_features, write_prediction_csv
from pourlstm.model import forward_sequence
from pourlstm.training import evaluate_loss

seen = synth_generate(120, seed=1, t_range=(64, 128), noise=0.005)
unseen = synth_generate(30, seed=2, t_range=(40, 96), noise=0.005,
                        ranges=SynthRanges(d_ctn=(90.0, 110.0), h_ctn=(60.0, 90.0), d_cup=(100.0, 120.0)))

tr = pad_and_mask(seen, 128)
test = pad_and_mask(unseen)
print("training Tmax", tr.t_max, "| unseen Tmax", test.t_max)

for normalize in (False, True):
    stats = normalize_fit(tr) if normalize else None
    tr_in = normalize_apply(tr, stats) if normalize else tr
    te_in = normalize_apply(test, stats) if normalize else test
    net = build_preset("final", Rng(0))
    train(net, tr_in, None, TrainConfig(epochs=8, batch_size=2, loss_kind="masked_mse", seed=0))
    print(f"normalize={normalize!s:5s} train masked MSE {evaluate_loss(net, tr_in, 'masked_mse'):.5f}"
          f"  unseen masked MSE {evaluate_loss(net, te_in, 'masked_mse'):.5f}")

# Per-sequence curves for plotting, from the last (normalized) model.
for i in (3, 17, 25):
    seq = unseen[i]
    pred, _ = forward_sequence(net, normalize_features(seq.features(), stats))
    write_prediction_csv(f"unseen_{i}.csv", seq.force, pred[:, 0])
    print(f"sequence {i}: {len(seq)} steps -> {pred.shape[0]} predictions, wrote unseen_{i}.csv")
