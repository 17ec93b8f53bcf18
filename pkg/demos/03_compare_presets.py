"""
Loss against epochs for the three presets
=========================================

Trains each preset on the same synthetic corpus with the masked loss and
Adam at lr 1e-4, then writes a ``loss_vs_epochs.csv`` that any plotting
tool can draw. Takes a few minutes on one core.
"""

import csv

import numpy as np

from pourlstm import Rng, TrainConfig, build_preset, normalize_apply, normalize_fit, pad_and_mask, synth_generate, train

EPOCHS = 15

corpus = synth_generate(237, seed=11, t_range=(48, 96), noise=0.01)
tr = pad_and_mask(corpus.subset(range(200)))
va = pad_and_mask(corpus.subset(range(200, 237)))
stats = normalize_fit(tr)
tr, va = normalize_apply(tr, stats), normalize_apply(va, stats)

# Reference point: always predict the mean training force.
mean = tr.targets[tr.mask].mean()
baseline = np.mean((va.targets[va.mask] - mean) ** 2)
print(f"mean-predictor validation MSE: {baseline:.5f}")

curves = {}
for name in ("starting", "second", "final"):
    net = build_preset(name, Rng(0))
    cfg = TrainConfig(epochs=EPOCHS, batch_size=2, loss_kind="masked_mse", lr=1e-4, seed=0)
    hist = train(net, tr, va, cfg, on_epoch=lambda r, n=name: print(f"{n:8s} epoch {r.epoch:2d}  train {r.train_loss:.5f}  val {r.val_loss:.5f}"))
    curves[name] = hist

with open("loss_vs_epochs.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["epoch"] + [f"{n}_{s}" for n in curves for s in ("train", "val")])
    for e in range(EPOCHS):
        w.writerow([e + 1] + [v for h in curves.values() for v in (h.train_losses[e], h.val_losses[e])])
print("wrote loss_vs_epochs.csv")
