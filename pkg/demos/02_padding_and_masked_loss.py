"""
Zero padding and the masked loss
================================

Pads a corpus to a common length, then compares plain MSE over the padded
batch with the masked version that ignores padded timesteps.
"""

import numpy as np

from pourlstm import Rng, build_preset, masked_mse, mse, pad_and_mask, split, synth_generate
from pourlstm.model import forward_batch

corpus = synth_generate(40, seed=2, t_range=(30, 110))
print("lengths:", corpus.lengths.min(), "to", corpus.lengths.max())

train_ds, val_ds, test_ds = split(corpus, seed=0)
print("split sizes:", len(train_ds), len(val_ds), len(test_ds))

batch = pad_and_mask(corpus)
print("inputs", batch.inputs.shape, "targets", batch.targets.shape)
print("real timesteps per sequence (first five):", batch.mask.sum(axis=1)[:5])

# The eight constant features repeat at every real timestep and are zero in the padding.
i = 0
t = batch.lengths[i]
print("sequence 0 constants at t=0:", np.round(batch.inputs[i, 0, 1:], 3))
print("padding is zero:", np.all(batch.inputs[i, t:] == 0))

net = build_preset("starting", Rng(0))
pred, _ = forward_batch(net, batch.inputs)
print(f"untrained net: plain MSE {mse(pred, batch.targets):.5f}, masked MSE {masked_mse(pred, batch.targets, batch.mask):.5f}")

# A perfect predictor on the real steps scores zero under the masked loss even
# though its padded outputs are wrong, while plain MSE still charges for them.
perfect = np.where(batch.mask[..., None], batch.targets, 0.3)
print(f"perfect on real steps: plain MSE {mse(perfect, batch.targets):.5f}, masked MSE {masked_mse(perfect, batch.targets, batch.mask):.5f}")
