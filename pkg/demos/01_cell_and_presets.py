"""
LSTM cell and the three architectures
=====================================

Runs one cell update by hand, then builds the starting, second and final
presets and pushes sequences of different lengths through them.
"""

import numpy as np

from pourlstm import Rng, build_preset, forward_sequence
from pourlstm.model import LstmLayerParams, lstm_cell_step

# A one-unit cell with every weight zero: the gates sit at 0.5 and the
# candidate at 0, so half of the previous memory survives.
p = LstmLayerParams.zeros(input_size=1, hidden_size=1)
h, c, gates = lstm_cell_step(p, [[0.0]], [[0.0]], [[1.0]])
print("zero-weight cell with c_prev=1:", "c =", c[0, 0], "h =", h[0, 0])

# The presets. Every LSTM has 16 units and returns its whole sequence.
for name in ("starting", "second", "final"):
    net = build_preset(name, Rng(0))
    kinds = [type(l).__name__.replace("Params", "") for l in net.layers]
    print(f"{name:9s} {net.n_params():6d} parameters  {' -> '.join(kinds)}  dropout {net.dropout_rates}")

# One prediction per timestep, whatever the length.
net = build_preset("final", Rng(0))
rng = Rng(1)
for T in (1, 96, 834, 1099):
    pred, _ = forward_sequence(net, rng.normal(0, 1, (T, 9)))
    print(f"T={T:5d} -> predictions {pred.shape}, first value {pred[0, 0]:+.5f}")

# The first prediction does not depend on what comes later in the sequence.
x = rng.normal(0, 1, (50, 9))
short, _ = forward_sequence(net, x[:20])
full, _ = forward_sequence(net, x)
print("prefix predictions agree:", np.allclose(short, full[:20], rtol=0, atol=1e-14))
