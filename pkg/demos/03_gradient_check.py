"""Check the hand-written backward pass against central differences on a toy
cascade (d_model 8, two heads, N 6, two encoder and two decoder layers).

Run: python3 demos/03_gradient_check.py
"""
import numpy as np

from eeg_completion import autograd as ag
from eeg_completion.cascade import CascadeModel, weighted_loss
from eeg_completion.transformer import ModelConfig

cfg = ModelConfig(n_encoders=2, n_decoders=2, d_qkv=4, n_heads=2, d_ff=8, seq_len=6)
model = CascadeModel(cfg, seed=0)
rng = np.random.default_rng(1)
target = rng.uniform(-1, 1, (2, 6))
missing = np.zeros((2, 6), bool)
missing[:, 2:4] = True
x = np.where(missing, 0.0, target)


def loss():
    s1, s2 = model.outputs(x, missing)
    return ag.add(weighted_loss(s1, target, missing, 2.0), weighted_loss(s2, target, missing, 2.0))


ag.backward(loss())
worst = 0.0
for name, p in zip(model.state_dict(), model.parameters()):
    i = tuple(rng.integers(0, s) for s in p.shape)
    old = p.data[i]
    h = 1e-5
    p.data[i] = old + h
    with ag.no_grad():
        up = loss().item()
    p.data[i] = old - h
    with ag.no_grad():
        down = loss().item()
    p.data[i] = old
    numeric = (up - down) / (2 * h)
    rel = abs(numeric - p.grad[i]) / max(abs(numeric), abs(p.grad[i]), 1e-8)
    worst = max(worst, rel)
print(f"{len(model.parameters())} parameter tensors, worst relative error {worst:.2e}")
