"""Tensors, the tape, and reverse-mode gradients.

Everything downstream (encoders, losses, the attack loop) is built on a small
float64 tensor library with an explicit tape. This walkthrough records a tiny
computation, runs the reverse pass, and cross-checks one coordinate against a
central finite difference.
"""

import numpy as np

import cascadv.autodiff as ad
from cascadv.autodiff import Rng, Tape, Tensor

# -- forward pass -----------------------------------------------------------
# Leaves must be registered on a tape; everything derived from them records
# nodes automatically. Constants (plain Tensors) cost nothing on the way back.

rng = Rng(7)
tape = Tape()
x = tape.leaf(Tensor(rng.uniform((4, 3), -1.0, 1.0)))
w = Tensor(rng.normal((3, 5), scale=1 / np.sqrt(3)))

hidden = ad.tanh(ad.matmul(x, w))
probs = ad.softmax_rows(hidden)
loss = ad.mean(ad.mul(ad.log(probs), Tensor(np.ones(probs.shape))))
print(f"loss = {loss.item():.6f}  (tape recorded {len(tape)} nodes)")

# -- reverse pass -----------------------------------------------------------
grads = ad.backward(tape, loss)
gx = grads[x.node].data
print(f"grad shape {gx.shape}, mean |g| = {np.abs(gx).mean():.2e}")

# -- spot check against finite differences ----------------------------------
def loss_at(values):
    h = ad.tanh(ad.matmul(Tensor(values), w))
    p = ad.softmax_rows(h)
    return ad.mean(ad.mul(ad.log(p), Tensor(np.ones(p.shape)))).item()

idx = (2, 1)
step = 1e-6
bumped_up, bumped_dn = x.data.copy(), x.data.copy()
bumped_up[idx] += step
bumped_dn[idx] -= step
fd = (loss_at(bumped_up) - loss_at(bumped_dn)) / (2 * step)
print(f"coordinate {idx}: reverse mode {gx[idx]:+.10f}  finite diff {fd:+.10f}")

# -- the pinned PRNG ---------------------------------------------------------
# Same seed, same stream, on every platform; sub-streams split off by key.
a, b = Rng(123), Rng(123)
assert a.next_u64() == b.next_u64()
print(f"splitmix64(seed=0) first draw = {Rng(0).next_u64():#018x}")
print("sub-stream split(3) first uniform:", Rng(9).split(3).uniform())
