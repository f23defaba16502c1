"""
Reverse-mode gradients on numpy arrays
======================================

Build a tiny two-layer network by hand, backpropagate, and compare one
gradient entry with a central finite difference.
"""
import numpy as np

from crossmeta import autodiff as ad
from crossmeta.autodiff import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(5, 3)))
w1 = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w2 = Tensor(rng.normal(size=(4, 2)), requires_grad=True)


def loss_of(w1, w2):
    h = ad.softplus(ad.matmul(x, w1))
    z = ad.l2_normalize_rows(ad.matmul(h, w2))
    return ad.mean(ad.log_softmax_rows(z))


# backward() returns the tape in topological order
tape = ad.backward(loss_of(w1, w2))
print("nodes on tape:", len(tape))

# nudge one weight both ways and compare
h = 1e-6
plus, minus = w1.data.copy(), w1.data.copy()
plus[1, 2] += h
minus[1, 2] -= h
numeric = (loss_of(Tensor(plus), w2).item() - loss_of(Tensor(minus), w2).item()) / (2 * h)
print(f"analytic {w1.grad[1, 2]:.10f}  numeric {numeric:.10f}")
