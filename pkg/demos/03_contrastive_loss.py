"""
Six directed contrastive terms
==============================

Every ordered pair of modalities contributes one term. Samples that share a
class all count as positives.
"""
import numpy as np

from crossmeta import total_loss
from crossmeta.autodiff import Tensor
from crossmeta.loss import brute_force_total_loss


def unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


rng = np.random.default_rng(1)
labels = np.array([0, 0, 1, 2])
I, T, M = (unit(rng.normal(size=(4, 8))) for _ in range(3))

br = total_loss(Tensor(I), Tensor(T), Tensor(M), labels, tau=0.07)
for name, value in br.terms.items():
    print(f"{name}: {value:.6f}")
print("total:", br.total)

# the same numbers from a 40-digit scalar loop
print("oracle:", brute_force_total_loss(I, T, M, labels, 0.07)["total"])

# aligned batches score lower than random ones
aligned = unit(np.eye(8)[labels] + 0.01 * rng.normal(size=(4, 8)))
print("aligned:", total_loss(Tensor(aligned), Tensor(aligned), Tensor(aligned), labels, 0.07).total)
