"""Independent oracles shared by the test modules."""
import math

import numpy as np


def central_diff(f, arrays, h=1e-5):
    """Central finite differences of scalar ``f(arrays)`` w.r.t. every entry of every array."""
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=float)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            fp = f(arrays)
            arr[idx] = orig - h
            fm = f(arrays)
            arr[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        out[name] = g
    return out


def rel_err(analytic, numeric):
    """Norm-wise relative error; exact zeros on both sides count as agreement."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def loop_matmul(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return [[math.fsum(a[i][t] * b[t][j] for t in range(k)) for j in range(n)] for i in range(m)]


def scalar_adam(grad_fn, w, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        w = w - lr * wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
    return w


def cross_entropy_diag(logits):
    """Softmax cross-entropy with target i for row i, written from scratch."""
    total = 0.0
    for i, row in enumerate(logits):
        mx = max(row)
        lse = mx + math.log(math.fsum(math.exp(v - mx) for v in row))
        total += lse - row[i]
    return total / len(logits)


# one line per acceptance criterion, echoed in the terminal summary by conftest.py
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
