"""Shared oracles and fixtures.

The oracles here are deliberately naive re-implementations (nested loops,
direct formulas) kept independent of the library code they check.
"""

import numpy as np
import pytest


def naive_conv2d(x, weights, bias):
    """Direct 6-nested-loop same-padded 3x3 convolution."""
    h, w, cin = x.shape
    cout = weights.shape[3]
    out = np.zeros((h, w, cout))
    for y in range(h):
        for xx in range(w):
            for o in range(cout):
                acc = bias[o]
                for dy in range(3):
                    for dx in range(3):
                        sy, sx = y + dy - 1, xx + dx - 1
                        if 0 <= sy < h and 0 <= sx < w:
                            for i in range(cin):
                                acc += x[sy, sx, i] * weights[dy, dx, i, o]
                out[y, xx, o] = acc
    return out


def naive_maxpool(x):
    """Brute-force 2x2 window pooling with first-in-scan-order argmax."""
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c))
    arg = np.zeros((h // 2, w // 2, c), dtype=int)
    for y in range(h // 2):
        for xx in range(w // 2):
            for ch in range(c):
                vals = [
                    x[2 * y, 2 * xx, ch],
                    x[2 * y, 2 * xx + 1, ch],
                    x[2 * y + 1, 2 * xx, ch],
                    x[2 * y + 1, 2 * xx + 1, ch],
                ]
                best = max(range(4), key=lambda k: (vals[k], -k))
                out[y, xx, ch] = vals[best]
                arg[y, xx, ch] = best
    return out, arg


def naive_maxpool_backward(x, grad_out):
    _, arg = naive_maxpool(x)
    h, w, c = x.shape
    grad_in = np.zeros_like(x)
    offsets = [(0, 0), (0, 1), (1, 0), (1, 1)]
    for y in range(h // 2):
        for xx in range(w // 2):
            for ch in range(c):
                dy, dx = offsets[arg[y, xx, ch]]
                grad_in[2 * y + dy, 2 * xx + dx, ch] += grad_out[y, xx, ch]
    return grad_in


def central_difference(f, arr, index, eps=1e-5):
    """Central finite difference of scalar f with respect to arr[index]."""
    orig = arr[index]
    arr[index] = orig + eps
    fp = f()
    arr[index] = orig - eps
    fm = f()
    arr[index] = orig
    return (fp - fm) / (2 * eps)


def mann_whitney_auc(scores, labels):
    """Pairwise win/tie count over all positive/negative pairs."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
