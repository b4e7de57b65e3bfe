"""Numpy reference implementations of the training hot kernels.

Semantics here define the contract; the compiled module in _fastops.pyx
must match these bit-for-bit up to float addition order. All float arrays
are C-contiguous float64, id/count arrays int32, row lists int64.
"""

import numpy as np


def pool_forward(gids, counts, emb, out):
    """Segment-sum embedding rows.

    gids:   flat row indices into `emb`, concatenated over segments.
    counts: number of ids per segment (a segment is one sample x field).
    out:    (n_segments, dim), overwritten with per-segment sums.
    """
    n_seg = counts.shape[0]
    if gids.shape[0] == 0:
        out[:] = 0.0
        return
    seg = np.repeat(np.arange(n_seg), counts)
    take = emb[gids]
    for d in range(emb.shape[1]):
        out[:, d] = np.bincount(seg, weights=take[:, d], minlength=n_seg)


def pool_backward(gids, counts, dpooled, demb):
    """Scatter-add pooled gradients back onto embedding rows (accumulates into demb)."""
    if gids.shape[0] == 0:
        return
    seg = np.repeat(np.arange(counts.shape[0]), counts)
    np.add.at(demb, gids, dpooled[seg])


def adam_dense(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam update of a full parameter array.

    bc1 = 1 - beta1**t and bc2 = 1 - beta2**t with t already incremented.
    eps is added after the square root.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def adam_rows(param, grad, m, v, rows, lr, beta1, beta2, eps, bc1, bc2):
    """Adam update restricted to the given (unique) rows; other rows untouched."""
    g = grad[rows]
    m[rows] = beta1 * m[rows] + (1.0 - beta1) * g
    v[rows] = beta2 * v[rows] + (1.0 - beta2) * g * g
    param[rows] -= lr * (m[rows] / bc1) / (np.sqrt(v[rows] / bc2) + eps)
