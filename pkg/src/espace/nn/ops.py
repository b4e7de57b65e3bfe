"""Forward and backward passes for the embedding + MLP graph family.

The output head is a 2-logit softmax; the class-1 probability equals the
sigmoid of the logit difference and is clamped to [PROB_CLAMP, 1-PROB_CLAMP].
Backward treats the clamp as zero-gradient where it binds, so analytic
gradients match finite differences of the loss actually computed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .params import EmbeddingTable, MlpTower
from ..samples import FieldSchema, SparseSample, validate

PROB_CLAMP = 1e-7


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def cross_entropy(label, p):
    """-label*ln(p) - (1-label)*ln(1-p); p must already be inside (0, 1)."""
    label = np.asarray(label, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return -(label * np.log(p) + (1.0 - label) * np.log1p(-p))


def embed_and_pool(table: EmbeddingTable, sample: SparseSample) -> np.ndarray:
    """Sum-pool one sample's embeddings per field, concatenated in field order."""
    schema = table.schema
    msg = validate(sample, schema)
    if msg is not None:
        raise ValueError(msg)
    out = np.zeros(schema.input_width)
    d = schema.embedding_dim
    for f, ids in enumerate(sample.fields):
        block = table.field(f)
        for i in ids:
            out[f * d : (f + 1) * d] += block[i]
    return out


def pool_batch(table: EmbeddingTable, gids: np.ndarray, counts: np.ndarray, batch: int) -> np.ndarray:
    """Pooled inputs (batch, field_count*dim) from flat batch gids/counts."""
    d = table.schema.embedding_dim
    out = np.zeros((counts.shape[0], d))
    kernels.pool_forward(gids, counts, table.rows, out)
    return out.reshape(batch, -1)


@dataclass
class TowerCache:
    x: np.ndarray
    pre: list[np.ndarray]      # pre-activations, one per layer
    act: list[np.ndarray]      # hidden activations (inputs to layers 1..L-1)
    praw: np.ndarray           # unclamped sigmoid of logit difference
    mask: np.ndarray           # 1.0 where the clamp is inactive


def tower_forward(tower: MlpTower, x: np.ndarray, *, need_cache: bool = True):
    """Returns (clamped class-1 probabilities, cache or None)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != tower.dims[0]:
        raise ValueError(f"input width {x.shape[1]} != tower input dim {tower.dims[0]}")
    if not np.isfinite(x).all():
        raise FloatingPointError("non-finite activation")
    pre, act = [], []
    a = x
    last = tower.n_layers - 1
    for i, (w, b) in enumerate(zip(tower.weights, tower.biases)):
        zed = a @ w + b
        if i < last:
            if need_cache:
                pre.append(zed)
            a = np.maximum(zed, 0.0)
            if need_cache:
                act.append(a)
        else:
            if need_cache:
                pre.append(zed)
            a = zed
    praw = sigmoid(a[:, 1] - a[:, 0])
    p = np.clip(praw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    if not need_cache:
        return p, None
    return p, TowerCache(x, pre, act, praw, (praw == p).astype(np.float64))


def tower_backward(tower: MlpTower, cache: TowerCache, gdiff: np.ndarray):
    """Backprop from d(loss)/d(logit difference) to all tower parameters.

    Returns (weight grads, bias grads, d(loss)/d(input)).
    """
    b = gdiff.shape[0]
    dz = np.empty((b, 2))
    dz[:, 0] = -gdiff
    dz[:, 1] = gdiff
    dws = [None] * tower.n_layers
    dbs = [None] * tower.n_layers
    for i in range(tower.n_layers - 1, -1, -1):
        a_in = cache.x if i == 0 else cache.act[i - 1]
        dws[i] = a_in.T @ dz
        dbs[i] = dz.sum(axis=0)
        da = dz @ tower.weights[i].T
        if i > 0:
            dz = da * (cache.pre[i - 1] > 0.0)
        else:
            dx = da
    return dws, dbs, dx
