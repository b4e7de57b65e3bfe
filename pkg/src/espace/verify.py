"""Finite-difference verification of the full model graphs.

Random small worlds are drawn at O(1) parameter scale and redrawn when any
hidden pre-activation sits within a safety margin of a ReLU kink, since a
central difference stepping across a kink measures a subgradient mixture
rather than the derivative the backward pass computes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import (
    TrainConfig,
    base_loss_and_grads,
    build_base_model,
    build_esmm_model,
    esmm_loss_and_grads,
)
from .nn.gradcheck import grad_check
from .nn.ops import tower_forward, pool_batch
from .samples import Dataset, FieldSchema, SparseSample
from .seeding import substream

KINK_MARGIN = 1e-3
DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradCheckSummary:
    max_rel_err_base: float
    max_rel_err_esmm: float
    trials: int
    tolerance: float

    @property
    def ok(self) -> bool:
        return max(self.max_rel_err_base, self.max_rel_err_esmm) < self.tolerance


def _random_dataset(schema: FieldSchema, n: int, rng: np.random.Generator) -> Dataset:
    samples = []
    for i in range(n):
        fields = []
        for f in range(schema.field_count):
            k = int(rng.integers(0, 3))
            fields.append(tuple(int(x) for x in rng.integers(0, schema.vocab_sizes[f], k)))
        y = int(rng.random() < 0.6)
        z = int(y and rng.random() < 0.5)
        samples.append(SparseSample(i, tuple(fields), y, z))
    return Dataset.from_samples(schema, samples)


def _rescale(model, rng: np.random.Generator):
    """Move parameters to O(1) magnitudes so pre-activations clear the margin."""
    for name, arr in model.store.params.items():
        if name.startswith("emb"):
            arr[:] = rng.uniform(-1.0, 1.0, arr.shape)
        elif "/b" in name:
            arr[:] = rng.uniform(-0.5, 0.5, arr.shape)


def _min_hidden_margin(tower, x) -> float:
    _, cache = tower_forward(tower, x)
    if not cache.pre[:-1]:
        return np.inf
    return min(float(np.abs(z).min()) for z in cache.pre[:-1])


def _check_one_graph(kind: str, trial: int, seed: int, schema: FieldSchema,
                     cfg: TrainConfig, batch: int, n_coords: int, step: float,
                     corrupt: bool) -> float:
    for attempt in range(64):
        rng = substream(seed, "verify", kind, trial, attempt)
        ds = _random_dataset(schema, batch, rng)
        idx = np.arange(batch)
        if kind == "base":
            model = build_base_model(schema, cfg, rng, role="cvr")
        else:
            model = build_esmm_model(schema, cfg, rng, shared=True)
        _rescale(model, rng)
        # kink margin gate
        bgids, bcounts = ds.batch_inputs(idx)
        if kind == "base":
            x = pool_batch(model.table, bgids, bcounts, batch)
            margin = _min_hidden_margin(model.tower, x)
        else:
            x = pool_batch(model.ctr_table, bgids, bcounts, batch)
            margin = min(_min_hidden_margin(model.ctr_tower, x),
                         _min_hidden_margin(model.cvr_tower, x))
        if margin <= KINK_MARGIN:
            continue
        labels = ds.z.astype(np.float64)
        y = ds.y.astype(np.float64)
        t = (ds.y.astype(bool) & ds.z.astype(bool)).astype(np.float64)

        def closure():
            if kind == "base":
                loss, grads, _ = base_loss_and_grads(model, ds, labels, idx)
            else:
                loss, grads, _ = esmm_loss_and_grads(model, ds, y, t, idx)
            if corrupt:
                key = "mlp/W0" if kind == "base" else "ctr/W0"
                grads[key] = grads[key] * 2.0
            return loss, grads

        report = grad_check(closure, dict(model.store.params),
                            substream(seed, "verify-coords", kind, trial),
                            n_coords=n_coords, step=step)
        return report.max_rel_err
    raise RuntimeError("could not draw a kink-free trial network")


def run_gradcheck(trials: int = 50, seed: int = 0, fields: int = 3, vocab: int = 11,
                  embedding_dim: int = 4, hidden_dims: tuple[int, ...] = (8, 6, 4),
                  batch: int = 12, n_coords: int = 250, step: float = 1e-5,
                  tolerance: float = DEFAULT_TOLERANCE, corrupt: bool = False) -> GradCheckSummary:
    """Check the single-tower graph and the full two-tower product graph.

    `corrupt` doubles one analytic weight gradient, which the check must
    then flag (mutation test of the harness itself).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    schema = FieldSchema.uniform(fields, vocab, embedding_dim)
    cfg = TrainConfig(hidden_dims=tuple(hidden_dims))
    worst_base = 0.0
    worst_esmm = 0.0
    for trial in range(trials):
        worst_base = max(worst_base, _check_one_graph(
            "base", trial, seed, schema, cfg, batch, n_coords, step, corrupt))
        worst_esmm = max(worst_esmm, _check_one_graph(
            "esmm", trial, seed, schema, cfg, batch, n_coords, step, corrupt))
    return GradCheckSummary(worst_base, worst_esmm, trials, tolerance)
