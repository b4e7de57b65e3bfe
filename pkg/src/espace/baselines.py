"""Competitor training-set strategies for the conversion task.

Each one reshapes what the plain clicked-subspace trainer sees: negative
sampling from un-clicked impressions, positive oversampling, and inverse
click-propensity weighting. All are pure functions of immutable inputs
plus a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import BaseModel
from .samples import Dataset
from .seeding import substream

AMAN_RATE_GRID = (0.1, 0.2, 0.5, 1.0)
OVERSAMPLE_RATE_GRID = (2, 3, 5, 10)
UNBIAS_CAP_DEFAULT = 1000.0


@dataclass(frozen=True)
class SamplingConfig:
    """Grids and knobs for the three strategies."""

    aman_rates: tuple[float, ...] = AMAN_RATE_GRID
    oversample_rates: tuple[int, ...] = OVERSAMPLE_RATE_GRID
    unbias_cap: float = UNBIAS_CAP_DEFAULT
    division_floor: float = 1e-6


def aman_augment(d: Dataset, rate: float, seed: int) -> Dataset:
    """Clicked samples plus round(rate * pool) random un-clicked ones as negatives.

    Sampling is without replacement, so no un-clicked sample is duplicated
    and every clicked sample is kept. Un-clicked samples already carry
    z = 0, which is the negative label the conversion trainer uses.
    """
    if not 0.0 < rate <= 1.0:
        raise ValueError("rate must be in (0, 1]")
    clicked_idx = np.nonzero(d.y == 1)[0]
    pool = np.nonzero(d.y == 0)[0]
    k = int(round(rate * pool.shape[0]))
    rng = substream(seed, "aman", rate)
    chosen = rng.choice(pool, size=k, replace=False) if k else pool[:0]
    return d.take(np.concatenate([clicked_idx, np.sort(chosen)]))


def oversample_positives(d_clicked: Dataset, k: int, seed: int) -> Dataset:
    """Repeat each converted sample k times, then shuffle."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pos = np.nonzero(d_clicked.z == 1)[0]
    idx = np.concatenate([np.arange(len(d_clicked)), np.repeat(pos, k - 1)])
    rng = substream(seed, "oversample", k)
    rng.shuffle(idx)
    return d_clicked.take(idx)


def unbias_weights(d_clicked: Dataset, ctr_model: BaseModel, cap: float = UNBIAS_CAP_DEFAULT) -> np.ndarray:
    """Per-sample importance weights min(1/pctr, cap) for the clicked set.

    The click probability acts as the rejection probability of the hidden
    sampler that produced the clicked subspace; weighting by its
    reciprocal re-targets the conversion loss at the impression
    distribution. The cap absorbs tiny propensities.
    """
    if cap <= 0:
        raise ValueError("cap must be positive")
    pctr = ctr_model.predict(d_clicked)
    return np.minimum(1.0 / pctr, cap)
