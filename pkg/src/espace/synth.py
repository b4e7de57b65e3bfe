"""Synthetic impression worlds with known click and conversion probabilities.

The world draws per-field feature ids (Zipf-weighted popularity by
default), scores them with hidden linear weights through a sigmoid, and
samples labels sequentially: a conversion can only happen on a click.
True probabilities ride along in a sidecar so evaluation can measure how
well an estimator ranks conversions over the entire impression space,
not just the clicked slice it was trained on.

The coupling knob rho mixes the conversion score direction with the
click score direction; the mixture keeps unit variance, so rho is
exactly the correlation between the two hidden scores. At rho = 0 the
hidden click sampler is independent of conversion propensity, so
clicked-subspace training is unbiased; at high rho the clicked slice is
strongly tilted and the bias becomes measurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import auc, spearman
from .samples import Dataset, FieldSchema
from .seeding import substream


@dataclass(frozen=True)
class WorldConfig:
    """Everything needed to rebuild a ground-truth world deterministically."""

    field_count: int = 20
    vocab_size: int = 500
    embedding_dim: int = 18
    target_ctr: float = 0.04
    target_cvr: float = 0.005
    rho: float = 0.8
    weight_scale: float = 0.2          # click score scale per field
    conv_weight_scale: float = 0.5     # conversion score scale per field
    zipf_exponent: float = 1.1
    popularity: str = "zipf"  # or "uniform"
    world_seed: int = 20180101

    def schema(self) -> FieldSchema:
        return FieldSchema.uniform(self.field_count, self.vocab_size, self.embedding_dim)


class GroundTruthModel:
    """Hidden linear click/conversion scorers over the stacked id space."""

    def __init__(self, config: WorldConfig, w_click: np.ndarray, w_conv: np.ndarray,
                 pop_cdf: np.ndarray, b_ctr: float = 0.0, b_cvr: float = 0.0):
        self.config = config
        self.schema = config.schema()
        self.w_click = w_click
        self.w_conv = w_conv
        self.pop_cdf = pop_cdf  # (field_count, vocab_size) per-field CDF over ids
        self.b_ctr = b_ctr
        self.b_cvr = b_cvr

    @classmethod
    def build(cls, config: WorldConfig) -> "GroundTruthModel":
        rng = substream(config.world_seed, "world-weights")
        total = config.field_count * config.vocab_size
        w_click = rng.normal(0.0, config.weight_scale, total)
        w_ind = rng.normal(0.0, config.conv_weight_scale, total)
        rho = config.rho
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        # variance-preserving mixture: corr(click score, conversion score) == rho
        scale_ratio = config.conv_weight_scale / config.weight_scale
        w_conv = rho * scale_ratio * w_click + np.sqrt(1.0 - rho * rho) * w_ind
        if config.popularity == "zipf":
            pmf = 1.0 / np.arange(1, config.vocab_size + 1) ** config.zipf_exponent
        elif config.popularity == "uniform":
            pmf = np.ones(config.vocab_size)
        else:
            raise ValueError(f"unknown popularity model {config.popularity!r}")
        pmf = pmf / pmf.sum()
        cdf = np.tile(np.cumsum(pmf), (config.field_count, 1))
        return cls(config, w_click, w_conv, cdf)

    # -- scoring -------------------------------------------------------

    def _draw_gids(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """One id per field, popularity-weighted; returns stacked row ids (n, F)."""
        f = self.config.field_count
        v = self.config.vocab_size
        u = rng.random((n, f))
        gids = np.empty((n, f), dtype=np.int64)
        for j in range(f):
            gids[:, j] = np.searchsorted(self.pop_cdf[j], u[:, j]) + j * v
        return gids

    def true_probs(self, gids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        s_ctr = self.b_ctr + self.w_click[gids].sum(axis=1)
        s_cvr = self.b_cvr + self.w_conv[gids].sum(axis=1)
        return _sigmoid(s_ctr), _sigmoid(s_cvr)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def calibrate_offsets(gt: GroundTruthModel, target_ctr: float, target_cvr: float,
                      probe_n: int = 50_000, seed: int = 0,
                      rel_tol: float = 0.05, max_steps: int = 60) -> GroundTruthModel:
    """Bisect the click offset, then the conversion offset, against a probe draw.

    The click target is the mean click probability; the conversion target
    is expected conversions over expected clicks, which is what a log's
    conversions-per-click rate estimates.
    """
    if not (0.0 < target_ctr < 1.0 and 0.0 < target_cvr < 1.0):
        raise ValueError("targets must be in (0, 1)")
    rng = substream(seed, "calibrate-probe")
    gids = gt._draw_gids(probe_n, rng)
    s_ctr = gt.w_click[gids].sum(axis=1)
    s_cvr = gt.w_conv[gids].sum(axis=1)

    def ctr_rate(b):
        return float(_sigmoid(b + s_ctr).mean())

    b_ctr = _bisect(ctr_rate, target_ctr, max_steps)
    pctr = _sigmoid(b_ctr + s_ctr)

    def cvr_rate(b):
        pcvr = _sigmoid(b + s_cvr)
        return float((pctr * pcvr).sum() / pctr.sum())

    b_cvr = _bisect(cvr_rate, target_cvr, max_steps)
    for rate, target, name in ((ctr_rate(b_ctr), target_ctr, "ctr"),
                               (cvr_rate(b_cvr), target_cvr, "cvr")):
        if abs(rate - target) > rel_tol * target:
            raise ValueError(f"calibration failed for {name}: {rate:.6g} vs target {target:.6g}")
    calibrated = GroundTruthModel(gt.config, gt.w_click, gt.w_conv, gt.pop_cdf, b_ctr, b_cvr)
    return calibrated


def _bisect(rate_fn, target: float, max_steps: int) -> float:
    lo, hi = -40.0, 40.0
    if not rate_fn(lo) < target < rate_fn(hi):
        raise ValueError("target rate unreachable")
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        if rate_fn(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def make_world(config: WorldConfig, probe_n: int = 50_000) -> GroundTruthModel:
    """Build and calibrate a world from its config."""
    gt = GroundTruthModel.build(config)
    return calibrate_offsets(gt, config.target_ctr, config.target_cvr,
                             probe_n=probe_n, seed=config.world_seed)


def gen_dataset(gt: GroundTruthModel, n: int, seed: int) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """Draw n impressions; returns (dataset, true_pctr, true_pcvr).

    Labels are sampled sequentially: y ~ Bernoulli(pctr), then z only on
    clicks, so z <= y by construction. Timestamps are 0..n-1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = substream(seed, "gen")
    gids = gt._draw_gids(n, rng)
    pctr, pcvr = gt.true_probs(gids)
    y = (rng.random(n) < pctr).astype(np.int8)
    z = np.zeros(n, dtype=np.int8)
    clicked = np.nonzero(y == 1)[0]
    z[clicked] = (rng.random(clicked.shape[0]) < pcvr[clicked]).astype(np.int8)
    f = gt.config.field_count
    v = gt.config.vocab_size
    ids = (gids - np.arange(f) * v).astype(np.int32).ravel()
    counts = np.ones((n, f), dtype=np.int32)
    ds = Dataset(gt.schema, np.arange(n, dtype=np.int64), y, z, ids, counts, check=False)
    return ds, pctr, pcvr


@dataclass(frozen=True)
class BiasReport:
    """How an estimator's conversion scores relate to the hidden truth."""

    auc_clicked: float        # vs realized z on clicked samples
    rank_corr_all: float      # Spearman vs true pcvr over every sample
    mae_clicked: float
    mae_unclicked: float


def bias_report(pcvr_scores: np.ndarray, true_pcvr: np.ndarray, eval_set: Dataset) -> BiasReport:
    """Compare predicted conversion scores with the generator's truth.

    The clicked/un-clicked MAE split is the selection-bias signature:
    clicked-subspace training inflates error on the un-clicked stratum.
    """
    scores = np.asarray(pcvr_scores, dtype=np.float64)
    clicked = eval_set.y == 1
    auc_clicked = float("nan")
    z_clicked = eval_set.z[clicked]
    if z_clicked.size and 0 < z_clicked.sum() < z_clicked.size:
        auc_clicked = auc(scores[clicked], z_clicked)
    err = np.abs(scores - true_pcvr)
    mae_clicked = float(err[clicked].mean()) if clicked.any() else float("nan")
    mae_unclicked = float(err[~clicked].mean()) if (~clicked).any() else float("nan")
    return BiasReport(auc_clicked, spearman(scores, true_pcvr), mae_clicked, mae_unclicked)
