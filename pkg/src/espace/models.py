"""Conversion-rate estimators.

Three families:

* BaseModel with role "cvr": embedding + MLP trained on clicked samples
  against the conversion label. This is the conventional estimator and the
  one that suffers selection bias, since it infers over all impressions.
* BaseModel with roles "ctr" / "ctcvr": the same network trained on all
  impressions against the click label or the click-and-convert label. A
  CTCVR network divided by a CTR network gives the division estimator.
* EsmmModel: co-trained CTR and CVR towers where the conversion
  probability is an internal factor; the training loss has a click term
  and a click-and-convert term (both over all impressions) and no
  conversion-only term, so the derived pcvr is valid over the entire
  space and always lands in [0, 1]. With `shared=True` the two towers use
  one embedding table; `shared=False` is the no-sharing variant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .nn import kernels
from .nn.adam import adam_step
from .nn.ops import cross_entropy, pool_batch, tower_backward, tower_forward
from .nn.params import AdamState, EmbeddingTable, MlpTower, ParamStore, read_snapshot, write_snapshot
from .samples import Dataset, FieldSchema, clicked_subset
from .seeding import substream

PREDICT_BATCH = 8192

RngLike = Union[np.random.Generator, int]


def _ensure_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(int(rng), "train")


@dataclass
class TrainConfig:
    """Optimizer and loop settings shared by every estimator."""

    learning_rate: float = 1e-3
    batch_size: int = 512
    epochs: int = 1
    hidden_dims: tuple[int, ...] = (200, 80)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    embedding_init_scale: float = 0.01
    # Start the output head at the training-set base rate. Rates here are
    # of order 1e-2..1e-4; from a 0.5 start the first whole epoch is spent
    # dragging the global level down, which scrambles rankings at this
    # data scale.
    prior_output_bias: bool = True

    def tower_dims(self, schema: FieldSchema) -> tuple[int, ...]:
        return (schema.input_width, *self.hidden_dims, 2)

    def adam(self) -> AdamState:
        return AdamState(lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass(frozen=True)
class ModelOutput:
    """The (pctr, pcvr, pctcvr) triple; pctcvr is the exact product of the others."""

    pctr: np.ndarray
    pcvr: np.ndarray
    pctcvr: np.ndarray

    @classmethod
    def compose(cls, pctr, pcvr) -> "ModelOutput":
        pctr = np.asarray(pctr, dtype=np.float64)
        pcvr = np.asarray(pcvr, dtype=np.float64)
        return cls(pctr, pcvr, pctr * pcvr)


def pctcvr_compose(pctr, pcvr):
    """Click-and-convert probability as the product of the two factors."""
    return np.asarray(pctr, dtype=np.float64) * np.asarray(pcvr, dtype=np.float64)


def division_cvr(pctcvr, pctr, floor: float = 1e-6):
    """Conversion estimate pctcvr / max(pctr, floor) plus an exceeded-one flag.

    The ratio is returned unclamped: values above 1 are the observable
    hazard of this estimator, and the flag marks them.
    """
    pctcvr = np.asarray(pctcvr, dtype=np.float64)
    ratio = pctcvr / np.maximum(np.asarray(pctr, dtype=np.float64), floor)
    return ratio, ratio > 1.0


def esmm_loss(pctr, pcvr, y, z) -> float:
    """Mean click cross-entropy plus mean click-and-convert cross-entropy.

    There is no conversion-only term; the conversion factor is supervised
    only through the product.
    """
    y = np.asarray(y)
    z = np.asarray(z)
    if y.size == 0:
        raise ValueError("empty batch")
    if np.any(z > y):
        raise ValueError("conversion without click")
    pctr = np.asarray(pctr, dtype=np.float64)
    pcvr = np.asarray(pcvr, dtype=np.float64)
    t = (y.astype(bool) & z.astype(bool)).astype(np.float64)
    return float(cross_entropy(y, pctr).mean() + cross_entropy(t, pctr * pcvr).mean())


# -- model containers ---------------------------------------------------


class BaseModel:
    """Single-tower classifier over the pooled sparse features."""

    def __init__(self, schema: FieldSchema, table: EmbeddingTable, tower: MlpTower,
                 store: ParamStore, role: str, method: str = "BASE"):
        if role not in ("cvr", "ctr", "ctcvr"):
            raise ValueError(f"unknown role {role!r}")
        self.schema = schema
        self.table = table
        self.tower = tower
        self.store = store
        self.role = role
        self.method = method

    def predict(self, ds: Dataset, indices=None) -> np.ndarray:
        return _predict_tower(ds, self.table, self.tower, indices)

    def save(self, path):
        write_snapshot(path, self.store, self.schema,
                       {"kind": "base", "method": self.method, "role": self.role,
                        "dims": list(self.tower.dims)})

    @classmethod
    def load(cls, path) -> "BaseModel":
        schema, meta, params = read_snapshot(path)
        if meta.get("kind") != "base":
            raise ValueError("snapshot does not hold a single-tower model")
        dims = tuple(meta["dims"])
        table = EmbeddingTable(schema, params["emb"])
        n_layers = len(dims) - 1
        tower = MlpTower(dims, [params[f"mlp/W{i}"] for i in range(n_layers)],
                         [params[f"mlp/b{i}"] for i in range(n_layers)])
        store = ParamStore()
        store.register("emb", table.rows)
        store.register_tower("mlp", tower)
        return cls(schema, table, tower, store, meta["role"], meta.get("method", "BASE"))


class EsmmModel:
    """Co-trained CTR and CVR towers; `shared` aliases one embedding table."""

    def __init__(self, schema: FieldSchema, ctr_table: EmbeddingTable, cvr_table: EmbeddingTable,
                 ctr_tower: MlpTower, cvr_tower: MlpTower, store: ParamStore, shared: bool):
        if shared and ctr_table.rows is not cvr_table.rows:
            raise ValueError("shared model must alias one embedding storage")
        self.schema = schema
        self.ctr_table = ctr_table
        self.cvr_table = cvr_table
        self.ctr_tower = ctr_tower
        self.cvr_tower = cvr_tower
        self.store = store
        self.shared = shared

    @property
    def method(self) -> str:
        return "ESMM" if self.shared else "ESMM-NS"

    def predict(self, ds: Dataset, indices=None) -> ModelOutput:
        pctr = _predict_tower(ds, self.ctr_table, self.ctr_tower, indices)
        pcvr = _predict_tower(ds, self.cvr_table, self.cvr_tower, indices)
        return ModelOutput.compose(pctr, pcvr)

    def predict_pcvr(self, ds: Dataset, indices=None) -> np.ndarray:
        return _predict_tower(ds, self.cvr_table, self.cvr_tower, indices)

    def save(self, path):
        write_snapshot(path, self.store, self.schema,
                       {"kind": "esmm", "method": self.method, "role": "cvr",
                        "shared": self.shared, "dims": list(self.ctr_tower.dims)})

    @classmethod
    def load(cls, path) -> "EsmmModel":
        schema, meta, params = read_snapshot(path)
        if meta.get("kind") != "esmm":
            raise ValueError("snapshot does not hold a two-tower model")
        dims = tuple(meta["dims"])
        shared = bool(meta["shared"])
        store = ParamStore()
        if shared:
            ctr_table = cvr_table = EmbeddingTable(schema, params["emb"])
            store.register("emb", ctr_table.rows)
        else:
            ctr_table = EmbeddingTable(schema, params["emb_ctr"])
            cvr_table = EmbeddingTable(schema, params["emb_cvr"])
            store.register("emb_ctr", ctr_table.rows)
            store.register("emb_cvr", cvr_table.rows)
        n_layers = len(dims) - 1
        towers = []
        for prefix in ("ctr", "cvr"):
            tower = MlpTower(dims, [params[f"{prefix}/W{i}"] for i in range(n_layers)],
                             [params[f"{prefix}/b{i}"] for i in range(n_layers)])
            store.register_tower(prefix, tower)
            towers.append(tower)
        return cls(schema, ctr_table, cvr_table, towers[0], towers[1], store, shared)


def _predict_tower(ds: Dataset, table: EmbeddingTable, tower: MlpTower, indices=None) -> np.ndarray:
    idx = np.arange(len(ds)) if indices is None else np.asarray(indices, dtype=np.int64)
    out = np.empty(idx.shape[0])
    for s in range(0, idx.shape[0], PREDICT_BATCH):
        chunk = idx[s : s + PREDICT_BATCH]
        bgids, bcounts = ds.batch_inputs(chunk)
        x = pool_batch(table, bgids, bcounts, chunk.shape[0])
        p, _ = tower_forward(tower, x, need_cache=False)
        out[s : s + chunk.shape[0]] = p
    return out


# -- factories ----------------------------------------------------------


def build_base_model(schema: FieldSchema, cfg: TrainConfig, rng: np.random.Generator,
                     role: str, method: str = "BASE") -> BaseModel:
    store = ParamStore(cfg.adam())
    table = EmbeddingTable.init(schema, rng, cfg.embedding_init_scale)
    tower = MlpTower.init(cfg.tower_dims(schema), rng)
    store.register("emb", table.rows)
    store.register_tower("mlp", tower)
    return BaseModel(schema, table, tower, store, role, method)


def build_esmm_model(schema: FieldSchema, cfg: TrainConfig, rng: np.random.Generator,
                     shared: bool) -> EsmmModel:
    store = ParamStore(cfg.adam())
    ctr_table = EmbeddingTable.init(schema, rng, cfg.embedding_init_scale)
    if shared:
        cvr_table = ctr_table
        store.register("emb", ctr_table.rows)
    else:
        cvr_table = EmbeddingTable.init(schema, rng, cfg.embedding_init_scale)
        store.register("emb_ctr", ctr_table.rows)
        store.register("emb_cvr", cvr_table.rows)
    ctr_tower = MlpTower.init(cfg.tower_dims(schema), rng)
    cvr_tower = MlpTower.init(cfg.tower_dims(schema), rng)
    store.register_tower("ctr", ctr_tower)
    store.register_tower("cvr", cvr_tower)
    return EsmmModel(schema, ctr_table, cvr_table, ctr_tower, cvr_tower, store, shared)


# -- loss graphs (shared by the trainers and the gradient checker) -------


def base_loss_and_grads(model: BaseModel, ds: Dataset, labels: np.ndarray, idx: np.ndarray,
                        weights: Optional[np.ndarray] = None):
    """Mean (optionally weighted) cross-entropy over the batch, with gradients.

    Returns (loss, grads dict matching the store names, sparse row dict).
    Weighted batches normalize by the batch weight sum, not the batch size.
    """
    bgids, bcounts = ds.batch_inputs(idx)
    x = pool_batch(model.table, bgids, bcounts, idx.shape[0])
    p, cache = tower_forward(model.tower, x)
    yb = labels[idx]
    ce = cross_entropy(yb, p)
    if weights is None:
        loss = float(ce.mean())
        gdiff = (cache.praw - yb) * cache.mask / idx.shape[0]
    else:
        wb = weights[idx]
        sw = float(wb.sum())
        if sw <= 0.0:
            raise ValueError("batch weight sum must be positive")
        loss = float((wb * ce).sum() / sw)
        gdiff = wb * (cache.praw - yb) * cache.mask / sw
    if not np.isfinite(gdiff).all():
        raise FloatingPointError("non-finite gradient")
    dws, dbs, dx = tower_backward(model.tower, cache, gdiff)
    demb = np.zeros_like(model.table.rows)
    kernels.pool_backward(bgids, bcounts, dx.reshape(-1, model.schema.embedding_dim), demb)
    grads = {"emb": demb}
    for i in range(model.tower.n_layers):
        grads[f"mlp/W{i}"] = dws[i]
        grads[f"mlp/b{i}"] = dbs[i]
    rows = np.unique(bgids).astype(np.int64)
    return loss, grads, {"emb": rows}


def esmm_loss_and_grads(model: EsmmModel, ds: Dataset, y: np.ndarray, t: np.ndarray,
                        idx: np.ndarray, ctcvr_term: bool = True):
    """Two-term loss over the batch: CE(y, pctr) + CE(y&z, pctr*pcvr).

    `ctcvr_term=False` drops the product term (test hook); the conversion
    tower then receives no gradient at all, since no conversion-only term
    exists.
    """
    n = idx.shape[0]
    bgids, bcounts = ds.batch_inputs(idx)
    x_ctr = pool_batch(model.ctr_table, bgids, bcounts, n)
    x_cvr = x_ctr if model.shared else pool_batch(model.cvr_table, bgids, bcounts, n)
    pctr, cache_ctr = tower_forward(model.ctr_tower, x_ctr)
    pcvr, cache_cvr = tower_forward(model.cvr_tower, x_cvr)
    yb = y[idx]
    tb = t[idx]
    q = pctr * pcvr
    loss = float(cross_entropy(yb, pctr).mean())
    g_ctr = (cache_ctr.praw - yb) * cache_ctr.mask / n
    grads: dict[str, np.ndarray] = {}
    dim = model.schema.embedding_dim
    if ctcvr_term:
        loss += float(cross_entropy(tb, q).mean())
        # d CE(t, q) / d tower-logit-difference = (q - t)(1 - p_tower)/(1 - q);
        # 1 - q >= ~2e-7 because both factors are clamped below 1.
        common = (q - tb) / (1.0 - q) / n
        g_ctr = g_ctr + common * (1.0 - pctr) * cache_ctr.mask
        g_cvr = common * (1.0 - pcvr) * cache_cvr.mask
        if not (np.isfinite(g_ctr).all() and np.isfinite(g_cvr).all()):
            raise FloatingPointError("non-finite gradient")
        dws_cvr, dbs_cvr, dx_cvr = tower_backward(model.cvr_tower, cache_cvr, g_cvr)
        for i in range(model.cvr_tower.n_layers):
            grads[f"cvr/W{i}"] = dws_cvr[i]
            grads[f"cvr/b{i}"] = dbs_cvr[i]
    else:
        if not np.isfinite(g_ctr).all():
            raise FloatingPointError("non-finite gradient")
        dx_cvr = None
    dws_ctr, dbs_ctr, dx_ctr = tower_backward(model.ctr_tower, cache_ctr, g_ctr)
    for i in range(model.ctr_tower.n_layers):
        grads[f"ctr/W{i}"] = dws_ctr[i]
        grads[f"ctr/b{i}"] = dbs_ctr[i]
    rows = np.unique(bgids).astype(np.int64)
    sparse = {}
    if model.shared:
        demb = np.zeros_like(model.ctr_table.rows)
        dx = dx_ctr if dx_cvr is None else dx_ctr + dx_cvr
        kernels.pool_backward(bgids, bcounts, dx.reshape(-1, dim), demb)
        grads["emb"] = demb
        sparse["emb"] = rows
    else:
        demb_ctr = np.zeros_like(model.ctr_table.rows)
        kernels.pool_backward(bgids, bcounts, dx_ctr.reshape(-1, dim), demb_ctr)
        grads["emb_ctr"] = demb_ctr
        sparse["emb_ctr"] = rows
        if dx_cvr is not None:
            demb_cvr = np.zeros_like(model.cvr_table.rows)
            kernels.pool_backward(bgids, bcounts, dx_cvr.reshape(-1, dim), demb_cvr)
            grads["emb_cvr"] = demb_cvr
            sparse["emb_cvr"] = rows
    return loss, grads, sparse


# -- trainers -------------------------------------------------------------


def apply_prior_bias(tower: MlpTower, prior: float) -> None:
    """Set the output head's class-1 bias so the initial probability is `prior`."""
    p = float(np.clip(prior, 1e-6, 1.0 - 1e-6))
    tower.biases[-1][1] = np.log(p / (1.0 - p))


def _weighted_prior(labels: np.ndarray, weights: Optional[np.ndarray]) -> float:
    if weights is None:
        return float(labels.mean())
    return float((weights * labels).sum() / weights.sum())


def _label_array(ds: Dataset, role: str) -> np.ndarray:
    if role == "ctr":
        return ds.y.astype(np.float64)
    if role == "ctcvr":
        return (ds.y.astype(bool) & ds.z.astype(bool)).astype(np.float64)
    return ds.z.astype(np.float64)


def train_cvr_on(ds: Dataset, cfg: TrainConfig, rng: RngLike,
                 weights: Optional[np.ndarray] = None, method: str = "BASE") -> BaseModel:
    """Fit a conversion classifier on the given training set as-is (label z)."""
    if len(ds) == 0:
        raise ValueError("empty training set")
    rng = _ensure_rng(rng)
    model = build_base_model(ds.schema, cfg, rng, role="cvr", method=method)
    _fit_base(model, ds, _label_array(ds, "cvr"), cfg, rng, weights)
    return model


def train_base_cvr(d: Dataset, cfg: TrainConfig, rng: RngLike) -> BaseModel:
    """The conventional estimator: clicked samples only, conversion label."""
    clicked = clicked_subset(d)
    if len(clicked) == 0:
        raise ValueError("no clicked samples")
    return train_cvr_on(clicked, cfg, rng)


def train_independent(d: Dataset, role: str, cfg: TrainConfig, rng: RngLike) -> BaseModel:
    """Train a CTR or CTCVR network on all impressions."""
    if role not in ("ctr", "ctcvr"):
        raise ValueError("role must be 'ctr' or 'ctcvr'")
    if len(d) == 0:
        raise ValueError("empty dataset")
    rng = _ensure_rng(rng)
    model = build_base_model(d.schema, cfg, rng, role=role, method=role.upper())
    _fit_base(model, d, _label_array(d, role), cfg, rng)
    return model


def train_esmm(d: Dataset, cfg: TrainConfig, rng: RngLike, shared: bool = True,
               _ctcvr_term: bool = True) -> EsmmModel:
    """Co-train the two towers on all impressions with the two-term loss."""
    if len(d) == 0:
        raise ValueError("empty dataset")
    rng = _ensure_rng(rng)
    model = build_esmm_model(d.schema, cfg, rng, shared)
    y = d.y.astype(np.float64)
    t = (d.y.astype(bool) & d.z.astype(bool)).astype(np.float64)
    if cfg.prior_output_bias:
        apply_prior_bias(model.ctr_tower, float(y.mean()))
        # the conversion factor's implied prior is conversions per click
        apply_prior_bias(model.cvr_tower, float(t.sum() / max(y.sum(), 1.0)))
    state = model.store.adam
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(d))
        for s in range(0, len(d), cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            _, grads, sparse = esmm_loss_and_grads(model, d, y, t, idx, ctcvr_term=_ctcvr_term)
            adam_step(model.store.params, grads, state, sparse)
    return model


def _fit_base(model: BaseModel, ds: Dataset, labels: np.ndarray, cfg: TrainConfig,
              rng: np.random.Generator, weights: Optional[np.ndarray] = None):
    state = model.store.adam
    if cfg.prior_output_bias:
        apply_prior_bias(model.tower, _weighted_prior(labels, weights))
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(ds))
        for s in range(0, len(ds), cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            _, grads, sparse = base_loss_and_grads(model, ds, labels, idx, weights)
            adam_step(model.store.params, grads, state, sparse)
