"""Parameter containers: embedding tables, MLP towers, Adam state, snapshots.

All parameters are float64. Initialization draws from a caller-supplied
Generator so identical seeds give bit-identical models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..samples import FieldSchema

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class EmbeddingTable:
    """Per-field embedding matrices stored stacked: row (field_offset + id)."""

    def __init__(self, schema: FieldSchema, rows: np.ndarray):
        if rows.shape != (schema.total_rows, schema.embedding_dim):
            raise ValueError("embedding rows do not match schema")
        self.schema = schema
        self.rows = np.ascontiguousarray(rows, dtype=np.float64)

    @classmethod
    def init(cls, schema: FieldSchema, rng: np.random.Generator, scale: float = 0.01) -> "EmbeddingTable":
        rows = rng.uniform(-scale, scale, size=(schema.total_rows, schema.embedding_dim))
        return cls(schema, rows)

    def field(self, f: int) -> np.ndarray:
        """View of field f's (vocab_size, dim) matrix; writes are visible in `rows`."""
        off = self.schema.field_offsets
        return self.rows[off[f] : off[f + 1]]


class MlpTower:
    """Fully connected stack: affine + ReLU on hidden layers, 2 output logits."""

    def __init__(self, dims: tuple[int, ...], weights: list[np.ndarray], biases: list[np.ndarray]):
        if len(dims) < 2 or dims[-1] != 2:
            raise ValueError("tower needs at least input and a 2-logit output layer")
        for a, b, w in zip(dims[:-1], dims[1:], weights):
            if w.shape != (a, b):
                raise ValueError("weight shape mismatch")
        self.dims = tuple(int(d) for d in dims)
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]

    @classmethod
    def init(cls, dims: tuple[int, ...], rng: np.random.Generator) -> "MlpTower":
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(dims), weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)


@dataclass
class AdamState:
    """Moment accumulators keyed like the parameter dict, plus the step counter."""

    lr: float = 1e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def slots(self, name: str, shape) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.m:
            self.m[name] = np.zeros(shape)
            self.v[name] = np.zeros(shape)
        return self.m[name], self.v[name]


class ParamStore:
    """Ordered name -> array registry shared by a model and its optimizer.

    Sharing a parameter between towers means registering the same array
    object once; both towers then read and write identical storage.
    """

    def __init__(self, adam: AdamState | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.adam = adam if adam is not None else AdamState()

    def register(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = array
        return array

    def register_tower(self, prefix: str, tower: MlpTower):
        for i, (w, b) in enumerate(zip(tower.weights, tower.biases)):
            self.register(f"{prefix}/W{i}", w)
            self.register(f"{prefix}/b{i}", b)

    def names(self):
        return list(self.params)


# -- snapshots ---------------------------------------------------------

_MAGIC = b"ESNAP1\n"


def write_snapshot(path, store: ParamStore, schema: FieldSchema, meta: dict | None = None):
    """Self-describing container: JSON header, then little-endian float64 groups
    in registration order. Round-trips bit-exactly."""
    header = {
        "schema": {
            "field_count": schema.field_count,
            "vocab_sizes": list(schema.vocab_sizes),
            "embedding_dim": schema.embedding_dim,
        },
        "groups": [{"name": n, "shape": list(a.shape)} for n, a in store.params.items()],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for a in store.params.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[FieldSchema, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"not a parameter snapshot: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        params = {}
        for g in header["groups"]:
            shape = tuple(g["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 8)
            if len(buf) != n * 8:
                raise ValueError(f"truncated snapshot: {path}")
            params[g["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    s = header["schema"]
    schema = FieldSchema(tuple(s["vocab_sizes"]), s["embedding_dim"])
    return schema, header["meta"], params
