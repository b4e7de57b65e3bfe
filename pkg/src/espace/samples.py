"""Sparse multi-field impression samples with sequential click/conversion labels.

A sample is one impression: per-field feature ids (multi-hot, possibly
empty), a click label y, a conversion label z, and a timestamp. Conversion
implies click (z = 1 forces y = 1); datasets are kept in time order.

Dataset stores samples columnar (flat id array plus offsets) so training
code can gather minibatches without touching Python objects, but exposes
`SparseSample` views for per-sample work.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_EMBEDDING_DIM = 18


@dataclass(frozen=True)
class FieldSchema:
    """Shape of the sparse feature space: per-field vocab sizes and embedding width."""

    vocab_sizes: tuple[int, ...]
    embedding_dim: int = DEFAULT_EMBEDDING_DIM

    def __post_init__(self):
        if len(self.vocab_sizes) < 1:
            raise ValueError("schema needs at least one field")
        if any(int(v) < 1 for v in self.vocab_sizes):
            raise ValueError("every vocab size must be >= 1")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be >= 1")
        object.__setattr__(self, "vocab_sizes", tuple(int(v) for v in self.vocab_sizes))

    @classmethod
    def uniform(cls, field_count: int, vocab_size: int, embedding_dim: int = DEFAULT_EMBEDDING_DIM) -> "FieldSchema":
        return cls((vocab_size,) * field_count, embedding_dim)

    @property
    def field_count(self) -> int:
        return len(self.vocab_sizes)

    @property
    def input_width(self) -> int:
        """Width of the pooled dense vector fed to an MLP tower."""
        return self.field_count * self.embedding_dim

    @property
    def field_offsets(self) -> np.ndarray:
        """Row offsets of each field in a stacked embedding matrix (length F+1)."""
        return np.concatenate(([0], np.cumsum(self.vocab_sizes))).astype(np.int64)

    @property
    def total_rows(self) -> int:
        return int(sum(self.vocab_sizes))


@dataclass(frozen=True)
class SparseSample:
    """One impression: per-field id tuples plus sequential labels."""

    timestamp: int
    fields: tuple[tuple[int, ...], ...]
    y: int
    z: int


def validate(sample: SparseSample, schema: FieldSchema) -> Optional[str]:
    """Check one sample against the schema.

    Returns None when valid, otherwise a description of the first
    violated rule (label order before id ranges).
    """
    if sample.y not in (0, 1) or sample.z not in (0, 1):
        return "labels must be binary"
    if sample.z == 1 and sample.y == 0:
        return "conversion without click"
    if len(sample.fields) != schema.field_count:
        return f"expected {schema.field_count} fields, got {len(sample.fields)}"
    for f, ids in enumerate(sample.fields):
        vocab = schema.vocab_sizes[f]
        for i in ids:
            if i < 0 or i >= vocab:
                return f"id out of range in field {f}"
    return None


def _gather_segments(values: np.ndarray, starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Concatenate values[starts[k] : starts[k]+lens[k]] for all k, vectorized."""
    total = int(lens.sum())
    if total == 0:
        return values[:0].copy()
    head = np.repeat(starts - np.concatenate(([0], np.cumsum(lens)[:-1])), lens)
    return values[head + np.arange(total, dtype=np.int64)]


class Dataset:
    """Time-ordered collection of SparseSamples over one schema.

    Immutable after construction. Columnar layout: `ids` holds all feature
    ids back to back, `counts[i, f]` is the number of ids of sample i in
    field f, and per-sample offsets are derived from the counts.
    """

    def __init__(
        self,
        schema: FieldSchema,
        timestamps: np.ndarray,
        y: np.ndarray,
        z: np.ndarray,
        ids: np.ndarray,
        counts: np.ndarray,
        *,
        check: bool = True,
        require_sorted: bool = True,
    ):
        self.schema = schema
        self.timestamps = np.ascontiguousarray(timestamps, dtype=np.int64)
        self.y = np.ascontiguousarray(y, dtype=np.int8)
        self.z = np.ascontiguousarray(z, dtype=np.int8)
        self.ids = np.ascontiguousarray(ids, dtype=np.int32)
        self.counts = np.ascontiguousarray(counts, dtype=np.int32)
        n = len(self.timestamps)
        if self.counts.shape != (n, schema.field_count):
            raise ValueError("counts shape does not match sample count / field count")
        if int(self.counts.sum()) != len(self.ids):
            raise ValueError("id buffer length does not match counts")
        self._sample_ptr = np.concatenate(
            ([0], np.cumsum(self.counts.sum(axis=1, dtype=np.int64)))
        )
        self._gids: Optional[np.ndarray] = None
        if check:
            self._check(require_sorted)

    def _check(self, require_sorted: bool):
        if np.any((self.y < 0) | (self.y > 1)) or np.any((self.z < 0) | (self.z > 1)):
            raise ValueError("labels must be binary")
        bad = np.nonzero(self.z > self.y)[0]
        if bad.size:
            raise ValueError(f"conversion without click at sample {bad[0]}")
        if require_sorted and self.timestamps.size > 1:
            if np.any(np.diff(self.timestamps) < 0):
                k = int(np.nonzero(np.diff(self.timestamps) < 0)[0][0]) + 1
                raise ValueError(f"timestamps not sorted at sample {k}")
        # ids within each field's vocab
        if self.ids.size:
            field_of_id = np.repeat(
                np.tile(np.arange(self.schema.field_count), len(self)), self.counts.ravel()
            )
            vocab = np.asarray(self.schema.vocab_sizes)[field_of_id]
            bad = np.nonzero((self.ids < 0) | (self.ids >= vocab))[0]
            if bad.size:
                f = int(field_of_id[bad[0]])
                raise ValueError(f"id out of range in field {f}")

    # -- construction -------------------------------------------------

    @classmethod
    def from_samples(
        cls,
        schema: FieldSchema,
        samples: Iterable[SparseSample],
        *,
        sort: bool = False,
    ) -> "Dataset":
        samples = list(samples)
        for s in samples:
            msg = validate(s, schema)
            if msg is not None:
                raise ValueError(msg)
        if sort:
            samples.sort(key=lambda s: s.timestamp)
        n = len(samples)
        timestamps = np.fromiter((s.timestamp for s in samples), np.int64, n)
        y = np.fromiter((s.y for s in samples), np.int8, n)
        z = np.fromiter((s.z for s in samples), np.int8, n)
        counts = np.zeros((n, schema.field_count), np.int32)
        flat: list[int] = []
        for i, s in enumerate(samples):
            for f, ids in enumerate(s.fields):
                counts[i, f] = len(ids)
                flat.extend(ids)
        ids = np.asarray(flat, np.int32)
        return cls(schema, timestamps, y, z, ids, counts)

    @classmethod
    def empty(cls, schema: FieldSchema) -> "Dataset":
        return cls(
            schema,
            np.zeros(0, np.int64),
            np.zeros(0, np.int8),
            np.zeros(0, np.int8),
            np.zeros(0, np.int32),
            np.zeros((0, schema.field_count), np.int32),
        )

    # -- access -------------------------------------------------------

    def __len__(self) -> int:
        return len(self.timestamps)

    def sample(self, i: int) -> SparseSample:
        start = self._sample_ptr[i]
        fields = []
        for f in range(self.schema.field_count):
            c = int(self.counts[i, f])
            fields.append(tuple(int(v) for v in self.ids[start : start + c]))
            start += c
        return SparseSample(int(self.timestamps[i]), tuple(fields), int(self.y[i]), int(self.z[i]))

    def __iter__(self) -> Iterator[SparseSample]:
        return (self.sample(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.counts, other.counts)
        )

    @property
    def n_clicks(self) -> int:
        return int(self.y.sum())

    @property
    def n_conversions(self) -> int:
        return int(self.z.sum())

    # -- derived views ------------------------------------------------

    def take(self, indices: Sequence[int]) -> "Dataset":
        """Samples at `indices` (repeats allowed, any order); skips the
        time-order check since training subsets may be shuffled."""
        idx = np.asarray(indices, dtype=np.int64)
        lens = self.counts.sum(axis=1, dtype=np.int64)[idx]
        ids = _gather_segments(self.ids, self._sample_ptr[idx], lens)
        return Dataset(
            self.schema,
            self.timestamps[idx],
            self.y[idx],
            self.z[idx],
            ids,
            self.counts[idx],
            check=False,
            require_sorted=False,
        )

    def gids(self) -> np.ndarray:
        """ids shifted by field offsets: row indices into a stacked embedding matrix."""
        if self._gids is None:
            base = np.repeat(
                np.tile(self.schema.field_offsets[:-1], len(self)), self.counts.ravel()
            )
            self._gids = (self.ids.astype(np.int64) + base).astype(np.int32)
        return self._gids

    def batch_inputs(self, indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(gids, per-field counts) for the given sample indices, ready for pooling."""
        idx = np.asarray(indices, dtype=np.int64)
        lens = self.counts.sum(axis=1, dtype=np.int64)[idx]
        bgids = _gather_segments(self.gids(), self._sample_ptr[idx], lens)
        return bgids, self.counts[idx].ravel()


def clicked_subset(d: Dataset) -> Dataset:
    """Samples with y = 1, order preserved."""
    return d.take(np.nonzero(d.y == 1)[0])


def time_split(d: Dataset) -> tuple[Dataset, Dataset]:
    """First floor(N/2) samples for training, the rest for testing."""
    n = len(d)
    if n < 2:
        raise ValueError("insufficient data to split")
    cut = n // 2
    idx = np.arange(n)
    train = d.take(idx[:cut])
    test = d.take(idx[cut:])
    return train, test
