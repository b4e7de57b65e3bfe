"""Text interchange formats: impression logs, truth sidecars, config files.

Log format, one sample per line after a single header line:

    #fields=<n> vocab=<v1,v2,...> dim=<d>
    <timestamp>\t<y>\t<z>\t<field:id> <field:id> ...

The token column may be empty (a sample with no active ids). Writing then
parsing reproduces the dataset exactly, and re-writing reproduces the
bytes, so logs can be diffed.
"""

from __future__ import annotations

import configparser
import os
from typing import TextIO, Union

import numpy as np

from .samples import Dataset, FieldSchema

PathOrStream = Union[str, os.PathLike, TextIO]


def _format_header(schema: FieldSchema) -> str:
    vocab = ",".join(str(v) for v in schema.vocab_sizes)
    return f"#fields={schema.field_count} vocab={vocab} dim={schema.embedding_dim}"


def _parse_header(line: str) -> FieldSchema:
    try:
        parts = dict(kv.split("=", 1) for kv in line.lstrip("#").split())
        n = int(parts["fields"])
        vocab = tuple(int(v) for v in parts["vocab"].split(","))
        dim = int(parts["dim"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed header: {line!r}") from exc
    if len(vocab) != n:
        raise ValueError(f"malformed header: {n} fields but {len(vocab)} vocab sizes")
    return FieldSchema(vocab, dim)


def write_log(d: Dataset, path_or_stream: PathOrStream) -> None:
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w", encoding="utf-8", newline="\n") as fh:
            write_log(d, fh)
        return
    out = path_or_stream
    out.write(_format_header(d.schema) + "\n")
    ptr = 0
    for i in range(len(d)):
        tokens = []
        for f in range(d.schema.field_count):
            c = int(d.counts[i, f])
            for k in range(c):
                tokens.append(f"{f}:{d.ids[ptr + k]}")
            ptr += c
        out.write(f"{d.timestamps[i]}\t{d.y[i]}\t{d.z[i]}\t{' '.join(tokens)}\n")


def parse_log(path_or_stream: PathOrStream, *, sort: bool = False) -> Dataset:
    """Parse a log; errors carry the 1-based line number of the first offence."""
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "r", encoding="utf-8") as fh:
            return parse_log(fh, sort=sort)
    stream = path_or_stream
    header = stream.readline()
    if not header:
        raise ValueError("malformed header: empty input")
    schema = _parse_header(header.rstrip("\n"))
    timestamps: list[int] = []
    ys: list[int] = []
    zs: list[int] = []
    flat_ids: list[int] = []
    counts_rows: list[np.ndarray] = []
    last_ts = None
    for lineno, raw in enumerate(stream, start=2):
        line = raw.rstrip("\n")
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ValueError(f"expected 4 tab-separated columns at line {lineno}")
        try:
            ts, y, z = int(cols[0]), int(cols[1]), int(cols[2])
        except ValueError as exc:
            raise ValueError(f"bad integer column at line {lineno}") from exc
        if y not in (0, 1) or z not in (0, 1):
            raise ValueError(f"labels must be 0/1 at line {lineno}")
        if z > y:
            raise ValueError(f"conversion without click at line {lineno}")
        if not sort and last_ts is not None and ts < last_ts:
            raise ValueError(f"non-monotone timestamp at line {lineno}")
        last_ts = ts
        row = np.zeros(schema.field_count, dtype=np.int32)
        per_field: list[list[int]] = [[] for _ in range(schema.field_count)]
        if cols[3]:
            for tok in cols[3].split(" "):
                try:
                    f_str, id_str = tok.split(":", 1)
                    f, i = int(f_str), int(id_str)
                except ValueError as exc:
                    raise ValueError(f"bad token {tok!r} at line {lineno}") from exc
                if f < 0 or f >= schema.field_count:
                    raise ValueError(f"field index out of range at line {lineno}")
                if i < 0 or i >= schema.vocab_sizes[f]:
                    raise ValueError(f"id out of range in field {f} at line {lineno}")
                per_field[f].append(i)
        for f in range(schema.field_count):
            row[f] = len(per_field[f])
            flat_ids.extend(per_field[f])
        timestamps.append(ts)
        ys.append(y)
        zs.append(z)
        counts_rows.append(row)
    n = len(timestamps)
    counts = np.vstack(counts_rows) if n else np.zeros((0, schema.field_count), np.int32)
    ds = Dataset(
        schema,
        np.asarray(timestamps, np.int64),
        np.asarray(ys, np.int8),
        np.asarray(zs, np.int8),
        np.asarray(flat_ids, np.int32),
        counts,
        check=False,
        require_sorted=False,
    )
    if sort and n:
        order = np.argsort(ds.timestamps, kind="mergesort")
        ds = ds.take(order)
    return ds


def write_truth(path_or_stream: PathOrStream, pctr: np.ndarray, pcvr: np.ndarray) -> None:
    """Sidecar with one `true_pctr<TAB>true_pcvr` line per sample."""
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "w", encoding="utf-8", newline="\n") as fh:
            write_truth(fh, pctr, pcvr)
        return
    out = path_or_stream
    for a, b in zip(pctr, pcvr):
        out.write(f"{float(a)!r}\t{float(b)!r}\n")


def read_truth(path_or_stream: PathOrStream) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(path_or_stream, (str, os.PathLike)):
        with open(path_or_stream, "r", encoding="utf-8") as fh:
            return read_truth(fh)
    pairs = [line.rstrip("\n").split("\t") for line in path_or_stream if line.strip()]
    pctr = np.array([float(a) for a, _ in pairs])
    pcvr = np.array([float(b) for _, b in pairs])
    return pctr, pcvr


def load_config(path: Union[str, os.PathLike]) -> dict[str, dict[str, str]]:
    """Flat `key = value` sections; values stay strings, callers coerce."""
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    return {section: dict(parser.items(section)) for section in parser.sections()}
