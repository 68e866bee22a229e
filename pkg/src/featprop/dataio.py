"""On-disk formats.

Interactions
    UTF-8 text, one ``user<TAB>item`` pair per line. Tokens are mapped to
    dense indices in order of first appearance; repeated pairs collapse.

Features (``.fpmm``), all integers little-endian::

    offset  size  field
    0       4     magic b"FPMM"
    4       4     version (uint32, = 1)
    8       8     num_items (uint64)
    16      8     dim (uint64)
    24      4     label length in bytes (uint32)
    28      L     modality label, UTF-8
    28+L    4*num_items*dim   float32 payload, row-major

Masks
    Text, one line per item: ``1`` if the item's features are known, ``0``
    if missing.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from featprop.errors import FormatError, ParseError, ShapeError, TruncatedFileError
from featprop.features import FeatureBundle, MissingMask, ModalityFeatureSet
from featprop.graph import InteractionMatrix, ItemItemGraph, Stage

MAGIC = b"FPMM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQI")


@dataclass(frozen=True)
class LoadedInteractions:
    matrix: InteractionMatrix
    user_tokens: list
    item_tokens: list


def load_interactions(path) -> LoadedInteractions:
    path = Path(path)
    users, items = {}, {}
    u_idx, i_idx = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise ParseError(path, line_no, f"expected 'user<TAB>item', got {line!r}")
            u_idx.append(users.setdefault(fields[0], len(users)))
            i_idx.append(items.setdefault(fields[1], len(items)))
    if not u_idx:
        raise ParseError(path, 0, "file contains no interactions")
    matrix = InteractionMatrix.from_pairs(u_idx, i_idx, len(users), len(items))
    return LoadedInteractions(matrix, list(users), list(items))


def save_interactions(path, matrix: InteractionMatrix, user_tokens=None, item_tokens=None):
    user_tokens = user_tokens or [str(u) for u in range(matrix.num_users)]
    item_tokens = item_tokens or [str(i) for i in range(matrix.num_items)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in range(matrix.num_users):
            for i in matrix.user_items(u):
                fh.write(f"{user_tokens[u]}\t{item_tokens[i]}\n")


def save_tokens(path, tokens):
    Path(path).write_text("".join(f"{t}\n" for t in tokens), encoding="utf-8")


def load_tokens(path) -> list:
    return Path(path).read_text(encoding="utf-8").splitlines()


def save_features(path, features: ModalityFeatureSet):
    data = np.ascontiguousarray(features.data, dtype="<f4")
    label = features.modality.encode("utf-8")
    header = _HEADER.pack(MAGIC, VERSION, data.shape[0], data.shape[1], len(label))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(label)
        fh.write(data.tobytes(order="C"))


def load_features(path) -> ModalityFeatureSet:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(
            f"{path}: header needs {_HEADER.size} bytes, file has {len(blob)}"
        )
    magic, version, num_items, dim, label_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}, expected {VERSION}")
    start = _HEADER.size + label_len
    expected = start + num_items * dim * 4
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: truncated payload, expected {expected} bytes, got {len(blob)}"
        )
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} trailing bytes after payload")
    try:
        label = blob[_HEADER.size:start].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: modality label is not UTF-8") from exc
    data = np.frombuffer(blob, dtype="<f4", count=num_items * dim, offset=start)
    return ModalityFeatureSet(label, data.astype(np.float32).reshape(num_items, dim))


def save_mask(path, mask: MissingMask):
    Path(path).write_text("".join("1\n" if k else "0\n" for k in mask.known), encoding="ascii")


def load_mask(path) -> MissingMask:
    values = []
    for line_no, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        if line not in ("0", "1"):
            raise ParseError(path, line_no, f"mask lines must be 0 or 1, got {line!r}")
        values.append(line == "1")
    return MissingMask(np.array(values, dtype=bool))


def save_graph(path, graph: ItemItemGraph):
    adj = graph.adjacency
    with open(path, "wb") as fh:
        np.savez(
            fh,
            stage=np.array(graph.stage.value),
            shape=np.array(adj.shape, dtype=np.int64),
            indptr=adj.indptr.astype(np.int64),
            indices=adj.indices.astype(np.int64),
            data=adj.data,
            degree=graph.degree if graph.degree is not None else np.zeros(0),
        )


def load_graph(path) -> ItemItemGraph:
    with np.load(path, allow_pickle=False) as z:
        try:
            stage = Stage(str(z["stage"]))
            shape = tuple(int(x) for x in z["shape"])
            adj = sp.csr_matrix((z["data"], z["indices"], z["indptr"]), shape=shape)
            degree = z["degree"]
        except KeyError as exc:
            raise FormatError(f"{path}: missing graph field {exc}") from exc
    return ItemItemGraph(adj, stage, degree if degree.size or shape[0] == 0 else None)


def report_columns(modalities) -> list:
    return ["method", "rate", "seed", "k", "recall_at_k",
            *(f"cosine_{m}" for m in modalities), "runtime_ms"]


def _row_dict(row, modalities) -> dict:
    d = {
        "method": row.method,
        "rate": row.missing_rate,
        "seed": row.seed,
        "k": row.k,
        "recall_at_k": row.recall_at_k,
    }
    for m in modalities:
        d[f"cosine_{m}"] = row.cosine[m]
    d["runtime_ms"] = row.runtime_ms
    return d


def report_to_csv(report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = report_columns(report.modalities)
    writer.writerow(cols)
    for row in report.rows:
        d = _row_dict(row, report.modalities)
        writer.writerow([repr(d[c]) if isinstance(d[c], float) else d[c] for c in cols])
    return buf.getvalue()


def report_to_json(report) -> str:
    payload = {
        "config": report.config,
        "modalities": list(report.modalities),
        "rows": [_row_dict(r, report.modalities) for r in report.rows],
    }
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def write_report(report, directory, stem="report"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{stem}.csv").write_text(report_to_csv(report), encoding="utf-8")
    (directory / f"{stem}.json").write_text(report_to_json(report), encoding="utf-8")
    return directory / f"{stem}.csv", directory / f"{stem}.json"


def read_report_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def load_bundle(paths) -> FeatureBundle:
    sets = [load_features(p) for p in paths]
    try:
        return FeatureBundle(sets)
    except ShapeError as exc:
        raise ShapeError(f"feature files disagree: {exc}") from exc
