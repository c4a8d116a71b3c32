"""The HGKTEMB1 embedding file layout.

    bytes 0..8    magic "HGKTEMB1"
    bytes 8..12   u32 little-endian row count N
    bytes 12..16  u32 little-endian dimension D
    bytes 16..    N*D float32 little-endian, row-major
    trailer       UTF-8 JSON array of N exercise_id strings
                  (starts at offset 16 + 4*N*D)
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HGKTEMB1"
HEADER_LEN = 16


class FormatError(ValueError):
    pass


def write_embeddings(path: str, rows: np.ndarray, ids: list[str]):
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise FormatError(f"rows must be 2-D, got shape {rows.shape}")
    if rows.shape[0] != len(ids):
        raise FormatError(f"{rows.shape[0]} rows but {len(ids)} ids")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
        f.write(rows.tobytes())
        f.write(json.dumps(list(ids)).encode("utf-8"))


def read_embeddings(path: str):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < HEADER_LEN or blob[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic or truncated header")
    n, d = struct.unpack("<II", blob[8:HEADER_LEN])
    body_end = HEADER_LEN + 4 * n * d
    if len(blob) < body_end:
        raise FormatError(f"{path}: truncated body "
                          f"(expected {body_end} bytes, found {len(blob)})")
    rows = np.frombuffer(blob[HEADER_LEN:body_end], dtype="<f4").reshape(n, d).copy()
    try:
        ids = json.loads(blob[body_end:].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: unreadable id trailer") from e
    if not isinstance(ids, list) or len(ids) != n:
        raise FormatError(f"{path}: trailer must list exactly {n} ids")
    return rows, [str(i) for i in ids]


def expected_size(n: int, dim: int, ids: list[str]) -> int:
    return HEADER_LEN + 4 * n * dim + len(json.dumps(list(ids)).encode("utf-8"))
