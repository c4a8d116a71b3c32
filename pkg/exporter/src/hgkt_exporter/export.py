"""Batch export of exercise-text embeddings plus file verification."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .format import FormatError, read_embeddings, write_embeddings


class ExportError(RuntimeError):
    pass


@dataclass
class ExportJob:
    exercises_path: str
    encoder: object            # anything with .encode(list[str]) -> (n, dim)
    output_path: str
    expected_dim: int
    batch_size: int = 32


def read_exercise_texts(path: str):
    """(ids, texts) in file order; duplicate ids or missing text abort."""
    ids, texts = [], []
    seen = set()
    missing = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ExportError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
            eid = str(obj.get("exercise_id"))
            if eid in seen:
                raise ExportError(f"{path}:{lineno}: duplicate exercise_id {eid!r}")
            seen.add(eid)
            text = obj.get("text")
            if not text or not str(text).strip():
                missing.append(eid)
            ids.append(eid)
            texts.append(str(text) if text is not None else "")
    if not ids:
        raise ExportError(f"{path}: no exercises to export")
    if missing:
        raise ExportError("cannot encode exercises without text: "
                          + ", ".join(missing[:10])
                          + ("..." if len(missing) > 10 else ""))
    return ids, texts


def export(job: ExportJob) -> dict:
    """Encode every exercise in corpus order and write the embedding file.

    The dimension check runs on the first batch, before anything is
    written, so a misconfigured encoder cannot leave a partial file.
    """
    ids, texts = read_exercise_texts(job.exercises_path)
    rows = np.zeros((len(ids), job.expected_dim), dtype=np.float32)
    for start in range(0, len(texts), job.batch_size):
        chunk = texts[start:start + job.batch_size]
        vecs = np.asarray(job.encoder.encode(chunk), dtype=np.float32)
        if vecs.shape != (len(chunk), job.expected_dim):
            raise ExportError(
                f"encoder produced shape {vecs.shape}, expected "
                f"({len(chunk)}, {job.expected_dim}); aborting before write")
        rows[start:start + len(chunk)] = vecs
    write_embeddings(job.output_path, rows, ids)
    return {"rows": len(ids), "dim": job.expected_dim, "path": job.output_path}


def verify(embedding_path: str, exercises_path: str) -> dict:
    """Check layout, id bijection against the corpus, NaNs, and norms."""
    report = {"ok": True, "errors": [], "rows": 0, "dim": 0,
              "norm_min": None, "norm_mean": None, "norm_max": None}
    try:
        rows, ids = read_embeddings(embedding_path)
    except FormatError as e:
        report["ok"] = False
        report["errors"].append(str(e))
        return report
    report["rows"], report["dim"] = rows.shape

    corpus_ids, _ = read_exercise_texts(exercises_path)
    if sorted(ids) != sorted(corpus_ids):
        report["ok"] = False
        extra = set(ids) - set(corpus_ids)
        lacking = set(corpus_ids) - set(ids)
        if extra:
            report["errors"].append(f"ids not in corpus: {sorted(extra)[:5]}")
        if lacking:
            report["errors"].append(f"corpus ids missing: {sorted(lacking)[:5]}")
        if len(ids) != len(set(ids)):
            report["errors"].append("duplicate ids in trailer")

    bad = ~np.isfinite(rows)
    if bad.any():
        report["ok"] = False
        for row_idx in np.unique(np.nonzero(bad)[0])[:10]:
            report["errors"].append(
                f"non-finite values in row {row_idx} (id {ids[row_idx]!r})")
    else:
        norms = np.linalg.norm(rows, axis=1)
        report["norm_min"] = float(norms.min())
        report["norm_mean"] = float(norms.mean())
        report["norm_max"] = float(norms.max())
    return report
