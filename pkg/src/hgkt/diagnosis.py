"""Knowledge & schema diagnosis: per-step mastery over every
(knowledge, schema) pair plus q-count-weighted marginals."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import seq_model as sq
from .corpus import LearnerSequence
from .heg import Heg
from .model import ModelConfig, build_batch, run_history


@dataclass
class QCounts:
    q: np.ndarray  # (n_knowledge, n_schemas) int64


@dataclass
class KsMatrix:
    r_ks: np.ndarray  # (n_knowledge, n_schemas) predicted correctness
    t: int
    learner_id: str


def q_counts(knowledge_of: np.ndarray, assign: np.ndarray, n_knowledge: int,
             n_schemas: int) -> QCounts:
    q = np.zeros((n_knowledge, n_schemas), dtype=np.int64)
    np.add.at(q, (np.asarray(knowledge_of), np.asarray(assign)), 1)
    return QCounts(q=q)


def ks_matrix(mcfg: ModelConfig, params: dict, heg: Heg, history_seq,
              knowledge_of: np.ndarray, t: int, learner_id: str = "") -> KsMatrix:
    """Predict every (knowledge, schema) combination after t observed events.

    The knowledge axis is flat when the model was trained in strict
    readout mode, since that readout never sees the target knowledge.
    """
    if t < 1 or t > len(history_seq.events):
        raise ValueError(f"t must be in 1..{len(history_seq.events)}, got {t}")
    events = history_seq.events[:t]
    batch = build_batch([LearnerSequence(learner_id=history_seq.learner_id,
                                         events=events)], knowledge_of,
                        dtype=np.float64)
    history_m, history_s, table = run_history(mcfg, params, heg, batch)

    k_count, s_count = mcfg.n_knowledge, mcfg.n_schemas
    grid = k_count * s_count
    dtype = table.data.dtype

    # one grid row per (knowledge i, schema j); history is shared, so tile it
    tiled_m = [nm.constant(np.repeat(m.data, grid, axis=0)) for m in history_m]
    tiled_s = [nm.constant(np.repeat(s.data, grid, axis=0)) for s in history_s]
    schema_cols = np.tile(np.arange(s_count), k_count)
    knowledge_rows = np.repeat(np.arange(k_count), s_count)
    s_next = nm.constant(table.data[schema_cols])
    v_next = np.zeros((grid, k_count), dtype=dtype)
    v_next[np.arange(grid), knowledge_rows] = 1.0

    m_last = tiled_m[-1]
    if mcfg.attention:
        m_att = sq.seq_attention(tiled_m, tiled_s, s_next, mcfg.window, s_count)
        _, m_f = sq.schema_attention(table, s_next, m_last)
    else:
        m_att = nm.constant(np.zeros((grid, s_count), dtype=dtype))
        m_f = nm.constant(np.zeros((grid, 1), dtype=dtype))
    preds = sq.predict(params, m_att, m_last, m_f,
                       None if mcfg.strict_eq14 else v_next, s_next,
                       mcfg.seq_config())
    return KsMatrix(r_ks=preds.data.reshape(k_count, s_count), t=t,
                    learner_id=learner_id)


def knowledge_mastery(r_ks: np.ndarray, q: QCounts) -> dict[int, float]:
    """Row-weighted aggregation; knowledge with no exercises is omitted."""
    out = {}
    row_sums = q.q.sum(axis=1)
    for i in range(q.q.shape[0]):
        if row_sums[i] == 0:
            continue
        d = q.q[i] / row_sums[i]
        out[i] = float(r_ks[i] @ d)
    return out


def schema_mastery(r_ks: np.ndarray, q: QCounts) -> dict[int, float]:
    """Column-weighted aggregation; schemas with no exercises are omitted."""
    out = {}
    col_sums = q.q.sum(axis=0)
    for j in range(q.q.shape[1]):
        if col_sums[j] == 0:
            continue
        d = q.q[:, j] / col_sums[j]
        out[j] = float(r_ks[:, j] @ d)
    return out


def write_diagnosis_json(path: str, ks: KsMatrix, q: QCounts,
                         knowledge_ids: list[str]):
    r_k = knowledge_mastery(ks.r_ks, q)
    r_s = schema_mastery(ks.r_ks, q)
    doc = {
        "learner_id": ks.learner_id,
        "t": ks.t,
        "knowledge_ids": knowledge_ids,
        "schema_ids": list(range(ks.r_ks.shape[1])),
        "R_ks": [[float(x) for x in row] for row in ks.r_ks],
        "R_k": {knowledge_ids[i]: v for i, v in r_k.items()},
        "R_s": {str(j): v for j, v in r_s.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def write_ks_csv(path: str, ks: KsMatrix, knowledge_ids: list[str]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["knowledge"] + [str(j) for j in range(ks.r_ks.shape[1])])
        for i, row in enumerate(ks.r_ks):
            writer.writerow([knowledge_ids[i]] + [f"{x:.6f}" for x in row])
