"""End-to-end tracing model: schema embeddings feeding the sequence tracer.

The schema-embedding source is switchable for ablations:

  none           zero embeddings (knowledge-only baseline)
  direct_only    bottom-graph convolutions mean-pooled per schema, projected
  indirect_only  learned per-schema embedding table
  merge          concatenation of direct_only and indirect_only
  both           full two-level graph network (the default)

Attention can be disabled independently; the attention terms are then
replaced by exact zeros in every forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from . import seq_model as sq
from .heg import Heg
from .hgnn import HgnnConfig, exercise_gnn_forward, hgnn_forward, init_hgnn_params

PRESETS = ("none", "direct_only", "indirect_only", "merge", "both")


@dataclass
class ModelConfig:
    n_exercises: int
    n_knowledge: int
    n_schemas: int
    exer_dim: int = 64
    schema_dim: int = 30
    input_dim: int = 100
    hidden: int = 200
    window: int = 20
    exer_layers: int = 3
    schema_layers: int = 1
    preset: str = "both"
    attention: bool = True
    strict_eq14: bool = False
    mean_pool: bool = False
    dropout: float = 0.5

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown ablation preset {self.preset!r}")

    @property
    def s_dim(self) -> int:
        return 2 * self.schema_dim if self.preset == "merge" else self.schema_dim

    def seq_config(self) -> sq.SeqConfig:
        return sq.SeqConfig(n_knowledge=self.n_knowledge, n_schemas=self.n_schemas,
                            schema_dim=self.s_dim, input_dim=self.input_dim,
                            hidden=self.hidden, window=self.window,
                            strict_concat=self.strict_eq14)

    def hgnn_config(self) -> HgnnConfig:
        return HgnnConfig(n_exercises=self.n_exercises, n_schemas=self.n_schemas,
                          exer_dim=self.exer_dim, schema_dim=self.schema_dim,
                          exer_layers=self.exer_layers, schema_layers=self.schema_layers,
                          mean_pool=self.mean_pool)


def init_model_params(cfg: ModelConfig, rng: np.random.Generator,
                      dtype=nm.DEFAULT_DTYPE) -> dict:
    params = {}
    if cfg.preset in ("both", "direct_only", "merge"):
        params.update(init_hgnn_params(cfg.hgnn_config(), rng, dtype))
    if cfg.preset in ("direct_only", "merge"):
        params["w_direct"] = nm.uniform_init(rng, (cfg.exer_dim, cfg.schema_dim),
                                             cfg.exer_dim, dtype)
    if cfg.preset in ("indirect_only", "merge"):
        params["schema_table"] = nm.uniform_init(rng, (cfg.n_schemas, cfg.schema_dim),
                                                 cfg.n_schemas, dtype)
    params.update(sq.init_seq_params(cfg.seq_config(), rng, dtype))
    return params


def schema_table_forward(cfg: ModelConfig, params: dict, heg: Heg,
                         dtype=nm.DEFAULT_DTYPE) -> nm.Tensor:
    """(n_schemas, s_dim) embedding table; recomputed every forward pass so
    graph-side parameters train jointly with the tracer."""
    if cfg.preset == "none":
        return nm.constant(np.zeros((cfg.n_schemas, cfg.schema_dim)), dtype=dtype)
    if cfg.preset == "indirect_only":
        return params["schema_table"]
    if cfg.preset == "both":
        return hgnn_forward(heg, params, cfg.hgnn_config(), dtype=dtype)
    # direct_only / merge: pool the bottom-graph output per schema
    h_e = exercise_gnn_forward(heg, params, cfg.hgnn_config(), dtype=dtype)
    pooled = nm.group_sum(h_e, heg.assign, heg.schema_count)
    counts = np.bincount(heg.assign, minlength=heg.schema_count).astype(h_e.data.dtype)
    pooled = nm.mul(pooled, nm.constant((1.0 / counts)[:, None], dtype=h_e.data.dtype))
    direct = nm.matmul(pooled, params["w_direct"])
    if cfg.preset == "direct_only":
        return direct
    return nm.concat([direct, params["schema_table"]], axis=1)


@dataclass
class Batch:
    exercise: np.ndarray    # (B, T) int64
    knowledge: np.ndarray   # (B, T) int64
    correct: np.ndarray     # (B, T) float
    mask: np.ndarray        # (B, T) float, 1 for real events

    @property
    def batch_size(self):
        return self.exercise.shape[0]

    @property
    def steps(self):
        return self.exercise.shape[1]


def build_batch(seqs, knowledge_of: np.ndarray, dtype=np.float64) -> Batch:
    b = len(seqs)
    t_max = max(len(s.events) for s in seqs)
    exercise = np.zeros((b, t_max), dtype=np.int64)
    correct = np.zeros((b, t_max), dtype=dtype)
    mask = np.zeros((b, t_max), dtype=dtype)
    for row, seq in enumerate(seqs):
        for col, ev in enumerate(seq.events):
            exercise[row, col] = ev.exercise_id
            correct[row, col] = ev.correct
            mask[row, col] = 1.0
    knowledge = knowledge_of[exercise]
    return Batch(exercise=exercise, knowledge=knowledge, correct=correct, mask=mask)


def _one_hot(indices: np.ndarray, width: int, dtype) -> np.ndarray:
    out = np.zeros((indices.shape[0], width), dtype=dtype)
    out[np.arange(indices.shape[0]), indices] = 1.0
    return out


def forward_batch(cfg: ModelConfig, params: dict, heg: Heg, batch: Batch,
                  train: bool = False, rng: np.random.Generator | None = None,
                  collect_attention: bool = False):
    """Unrolled forward pass.

    Returns (predictions, diagnostics): predictions has shape (B, T-1),
    prediction column t-1 targets event t (the first event of a sequence
    is never predicted). Padded positions produce values that the loss
    mask must exclude.
    """
    dtype = next(iter(params.values())).data.dtype
    scfg = cfg.seq_config()
    table = schema_table_forward(cfg, params, heg, dtype=dtype)
    b, t_max = batch.exercise.shape
    schema_idx = heg.assign[batch.exercise]

    h = nm.constant(np.zeros((b, cfg.hidden)), dtype=dtype)
    c = nm.constant(np.zeros((b, cfg.hidden)), dtype=dtype)
    zeros_att = nm.constant(np.zeros((b, cfg.n_schemas)), dtype=dtype)
    zeros_f = nm.constant(np.zeros((b, 1)), dtype=dtype)

    history_m: list[nm.Tensor] = []
    history_s: list[nm.Tensor] = []
    preds = []
    diagnostics = {"m_att": [], "m_f": []} if collect_attention else None

    for t in range(t_max):
        s_onehot = _one_hot(schema_idx[:, t], cfg.n_schemas, dtype)
        s_t = nm.matmul(nm.constant(s_onehot), table)

        if t >= 1:
            m_last = history_m[-1]
            if cfg.attention:
                m_att = sq.seq_attention(history_m, history_s, s_t, cfg.window,
                                         cfg.n_schemas)
                _, m_f = sq.schema_attention(table, s_t, m_last)
            else:
                m_att, m_f = zeros_att, zeros_f
            if collect_attention:
                diagnostics["m_att"].append(m_att.data.copy())
                diagnostics["m_f"].append(m_f.data.copy())
            v_next = None if cfg.strict_eq14 else _one_hot(batch.knowledge[:, t],
                                                           cfg.n_knowledge, dtype)
            preds.append(sq.predict(params, m_att, m_last, m_f, v_next, s_t, scfg,
                                    dropout_p=cfg.dropout, train=train, rng=rng))

        x_t = sq.make_input(params, batch.knowledge[:, t], batch.correct[:, t], s_t, scfg)
        h, c = sq.lstm_step(params, x_t, h, c, cfg.hidden)
        h_read = nm.dropout(h, cfg.dropout, train, rng) if train else h
        m_cur = sq.mastery_cur(params, h_read)
        history_m.append(m_cur)
        history_s.append(s_t)

    predictions = nm.concat(preds, axis=1) if preds else nm.constant(
        np.zeros((b, 0)), dtype=dtype)
    return predictions, diagnostics


def batch_loss(cfg: ModelConfig, params: dict, heg: Heg, batch: Batch,
               train: bool = False, rng: np.random.Generator | None = None):
    """Mean masked cross entropy per predicted event, plus the count."""
    preds, _ = forward_batch(cfg, params, heg, batch, train=train, rng=rng)
    labels = batch.correct[:, 1:]
    mask = batch.mask[:, 1:]
    n = float(mask.sum())
    total = sq.sequence_loss(preds, labels, mask)
    return nm.scale(total, 1.0 / max(n, 1.0)), n


def predict_events(cfg: ModelConfig, params: dict, heg: Heg, batch: Batch):
    """Flat (predictions, labels) over real predicted events, eval mode."""
    preds, _ = forward_batch(cfg, params, heg, batch, train=False)
    mask = batch.mask[:, 1:] > 0
    return preds.data[mask], batch.correct[:, 1:][mask]


def run_history(cfg: ModelConfig, params: dict, heg: Heg, batch: Batch):
    """Process a (B=1) history without predicting; returns the mastery and
    schema embedding trails plus the schema table, for post-hoc queries."""
    dtype = next(iter(params.values())).data.dtype
    scfg = cfg.seq_config()
    table = schema_table_forward(cfg, params, heg, dtype=dtype)
    b, t_max = batch.exercise.shape
    schema_idx = heg.assign[batch.exercise]
    h = nm.constant(np.zeros((b, cfg.hidden)), dtype=dtype)
    c = nm.constant(np.zeros((b, cfg.hidden)), dtype=dtype)
    history_m, history_s = [], []
    for t in range(t_max):
        s_onehot = _one_hot(schema_idx[:, t], cfg.n_schemas, dtype)
        s_t = nm.matmul(nm.constant(s_onehot), table)
        x_t = sq.make_input(params, batch.knowledge[:, t], batch.correct[:, t], s_t, scfg)
        h, c = sq.lstm_step(params, x_t, h, c, cfg.hidden)
        m_cur = sq.mastery_cur(params, h)
        history_m.append(m_cur)
        history_s.append(s_t)
    return history_m, history_s, table
