"""Recurrent mastery tracer with sequence and schema attention.

Per step the model fuses (knowledge, correctness) one-hots with the
schema embedding, advances an LSTM, and reads out a per-schema mastery
vector. Predicting the next response combines three signals: windowed
cosine-weighted history mastery, current mastery, and the attention
focus over the schema memory. All shapes carry a leading batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm

PROB_CLAMP = 1e-7


@dataclass
class SeqConfig:
    n_knowledge: int
    n_schemas: int
    schema_dim: int = 30
    input_dim: int = 100
    hidden: int = 200
    window: int = 20          # history entries older than this never affect attention
    strict_concat: bool = False  # drop the target-knowledge one-hot from the readout


def predict_feature_dim(cfg: SeqConfig) -> int:
    d = 2 * cfg.n_schemas + 1 + cfg.schema_dim
    if not cfg.strict_concat:
        d += cfg.n_knowledge
    return d


def init_seq_params(cfg: SeqConfig, rng: np.random.Generator,
                    dtype=nm.DEFAULT_DTYPE) -> dict:
    fuse_in = 2 * cfg.n_knowledge + cfg.schema_dim
    lstm_in = cfg.input_dim + cfg.hidden
    params = {
        "w_in": nm.uniform_init(rng, (fuse_in, cfg.input_dim), fuse_in, dtype),
        "b_in": nm.uniform_init(rng, (cfg.input_dim,), fuse_in, dtype),
        "w_lstm": nm.uniform_init(rng, (lstm_in, 4 * cfg.hidden), lstm_in, dtype),
        "b_lstm": nm.uniform_init(rng, (4 * cfg.hidden,), lstm_in, dtype),
        "w1": nm.uniform_init(rng, (cfg.hidden, cfg.n_schemas), cfg.hidden, dtype),
        "b1": nm.uniform_init(rng, (cfg.n_schemas,), cfg.hidden, dtype),
        "w2": nm.uniform_init(rng, (predict_feature_dim(cfg), 1), predict_feature_dim(cfg), dtype),
        "b2": nm.uniform_init(rng, (1,), predict_feature_dim(cfg), dtype),
    }
    return params


def interaction_one_hot(knowledge_idx: np.ndarray, r: np.ndarray, n_knowledge: int,
                        dtype=nm.DEFAULT_DTYPE) -> np.ndarray:
    """(B, 2K) one-hot at index k + r*K: separates right from wrong attempts."""
    if np.any(knowledge_idx < 0) or np.any(knowledge_idx >= n_knowledge):
        raise ValueError("knowledge index out of range")
    b = knowledge_idx.shape[0]
    out = np.zeros((b, 2 * n_knowledge), dtype=dtype)
    out[np.arange(b), knowledge_idx + r.astype(np.int64) * n_knowledge] = 1.0
    return out


def make_input(params: dict, knowledge_idx: np.ndarray, r: np.ndarray,
               s: nm.Tensor, cfg: SeqConfig) -> nm.Tensor:
    onehot = nm.constant(
        interaction_one_hot(knowledge_idx, r, cfg.n_knowledge, s.data.dtype))
    fused = nm.concat([onehot, s], axis=1)
    return nm.tanh(nm.add(nm.matmul(fused, params["w_in"]), params["b_in"]))


def lstm_step(params: dict, x: nm.Tensor, h: nm.Tensor, c: nm.Tensor, hidden: int):
    """Standard LSTM cell; gate layout is [input, forget, candidate, output]."""
    z = nm.add(nm.matmul(nm.concat([x, h], axis=1), params["w_lstm"]), params["b_lstm"])
    i = nm.sigmoid(nm.slice_(z, (slice(None), slice(0, hidden))))
    f = nm.sigmoid(nm.slice_(z, (slice(None), slice(hidden, 2 * hidden))))
    g = nm.tanh(nm.slice_(z, (slice(None), slice(2 * hidden, 3 * hidden))))
    o = nm.sigmoid(nm.slice_(z, (slice(None), slice(3 * hidden, 4 * hidden))))
    c_new = nm.add(nm.mul(f, c), nm.mul(i, g))
    h_new = nm.mul(o, nm.tanh(c_new))
    return h_new, c_new


def mastery_cur(params: dict, h: nm.Tensor) -> nm.Tensor:
    return nm.relu(nm.add(nm.matmul(h, params["w1"]), params["b1"]))


def seq_attention(history_m: list[nm.Tensor], history_s: list[nm.Tensor],
                  s_next: nm.Tensor, window: int, n_schemas: int) -> nm.Tensor:
    """Cosine-weighted sum of recent mastery vectors.

    Covers the newest entry plus the window preceding ones; weights are
    raw cosines (no normalization, negatives allowed). Empty history
    yields the zero vector. Window entries are stacked and reduced in one
    pass rather than looped.
    """
    batch = s_next.data.shape[0]
    if not history_m:
        return nm.constant(np.zeros((batch, n_schemas), dtype=s_next.data.dtype))
    m_win = history_m[-(window + 1):]
    s_win = history_s[-(window + 1):]
    k = len(m_win)
    if k == 1:
        beta = nm.reshape(nm.cosine(s_next, s_win[0]), (batch, 1))
        return nm.mul(beta, m_win[0])
    s_stack = nm.concat(s_win, axis=0)                      # (k*B, d)
    s_query = nm.concat([s_next] * k, axis=0)               # (k*B, d)
    beta = nm.reshape(nm.cosine(s_query, s_stack), (k * batch, 1))
    weighted = nm.mul(beta, nm.concat(m_win, axis=0))       # (k*B, S)
    stacked = nm.reshape(weighted, (k, batch * n_schemas))
    return nm.reshape(nm.sum_(stacked, axis=0), (batch, n_schemas))


def schema_attention(schema_table: nm.Tensor, s_next: nm.Tensor, m_cur: nm.Tensor):
    """Softmax focus over the schema memory and its scalar mastery readout.

    ``schema_table`` is (n_schemas, schema_dim); its transpose is the
    memory queried with s_next.
    """
    logits = nm.matmul(s_next, nm.transpose(schema_table))
    alpha = nm.softmax(logits, axis=1)
    m_f = nm.sum_(nm.mul(alpha, m_cur), axis=1, keepdims=True)
    return alpha, m_f


def predict(params: dict, m_att: nm.Tensor, m_cur: nm.Tensor, m_f: nm.Tensor,
            v_next: np.ndarray | None, s_next: nm.Tensor, cfg: SeqConfig,
            dropout_p: float = 0.0, train: bool = False,
            rng: np.random.Generator | None = None) -> nm.Tensor:
    parts = [m_att, m_cur, m_f]
    if not cfg.strict_concat:
        parts.append(nm.constant(v_next, dtype=s_next.data.dtype))
    parts.append(s_next)
    feats = nm.concat(parts, axis=1)
    if train and dropout_p > 0.0:
        feats = nm.dropout(feats, dropout_p, train, rng)
    return nm.sigmoid(nm.add(nm.matmul(feats, params["w2"]), params["b2"]))


def sequence_loss(predictions: nm.Tensor, labels: np.ndarray,
                  mask: np.ndarray) -> nm.Tensor:
    """Masked cross entropy summed over steps; probabilities are clamped
    to [1e-7, 1 - 1e-7] before the logs."""
    dtype = predictions.data.dtype
    y = nm.constant(labels, dtype=dtype)
    one_minus_y = nm.constant(1.0 - labels, dtype=dtype)
    m = nm.constant(mask, dtype=dtype)
    p = nm.clamp(predictions, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one_minus_p = nm.add(nm.scale(p, -1.0), nm.constant(np.ones_like(labels), dtype=dtype))
    ll = nm.add(nm.mul(y, nm.log(p)), nm.mul(one_minus_y, nm.log(one_minus_p)))
    return nm.scale(nm.sum_(nm.mul(m, ll)), -1.0)
