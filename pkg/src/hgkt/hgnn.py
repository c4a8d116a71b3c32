"""Two-level graph network producing problem-schema embeddings.

Stacked convolutions run on the (symmetrized, self-looped, degree
normalized) bottom graph; the assignment matrix pools node embeddings
and adjacency up to the schema graph, where one more convolution stack
yields the schema memory. The whole thing differentiates end to end
through the numerics tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .heg import Heg


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetrize, add self-loops, and apply D^(-1/2) (A+I) D^(-1/2)."""
    a = np.asarray(adjacency, dtype=np.float64)
    a = np.maximum(a, a.T)
    a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


def gcn_layer(a_hat: nm.Tensor, h: nm.Tensor, w: nm.Tensor, b: nm.Tensor,
              activation: bool = True) -> nm.Tensor:
    out = nm.add(nm.matmul(nm.matmul(a_hat, h), w), b)
    return nm.relu(out) if activation else out


def pool(a_e: np.ndarray, h_e: nm.Tensor, assign: np.ndarray, n_schemas: int,
         mean: bool = False):
    """Coarsen (A_e, H_e) through the assignment: A_s = S^T A S, H_s = S^T H.

    Sum aggregation by default; the mean variant exists for ablations.
    With the identity assignment both outputs reproduce the inputs bitwise.
    """
    assign = np.asarray(assign, dtype=np.int64)
    s = np.zeros((a_e.shape[0], n_schemas), dtype=np.float64)
    s[np.arange(a_e.shape[0]), assign] = 1.0
    a_s = s.T @ np.asarray(a_e, dtype=np.float64) @ s
    if a_e.shape[0] == n_schemas and np.array_equal(assign, np.arange(n_schemas)):
        a_s = np.asarray(a_e).copy()  # identity assignment: exact passthrough
    h_s = nm.group_sum(h_e, assign, n_schemas)
    if mean:
        counts = np.bincount(assign, minlength=n_schemas).astype(h_e.data.dtype)
        h_s = nm.mul(h_s, nm.constant((1.0 / counts)[:, None], dtype=h_e.data.dtype))
    return a_s, h_s


@dataclass
class HgnnConfig:
    n_exercises: int
    n_schemas: int
    exer_dim: int = 64
    schema_dim: int = 30
    exer_layers: int = 3
    schema_layers: int = 1
    mean_pool: bool = False


def _conv_bias(rng: np.random.Generator, out_dim: int, fan_in: int, dtype) -> nm.Tensor:
    # Positive bias keeps conv units alive: node features are constant
    # one-hots, so a unit whose pre-activation goes negative would stay
    # dead forever under relu. Offset by 1/sqrt(fan_in).
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return nm.parameter(rng.uniform(-bound, bound, size=(out_dim,)) + bound, dtype=dtype)


def init_hgnn_params(cfg: HgnnConfig, rng: np.random.Generator,
                     dtype=nm.DEFAULT_DTYPE) -> dict:
    """Layer weights; W of the first bottom layer doubles as the exercise
    embedding table because node features are identity one-hots."""
    params = {}
    in_dim = cfg.n_exercises
    for layer in range(cfg.exer_layers):
        out_dim = cfg.exer_dim
        params[f"gnn_exer_w{layer}"] = nm.uniform_init(rng, (in_dim, out_dim), in_dim, dtype)
        params[f"gnn_exer_b{layer}"] = _conv_bias(rng, out_dim, in_dim, dtype)
        in_dim = out_dim
    for layer in range(cfg.schema_layers):
        out_dim = cfg.schema_dim
        params[f"gnn_sche_w{layer}"] = nm.uniform_init(rng, (in_dim, out_dim), in_dim, dtype)
        params[f"gnn_sche_b{layer}"] = _conv_bias(rng, out_dim, in_dim, dtype)
        in_dim = out_dim
    return params


def hgnn_forward(heg: Heg, params: dict, cfg: HgnnConfig, dtype=nm.DEFAULT_DTYPE):
    """Returns the schema embedding table, shape (n_schemas, schema_dim).

    Its transpose is the schema memory queried by schema attention; row
    assign[i] is the schema embedding attached to exercise i.
    """
    if heg.n_exercises != cfg.n_exercises or heg.schema_count != cfg.n_schemas:
        raise ValueError(
            f"heg size ({heg.n_exercises} exercises, {heg.schema_count} schemas) "
            f"does not match config ({cfg.n_exercises}, {cfg.n_schemas})")
    a_hat = nm.constant(normalize_adjacency(heg.adjacency), dtype=dtype)
    h = nm.constant(heg.features(), dtype=dtype)
    for layer in range(cfg.exer_layers):
        h = gcn_layer(a_hat, h, params[f"gnn_exer_w{layer}"], params[f"gnn_exer_b{layer}"])
    a_s, h_s = pool(heg.adjacency, h, heg.assign, heg.schema_count, mean=cfg.mean_pool)
    a_s_hat = nm.constant(normalize_adjacency(a_s), dtype=dtype)
    for layer in range(cfg.schema_layers):
        # the final layer is linear: a relu-clamped output embedding is an
        # absorbing state under Adam once a unit's pre-activation goes
        # negative (node features are constant), killing the whole table
        last = layer == cfg.schema_layers - 1
        h_s = gcn_layer(a_s_hat, h_s, params[f"gnn_sche_w{layer}"],
                        params[f"gnn_sche_b{layer}"], activation=not last)
    return h_s


def exercise_gnn_forward(heg: Heg, params: dict, cfg: HgnnConfig,
                         dtype=nm.DEFAULT_DTYPE) -> nm.Tensor:
    """Bottom-graph convolution stack only; returns per-exercise embeddings."""
    a_hat = nm.constant(normalize_adjacency(heg.adjacency), dtype=dtype)
    h = nm.constant(heg.features(), dtype=dtype)
    for layer in range(cfg.exer_layers):
        h = gcn_layer(a_hat, h, params[f"gnn_exer_w{layer}"], params[f"gnn_exer_b{layer}"])
    return h
