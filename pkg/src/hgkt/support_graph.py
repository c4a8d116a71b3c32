"""Direct support graph construction from interaction logs.

Four builders produce the bottom graph of the exercise hierarchy:
same-knowledge, embedding cosine similarity, transition frequency, and
the Bayesian support-value method. Support values are estimated from
ordered-pair counters with Laplacian smoothing (lambda_p, default 0.01).

Counting is per sequence and binary: a sequence contributes at most one
count per ordered exercise pair, using each exercise's first-occurrence
answer. Both log-ratio terms of the support value condition on the same
temporal order (e_i answered before e_j), so Sup(i->j) is a function of
counts[i][j] alone and an order never observed yields support exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ExerciseCorpus, EmbeddingTable, LearnerSequence

DEFAULT_LAMBDA_P = 0.01
GRAPH_METHODS = ("knowledge", "bertsim", "transition", "support")


@dataclass
class SupportCounts:
    """counts[i, j, r_i, r_j]: sequences answering e_i (r_i) before e_j (r_j)."""

    counts: np.ndarray  # (n, n, 2, 2) int64

    @property
    def n(self):
        return self.counts.shape[0]


@dataclass
class DirectSupportGraph:
    n: int
    adjacency: np.ndarray            # (n, n) uint8, zero diagonal
    weights: np.ndarray | None       # pre-threshold scores, same shape
    method: str
    omega: float

    def __post_init__(self):
        if self.method not in GRAPH_METHODS:
            raise ValueError(f"unknown graph method {self.method!r}")

    def edge_count(self) -> int:
        return int(self.adjacency.sum())


def count_ordered_pairs(train: list[LearnerSequence], n_exercises: int) -> SupportCounts:
    counts = np.zeros((n_exercises, n_exercises, 2, 2), dtype=np.int64)
    for seq in train:
        first = {}  # exercise -> (position, answer at first occurrence)
        for pos, ev in enumerate(seq.events):
            if not 0 <= ev.exercise_id < n_exercises:
                raise ValueError(f"exercise index {ev.exercise_id} out of range")
            if ev.exercise_id not in first:
                first[ev.exercise_id] = (pos, ev.correct)
        items = sorted(first.items(), key=lambda kv: kv[1][0])
        for a in range(len(items)):
            ei, (_, ri) = items[a]
            for b in range(a + 1, len(items)):
                ej, (_, rj) = items[b]
                counts[ei, ej, ri, rj] += 1
    return SupportCounts(counts=counts)


def _support_terms(c: np.ndarray, lambda_p: float):
    """The two smoothed lift ratios for one ordered pair's 2x2 table.

    c[r_i][r_j] are counts with e_i answered before e_j. Numerators and
    denominators each receive +lambda_p once.
    """
    total = float(c.sum())
    p_r_given_r = (c[1, 1] + lambda_p) / (c[1, 0] + c[1, 1] + lambda_p)
    p_r_marginal = (c[0, 1] + c[1, 1] + lambda_p) / (total + lambda_p)
    p_w_given_w = (c[0, 0] + lambda_p) / (c[0, 0] + c[0, 1] + lambda_p)
    p_w_marginal = (c[0, 0] + c[1, 0] + lambda_p) / (total + lambda_p)
    return p_r_given_r / p_r_marginal, p_w_given_w / p_w_marginal


def support_value(counts: SupportCounts, i: int, j: int,
                  lambda_p: float = DEFAULT_LAMBDA_P) -> float:
    """Sup(e_i -> e_j): clipped log-lift of rights plus clipped log-lift of wrongs."""
    if lambda_p <= 0:
        raise ValueError(f"lambda_p must be positive, got {lambda_p}")
    if i == j:
        return 0.0
    r_ratio, w_ratio = _support_terms(counts.counts[i, j].astype(np.float64), lambda_p)
    return max(0.0, float(np.log(r_ratio))) + max(0.0, float(np.log(w_ratio)))


def support_matrix(counts: SupportCounts, lambda_p: float = DEFAULT_LAMBDA_P) -> np.ndarray:
    """All-pairs support values, vectorized; diagonal is 0."""
    if lambda_p <= 0:
        raise ValueError(f"lambda_p must be positive, got {lambda_p}")
    c = counts.counts.astype(np.float64)
    total = c.sum(axis=(2, 3))
    r_ratio = ((c[:, :, 1, 1] + lambda_p) / (c[:, :, 1, 0] + c[:, :, 1, 1] + lambda_p)) \
        / ((c[:, :, 0, 1] + c[:, :, 1, 1] + lambda_p) / (total + lambda_p))
    w_ratio = ((c[:, :, 0, 0] + lambda_p) / (c[:, :, 0, 0] + c[:, :, 0, 1] + lambda_p)) \
        / ((c[:, :, 0, 0] + c[:, :, 1, 0] + lambda_p) / (total + lambda_p))
    sup = np.maximum(0.0, np.log(r_ratio)) + np.maximum(0.0, np.log(w_ratio))
    np.fill_diagonal(sup, 0.0)
    return sup


def build_support_graph(counts: SupportCounts, omega: float,
                        lambda_p: float = DEFAULT_LAMBDA_P) -> DirectSupportGraph:
    if omega < 0:
        raise ValueError(f"omega must be >= 0, got {omega}")
    weights = support_matrix(counts, lambda_p)
    adjacency = (weights > omega).astype(np.uint8)
    np.fill_diagonal(adjacency, 0)
    return DirectSupportGraph(n=counts.n, adjacency=adjacency, weights=weights,
                              method="support", omega=omega)


def build_knowledge_graph(corpus: ExerciseCorpus) -> DirectSupportGraph:
    k = corpus.knowledge_of()
    adjacency = (k[:, None] == k[None, :]).astype(np.uint8)
    np.fill_diagonal(adjacency, 0)
    return DirectSupportGraph(n=corpus.n_exercises, adjacency=adjacency,
                              weights=None, method="knowledge", omega=0.0)


def build_bertsim_graph(embeddings: EmbeddingTable, omega: float) -> DirectSupportGraph:
    rows = embeddings.rows.astype(np.float64)
    norms = np.linalg.norm(rows, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = rows / safe[:, None]
    cos = unit @ unit.T
    cos[norms == 0, :] = 0.0
    cos[:, norms == 0] = 0.0
    adjacency = (cos > omega).astype(np.uint8)
    np.fill_diagonal(adjacency, 0)
    return DirectSupportGraph(n=rows.shape[0], adjacency=adjacency, weights=cos,
                              method="bertsim", omega=omega)


def build_transition_graph(train: list[LearnerSequence], n_exercises: int,
                           omega: float) -> DirectSupportGraph:
    """Edge i->j when j immediately follows i more than an omega fraction of the time."""
    n = np.zeros((n_exercises, n_exercises), dtype=np.float64)
    for seq in train:
        for prev, nxt in zip(seq.events, seq.events[1:]):
            n[prev.exercise_id, nxt.exercise_id] += 1.0
    row_sums = n.sum(axis=1)
    ratios = np.divide(n, row_sums[:, None], out=np.zeros_like(n),
                       where=row_sums[:, None] > 0)
    adjacency = (ratios > omega).astype(np.uint8)
    np.fill_diagonal(adjacency, 0)
    return DirectSupportGraph(n=n_exercises, adjacency=adjacency, weights=ratios,
                              method="transition", omega=omega)


def edge_node_ratio(graph: DirectSupportGraph) -> float:
    return graph.edge_count() / graph.n


def sweep_omega_for_ratio(weights: np.ndarray, target_ratio: float):
    """Pick the threshold whose edge-to-node ratio lands closest to target.

    Candidates are 0 plus every distinct positive weight (edges require a
    strictly larger weight). Ties break toward the smaller omega.
    """
    n = weights.shape[0]
    off_diag = weights[~np.eye(n, dtype=bool)]
    candidates = np.unique(np.concatenate([[0.0], off_diag[off_diag > 0]]))
    best_omega, best_gap = None, None
    for omega in candidates:
        edges = int((off_diag > omega).sum())
        gap = abs(edges / n - target_ratio)
        if best_gap is None or gap < best_gap - 1e-12:
            best_omega, best_gap = float(omega), gap
    return best_omega
