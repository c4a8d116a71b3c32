"""Joint training of the graph network and sequence tracer, evaluation
metrics, ablation presets, and hyperparameter sweeps."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numerics as nm
from .corpus import ExerciseCorpus, prepare_sequences
from .heg import Heg
from .model import ModelConfig, batch_loss, build_batch, init_model_params, predict_events

METRICS_HEADER = ["run_id", "preset", "seed", "auc", "acc", "mae", "rmse", "n"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, batch_idx):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_idx}")
        self.epoch = epoch
        self.batch = batch_idx


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 32
    dropout: float = 0.5
    epochs: int = 30
    seed: int = 1
    window: int = 20
    hidden: int = 200
    schema_dim: int = 30
    exer_dim: int = 64
    input_dim: int = 100
    gnn_layers: str = "B-3_T-1"
    graph_method: str = "support"
    omega: float = 0.0
    cluster_threshold: float = 1.0
    ablation_preset: str = "both"
    attention: bool = True
    strict_eq14: bool = False
    mean_pool: bool = False
    split_ratio: float = 0.8
    patience: int = 5
    lambda_p: float = 0.01

    def layer_counts(self) -> tuple[int, int]:
        try:
            b_part, t_part = self.gnn_layers.split("_")
            bottom = int(b_part.removeprefix("B-"))
            top = int(t_part.removeprefix("T-"))
        except (ValueError, AttributeError) as e:
            raise ValueError(f"gnn_layers must look like 'B-3_T-1', got {self.gnn_layers!r}") from e
        if not (1 <= bottom <= 3 and 1 <= top <= 3):
            raise ValueError(f"gnn layer counts must be 1..3, got {self.gnn_layers!r}")
        return bottom, top

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("cluster_threshold")
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["cluster_threshold"] = d.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def model_config(cfg: TrainConfig, n_exercises: int, n_knowledge: int,
                 n_schemas: int) -> ModelConfig:
    bottom, top = cfg.layer_counts()
    return ModelConfig(
        n_exercises=n_exercises, n_knowledge=n_knowledge, n_schemas=n_schemas,
        exer_dim=cfg.exer_dim, schema_dim=cfg.schema_dim, input_dim=cfg.input_dim,
        hidden=cfg.hidden, window=cfg.window, exer_layers=bottom, schema_layers=top,
        preset=cfg.ablation_preset, attention=cfg.attention,
        strict_eq14=cfg.strict_eq14, mean_pool=cfg.mean_pool, dropout=cfg.dropout,
    )


def train(cfg: TrainConfig, heg: Heg, train_seqs, knowledge_of: np.ndarray,
          n_knowledge: int, dtype=nm.DEFAULT_DTYPE):
    """Train end to end; returns (params, model_cfg, log rows).

    Each epoch reshuffles sequences, recomputes the schema embeddings per
    batch (they depend on live graph parameters), and applies one Adam
    step per batch. Log rows are (epoch, mean loss per prediction, ms).
    """
    seqs = prepare_sequences(train_seqs)
    if not seqs:
        raise ValueError("no trainable sequences after length filtering")
    mcfg = model_config(cfg, heg.n_exercises, n_knowledge, heg.schema_count)
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss, dropout_ss = ss.spawn(3)
    params = init_model_params(mcfg, np.random.default_rng(init_ss), dtype)
    state = nm.AdamState(lr=cfg.lr)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    log_rows = []
    best = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(seqs))
        total_loss = 0.0
        total_n = 0.0
        for batch_idx in range(0, len(order), cfg.batch_size):
            chunk = [seqs[i] for i in order[batch_idx:batch_idx + cfg.batch_size]]
            batch = build_batch(chunk, knowledge_of, dtype=np.float64)
            with nm.Tape():
                loss, n = batch_loss(mcfg, params, heg, batch, train=True,
                                     rng=dropout_rng)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(epoch, batch_idx // cfg.batch_size)
                nm.backward(loss)
            nm.adam_step(params, state)
            nm.zero_grads(params)
            total_loss += float(loss.data) * n
            total_n += n
        epoch_loss = total_loss / max(total_n, 1.0)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        log_rows.append((epoch, epoch_loss, wall_ms))
        if epoch_loss < best - 1e-6:
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return params, mcfg, log_rows


@dataclass
class MetricsReport:
    auc: float
    acc: float
    mae: float
    rmse: float
    n: int

    def as_row(self):
        return [self.auc, self.acc, self.mae, self.rmse, self.n]


def auc_score(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC; tied predictions contribute half a pair."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    order = np.argsort(predictions, kind="stable")
    sorted_preds = predictions[order]
    ranks = np.empty(len(predictions), dtype=np.float64)
    i = 0
    while i < len(sorted_preds):
        j = i
        while j + 1 < len(sorted_preds) and sorted_preds[j + 1] == sorted_preds[i]:
            j += 1
        ranks[i:j + 1] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = ranks[labels[order] == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pairwise_oracle(predictions: np.ndarray, labels: np.ndarray) -> float:
    """O(n^2) Mann-Whitney count; the independent check for auc_score."""
    pos = np.asarray(predictions)[np.asarray(labels) == 1]
    neg = np.asarray(predictions)[np.asarray(labels) == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes present")
    wins = 0.0
    for p in pos:
        wins += float((p > neg).sum()) + 0.5 * float((p == neg).sum())
    return wins / (len(pos) * len(neg))


def compute_metrics(predictions: np.ndarray, labels: np.ndarray) -> MetricsReport:
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    acc = float(((predictions >= 0.5) == (labels == 1)).mean())
    mae = float(np.abs(predictions - labels).mean())
    rmse = float(np.sqrt(((predictions - labels) ** 2).mean()))
    return MetricsReport(auc=auc_score(predictions, labels), acc=acc, mae=mae,
                         rmse=rmse, n=len(predictions))


def evaluate(mcfg: ModelConfig, params: dict, heg: Heg, test_seqs,
             knowledge_of: np.ndarray, batch_size: int = 32) -> MetricsReport:
    """Pooled next-step metrics over every predictable test event."""
    seqs = prepare_sequences(test_seqs)
    if not seqs:
        raise ValueError("no evaluable sequences after length filtering")
    all_preds = []
    all_labels = []
    for start in range(0, len(seqs), batch_size):
        batch = build_batch(seqs[start:start + batch_size], knowledge_of,
                            dtype=np.float64)
        p, y = predict_events(mcfg, params, heg, batch)
        all_preds.append(p)
        all_labels.append(y)
    return compute_metrics(np.concatenate(all_preds), np.concatenate(all_labels))


PRESET_WIRING = {
    # preset name -> (schema embedding source, attention enabled)
    "none": ("none", False),
    "direct_only": ("direct_only", False),
    "indirect_only": ("indirect_only", False),
    "merge": ("merge", False),
    "both": ("both", False),
    "both_attention": ("both", True),
}


def apply_preset(cfg: TrainConfig, preset: str) -> TrainConfig:
    if preset not in PRESET_WIRING:
        raise ValueError(f"unknown ablation preset {preset!r}; "
                         f"choose from {sorted(PRESET_WIRING)}")
    source, attention = PRESET_WIRING[preset]
    return replace(cfg, ablation_preset=source, attention=attention)


def train_and_evaluate(cfg: TrainConfig, heg: Heg, train_seqs, test_seqs,
                       knowledge_of: np.ndarray, n_knowledge: int):
    params, mcfg, log_rows = train(cfg, heg, train_seqs, knowledge_of, n_knowledge)
    report = evaluate(mcfg, params, heg, test_seqs, knowledge_of, cfg.batch_size)
    return params, mcfg, log_rows, report


def _run_point(args):
    cfg, heg, train_seqs, test_seqs, knowledge_of, n_knowledge, run_id, preset = args
    _, _, _, report = train_and_evaluate(cfg, heg, train_seqs, test_seqs,
                                         knowledge_of, n_knowledge)
    return {"run_id": run_id, "preset": preset, "seed": cfg.seed,
            "auc": report.auc, "acc": report.acc, "mae": report.mae,
            "rmse": report.rmse, "n": report.n}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HGKT_THREADS", "1")))
    except ValueError:
        return 1


def run_points(points):
    """Run train+eval points, optionally across HGKT_THREADS processes."""
    workers = worker_count()
    if workers <= 1 or len(points) <= 1:
        return [_run_point(p) for p in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_point, points))


def ablation_run(preset: str, cfg: TrainConfig, heg: Heg, train_seqs, test_seqs,
                 knowledge_of: np.ndarray, n_knowledge: int,
                 seeds=(1, 2, 3, 4, 5)) -> list[dict]:
    """Train and evaluate one preset across seeds; returns metric rows."""
    points = []
    for seed in seeds:
        run_cfg = replace(apply_preset(cfg, preset), seed=seed)
        points.append((run_cfg, heg, train_seqs, test_seqs, knowledge_of,
                       n_knowledge, f"{preset}-s{seed}", preset))
    return run_points(points)


SWEEP_AXES = ("omega", "lambda", "window", "gnn_layers")


def sweep(axis: str, values, cfg: TrainConfig, corpus: ExerciseCorpus,
          embeddings, train_seqs, test_seqs, seeds=(1, 2, 3, 4, 5)) -> list[dict]:
    """One train+evaluate per (value, seed) with a shared seed set.

    omega and lambda rebuild the exercise hierarchy; window and
    gnn_layers only reconfigure the model.
    """
    from .pipeline import build_hierarchy  # deferred: pipeline imports trainer

    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    knowledge_of = corpus.knowledge_of()
    rows = []
    for value in values:
        point_cfg = cfg
        if axis == "omega":
            point_cfg = replace(cfg, omega=float(value))
        elif axis == "lambda":
            point_cfg = replace(cfg, cluster_threshold=float(value))
        elif axis == "window":
            point_cfg = replace(cfg, window=int(value))
        elif axis == "gnn_layers":
            point_cfg = replace(cfg, gnn_layers=str(value))
            point_cfg.layer_counts()
        heg = build_hierarchy(point_cfg, corpus, embeddings, train_seqs)
        points = [(replace(point_cfg, seed=seed), heg, train_seqs, test_seqs,
                   knowledge_of, corpus.n_knowledge, f"{axis}={value}-s{seed}",
                   point_cfg.ablation_preset + ("_attention" if point_cfg.attention else ""))
                  for seed in seeds]
        for row in run_points(points):
            row[axis] = value
            rows.append(row)
    return rows


def aggregate(rows: list[dict], key: str = "auc"):
    """Mean and standard deviation of a metric across rows."""
    vals = np.array([r[key] for r in rows], dtype=np.float64)
    return float(vals.mean()), float(vals.std(ddof=0))


def write_metrics_csv(path: str, rows: list[dict]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for r in rows:
            writer.writerow([r["run_id"], r["preset"], r["seed"],
                             f"{r['auc']:.6f}", f"{r['acc']:.6f}",
                             f"{r['mae']:.6f}", f"{r['rmse']:.6f}", r["n"]])


def write_train_log(path: str, log_rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,loss,wall_ms\n")
        for epoch, loss, wall_ms in log_rows:
            f.write(f"{epoch},{loss:.6f},{wall_ms:.1f}\n")
