"""Synthetic learner/exercise generator with a known ground-truth process.

Each exercise belongs to one true schema and one knowledge tag (the
knowledge-to-schema relation is many-to-many). A learner's chance of
answering correctly is sigmoid(ability - difficulty) where ability is
per (learner, schema), grows by a fixed gain after each practice of
that schema, and difficulty is per schema. Embeddings are schema
centroids plus Gaussian noise; texts are templated from schema-specific
vocabulary so the summarizer has material to work with.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .corpus import EmbeddingTable, LearnerSequence, write_embedding_file
from .trainer import MetricsReport, compute_metrics

GROUND_TRUTH_FILENAME = "ground_truth.json"


@dataclass
class SimConfig:
    n_learners: int = 500
    n_exercises: int = 50
    n_knowledge: int = 5
    n_true_schemas: int = 10
    seq_len: int = 30
    embed_dim: int = 32
    learn_rate_gain: float = 0.12
    noise_sigma: float = 0.05
    seed: int = 1
    # spreads of the latent regime; zeros give the coin-flip degenerate case
    ability_scale: float = 1.0
    difficulty_scale: float = 1.0
    # chance the next exercise repeats the previous schema: gives the
    # attention window genuinely reusable history
    schema_persistence: float = 0.25

    def __post_init__(self):
        counts = (self.n_learners, self.n_exercises, self.n_knowledge,
                  self.n_true_schemas, self.seq_len, self.embed_dim)
        if any(c < 1 for c in counts):
            raise ValueError("all counts must be >= 1")
        if self.n_true_schemas > self.n_exercises:
            raise ValueError("cannot have more true schemas than exercises")
        if not 0.0 <= self.schema_persistence < 1.0:
            raise ValueError("schema_persistence must be in [0, 1)")

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GroundTruth:
    config: SimConfig
    schema_of: np.ndarray        # (n_exercises,)
    knowledge_of: np.ndarray     # (n_exercises,)
    difficulty: np.ndarray       # (n_schemas,)
    ability0: np.ndarray         # (n_learners, n_schemas)
    gain: float
    centroids: np.ndarray        # (n_schemas, embed_dim)
    learner_ids: list[str] = field(default_factory=list)
    exercise_ids: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "schema_of": self.schema_of.tolist(),
            "knowledge_of": self.knowledge_of.tolist(),
            "difficulty": self.difficulty.tolist(),
            "ability0": self.ability0.tolist(),
            "gain": self.gain,
            "centroids": self.centroids.tolist(),
            "learner_ids": self.learner_ids,
            "exercise_ids": self.exercise_ids,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            config=SimConfig.from_json_dict(d["config"]),
            schema_of=np.asarray(d["schema_of"], dtype=np.int64),
            knowledge_of=np.asarray(d["knowledge_of"], dtype=np.int64),
            difficulty=np.asarray(d["difficulty"], dtype=np.float64),
            ability0=np.asarray(d["ability0"], dtype=np.float64),
            gain=float(d["gain"]),
            centroids=np.asarray(d["centroids"], dtype=np.float64),
            learner_ids=[str(x) for x in d["learner_ids"]],
            exercise_ids=[str(x) for x in d["exercise_ids"]],
        )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


_CONDITION_NOUNS = ["angle", "radius", "perimeter", "slope", "area", "volume",
                    "ratio", "height", "interval", "vertex", "median", "chord",
                    "diagonal", "segment", "modulus", "gradient"]
_SHAPE_NOUNS = ["triangle", "rectangle", "circle", "prism", "trapezoid",
                "pentagon", "cylinder", "rhombus", "hexagon", "sphere",
                "pyramid", "ellipse", "cone", "cube", "sector", "annulus"]
_OBJECTIVE_NOUNS = ["side length", "base angle", "total area", "arc span",
                    "edge count", "surface area", "axis length", "peak value",
                    "midpoint", "diameter", "apothem", "altitude",
                    "circumradius", "bisector", "inradius", "latus"]


def _suffix(i: int) -> str:
    # letters only so tokenization keeps schema vocabularies distinct
    out = ""
    i += 1
    while i > 0:
        i, r = divmod(i - 1, 26)
        out = chr(ord("a") + r) + out
    return out


def _schema_words(s: int):
    cond = _CONDITION_NOUNS[s % len(_CONDITION_NOUNS)]
    shape = _SHAPE_NOUNS[s % len(_SHAPE_NOUNS)]
    objective = _OBJECTIVE_NOUNS[s % len(_OBJECTIVE_NOUNS)]
    if s >= len(_CONDITION_NOUNS):
        tag = _suffix(s // len(_CONDITION_NOUNS))
        cond = f"{cond}{tag}"
        shape = f"{shape}{tag}"
        objective = f"{objective}{tag}"
    return cond, shape, objective


def build_ground_truth(cfg: SimConfig) -> GroundTruth:
    rng = np.random.default_rng(cfg.seed)
    s_count = cfg.n_true_schemas
    # first exercises cover every schema, the rest land uniformly
    schema_of = np.concatenate([
        np.arange(s_count, dtype=np.int64),
        rng.integers(0, s_count, size=cfg.n_exercises - s_count, dtype=np.int64),
    ])
    # knowledge drawn independently of schema: relations come out many-to-many
    knowledge_of = rng.integers(0, cfg.n_knowledge, size=cfg.n_exercises,
                                dtype=np.int64)
    difficulty = rng.standard_normal(s_count) * (1.2 * cfg.difficulty_scale)
    # schema-specific aptitude dominates the shared component on purpose:
    # schema identity has to carry real predictive value for the uplift tests
    general = rng.standard_normal(cfg.n_learners) * (0.5 * cfg.ability_scale)
    per_schema = rng.standard_normal((cfg.n_learners, s_count)) * (1.0 * cfg.ability_scale)
    ability0 = general[:, None] + per_schema
    centroids = rng.standard_normal((s_count, cfg.embed_dim))
    return GroundTruth(
        config=cfg,
        schema_of=schema_of,
        knowledge_of=knowledge_of,
        difficulty=difficulty,
        ability0=ability0,
        gain=cfg.learn_rate_gain,
        centroids=centroids,
        learner_ids=[f"L{i:05d}" for i in range(cfg.n_learners)],
        exercise_ids=[f"E{i:04d}" for i in range(cfg.n_exercises)],
    )


def exercise_text(truth: GroundTruth, exercise: int, value: int) -> str:
    cond, shape, objective = _schema_words(int(truth.schema_of[exercise]))
    return (f"Given the {cond} of the {shape} is {value}, "
            f"find the {objective}?")


def simulate_events(truth: GroundTruth, rng: np.random.Generator):
    """Per-learner event streams [(exercise, correct, t), ...]."""
    cfg = truth.config
    streams = []
    by_schema = [np.flatnonzero(truth.schema_of == s) for s in range(cfg.n_true_schemas)]
    for l in range(cfg.n_learners):
        ability = truth.ability0[l].copy()
        events = []
        prev_schema = None
        for step in range(cfg.seq_len):
            if (prev_schema is not None and cfg.schema_persistence > 0.0
                    and rng.random() < cfg.schema_persistence):
                e = int(rng.choice(by_schema[prev_schema]))
            else:
                e = int(rng.integers(0, cfg.n_exercises))
            s = int(truth.schema_of[e])
            p = _sigmoid(ability[s] - truth.difficulty[s])
            r = int(rng.random() < p)
            events.append((e, r, step))
            ability[s] += truth.gain
            prev_schema = s
        streams.append(events)
    return streams


def generate(cfg: SimConfig, out_dir: str) -> GroundTruth:
    """Write exercises.jsonl, logs.jsonl, emb.bin, and ground_truth.json."""
    os.makedirs(out_dir, exist_ok=True)
    truth = build_ground_truth(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])

    with open(os.path.join(out_dir, "exercises.jsonl"), "w", encoding="utf-8") as f:
        for e in range(cfg.n_exercises):
            value = 10 + (e * 7) % 50
            f.write(json.dumps({
                "exercise_id": truth.exercise_ids[e],
                "knowledge_id": f"K{int(truth.knowledge_of[e]):03d}",
                "text": exercise_text(truth, e, value),
            }) + "\n")

    streams = simulate_events(truth, rng)
    with open(os.path.join(out_dir, "logs.jsonl"), "w", encoding="utf-8") as f:
        for l, events in enumerate(streams):
            for e, r, t in events:
                f.write(json.dumps({
                    "learner_id": truth.learner_ids[l],
                    "exercise_id": truth.exercise_ids[e],
                    "correct": r,
                    "t": t,
                }) + "\n")

    noise = rng.standard_normal((cfg.n_exercises, cfg.embed_dim)) * cfg.noise_sigma
    rows = truth.centroids[truth.schema_of] + noise
    table = EmbeddingTable(dim=cfg.embed_dim, rows=rows.astype(np.float32),
                           row_ids=list(truth.exercise_ids))
    write_embedding_file(os.path.join(out_dir, "emb.bin"), table)

    with open(os.path.join(out_dir, GROUND_TRUTH_FILENAME), "w", encoding="utf-8") as f:
        json.dump(truth.to_json_dict(), f, sort_keys=True)
        f.write("\n")
    return truth


def load_ground_truth(path: str) -> GroundTruth:
    with open(path, encoding="utf-8") as f:
        return GroundTruth.from_json_dict(json.load(f))


def bayes_ceiling(truth: GroundTruth, test_seqs: list[LearnerSequence],
                  min_len: int = 3) -> MetricsReport:
    """Evaluate the generator's own tracker on held-out sequences.

    It replays the exact ability process, so its metrics bound what any
    trained model can achieve systematically. Scored on events from the
    second one onward, mirroring the model evaluation protocol.
    """
    lookup = {lid: i for i, lid in enumerate(truth.learner_ids)}
    preds, labels = [], []
    for seq in test_seqs:
        if len(seq.events) < min_len:
            continue
        if seq.external_id is None or seq.external_id not in lookup:
            raise ValueError(f"sequence learner {seq.external_id!r} not in ground truth")
        ability = truth.ability0[lookup[seq.external_id]].copy()
        for idx, ev in enumerate(seq.events):
            s = int(truth.schema_of[ev.exercise_id])
            p = _sigmoid(ability[s] - truth.difficulty[s])
            if idx >= 1:
                preds.append(p)
                labels.append(ev.correct)
            ability[s] += truth.gain
    return compute_metrics(np.asarray(preds), np.asarray(labels))
