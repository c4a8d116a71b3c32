"""Exercise/log ingestion, interning, splits, and embedding tables.

File formats:
  exercises.jsonl  {"exercise_id": str, "knowledge_id": str, "text": str?}
  logs.jsonl       {"learner_id": str, "exercise_id": str, "correct": 0|1, "t": int}
  embedding file   magic "HGKTEMB1", u32-LE row count N, u32-LE dim D,
                   N*D little-endian float32 row-major, then a UTF-8 JSON
                   trailer array of N exercise_id strings (offset 16 + 4*N*D).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

EMBED_MAGIC = b"HGKTEMB1"

# Minimum events for a usable sequence (one history step plus one target),
# and the chunk cap that bounds unroll memory.
MIN_SEQ_LEN = 3
MAX_SEQ_LEN = 200


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus inputs."""


@dataclass
class Exercise:
    exercise_id: int
    knowledge_id: int
    text: str | None = None
    embedding_row: int | None = None


@dataclass
class InteractionEvent:
    learner_id: int
    exercise_id: int
    correct: int
    order_key: int


@dataclass
class LearnerSequence:
    learner_id: int
    events: list[InteractionEvent]
    external_id: str | None = None


@dataclass
class EmbeddingTable:
    dim: int
    rows: np.ndarray          # (n_exercises, dim) float32, aligned with corpus indices
    row_ids: list[str]

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)):
            raise CorpusError("embedding table contains NaN/Inf entries")


@dataclass
class ExerciseCorpus:
    exercises: list[Exercise]
    exercise_ids: list[str] = field(default_factory=list)   # index -> external id
    knowledge_ids: list[str] = field(default_factory=list)  # index -> external id

    @property
    def n_exercises(self):
        return len(self.exercises)

    @property
    def n_knowledge(self):
        return len(self.knowledge_ids)

    def exercise_index(self, external_id: str) -> int:
        try:
            return self._exercise_lookup[external_id]
        except AttributeError:
            self._exercise_lookup = {e: i for i, e in enumerate(self.exercise_ids)}
            return self._exercise_lookup[external_id]

    def knowledge_of(self) -> np.ndarray:
        return np.array([e.knowledge_id for e in self.exercises], dtype=np.int64)


def load_exercises(path: str) -> ExerciseCorpus:
    """Load exercises.jsonl; indices are assigned by first appearance."""
    exercises = []
    exercise_ids = []
    knowledge_ids = []
    seen = {}
    kn_index = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict) or "exercise_id" not in obj or "knowledge_id" not in obj:
                raise CorpusError(f"{path}:{lineno}: missing exercise_id/knowledge_id")
            eid = str(obj["exercise_id"])
            kid = str(obj["knowledge_id"])
            if eid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate exercise_id {eid!r}")
            seen[eid] = len(exercises)
            if kid not in kn_index:
                kn_index[kid] = len(knowledge_ids)
                knowledge_ids.append(kid)
            text = obj.get("text")
            if text is not None:
                text = str(text)
            exercises.append(Exercise(
                exercise_id=len(exercises),
                knowledge_id=kn_index[kid],
                text=text,
            ))
            exercise_ids.append(eid)
    if not exercises:
        raise CorpusError(f"{path}: no exercises")
    return ExerciseCorpus(exercises=exercises, exercise_ids=exercise_ids,
                          knowledge_ids=knowledge_ids)


def load_logs(path: str, corpus: ExerciseCorpus) -> list[LearnerSequence]:
    """Load logs.jsonl grouped per learner, sorted by timestamp (stable)."""
    eid_lookup = {e: i for i, e in enumerate(corpus.exercise_ids)}
    per_learner: dict[str, list[InteractionEvent]] = {}
    learner_order: list[str] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
            try:
                lid = str(obj["learner_id"])
                eid = str(obj["exercise_id"])
                correct = obj["correct"]
                t = int(obj["t"])
            except (KeyError, TypeError, ValueError) as e:
                raise CorpusError(f"{path}:{lineno}: missing or malformed field") from e
            if correct not in (0, 1):
                raise CorpusError(f"{path}:{lineno}: correct must be 0 or 1, got {correct!r}")
            if eid not in eid_lookup:
                raise CorpusError(f"{path}:{lineno}: unknown exercise_id {eid!r}")
            if lid not in per_learner:
                per_learner[lid] = []
                learner_order.append(lid)
            per_learner[lid].append(InteractionEvent(
                learner_id=-1,  # interned below once grouping is complete
                exercise_id=eid_lookup[eid],
                correct=int(correct),
                order_key=t,
            ))
    seqs = []
    for i, lid in enumerate(learner_order):
        events = per_learner[lid]
        events.sort(key=lambda ev: ev.order_key)  # stable: file order breaks ties
        for ev in events:
            ev.learner_id = i
        seqs.append(LearnerSequence(learner_id=i, events=events, external_id=lid))
    return seqs


def split_sequences(seqs: list[LearnerSequence], ratio: float, seed: int):
    """Learner-level random split: round(ratio*n) learners go to train."""
    if not 0.0 < ratio < 1.0:
        raise CorpusError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(seqs)
    if n < 2:
        raise CorpusError("need at least 2 learners to split")
    n_train = int(np.floor(ratio * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train_idx = set(order[:n_train].tolist())
    train = [seqs[i] for i in range(n) if i in train_idx]
    test = [seqs[i] for i in range(n) if i not in train_idx]
    return train, test


def prepare_sequences(seqs: list[LearnerSequence],
                      min_len: int = MIN_SEQ_LEN,
                      max_len: int = MAX_SEQ_LEN) -> list[LearnerSequence]:
    """Drop too-short sequences and chunk long ones into stateless windows."""
    out = []
    for seq in seqs:
        for start in range(0, len(seq.events), max_len):
            chunk = seq.events[start:start + max_len]
            if len(chunk) >= min_len:
                out.append(LearnerSequence(learner_id=seq.learner_id, events=chunk,
                                           external_id=seq.external_id))
    return out


_TOKEN_BUCKETS = 4096


def fallback_embed(corpus: ExerciseCorpus, dim: int, seed: int) -> EmbeddingTable:
    """Deterministic text embedder used when no encoder output is supplied.

    Hashed bag-of-tokens projected through a seeded random matrix, then
    L2-normalized. Pure function of (texts, dim, seed).
    """
    if dim < 2:
        raise CorpusError(f"embedding dim must be >= 2, got {dim}")
    missing = [corpus.exercise_ids[e.exercise_id] for e in corpus.exercises
               if e.text is None or not e.text.strip()]
    if missing:
        raise CorpusError(
            "exercises without text cannot be embedded by the fallback embedder; "
            f"supply an embedding file (missing text for: {', '.join(missing[:5])})")
    proj = np.random.default_rng(seed).standard_normal((_TOKEN_BUCKETS, dim))
    rows = np.zeros((corpus.n_exercises, dim), dtype=np.float64)
    for e in corpus.exercises:
        bow = np.zeros(_TOKEN_BUCKETS, dtype=np.float64)
        for tok in e.text.lower().split():
            digest = hashlib.sha1(tok.encode("utf-8")).digest()
            bow[int.from_bytes(digest[:4], "little") % _TOKEN_BUCKETS] += 1.0
        vec = bow @ proj
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        rows[e.exercise_id] = vec
    return EmbeddingTable(dim=dim, rows=rows.astype(np.float32),
                          row_ids=list(corpus.exercise_ids))


def write_embedding_file(path: str, table: EmbeddingTable):
    rows = np.ascontiguousarray(table.rows, dtype="<f4")
    n, d = rows.shape
    with open(path, "wb") as f:
        f.write(EMBED_MAGIC)
        f.write(struct.pack("<II", n, d))
        f.write(rows.tobytes())
        f.write(json.dumps(table.row_ids).encode("utf-8"))


def read_embedding_file(path: str) -> EmbeddingTable:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:8] != EMBED_MAGIC:
        raise CorpusError(f"{path}: not an embedding file (bad magic)")
    n, d = struct.unpack("<II", blob[8:16])
    body_end = 16 + 4 * n * d
    if len(blob) < body_end:
        raise CorpusError(f"{path}: truncated embedding file "
                          f"(need {body_end} bytes for {n}x{d}, have {len(blob)})")
    rows = np.frombuffer(blob[16:body_end], dtype="<f4").reshape(n, d).copy()
    try:
        row_ids = json.loads(blob[body_end:].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CorpusError(f"{path}: malformed id trailer") from e
    if not isinstance(row_ids, list) or len(row_ids) != n:
        raise CorpusError(f"{path}: id trailer must list exactly {n} exercise ids")
    return EmbeddingTable(dim=d, rows=rows, row_ids=[str(r) for r in row_ids])


def align_embeddings(table: EmbeddingTable, corpus: ExerciseCorpus) -> EmbeddingTable:
    """Reorder embedding rows to corpus index order; ids must be a bijection."""
    lookup = {}
    for i, rid in enumerate(table.row_ids):
        if rid in lookup:
            raise CorpusError(f"embedding file repeats exercise_id {rid!r}")
        lookup[rid] = i
    missing = [e for e in corpus.exercise_ids if e not in lookup]
    if missing:
        raise CorpusError(f"embedding file lacks rows for: {', '.join(missing[:5])}")
    extra = set(lookup) - set(corpus.exercise_ids)
    if extra:
        raise CorpusError(f"embedding file has rows for unknown exercises: "
                          f"{', '.join(sorted(extra)[:5])}")
    order = [lookup[e] for e in corpus.exercise_ids]
    return EmbeddingTable(dim=table.dim, rows=table.rows[order],
                          row_ids=list(corpus.exercise_ids))
