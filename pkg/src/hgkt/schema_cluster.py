"""Problem-schema discovery: agglomerative clustering and summarization.

Clustering is average-linkage over Euclidean distance, which keeps merge
heights monotone so a single threshold cut defines each clustering level.
Cluster descriptions come from a simplified clause-split + TextRank
keyphrase pipeline rendered through a fixed template.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import Exercise

# Fixed 50-word stop list (version 1). Deliberately excludes "a" so
# single-symbol conditions survive extraction.
STOPWORDS = frozenset([
    "an", "and", "are", "as", "at", "be", "but", "by", "can", "could",
    "do", "does", "find", "for", "from", "given", "had", "has", "have",
    "how", "if", "in", "into", "is", "it", "its", "know", "me", "much",
    "of", "on", "or", "she", "so", "such", "that", "the", "then",
    "there", "this", "to", "was", "we", "were", "what", "when", "which",
    "who", "will", "with",
])
assert len(STOPWORDS) == 50

TEXTRANK_DAMPING = 0.85
TEXTRANK_WINDOW = 3
TEXTRANK_MAX_ITER = 100
TEXTRANK_TOL = 1e-6
MAX_PHRASE_WORDS = 3


class ClusterError(ValueError):
    """Raised for invalid clustering inputs."""


@dataclass
class Dendrogram:
    """Agglomeration history: (cluster_a, cluster_b, distance, new_size).

    Leaves are clusters 0..n-1; the k-th merge creates cluster n+k.
    """

    merges: list[tuple[int, int, float, int]]
    n_leaves: int


@dataclass
class AssignmentMatrix:
    assign: np.ndarray   # (n_exercises,) schema index per exercise
    schema_count: int
    threshold: float

    def one_hot(self) -> np.ndarray:
        s = np.zeros((len(self.assign), self.schema_count), dtype=np.float64)
        s[np.arange(len(self.assign)), self.assign] = 1.0
        return s


@dataclass
class SchemaDescription:
    schema_id: int
    condition_keyphrases: list[str]
    objective_keyphrases: list[str]
    description: str


def agglomerative_cluster(embeddings) -> Dendrogram:
    """Average-linkage agglomeration; ties pick the smallest cluster-id pair."""
    rows = np.asarray(embeddings.rows if hasattr(embeddings, "rows") else embeddings,
                      dtype=np.float64)
    n = rows.shape[0]
    if n < 2:
        raise ClusterError("clustering needs at least 2 exercises")
    if not np.all(np.isfinite(rows)):
        raise ClusterError("embeddings contain NaN/Inf")

    diff = rows[:, None, :] - rows[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    # active cluster bookkeeping: ids follow the leaves-then-merges convention
    ids = list(range(n))
    sizes = {i: 1 for i in range(n)}
    merges = []
    next_id = n
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    active = np.ones(n, dtype=bool)
    # d stays indexed by slot; slot_of maps slot -> current cluster id
    slot_of = list(range(n))

    for _ in range(n - 1):
        masked = np.where(active[:, None] & active[None, :], d, np.inf)
        m = masked.min()
        pairs = np.argwhere(masked == m)
        # choose the pair whose (min id, max id) is lexicographically smallest
        best = None
        for a, b in pairs:
            if a >= b:
                continue
            ia, ib = slot_of[a], slot_of[b]
            key = (min(ia, ib), max(ia, ib))
            if best is None or key < best[0]:
                best = (key, a, b)
        _, sa, sb = best
        ia, ib = slot_of[sa], slot_of[sb]
        na, nb = sizes[ia], sizes[ib]
        merges.append((min(ia, ib), max(ia, ib), float(m), na + nb))
        # Lance-Williams update for unweighted average linkage into slot sa
        new_row = (na * d[sa] + nb * d[sb]) / (na + nb)
        d[sa, :] = new_row
        d[:, sa] = new_row
        d[sa, sa] = np.inf
        active[sb] = False
        slot_of[sa] = next_id
        sizes[next_id] = na + nb
        next_id += 1

    return Dendrogram(merges=merges, n_leaves=n)


def cut_threshold(dendrogram: Dendrogram, threshold: float) -> AssignmentMatrix:
    """Apply all merges with distance <= threshold; relabel by smallest member."""
    n = dendrogram.n_leaves
    parent = list(range(n + len(dendrogram.merges)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    next_id = n
    for a, b, distance, _ in dendrogram.merges:
        if distance <= threshold:
            parent[find(a)] = next_id
            parent[find(b)] = next_id
        next_id += 1

    roots = {}
    raw = np.zeros(n, dtype=np.int64)
    for leaf in range(n):
        r = find(leaf)
        if r not in roots:
            roots[r] = len(roots)  # ordered by smallest member index
        raw[leaf] = roots[r]
    return AssignmentMatrix(assign=raw, schema_count=len(roots), threshold=threshold)


def cluster_stats(assignment: AssignmentMatrix):
    """Schema count plus a size histogram {size: how many schemas}."""
    sizes = np.bincount(assignment.assign, minlength=assignment.schema_count)
    hist = Counter(int(s) for s in sizes)
    return {"schema_count": assignment.schema_count,
            "sizes": sorted((int(s) for s in sizes), reverse=True),
            "histogram": dict(sorted(hist.items()))}


_WORD_RE = re.compile(r"[a-zA-Z]+")


def _tokenize(text: str) -> list[str]:
    return [w.lower() for w in _WORD_RE.findall(text)]


def textrank_keyphrases(texts: list[str], top_k: int) -> list[str]:
    """Ranked keyphrases from a co-occurrence graph over content words.

    Candidate words are lowercased alphabetic tokens minus stopwords.
    Words within a window of 3 in the filtered sequence co-occur (edge
    weights count co-occurrences). Scores follow the damped recurrence
    (d = 0.85) iterated until the L1 change drops below 1e-6 or 100
    rounds pass. Above-average words that sit adjacently in the original
    text (bridging a single stopword) merge into phrases of at most
    three content words; phrase score is the sum of member scores.
    """
    if top_k < 1:
        raise ValueError(f"top_k must be >= 1, got {top_k}")
    token_lists = [_tokenize(t) for t in texts]
    filtered = [[w for w in toks if w not in STOPWORDS] for toks in token_lists]
    vocab = sorted({w for toks in filtered for w in toks})
    if not vocab:
        return []
    index = {w: i for i, w in enumerate(vocab)}
    n = len(vocab)

    weights = np.zeros((n, n), dtype=np.float64)
    for toks in filtered:
        for i, w in enumerate(toks):
            for j in range(i + 1, min(i + TEXTRANK_WINDOW, len(toks))):
                u, v = index[w], index[toks[j]]
                if u != v:
                    weights[u, v] += 1.0
                    weights[v, u] += 1.0

    out_strength = weights.sum(axis=1)
    safe = np.where(out_strength > 0, out_strength, 1.0)
    transition = weights / safe[:, None]
    scores = np.ones(n)
    for _ in range(TEXTRANK_MAX_ITER):
        new = (1.0 - TEXTRANK_DAMPING) + TEXTRANK_DAMPING * (transition.T @ scores)
        if np.abs(new - scores).sum() < TEXTRANK_TOL:
            scores = new
            break
        scores = new
    word_score = {w: float(scores[index[w]]) for w in vocab}

    marked = {w for w in vocab if word_score[w] >= scores.mean()}
    phrases = {}
    for toks in token_lists:
        i = 0
        while i < len(toks):
            if toks[i] in marked:
                words = [toks[i]]
                rendered = [toks[i]]
                j = i + 1
                while j < len(toks) and len(words) < MAX_PHRASE_WORDS:
                    if toks[j] in marked:
                        words.append(toks[j])
                        rendered.append(toks[j])
                        j += 1
                    elif (toks[j] in STOPWORDS and j + 1 < len(toks)
                          and toks[j + 1] in marked):
                        rendered.append(toks[j])
                        words.append(toks[j + 1])
                        rendered.append(toks[j + 1])
                        j += 2
                    else:
                        break
                if len(words) > 1:
                    phrase = " ".join(rendered)
                    score = sum(word_score[w] for w in words)
                    if phrase not in phrases or score > phrases[phrase]:
                        phrases[phrase] = score
                i = j
            else:
                i += 1
    # singletons compete too, unless a formed phrase already covers that word
    covered = {w for p in phrases for w in p.split()}
    for w in vocab:
        if w not in covered:
            phrases[w] = word_score[w]

    ranked = sorted(phrases.items(), key=lambda kv: (-kv[1], kv[0]))
    return [p for p, _ in ranked[:top_k]]


_CLAUSE_SPLIT_RE = re.compile(r",(?=[^,]*$)")


def split_condition_objective(text: str) -> tuple[str, str]:
    """Split an exercise sentence at its final comma clause.

    The trailing clause is the objective; everything before is the
    condition. Without a comma, a trailing "find ..." clause is the
    objective, else the whole text is condition.
    """
    stripped = text.strip()
    if "," in stripped:
        head, tail = stripped.rsplit(",", 1)
        return head.strip(), tail.strip()
    lower = stripped.lower()
    if " find " in lower:
        pos = lower.rfind(" find ")
        return stripped[:pos].strip(), stripped[pos:].strip()
    return stripped, ""


def summarize_schema(cluster_exercises: list[Exercise], schema_id: int,
                     top_k: int = 5) -> SchemaDescription:
    texts = [e.text for e in cluster_exercises if e.text and e.text.strip()]
    if not texts:
        return SchemaDescription(schema_id=schema_id, condition_keyphrases=[],
                                 objective_keyphrases=[],
                                 description=f"schema-{schema_id}")
    conditions, objectives = [], []
    for t in texts:
        cond, obj = split_condition_objective(t)
        if cond:
            conditions.append(cond)
        if obj:
            objectives.append(obj)
    cond_phrases = textrank_keyphrases(conditions, top_k) if conditions else []
    obj_phrases = textrank_keyphrases(objectives, top_k) if objectives else []

    cond_text = ", ".join(cond_phrases[:2]) if cond_phrases else "the stated conditions"
    obj_text = obj_phrases[0] if obj_phrases else "the asked quantity"
    description = f"Given {cond_text}, find the {obj_text}?"
    return SchemaDescription(schema_id=schema_id,
                             condition_keyphrases=cond_phrases,
                             objective_keyphrases=obj_phrases,
                             description=description)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """ARI between two flat clusterings of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("label arrays must have equal length")
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    contingency = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
