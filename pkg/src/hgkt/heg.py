"""The hierarchical exercise graph: bottom adjacency, node features, and
exercise-to-schema assignment, plus the heg.json interchange format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .schema_cluster import AssignmentMatrix
from .support_graph import DirectSupportGraph, GRAPH_METHODS


@dataclass
class Heg:
    adjacency: np.ndarray           # (n, n) binary bottom graph
    assign: np.ndarray              # (n,) schema index per exercise
    schema_count: int
    method: str = "support"
    omega: float = 0.0
    lambda_p: float = 0.01
    threshold: float = 0.0          # clustering cut
    node_ids: list[str] = field(default_factory=list)
    edge_weights: np.ndarray | None = None
    schema_descriptions: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValueError("adjacency must be square")
        if len(self.assign) != n:
            raise ValueError("assignment length must match node count")
        if np.any(np.diag(self.adjacency) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if self.assign.min(initial=0) < 0 or (n and self.assign.max() >= self.schema_count):
            raise ValueError("schema indices out of range")
        counts = np.bincount(self.assign, minlength=self.schema_count)
        if np.any(counts == 0):
            raise ValueError("every schema needs at least one member exercise")

    @property
    def n_exercises(self):
        return self.adjacency.shape[0]

    def features(self) -> np.ndarray:
        """Identity one-hot node features."""
        return np.eye(self.n_exercises, dtype=np.float64)

    def assignment_one_hot(self) -> np.ndarray:
        s = np.zeros((self.n_exercises, self.schema_count), dtype=np.float64)
        s[np.arange(self.n_exercises), self.assign] = 1.0
        return s


def build_heg(graph: DirectSupportGraph, assignment: AssignmentMatrix,
              node_ids: list[str], lambda_p: float = 0.01,
              schema_descriptions: list[str] | None = None) -> Heg:
    return Heg(
        adjacency=graph.adjacency.astype(np.uint8),
        assign=np.asarray(assignment.assign, dtype=np.int64),
        schema_count=assignment.schema_count,
        method=graph.method,
        omega=graph.omega,
        lambda_p=lambda_p,
        threshold=assignment.threshold,
        node_ids=list(node_ids),
        edge_weights=graph.weights,
        schema_descriptions=list(schema_descriptions or []),
    )


def write_heg_json(path: str, heg: Heg):
    edges = []
    rows, cols = np.nonzero(heg.adjacency)
    for i, j in zip(rows.tolist(), cols.tolist()):
        w = 1.0 if heg.edge_weights is None else float(heg.edge_weights[i, j])
        edges.append([i, j, w])
    doc = {
        "method": heg.method,
        "omega": heg.omega,
        "lambda_p": heg.lambda_p,
        "nodes": heg.node_ids,
        "edges": edges,
        "lambda": heg.threshold,
        "assignment": heg.assign.tolist(),
        "schema_count": heg.schema_count,
        "schema_descriptions": heg.schema_descriptions,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def read_heg_json(path: str) -> Heg:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    required = {"method", "omega", "lambda_p", "nodes", "edges", "lambda",
                "assignment", "schema_count"}
    missing = required - set(doc)
    if missing:
        raise ValueError(f"{path}: heg.json missing keys: {sorted(missing)}")
    if doc["method"] not in GRAPH_METHODS:
        raise ValueError(f"{path}: unknown method {doc['method']!r}")
    n = len(doc["nodes"])
    adjacency = np.zeros((n, n), dtype=np.uint8)
    weights = np.zeros((n, n), dtype=np.float64)
    for i, j, w in doc["edges"]:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"{path}: edge index ({i},{j}) out of range")
        adjacency[i, j] = 1
        weights[i, j] = w
    return Heg(
        adjacency=adjacency,
        assign=np.asarray(doc["assignment"], dtype=np.int64),
        schema_count=int(doc["schema_count"]),
        method=doc["method"],
        omega=float(doc["omega"]),
        lambda_p=float(doc["lambda_p"]),
        threshold=float(doc["lambda"]),
        node_ids=[str(x) for x in doc["nodes"]],
        edge_weights=weights,
        schema_descriptions=[str(s) for s in doc.get("schema_descriptions", [])],
    )
