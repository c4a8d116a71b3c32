"""Glue: assemble the exercise hierarchy and pack/unpack checkpoints."""

from __future__ import annotations

import os
import shutil

import numpy as np

from . import numerics as nm
from .corpus import EmbeddingTable, ExerciseCorpus
from .heg import Heg, build_heg, read_heg_json, write_heg_json
from .model import ModelConfig
from .schema_cluster import agglomerative_cluster, cut_threshold, summarize_schema
from .support_graph import (DEFAULT_LAMBDA_P, DirectSupportGraph, build_bertsim_graph,
                            build_knowledge_graph, build_support_graph,
                            build_transition_graph, count_ordered_pairs,
                            support_matrix, sweep_omega_for_ratio)
from .trainer import TrainConfig, model_config

HEG_FILENAME = "heg.json"


def build_direct_graph(method: str, corpus: ExerciseCorpus,
                       embeddings: EmbeddingTable | None, train_seqs,
                       omega: float | None = None,
                       target_ratio: float | None = None,
                       lambda_p: float = DEFAULT_LAMBDA_P) -> DirectSupportGraph:
    """Build the bottom graph; omega may be fixed or swept to a target
    edge-to-node ratio (mutually exclusive)."""
    if (omega is None) == (target_ratio is None) and method != "knowledge":
        raise ValueError("provide exactly one of omega / target_ratio")
    if method == "knowledge":
        if target_ratio is not None:
            raise ValueError("the knowledge graph has no threshold to sweep")
        return build_knowledge_graph(corpus)
    if method == "bertsim":
        if embeddings is None:
            raise ValueError("bertsim graph needs embeddings")
        if target_ratio is not None:
            probe = build_bertsim_graph(embeddings, 0.0)
            omega = sweep_omega_for_ratio(probe.weights, target_ratio)
        return build_bertsim_graph(embeddings, omega)
    if method == "transition":
        if target_ratio is not None:
            probe = build_transition_graph(train_seqs, corpus.n_exercises, 0.0)
            omega = sweep_omega_for_ratio(probe.weights, target_ratio)
        return build_transition_graph(train_seqs, corpus.n_exercises, omega)
    if method == "support":
        counts = count_ordered_pairs(train_seqs, corpus.n_exercises)
        if target_ratio is not None:
            omega = sweep_omega_for_ratio(support_matrix(counts, lambda_p), target_ratio)
        return build_support_graph(counts, omega, lambda_p)
    raise ValueError(f"unknown graph method {method!r}")


def build_hierarchy(cfg: TrainConfig, corpus: ExerciseCorpus,
                    embeddings: EmbeddingTable, train_seqs,
                    target_ratio: float | None = None,
                    with_descriptions: bool = False) -> Heg:
    graph = build_direct_graph(cfg.graph_method, corpus, embeddings, train_seqs,
                               omega=None if target_ratio is not None else cfg.omega,
                               target_ratio=target_ratio, lambda_p=cfg.lambda_p)
    dendrogram = agglomerative_cluster(embeddings)
    assignment = cut_threshold(dendrogram, cfg.cluster_threshold)
    descriptions = []
    if with_descriptions:
        for schema_id in range(assignment.schema_count):
            members = [corpus.exercises[i] for i in
                       np.flatnonzero(assignment.assign == schema_id)]
            descriptions.append(summarize_schema(members, schema_id).description)
    return build_heg(graph, assignment, corpus.exercise_ids, cfg.lambda_p,
                     descriptions)


def save_model_checkpoint(path: str, params: dict, mcfg: ModelConfig,
                          train_cfg: TrainConfig, corpus_meta: dict, heg: Heg,
                          heg_source: str | None = None):
    """Checkpoint directory: tensor manifest + params.bin + the heg it was
    trained against (copied or regenerated for later diagnosis/eval)."""
    config = {
        "train": train_cfg.to_json_dict(),
        "model": {
            "n_exercises": mcfg.n_exercises,
            "n_knowledge": mcfg.n_knowledge,
            "n_schemas": mcfg.n_schemas,
            "preset": mcfg.preset,
            "attention": mcfg.attention,
        },
        **corpus_meta,
    }
    nm.save_checkpoint(path, params, config)
    heg_path = os.path.join(path, HEG_FILENAME)
    if heg_source and os.path.abspath(heg_source) != os.path.abspath(heg_path):
        shutil.copyfile(heg_source, heg_path)
    else:
        write_heg_json(heg_path, heg)


def load_model_checkpoint(path: str):
    """Returns (params as Tensors, model config, full config dict, heg)."""
    arrays, config = nm.load_checkpoint(path)
    train_cfg = TrainConfig.from_json_dict(config["train"])
    m = config["model"]
    mcfg = model_config(train_cfg, m["n_exercises"], m["n_knowledge"], m["n_schemas"])
    if mcfg.preset != m["preset"] or mcfg.attention != m["attention"]:
        raise ValueError("checkpoint model block disagrees with its train config")
    params = {name: nm.parameter(arr) for name, arr in arrays.items()}
    heg = read_heg_json(os.path.join(path, HEG_FILENAME))
    if heg.n_exercises != mcfg.n_exercises or heg.schema_count != mcfg.n_schemas:
        raise ValueError(
            f"checkpoint dimensions ({mcfg.n_exercises} exercises, {mcfg.n_schemas} "
            f"schemas) do not match its heg ({heg.n_exercises}, {heg.schema_count})")
    return params, mcfg, config, heg
