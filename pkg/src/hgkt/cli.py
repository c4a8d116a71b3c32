"""Command-line entry point wiring the full pipeline.

Subcommands: simulate, build-heg, train, eval, diagnose, summarize, sweep.
Exit codes: 0 success, 1 validation error, 2 runtime failure. Every
artifact is accompanied by a run manifest recording the config snapshot,
input digests, version, seed, and wall-clock time.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .corpus import (CorpusError, align_embeddings, fallback_embed, load_exercises,
                     load_logs, read_embedding_file, split_sequences)
from .diagnosis import ks_matrix, q_counts, write_diagnosis_json, write_ks_csv
from .heg import read_heg_json, write_heg_json
from .pipeline import (build_hierarchy, load_model_checkpoint,
                       save_model_checkpoint)
from .schema_cluster import summarize_schema
from .simgen import SimConfig, generate
from .trainer import (TrainConfig, evaluate, sweep, train, write_metrics_csv,
                      write_train_log)

MANIFEST_NAME = "run_manifest.json"


class ValidationError(ValueError):
    """Bad flags, malformed configs, or inconsistent inputs (exit 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(target: str, config: dict, inputs: list[str], seed,
                   outputs: list[str], wall_ms: float):
    """One manifest per artifact: inside directories, alongside files."""
    if os.path.isdir(target):
        path = os.path.join(target, MANIFEST_NAME)
    else:
        path = target + ".manifest.json"
    doc = {
        "version": f"hgkt-{__version__}",
        "config": config,
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
        "seed": seed,
        "wall_ms": round(wall_ms, 1),
        "outputs": [os.path.abspath(p) for p in outputs],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise ValidationError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON ({e.msg})") from e


def _parse_train_config(path: str) -> TrainConfig:
    try:
        return TrainConfig.from_json_dict(_load_json(path))
    except (TypeError, ValueError) as e:
        raise ValidationError(str(e)) from e


def _load_corpus_and_logs(exercises_path, logs_path):
    corpus = load_exercises(exercises_path)
    seqs = load_logs(logs_path, corpus)
    return corpus, seqs


def _embeddings_for(corpus, embeddings_path, embed_dim, seed):
    if embeddings_path:
        return align_embeddings(read_embedding_file(embeddings_path), corpus)
    return fallback_embed(corpus, embed_dim, seed)


def cmd_simulate(args):
    cfg_dict = _load_json(args.config)
    try:
        cfg = SimConfig.from_json_dict(cfg_dict)
    except (TypeError, ValueError) as e:
        raise ValidationError(str(e)) from e
    t0 = time.perf_counter()
    generate(cfg, args.out)
    outputs = [os.path.join(args.out, n) for n in
               ("exercises.jsonl", "logs.jsonl", "emb.bin", "ground_truth.json")]
    write_manifest(args.out, cfg_dict, [args.config], cfg.seed, outputs,
                   (time.perf_counter() - t0) * 1000)
    return 0


def cmd_build_heg(args):
    if (args.omega is None) == (args.target_ratio is None) and args.method != "knowledge":
        raise ValidationError("provide exactly one of --omega / --target-ratio")
    if args.method == "knowledge" and args.target_ratio is not None:
        raise ValidationError("--target-ratio does not apply to the knowledge method")
    corpus, seqs = _load_corpus_and_logs(args.exercises, args.logs)
    train_seqs, _ = split_sequences(seqs, args.split_ratio, args.seed)
    embeddings = _embeddings_for(corpus, args.embeddings, args.embed_dim, args.seed)
    cfg = TrainConfig(graph_method=args.method,
                      omega=args.omega if args.omega is not None else 0.0,
                      cluster_threshold=getattr(args, "lambda"),
                      seed=args.seed, split_ratio=args.split_ratio)
    t0 = time.perf_counter()
    heg = build_hierarchy(cfg, corpus, embeddings, train_seqs,
                          target_ratio=args.target_ratio, with_descriptions=True)
    write_heg_json(args.out, heg)
    inputs = [args.exercises, args.logs] + ([args.embeddings] if args.embeddings else [])
    snapshot = {"method": args.method, "omega": args.omega,
                "target_ratio": args.target_ratio, "lambda": getattr(args, "lambda"),
                "split_ratio": args.split_ratio, "embed_dim": args.embed_dim,
                "resolved_omega": heg.omega}
    write_manifest(args.out, snapshot, inputs, args.seed, [args.out],
                   (time.perf_counter() - t0) * 1000)
    return 0


def cmd_train(args):
    cfg = _parse_train_config(args.config)
    corpus, seqs = _load_corpus_and_logs(args.exercises, args.logs)
    heg = read_heg_json(args.heg)
    if heg.node_ids != corpus.exercise_ids:
        raise ValidationError("heg nodes do not match the exercise corpus")
    train_seqs, test_seqs = split_sequences(seqs, cfg.split_ratio, cfg.seed)
    t0 = time.perf_counter()
    params, mcfg, log_rows = train(cfg, heg, train_seqs, corpus.knowledge_of(),
                                   corpus.n_knowledge)
    corpus_meta = {
        "exercise_ids": corpus.exercise_ids,
        "knowledge_ids": corpus.knowledge_ids,
        "knowledge_of": corpus.knowledge_of().tolist(),
        "test_learners": [s.external_id for s in test_seqs],
    }
    save_model_checkpoint(args.out, params, mcfg, cfg, corpus_meta, heg,
                          heg_source=args.heg)
    write_train_log(os.path.join(args.out, "train.log"), log_rows)
    write_manifest(args.out, cfg.to_json_dict(),
                   [args.heg, args.logs, args.exercises, args.config], cfg.seed,
                   [args.out], (time.perf_counter() - t0) * 1000)
    return 0


def _checkpoint_sequences(config, logs_path, subset):
    """Rebuild the training-time corpus view and pick the eval subset."""
    from .corpus import ExerciseCorpus, Exercise

    knowledge_of = config["knowledge_of"]
    corpus = ExerciseCorpus(
        exercises=[Exercise(i, k) for i, k in enumerate(knowledge_of)],
        exercise_ids=list(config["exercise_ids"]),
        knowledge_ids=list(config["knowledge_ids"]),
    )
    seqs = load_logs(logs_path, corpus)
    if subset == "test":
        keep = set(config.get("test_learners") or [])
        if keep:
            seqs = [s for s in seqs if s.external_id in keep]
    if not seqs:
        raise ValidationError("no sequences to evaluate in the chosen subset")
    return corpus, seqs


def cmd_eval(args):
    params, mcfg, config, heg = load_model_checkpoint(args.ckpt)
    corpus, seqs = _checkpoint_sequences(config, args.logs, args.subset)
    t0 = time.perf_counter()
    report = evaluate(mcfg, params, heg, seqs, corpus.knowledge_of())
    row = {"run_id": "eval", "preset": mcfg.preset + ("_attention" if mcfg.attention else ""),
           "seed": config["train"]["seed"], "auc": report.auc, "acc": report.acc,
           "mae": report.mae, "rmse": report.rmse, "n": report.n}
    write_metrics_csv(args.out, [row])
    write_manifest(args.out, {"ckpt": os.path.abspath(args.ckpt), "subset": args.subset},
                   [args.logs], config["train"]["seed"], [args.out],
                   (time.perf_counter() - t0) * 1000)
    return 0


def cmd_diagnose(args):
    if args.t < 1:
        raise ValidationError("--t must be >= 1")
    params, mcfg, config, heg = load_model_checkpoint(args.ckpt)
    corpus, seqs = _checkpoint_sequences(config, args.logs, "all")
    matches = [s for s in seqs if s.external_id == args.learner]
    if not matches:
        raise ValidationError(f"learner {args.learner!r} not present in {args.logs}")
    seq = matches[0]
    if args.t > len(seq.events):
        raise ValidationError(f"--t {args.t} exceeds learner history length {len(seq.events)}")
    t0 = time.perf_counter()
    ks = ks_matrix(mcfg, params, heg, seq, corpus.knowledge_of(), args.t,
                   learner_id=args.learner)
    q = q_counts(corpus.knowledge_of(), heg.assign, corpus.n_knowledge,
                 heg.schema_count)
    write_diagnosis_json(args.out, ks, q, corpus.knowledge_ids)
    csv_path = os.path.splitext(args.out)[0] + "_ks_matrix.csv"
    write_ks_csv(csv_path, ks, corpus.knowledge_ids)
    write_manifest(args.out, {"learner": args.learner, "t": args.t},
                   [args.logs], config["train"]["seed"], [args.out, csv_path],
                   (time.perf_counter() - t0) * 1000)
    return 0


def cmd_summarize(args):
    corpus = load_exercises(args.exercises)
    heg = read_heg_json(args.heg)
    if heg.node_ids != corpus.exercise_ids:
        raise ValidationError("heg nodes do not match the exercise corpus")
    t0 = time.perf_counter()
    schemas = []
    for schema_id in range(heg.schema_count):
        members = np.flatnonzero(heg.assign == schema_id)
        desc = summarize_schema([corpus.exercises[i] for i in members], schema_id)
        schemas.append({
            "schema_id": schema_id,
            "size": int(len(members)),
            "exercise_ids": [corpus.exercise_ids[i] for i in members],
            "condition_keyphrases": desc.condition_keyphrases,
            "objective_keyphrases": desc.objective_keyphrases,
            "description": desc.description,
        })
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"schemas": schemas}, f, indent=2, sort_keys=True)
        f.write("\n")
    write_manifest(args.out, {"heg": os.path.abspath(args.heg)},
                   [args.heg, args.exercises], None, [args.out],
                   (time.perf_counter() - t0) * 1000)
    return 0


def cmd_sweep(args):
    cfg = _parse_train_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValidationError("--values must list at least one value")
    if args.axis in ("omega", "lambda"):
        values = [float(v) for v in values]
    elif args.axis == "window":
        values = [int(v) for v in values]
    corpus, seqs = _load_corpus_and_logs(args.exercises, args.logs)
    train_seqs, test_seqs = split_sequences(seqs, cfg.split_ratio, cfg.seed)
    embeddings = _embeddings_for(corpus, args.embeddings, args.embed_dim, cfg.seed)
    seeds = [int(s) for s in args.seeds.split(",")]
    t0 = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    rows = sweep(args.axis, values, cfg, corpus, embeddings, train_seqs,
                 test_seqs, seeds=seeds)
    out_csv = os.path.join(args.out, "sweep.csv")
    with open(out_csv, "w", encoding="utf-8") as f:
        f.write(f"{args.axis},run_id,preset,seed,auc,acc,mae,rmse,n\n")
        for r in rows:
            f.write(f"{r[args.axis]},{r['run_id']},{r['preset']},{r['seed']},"
                    f"{r['auc']:.6f},{r['acc']:.6f},{r['mae']:.6f},{r['rmse']:.6f},{r['n']}\n")
    inputs = [args.config, args.exercises, args.logs] + \
        ([args.embeddings] if args.embeddings else [])
    write_manifest(args.out, cfg.to_json_dict() | {"axis": args.axis},
                   inputs, cfg.seed, [out_csv], (time.perf_counter() - t0) * 1000)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hgkt", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic corpus with known truth")
    p.add_argument("--config", required=True, help="sim config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("build-heg", help="mine the exercise hierarchy into heg.json")
    p.add_argument("--exercises", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--embeddings", help="embedding file; omitted uses the fallback embedder")
    p.add_argument("--method", required=True,
                   choices=["knowledge", "bertsim", "transition", "support"])
    p.add_argument("--omega", type=float, help="edge threshold")
    p.add_argument("--target-ratio", type=float, dest="target_ratio",
                   help="sweep omega toward this edge-to-node ratio instead")
    p.add_argument("--lambda", type=float, required=True,
                   help="clustering threshold for schema assignment")
    p.add_argument("--split-ratio", type=float, default=0.8, dest="split_ratio",
                   help="train fraction used for relation mining (default 0.8)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--embed-dim", type=int, default=64, dest="embed_dim",
                   help="fallback embedder dimension (default 64)")
    p.add_argument("--out", required=True, help="heg.json path")
    p.set_defaults(fn=cmd_build_heg)

    p = sub.add_parser("train", help="train the tracer end to end")
    p.add_argument("--heg", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--exercises", required=True)
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on logs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--subset", choices=["test", "all"], default="test",
                   help="test = learners held out at train time (default)")
    p.add_argument("--out", required=True, help="metrics.csv path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("diagnose", help="emit the knowledge/schema mastery matrix")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--learner", required=True)
    p.add_argument("--t", type=int, required=True, help="history length to condition on")
    p.add_argument("--out", required=True, help="diagnosis.json path")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("summarize", help="describe each schema from member texts")
    p.add_argument("--heg", required=True)
    p.add_argument("--exercises", required=True)
    p.add_argument("--out", required=True, help="schemas.json path")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("sweep", help="train/evaluate across one hyperparameter axis")
    p.add_argument("--axis", required=True, choices=["omega", "lambda", "window", "gnn_layers"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--exercises", required=True)
    p.add_argument("--logs", required=True)
    p.add_argument("--embeddings")
    p.add_argument("--embed-dim", type=int, default=64, dest="embed_dim")
    p.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (ValidationError, CorpusError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: file not found: {e.filename}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - runtime failures map to exit 2
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
