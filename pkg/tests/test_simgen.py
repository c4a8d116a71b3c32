import json

import numpy as np
import pytest

from hgkt.corpus import load_exercises, load_logs, read_embedding_file
from hgkt.schema_cluster import adjusted_rand_index, agglomerative_cluster, cut_threshold
from hgkt.simgen import (GROUND_TRUTH_FILENAME, SimConfig, bayes_ceiling,
                         build_ground_truth, generate, load_ground_truth)


def small_cfg(**kw):
    defaults = dict(n_learners=30, n_exercises=12, n_knowledge=3,
                    n_true_schemas=4, seq_len=8, embed_dim=6, seed=5)
    defaults.update(kw)
    return SimConfig(**defaults)


def test_config_validation():
    with pytest.raises(ValueError, match="schemas"):
        SimConfig(n_exercises=3, n_true_schemas=5)
    with pytest.raises(ValueError, match="counts"):
        SimConfig(n_learners=0)
    with pytest.raises(ValueError, match="unknown sim config"):
        SimConfig.from_json_dict({"n_learners": 5, "bogus": 1})


def test_generate_files_and_reload(tmp_path):
    cfg = small_cfg()
    truth = generate(cfg, str(tmp_path))
    corpus = load_exercises(str(tmp_path / "exercises.jsonl"))
    assert corpus.n_exercises == cfg.n_exercises
    seqs = load_logs(str(tmp_path / "logs.jsonl"), corpus)
    assert len(seqs) == cfg.n_learners
    assert all(len(s.events) == cfg.seq_len for s in seqs)
    emb = read_embedding_file(str(tmp_path / "emb.bin"))
    assert emb.dim == cfg.embed_dim
    assert emb.row_ids == corpus.exercise_ids
    back = load_ground_truth(str(tmp_path / GROUND_TRUTH_FILENAME))
    np.testing.assert_array_equal(back.schema_of, truth.schema_of)
    np.testing.assert_allclose(back.ability0, truth.ability0, atol=1e-12)


def test_generate_bitwise_deterministic(tmp_path):
    cfg = small_cfg()
    generate(cfg, str(tmp_path / "a"))
    generate(cfg, str(tmp_path / "b"))
    for name in ("exercises.jsonl", "logs.jsonl", "emb.bin", GROUND_TRUTH_FILENAME):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes(), name


def test_every_schema_covered_and_many_to_many():
    truth = build_ground_truth(small_cfg(n_exercises=40, n_true_schemas=6))
    assert set(truth.schema_of.tolist()) == set(range(6))
    pairs = {(int(k), int(s)) for k, s in zip(truth.knowledge_of, truth.schema_of)}
    knowledge_per_schema = {}
    schemas_per_knowledge = {}
    for k, s in pairs:
        knowledge_per_schema.setdefault(s, set()).add(k)
        schemas_per_knowledge.setdefault(k, set()).add(s)
    assert any(len(v) > 1 for v in knowledge_per_schema.values())
    assert any(len(v) > 1 for v in schemas_per_knowledge.values())


def test_degenerate_regime_coinflip():
    cfg = small_cfg(n_learners=400, seq_len=25, ability_scale=0.0,
                    difficulty_scale=0.0, learn_rate_gain=0.0, seed=9)
    truth = build_ground_truth(cfg)
    from hgkt.simgen import simulate_events
    rng = np.random.default_rng(123)
    streams = simulate_events(truth, rng)
    rate = np.mean([r for ev in streams for _, r, _ in ev])
    assert rate == pytest.approx(0.5, abs=0.02)
    assert len([r for ev in streams for _, r, _ in ev]) >= 10_000


def test_zero_noise_embeddings_recover_partition(tmp_path):
    cfg = small_cfg(noise_sigma=0.0, n_exercises=20, n_true_schemas=5)
    truth = generate(cfg, str(tmp_path))
    emb = read_embedding_file(str(tmp_path / "emb.bin"))
    # identical rows within a schema
    for s in range(5):
        members = np.flatnonzero(truth.schema_of == s)
        rows = emb.rows[members]
        assert (rows == rows[0]).all()
    centroid_dists = [np.linalg.norm(truth.centroids[i] - truth.centroids[j])
                      for i in range(5) for j in range(i + 1, 5)]
    lam = 0.5 * min(centroid_dists)
    den = agglomerative_cluster(emb)
    assign = cut_threshold(den, lam)
    assert adjusted_rand_index(assign.assign, truth.schema_of) == pytest.approx(1.0)


def test_recovery_with_small_noise(tmp_path):
    cfg = small_cfg(n_exercises=30, n_true_schemas=5, noise_sigma=0.05,
                    embed_dim=16)
    truth = generate(cfg, str(tmp_path))
    emb = read_embedding_file(str(tmp_path / "emb.bin"))
    centroid_dists = [np.linalg.norm(truth.centroids[i] - truth.centroids[j])
                      for i in range(5) for j in range(i + 1, 5)]
    assert cfg.noise_sigma <= 0.1 * min(centroid_dists)
    den = agglomerative_cluster(emb)
    assign = cut_threshold(den, 0.5 * min(centroid_dists))
    assert adjusted_rand_index(assign.assign, truth.schema_of) >= 0.9


def test_ceiling_extremes(tmp_path):
    # widely separated ability: outcomes nearly deterministic, ceiling ~ 1
    cfg = small_cfg(n_learners=120, seq_len=10, ability_scale=6.0,
                    difficulty_scale=6.0, learn_rate_gain=0.0, seed=2)
    out = str(tmp_path / "sharp")
    generate(cfg, out)
    corpus = load_exercises(out + "/exercises.jsonl")
    seqs = load_logs(out + "/logs.jsonl", corpus)
    truth = load_ground_truth(out + "/" + GROUND_TRUTH_FILENAME)
    sharp = bayes_ceiling(truth, seqs)
    assert sharp.auc > 0.95

    cfg2 = small_cfg(n_learners=200, seq_len=12, ability_scale=0.0,
                     difficulty_scale=0.0, learn_rate_gain=0.0, seed=3)
    out2 = str(tmp_path / "flat")
    generate(cfg2, out2)
    corpus2 = load_exercises(out2 + "/exercises.jsonl")
    seqs2 = load_logs(out2 + "/logs.jsonl", corpus2)
    truth2 = load_ground_truth(out2 + "/" + GROUND_TRUTH_FILENAME)
    flat = bayes_ceiling(truth2, seqs2)
    assert flat.auc == pytest.approx(0.5, abs=0.05)


def test_texts_are_templated_per_schema(tmp_path):
    cfg = small_cfg()
    truth = generate(cfg, str(tmp_path))
    corpus = load_exercises(str(tmp_path / "exercises.jsonl"))
    for e in corpus.exercises:
        assert "," in e.text and e.text.endswith("?")
    # same schema shares vocabulary; different schemas differ
    by_schema = {}
    for i, e in enumerate(corpus.exercises):
        by_schema.setdefault(int(truth.schema_of[i]), []).append(e.text)
    schema_words = {s: set(" ".join(texts).replace(",", "").replace("?", "").split())
                    - {"Given", "the", "of", "is", "find"}
                    for s, texts in by_schema.items()}
    keys = sorted(schema_words)
    for a in keys:
        for b in keys:
            if a < b:
                content_a = {w for w in schema_words[a] if not w.isdigit()}
                content_b = {w for w in schema_words[b] if not w.isdigit()}
                assert content_a != content_b
