import json

import numpy as np
import pytest

from hgkt.corpus import InteractionEvent, LearnerSequence
from hgkt.diagnosis import (KsMatrix, QCounts, knowledge_mastery, ks_matrix,
                            q_counts, schema_mastery, write_diagnosis_json,
                            write_ks_csv)
from hgkt.heg import Heg
from hgkt.model import ModelConfig, init_model_params


def micro_heg(n_ex=6, n_schemas=3, seed=0):
    rng = np.random.default_rng(seed)
    a = (rng.random((n_ex, n_ex)) < 0.3).astype(np.uint8)
    np.fill_diagonal(a, 0)
    assign = np.concatenate([np.arange(n_schemas),
                             rng.integers(0, n_schemas, n_ex - n_schemas)]).astype(np.int64)
    return Heg(adjacency=a, assign=assign, schema_count=n_schemas,
               node_ids=[f"e{i}" for i in range(n_ex)])


HAND_Q = QCounts(q=np.array([[2, 0], [1, 1]], dtype=np.int64))
HAND_R = np.array([[0.8, 0.2], [0.6, 0.4]])


def test_q_counts_single_exercise():
    q = q_counts(np.array([0]), np.array([0]), 1, 1)
    assert q.q.tolist() == [[1]]


def test_q_counts_identity_assignment_permutation_like():
    knowledge = np.array([0, 1, 2])
    assign = np.array([0, 1, 2])
    q = q_counts(knowledge, assign, 3, 3)
    np.testing.assert_array_equal(q.q, np.eye(3, dtype=np.int64))


def test_q_counts_hand_example():
    knowledge = np.array([0, 0, 1, 1])
    assign = np.array([0, 0, 0, 1])
    q = q_counts(knowledge, assign, 2, 2)
    np.testing.assert_array_equal(q.q, [[2, 0], [1, 1]])


def test_q_counts_invariant_to_order():
    rng = np.random.default_rng(1)
    knowledge = rng.integers(0, 3, 20)
    assign = rng.integers(0, 4, 20)
    perm = rng.permutation(20)
    q1 = q_counts(knowledge, assign, 3, 4)
    q2 = q_counts(knowledge[perm], assign[perm], 3, 4)
    np.testing.assert_array_equal(q1.q, q2.q)


def test_knowledge_mastery_hand_example():
    r_k = knowledge_mastery(HAND_R, HAND_Q)
    assert r_k[0] == pytest.approx(0.8, abs=1e-9)
    assert r_k[1] == pytest.approx(0.5, abs=1e-9)


def test_schema_mastery_hand_example():
    r_s = schema_mastery(HAND_R, HAND_Q)
    assert r_s[0] == pytest.approx(0.8 * (2 / 3) + 0.6 * (1 / 3), abs=1e-9)
    assert r_s[0] == pytest.approx(0.7333, abs=1e-4)
    assert r_s[1] == pytest.approx(0.4, abs=1e-9)


def test_single_schema_and_single_knowledge_degenerate():
    q = QCounts(q=np.array([[3], [2]], dtype=np.int64))
    r = np.array([[0.7], [0.3]])
    assert knowledge_mastery(r, q) == {0: pytest.approx(0.7), 1: pytest.approx(0.3)}
    q2 = QCounts(q=np.array([[1, 2, 3]], dtype=np.int64))
    r2 = np.array([[0.2, 0.5, 0.9]])
    r_s = schema_mastery(r2, q2)
    assert [r_s[j] for j in range(3)] == [pytest.approx(v) for v in (0.2, 0.5, 0.9)]


def test_weight_rows_columns_sum_to_one():
    rng = np.random.default_rng(2)
    q = QCounts(q=rng.integers(0, 5, (4, 5)).astype(np.int64))
    row_sums = q.q.sum(axis=1)
    col_sums = q.q.sum(axis=0)
    for i in range(4):
        if row_sums[i]:
            assert (q.q[i] / row_sums[i]).sum() == pytest.approx(1.0, abs=1e-12)
    for j in range(5):
        if col_sums[j]:
            assert (q.q[:, j] / col_sums[j]).sum() == pytest.approx(1.0, abs=1e-12)


def test_zero_rows_and_columns_omitted():
    q = QCounts(q=np.array([[2, 0], [0, 0]], dtype=np.int64))
    r = np.array([[0.9, 0.1], [0.5, 0.5]])
    assert set(knowledge_mastery(r, q)) == {0}
    assert set(schema_mastery(r, q)) == {0}


def test_marginals_are_convex_combinations():
    rng = np.random.default_rng(3)
    q = QCounts(q=rng.integers(0, 6, (3, 4)).astype(np.int64))
    r = rng.random((3, 4))
    for val in knowledge_mastery(r, q).values():
        assert r.min() - 1e-12 <= val <= r.max() + 1e-12
    for val in schema_mastery(r, q).values():
        assert r.min() - 1e-12 <= val <= r.max() + 1e-12


def make_seq(events):
    return LearnerSequence(0, [InteractionEvent(0, e, r, t)
                               for t, (e, r) in enumerate(events)],
                           external_id="L0")


def make_model(heg, n_knowledge=2, **kw):
    cfg = ModelConfig(n_exercises=heg.n_exercises, n_knowledge=n_knowledge,
                      n_schemas=heg.schema_count, exer_dim=5, schema_dim=4,
                      input_dim=6, hidden=7, window=3, exer_layers=2,
                      schema_layers=1, dropout=0.0, **kw)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    return cfg, params


def test_ks_matrix_shape_and_range():
    heg = micro_heg()
    cfg, params = make_model(heg)
    kmap = np.random.default_rng(1).integers(0, 2, heg.n_exercises)
    seq = make_seq([(0, 1), (1, 0), (2, 1), (3, 1)])
    ks = ks_matrix(cfg, params, heg, seq, kmap, t=3, learner_id="L0")
    assert ks.r_ks.shape == (2, 3)
    assert ((ks.r_ks > 0) & (ks.r_ks < 1)).all()
    assert ks.t == 3


def test_ks_matrix_single_cell_equals_plain_prediction():
    heg = Heg(adjacency=np.zeros((2, 2), dtype=np.uint8),
              assign=np.zeros(2, dtype=np.int64), schema_count=1,
              node_ids=["a", "b"])
    cfg, params = make_model(heg, n_knowledge=1)
    kmap = np.zeros(2, dtype=np.int64)
    seq = make_seq([(0, 1), (1, 0), (0, 1)])
    ks = ks_matrix(cfg, params, heg, seq, kmap, t=2)
    assert ks.r_ks.shape == (1, 1)

    from hgkt.model import build_batch, forward_batch
    batch = build_batch([make_seq([(0, 1), (1, 0), (0, 1)])], kmap)
    preds, _ = forward_batch(cfg, params, heg, batch)
    # the grid prediction after two events equals the model's own
    # next-step prediction for the third event (same knowledge/schema)
    assert ks.r_ks[0, 0] == pytest.approx(float(preds.data[0, 1]), rel=1e-9)


def test_ks_matrix_strict_mode_rows_constant():
    heg = micro_heg()
    cfg, params = make_model(heg, strict_eq14=True)
    kmap = np.random.default_rng(1).integers(0, 2, heg.n_exercises)
    seq = make_seq([(0, 1), (1, 0), (4, 1)])
    ks = ks_matrix(cfg, params, heg, seq, kmap, t=3)
    np.testing.assert_allclose(ks.r_ks[0], ks.r_ks[1], atol=1e-12)


def test_ks_matrix_validates_t():
    heg = micro_heg()
    cfg, params = make_model(heg)
    kmap = np.zeros(heg.n_exercises, dtype=np.int64)
    seq = make_seq([(0, 1), (1, 0)])
    with pytest.raises(ValueError, match="t must be"):
        ks_matrix(cfg, params, heg, seq, kmap, t=0)
    with pytest.raises(ValueError, match="t must be"):
        ks_matrix(cfg, params, heg, seq, kmap, t=5)


def test_trajectory_defined_at_every_step():
    heg = micro_heg()
    cfg, params = make_model(heg)
    kmap = np.random.default_rng(1).integers(0, 2, heg.n_exercises)
    events = [(i % heg.n_exercises, i % 2) for i in range(6)]
    seq = make_seq(events)
    values = [ks_matrix(cfg, params, heg, seq, kmap, t).r_ks for t
              in range(1, 7)]
    assert len(values) == len(seq.events)


def test_failing_streak_lowers_schema_column(tmp_path):
    """A learner who answers one schema's exercises all wrong gets a
    below-average mastery column for that schema."""
    import os
    from hgkt.simgen import SimConfig, generate
    from hgkt.corpus import (load_exercises, load_logs, read_embedding_file,
                             align_embeddings, split_sequences)
    from hgkt.trainer import TrainConfig, apply_preset, train
    from hgkt.pipeline import build_hierarchy

    out = str(tmp_path / "sim")
    generate(SimConfig(n_learners=200, seed=6), out)
    corpus = load_exercises(os.path.join(out, "exercises.jsonl"))
    seqs = load_logs(os.path.join(out, "logs.jsonl"), corpus)
    emb = align_embeddings(read_embedding_file(os.path.join(out, "emb.bin")), corpus)
    train_seqs, _ = split_sequences(seqs, 0.8, seed=1)
    cfg = TrainConfig(batch_size=16, epochs=30, hidden=24, schema_dim=8,
                      exer_dim=16, input_dim=16, window=20,
                      gnn_layers="B-3_T-1", dropout=0.25,
                      graph_method="support", cluster_threshold=2.0,
                      patience=30, lr=0.01)
    heg = build_hierarchy(cfg, corpus, emb, train_seqs, target_ratio=2.0)
    params, mcfg, _ = train(apply_preset(cfg, "both_attention"), heg,
                            train_seqs, corpus.knowledge_of(),
                            corpus.n_knowledge)
    for j in (0, 1, 2):
        members = np.flatnonzero(heg.assign == j)
        events = [InteractionEvent(0, int(members[i % len(members)]), 0, i)
                  for i in range(10)]
        seq = LearnerSequence(0, events, external_id="scripted")
        ks = ks_matrix(mcfg, params, heg, seq, corpus.knowledge_of(), t=10)
        assert ks.r_ks[:, j].mean() < ks.r_ks.mean()


def test_report_files(tmp_path):
    ks = KsMatrix(r_ks=HAND_R, t=4, learner_id="L9")
    json_path = str(tmp_path / "diagnosis.json")
    write_diagnosis_json(json_path, ks, HAND_Q, ["k1", "k2"])
    doc = json.loads(open(json_path).read())
    assert doc["learner_id"] == "L9" and doc["t"] == 4
    assert doc["R_k"]["k1"] == pytest.approx(0.8)
    assert doc["R_s"]["0"] == pytest.approx(0.7333, abs=1e-4)
    assert doc["R_ks"][1][1] == pytest.approx(0.4)

    csv_path = str(tmp_path / "ks.csv")
    write_ks_csv(csv_path, ks, ["k1", "k2"])
    lines = open(csv_path).read().strip().splitlines()
    assert lines[0] == "knowledge,0,1"
    assert lines[1].startswith("k1,0.8")
