import numpy as np
import pytest

import hgkt.numerics as nm
from hgkt.corpus import InteractionEvent, LearnerSequence
from hgkt.heg import Heg
from hgkt.model import (Batch, ModelConfig, batch_loss, build_batch,
                        forward_batch, init_model_params, predict_events,
                        run_history, schema_table_forward)


def micro_heg(n_ex=6, n_schemas=3, seed=0):
    rng = np.random.default_rng(seed)
    a = (rng.random((n_ex, n_ex)) < 0.3).astype(np.uint8)
    np.fill_diagonal(a, 0)
    assign = np.concatenate([np.arange(n_schemas),
                             rng.integers(0, n_schemas, n_ex - n_schemas)]).astype(np.int64)
    return Heg(adjacency=a, assign=assign, schema_count=n_schemas,
               node_ids=[f"e{i}" for i in range(n_ex)])


def micro_cfg(heg, n_knowledge=2, **kw):
    defaults = dict(n_exercises=heg.n_exercises, n_knowledge=n_knowledge,
                    n_schemas=heg.schema_count, exer_dim=5, schema_dim=4,
                    input_dim=6, hidden=7, window=3, exer_layers=2,
                    schema_layers=1, dropout=0.0)
    defaults.update(kw)
    return ModelConfig(**defaults)


def random_sequences(rng, n_seqs, n_ex, length):
    seqs = []
    for l in range(n_seqs):
        events = [InteractionEvent(l, int(rng.integers(0, n_ex)),
                                   int(rng.integers(0, 2)), t)
                  for t in range(length)]
        seqs.append(LearnerSequence(l, events, external_id=f"L{l}"))
    return seqs


def knowledge_map(n_ex, n_knowledge, seed=1):
    return np.random.default_rng(seed).integers(0, n_knowledge, n_ex).astype(np.int64)


def test_forward_shapes_and_range():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    rng = np.random.default_rng(1)
    seqs = random_sequences(rng, 4, heg.n_exercises, 5)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    preds, _ = forward_batch(cfg, params, heg, batch)
    assert preds.data.shape == (4, 4)
    assert ((preds.data > 0) & (preds.data < 1)).all()


def test_preset_none_schema_embeddings_zero():
    heg = micro_heg()
    cfg = micro_cfg(heg, preset="none", attention=False)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    table = schema_table_forward(cfg, params, heg, dtype=np.float64)
    np.testing.assert_array_equal(table.data, np.zeros((3, 4)))
    assert not any(k.startswith("gnn_") for k in params)


def test_attention_off_zeroes_attention_terms():
    heg = micro_heg()
    cfg = micro_cfg(heg, attention=False)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    seqs = random_sequences(np.random.default_rng(2), 3, heg.n_exercises, 6)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    _, diag = forward_batch(cfg, params, heg, batch, collect_attention=True)
    assert diag["m_att"] and diag["m_f"]
    for m in diag["m_att"]:
        np.testing.assert_array_equal(m, np.zeros_like(m))
    for m in diag["m_f"]:
        np.testing.assert_array_equal(m, np.zeros_like(m))


def test_attention_on_produces_nonzero_terms():
    heg = micro_heg()
    cfg = micro_cfg(heg, attention=True)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    seqs = random_sequences(np.random.default_rng(2), 3, heg.n_exercises, 6)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    _, diag = forward_batch(cfg, params, heg, batch, collect_attention=True)
    assert any(np.abs(m).sum() > 0 for m in diag["m_att"])


def test_all_presets_run_and_differ_in_params():
    heg = micro_heg()
    seqs = random_sequences(np.random.default_rng(3), 2, heg.n_exercises, 4)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    for preset in ("none", "direct_only", "indirect_only", "merge", "both"):
        cfg = micro_cfg(heg, preset=preset, attention=(preset == "both"))
        params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
        preds, _ = forward_batch(cfg, params, heg, batch)
        assert np.all(np.isfinite(preds.data))
        if preset == "merge":
            table = schema_table_forward(cfg, params, heg, dtype=np.float64)
            assert table.data.shape == (heg.schema_count, 2 * cfg.schema_dim)


def test_same_schema_exercises_share_embedding():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    table = schema_table_forward(cfg, params, heg, dtype=np.float64)
    same = np.flatnonzero(heg.assign == heg.assign[0])
    rows = table.data[heg.assign[same]]
    assert (rows == rows[0]).all()


def test_pad_invariance_of_loss():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    rng = np.random.default_rng(5)
    seqs = random_sequences(rng, 3, heg.n_exercises, 5)
    kmap = knowledge_map(heg.n_exercises, 2)

    uneven = random_sequences(rng, 1, heg.n_exercises, 8)
    batch_mixed = build_batch(seqs + uneven, kmap)      # pads the short rows
    batch_short = build_batch(seqs, kmap)
    batch_long = build_batch(uneven, kmap)

    loss_mixed, n_mixed = batch_loss(cfg, params, heg, batch_mixed)
    loss_short, n_short = batch_loss(cfg, params, heg, batch_short)
    loss_long, n_long = batch_loss(cfg, params, heg, batch_long)
    total_mixed = float(loss_mixed.data) * n_mixed
    total_split = float(loss_short.data) * n_short + float(loss_long.data) * n_long
    assert total_mixed == pytest.approx(total_split, rel=1e-9)
    assert n_mixed == n_short + n_long


def test_padding_gradients_are_zero():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    rng = np.random.default_rng(6)
    kmap = knowledge_map(heg.n_exercises, 2)
    seqs = random_sequences(rng, 2, heg.n_exercises, 4)

    params_a = init_model_params(cfg, np.random.default_rng(9), dtype=np.float64)
    with nm.Tape():
        loss, _ = batch_loss(cfg, params_a, heg, build_batch(seqs, kmap))
        nm.backward(loss)
    grads_a = {k: p.grad.copy() for k, p in params_a.items() if p.grad is not None}

    # same data plus a padded tail row: every gradient must match bitwise-close
    padded = seqs + random_sequences(rng, 1, heg.n_exercises, 7)[:0]
    params_b = init_model_params(cfg, np.random.default_rng(9), dtype=np.float64)
    batch = build_batch(seqs, kmap)
    widened = Batch(
        exercise=np.pad(batch.exercise, ((0, 0), (0, 3))),
        knowledge=np.pad(batch.knowledge, ((0, 0), (0, 3))),
        correct=np.pad(batch.correct, ((0, 0), (0, 3))),
        mask=np.pad(batch.mask, ((0, 0), (0, 3))),
    )
    with nm.Tape():
        loss_b, n_b = batch_loss(cfg, params_b, heg, widened)
        nm.backward(loss_b)
    assert float(loss_b.data) == pytest.approx(float(loss.data), rel=1e-12)
    for k, g in grads_a.items():
        np.testing.assert_allclose(params_b[k].grad, g, atol=1e-12)


def test_forward_deterministic():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    seqs = random_sequences(np.random.default_rng(7), 3, heg.n_exercises, 5)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    a, _ = forward_batch(cfg, params, heg, batch)
    b, _ = forward_batch(cfg, params, heg, batch)
    assert a.data.tobytes() == b.data.tobytes()


def test_end_to_end_gradient_check_micro():
    """Full pipeline gradients, graph weights included, against central
    differences in 64-bit."""
    heg = micro_heg(n_ex=6, n_schemas=3, seed=11)
    cfg = micro_cfg(heg, attention=True)
    params = init_model_params(cfg, np.random.default_rng(1), dtype=np.float64)
    rng = np.random.default_rng(2)
    seqs = random_sequences(rng, 2, heg.n_exercises, 5)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))

    def loss_fn():
        loss, _ = batch_loss(cfg, params, heg, batch)
        return loss

    err = nm.grad_check(loss_fn, params, epsilon=1e-5, samples_per_tensor=25, seed=3)
    assert err < 1e-3
    assert any(k.startswith("gnn_") for k in params)


def test_run_history_lengths():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    seqs = random_sequences(np.random.default_rng(8), 1, heg.n_exercises, 6)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    hist_m, hist_s, table = run_history(cfg, params, heg, batch)
    assert len(hist_m) == len(hist_s) == 6
    assert table.data.shape == (heg.schema_count, cfg.schema_dim)


def test_predict_events_masks_padding():
    heg = micro_heg()
    cfg = micro_cfg(heg)
    params = init_model_params(cfg, np.random.default_rng(0), dtype=np.float64)
    rng = np.random.default_rng(9)
    seqs = random_sequences(rng, 2, heg.n_exercises, 4) + \
        random_sequences(rng, 1, heg.n_exercises, 7)
    batch = build_batch(seqs, knowledge_map(heg.n_exercises, 2))
    preds, labels = predict_events(cfg, params, heg, batch)
    assert len(preds) == len(labels) == (3 + 3 + 6)
