import copy
import os

import numpy as np
import pytest

from uiim.corpus import builtin_label_set, generate_synthetic
from uiim.features import PAD_ID, StatisticsSchema
from uiim.losses import LossWeights
from uiim.model import ModelConfig, forward_batch, init_model, load_checkpoint
from uiim.training import (
    TrainConfig,
    adam_init,
    adam_step,
    build_pos_inventory,
    build_vocabulary,
    evaluate,
    featurize_conversations,
    fit,
    make_batches,
    train_epoch,
)


LABELS = builtin_label_set("synthetic-4")
SCHEMA = StatisticsSchema()


def tiny_corpus(n=20, seed=3):
    convs, manifest = generate_synthetic(n, seed=seed)
    by_id = {c.id: c for c in convs}
    train = [by_id[i] for i in manifest.train]
    val = [by_id[i] for i in manifest.validation]
    test = [by_id[i] for i in manifest.test]
    return train, val, test


def tiny_model(train, seed=0, **cfg_kwargs):
    vocab = build_vocabulary(train)
    inventory = build_pos_inventory(train)
    defaults = dict(num_classes=len(LABELS), d_w=8, d_p=len(inventory),
                    d_s=SCHEMA.d_s, d_h=8, lstm_hidden=8, heads=2, mlp_hidden=8)
    defaults.update(cfg_kwargs)
    config = ModelConfig(**defaults)
    model = init_model(config, vocab, inventory, np.random.default_rng(seed))
    feats = {"vocab": vocab, "inventory": inventory}
    return model, feats


def featurize(model, convs):
    return featurize_conversations(convs, model.vocab, model.pos_inventory,
                                   SCHEMA, LABELS)


# ---------------------------------------------------------------------------
# config


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.batch_size == 64
    assert cfg.learning_rate == 1e-4
    assert cfg.dropout == 0.3
    assert cfg.weights == LossWeights(alpha=1.0, beta=0.7, gamma=0.7)
    assert cfg.max_epochs == 200
    assert cfg.patience == 10


@pytest.mark.parametrize("bad", [
    dict(batch_size=0), dict(learning_rate=0.0), dict(learning_rate=-1e-4),
    dict(patience=0), dict(max_epochs=-1), dict(dropout=1.0), dict(dropout=-0.1),
])
def test_train_config_rejects(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


# ---------------------------------------------------------------------------
# featurization


def test_featurize_maps_ids_and_labels():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train)
    feats = featurize(model, train)
    assert len(feats) == len(train)
    conv, raw = feats[0], train[0]
    assert conv.id == raw.id
    for fu, ru in zip(conv.utterances, raw.utterances):
        assert len(fu.token_ids) == len(ru.tokens)
        assert fu.label == LABELS.index_of(ru.label)
        assert fu.stats.shape == (SCHEMA.d_s,)


def test_featurize_empty_utterance_becomes_pad():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train)
    conv = copy.deepcopy(train[0])
    conv.utterances[0].tokens = []
    conv.utterances[0].pos = []
    feats = featurize(model, [conv])
    fu = feats[0].utterances[0]
    assert fu.token_ids.tolist() == [PAD_ID]
    assert fu.pos_ids.tolist() == [model.pos_inventory.unk_index]


def test_featurize_unseen_tokens_map_to_unk():
    train, val, _ = tiny_corpus()
    model, _ = tiny_model(train)
    # vocabulary comes from train only, so val can only use known-or-unk ids
    feats = featurize(model, val)
    for conv in feats:
        for fu in conv.utterances:
            assert fu.token_ids.max() < len(model.vocab)


# ---------------------------------------------------------------------------
# batching


def test_batches_group_equal_utterance_counts():
    train, _, _ = tiny_corpus(n=40)
    model, _ = tiny_model(train)
    feats = featurize(model, train)
    batches = make_batches(feats, batch_size=4, seed=1)
    seen = sorted(cid for b in batches for cid in b.conversation_ids)
    assert seen == sorted(c.id for c in feats)
    for b in batches:
        assert b.inputs.conversations <= 4
        n = b.inputs.steps
        # every conversation in the batch really has n utterances
        by_id = {c.id: c for c in feats}
        for cid in b.conversation_ids:
            assert len(by_id[cid].utterances) == n


def test_batch_row_order_interleaves_conversations():
    train, _, _ = tiny_corpus(n=40)
    model, _ = tiny_model(train)
    feats = featurize(model, train)
    batches = make_batches(feats, batch_size=4, seed=1)
    multi = next(b for b in batches if b.inputs.conversations > 1)
    by_id = {c.id: c for c in feats}
    B, n = multi.inputs.conversations, multi.inputs.steps
    for j in range(n):
        for b in range(B):
            fu = by_id[multi.conversation_ids[b]].utterances[j]
            r = j * B + b
            assert multi.gold[r] == fu.label
            L = multi.inputs.lengths[r]
            assert L == len(fu.token_ids)
            assert multi.inputs.token_ids[r, :L].tolist() == fu.token_ids.tolist()
            assert (multi.inputs.token_ids[r, L:] == PAD_ID).all()


def test_make_batches_deterministic_and_seed_sensitive():
    train, _, _ = tiny_corpus(n=40)
    model, _ = tiny_model(train)
    feats = featurize(model, train)
    a = [b.conversation_ids for b in make_batches(feats, 4, seed=5)]
    b = [b.conversation_ids for b in make_batches(feats, 4, seed=5)]
    c = [b.conversation_ids for b in make_batches(feats, 4, seed=6)]
    assert a == b
    assert a != c


def test_make_batches_rejects_empty_split():
    with pytest.raises(ValueError, match="empty"):
        make_batches([], 4, seed=0)


# ---------------------------------------------------------------------------
# optimizer


def test_adam_init_zero_moments():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train)
    state = adam_init(model.named_parameters())
    assert state.step == 0
    for name, p in model.named_parameters():
        assert state.m[name].shape == p.data.shape
        assert not state.m[name].any()
        assert not state.v[name].any()


def test_adam_single_step_matches_reference():
    # one parameter, one step: update = -lr * g / (|g| + eps)
    from uiim.autodiff import Tensor

    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -0.25])
    named = [("p", p)]
    state = adam_init(named)
    adam_step(state, named, lr=0.1)
    g = np.array([0.5, -0.25])
    expected = np.array([1.0, -2.0]) - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.allclose(p.data, expected, atol=1e-12)
    assert state.step == 1


def test_adam_two_steps_reference():
    from uiim.autodiff import Tensor

    p = Tensor(np.array([0.3]), requires_grad=True)
    named = [("p", p)]
    state = adam_init(named)
    x = 0.3
    m = v = 0.0
    for t in (1, 2):
        g = 2.0 * x  # d/dx x^2
        p.grad = np.array([g])
        adam_step(state, named, lr=0.05)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p.data, [x], atol=1e-12)


def test_adam_treats_missing_grad_as_zero():
    from uiim.autodiff import Tensor

    p = Tensor(np.array([4.0]), requires_grad=True)
    named = [("p", p)]
    state = adam_init(named)
    adam_step(state, named, lr=0.1)
    assert p.data.tolist() == [4.0]


# ---------------------------------------------------------------------------
# train_epoch / evaluate


def test_train_epoch_zero_lr_is_noop():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train, seed=0)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    feats = featurize(model, train)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-4, dropout=0.0, seed=0)
    cfg.learning_rate = 0.0
    opt = adam_init(model.named_parameters())
    batches = make_batches(feats, 4, seed=0)
    train_epoch(model, opt, batches, cfg, np.random.default_rng(0))
    for n, p in model.named_parameters():
        assert np.array_equal(p.data, before[n]), n


def test_train_epoch_updates_parameters():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train, seed=0)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    feats = featurize(model, train)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, dropout=0.0, seed=0)
    opt = adam_init(model.named_parameters())
    batches = make_batches(feats, 4, seed=0)
    stats = train_epoch(model, opt, batches, cfg, np.random.default_rng(0))
    moved = sum(not np.array_equal(p.data, before[n])
                for n, p in model.named_parameters())
    assert moved > 0
    assert stats.utterances == sum(len(c.utterances) for c in feats)
    assert np.isfinite(stats.report.total)


def test_pad_embedding_row_stays_zero():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train, seed=0)
    feats = featurize(model, train)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-2, dropout=0.0, seed=0)
    opt = adam_init(model.named_parameters())
    for epoch in range(3):
        batches = make_batches(feats, 4, seed=epoch)
        train_epoch(model, opt, batches, cfg, np.random.default_rng(epoch))
    assert not model.table.weights.data[PAD_ID].any()


def test_loss_decreases_over_epochs():
    train, _, _ = tiny_corpus(n=20)
    model, _ = tiny_model(train, seed=1)
    feats = featurize(model, train)
    cfg = TrainConfig(batch_size=4, learning_rate=3e-3, dropout=0.0, seed=0)
    opt = adam_init(model.named_parameters())
    rng = np.random.default_rng(0)
    totals = []
    for epoch in range(5):
        batches = make_batches(feats, 4, seed=epoch)
        totals.append(train_epoch(model, opt, batches, cfg, rng).report.total)
    assert totals[-1] < totals[0]


def test_pure_cross_entropy_when_aux_weights_zero():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train, seed=0)
    feats = featurize(model, train)
    w = LossWeights(alpha=1.0, beta=0.0, gamma=0.0)
    cfg = TrainConfig(batch_size=4, learning_rate=1e-3, dropout=0.0,
                      weights=w, seed=0)
    opt = adam_init(model.named_parameters())
    batches = make_batches(feats, 4, seed=0)
    stats = train_epoch(model, opt, batches, cfg, np.random.default_rng(0))
    assert stats.report.total == pytest.approx(stats.report.loss_cls, abs=1e-12)


def test_evaluate_reports_per_class_counts():
    train, val, _ = tiny_corpus()
    model, _ = tiny_model(train)
    feats = featurize(model, val)
    rep = evaluate(model, feats, LossWeights(), LABELS, batch_size=4)
    n = sum(len(c.utterances) for c in feats)
    assert rep.utterances == n
    assert sum(v["gold"] for v in rep.per_class.values()) == n
    assert sum(v["predicted"] for v in rep.per_class.values()) == n
    correct = sum(v["correct"] for v in rep.per_class.values())
    assert rep.accuracy == pytest.approx(correct / n)
    assert 0.0 <= rep.accuracy <= 1.0


def test_evaluate_rejects_empty_split():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train)
    with pytest.raises(ValueError, match="empty"):
        evaluate(model, [], LossWeights(), LABELS)


def test_evaluate_is_deterministic():
    train, val, _ = tiny_corpus()
    model, _ = tiny_model(train)
    feats = featurize(model, val)
    a = evaluate(model, feats, LossWeights(), LABELS, batch_size=3)
    b = evaluate(model, feats, LossWeights(), LABELS, batch_size=5)
    # batch size must not change eval results (padding-inert, mean-weighted)
    assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)
    assert a.report.total == pytest.approx(b.report.total, abs=1e-10)


# ---------------------------------------------------------------------------
# fit


def small_fit(tmp_path, out="run", seed=0, max_epochs=3, patience=10,
              n=20, lr=1e-3):
    train, val, _ = tiny_corpus(n=n)
    model, _ = tiny_model(train, seed=seed)
    cfg = TrainConfig(batch_size=4, learning_rate=lr, dropout=0.3,
                      max_epochs=max_epochs, patience=patience, seed=seed)
    ftr = featurize(model, train)
    fva = featurize(model, val)
    res = fit(model, ftr, fva, cfg, LABELS, tmp_path / out)
    return model, res


def test_fit_writes_metrics_and_checkpoints(tmp_path):
    model, res = small_fit(tmp_path)
    text = open(res.metrics_path).read().splitlines()
    assert text[0].startswith("# config_hash=")
    assert text[1] == "epoch,split,loss_cls,loss_u,loss_i,total,accuracy"
    body = text[2:]
    assert len(body) == 2 * res.epochs_run
    assert body[0].startswith("1,train,")
    assert body[1].startswith("1,validation,")
    assert os.path.exists(res.best_checkpoint)
    assert os.path.exists(res.latest_checkpoint)
    assert res.latest_checkpoint.endswith("latest.npz")


def test_fit_zero_epochs_keeps_initial_params(tmp_path):
    train, val, _ = tiny_corpus()
    model, _ = tiny_model(train, seed=0)
    before = {n: p.data.copy() for n, p in model.named_parameters()}
    cfg = TrainConfig(batch_size=4, max_epochs=0, seed=0)
    res = fit(model, featurize(model, train), featurize(model, val), cfg,
              LABELS, tmp_path / "zero")
    lines = open(res.metrics_path).read().splitlines()
    assert len(lines) == 2  # hash comment + header only
    assert res.epochs_run == 0 and res.best_epoch == 0
    for n, p in model.named_parameters():
        assert np.array_equal(p.data, before[n])
    loaded = load_checkpoint(res.latest_checkpoint)
    for (na, a), (nb, b) in zip(loaded.named_parameters(),
                                model.named_parameters()):
        assert na == nb and np.array_equal(a.data, b.data)


def test_fit_deterministic_metrics(tmp_path):
    _, res1 = small_fit(tmp_path, out="a", seed=11)
    _, res2 = small_fit(tmp_path, out="b", seed=11)
    assert open(res1.metrics_path, "rb").read() == open(res2.metrics_path, "rb").read()


def test_fit_seed_changes_metrics(tmp_path):
    _, res1 = small_fit(tmp_path, out="a", seed=11)
    _, res2 = small_fit(tmp_path, out="b", seed=12)
    assert open(res1.metrics_path, "rb").read() != open(res2.metrics_path, "rb").read()


def test_fit_patience_stops_early(tmp_path):
    # lr so small that validation accuracy cannot improve -> stop at patience
    model, res = small_fit(tmp_path, max_epochs=50, patience=1, lr=1e-12)
    assert res.epochs_run <= 2


def test_fit_tracks_best_epoch(tmp_path):
    model, res = small_fit(tmp_path, max_epochs=4)
    assert 0 <= res.best_epoch <= res.epochs_run
    assert res.best_checkpoint.endswith(f"epoch-{res.best_epoch:03d}.npz")
    assert 0.0 <= res.best_accuracy <= 1.0


def test_fit_rejects_empty_splits(tmp_path):
    train, val, _ = tiny_corpus()
    model, _ = tiny_model(train)
    cfg = TrainConfig(batch_size=4, max_epochs=1)
    with pytest.raises(ValueError):
        fit(model, [], featurize(model, val), cfg, LABELS, tmp_path / "x")
    with pytest.raises(ValueError):
        fit(model, featurize(model, train), [], cfg, LABELS, tmp_path / "y")


def test_fit_best_checkpoint_restores_model(tmp_path):
    model, res = small_fit(tmp_path, max_epochs=3)
    loaded = load_checkpoint(res.best_checkpoint)
    assert loaded.config == model.config
    assert loaded.vocab.index_to_token == model.vocab.index_to_token
    # the restored model evaluates without error and matches shapes
    train, val, _ = tiny_corpus()
    rep = evaluate(loaded, featurize(loaded, val), LossWeights(), LABELS)
    assert 0.0 <= rep.accuracy <= 1.0


# ---------------------------------------------------------------------------
# padding invariance at the training-batch level


def test_extra_padding_columns_change_nothing():
    train, _, _ = tiny_corpus()
    model, _ = tiny_model(train, seed=0)
    feats = featurize(model, train)
    batch = make_batches(feats, 4, seed=0)[0]
    logits, _ = forward_batch(model.params, model.config, model.table,
                              batch.inputs, mode="eval")

    inp = batch.inputs
    extra = 3
    token_ids = np.full((inp.token_ids.shape[0], inp.token_ids.shape[1] + extra),
                        PAD_ID, dtype=np.int64)
    token_ids[:, :inp.token_ids.shape[1]] = inp.token_ids
    pos_ids = np.zeros_like(token_ids)
    pos_ids[:, :inp.pos_ids.shape[1]] = inp.pos_ids
    from uiim.model import BatchInputs

    padded = BatchInputs(token_ids=token_ids, pos_ids=pos_ids, stats=inp.stats,
                         lengths=inp.lengths, conversations=inp.conversations,
                         steps=inp.steps)
    logits2, _ = forward_batch(model.params, model.config, model.table,
                               padded, mode="eval")
    assert np.max(np.abs(logits.data - logits2.data)) <= 1e-10
