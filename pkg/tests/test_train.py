import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphcl_rec import autodiff as ad
from graphcl_rec.data import InteractionDataset, block_dataset, split_train_test
from graphcl_rec.encoders import EncoderConfig
from graphcl_rec.graph import build_graph
from graphcl_rec.losses import BatchSample, LossConfig
from graphcl_rec.train import (AdamState, TrainConfig, adam_step, batch_objective, epoch_batches,
                               epochs_to_fraction, fit, new_model, sample_minibatch, train_epoch)


def toy_split(seed=0):
    return split_train_test(block_dataset(30, 40, 4, 8, seed=seed), 0.8, seed)


def small_cfg(**kw):
    base = dict(epochs=3, batch_size=32, dim=8, seed=0, encoder=EncoderConfig("lightgcn", 2, "last"))
    base.update(kw)
    return TrainConfig(**base)


def test_minibatch_of_whole_set_is_permutation():
    ds = InteractionDataset(2, 2, np.array([[0, 0], [0, 1], [1, 1]]))
    b = sample_minibatch(ds, 3, np.random.default_rng(0))
    assert sorted(zip(b.user_indices, b.pos_item_indices)) == [(0, 0), (0, 1), (1, 1)]


def test_forced_negative():
    ds = InteractionDataset(1, 4, np.array([[0, 0], [0, 1], [0, 3]]))
    b = sample_minibatch(ds, 3, np.random.default_rng(1), negatives=True)
    assert list(b.neg_item_indices) == [2, 2, 2]


def test_user_with_every_item_has_no_negative():
    ds = InteractionDataset(1, 2, np.array([[0, 0], [0, 1]]))
    with pytest.raises(ValueError):
        sample_minibatch(ds, 1, np.random.default_rng(0), negatives=True)


def test_negatives_never_observed():
    ds = block_dataset(50, 60, 5, 20, seed=2)
    observed = {tuple(p) for p in ds.pairs}
    rng = np.random.default_rng(3)
    draws = 0
    while draws < 10_000:
        b = sample_minibatch(ds, 500, rng, negatives=True)
        assert not any((u, j) in observed for u, j in zip(b.user_indices, b.neg_item_indices))
        draws += len(b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40))
def test_epoch_covers_every_pair_once(seed, batch_size):
    ds = block_dataset(10, 20, 2, 5, seed=seed % 13)
    batches = list(epoch_batches(ds, batch_size, np.random.default_rng(seed)))
    seen = sorted(p for b in batches for p in zip(b.user_indices, b.pos_item_indices))
    assert seen == sorted(map(tuple, ds.pairs))
    assert all(len(b) >= 2 for b in batches)


def test_adam_zero_gradient_step_one():
    p = {"x": np.array([[1.0, -2.0]])}
    adam_step(AdamState(), p, {"x": np.zeros((1, 2))})
    assert np.array_equal(p["x"], [[1.0, -2.0]])


def test_adam_unit_gradient_step_one():
    p = {"x": np.zeros((2, 2))}
    st_ = AdamState(lr=0.001)
    adam_step(st_, p, {"x": np.ones((2, 2))})
    assert st_.step_count == 1
    assert np.all(p["x"] == -0.0009999999900000003)
    assert np.allclose(p["x"], -0.001 / (1 + 1e-8), rtol=0, atol=1e-18)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(AdamState(), {"x": np.zeros((2, 2))}, {"x": np.zeros((1, 2))})


def test_adam_moments_stay_finite():
    rng = np.random.default_rng(0)
    p = {"x": rng.normal(size=(3, 3))}
    st_ = AdamState()
    for _ in range(50):
        adam_step(st_, p, {"x": rng.normal(scale=1e3, size=(3, 3))})
    assert np.isfinite(st_.m["x"]).all() and np.isfinite(st_.v["x"]).all()


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(main_loss="dcl", batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(main_loss="softmax")
    with pytest.raises(ValueError):
        TrainConfig(edge_drop=1.5)
    assert TrainConfig(main_loss="bpr", batch_size=1).batch_size == 1


def test_p_one_or_beta_zero_disables_graph_term():
    assert not TrainConfig(edge_drop=1.0).gcl_active
    assert not TrainConfig(loss=LossConfig(beta=0.0)).gcl_active
    assert TrainConfig().gcl_active


def _objective(cfg, split, model=None, epoch=1):
    graph = build_graph(split.train)
    model = model or new_model(cfg, split.train.num_users, split.train.num_items)
    batch = BatchSample(split.train.users[:16], split.train.items[:16])
    tape = ad.Tape()
    obj, gcl, main = batch_objective(model, graph, batch, cfg, tape, epoch, 0)
    return obj, gcl, main


def test_beta_zero_skips_views_without_changing_loss():
    sp = toy_split()
    a, gcl_a, _ = _objective(small_cfg(loss=LossConfig(beta=0.0)), sp)
    b, gcl_b, _ = _objective(small_cfg(use_gcl=False), sp)
    assert gcl_a is None and gcl_b is None
    assert a.item() == b.item()


def test_graph_term_enters_with_beta():
    sp = toy_split()
    cfg = small_cfg(loss=LossConfig(beta=0.25, lam=0.0))
    obj, gcl, main = _objective(cfg, sp)
    assert obj.item() == pytest.approx(0.25 * gcl.item() + 0.75 * main.item(), rel=1e-14)


@pytest.mark.parametrize("main_loss", ["bpr", "cl", "dcl"])
def test_full_objective_gradient(main_loss):
    sp = split_train_test(block_dataset(6, 8, 2, 3, seed=1), 0.8, 1)
    cfg = small_cfg(main_loss=main_loss, dim=3, loss=LossConfig(t2=0.5, lam=0.01, beta=0.4, tau_plus=0.05),
                    encoder=EncoderConfig("lightgcn", 2, "sum"))
    graph = build_graph(sp.train)
    model = new_model(cfg, sp.train.num_users, sp.train.num_items)
    rng = np.random.default_rng(0)
    users, items = sp.train.users[:5], sp.train.items[:5]
    neg = rng.integers(0, 8, 5) if main_loss == "bpr" else None
    batch = BatchSample(users, items, neg)

    rep = ad.gradient_check(lambda p: _record(model, graph, batch, cfg, p), dict(model.params))
    assert rep.passed, str(rep)


def _record(model, graph, batch, cfg, tensors):
    """batch_objective with its parameter leaves replaced by ``tensors`` (tracked or constant)."""
    class Passthrough(ad.Tape):
        def watch(self, value, name):
            return tensors[name]

    obj, _, _ = batch_objective(model, graph, batch, cfg, Passthrough(), 1, 0)
    return obj


def test_one_epoch_decreases_loss_on_three_pairs():
    ds = InteractionDataset(2, 3, np.array([[0, 0], [0, 1], [1, 2]]))
    sp = split_train_test(ds, 0.99, 0)
    improved = 0
    for seed in range(10):
        cfg = TrainConfig(epochs=1, batch_size=3, dim=8, seed=seed, lr=1e-2,
                          encoder=EncoderConfig("lightgcn", 2, "last"))
        graph = build_graph(sp.train)
        model = new_model(cfg, 2, 3)
        batch = BatchSample(sp.train.users, sp.train.items)
        before = batch_objective(model, graph, batch, cfg, ad.Tape(), 1, 0)[0].item()
        train_epoch(model, graph, sp.train, cfg, 1, AdamState(lr=cfg.lr))
        after = batch_objective(model, graph, batch, cfg, ad.Tape(), 1, 0)[0].item()
        improved += after < before
    assert improved >= 9


def test_loss_finite_for_100_epochs():
    sp = toy_split(1)
    res = fit(small_cfg(epochs=100, eval_every=10, lr=1e-2), sp)
    assert len(res.history) == 10
    assert all(math.isfinite(r["loss_total"]) and math.isfinite(r["loss_gcl"]) for r in res.history)


def test_fit_history_length_and_best_epoch():
    sp = toy_split()
    res = fit(small_cfg(epochs=3, eval_every=1), sp)
    assert [r["epoch"] for r in res.history] == [1, 2, 3]
    recalls = [r["recall"] for r in res.history]
    assert res.best_epoch == res.history[int(np.argmax(recalls))]["epoch"]
    assert res.best_recall == max(recalls)


def test_early_stop_after_patience():
    sp = toy_split()
    seen = []
    res = fit(small_cfg(epochs=20, lr=0.0, early_stop_patience=2), sp, on_epoch=seen.append)
    # with lr=0 the metric never improves after epoch 1
    assert [r["epoch"] for r in res.history] == [1, 2, 3]
    assert all("wall_time" in r for r in seen)


def test_zero_learning_rate_freezes_parameters_and_metrics():
    sp = toy_split()
    cfg = small_cfg(epochs=3, lr=0.0)
    res = fit(cfg, sp)
    init = new_model(cfg, sp.train.num_users, sp.train.num_items)
    assert all(np.array_equal(res.model.params[k], init.params[k]) for k in init.params)
    assert len({(r["recall"], r["ndcg"]) for r in res.history}) == 1


@pytest.mark.parametrize("main_loss,use_gcl,dropout", [("dcl", True, 0.0), ("bpr", False, 0.2)])
def test_fit_is_deterministic(main_loss, use_gcl, dropout):
    sp = toy_split()
    cfg = small_cfg(epochs=5, main_loss=main_loss, use_gcl=use_gcl,
                    encoder=EncoderConfig("lightgcn", 2, "last", message_dropout=dropout))
    a, b = fit(cfg, sp), fit(cfg, sp)
    strip = lambda h: [{k: v for k, v in r.items() if k != "wall_time"} for r in h]
    assert strip(a.history) == strip(b.history)
    assert all(np.array_equal(a.model.params[k], b.model.params[k]) for k in a.model.params)


def test_views_differ_within_a_step(monkeypatch):
    import graphcl_rec.train as train_mod
    seen = []
    real = train_mod.perturb_edges

    def spy(g, p, seed, renormalize=True):
        v = real(g, p, seed, renormalize)
        seen.append(set(zip(*v.graph.edges()[:2])))
        return v

    monkeypatch.setattr(train_mod, "perturb_edges", spy)
    _objective(small_cfg(), toy_split())
    assert len(seen) == 2 and seen[0] != seen[1]


@pytest.mark.parametrize("kind", ["mf", "gcmc", "lrgccf"])
def test_other_encoders_train(kind):
    sp = toy_split()
    res = fit(small_cfg(epochs=2, encoder=EncoderConfig(kind, layers=2)), sp)
    assert len(res.history) == 2 and res.best_recall > 0


def test_epochs_to_fraction():
    hist = [{"epoch": 1, "recall": 0.1}, {"epoch": 2, "recall": 0.5}, {"epoch": 3, "recall": 0.52}]
    assert epochs_to_fraction(hist) == 2
    assert epochs_to_fraction(hist, 1.0) == 3
