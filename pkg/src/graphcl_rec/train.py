"""Minibatch training: Adam, epoch loop over main + perturbed-view forwards, fit with evaluation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .data import InteractionDataset, SplitDataset
from .encoders import EncoderConfig, Model, encode
from .evaluation import MetricReport, evaluate
from .graph import BipartiteGraph, build_graph, perturb_edges, view_seed
from .losses import (BatchSample, LossConfig, bpr_loss, contrastive_cl_loss, dcl_loss,
                     gcl_loss, gcl_pair_loss, total_objective)

log = logging.getLogger(__name__)

MAIN_LOSSES = ("bpr", "cl", "dcl")


@dataclass
class TrainConfig:
    """Everything that determines a training run besides the data.

    ``main_loss`` picks BPR, CL or DCL; ``use_gcl`` adds the graph contrastive
    term over two views with edge drop probability ``edge_drop``.
    """

    epochs: int = 100
    batch_size: int = 2048
    lr: float = 1e-3
    seed: int = 0
    dim: int = 128
    main_loss: str = "dcl"
    use_gcl: bool = True
    edge_drop: float = 0.3
    renormalize_views: bool = True
    eval_every: int = 1
    early_stop_patience: int = 0
    k: int = 20
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.main_loss not in MAIN_LOSSES:
            raise ValueError(f"main_loss must be one of {MAIN_LOSSES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.main_loss != "bpr" and self.batch_size < 2:
            raise ValueError("in-batch negatives need batch_size >= 2")
        if not 0.0 <= self.edge_drop <= 1.0:
            raise ValueError("edge_drop must be in [0, 1]")
        if self.epochs < 0 or self.eval_every < 1 or self.k < 1:
            raise ValueError("epochs >= 0, eval_every >= 1 and k >= 1 required")

    @property
    def gcl_active(self) -> bool:
        # p = 1 leaves no edges to contrast, so the graph term is dropped entirely
        return self.use_gcl and self.loss.beta > 0 and self.edge_drop < 1.0

    @property
    def similarity(self) -> str:
        return "dot" if self.main_loss == "bpr" else "cosine"


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


class _NegativeSampler:
    def __init__(self, train: InteractionDataset):
        self.num_items = train.num_items
        self.keys = train.users * train.num_items + train.items  # sorted: pairs are (user, item) sorted
        deg = train.user_degrees()
        self.full = deg >= train.num_items

    def __call__(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.full[users].any():
            raise ValueError("a sampled user has interacted with every item; no negative exists")
        neg = rng.integers(0, self.num_items, size=len(users))
        while True:
            keys = users * self.num_items + neg
            pos = np.searchsorted(self.keys, keys)
            bad = (pos < len(self.keys)) & (self.keys[np.minimum(pos, len(self.keys) - 1)] == keys)
            if not bad.any():
                return neg
            neg[bad] = rng.integers(0, self.num_items, size=int(bad.sum()))


def sample_minibatch(train: InteractionDataset, batch_size: int, rng: np.random.Generator,
                     negatives: bool = False) -> BatchSample:
    """``batch_size`` distinct training pairs drawn uniformly (plus BPR negatives)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    idx = rng.permutation(len(train))[:batch_size]
    users, items = train.users[idx], train.items[idx]
    neg = _NegativeSampler(train)(users, rng) if negatives else None
    return BatchSample(users, items, neg)


def epoch_batches(train: InteractionDataset, batch_size: int, rng: np.random.Generator,
                  negatives: bool = False, sampler=None):
    """Minibatches covering a shuffled permutation of all training pairs exactly once.

    A trailing batch of a single pair is merged into the previous one so that
    in-batch negatives always exist.
    """
    order = rng.permutation(len(train))
    bounds = list(range(0, len(order), batch_size)) + [len(order)]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < 2:
        del bounds[-2]
    if negatives and sampler is None:
        sampler = _NegativeSampler(train)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        idx = order[lo:hi]
        users, items = train.users[idx], train.items[idx]
        yield BatchSample(users, items, sampler(users, rng) if negatives else None)


@dataclass
class EpochStats:
    loss_total: float
    loss_gcl: float
    loss_main: float
    batches: int


def batch_objective(model: Model, graph: BipartiteGraph, batch: BatchSample, cfg: TrainConfig,
                    tape: ad.Tape, epoch: int = 0, batch_index: int = 0):
    """Record the full objective for one minibatch; returns (objective, gcl, main) tensors."""
    params = {name: tape.watch(arr, name) for name, arr in model.params.items()}
    lcfg = cfg.loss
    drop_rng = None
    if cfg.encoder.message_dropout > 0:
        drop_rng = np.random.default_rng([cfg.seed, epoch, batch_index, 0])
    users_final, items_final = encode(cfg.encoder, params, graph, drop_rng)
    u = ad.gather_rows(users_final, batch.user_indices)
    i = ad.gather_rows(items_final, batch.pos_item_indices)
    reg = [ad.gather_rows(params["user_embeddings"], batch.user_indices),
           ad.gather_rows(params["item_embeddings"], batch.pos_item_indices)]

    if cfg.main_loss == "bpr":
        j = ad.gather_rows(items_final, batch.neg_item_indices)
        main = bpr_loss(ad.sum_rows(u * i), ad.sum_rows(u * j))
        reg.append(ad.gather_rows(params["item_embeddings"], batch.neg_item_indices))
    elif cfg.main_loss == "cl":
        main = contrastive_cl_loss(u, i, lcfg.t2)
    else:
        main = dcl_loss(u, i, lcfg)
    reg.extend(t for name, t in params.items() if name.startswith("W"))

    gcl = None
    if cfg.gcl_active:
        anchors = np.unique(batch.user_indices)
        views = []
        for v in (1, 2):
            pv = perturb_edges(graph, cfg.edge_drop, view_seed(cfg.seed, epoch, batch_index, v),
                               cfg.renormalize_views)
            hu, _ = encode(cfg.encoder, params, pv.graph)
            views.append(ad.gather_rows(hu, anchors))
        gcl = gcl_loss(gcl_pair_loss(views[0], views[1], lcfg.t1))
    return total_objective(gcl, main, reg, lcfg), gcl, main


def train_epoch(model: Model, graph: BipartiteGraph, train: InteractionDataset, cfg: TrainConfig,
                epoch: int, adam: AdamState) -> EpochStats:
    rng = np.random.default_rng([cfg.seed, epoch, 1])
    tot = gcl_sum = main_sum = 0.0
    n = 0
    for b, batch in enumerate(epoch_batches(train, cfg.batch_size, rng, cfg.main_loss == "bpr")):
        tape = ad.Tape()
        obj, gcl, main = batch_objective(model, graph, batch, cfg, tape, epoch, b)
        grads = ad.backward(tape, obj)
        adam_step(adam, model.params, grads)
        tot += obj.item()
        gcl_sum += gcl.item() if gcl is not None else 0.0
        main_sum += main.item()
        n += 1
    if n == 0:
        return EpochStats(0.0, 0.0, 0.0, 0)
    return EpochStats(tot / n, gcl_sum / n, main_sum / n, n)


@dataclass
class FitResult:
    model: Model
    history: list
    best_recall: float
    best_ndcg: float
    best_epoch: int


def new_model(cfg: TrainConfig, num_users: int, num_items: int) -> Model:
    return Model.init(num_users, num_items, cfg.dim, cfg.encoder, cfg.seed, cfg.similarity)


def fit(cfg: TrainConfig, split: SplitDataset,
        on_epoch: Callable[[dict], None] | None = None) -> FitResult:
    """Train for ``cfg.epochs``, evaluating every ``eval_every`` epochs.

    History holds one row per evaluation.  With ``early_stop_patience > 0``
    training stops after that many consecutive evaluations without a new
    best recall.
    """
    graph = build_graph(split.train)
    model = new_model(cfg, split.train.num_users, split.train.num_items)
    adam = AdamState(lr=cfg.lr)
    history = []
    best = (-math.inf, 0.0, 0)
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        stats = train_epoch(model, graph, split.train, cfg, epoch, adam)
        row = {"epoch": epoch, "loss_total": stats.loss_total, "loss_gcl": stats.loss_gcl,
               "loss_main": stats.loss_main}
        if epoch % cfg.eval_every == 0:
            rep = evaluate_model(model, graph, split, cfg.k)
            row.update(recall=rep.recall, ndcg=rep.ndcg)
            history.append(row)
            if rep.recall > best[0]:
                best, stale = (rep.recall, rep.ndcg, epoch), 0
            else:
                stale += 1
        row["wall_time"] = time.perf_counter() - t0
        if on_epoch is not None:
            on_epoch(row)
        if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
            log.info("early stop at epoch %d (best %d)", epoch, best[2])
            break
    if best[2] == 0:
        best = (0.0, 0.0, 0)
    return FitResult(model, history, best[0], best[1], best[2])


def evaluate_model(model: Model, graph: BipartiteGraph, split: SplitDataset, k: int = 20) -> MetricReport:
    users_final, items_final = model.final_embeddings(graph)
    return evaluate(users_final, items_final, split, k, model.similarity)


def epochs_to_fraction(history: list, fraction: float = 0.95) -> int:
    """First evaluated epoch whose recall reaches ``fraction`` of the best recall."""
    best = max(r["recall"] for r in history)
    return next(r["epoch"] for r in history if r["recall"] >= fraction * best)
