"""Objective components: BPR, contrastive (CL), debiased contrastive (DCL),
graph contrastive (GCL) and their weighted combination.

Similarities are tempered cosines.  Contrastive denominators are evaluated
after subtracting a per-row constant (the row maximum), which leaves every
loss value unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad

CLAMP_FLOORS = ("exp_inv_t2", "exp_neg_inv_t2")


@dataclass
class LossConfig:
    """Loss hyperparameters.

    ``clamp_floor`` selects the lower bound applied to the DCL negative score:
    ``exp_neg_inv_t2`` is ``e^{-1/t2}``, the smallest value ``e^phi`` can take
    for unit vectors; ``exp_inv_t2`` is ``e^{1/t2}``, which binds for almost
    every batch and makes the loss ignore the negatives and ``tau_plus``.
    """

    t1: float = 0.8
    t2: float = 0.1
    tau_plus: float = 1e-3
    beta: float = 0.1
    lam: float = 1e-4
    use_clamp: bool = True
    clamp_floor: str = "exp_neg_inv_t2"

    def __post_init__(self):
        if not self.t1 > 0:
            raise ValueError("t1 must be positive")
        if not self.t2 > 0:
            raise ValueError("t2 must be positive")
        if not 0.0 <= self.tau_plus < 1.0:
            raise ValueError("tau_plus must be in [0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.clamp_floor not in CLAMP_FLOORS:
            raise ValueError(f"clamp_floor must be one of {CLAMP_FLOORS}")

    def floor_exponent(self) -> float:
        return (1.0 if self.clamp_floor == "exp_inv_t2" else -1.0) / self.t2


@dataclass
class BatchSample:
    user_indices: np.ndarray
    pos_item_indices: np.ndarray
    neg_item_indices: np.ndarray | None = None

    def __len__(self):
        return len(self.user_indices)


def _col(x) -> ad.Tensor:
    if isinstance(x, ad.Tensor):
        return x
    return ad.constant(np.asarray(x, dtype=np.float64).reshape(-1, 1))


def _rows(x) -> ad.Tensor:
    if isinstance(x, ad.Tensor):
        return x
    a = np.asarray(x, dtype=np.float64)
    return ad.constant(a.reshape(1, -1) if a.ndim <= 1 else a)


def bpr_loss(scores_pos, scores_neg) -> ad.Tensor:
    """Mean of ``-ln sigmoid(pos - neg)``; regularization is added elsewhere."""
    pos, neg = _col(scores_pos), _col(scores_neg)
    if pos.shape != neg.shape:
        raise ValueError("bpr_loss: score vectors differ in length")
    return -ad.mean(ad.log_sigmoid(pos - neg))


def cl_loss(phi_pos, phi_negs) -> ad.Tensor:
    """Mean over rows of ``-log(e^pos / (e^pos + sum_l e^neg_l))``."""
    pos, negs = _col(phi_pos), _rows(phi_negs)
    if negs.cols < 1:
        raise ValueError("cl_loss needs at least one negative")
    return ad.mean(ad.logsumexp_rows(ad.concat_cols([pos, negs])) - pos)


def dcl_negative_score(phi_pos, phi_negs, tau_plus: float) -> ad.Tensor:
    """Bias-corrected negative score per row:
    ``(mean_l e^{neg_l} - tau_plus e^{pos}) / (1 - tau_plus)``.
    """
    if not 0.0 <= tau_plus < 1.0:
        raise ValueError("tau_plus must be in [0, 1)")
    pos, negs = _col(phi_pos), _rows(phi_negs)
    if negs.cols < 1:
        raise ValueError("need at least one negative")
    mean_neg = ad.scale(ad.sum_rows(ad.exp(negs)), 1.0 / negs.cols)
    if tau_plus == 0.0:
        return mean_neg
    return ad.scale(mean_neg - ad.scale(ad.exp(pos), tau_plus), 1.0 / (1.0 - tau_plus))


def dcl_clamp(g, t2: float, floor_exponent: float | None = None, shift=None) -> ad.Tensor:
    """``max(g, e^{floor_exponent - shift})``; the floor defaults to ``e^{1/t2}``.

    ``shift`` (per-row constant) is the offset already subtracted from the
    similarities that produced ``g``.  No gradient flows where the floor wins.
    """
    if not t2 > 0:
        raise ValueError("t2 must be positive")
    g = _col(g)
    if floor_exponent is None:
        floor_exponent = 1.0 / t2
    floor = np.exp(floor_exponent - (0.0 if shift is None else shift))
    return ad.maximum(g, np.broadcast_to(floor, g.shape))


@lru_cache(maxsize=32)
def _offdiag_index(b: int) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays selecting every off-diagonal entry of a ``b x b`` matrix, row by row."""
    k = np.arange(b - 1)[None, :]
    j = np.arange(b)[:, None]
    return np.broadcast_to(j, (b, b - 1)), k + (k >= j)


def _diag(x: ad.Tensor) -> ad.Tensor:
    idx = np.arange(x.rows).reshape(-1, 1)
    return ad.take(x, idx, idx, unique=True)


def in_batch_similarities(user_emb: ad.Tensor, item_emb: ad.Tensor, t2: float):
    """Positive similarity of each (u_j, i_j) and the ``2B-2`` in-batch negatives of u_j.

    Negatives are the other ``B-1`` users followed by the other ``B-1`` items.
    """
    if user_emb.shape != item_emb.shape:
        raise ValueError("user and item batch embeddings must have equal shape")
    b = user_emb.rows
    s_uu = ad.cosine_similarity_matrix(user_emb, user_emb, t2)
    s_ui = ad.cosine_similarity_matrix(user_emb, item_emb, t2)
    r, c = _offdiag_index(b)
    negs = ad.concat_cols([ad.take(s_uu, r, c, unique=True), ad.take(s_ui, r, c, unique=True)])
    return _diag(s_ui), negs


@lru_cache(maxsize=32)
def _offdiag_mask(b: int) -> np.ndarray:
    return 1.0 - np.eye(b)


def _in_batch_terms(user_emb: ad.Tensor, item_emb: ad.Tensor, t2: float, floor_exponent=None):
    """Shifted positive logits and summed shifted negative exponentials, per anchor.

    Returns ``(pos - c, sum_neg e^{neg - c}, c, n_neg)`` where ``c`` is a per-row
    constant no smaller than any similarity in the row (nor ``floor_exponent``).
    Works on the full ``B x B`` matrices with the diagonal masked out, which is
    the same negative set as :func:`in_batch_similarities`.
    """
    if user_emb.shape != item_emb.shape:
        raise ValueError("user and item batch embeddings must have equal shape")
    b = user_emb.rows
    if b < 2:
        raise ValueError("in-batch negatives need a batch of at least 2 pairs")
    s_uu = ad.cosine_similarity_matrix(user_emb, user_emb, t2)
    s_ui = ad.cosine_similarity_matrix(user_emb, item_emb, t2)
    shift = np.maximum(s_uu.value.max(axis=1, keepdims=True), s_ui.value.max(axis=1, keepdims=True))
    if floor_exponent is not None:
        shift = np.maximum(shift, floor_exponent)
    mask = _offdiag_mask(b)
    neg_sum = (ad.sum_rows(ad.mul(ad.exp(s_uu - shift), mask))
               + ad.sum_rows(ad.mul(ad.exp(s_ui - shift), mask)))
    return _diag(s_ui) - shift, neg_sum, shift, 2 * b - 2


def dcl_loss(user_emb: ad.Tensor, item_emb: ad.Tensor, cfg: LossConfig) -> ad.Tensor:
    """In-batch debiased contrastive loss, anchored at users.

    Row j pairs user u_j with its positive item i_j; ``g'`` is the clamped
    negative score over the other ``2B-2`` users and items.
    """
    if user_emb.rows < 2:
        raise ValueError("dcl_loss needs a batch of at least 2 pairs")
    floor_exp = cfg.floor_exponent() if cfg.use_clamp else None
    pos_s, neg_sum, shift, n = _in_batch_terms(user_emb, item_emb, cfg.t2, floor_exp)
    g = ad.scale(neg_sum, 1.0 / n)
    if cfg.tau_plus > 0:
        g = ad.scale(g - ad.scale(ad.exp(pos_s), cfg.tau_plus), 1.0 / (1.0 - cfg.tau_plus))
    if cfg.use_clamp:
        g = dcl_clamp(g, cfg.t2, floor_exp, shift)
    denom = ad.exp(pos_s) + ad.scale(g, float(n))
    return ad.mean(ad.log(denom) - pos_s)


def contrastive_cl_loss(user_emb: ad.Tensor, item_emb: ad.Tensor, t2: float) -> ad.Tensor:
    """Plain CL over the same in-batch negatives as :func:`dcl_loss`."""
    pos_s, neg_sum, _, _ = _in_batch_terms(user_emb, item_emb, t2)
    return ad.mean(ad.log(ad.exp(pos_s) + neg_sum) - pos_s)


def gcl_pair_loss(h1: ad.Tensor, h2: ad.Tensor, t1: float) -> ad.Tensor:
    """Per-user ``l(u) = l_12(u) + l_21(u)`` (``B x 1``) for two views of the same users."""
    if h1.shape != h2.shape:
        raise ValueError("view embeddings must have equal shape")
    b = h1.rows
    r, c = _offdiag_index(b)

    def one_side(s_same, s_cross):
        denom = ad.concat_cols([ad.take(s_same, r, c, unique=True), s_cross])
        return ad.logsumexp_rows(denom) - _diag(s_cross)

    s12 = ad.cosine_similarity_matrix(h1, h2, t1)
    l12 = one_side(ad.cosine_similarity_matrix(h1, h1, t1), s12)
    l21 = one_side(ad.cosine_similarity_matrix(h2, h2, t1), ad.transpose(s12))
    return l12 + l21


def gcl_loss(per_user) -> ad.Tensor:
    return ad.mean(_col(per_user))


def l2_penalty(rows: list) -> ad.Tensor:
    """Sum of squared norms of the given embedding rows."""
    parts = [ad.total(ad.mul(r, r)) for r in rows]
    return ad.sum_of(parts) if parts else ad.constant(0.0)


def total_objective(gcl, main, reg_rows: list, cfg: LossConfig) -> ad.Tensor:
    """``beta * gcl + (1 - beta) * main + lam * sum ||e||^2`` over the touched base rows.

    With ``gcl=None`` the graph term is absent and ``main`` enters with weight 1.
    """
    if gcl is None:
        obj = main
    else:
        obj = ad.scale(gcl, cfg.beta) + ad.scale(main, 1.0 - cfg.beta)
    if cfg.lam > 0 and reg_rows:
        obj = obj + ad.scale(l2_penalty(reg_rows), cfg.lam)
    return obj
