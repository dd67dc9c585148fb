"""Normalized user-item bipartite graph and edge-dropped views of it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import InteractionDataset


class Adjacency:
    """One direction of the bipartite adjacency in CSR form, rows sorted by column.

    ``data`` holds the per-edge normalization coefficient.  Products go
    through scipy's CSR kernels.  The adjoint product uses ``transpose``, which
    a :class:`BipartiteGraph` sets to the opposite direction.
    """

    def __init__(self, indptr, indices, data, shape):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.data = np.asarray(data, dtype=np.float64)
        for a in (self.indptr, self.indices, self.data):
            a.setflags(write=False)
        self.shape = (int(shape[0]), int(shape[1]))
        self._csr = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
        self.transpose = None

    @property
    def nnz(self) -> int:
        return len(self.indices)

    def row(self, r: int) -> tuple[np.ndarray, np.ndarray]:
        if not 0 <= r < self.shape[0]:
            raise IndexError(f"node {r} out of range [0, {self.shape[0]})")
        lo, hi = self.indptr[r], self.indptr[r + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def dot(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self._csr @ x)

    def transpose_dot(self, g: np.ndarray) -> np.ndarray:
        if self.transpose is None:
            return np.asarray(self._csr.T @ g)
        return self.transpose.dot(g)

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()


def _indptr(sorted_rows: np.ndarray, n_rows: int) -> np.ndarray:
    return np.r_[0, np.cumsum(np.bincount(sorted_rows, minlength=n_rows))]


@dataclass(frozen=True, eq=False)
class BipartiteGraph:
    """Both CSR directions of one edge set.

    ``item_major`` maps item-major edge positions to user-major ones, which
    lets edge-dropped views be built without re-sorting.
    """

    num_users: int
    num_items: int
    user_items: Adjacency
    item_users: Adjacency
    item_major: np.ndarray

    def __post_init__(self):
        self.user_items.transpose = self.item_users
        self.item_users.transpose = self.user_items

    @property
    def num_edges(self) -> int:
        return self.user_items.nnz

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(users, items, coefficients) in user-major order."""
        ui = self.user_items
        users = np.repeat(np.arange(self.num_users), np.diff(ui.indptr))
        return users, ui.indices, ui.data

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_items.indptr)

    def item_degrees(self) -> np.ndarray:
        return np.diff(self.item_users.indptr)


def _normalize(num_users, num_items, users, items) -> np.ndarray:
    du = np.bincount(users, minlength=num_users).astype(np.float64)
    di = np.bincount(items, minlength=num_items).astype(np.float64)
    # the degree product is exact, so only sqrt and the division round
    return 1.0 / np.sqrt(du[users] * di[items])


def _assemble(num_users, num_items, users, items, coeffs, item_major) -> BipartiteGraph:
    # users/items/coeffs are user-major sorted; item_major orders them by (item, user)
    ui = Adjacency(_indptr(users, num_users), items, coeffs, (num_users, num_items))
    iu = Adjacency(_indptr(items[item_major], num_items), users[item_major], coeffs[item_major],
                   (num_items, num_users))
    return BipartiteGraph(num_users, num_items, ui, iu, item_major)


def graph_from_edges(num_users: int, num_items: int, users, items, coeffs=None) -> BipartiteGraph:
    """Build both CSR directions; coefficients default to 1/(sqrt|N_u| sqrt|N_i|)."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    order = np.lexsort((items, users))
    users, items = users[order], items[order]
    if coeffs is None:
        coeffs = _normalize(num_users, num_items, users, items)
    else:
        coeffs = np.asarray(coeffs, dtype=np.float64)[order]
    return _assemble(num_users, num_items, users, items, coeffs, np.lexsort((users, items)))


def build_graph(train: InteractionDataset) -> BipartiteGraph:
    if not len(train):
        raise ValueError("cannot build a graph from an empty interaction set")
    return graph_from_edges(train.num_users, train.num_items, train.users, train.items)


@dataclass(frozen=True, eq=False)
class PerturbedView:
    graph: BipartiteGraph
    drop_probability: float
    view_seed: int


def perturb_edges(g: BipartiteGraph, p: float, seed: int, renormalize: bool = True) -> PerturbedView:
    """Drop every edge independently with probability ``p``.

    Surviving edges get coefficients from the view's own degrees unless
    ``renormalize`` is off, in which case the parent's coefficients are kept.
    Isolated nodes stay in the view with empty rows.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop probability must be in [0, 1], got {p}")
    users, items, coeffs = g.edges()
    keep = np.random.default_rng(seed).random(len(users)) >= p
    new_pos = np.cumsum(keep) - 1
    item_major = new_pos[g.item_major[keep[g.item_major]]]
    users, items = users[keep], items[keep]
    coeffs = _normalize(g.num_users, g.num_items, users, items) if renormalize else coeffs[keep]
    view = _assemble(g.num_users, g.num_items, users, items, coeffs, item_major)
    return PerturbedView(view, p, seed)


def view_seed(base_seed: int, epoch: int, batch: int, view: int) -> int:
    """Reproducible seed for one perturbed view of one minibatch."""
    return int(np.random.SeedSequence([base_seed, epoch, batch, view]).generate_state(1)[0])


def neighbors(g: BipartiteGraph, node: int, side: str = "user") -> tuple[np.ndarray, np.ndarray]:
    """Read-only (neighbor indices, coefficients) of a user or item, sorted by index."""
    if side == "user":
        return g.user_items.row(node)
    if side == "item":
        return g.item_users.row(node)
    raise ValueError(f"side must be 'user' or 'item', got {side!r}")


def dump_edges(g: BipartiteGraph, path) -> None:
    users, items, coeffs = g.edges()
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, c in zip(users, items, coeffs):
            fh.write(f"{u}\t{i}\t{float(c)!r}\n")
