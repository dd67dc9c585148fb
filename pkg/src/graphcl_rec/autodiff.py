"""Tape-based reverse-mode differentiation over dense 2-D float64 matrices.

Every value is a ``rows x cols`` matrix (scalars are ``1 x 1``).  An op records
itself on the tape of its tracked inputs; untracked inputs are constants.
The tape is rebuilt for every minibatch (define-by-run).

    tape = Tape()
    x = tape.watch(np.ones((2, 3)), "x")
    loss = ad.sum(x * x)
    grads = ad.backward(tape, loss)      # {"x": 2 * ones}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass
class _Node:
    op: str
    parents: tuple
    backward: BackwardFn | None
    name: str | None = None


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def watch(self, value, name: str) -> "Tensor":
        """Register a trainable leaf; its gradient is reported under ``name``."""
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        t = self._push(_as_matrix(value).copy(), "param", (), None, name)
        self.params[name] = t
        return t

    def _push(self, value, op, parents, backward, name=None) -> "Tensor":
        t = Tensor(value, self, len(self.nodes))
        self.nodes.append(_Node(op, parents, backward, name))
        return t


class Tensor:
    __slots__ = ("value", "tape", "node_id")

    def __init__(self, value, tape: Tape | None = None, node_id: int | None = None):
        self.value = value
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ValueError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        flag = f", node={self.node_id}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, (int, float)):
            raise TypeError("only division by a python scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise ValueError(f"tensors are 2-D, got shape {a.shape}")
    return a


def constant(x) -> Tensor:
    """Wrap a value as an untracked tensor."""
    if isinstance(x, Tensor):
        return Tensor(x.value)
    return Tensor(_as_matrix(x))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _result(op: str, value: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced a non-finite value")
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError(f"{op}: inputs recorded on different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(value)
    return tape._push(value, op, tuple(parents), backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"{op}: dimension mismatch {a.shape} vs {b.shape}")


# elementwise arithmetic; row (1 x c), column (r x 1) and scalar operands broadcast


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _result("add", a.value + b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb) if b.tracked else None))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.value - b.value, (a, b),
                   lambda g: (_unbroadcast(g, sa) if a.tracked else None,
                              -_unbroadcast(g, sb) if b.tracked else None))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value
    return _result("mul", av * bv, (a, b),
                   lambda g: (_unbroadcast(g * bv, av.shape) if a.tracked else None,
                              _unbroadcast(g * av, bv.shape) if b.tracked else None))


elementwise_mul = mul


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scale", a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise ValueError(f"matmul: dimension mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    # d(AB)/dA = G B^T, d(AB)/dB = A^T G
    return _result("matmul", av @ bv, (a, b),
                   lambda g: (g @ bv.T if a.tracked else None, av.T @ g if b.tracked else None))


def transpose(a: Tensor) -> Tensor:
    return _result("transpose", np.ascontiguousarray(a.value.T), (a,), lambda g: (g.T,))


def spmm(adj, x: Tensor) -> Tensor:
    """Sparse-dense product ``adj @ x``.

    ``adj`` is any object exposing ``shape``, ``dot(x)`` and ``transpose_dot(g)``
    (see :class:`graphcl_rec.graph.Adjacency`).  The adjoint is the transposed
    product, so no dense copy of the adjacency is ever formed.
    """
    x = _lift(x)
    if adj.shape[1] != x.rows:
        raise ValueError(f"spmm: adjacency {adj.shape} cannot multiply {x.shape}")
    return _result("spmm", adj.dot(x.value), (x,), lambda g: (adj.transpose_dot(g),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_lift(p) for p in parts]
    if len({p.rows for p in parts}) != 1:
        raise ValueError("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def back(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _result("concat_cols", np.hstack([p.value for p in parts]), parts, back)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [_lift(p) for p in parts]
    if len({p.cols for p in parts}) != 1:
        raise ValueError("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def back(g):
        return tuple(g[bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _result("concat_rows", np.vstack([p.value for p in parts]), parts, back)


def split_rows(x: Tensor, n_first: int) -> tuple[Tensor, Tensor]:
    idx = np.arange(x.rows)
    return gather_rows(x, idx[:n_first]), gather_rows(x, idx[n_first:])


def scatter_add_rows(index: np.ndarray, g: np.ndarray, n_rows: int) -> np.ndarray:
    """``out[index[k]] += g[k]`` for every k, via a sorted segment reduction."""
    out = np.zeros((n_rows, g.shape[1]))
    if not len(index):
        return out
    order = np.argsort(index, kind="stable")
    sorted_idx = index[order]
    starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
    out[sorted_idx[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return out


def gather_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    n = x.rows
    return _result("gather_rows", x.value[index], (x,), lambda g: (scatter_add_rows(index, g, n),))


def take(x: Tensor, rows, cols, unique: bool = False) -> Tensor:
    """Elementwise gather ``out[a, b] = x[rows[a, b], cols[a, b]]``.

    ``unique=True`` promises no position is taken twice, which lets the
    adjoint assign instead of accumulate.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.shape != cols.shape or rows.ndim != 2:
        raise ValueError("take: rows and cols must be equal-shape 2-D index arrays")
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        if unique:
            out[rows, cols] = g
        else:
            np.add.at(out, (rows, cols), g)
        return (out,)

    return _result("take", x.value[rows, cols], (x,), back)


def sum_of(parts: Sequence[Tensor]) -> Tensor:
    parts = [_lift(p) for p in parts]
    if len({p.shape for p in parts}) != 1:
        raise ValueError("sum_of: shapes differ")
    value = parts[0].value.copy()
    for p in parts[1:]:
        value = value + p.value
    return _result("sum_of", value, parts, lambda g: tuple(g for _ in parts))


def mean_of(parts: Sequence[Tensor]) -> Tensor:
    return scale(sum_of(parts), 1.0 / len(parts))


def total(x: Tensor) -> Tensor:
    """Sum of all entries, as a 1x1 tensor."""
    shape = x.shape
    return _result("sum", np.array([[x.value.sum()]]), (x,),
                   lambda g: (np.full(shape, g[0, 0]),))


sum = total  # noqa: A001 - mirrors the op name used throughout the losses


def mean(x: Tensor) -> Tensor:
    return scale(total(x), 1.0 / x.value.size)


def sum_rows(x: Tensor) -> Tensor:
    """Row sums, ``r x 1``."""
    shape = x.shape
    return _result("sum_rows", x.value.sum(axis=1, keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return _result("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xv = x.value
    if (xv <= 0).any():
        raise ValueError("log of a non-positive value")
    return _result("log", np.log(xv), (x,), lambda g: (g / xv,))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return _result("relu", np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    d = np.where(x.value > 0, 1.0, slope)
    return _result("leaky_relu", x.value * d, (x,), lambda g: (g * d,))


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.value)
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(x: Tensor) -> Tensor:
    # log s(x) = -softplus(-x); d/dx = 1 - s(x)
    xv = x.value
    y = -np.logaddexp(0.0, -xv)
    s = _stable_sigmoid(xv)
    return _result("log_sigmoid", y, (x,), lambda g: (g * (1.0 - s),))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS = {
    "identity": identity,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
}


def l2_normalize_rows(x: Tensor) -> Tensor:
    """Scale each row to unit norm; zero rows stay zero (with zero gradient)."""
    xv = x.value
    norms = np.sqrt((xv * xv).sum(axis=1, keepdims=True))
    safe = np.where(norms > 0, norms, 1.0)
    y = np.where(norms > 0, xv / safe, 0.0)

    def back(g):
        # dx = (g - y <g, y>) / |x|
        proj = (g * y).sum(axis=1, keepdims=True)
        return (np.where(norms > 0, (g - y * proj) / safe, 0.0),)

    return _result("l2_normalize_rows", y, (x,), back)


def maximum(x: Tensor, floor) -> Tensor:
    """``max(x, floor)`` with ``floor`` a constant; zero gradient where the floor wins."""
    f = _as_matrix(floor) if not isinstance(floor, Tensor) else floor.value
    active = x.value < f
    y = np.where(active, f, x.value)
    return _result("maximum", y, (x,), lambda g: (np.where(active, 0.0, g),))


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise ``log(sum(exp(x)))`` with max-subtraction, ``r x 1``."""
    xv = x.value
    m = xv.max(axis=1, keepdims=True)
    e = np.exp(xv - m)
    s = e.sum(axis=1, keepdims=True)
    soft = e / s
    return _result("logsumexp_rows", m + np.log(s), (x,), lambda g: (g * soft,))


def cosine_similarity_matrix(a: Tensor, b: Tensor, temperature: float) -> Tensor:
    """``out[j, k] = <a_j, b_k> / (|a_j| |b_k| temperature)``; zero rows give 0."""
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if a.cols != b.cols:
        raise ValueError(f"cosine: dimension mismatch {a.shape} vs {b.shape}")
    return scale(matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b))), 1.0 / temperature)


def backward(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a 1x1 ``loss`` for every parameter registered on ``tape``.

    Contributions from multiple uses of a node are summed; parameters that do
    not reach the loss get zeros.
    """
    if loss.shape != (1, 1):
        raise ValueError(f"loss must be 1x1, got {loss.shape}")
    grads: list = [None] * len(tape.nodes)
    if loss.tape is tape:
        grads[loss.node_id] = np.ones((1, 1))
    for nid in range(len(tape.nodes) - 1, -1, -1):
        g = grads[nid]
        node = tape.nodes[nid]
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent.tape is None or pg is None:
                continue
            pid = parent.node_id
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    out = {}
    for name, t in tape.params.items():
        g = grads[t.node_id]
        out[name] = np.zeros(t.shape) if g is None else np.array(g, dtype=np.float64)
    return out


@dataclass
class GradCheckReport:
    passed: bool
    max_error: float
    worst: tuple[str, tuple[int, int]] | None
    errors: dict[str, np.ndarray]

    def __str__(self):
        state = "pass" if self.passed else "FAIL"
        return f"gradient check {state}: max rel error {self.max_error:.3e} at {self.worst}"


def gradient_check(f: Callable[[dict], Tensor], params: dict[str, np.ndarray],
                   h: float = 1e-6, tol: float = 1e-4, floor: float = 1e-3) -> GradCheckReport:
    """Compare tape gradients of ``f`` with central differences, coordinate by coordinate.

    ``f`` maps a dict of tensors to a 1x1 tensor.  The error at a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    tape = Tape()
    watched = {k: tape.watch(v, k) for k, v in params.items()}
    analytic = backward(tape, f(watched))

    base = {k: _as_matrix(v).copy() for k, v in params.items()}
    errors = {}
    max_err, worst = 0.0, None
    for name, value in base.items():
        err = np.zeros(value.shape)
        for idx in np.ndindex(*value.shape):
            orig = value[idx]
            value[idx] = orig + h
            fp = f({k: constant(v) for k, v in base.items()}).item()
            value[idx] = orig - h
            fm = f({k: constant(v) for k, v in base.items()}).item()
            value[idx] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic[name][idx]
            err[idx] = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if err[idx] > max_err or worst is None:
                max_err, worst = float(err[idx]), (name, idx)
        errors[name] = err
    return GradCheckReport(max_err < tol, max_err, worst, errors)
