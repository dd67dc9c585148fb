"""GNN encoders mapping base embeddings + a graph to final user/item embeddings.

Weights act on row vectors: a layer written ``W e`` for a column vector ``e``
is computed as ``E @ W.T`` on the embedding matrix ``E``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .graph import BipartiteGraph

KINDS = ("mf", "gcmc", "lrgccf", "lightgcn")
COMBINATIONS = ("sum", "mean", "last", "concat")
_DEFAULT_COMBINATION = {"mf": "last", "gcmc": "last", "lrgccf": "concat", "lightgcn": "sum"}


@dataclass
class EncoderConfig:
    kind: str = "lightgcn"
    layers: int = 2
    combination: str | None = None
    message_dropout: float = 0.0
    activation: str = "relu"

    def __post_init__(self):
        self.kind = self.kind.lower().replace("-", "")
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "mf":
            self.layers = 0
        elif self.kind == "gcmc":
            self.layers = 1
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.combination is None:
            self.combination = _DEFAULT_COMBINATION[self.kind]
        if self.combination not in COMBINATIONS:
            raise ValueError(f"unknown combination {self.combination!r}")
        if not 0.0 <= self.message_dropout < 1.0:
            raise ValueError("message_dropout must be in [0, 1)")
        if self.activation not in ad.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def weight_shapes(self, dim: int) -> dict[str, tuple[int, int]]:
        if self.kind == "gcmc":
            return {"W1": (dim, dim), "W2": (dim, dim)}
        if self.kind == "lrgccf":
            return {f"W{k}": (dim, dim) for k in range(self.layers)}
        return {}


@dataclass
class EmbeddingTable:
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray

    @property
    def d(self) -> int:
        return self.user_embeddings.shape[1]


def xavier_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Model:
    """Trainable parameters plus the encoder that turns them into final embeddings.

    ``params`` always starts with ``user_embeddings`` and ``item_embeddings``,
    followed by the encoder weights.  ``similarity`` is the scoring rule used
    for ranking: ``dot`` for BPR-trained models, ``cosine`` for contrastive ones.
    """

    config: EncoderConfig
    params: dict
    similarity: str = "dot"
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, num_users: int, num_items: int, dim: int, config: EncoderConfig,
             seed: int = 0, similarity: str = "dot") -> "Model":
        rng = np.random.default_rng(seed)
        params = {"user_embeddings": xavier_uniform(rng, (num_users, dim)),
                  "item_embeddings": xavier_uniform(rng, (num_items, dim))}
        for name, shape in config.weight_shapes(dim).items():
            params[name] = xavier_uniform(rng, shape)
        return cls(config, params, similarity)

    @property
    def num_users(self) -> int:
        return self.params["user_embeddings"].shape[0]

    @property
    def num_items(self) -> int:
        return self.params["item_embeddings"].shape[0]

    @property
    def dim(self) -> int:
        return self.params["user_embeddings"].shape[1]

    @property
    def table(self) -> EmbeddingTable:
        return EmbeddingTable(self.params["user_embeddings"], self.params["item_embeddings"])

    def final_embeddings(self, graph: BipartiteGraph) -> tuple[np.ndarray, np.ndarray]:
        """Evaluation-mode forward pass (no dropout, nothing recorded)."""
        consts = {k: ad.constant(v) for k, v in self.params.items()}
        u, i = encode(self.config, consts, graph)
        return u.value, i.value


def message_dropout(x: ad.Tensor, ratio: float, rng, training: bool = True) -> ad.Tensor:
    """Zero each entry with probability ``ratio`` and rescale survivors by 1/(1-ratio).

    Identity when not training, when ``ratio`` is 0, or when ``rng`` is None.
    ``rng`` may be a seed or a numpy Generator.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError("dropout ratio must be in [0, 1)")
    if not training or ratio == 0.0 or rng is None:
        return x
    rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= ratio) / (1.0 - ratio)
    return ad.mul(x, ad.constant(mask))


def combine_layers(layers: list, mode: str) -> ad.Tensor:
    if mode == "sum":
        return ad.sum_of(layers)
    if mode == "mean":
        return ad.mean_of(layers)
    if mode == "last":
        return layers[-1]
    if mode == "concat":
        return ad.concat_cols(layers)
    raise ValueError(f"unknown combination {mode!r}")


def mf_forward(params: dict) -> tuple[ad.Tensor, ad.Tensor]:
    return params["user_embeddings"], params["item_embeddings"]


def gcmc_forward(params: dict, g: BipartiteGraph, cfg: EncoderConfig, rng=None):
    """One layer: ``e_u = W1 act(sum_i c_ui W2 e_i)``, mirrored for items with the same weights."""
    try:
        w1, w2 = params["W1"], params["W2"]
    except KeyError as exc:
        raise ValueError(f"GC-MC needs weight {exc.args[0]}") from None
    act = ad.ACTIVATIONS[cfg.activation]
    u0, i0 = params["user_embeddings"], params["item_embeddings"]
    u1 = act(ad.spmm(g.user_items, i0 @ w2.T))
    i1 = act(ad.spmm(g.item_users, u0 @ w2.T))
    u1 = message_dropout(u1, cfg.message_dropout, rng)
    i1 = message_dropout(i1, cfg.message_dropout, rng)
    return u1 @ w1.T, i1 @ w1.T


def lrgccf_forward(params: dict, g: BipartiteGraph, cfg: EncoderConfig, rng=None):
    """Linear residual propagation ``e^(k+1) = W_k (e^(k) + sum c e_nbr^(k))``."""
    us, its = [params["user_embeddings"]], [params["item_embeddings"]]
    for k in range(cfg.layers):
        try:
            w = params[f"W{k}"]
        except KeyError:
            raise ValueError(f"LR-GCCF needs weight W{k}") from None
        u = (us[-1] + ad.spmm(g.user_items, its[-1])) @ w.T
        i = (its[-1] + ad.spmm(g.item_users, us[-1])) @ w.T
        us.append(message_dropout(u, cfg.message_dropout, rng))
        its.append(message_dropout(i, cfg.message_dropout, rng))
    return combine_layers(us, cfg.combination), combine_layers(its, cfg.combination)


def lightgcn_forward(params: dict, g: BipartiteGraph, cfg: EncoderConfig, rng=None):
    us, its = [params["user_embeddings"]], [params["item_embeddings"]]
    for _ in range(cfg.layers):
        u = ad.spmm(g.user_items, its[-1])
        i = ad.spmm(g.item_users, us[-1])
        us.append(message_dropout(u, cfg.message_dropout, rng))
        its.append(message_dropout(i, cfg.message_dropout, rng))
    return combine_layers(us, cfg.combination), combine_layers(its, cfg.combination)


def encode(cfg: EncoderConfig, params: dict, g: BipartiteGraph, rng=None):
    """Final (users, items) embeddings; ``rng`` enables message dropout (training mode)."""
    if cfg.kind == "mf":
        return mf_forward(params)
    if cfg.kind == "gcmc":
        return gcmc_forward(params, g, cfg, rng)
    if cfg.kind == "lrgccf":
        return lrgccf_forward(params, g, cfg, rng)
    return lightgcn_forward(params, g, cfg, rng)


# checkpoint: "key=value" header lines, then per tensor a "tensor <name> <rows> <cols>"
# line followed by one whitespace-separated row per line (user, item, weights order)

_MAGIC = "# graphcl-rec checkpoint v1"


def save_checkpoint(model: Model, path) -> None:
    cfg = model.config
    header = {"kind": cfg.kind, "layers": cfg.layers, "dim": model.dim,
              "combination": cfg.combination, "activation": cfg.activation,
              "message_dropout": repr(cfg.message_dropout), "similarity": model.similarity,
              "num_users": model.num_users, "num_items": model.num_items}
    for k, v in model.meta.items():
        header[f"meta.{k}"] = v
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MAGIC + "\n")
        for k, v in header.items():
            fh.write(f"{k}={v}\n")
        for name, arr in model.params.items():
            fh.write(f"tensor {name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_checkpoint(path) -> Model:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    header, params, meta = {}, {}, {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tensor "):
        key, _, value = lines[pos].partition("=")
        if key.startswith("meta."):
            meta[key[5:]] = value
        else:
            header[key] = value
        pos += 1
    while pos < len(lines):
        _, name, rows, cols = lines[pos].split()
        rows, cols = int(rows), int(cols)
        body = lines[pos + 1:pos + 1 + rows]
        params[name] = np.array([[float(x) for x in r.split()] for r in body],
                                dtype=np.float64).reshape(rows, cols)
        pos += 1 + rows
    cfg = EncoderConfig(header["kind"], int(header["layers"]), header["combination"],
                        float(header["message_dropout"]), header["activation"])
    return Model(cfg, params, header["similarity"], meta)
