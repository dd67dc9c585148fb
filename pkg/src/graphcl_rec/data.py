"""Implicit-feedback interaction data: loading, k-core filtering, per-user splits."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InteractionDataset:
    """Binary user-item interactions over dense 0-based indices.

    ``pairs`` is an ``(n, 2)`` int64 array sorted by (user, item).  The vocab
    lists map dense index -> raw id; a train/test pair of datasets shares them.
    """

    num_users: int
    num_items: int
    pairs: np.ndarray
    user_vocab: tuple = ()
    item_vocab: tuple = ()
    _user_index: dict = field(default=None, repr=False, compare=False)
    _item_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(pairs):
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= self.num_users:
                raise DataError("user index out of range")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= self.num_items:
                raise DataError("item index out of range")
        pairs = np.unique(pairs, axis=0)
        object.__setattr__(self, "pairs", pairs)
        if not self.user_vocab:
            object.__setattr__(self, "user_vocab", tuple(str(u) for u in range(self.num_users)))
        if not self.item_vocab:
            object.__setattr__(self, "item_vocab", tuple(str(i) for i in range(self.num_items)))
        object.__setattr__(self, "_user_index", {r: k for k, r in enumerate(self.user_vocab)})
        object.__setattr__(self, "_item_index", {r: k for k, r in enumerate(self.item_vocab)})

    def __len__(self):
        return len(self.pairs)

    @property
    def users(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def items(self) -> np.ndarray:
        return self.pairs[:, 1]

    def encode_user(self, raw) -> int:
        return self._user_index[str(raw)]

    def decode_user(self, index: int) -> str:
        return self.user_vocab[index]

    def encode_item(self, raw) -> int:
        return self._item_index[str(raw)]

    def decode_item(self, index: int) -> str:
        return self.item_vocab[index]

    def user_degrees(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def items_by_user(self) -> list[np.ndarray]:
        """Sorted item indices per user."""
        bounds = np.searchsorted(self.users, np.arange(self.num_users + 1))
        return [self.items[bounds[u]:bounds[u + 1]] for u in range(self.num_users)]

    def with_pairs(self, pairs) -> "InteractionDataset":
        """Same vocabularies, different pair set."""
        return InteractionDataset(self.num_users, self.num_items, pairs, self.user_vocab, self.item_vocab)


@dataclass(frozen=True)
class SplitDataset:
    train: InteractionDataset
    test: InteractionDataset
    split_seed: int


def _parse(path: Path) -> list[tuple[str, str]]:
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = s.split()
            if len(fields) < 2:
                raise DataError(f"{path}:{lineno}: expected 'user item', got {s!r}")
            raw.append((fields[0], fields[1]))
    return raw


def load_interactions(path, min_user_interactions: int = 1,
                      min_item_interactions: int | None = None) -> InteractionDataset:
    """Read a whitespace-separated ``user item [extra ...]`` file.

    Users (and items) under the thresholds are removed repeatedly until every
    remaining one meets them.  ``min_item_interactions=None`` uses the user
    threshold (k-core); pass 0 to filter users only.
    """
    path = Path(path)
    raw = _parse(path)
    if min_item_interactions is None:
        min_item_interactions = min_user_interactions

    # first-appearance order keeps indices stable across platforms
    users = list(dict.fromkeys(u for u, _ in raw))
    items = list(dict.fromkeys(i for _, i in raw))
    uidx = {u: k for k, u in enumerate(users)}
    iidx = {i: k for k, i in enumerate(items)}
    pairs = np.unique(np.array([(uidx[u], iidx[i]) for u, i in raw], dtype=np.int64).reshape(-1, 2), axis=0)

    while len(pairs):
        udeg = np.bincount(pairs[:, 0], minlength=len(users))
        ideg = np.bincount(pairs[:, 1], minlength=len(items))
        keep = (udeg[pairs[:, 0]] >= min_user_interactions) & (ideg[pairs[:, 1]] >= min_item_interactions)
        if keep.all():
            break
        pairs = pairs[keep]
    if not len(pairs):
        raise DataError(f"{path}: no interactions left after filtering")

    kept_u = np.unique(pairs[:, 0])
    kept_i = np.unique(pairs[:, 1])
    umap = np.full(len(users), -1)
    umap[kept_u] = np.arange(len(kept_u))
    imap = np.full(len(items), -1)
    imap[kept_i] = np.arange(len(kept_i))
    dense = np.column_stack([umap[pairs[:, 0]], imap[pairs[:, 1]]])
    return InteractionDataset(len(kept_u), len(kept_i), dense,
                              tuple(users[k] for k in kept_u), tuple(items[k] for k in kept_i))


def write_interactions(path, ds: InteractionDataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in ds.pairs:
            fh.write(f"{ds.user_vocab[u]}\t{ds.item_vocab[i]}\n")


def split_train_test(ds: InteractionDataset, train_fraction: float = 0.8, seed: int = 0) -> SplitDataset:
    """Per-user random split; each user keeps ``max(1, round(fraction * degree))`` train pairs."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    lonely = 0
    for u, items in enumerate(ds.items_by_user()):
        if not len(items):
            continue
        order = rng.permutation(len(items))
        n_train = max(1, int(np.floor(train_fraction * len(items) + 0.5)))
        if n_train >= len(items):
            lonely += 1
        for pos, k in enumerate(order):
            (train if pos < n_train else test).append((u, items[k]))
    if lonely:
        log.warning("%d users have no test interactions after the split", lonely)
    return SplitDataset(ds.with_pairs(np.array(train, dtype=np.int64).reshape(-1, 2)),
                        ds.with_pairs(np.array(test, dtype=np.int64).reshape(-1, 2)), seed)


@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    interactions: int
    density: float

    def to_json(self) -> str:
        return json.dumps({"users": self.users, "items": self.items,
                           "interactions": self.interactions, "density": self.density})

    def to_table(self) -> str:
        rows = [("users", str(self.users)), ("items", str(self.items)),
                ("interactions", str(self.interactions)), ("density", f"{self.density:.5f}")]
        w = max(len(k) for k, _ in rows)
        v = max(len(x) for _, x in rows)
        return "\n".join(f"{k:<{w}}  {x:>{v}}" for k, x in rows)


def dataset_stats(ds: InteractionDataset) -> DatasetStats:
    n = len(ds)
    return DatasetStats(ds.num_users, ds.num_items, n, n / (ds.num_users * ds.num_items))


def block_dataset(num_users: int = 300, num_items: int = 400, num_blocks: int = 20,
                  per_user: int = 30, affinity: float = 30.0, seed: int = 0) -> InteractionDataset:
    """Synthetic block-structured implicit feedback.

    Users and items are assigned to latent blocks round-robin.  Each user draws
    ``per_user`` distinct items with probability proportional to ``affinity``
    for items of its own block and 1 otherwise, times a mild popularity factor.
    """
    rng = np.random.default_rng(seed)
    user_block = rng.permutation(np.arange(num_users) % num_blocks)
    item_block = rng.permutation(np.arange(num_items) % num_blocks)
    popularity = rng.pareto(3.0, num_items) + 1.0
    pairs = []
    for u in range(num_users):
        w = np.where(item_block == user_block[u], affinity, 1.0) * popularity
        chosen = rng.choice(num_items, size=per_user, replace=False, p=w / w.sum())
        pairs.extend((u, i) for i in chosen)
    return InteractionDataset(num_users, num_items, np.array(pairs, dtype=np.int64))
