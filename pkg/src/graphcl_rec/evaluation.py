"""Full-ranking top-K evaluation (recall@K, ndcg@K) over all non-training items."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import SplitDataset


@dataclass(frozen=True)
class MetricReport:
    k: int
    recall: float
    ndcg: float
    users_evaluated: int

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    def csv_row(self, epoch: int) -> str:
        return f"{epoch},{self.recall!r},{self.ndcg!r}"


def score_matrix(user_final: np.ndarray, item_final: np.ndarray, similarity: str = "dot") -> np.ndarray:
    if similarity == "cosine":
        user_final = _unit_rows(user_final)
        item_final = _unit_rows(item_final)
    elif similarity != "dot":
        raise ValueError(f"unknown similarity {similarity!r}")
    return user_final @ item_final.T


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(n > 0, x / np.where(n > 0, n, 1.0), 0.0)


def full_rank_scores(scores: np.ndarray, exclude=()) -> np.ndarray:
    """Candidate items by descending score, ties by ascending index; ``exclude`` is dropped."""
    scores = np.asarray(scores, dtype=np.float64)
    cand = np.ones(len(scores), dtype=bool)
    cand[np.asarray(exclude, dtype=np.int64)] = False
    idx = np.flatnonzero(cand)
    return idx[np.lexsort((idx, -scores[idx]))]


def recall_at_k(ranking, test_items, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    test = set(int(t) for t in test_items)
    if not test:
        raise ValueError("recall is undefined for an empty test set")
    hits = sum(1 for i in ranking[:k] if int(i) in test)
    return hits / len(test)


def ndcg_at_k(ranking, test_items, k: int) -> float:
    """Binary-relevance NDCG; the ideal DCG is truncated at ``min(k, |test|)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    test = set(int(t) for t in test_items)
    if not test:
        raise ValueError("ndcg is undefined for an empty test set")
    dcg = math.fsum(1.0 / math.log2(r + 2) for r, i in enumerate(ranking[:k]) if int(i) in test)
    idcg = math.fsum(1.0 / math.log2(r + 2) for r in range(min(k, len(test))))
    return dcg / idcg


def evaluate(user_final: np.ndarray, item_final: np.ndarray, split: SplitDataset,
             k: int = 20, similarity: str = "dot", chunk: int = 1024) -> MetricReport:
    """Mean recall@k / ndcg@k over users that have test items."""
    train_items = split.train.items_by_user()
    test_items = split.test.items_by_user()
    users = [u for u in range(split.train.num_users) if len(test_items[u])]
    if not users:
        raise ValueError("no users with test interactions")
    recalls, ndcgs = [], []
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = score_matrix(user_final[block], item_final, similarity)
        for row, u in zip(scores, block):
            ranking = full_rank_scores(row, train_items[u])
            recalls.append(recall_at_k(ranking, test_items[u], k))
            ndcgs.append(ndcg_at_k(ranking, test_items[u], k))
    n = len(users)
    return MetricReport(k, math.fsum(recalls) / n, math.fsum(ndcgs) / n, n)
