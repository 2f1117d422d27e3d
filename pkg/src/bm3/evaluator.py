"""All-ranking top-K evaluation with Recall@K and NDCG@K."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import forward, score_users


@dataclass
class EvalConfig:
    cutoffs: tuple[int, ...] = (10, 20)
    phase: str = "valid"

    def __post_init__(self):
        self.cutoffs = tuple(int(k) for k in self.cutoffs)
        if not self.cutoffs or any(k <= 0 for k in self.cutoffs) or list(self.cutoffs) != sorted(self.cutoffs):
            raise ValueError("cutoffs must be positive and sorted ascending")
        if self.phase not in ("valid", "test"):
            raise ValueError(f"unknown phase {self.phase!r}")


@dataclass
class MetricsReport:
    recall: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    num_evaluated_users: int = 0

    def to_json(self, epoch=None, phase=None) -> str:
        obj = {
            "epoch": epoch,
            "phase": phase,
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "users": self.num_evaluated_users,
        }
        return json.dumps(obj, sort_keys=False)

    def as_dict(self):
        return {
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "users": self.num_evaluated_users,
        }


def candidate_mask(split, user: int, phase: str, num_items=None) -> np.ndarray:
    """Boolean vector, True where the item is a ranking candidate for ``user``."""
    n = split.num_items if num_items is None else num_items
    mask = np.ones(n, dtype=bool)
    seen = list(split.per_user_train.get(user, ()))
    if phase == "test":
        seen += list(split.per_user_valid.get(user, ()))
    elif phase != "valid":
        raise ValueError(f"unknown phase {phase!r}")
    mask[seen] = False
    return mask


def targets_for(split, user, phase):
    src = split.per_user_valid if phase == "valid" else split.per_user_test
    return src.get(user, set())


def recall_at_k(ranked, targets, k: int) -> float:
    if not targets:
        raise ValueError("recall is undefined for an empty target set")
    hits = len(set(list(ranked)[:k]) & set(targets))
    return hits / len(targets)


def ndcg_at_k(ranked, targets, k: int) -> float:
    if not targets:
        raise ValueError("NDCG is undefined for an empty target set")
    targets = set(targets)
    dcg = sum(1.0 / np.log2(r + 2) for r, item in enumerate(list(ranked)[:k]) if item in targets)
    idcg = sum(1.0 / np.log2(r + 2) for r in range(min(k, len(targets))))
    return float(dcg / idcg)


def rank_items(scores: np.ndarray, mask: np.ndarray, k: int) -> np.ndarray:
    """Top-``k`` candidate items by descending score, ties to the lower index."""
    cand = np.flatnonzero(mask)
    order = np.argsort(-scores[cand], kind="stable")
    return cand[order[:k]]


def evaluate_scores(score_fn, split, config: EvalConfig, users=None, chunk=1024) -> MetricsReport:
    """Rank with ``score_fn(user_array) -> (n, num_items)`` and average metrics."""
    kmax = max(config.cutoffs)
    if users is None:
        users = [u for u in range(split.num_users) if targets_for(split, u, config.phase)]
    users = np.asarray(users, dtype=np.int64)
    rec_sum = {k: 0.0 for k in config.cutoffs}
    ndcg_sum = {k: 0.0 for k in config.cutoffs}
    count = 0
    for start in range(0, len(users), chunk):
        block = users[start:start + chunk]
        scores = score_fn(block)
        for row, u in enumerate(block.tolist()):
            targets = targets_for(split, u, config.phase)
            if not targets:
                continue
            ranked = rank_items(scores[row], candidate_mask(split, u, config.phase), kmax)
            for k in config.cutoffs:
                rec_sum[k] += recall_at_k(ranked, targets, k)
                ndcg_sum[k] += ndcg_at_k(ranked, targets, k)
            count += 1
    if count == 0:
        return MetricsReport({k: 0.0 for k in config.cutoffs}, {k: 0.0 for k in config.cutoffs}, 0)
    return MetricsReport(
        {k: rec_sum[k] / count for k in config.cutoffs},
        {k: ndcg_sum[k] / count for k in config.cutoffs},
        count,
    )


def evaluate(params, adj, split, features, L, config: EvalConfig) -> MetricsReport:
    """One inference forward pass (no dropout), then all-ranking metrics."""
    state = forward(params, adj, features, L, 0.0)
    return evaluate_scores(lambda users: score_users(state, users), split, config)
