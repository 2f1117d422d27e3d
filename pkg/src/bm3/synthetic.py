"""Synthetic datasets for smoke tests, demos and timing runs."""

from __future__ import annotations

import numpy as np

from .data import InteractionDataset


def planted_blocks(num_users=20, num_items=10, num_blocks=2, seed=0, feature_dims=(5, 3), noise=0.1):
    """Users and items split into blocks; every user interacts with every item of its block.

    Returns ``(dataset, features)`` where ``features`` holds a visual and a
    textual matrix whose rows encode the item's block plus Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    ublock = np.arange(num_users) * num_blocks // num_users
    iblock = np.arange(num_items) * num_blocks // num_items
    edges = np.array([(u, i) for u in range(num_users) for i in range(num_items) if ublock[u] == iblock[i]],
                     dtype=np.int64)
    ds = InteractionDataset([f"u{u}" for u in range(num_users)], [f"i{i}" for i in range(num_items)], edges)
    feats = {}
    for name, dim in zip(("visual", "textual"), feature_dims):
        centers = rng.normal(size=(num_blocks, dim))
        feats[name] = centers[iblock] + noise * rng.normal(size=(num_items, dim))
    return ds, feats


def random_bipartite(num_users, num_items, num_edges, seed=0, min_degree=3):
    """Random user-item graph where every user has at least ``min_degree`` distinct items."""
    if num_edges > num_users * num_items or num_edges < num_users * min_degree:
        raise ValueError("edge count incompatible with graph size")
    rng = np.random.default_rng(seed)
    picked = set()
    for u in range(num_users):
        for i in rng.choice(num_items, size=min_degree, replace=False):
            picked.add(u * num_items + int(i))
    while len(picked) < num_edges:
        need = num_edges - len(picked)
        picked.update(rng.integers(0, num_users * num_items, size=need).tolist())
    codes = np.array(sorted(picked), dtype=np.int64)
    edges = np.stack([codes // num_items, codes % num_items], axis=1)
    return InteractionDataset([f"u{u}" for u in range(num_users)], [f"i{i}" for i in range(num_items)], edges)
