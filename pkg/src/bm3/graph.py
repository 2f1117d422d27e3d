"""Symmetric-normalized user-item adjacency and propagation."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def build_adjacency(train_edges, num_users: int, num_items: int, dtype=np.float64) -> sp.csr_matrix:
    """``D^-1/2 A D^-1/2`` over users ``[0, U)`` followed by items ``[U, U+I)``.

    Degrees come from ``train_edges`` only. Isolated nodes keep empty rows and
    no self-loops are added.
    """
    edges = np.asarray(train_edges, dtype=np.int64).reshape(-1, 2)
    users, items = edges[:, 0], edges[:, 1]
    if len(edges) and (users.min() < 0 or users.max() >= num_users or items.min() < 0 or items.max() >= num_items):
        raise IndexError("edge index out of range")
    n = num_users + num_items
    rows = np.concatenate([users, items + num_users])
    cols = np.concatenate([items + num_users, users])
    a = sp.csr_matrix((np.ones(len(rows), dtype=dtype), (rows, cols)), shape=(n, n))
    # collapse duplicate edges to binary
    a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    d = sp.diags(inv_sqrt)
    adj = (d @ a @ d).tocsr()
    adj.sort_indices()
    return adj.astype(dtype)


def propagate(adj: sp.csr_matrix, h: np.ndarray) -> np.ndarray:
    if h.shape[0] != adj.shape[0]:
        raise ValueError(f"row count {h.shape[0]} does not match {adj.shape[0]} nodes")
    return np.asarray(adj @ h)
