"""Interaction ingestion, k-core filtering, per-user splitting and FMAT feature files."""

from __future__ import annotations

import hashlib
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1
_FMAT_HEADER = struct.Struct("<4sIQQ")


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class InteractionRecord:
    user_key: str
    item_key: str
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise DataError("user_key and item_key must be nonempty")


@dataclass
class InteractionDataset:
    """Integer-indexed positive interactions.

    ``user_keys[u]`` is the original key of user index ``u`` (same for items);
    ``edges`` is an ``(n, 2)`` int64 array of ``(user, item)`` pairs.
    """

    user_keys: list[str]
    item_keys: list[str]
    edges: np.ndarray

    @property
    def num_users(self) -> int:
        return len(self.user_keys)

    @property
    def num_items(self) -> int:
        return len(self.item_keys)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def user_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.user_keys)}

    def item_index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.item_keys)}


@dataclass
class SplitDataset:
    num_users: int
    num_items: int
    train_edges: np.ndarray
    valid_edges: np.ndarray
    test_edges: np.ndarray
    per_user_train: dict[int, set[int]] = field(default_factory=dict)
    per_user_valid: dict[int, set[int]] = field(default_factory=dict)
    per_user_test: dict[int, set[int]] = field(default_factory=dict)

    @classmethod
    def from_edges(cls, num_users, num_items, train, valid, test):
        train, valid, test = (np.asarray(e, dtype=np.int64).reshape(-1, 2) for e in (train, valid, test))
        return cls(
            num_users=num_users,
            num_items=num_items,
            train_edges=train,
            valid_edges=valid,
            test_edges=test,
            per_user_train=_group(train),
            per_user_valid=_group(valid),
            per_user_test=_group(test),
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<QQ", self.num_users, self.num_items))
        for part in (self.train_edges, self.valid_edges, self.test_edges):
            h.update(np.ascontiguousarray(part, dtype="<i8").tobytes())
            h.update(b"|")
        return h.hexdigest()[:16]


def _group(edges: np.ndarray) -> dict[int, set[int]]:
    out: dict[int, set[int]] = {}
    for u, i in edges.tolist():
        out.setdefault(u, set()).add(i)
    return out


@dataclass
class FeatureMatrix:
    modality: str
    data: np.ndarray

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def load_interactions(path, delimiter: str = "\t") -> list[InteractionRecord]:
    """Read ``user<TAB>item[<TAB>timestamp]`` lines.

    Duplicate ``(user, item)`` pairs keep the position of their first
    occurrence and the earliest timestamp seen.
    """
    path = Path(path)
    records: dict[tuple[str, str], InteractionRecord] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split(delimiter)
            if len(cols) < 2 or not cols[0] or not cols[1]:
                raise DataError(f"{path}:{lineno}: malformed line, expected user and item columns")
            ts = None
            if len(cols) >= 3 and cols[2] != "":
                try:
                    ts = int(float(cols[2]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: malformed timestamp {cols[2]!r}") from None
            key = (cols[0], cols[1])
            prev = records.get(key)
            if prev is None:
                records[key] = InteractionRecord(cols[0], cols[1], ts)
            elif ts is not None and (prev.timestamp is None or ts < prev.timestamp):
                records[key] = InteractionRecord(cols[0], cols[1], ts)
    if not records:
        raise DataError(f"{path}: empty result, no interaction records")
    return list(records.values())


def kcore_filter(records: list[InteractionRecord], k: int) -> list[InteractionRecord]:
    """Maximal subset where every user and every item has at least ``k`` records.

    Each round removes all currently deficient users and items at once until
    nothing changes. Input order is preserved.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    current = list(records)
    while True:
        users = Counter(r.user_key for r in current)
        items = Counter(r.item_key for r in current)
        bad_u = {u for u, c in users.items() if c < k}
        bad_i = {i for i, c in items.items() if c < k}
        if not bad_u and not bad_i:
            return current
        current = [r for r in current if r.user_key not in bad_u and r.item_key not in bad_i]


def build_dataset(records: list[InteractionRecord]) -> InteractionDataset:
    """Assign indices by first appearance in timestamp-then-key order."""
    if not records:
        raise DataError("no records left to index")
    ordered = sorted(
        records,
        key=lambda r: (r.timestamp is not None, r.timestamp or 0, r.user_key, r.item_key),
    )
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    edges = []
    seen = set()
    for r in ordered:
        u = uidx.setdefault(r.user_key, len(uidx))
        i = iidx.setdefault(r.item_key, len(iidx))
        if (u, i) not in seen:
            seen.add((u, i))
            edges.append((u, i))
    return InteractionDataset(list(uidx), list(iidx), np.array(edges, dtype=np.int64).reshape(-1, 2))


def split_counts(n: int) -> tuple[int, int, int]:
    """(train, valid, test) sizes for a user with ``n`` interactions."""
    if n < 3:
        raise DataError(f"user has {n} interactions; at least 3 are needed for an 8:1:1 split")
    held = max(1, math.floor(0.1 * n))
    return n - 2 * held, held, held


def split_per_user(dataset: InteractionDataset, seed: int) -> SplitDataset:
    rng = np.random.default_rng(seed)
    by_user: dict[int, list[int]] = {}
    for u, i in dataset.edges.tolist():
        by_user.setdefault(u, []).append(i)
    train, valid, test = [], [], []
    for u in range(dataset.num_users):
        items = np.array(sorted(by_user.get(u, [])), dtype=np.int64)
        try:
            n_train, n_valid, _ = split_counts(len(items))
        except DataError as exc:
            raise DataError(f"user {dataset.user_keys[u]!r}: {exc}") from None
        items = items[rng.permutation(len(items))]
        train += [(u, i) for i in items[:n_train]]
        valid += [(u, i) for i in items[n_train:n_train + n_valid]]
        test += [(u, i) for i in items[n_train + n_valid:]]
    return SplitDataset.from_edges(dataset.num_users, dataset.num_items, train, valid, test)


def sparsity(dataset: InteractionDataset) -> float:
    return 1.0 - dataset.num_edges / (dataset.num_users * dataset.num_items)


def write_feature_matrix(path, data: np.ndarray) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_FMAT_HEADER.pack(FMAT_MAGIC, FMAT_VERSION, data.shape[0], data.shape[1]))
        fh.write(data.tobytes())


def read_fmat(path) -> np.ndarray:
    """Raw FMAT payload as a float32 array, without row or finiteness checks."""
    blob = Path(path).read_bytes()
    if len(blob) < _FMAT_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, rows, cols = _FMAT_HEADER.unpack_from(blob)
    if magic != FMAT_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FMAT_VERSION:
        raise DataError(f"{path}: unsupported FMAT version {version}")
    expected = _FMAT_HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise DataError(f"{path}: payload size {len(blob)} does not match header ({expected} bytes)")
    return np.frombuffer(blob, dtype="<f4", offset=_FMAT_HEADER.size).reshape(rows, cols).copy()


def load_feature_matrix(path, expected_rows: int, modality: str = "visual") -> FeatureMatrix:
    data = read_fmat(path)
    if data.shape[0] != expected_rows:
        raise DataError(f"{path}: row mismatch, header has {data.shape[0]} rows but {expected_rows} items expected")
    bad = np.argwhere(~np.isfinite(data))
    if len(bad):
        r, c = bad[0]
        raise DataError(f"{path}: non-finite value at ({r}, {c})")
    return FeatureMatrix(modality, data)


def write_index_map(path, keys: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, key in enumerate(keys):
            fh.write(f"{idx}\t{key}\n")


def read_index_map(path) -> list[str]:
    keys = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            idx, _, key = line.rstrip("\n").partition("\t")
            if int(idx) != lineno - 1:
                raise DataError(f"{path}:{lineno}: index maps must be dense and ordered")
            keys.append(key)
    return keys


def write_edges(path, edges: np.ndarray) -> None:
    np.savetxt(path, np.asarray(edges, dtype=np.int64).reshape(-1, 2), fmt="%d", delimiter="\t")


def read_edges(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2).reshape(-1, 2)
