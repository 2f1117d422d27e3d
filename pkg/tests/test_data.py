import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bm3.data import (
    DataError,
    InteractionDataset,
    InteractionRecord,
    build_dataset,
    kcore_filter,
    load_feature_matrix,
    load_interactions,
    read_fmat,
    sparsity,
    split_counts,
    split_per_user,
    write_feature_matrix,
)


def kcore_oracle(pairs, k):
    """Delete one deficient node at a time until none is left."""
    edges = set(pairs)
    while True:
        udeg, ideg = {}, {}
        for u, i in edges:
            udeg[u] = udeg.get(u, 0) + 1
            ideg[i] = ideg.get(i, 0) + 1
        bad = [("u", u) for u, c in udeg.items() if c < k] + [("i", i) for i, c in ideg.items() if c < k]
        if not bad:
            return edges
        kind, node = bad[0]
        edges = {(u, i) for u, i in edges if not ((kind == "u" and u == node) or (kind == "i" and i == node))}


def recs(pairs):
    return [InteractionRecord(u, i) for u, i in pairs]


def as_pairs(records):
    return {(r.user_key, r.item_key) for r in records}


def test_load_collapses_duplicates(tmp_path):
    f = tmp_path / "x.tsv"
    f.write_text("u1\ti1\t30\nu1\ti2\t10\nu1\ti1\t5\n")
    out = load_interactions(f)
    assert len(out) == 2
    assert out[0] == InteractionRecord("u1", "i1", 5)


def test_load_skips_comments_and_optional_timestamp(tmp_path):
    f = tmp_path / "x.tsv"
    f.write_text("# header\nu1\ti1\nu2\ti1\t7\n")
    out = load_interactions(f)
    assert [r.timestamp for r in out] == [None, 7]


def test_load_empty_file(tmp_path):
    f = tmp_path / "x.tsv"
    f.write_text("")
    with pytest.raises(DataError, match="empty result"):
        load_interactions(f)


def test_load_malformed_line_reports_line_number(tmp_path):
    f = tmp_path / "x.tsv"
    f.write_text("u1\ti1\nonlyone\n")
    with pytest.raises(DataError, match=":2:"):
        load_interactions(f)


def test_load_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_interactions(tmp_path / "nope.tsv")


def test_kcore_fixed_point_unchanged():
    pairs = [("u1", "i1"), ("u1", "i2"), ("u2", "i1"), ("u2", "i2")]
    assert as_pairs(kcore_filter(recs(pairs), 2)) == set(pairs)


def test_kcore_cascade_to_empty():
    pairs = [("u1", "i1"), ("u1", "i2"), ("u2", "i1")]
    assert kcore_filter(recs(pairs), 2) == []


def test_kcore_random_50_edges_on_10x10():
    rng = random.Random(7)
    pairs = set()
    while len(pairs) < 50:
        pairs.add((f"u{rng.randrange(10)}", f"i{rng.randrange(10)}"))
    assert as_pairs(kcore_filter(recs(sorted(pairs)), 3)) == kcore_oracle(pairs, 3)


def test_kcore_k1_is_noop():
    pairs = [("a", "x"), ("b", "y")]
    assert as_pairs(kcore_filter(recs(pairs), 1)) == set(pairs)


def test_kcore_rejects_k0():
    with pytest.raises(ValueError):
        kcore_filter([], 0)


edge_sets = st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5)), max_size=30)


@settings(max_examples=60, deadline=None)
@given(edge_sets, st.integers(1, 4))
def test_kcore_matches_oracle_and_is_idempotent(pairs, k):
    pairs = {(f"u{u}", f"i{i}") for u, i in pairs}
    once = kcore_filter(recs(sorted(pairs)), k)
    assert as_pairs(once) == kcore_oracle(pairs, k)
    assert kcore_filter(once, k) == once


def test_build_dataset_orders_by_timestamp_then_key():
    ds = build_dataset([InteractionRecord("b", "x", 2), InteractionRecord("a", "y", 2), InteractionRecord("c", "x", 1)])
    assert ds.user_keys == ["c", "a", "b"]
    assert ds.item_keys == ["x", "y"]
    assert ds.edges.tolist() == [[0, 0], [1, 1], [2, 0]]


def test_build_dataset_independent_of_file_order():
    records = [InteractionRecord(f"u{u}", f"i{i}", u * 10 + i) for u in range(4) for i in range(3)]
    a = build_dataset(records)
    b = build_dataset(list(reversed(records)))
    assert a.user_keys == b.user_keys and a.item_keys == b.item_keys
    assert np.array_equal(a.edges, b.edges)


@pytest.mark.parametrize("n,expected", [(10, (8, 1, 1)), (5, (3, 1, 1)), (3, (1, 1, 1)), (25, (21, 2, 2))])
def test_split_counts(n, expected):
    assert split_counts(n) == expected


def _dataset(per_user):
    edges = [(u, i) for u, n in enumerate(per_user) for i in range(n)]
    return InteractionDataset([f"u{u}" for u in range(len(per_user))], [f"i{i}" for i in range(max(per_user))],
                              np.array(edges))


def test_split_partitions_each_user():
    ds = _dataset([10, 5, 3, 17])
    sp = split_per_user(ds, seed=3)
    for u, n in enumerate([10, 5, 3, 17]):
        tr, va, te = sp.per_user_train[u], sp.per_user_valid[u], sp.per_user_test[u]
        assert (len(tr), len(va), len(te)) == split_counts(n)
        assert tr | va | te == set(range(n))
        assert not (tr & va or tr & te or va & te)
    total = np.vstack([sp.train_edges, sp.valid_edges, sp.test_edges])
    assert sorted(map(tuple, total.tolist())) == sorted(map(tuple, ds.edges.tolist()))


def test_split_deterministic():
    ds = _dataset([10, 5, 8])
    a, b = split_per_user(ds, 11), split_per_user(ds, 11)
    for x, y in [(a.train_edges, b.train_edges), (a.valid_edges, b.valid_edges), (a.test_edges, b.test_edges)]:
        assert np.array_equal(x, y)
    assert a.fingerprint() == b.fingerprint()


def test_split_rejects_small_users():
    with pytest.raises(DataError):
        split_per_user(_dataset([4, 2]), 0)


def test_sparsity_values():
    ds = InteractionDataset(["u"] * 19445, ["i"] * 7050, np.zeros((160792, 2), dtype=np.int64))
    assert round(sparsity(ds), 4) == 0.9988
    full = InteractionDataset(["a", "b"], ["x", "y"], np.array([[0, 0], [0, 1], [1, 0], [1, 1]]))
    assert sparsity(full) == 0.0
    one = InteractionDataset([f"u{k}" for k in range(10)], [f"i{k}" for k in range(10)], np.array([[0, 0]]))
    assert math.isclose(sparsity(one), 0.99)


def test_fmat_round_trip_bit_exact(tmp_path):
    data = np.random.default_rng(0).normal(size=(7, 13)).astype(np.float32)
    write_feature_matrix(tmp_path / "f.fmat", data)
    fm = load_feature_matrix(tmp_path / "f.fmat", 7, "textual")
    assert fm.rows == 7 and fm.dim == 13 and fm.modality == "textual"
    assert fm.data.tobytes() == data.tobytes()


def test_fmat_header_layout(tmp_path):
    write_feature_matrix(tmp_path / "f.fmat", np.array([[1.0, 2.0]], dtype=np.float32))
    raw = (tmp_path / "f.fmat").read_bytes()
    assert raw[:4] == b"FMAT"
    assert raw[4:8] == (1).to_bytes(4, "little")
    assert raw[8:16] == (1).to_bytes(8, "little")
    assert raw[16:24] == (2).to_bytes(8, "little")
    assert np.frombuffer(raw[24:], "<f4").tolist() == [1.0, 2.0]


def test_fmat_large_shape_header(tmp_path):
    # header-only check of the Baby visual shape without allocating 7050x4096 twice
    data = np.zeros((7050, 4096), dtype=np.float32)
    write_feature_matrix(tmp_path / "v.fmat", data)
    fm = load_feature_matrix(tmp_path / "v.fmat", 7050, "visual")
    assert (fm.modality, fm.rows, fm.dim) == ("visual", 7050, 4096)


def test_fmat_errors(tmp_path):
    write_feature_matrix(tmp_path / "f.fmat", np.zeros((10, 2), dtype=np.float32))
    with pytest.raises(DataError, match="row mismatch"):
        load_feature_matrix(tmp_path / "f.fmat", 12)
    bad = np.zeros((5, 9), dtype=np.float32)
    bad[3, 7] = np.nan
    write_feature_matrix(tmp_path / "n.fmat", bad)
    with pytest.raises(DataError, match=r"\(3, 7\)"):
        load_feature_matrix(tmp_path / "n.fmat", 5)
    (tmp_path / "m.fmat").write_bytes(b"XMAT" + bytes(20))
    with pytest.raises(DataError, match="bad magic"):
        read_fmat(tmp_path / "m.fmat")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_fmat_round_trip_property(rows, cols, seed):
    import tempfile
    from pathlib import Path

    data = np.random.default_rng(seed).normal(size=(rows, cols)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        write_feature_matrix(Path(d) / "f.fmat", data)
        assert read_fmat(Path(d) / "f.fmat").tobytes() == data.tobytes()
