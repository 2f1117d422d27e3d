"""
From raw interactions to a split dataset
========================================

Writes a small raw TSV, runs k-core filtering, indexes it and makes the
per-user 8:1:1 split. Run with ``python3 notebooks/01_data_pipeline.py``.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from bm3.data import build_dataset, kcore_filter, load_interactions, sparsity, split_per_user

rng = np.random.default_rng(0)
tmp = Path(tempfile.mkdtemp())
raw = tmp / "raw.tsv"
rows = [f"user{rng.integers(60)}\titem{rng.integers(40)}\t{t}" for t in range(900)]
raw.write_text("# user\titem\ttimestamp\n" + "\n".join(rows) + "\n")

# %%
# duplicates collapse to the earliest timestamp
records = load_interactions(raw)
print("raw records", len(rows), "unique pairs", len(records))

# %%
# k-core: every surviving user and item keeps at least k interactions
for k in (1, 5, 10, 15):
    kept = kcore_filter(records, k)
    print(f"k={k:2d}  interactions={len(kept)}")

# %%
ds = build_dataset(kcore_filter(records, 5))
print(ds.num_users, "users", ds.num_items, "items", f"sparsity {100 * sparsity(ds):.2f}%")

split = split_per_user(ds, seed=2023)
print("train/valid/test", len(split.train_edges), len(split.valid_edges), len(split.test_edges))
print("fingerprint", split.fingerprint())
