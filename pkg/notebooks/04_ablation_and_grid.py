"""
Ablation variants and a small grid
==================================

Same seed for every run. "w/o mm" trains no projection and so matches
"w/o v&t" bit for bit.
"""

# %%
from bm3.data import split_per_user
from bm3.synthetic import planted_blocks
from bm3.trainer import TrainConfig, grid_table, report_table, run_ablation, run_grid

ds, feats = planted_blocks(num_users=100, num_items=200, num_blocks=10, seed=2)
split = split_per_user(ds, 2)
base = TrainConfig(d=32, lr=0.005, max_epochs=60, patience=10, cutoffs=(5, 20), seed=3)

# %%
reports = run_ablation(split, feats, base)
print(report_table(list(reports.items()), base.cutoffs))
print("w/o mm == w/o v&t:", reports["BM3 w/o mm"].test_metrics == reports["BM3 w/o v&t"].test_metrics)

# %%
best, results = run_grid(split, feats, base, layers=(1, 2), dropouts=(0.3, 0.5), lambdas=(0.1, 0.01))
print(grid_table(results, base.cutoffs))
print("best cell", best)
