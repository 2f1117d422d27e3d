"""
Training on planted blocks
==========================

100 users and 200 items in ten blocks. Each user interacts with every item of
its own block, so a working model must put the held-out in-block items on top
of 180-odd candidates. A random ranking scores about 0.1 on R@20.
"""

# %%
from bm3.data import split_per_user
from bm3.synthetic import planted_blocks
from bm3.trainer import TrainConfig, train

ds, feats = planted_blocks(num_users=100, num_items=200, num_blocks=10, seed=0)
split = split_per_user(ds, 0)

log = []
report = train(split, feats, TrainConfig(max_epochs=300, patience=30, lr=0.005, seed=1), on_epoch=log.append)

# %%
for rec in log[:5] + log[5::10]:
    loss = rec["loss"]
    print(f"epoch {rec['epoch']:3d}  rec {loss['rec']:+.3f}  align {loss['align']:+.3f}  "
          f"mask {loss['mask']:+.3f}  valid R@20 {rec['valid']['recall']['20']:.2f}")

# %%
s = report.summary()
print("stopped after", s["epochs"], "epochs, best epoch", s["best_epoch"])
print("test", s["test"])
