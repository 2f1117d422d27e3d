"""
Checking the hand-written backward pass
=======================================

Central finite differences against the analytic gradient of the full loss on
a 2 user, 4 item graph. Target views are pinned, so the finite differences see
the same constants the backward pass treats as stop-gradient.
"""

# %%
import numpy as np

from bm3.graph import build_adjacency
from bm3.loss import LossConfig, total_loss
from bm3.model import ModelParams, backward, forward
from bm3.nn import finite_difference_check

rng = np.random.default_rng(1)
edges = np.array([[0, 0], [0, 1], [0, 2], [1, 2], [1, 3]])
adj = build_adjacency(edges, 2, 4)
feats = {"visual": rng.normal(size=(4, 5)), "textual": rng.normal(size=(4, 3))}
cfg = LossConfig(lambda_reg=0.1, norm_eps=0.0)

# %%
for L in (1, 2):
    params = ModelParams.init(2, 4, 8, {"visual": 5, "textual": 3}, seed=L)
    state = forward(params, adj, feats, L, 0.3, np.random.default_rng(7))
    pinned = state.target

    def loss(targets=pinned):
        st = forward(params, adj, feats, L, 0.3, targets=targets)
        return total_loss(st, edges, cfg, ego=(params.user_emb.value, params.item_emb.value))[0].total

    _, grads = total_loss(state, edges, cfg, ego=(params.user_emb.value, params.item_emb.value))
    backward(params, state, adj, feats, grads.online, grads.readout, grads.ego)
    print(f"L={L}  max relative error {finite_difference_check(loss, params.params()):.2e}")

# %%
# Letting the targets follow the parameters breaks the match, which is the
# point of the stop-gradient.
def live_loss():
    st = forward(params, adj, feats, L, 0.3, np.random.default_rng(7))
    return total_loss(st, edges, cfg, ego=(params.user_emb.value, params.item_emb.value))[0].total


print("without stop-gradient", f"{finite_difference_check(live_loss, params.params()):.2e}")
