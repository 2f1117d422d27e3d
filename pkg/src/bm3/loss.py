"""Multi-modal contrastive loss with stop-gradient targets.

Each component returns its value together with gradients on the online
(predictor-output) views. Target views only ever appear as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import neg_cosine


@dataclass
class LossConfig:
    lambda_reg: float = 0.1
    enabled_modalities: tuple[str, ...] | None = None
    enable_align: bool = True
    enable_mask: bool = True
    reg_on: str = "readout"  # or "ego" for the layer-0 embedding rows
    norm_eps: float = 1e-12

    def modalities(self, state):
        if self.enabled_modalities is None:
            return sorted(state.h_m)
        return [m for m in sorted(self.enabled_modalities) if m in state.h_m]


@dataclass
class LossBreakdown:
    rec: float = 0.0
    align: float = 0.0
    mask: float = 0.0
    reg: float = 0.0

    @property
    def total(self) -> float:
        return self.rec + self.align + self.mask + self.reg

    def as_dict(self):
        return {"rec": self.rec, "align": self.align, "mask": self.mask, "reg": self.reg, "total": self.total}


@dataclass
class LossGrads:
    online: dict[str, np.ndarray] = field(default_factory=dict)
    readout: dict[str, np.ndarray] = field(default_factory=dict)
    ego: dict[str, np.ndarray] = field(default_factory=dict)

    def add_online(self, key, rows, g, like):
        buf = self.online.get(key)
        if buf is None:
            buf = self.online[key] = np.zeros_like(like)
        np.add.at(buf, rows, g)


def _batch_arrays(batch):
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    if len(batch) == 0:
        raise ValueError("empty batch")
    return batch[:, 0], batch[:, 1]


def rec_loss(state, batch, eps=1e-12, grads: LossGrads | None = None):
    """Symmetrised graph reconstruction loss averaged over the batch pairs."""
    users, items = _batch_arrays(batch)
    grads = grads if grads is not None else LossGrads()
    n = len(users)
    on_u, on_i = state.online["user"], state.online["item"]
    c1, g1 = neg_cosine(on_u[users], state.target["item"][items], eps)
    c2, g2 = neg_cosine(on_i[items], state.target["user"][users], eps)
    grads.add_online("user", users, g1 / n, on_u)
    grads.add_online("item", items, g2 / n, on_i)
    return float(c1.mean() + c2.mean()), grads


def _require_modalities(mods):
    if not mods:
        raise ValueError("no enabled modality for a multi-modal loss")


def align_loss(state, batch_items, modalities=None, eps=1e-12, grads: LossGrads | None = None):
    """Sum over modalities of C(online modality view, item target view), batch mean."""
    items = np.asarray(batch_items, dtype=np.int64).ravel()
    mods = sorted(state.h_m) if modalities is None else list(modalities)
    _require_modalities(mods)
    grads = grads if grads is not None else LossGrads()
    n = len(items)
    total = 0.0
    tgt = state.target["item"][items]
    for m in mods:
        c, g = neg_cosine(state.online[m][items], tgt, eps)
        grads.add_online(m, items, g / n, state.online[m])
        total += float(c.mean())
    return total, grads


def mask_loss(state, batch_items, modalities=None, eps=1e-12, grads: LossGrads | None = None):
    """Sum over modalities of C(online modality view, its own dropout view), batch mean."""
    items = np.asarray(batch_items, dtype=np.int64).ravel()
    mods = sorted(state.h_m) if modalities is None else list(modalities)
    _require_modalities(mods)
    grads = grads if grads is not None else LossGrads()
    n = len(items)
    total = 0.0
    for m in mods:
        c, g = neg_cosine(state.online[m][items], state.target[m][items], eps)
        grads.add_online(m, items, g / n, state.online[m])
        total += float(c.mean())
    return total, grads


def reg_loss(state, batch, lambda_reg, on="readout", ego=None, grads: LossGrads | None = None):
    """``lambda * mean(|h_u|^2 + |h_i|^2)`` over the batch pairs.

    ``on="ego"`` penalises the layer-0 rows instead; ``ego`` must then be a
    ``(user_table, item_table)`` pair.
    """
    users, items = _batch_arrays(batch)
    grads = grads if grads is not None else LossGrads()
    if lambda_reg == 0:
        return 0.0, grads
    if on == "readout":
        hu, hi, sink = state.h_u, state.h_i, grads.readout
    elif on == "ego":
        hu, hi = ego
        sink = grads.ego
    else:
        raise ValueError(f"unknown regularisation target {on!r}")
    n = len(users)
    bu, bi = hu[users], hi[items]
    value = lambda_reg * float(np.sum(bu * bu) + np.sum(bi * bi)) / n
    gu = sink.setdefault("user", np.zeros_like(hu))
    gi = sink.setdefault("item", np.zeros_like(hi))
    np.add.at(gu, users, 2.0 * lambda_reg * bu / n)
    np.add.at(gi, items, 2.0 * lambda_reg * bi / n)
    return value, grads


def total_loss(state, batch, config: LossConfig, ego=None):
    """Full loss: reconstruction + alignment + masked + regularisation."""
    users, items = _batch_arrays(batch)
    grads = LossGrads()
    out = LossBreakdown()
    eps = config.norm_eps
    out.rec, _ = rec_loss(state, batch, eps, grads)
    mods = config.modalities(state)
    if config.enable_align and mods:
        out.align, _ = align_loss(state, items, mods, eps, grads)
    if config.enable_mask and mods:
        out.mask, _ = mask_loss(state, items, mods, eps, grads)
    out.reg, _ = reg_loss(state, batch, config.lambda_reg, config.reg_on, ego, grads)
    return out, grads
