"""The BM3 network: LightGCN-style ID propagation with an item residual,
per-modality projections, a shared predictor and dropout target views."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FeatureMatrix, read_fmat, write_feature_matrix
from .graph import propagate
from .nn import LinearLayer, ParamTensor, make_dropout_mask, xavier_init

SHORT_TAGS = {"visual": "v", "textual": "t"}


def short_tag(modality: str) -> str:
    return SHORT_TAGS.get(modality, modality)


def _seed_for(seed: int, name: str) -> np.random.SeedSequence:
    # per-parameter streams so that adding a modality never shifts the other inits
    return np.random.SeedSequence([seed, zlib.crc32(name.encode())])


@dataclass
class ModelParams:
    user_emb: ParamTensor
    item_emb: ParamTensor
    predictor: LinearLayer
    proj: dict[str, LinearLayer] = field(default_factory=dict)

    @classmethod
    def init(cls, num_users, num_items, d, feature_dims=None, seed=0, dtype=np.float64):
        """Xavier-initialised parameters; ``feature_dims`` maps modality -> input dim."""
        user = ParamTensor("user_emb", xavier_init(num_users, d, _seed_for(seed, "user_emb")).astype(dtype))
        item = ParamTensor("item_emb", xavier_init(num_items, d, _seed_for(seed, "item_emb")).astype(dtype))
        pred = LinearLayer.create("pred", d, d, _seed_for(seed, "pred_W"), dtype)
        proj = {}
        for m, dm in sorted((feature_dims or {}).items()):
            name = f"proj_{short_tag(m)}"
            proj[m] = LinearLayer.create(name, dm, d, _seed_for(seed, f"{name}_W"), dtype)
        return cls(user, item, pred, proj)

    @property
    def num_users(self):
        return self.user_emb.value.shape[0]

    @property
    def num_items(self):
        return self.item_emb.value.shape[0]

    @property
    def dim(self):
        return self.user_emb.value.shape[1]

    def modalities(self):
        return sorted(self.proj)

    def params(self):
        out = [self.user_emb, self.item_emb, *self.predictor.params()]
        for m in self.modalities():
            out += self.proj[m].params()
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def copy_values(self):
        return {p.name: p.value.copy() for p in self.params()}

    def load_values(self, values):
        for p in self.params():
            p.value[...] = values[p.name]


@dataclass
class ForwardState:
    """Everything the losses and the backward pass need from one forward call.

    ``online`` and ``target`` are keyed by ``"user"``, ``"item"`` and each
    modality name. Target arrays are constants: backward never reads them.
    """

    layer_embs: list[np.ndarray]
    h_u: np.ndarray
    h_i: np.ndarray
    h_m: dict[str, np.ndarray]
    online: dict[str, np.ndarray]
    target: dict[str, np.ndarray]
    num_layers: int

    def readout(self, key):
        if key == "user":
            return self.h_u
        if key == "item":
            return self.h_i
        return self.h_m[key]


def _features_array(features, m):
    f = features[m]
    return f.data if isinstance(f, FeatureMatrix) else f


def forward(params: ModelParams, adj, features, L: int, p: float, rng=None, *,
            modality_rng=None, targets=None, row_dropout=False) -> ForwardState:
    """Run the network once.

    ``targets`` reuses previously generated target views instead of drawing
    fresh dropout masks. ``modality_rng`` draws the modality masks from a
    separate stream (defaults to ``rng``).
    """
    if L < 1:
        raise ValueError("need at least one propagation layer")
    U = params.num_users
    h0 = np.vstack([params.user_emb.value, params.item_emb.value])
    layers = [h0]
    for _ in range(L):
        layers.append(propagate(adj, layers[-1]))
    mean = sum(layers) / (L + 1)
    h_u = mean[:U]
    h_i = mean[U:] + params.item_emb.value
    h_m = {m: params.proj[m].forward(_features_array(features, m)) for m in params.modalities()}

    readouts = {"user": h_u, "item": h_i, **h_m}
    online = {k: params.predictor.forward(v) for k, v in readouts.items()}
    for k, v in online.items():
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values in online view {k!r}")

    if targets is None:
        if p > 0 and rng is None:
            raise ValueError("an rng is required when p > 0")
        mrng = modality_rng if modality_rng is not None else rng
        targets = {}
        for k, v in readouts.items():
            stream = rng if k in ("user", "item") else mrng
            targets[k] = make_dropout_mask(v.shape, p, stream, rows=row_dropout).apply(v)
    return ForwardState(layers, h_u, h_i, h_m, online, targets, L)


def backward(params: ModelParams, state: ForwardState, adj, features, online_grads, readout_grads=None,
             ego_grads=None):
    """Accumulate parameter gradients from upstream gradients.

    ``online_grads`` maps view keys to dL/d(predictor output); ``readout_grads``
    adds dL/d(readout) for ``"user"``/``"item"``; ``ego_grads`` adds gradients
    directly on the layer-0 tables.
    """
    readout_grads = readout_grads or {}
    g_read = {}
    for k, g in online_grads.items():
        g_read[k] = params.predictor.backward(state.readout(k), g)
    for k, g in readout_grads.items():
        g_read[k] = g_read[k] + g if k in g_read else g

    for m in params.modalities():
        g = g_read.get(m)
        if g is None:
            continue
        rows = np.flatnonzero(np.any(g != 0, axis=1))
        x = _features_array(features, m)[rows].astype(g.dtype, copy=False)
        params.proj[m].backward(x, g[rows])

    U, I, d = params.num_users, params.num_items, params.dim
    g_u = g_read.get("user", np.zeros((U, d), dtype=params.user_emb.value.dtype))
    g_i = g_read.get("item", np.zeros((I, d), dtype=params.item_emb.value.dtype))
    g_mean = np.vstack([g_u, g_i]) / (state.num_layers + 1)
    # adjacency is symmetric, so its transpose is itself
    acc = g_mean.copy()
    g = g_mean
    for _ in range(state.num_layers):
        g = propagate(adj, g)
        acc += g
    params.user_emb.grad += acc[:U]
    params.item_emb.grad += acc[U:] + g_i
    if ego_grads:
        if "user" in ego_grads:
            params.user_emb.grad += ego_grads["user"]
        if "item" in ego_grads:
            params.item_emb.grad += ego_grads["item"]


def score_all(state: ForwardState, user: int) -> np.ndarray:
    """Predictor-space inner products of ``user`` with every item."""
    hu = state.online["user"]
    if not 0 <= user < hu.shape[0]:
        raise IndexError(f"user index {user} out of range")
    return state.online["item"] @ hu[user]


def score_users(state: ForwardState, users) -> np.ndarray:
    return state.online["user"][users] @ state.online["item"].T


def inference_state(params, adj, features, L):
    return forward(params, adj, features, L, 0.0)


def save_checkpoint(directory, params: ModelParams, manifest: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for p in params.params():
        write_feature_matrix(directory / f"{p.name}.fmat", p.value)
    manifest = dict(manifest, modalities=params.modalities(), d=params.dim)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory, dtype=None):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if dtype is None:
        dtype = np.dtype(manifest.get("config", {}).get("dtype", "float32"))
    user = read_fmat(directory / "user_emb.fmat").astype(dtype)
    item = read_fmat(directory / "item_emb.fmat").astype(dtype)
    feature_dims = {}
    for m in manifest.get("modalities", []):
        feature_dims[m] = read_fmat(directory / f"proj_{short_tag(m)}_W.fmat").shape[0]
    params = ModelParams.init(user.shape[0], item.shape[0], user.shape[1], feature_dims, dtype=dtype)
    params.load_values({p.name: read_fmat(directory / f"{p.name}.fmat") for p in params.params()})
    return params, manifest
