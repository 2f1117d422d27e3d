"""Small numpy kernel: parameters with Adam state, affine layers, dropout,
negative cosine similarity with analytic gradients, and a gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamTensor:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


@dataclass
class LinearLayer:
    W: ParamTensor
    b: ParamTensor

    @classmethod
    def create(cls, name, in_dim, out_dim, seed, dtype=np.float64):
        W = ParamTensor(f"{name}_W", xavier_init(in_dim, out_dim, seed).astype(dtype))
        b = ParamTensor(f"{name}_b", np.zeros((1, out_dim), dtype=dtype))
        return cls(W, b)

    @property
    def in_dim(self):
        return self.W.value.shape[0]

    @property
    def out_dim(self):
        return self.W.value.shape[1]

    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input has {x.shape[-1]} columns, layer expects {self.in_dim}")
        return x @ self.W.value + self.b.value

    def backward(self, x, grad_out):
        """Accumulate weight gradients and return the gradient w.r.t. ``x``."""
        self.W.grad += x.T @ grad_out
        self.b.grad += grad_out.sum(axis=0, keepdims=True)
        return grad_out @ self.W.value.T


def xavier_init(rows: int, cols: int, seed) -> np.ndarray:
    """Glorot-uniform draw on ``[-a, a]`` with ``a = sqrt(6 / (rows + cols))``."""
    a = np.sqrt(6.0 / (rows + cols))
    return np.random.default_rng(seed).uniform(-a, a, size=(rows, cols))


def _as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


@dataclass
class DropoutMask:
    p: float
    mask: np.ndarray

    @property
    def keep_scale(self) -> float:
        return 1.0 / (1.0 - self.p)

    def apply(self, x):
        if self.p == 0.0:
            return x.copy()
        return x * self.mask * self.keep_scale


def make_dropout_mask(shape, p: float, rng, rows: bool = False) -> DropoutMask:
    """Bernoulli keep-mask with drop probability ``p``.

    With ``rows=True`` whole rows are dropped together (node-dropout style).
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop probability must be in [0, 1), got {p}")
    if p == 0.0:
        return DropoutMask(0.0, np.ones(shape, dtype=np.uint8))
    rng = _as_rng(rng)
    draw_shape = (shape[0], 1) if rows else shape
    keep = (rng.random(draw_shape) >= p).astype(np.uint8)
    return DropoutMask(p, np.broadcast_to(keep, shape))


def dropout(x, p, rng, rows=False):
    return make_dropout_mask(x.shape, p, rng, rows=rows).apply(x)


def neg_cosine(u, v, eps: float = 0.0):
    """Row-wise ``-<u, v> / (|u| |v|)`` and its gradient w.r.t. ``u``.

    ``v`` is treated as a constant. Accepts vectors or ``(n, d)`` matrices.
    With ``eps == 0`` a zero-norm row raises; with ``eps > 0`` the norms are
    padded by ``eps``.
    """
    u = np.asarray(u)
    v = np.asarray(v)
    vec = u.ndim == 1
    if vec:
        u, v = u[None, :], v[None, :]
    nu = np.linalg.norm(u, axis=1, keepdims=True)
    nv = np.linalg.norm(v, axis=1, keepdims=True)
    if eps == 0.0 and (np.any(nu == 0) or np.any(nv == 0)):
        raise FloatingPointError("zero-norm input to cosine similarity")
    du = nu + eps
    dv = nv + eps
    dot = np.sum(u * v, axis=1, keepdims=True)
    val = -dot / (du * dv)
    # d/du of |u| is u/|u|; zero rows contribute nothing there
    safe_nu = np.where(nu > 0, nu, 1.0)
    grad = -v / (du * dv) + dot * u / (safe_nu * du * du * dv)
    if vec:
        return float(val[0, 0]), grad[0]
    return val[:, 0], grad


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    def __post_init__(self):
        if self.lr < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("invalid Adam hyperparameters")


def adam_step(params, state: AdamState):
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in params:
        p.adam_m *= state.beta1
        p.adam_m += (1.0 - state.beta1) * p.grad
        p.adam_v *= state.beta2
        p.adam_v += (1.0 - state.beta2) * p.grad * p.grad
        if state.lr != 0.0:
            p.value -= state.lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + state.epsilon)
        p.zero_grad()
    return params


def finite_difference_check(loss_fn, params, eps=1e-5, max_coords=None, seed=0, floor=1e-8):
    """Worst relative error between ``p.grad`` and central differences.

    ``loss_fn()`` must evaluate the loss from the current parameter values and
    be deterministic. Gradients must already be stored in ``p.grad``. When
    ``max_coords`` is given, that many coordinates are sampled per parameter.
    Relative error is ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        gflat = p.grad.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            plus = loss_fn()
            flat[c] = orig - eps
            minus = loss_fn()
            flat[c] = orig
            fd = (plus - minus) / (2 * eps)
            denom = max(abs(gflat[c]), abs(fd), floor)
            worst = max(worst, abs(gflat[c] - fd) / denom)
    return worst
