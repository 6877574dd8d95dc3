"""Parameterised layers built on :mod:`semg2v.nn.tensor`."""

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ParamStore:
    """Named parameters (insertion ordered) plus their Adam state."""

    def __init__(self, seed=0):
        self.params = {}
        self.rng = np.random.default_rng(seed)
        self.adam_m = {}
        self.adam_v = {}
        self.step = 0

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def __getitem__(self, name):
        return self.params[name]

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Tensor(value, requires_grad=True)
        self.params[name] = p
        return p

    def xavier(self, name, shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-limit, limit, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def count(self):
        return sum(p.data.size for p in self.params.values())

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state, strict=True):
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, value in state.items():
            if name not in self.params:
                continue
            p = self.params[name]
            if p.data.shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} does not match {p.data.shape}")
            p.data = np.array(value, dtype=np.float64)


class Linear:
    def __init__(self, store, name, din, dout, bias=True):
        self.din, self.dout = din, dout
        self.weight = store.xavier(f"{name}.weight", (din, dout), din, dout)
        self.bias = store.zeros(f"{name}.bias", (dout,)) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.din:
            raise ValueError(f"linear expects width {self.din}, got {x.shape[-1]}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv1d:
    def __init__(self, store, name, cin, cout, kernel):
        if kernel % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {kernel}")
        self.weight = store.xavier(f"{name}.weight", (kernel, cin, cout), kernel * cin, kernel * cout)
        self.bias = store.zeros(f"{name}.bias", (cout,))

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, store, name, dim, eps=1e-12):
        self.gamma = store.ones(f"{name}.gamma", (dim,))
        self.beta = store.zeros(f"{name}.beta", (dim,))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class MultiHeadAttention:
    """Full (non-causal) scaled dot-product self-attention."""

    def __init__(self, store, name, dim, heads):
        if dim % heads:
            raise ValueError(f"model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.dk = dim, heads, dim // heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", dim, dim)
        self.v = Linear(store, f"{name}.v", dim, dim)
        self.out = Linear(store, f"{name}.out", dim, dim)

    def _split(self, x):
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dk).transpose(0, 2, 1, 3)

    def __call__(self, x, key_mask=None, rng=None, dropout=0.0, training=False):
        """x: (B, L, dim); key_mask: (B, L) with 1 for real frames."""
        B, L, _ = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.dk))
        if key_mask is not None:
            # exp(-1e9) underflows to exactly 0, so padded keys get no weight
            scores = scores + np.where(np.asarray(key_mask)[:, None, None, :] > 0, 0.0, -1e9)
        att = T.softmax(scores, -1)
        att = T.dropout(att, dropout, rng, training)
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape(B, L, self.dim)
        return self.out(ctx)


def sinusoidal_encoding(length, dim):
    pos = np.arange(length)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : dim // 2])
    return pe
