"""Dense float64 tensors with reverse-mode automatic differentiation."""

import contextlib

import numpy as np

_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make(data, parents, backward, op):
    """Wrap an op result, recording the graph edge when gradients are needed."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if b.ndim == 1:
            ga = g[..., None] * b.data
            gb = np.tensordot(g, a.data, axes=(tuple(range(g.ndim)), tuple(range(a.ndim - 1))))
            return ga, gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make(a.data @ b.data, (a, b), backward, "matmul")


def sum_(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[k] for k in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes):
    axes = tuple(axes) or tuple(reversed(range(a.ndim)))
    inverse = np.argsort(axes)
    return make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def relu(a):
    pos = a.data > 0
    return make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def tanh(a):
    y = np.tanh(a.data)
    return make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def abs_(a):
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def square(a):
    return make(a.data ** 2, (a,), lambda g: (2.0 * g * a.data,), "square")


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make(y, (a,), backward, "softmax")


def log_softmax_np(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def layer_norm(x, gamma, beta, eps=1e-12):
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        gg = _unbroadcast(g * xhat, gamma.shape)
        gb = _unbroadcast(g, beta.shape)
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(-1, keepdims=True)
                    - xhat * (gx_hat * xhat).sum(-1, keepdims=True) / n)
        return gx, gg, gb

    return make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def conv1d(x, weight, bias=None):
    """'Same' convolution over the time axis.

    x: (B, T, Cin); weight: (K, Cin, Cout) with odd K; bias: (Cout,).
    """
    K, cin, cout = weight.shape
    if K % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {K}")
    if x.shape[-1] != cin:
        raise ValueError(f"conv1d expects {cin} input channels, got {x.shape[-1]}")
    B, T, _ = x.shape
    pad = K // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)  # (B, T, Cin, K)
    cols = cols.transpose(0, 1, 3, 2).reshape(B, T, K * cin)
    w2 = weight.data.reshape(K * cin, cout)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gw = (cols.reshape(-1, K * cin).T @ g.reshape(-1, cout)).reshape(K, cin, cout)
        gcols = (g @ w2.T).reshape(B, T, K, cin)
        gxp = np.zeros_like(xp)
        for k in range(K):
            gxp[:, k:k + T] += gcols[:, :, k]
        gx = gxp[:, pad:pad + T]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 1))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, backward, "conv1d")


def dropout(x, rate, rng, training):
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not training or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def gather_rows(x, index):
    """out[b, t] = x[b, index[b, t]] for x of shape (B, N, D) and integer index (B, M)."""
    index = np.asarray(index, dtype=np.int64)
    B = x.shape[0]
    rows = np.arange(B)[:, None]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.broadcast_to(rows, index.shape), index), g)
        return (gx,)

    return make(x.data[rows, index], (x,), backward, "gather_rows")


def cross_entropy(logits, ids, mask=None):
    """Mean over (unmasked) positions of -log softmax(logits)[id]."""
    ids = np.asarray(ids, dtype=np.int64)
    C = logits.shape[-1]
    if ids.shape != logits.shape[:-1]:
        raise ValueError(f"ids shape {ids.shape} does not match logits {logits.shape}")
    m = np.ones(ids.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    valid = m > 0
    if np.any((ids[valid] < 0) | (ids[valid] >= C)):
        raise ValueError(f"class id out of range [0, {C})")
    safe = np.where(valid, ids, 0)
    count = max(m.sum(), 1.0)
    logp = log_softmax_np(logits.data)
    picked = np.take_along_axis(logp, safe[..., None], -1)[..., 0]
    loss = -(picked * m).sum() / count

    def backward(g):
        p = np.exp(logp)
        np.put_along_axis(p, safe[..., None], np.take_along_axis(p, safe[..., None], -1) - 1.0, -1)
        return (g * p * (m / count)[..., None],)

    return make(np.array(loss), (logits,), backward, "cross_entropy")


def masked_mean(x, mask=None):
    """Mean of ``x`` over positions where ``mask`` (broadcastable) is 1."""
    if mask is None:
        return mean(x)
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), x.shape)
    count = max(m.sum(), 1.0)
    return make(np.array((x.data * m).sum() / count), (x,), lambda g: (g * m / count,), "masked_mean")


def mae(a, b, mask=None):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return masked_mean(abs_(a - b), mask)


def mse(a, b, mask=None):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b)
    return masked_mean(square(a - b), mask)


def _check_same(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
