"""Layers with hand-written backward passes.

Each layer registers its parameters in a shared :class:`ParamStore`, caches what
it needs during ``forward`` and, in ``backward``, accumulates parameter
gradients into the store and returns the gradient with respect to its input.
A layer instance holds one cache, so calls must alternate forward/backward.
"""

import numpy as np

from ..errors import DimensionError
from .ops import relu, scatter_add, sigmoid, softmax_rows, xavier_uniform


def _flat(x, width):
    if x.shape[-1] != width:
        raise DimensionError(f"expected last dimension {width}, got shape {x.shape}")
    return x.reshape(-1, width)


class Linear:
    def __init__(self, store, name, fan_in, fan_out, rng, bias=True):
        self.store = store
        self.name = name
        self.fan_in = fan_in
        self.fan_out = fan_out
        self.w = f"{name}.weight"
        self.b = f"{name}.bias" if bias else None
        store.add(self.w, xavier_uniform(rng.child(self.w), fan_in, fan_out))
        if bias:
            store.add(self.b, np.zeros(fan_out))
        self._x = None

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._x = x
        out = _flat(x, self.fan_in) @ self.store[self.w]
        if self.b is not None:
            out += self.store[self.b]
        return out.reshape(*x.shape[:-1], self.fan_out)

    def backward(self, grad):
        x2 = _flat(self._x, self.fan_in)
        g2 = _flat(grad, self.fan_out)
        self.store.grads[self.w] += x2.T @ g2
        if self.b is not None:
            self.store.grads[self.b] += g2.sum(axis=0)
        return (g2 @ self.store[self.w].T).reshape(self._x.shape)


class Tanh:
    def forward(self, x):
        self._y = np.tanh(x)
        return self._y

    def backward(self, grad):
        return grad * (1.0 - self._y * self._y)


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return relu(x)

    def backward(self, grad):
        return grad * self._mask


class Sigmoid:
    def forward(self, x):
        self._y = sigmoid(x)
        return self._y

    def backward(self, grad):
        return grad * self._y * (1.0 - self._y)


class Embedding:
    """Row lookup into a ``(count, width)`` table."""

    def __init__(self, store, name, count, width, rng):
        self.store = store
        self.name = name
        self.count = count
        self.width = width
        store.add(name, xavier_uniform(rng.child(name), count, width))

    def forward(self, idx):
        idx = np.asarray(idx)
        if idx.size and (idx.min() < 0 or idx.max() >= self.count):
            raise IndexError(f"{self.name}: index out of range [0, {self.count})")
        self._idx = idx
        return self.store[self.name][idx]

    def backward(self, grad):
        scatter_add(self.store.grads[self.name], self._idx, grad.reshape(-1, self.width))


class CrossAttention:
    """Single-head attention of one query row per sample over a set of context rows.

    ``query`` is ``(B, w)`` and ``context`` is ``(B, T, w)``; queries come from
    ``query @ W_Q``, keys and values from ``context @ W_K`` / ``context @ W_V``,
    and scores are scaled by ``1/sqrt(scale_dim)``.
    """

    def __init__(self, store, name, width, rng, scale_dim=None):
        self.store = store
        self.width = width
        self.scale = 1.0 / np.sqrt(scale_dim if scale_dim is not None else width)
        self.wq, self.wk, self.wv = (f"{name}.{k}" for k in ("w_q", "w_k", "w_v"))
        for key in (self.wq, self.wk, self.wv):
            store.add(key, xavier_uniform(rng.child(key), width, width))

    def forward(self, query, context):
        if query.ndim != 2 or context.ndim != 3:
            raise DimensionError(f"query must be (B, w) and context (B, T, w); got {query.shape}, {context.shape}")
        if query.shape[1] != self.width or context.shape[2] != self.width or context.shape[0] != query.shape[0]:
            raise DimensionError(f"width/batch mismatch: query {query.shape}, context {context.shape}, width {self.width}")
        s = self.store
        q = query @ s[self.wq]
        k = context @ s[self.wk]
        v = context @ s[self.wv]
        scores = np.einsum("bw,btw->bt", q, k)
        attn = softmax_rows(scores, self.scale)
        out = np.einsum("bt,btw->bw", attn, v)
        self._cache = (query, context, q, k, v, attn)
        return out

    @property
    def weights(self):
        return self._cache[5]

    def backward(self, grad):
        """Return gradients with respect to ``(query, context)``."""
        query, context, q, k, v, attn = self._cache
        s = self.store
        d_attn = np.einsum("bw,btw->bt", grad, v)
        d_v = attn[:, :, None] * grad[:, None, :]
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=1, keepdims=True)) * self.scale
        d_q = np.einsum("bt,btw->bw", d_scores, k)
        d_k = d_scores[:, :, None] * q[:, None, :]
        ctx2 = context.reshape(-1, self.width)
        s.grads[self.wq] += query.T @ d_q
        s.grads[self.wk] += ctx2.T @ d_k.reshape(-1, self.width)
        s.grads[self.wv] += ctx2.T @ d_v.reshape(-1, self.width)
        d_query = d_q @ s[self.wq].T
        d_context = d_k @ s[self.wk].T + d_v @ s[self.wv].T
        return d_query, d_context


def softmax_backward(y, grad):
    """Gradient through a row softmax given its output ``y``."""
    return y * (grad - (grad * y).sum(axis=-1, keepdims=True))
