"""Dense matrix helpers on top of numpy float64 arrays."""

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionError


def as_matrix(x):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def identity(n):
    return np.eye(n, dtype=np.float64)


def softmax_rows(m, scale=1.0):
    """Row-wise softmax of ``scale * m``; max-subtracted so large inputs do not overflow."""
    z = np.asarray(m, dtype=np.float64) * scale
    z = z - z.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def log_softmax_rows(m):
    z = np.asarray(m, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return -np.logaddexp(0.0, -x)


def relu(x):
    return np.maximum(x, 0.0)


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-bound, bound, size=shape)


def l2_normalize_rows(x, eps=1e-12):
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    return x / np.maximum(norm, eps)


def assert_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite {what}")
    return x


def scatter_add(target, idx, values):
    """``target[idx[k]] += values[k]`` with repeated indices summed (unbuffered)."""
    idx = np.asarray(idx).ravel()
    if idx.size == 0:
        return target
    values = np.asarray(values, dtype=np.float64).reshape(idx.size, -1)
    hot = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(target.shape[0], idx.size))
    target += (hot @ values).reshape(target.shape)
    return target
