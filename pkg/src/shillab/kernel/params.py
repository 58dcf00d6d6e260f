"""Named parameters, their gradient buffers and Adam state."""

import hashlib

import numpy as np

from ..errors import DimensionError


class FrozenParamsError(RuntimeError):
    pass


class ParamStore:
    """Named float64 tensors with paired gradient buffers.

    Optimization is Adam with decoupled weight decay (AdamW): the decay term
    ``lr * weight_decay * p`` is subtracted outside the adaptive update.
    """

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._m = {}
        self._v = {}
        self.step_count = 0
        self.frozen = False
        self.freeze_hash = None

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, name, grad):
        buf = self.grads[name]
        if buf.shape != np.shape(grad):
            raise DimensionError(f"gradient for {name!r} has shape {np.shape(grad)}, expected {buf.shape}")
        buf += grad

    def adam_step(self, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8, names=None):
        if self.frozen:
            raise FrozenParamsError("parameter store is frozen")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        step_size = lr / c1
        for name in (names if names is not None else self.params):
            p = self.params[name]
            g = self.grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            tmp = np.multiply(g, g)
            tmp *= 1.0 - beta2
            v += tmp
            if weight_decay:
                p *= 1.0 - lr * weight_decay
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(c2)
            tmp += eps
            np.divide(m, tmp, out=tmp)
            tmp *= step_size
            p -= tmp

    def fingerprint(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            p = self.params[name]
            h.update(name.encode())
            h.update(str(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    def freeze(self):
        self.frozen = True
        self.freeze_hash = self.fingerprint()
        return self.freeze_hash

    def verify_frozen(self):
        """True when parameters are bit-identical to the snapshot taken at freeze time."""
        return self.frozen and self.fingerprint() == self.freeze_hash

    def state(self):
        return {name: p.copy() for name, p in self.params.items()}

    def load_state(self, state):
        for name, value in state.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            if self.params[name].shape != np.shape(value):
                raise DimensionError(
                    f"{name!r}: stored shape {np.shape(value)} != parameter shape {self.params[name].shape}"
                )
            self.params[name][...] = value
