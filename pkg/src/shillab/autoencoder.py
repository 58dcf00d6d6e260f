"""Profile autoencoder mapping binary user profiles to latent features and back.

Shallow MultiDAE shape: L2-normalised input -> dropout -> affine(m, d) -> tanh
for the encoder and affine(d, m) item logits for the decoder, trained with the
multinomial log-likelihood.
"""

import logging

import numpy as np

from .errors import DimensionError, TrainingError
from .kernel import Linear, ParamStore, Rng, Tanh, l2_normalize_rows, log_softmax_rows, softmax_rows
from .trainconf import TrainConfig

log = logging.getLogger(__name__)

DEFAULT_AE_CONFIG = TrainConfig(lr=1e-3, weight_decay=1e-5, epochs=150, batch_size=128)


def multinomial_nll(logits, y):
    """Batch mean of ``-sum_i y_i log softmax(logits)_i``."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if logits.shape != y.shape:
        raise DimensionError(f"logits {logits.shape} and profiles {y.shape} differ")
    return float(-(y * log_softmax_rows(logits)).sum() / logits.shape[0])


def multinomial_nll_grad(logits, y):
    logits = np.atleast_2d(logits)
    y = np.atleast_2d(y)
    p = softmax_rows(logits)
    return (p * y.sum(axis=1, keepdims=True) - y) / logits.shape[0]


class ProfileAE:
    def __init__(self, n_items, dim=64, seed=0, dropout=0.5):
        self.n_items = n_items
        self.dim = dim
        self.dropout = dropout
        self.seed = seed
        self.store = ParamStore()
        rng = Rng(seed, "autoencoder")
        self.enc = Linear(self.store, "enc", n_items, dim, rng)
        self.act = Tanh()
        self.dec = Linear(self.store, "dec", dim, n_items, rng)

    def _check_rows(self, y):
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if y.shape[1] != self.n_items:
            raise DimensionError(f"profile width {y.shape[1]} != {self.n_items} items")
        if np.any(y.sum(axis=1) <= 0):
            raise ValueError("cannot encode an empty profile")
        return y

    def encode(self, y):
        """Latent features for binary profile rows (no dropout)."""
        y = self._check_rows(y)
        return np.tanh(l2_normalize_rows(y) @ self.store["enc.weight"] + self.store["enc.bias"])

    def decode(self, e):
        e = np.atleast_2d(np.asarray(e, dtype=np.float64))
        if e.shape[1] != self.dim:
            raise DimensionError(f"latent width {e.shape[1]} != {self.dim}")
        return e @ self.store["dec.weight"] + self.store["dec.bias"]

    def reconstruct(self, y):
        return self.decode(self.encode(y))

    def loss(self, y, mask=None):
        """Multinomial NLL of a batch with gradients accumulated into the store.

        ``mask`` is the (already rescaled) dropout mask applied to the
        normalised input; ``None`` disables dropout.
        """
        y = self._check_rows(y)
        x = l2_normalize_rows(y)
        if mask is not None:
            x = x * mask
        h = self.act.forward(self.enc.forward(x))
        logits = self.dec.forward(h)
        value = multinomial_nll(logits, y)
        g = multinomial_nll_grad(logits, y)
        self.enc.backward(self.act.backward(self.dec.backward(g)))
        return value

    def dropout_mask(self, rng, shape):
        if not self.dropout:
            return None
        keep = 1.0 - self.dropout
        return (rng.random(shape) < keep) / keep

    def freeze(self):
        return self.store.freeze()

    @property
    def frozen(self):
        return self.store.frozen


def pretrain_ae(view, cfg=DEFAULT_AE_CONFIG, dim=64, dropout=0.5):
    """Fit the autoencoder on every attacker-view profile, then freeze it."""
    y = getattr(view, "matrix", view)
    if y.nnz == 0:
        raise ValueError("attacker view is empty")
    users = np.flatnonzero(y.row_lengths() > 0)
    ae = ProfileAE(y.n_items, dim=dim, seed=cfg.seed, dropout=dropout)
    rng = Rng(cfg.seed, "autoencoder", "train")
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(users)
        total = 0.0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            rows = y.dense_rows(batch)
            ae.store.zero_grad()
            value = ae.loss(rows, ae.dropout_mask(rng, rows.shape))
            if not np.isfinite(value):
                raise TrainingError("autoencoder loss is not finite", epoch=epoch)
            ae.store.adam_step(cfg.lr, cfg.weight_decay)
            total += value * batch.size
        history.append(total / users.size)
        if epoch % 25 == 0 or epoch == cfg.epochs - 1:
            log.debug("ae epoch %d loss %.4f", epoch, history[-1])
    ae.history = history
    ae.freeze()
    return ae


def reconstruction_nll(ae, view, users=None):
    y = getattr(view, "matrix", view)
    if users is None:
        users = np.flatnonzero(y.row_lengths() > 0)
    rows = y.dense_rows(users)
    return multinomial_nll(ae.reconstruct(rows), rows)
