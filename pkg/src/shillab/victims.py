"""Victim recommenders: MF and LightGCN trained with BPR, NCF trained with sampled BCE."""

import logging
import math

import numpy as np

from .checkpoint import config_hash, load_tensors, save_tensors
from .errors import ConfigError, EvaluationError, TrainingError
from .graph import normalized_adjacency, propagate
from .kernel import Embedding, Linear, ParamStore, ReLU, Rng, log_sigmoid, scatter_add, sigmoid
from .trainconf import TrainConfig

log = logging.getLogger(__name__)

KINDS = ("MF", "LGN", "NCF")
EMBED_DIM = 64
NCF_HIDDEN = (128, 64, 32)

DEFAULT_CONFIGS = {
    "MF": TrainConfig(lr=1e-3, weight_decay=1e-4, epochs=200, batch_size=2048, negatives=1),
    "LGN": TrainConfig(lr=1e-3, weight_decay=1e-4, epochs=200, batch_size=2048, negatives=1, layers=2),
    "NCF": TrainConfig(lr=1e-3, weight_decay=1e-5, epochs=200, batch_size=2048, negatives=4, eval_every=5),
}


class VictimModel:
    kind = None

    def __init__(self, n_users, n_items, cfg, dim=EMBED_DIM):
        self.n_users = n_users
        self.n_items = n_items
        self.cfg = cfg
        self.dim = dim
        self.store = ParamStore()
        self.rng = Rng(cfg.seed, "victim", self.kind)
        self.users = Embedding(self.store, "user_emb", n_users, dim, self.rng)
        self.items = Embedding(self.store, "item_emb", n_items, dim, self.rng)
        self.epochs_run = 0
        self.history = []

    def score_users(self, users):
        raise NotImplementedError

    def score(self, u, i):
        return float(self.score_users([u])[0, i])

    def loss(self, batch):
        raise NotImplementedError

    def finalize(self):
        """Called once parameters stop changing (caches derived tables)."""
        self.store.freeze()

    def meta(self):
        return {"kind": self.kind, "n_users": self.n_users, "n_items": self.n_items, "dim": self.dim,
                "seed": self.cfg.seed, "config": self.cfg.to_dict(), "config_hash": config_hash(self.cfg.to_dict())}

    def save(self, path):
        save_tensors(path, self.store.params, self.meta())


def _bpr(eu, ei, ej):
    x = (eu * (ei - ej)).sum(axis=1)
    value = -float(log_sigmoid(x).mean())
    g = -(1.0 - sigmoid(x)) / x.size
    return value, g


class MF(VictimModel):
    kind = "MF"

    def score_users(self, users):
        return self.store["user_emb"][np.asarray(users)] @ self.store["item_emb"].T

    def loss(self, batch):
        u, i, j = batch
        U, I = self.store["user_emb"], self.store["item_emb"]
        eu, ei, ej = U[u], I[i], I[j]
        value, g = _bpr(eu, ei, ej)
        gu = g[:, None]
        scatter_add(self.store.grads["user_emb"], u, gu * (ei - ej))
        scatter_add(self.store.grads["item_emb"], np.concatenate([i, j]), np.vstack([gu * eu, -gu * eu]))
        return value


class LightGCN(VictimModel):
    kind = "LGN"

    def __init__(self, n_users, n_items, cfg, dim=EMBED_DIM, train=None):
        super().__init__(n_users, n_items, cfg, dim)
        self.layers = cfg.layers
        self.adj = normalized_adjacency(train)
        self._final = None

    def _embeddings(self):
        e0 = np.vstack([self.store["user_emb"], self.store["item_emb"]])
        return propagate(self.adj, e0, self.layers)

    def finalize(self):
        super().finalize()
        self._final = self._embeddings()

    def _final_tables(self):
        e = self._final if self._final is not None else self._embeddings()
        return e[:self.n_users], e[self.n_users:]

    def score_users(self, users):
        U, I = self._final_tables()
        return U[np.asarray(users)] @ I.T

    def loss(self, batch):
        u, i, j = batch
        e = self._embeddings()
        U, I = e[:self.n_users], e[self.n_users:]
        eu, ei, ej = U[u], I[i], I[j]
        value, g = _bpr(eu, ei, ej)
        gu = g[:, None]
        ge = np.zeros_like(e)
        scatter_add(ge, np.concatenate([u, self.n_users + i, self.n_users + j]),
                    np.vstack([gu * (ei - ej), gu * eu, -gu * eu]))
        # the layer-mean of powers of a symmetric matrix is its own transpose
        g0 = propagate(self.adj, ge, self.layers)
        self.store.grads["user_emb"] += g0[:self.n_users]
        self.store.grads["item_emb"] += g0[self.n_users:]
        return value


class NCF(VictimModel):
    """Concatenated embeddings through an MLP tower to a sigmoid score."""

    kind = "NCF"

    def __init__(self, n_users, n_items, cfg, dim=EMBED_DIM, hidden=NCF_HIDDEN):
        super().__init__(n_users, n_items, cfg, dim)
        widths = (2 * dim,) + tuple(hidden)
        self.mlp = [Linear(self.store, f"mlp{k}", a, b, self.rng) for k, (a, b) in enumerate(zip(widths, widths[1:]))]
        self.acts = [ReLU() for _ in self.mlp]
        self.out = Linear(self.store, "out", widths[-1], 1, self.rng)

    def _logits(self, u, i):
        h = np.concatenate([self.users.forward(u), self.items.forward(i)], axis=1)
        for lin, act in zip(self.mlp, self.acts):
            h = act.forward(lin.forward(h))
        return self.out.forward(h)[:, 0]

    def loss(self, batch):
        u, i, labels = batch
        z = self._logits(u, i)
        value = float(np.mean(np.logaddexp(0.0, z) - labels * z))
        g = ((sigmoid(z) - labels) / z.size)[:, None]
        g = self.out.backward(g)
        for lin, act in zip(reversed(self.mlp), reversed(self.acts)):
            g = lin.backward(act.backward(g))
        self.users.backward(g[:, :self.dim])
        self.items.backward(g[:, self.dim:])
        return value

    def score_users(self, users, chunk=32):
        users = np.asarray(users)
        s = self.store
        w0 = s["mlp0.weight"]
        item_part = s["item_emb"] @ w0[self.dim:] + s["mlp0.bias"]
        out = np.empty((users.size, self.n_items))
        for start in range(0, users.size, chunk):
            uu = users[start:start + chunk]
            user_part = s["user_emb"][uu] @ w0[:self.dim]
            h = np.maximum(user_part[:, None, :] + item_part[None, :, :], 0.0).reshape(-1, w0.shape[1])
            for k in range(1, len(self.mlp)):
                h = np.maximum(h @ s[f"mlp{k}.weight"] + s[f"mlp{k}.bias"], 0.0)
            z = h @ s["out.weight"] + s["out.bias"]
            out[start:start + uu.size] = sigmoid(z[:, 0]).reshape(uu.size, self.n_items)
        return out


class Popularity:
    """Ranks items by training interaction count."""

    kind = "POP"

    def __init__(self, train):
        self.n_users = train.n_users
        self.n_items = train.n_items
        self.counts = train.item_counts().astype(np.float64)

    def score_users(self, users):
        return np.broadcast_to(self.counts, (len(np.atleast_1d(users)), self.n_items)).copy()


def build_victim(kind, train, cfg, dim=EMBED_DIM):
    if kind == "MF":
        return MF(train.n_users, train.n_items, cfg, dim)
    if kind == "LGN":
        return LightGCN(train.n_users, train.n_items, cfg, dim, train=train)
    if kind == "NCF":
        return NCF(train.n_users, train.n_items, cfg, dim)
    raise ConfigError(f"unknown victim kind {kind!r}; expected one of {KINDS}")


class InteractionIndex:
    """Membership test for observed (user, item) pairs."""

    DENSE_LIMIT = 50_000_000

    def __init__(self, train):
        self.n_items = train.n_items
        users, items = train.pairs()
        if train.n_users * train.n_items <= self.DENSE_LIMIT:
            self.dense = np.zeros(train.shape, dtype=bool)
            self.dense[users, items] = True
            self.keys = None
        else:
            self.dense = None
            self.keys = users * train.n_items + items

    def observed(self, users, items):
        if self.dense is not None:
            return self.dense[users, items]
        k = users * self.n_items + items
        pos = np.minimum(np.searchsorted(self.keys, k), self.keys.size - 1)
        return self.keys[pos] == k


def sample_negatives(index, users, n_items, rng, max_rounds=100):
    """Items drawn uniformly among those each user has not interacted with."""
    j = rng.integers(0, n_items, size=users.size)
    for _ in range(max_rounds):
        hit = index.observed(users, j)
        if not hit.any():
            break
        j[hit] = rng.integers(0, n_items, size=int(hit.sum()))
    return j


def topk_rows(scores, K):
    """Top-``K`` column indices per row: descending score, ties by ascending index."""
    scores = np.atleast_2d(scores)
    n, m = scores.shape
    K = min(K, m)
    if K <= 0:
        return np.zeros((n, 0), dtype=np.int64)
    part = np.argpartition(-scores, K - 1, axis=1)[:, :K]
    vals = np.take_along_axis(scores, part, axis=1)
    order = np.lexsort((part, -vals), axis=1)
    out = np.take_along_axis(part, order, axis=1)
    kth = vals.min(axis=1)
    tied = (scores >= kth[:, None]).sum(axis=1) > K
    for r in np.flatnonzero(tied):
        out[r] = np.argsort(-scores[r], kind="stable")[:K]
    return out


def topk_scores(scores, K, exclude=()):
    """Ranked item list for one score vector, skipping ``exclude``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    keep = np.ones(scores.size, dtype=bool)
    ex = np.asarray(list(exclude), dtype=np.int64)
    keep[ex] = False
    cand = np.flatnonzero(keep)
    if cand.size == 0:
        return []
    picked = topk_rows(scores[cand][None, :], min(K, cand.size))[0]
    return [int(x) for x in cand[picked]]


def topk(model, u, K, exclude=()):
    return topk_scores(model.score_users([u])[0], K, exclude)


def masked_scores(model, users, train):
    """Scores with each user's training items set to -inf."""
    users = np.asarray(users)
    s = np.array(model.score_users(users), dtype=np.float64)
    sub = train.select_users(users)
    rows, items = sub.pairs()
    s[rows, items] = -np.inf
    return s


def evaluate_rec(model, train, test, K=10, users=None, chunk=512):
    """Mean Recall@K and NDCG@K over users with held-out items (train items excluded)."""
    if test.nnz == 0:
        raise EvaluationError("test set is empty")
    lengths = test.row_lengths()
    if users is None:
        users = np.flatnonzero(lengths > 0)
    else:
        users = np.asarray([u for u in users if lengths[u] > 0], dtype=np.int64)
    discounts = 1.0 / np.log2(np.arange(2, K + 2))
    ideal = np.cumsum(discounts)
    recall = ndcg = 0.0
    for start in range(0, users.size, chunk):
        uu = users[start:start + chunk]
        top = topk_rows(masked_scores(model, uu, train), K)
        truth = test.select_users(uu)
        mask = np.zeros((uu.size, test.n_items), dtype=bool)
        r, i = truth.pairs()
        mask[r, i] = True
        hits = np.take_along_axis(mask, top, axis=1)
        n_true = lengths[uu]
        recall += (hits.sum(axis=1) / n_true).sum()
        ndcg += ((hits * discounts[:top.shape[1]]).sum(axis=1) / ideal[np.minimum(n_true, K) - 1]).sum()
    return {"recall": float(recall / users.size), "ndcg": float(ndcg / users.size), "users": int(users.size), "K": K}


def _batches(kind, train, cfg, rng, index):
    users, items = train.pairs()
    order = rng.permutation(users.size)
    u_all, i_all = users[order], items[order]
    for start in range(0, u_all.size, cfg.batch_size):
        u = u_all[start:start + cfg.batch_size]
        i = i_all[start:start + cfg.batch_size]
        if kind == "NCF":
            un = np.repeat(u, cfg.negatives)
            jn = sample_negatives(index, un, train.n_items, rng)
            yield (np.concatenate([u, un]), np.concatenate([i, jn]),
                   np.concatenate([np.ones(u.size), np.zeros(un.size)]))
        else:
            if cfg.negatives > 1:
                u = np.repeat(u, cfg.negatives)
                i = np.repeat(i, cfg.negatives)
            yield u, i, sample_negatives(index, u, train.n_items, rng)


def train_victim(kind, train, cfg=None, val=None, dim=EMBED_DIM, K=10):
    """Train a victim on ``train``; with ``val`` given, early-stop on validation Recall@K.

    The returned model holds the best-validation parameters and is frozen.
    """
    cfg = cfg if cfg is not None else DEFAULT_CONFIGS[kind]
    if train.nnz == 0:
        raise ValueError("training matrix is empty")
    model = build_victim(kind, train, cfg, dim)
    rng = Rng(cfg.seed, "victim", kind, "train")
    index = InteractionIndex(train)
    best, best_state, stale = -1.0, None, 0
    use_val = val is not None and val.nnz > 0
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for batch in _batches(kind, train, cfg, rng, index):
            model.store.zero_grad()
            value = model.loss(batch)
            if not math.isfinite(value):
                raise TrainingError(f"{kind} loss is not finite", epoch=epoch)
            model.store.adam_step(cfg.lr, cfg.weight_decay)
            total += value * batch[0].size
            count += batch[0].size
        model.history.append(total / count)
        model.epochs_run = epoch + 1
        if use_val and (epoch + 1) % cfg.eval_every == 0:
            score = evaluate_rec(model, train, val, K)["recall"]
            if score > best:
                best, best_state, stale = score, model.store.state(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.debug("%s early stop at epoch %d (best val recall %.4f)", kind, epoch, best)
                    break
    if best_state is not None:
        model.store.load_state(best_state)
    model.best_val = best if use_val else None
    model.finalize()
    return model


def load_victim(path, train):
    tensors, meta = load_tensors(path)
    cfg = TrainConfig(**meta["config"])
    model = build_victim(meta["kind"], train, cfg, meta["dim"])
    model.store.load_state(tensors)
    model.finalize()
    return model
