"""Heuristic fake-profile generators: random, average (frequency-weighted) and bandwagon."""

from dataclasses import dataclass

import numpy as np

from .data import InteractionMatrix
from .errors import ConfigError
from .kernel import Rng


@dataclass(frozen=True)
class HeuristicConfig:
    """``budget`` is the total profile length including the targets."""

    k: int = 50
    targets: tuple = ()
    budget: int = 0
    seed: int = 0
    pool_size: int = 0

    def resolved(self, view):
        y = getattr(view, "matrix", view)
        budget = self.budget or default_budget(y)
        pool = self.pool_size or max(1, int(round(0.1 * y.n_items)))
        cfg = HeuristicConfig(self.k, tuple(int(t) for t in self.targets), budget, self.seed, pool)
        cfg.validate(y.n_items)
        return cfg

    def validate(self, n_items):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.budget < len(self.targets):
            raise ConfigError(f"budget {self.budget} is smaller than the {len(self.targets)} targets")
        if self.budget > n_items:
            raise ConfigError(f"budget {self.budget} exceeds the {n_items} items")
        if self.pool_size > n_items:
            raise ConfigError(f"bandwagon pool {self.pool_size} exceeds the {n_items} items")


def default_budget(view):
    y = getattr(view, "matrix", view)
    lengths = y.row_lengths()
    return int(round(lengths[lengths > 0].mean()))


def _rows(cfg, n_items, pick_filler):
    targets = np.asarray(cfg.targets, dtype=np.int64)
    n_fill = cfg.budget - targets.size
    rows = []
    for _ in range(cfg.k):
        filler = pick_filler(n_fill) if n_fill > 0 else np.zeros(0, dtype=np.int64)
        rows.append(np.concatenate([targets, filler]))
    return InteractionMatrix.from_rows(rows, n_items)


def _non_targets(n_items, targets):
    mask = np.ones(n_items, dtype=bool)
    mask[list(targets)] = False
    return np.flatnonzero(mask)


def random_attack(view, cfg):
    """Targets plus fillers drawn uniformly from the other items."""
    y = getattr(view, "matrix", view)
    cfg = cfg.resolved(y)
    rng = Rng(cfg.seed, "attack", "random")
    candidates = _non_targets(y.n_items, cfg.targets)
    return _rows(cfg, y.n_items, lambda n: rng.choice(candidates, size=n, replace=False))


def average_attack(view, cfg):
    """Targets plus fillers drawn with probability proportional to item frequency in the view."""
    y = getattr(view, "matrix", view)
    cfg = cfg.resolved(y)
    rng = Rng(cfg.seed, "attack", "average")
    candidates = _non_targets(y.n_items, cfg.targets)
    weights = y.item_counts()[candidates].astype(np.float64)
    if weights.sum() == 0:
        raise ConfigError("no item frequencies to sample from")
    support = int((weights > 0).sum())
    if cfg.budget - len(cfg.targets) > support:
        raise ConfigError(f"filler budget exceeds the {support} items with non-zero frequency")
    p = weights / weights.sum()
    return _rows(cfg, y.n_items, lambda n: rng.choice(candidates, size=n, replace=False, p=p))


def popular_pool(view, size, exclude=()):
    """The ``size`` most interacted items (ties to lower index), skipping ``exclude``."""
    y = getattr(view, "matrix", view)
    counts = y.item_counts()
    items = _non_targets(y.n_items, exclude)
    order = items[np.lexsort((items, -counts[items]))]
    return order[:size]


def bandwagon_attack(view, cfg):
    """Targets plus fillers drawn uniformly from the most popular items.

    When the pool is smaller than the filler budget the remainder is drawn
    uniformly from items outside the pool.
    """
    y = getattr(view, "matrix", view)
    cfg = cfg.resolved(y)
    rng = Rng(cfg.seed, "attack", "bandwagon")
    pool = popular_pool(y, cfg.pool_size, exclude=cfg.targets)
    rest = np.setdiff1d(_non_targets(y.n_items, cfg.targets), pool)

    def pick(n):
        from_pool = rng.choice(pool, size=min(n, pool.size), replace=False)
        if from_pool.size == n:
            return from_pool
        return np.concatenate([from_pool, rng.choice(rest, size=n - from_pool.size, replace=False)])

    return _rows(cfg, y.n_items, pick)


HEURISTICS = {
    "random": random_attack,
    "average": average_attack,
    "bandwagon": bandwagon_attack,
}
