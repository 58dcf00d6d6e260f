"""Interaction data: loading, binarization, holdout splits and the attacker's view."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionError, ParseError
from .kernel import Rng

log = logging.getLogger(__name__)


class InteractionMatrix:
    """Binary user-item matrix stored as per-user sorted item lists (CSR layout)."""

    __slots__ = ("n_users", "n_items", "indptr", "indices")

    def __init__(self, n_users, n_items, indptr, indices):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        if self.indptr.shape != (self.n_users + 1,):
            raise DimensionError(f"indptr has length {self.indptr.size}, expected {self.n_users + 1}")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.n_items):
            raise IndexError(f"item index out of range [0, {self.n_items})")
        self.indptr.flags.writeable = False
        self.indices.flags.writeable = False

    @classmethod
    def from_pairs(cls, users, items, n_users, n_items):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise IndexError(f"user index out of range [0, {n_users})")
        key = np.unique(users * n_items + items)
        u = key // n_items
        i = key - u * n_items
        indptr = np.zeros(n_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=n_users), out=indptr[1:])
        return cls(n_users, n_items, indptr, i)

    @classmethod
    def from_rows(cls, rows, n_items):
        users = np.concatenate([np.full(len(r), u) for u, r in enumerate(rows)] or [np.zeros(0)])
        items = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows] or [np.zeros(0)])
        return cls.from_pairs(users.astype(np.int64), items.astype(np.int64), len(rows), n_items)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense)
        u, i = np.nonzero(dense)
        return cls.from_pairs(u, i, dense.shape[0], dense.shape[1])

    @classmethod
    def empty(cls, n_users, n_items):
        return cls(n_users, n_items, np.zeros(n_users + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))

    @property
    def shape(self):
        return (self.n_users, self.n_items)

    @property
    def nnz(self):
        return int(self.indices.size)

    @property
    def sparsity(self):
        return 1.0 - self.nnz / (self.n_users * self.n_items)

    def row(self, u):
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def rows(self):
        return [self.row(u) for u in range(self.n_users)]

    def row_lengths(self):
        return np.diff(self.indptr)

    def item_counts(self):
        return np.bincount(self.indices, minlength=self.n_items)

    def pairs(self):
        users = np.repeat(np.arange(self.n_users), self.row_lengths())
        return users, self.indices.copy()

    def contains(self, u, i):
        r = self.row(u)
        j = np.searchsorted(r, i)
        return bool(j < r.size and r[j] == i)

    def to_csr(self):
        data = np.ones(self.nnz, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)

    def to_dense(self, dtype=np.float64):
        out = np.zeros(self.shape, dtype=dtype)
        users, items = self.pairs()
        out[users, items] = 1
        return out

    def dense_rows(self, users, dtype=np.float64):
        users = np.asarray(users)
        out = np.zeros((users.size, self.n_items), dtype=dtype)
        for k, u in enumerate(users):
            out[k, self.row(u)] = 1
        return out

    def select_users(self, users):
        users = np.asarray(users, dtype=np.int64)
        rows = [self.row(u) for u in users]
        return InteractionMatrix.from_rows(rows, self.n_items)

    def vstack(self, other):
        if other.n_items != self.n_items:
            raise DimensionError(f"item universes differ: {self.n_items} vs {other.n_items}")
        indptr = np.concatenate([self.indptr, other.indptr[1:] + self.indptr[-1]])
        return InteractionMatrix(self.n_users + other.n_users, self.n_items, indptr,
                                 np.concatenate([self.indices, other.indices]))

    def issubset(self, other):
        if self.shape != other.shape:
            return False
        a = set(zip(*(x.tolist() for x in self.pairs())))
        b = set(zip(*(x.tolist() for x in other.pairs())))
        return a <= b

    def __eq__(self, other):
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self):
        return f"InteractionMatrix(n_users={self.n_users}, n_items={self.n_items}, nnz={self.nnz})"

    # Persistence: header line then one "user item" pair per line.

    def save(self, path, meta=None):
        path = Path(path)
        users, items = self.pairs()
        with open(path, "w") as fh:
            fh.write(f"%% {self.n_users} {self.n_items} {self.nnz}\n")
            for u, i in zip(users.tolist(), items.tolist()):
                fh.write(f"{u} {i}\n")
        if meta is not None:
            write_meta(path, meta)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 4 or header[0] != "%%":
                raise ParseError("missing '%% n_users n_items nnz' header", line=1)
            n_users, n_items, nnz = (int(x) for x in header[1:])
            data = np.loadtxt(fh, dtype=np.int64, ndmin=2) if nnz else np.zeros((0, 2), dtype=np.int64)
        if data.shape[0] != nnz:
            raise ParseError(f"expected {nnz} pairs, found {data.shape[0]}")
        return cls.from_pairs(data[:, 0], data[:, 1], n_users, n_items)


def write_meta(path, meta):
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_meta(path):
    with open(str(path) + ".meta.json") as fh:
        return json.load(fh)


@dataclass
class IdMap:
    """Dense index <-> raw identifier, for users and items."""

    users: list
    items: list

    def save(self, path):
        with open(path, "w") as fh:
            for kind, ids in (("user", self.users), ("item", self.items)):
                for k, raw in enumerate(ids):
                    fh.write(f"{kind}\t{k}\t{raw}\n")

    @classmethod
    def load(cls, path):
        users, items = [], []
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3 or parts[0] not in ("user", "item"):
                    raise ParseError(f"bad id-map record {line!r}", line=lineno)
                (users if parts[0] == "user" else items).append(parts[2])
        return cls(users, items)


@dataclass
class Dataset:
    matrix: InteractionMatrix
    ids: IdMap
    ratings_seen: int = 0
    path: str = ""


def _id_sort_key(raw):
    try:
        return (0, int(raw), raw)
    except ValueError:
        return (1, 0, raw)


def load_ratings(path, format="movielens-tab", min_rating=0.0):
    """Read ``user item rating [timestamp]`` records into a binary matrix.

    ``movielens-tab`` splits on any whitespace (tab-separated ML-100K and the
    space-separated FilmTrust file both parse); ``csv`` splits on commas and
    skips a header row whose rating field is not numeric. Every pair rated at
    or above ``min_rating`` becomes an interaction; raw ids are re-indexed
    densely in numeric (else lexicographic) order.
    """
    if format not in ("movielens-tab", "csv"):
        raise ConfigError(f"unknown rating format {format!r}")
    raw_users, raw_items = [], []
    seen = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")] if format == "csv" else line.split()
            if len(parts) < 3:
                raise ParseError(f"expected at least 3 fields, got {len(parts)}", line=lineno)
            try:
                rating = float(parts[2])
            except ValueError:
                if format == "csv" and seen == 0 and not raw_users:
                    continue
                raise ParseError(f"rating {parts[2]!r} is not a number", line=lineno) from None
            seen += 1
            if rating >= min_rating:
                raw_users.append(parts[0])
                raw_items.append(parts[1])
    if seen == 0:
        raise ParseError(f"{path}: no rating records")
    users = sorted(set(raw_users), key=_id_sort_key)
    items = sorted(set(raw_items), key=_id_sort_key)
    uidx = {u: k for k, u in enumerate(users)}
    iidx = {i: k for k, i in enumerate(items)}
    m = InteractionMatrix.from_pairs(
        np.fromiter((uidx[u] for u in raw_users), dtype=np.int64, count=len(raw_users)),
        np.fromiter((iidx[i] for i in raw_items), dtype=np.int64, count=len(raw_items)),
        len(users), len(items),
    )
    return Dataset(m, IdMap(users, items), ratings_seen=seen, path=str(path))


@dataclass
class SplitBundle:
    train: InteractionMatrix
    val: InteractionMatrix
    test: InteractionMatrix
    ratios: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {"ratios": list(self.ratios), "seed": self.seed}
        for part in ("train", "val", "test"):
            getattr(self, part).save(directory / f"{part}.txt", meta={**meta, "part": part})

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = read_meta(directory / "train.txt")
        parts = [InteractionMatrix.load(directory / f"{p}.txt") for p in ("train", "val", "test")]
        return cls(*parts, ratios=tuple(meta["ratios"]), seed=meta["seed"])


def split_holdout(y, ratios=(0.8, 0.1, 0.1), seed=0):
    """Per-user random train/val/test partition.

    Validation and test sizes are ``floor(ratio * n_u)``, the remainder goes to
    train; users with fewer than 3 interactions stay entirely in train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios {ratios} must be three non-negative values summing to 1")
    rng = Rng(seed, "split")
    parts = ([], [], [])
    for u in range(y.n_users):
        items = y.row(u)
        n = items.size
        if n < 3:
            parts[0].append(items)
            parts[1].append(items[:0])
            parts[2].append(items[:0])
            continue
        perm = rng.permutation(items)
        n_val = int(math.floor(ratios[1] * n + 1e-9))
        n_test = int(math.floor(ratios[2] * n + 1e-9))
        n_train = n - n_val - n_test
        parts[0].append(perm[:n_train])
        parts[1].append(perm[n_train:n_train + n_val])
        parts[2].append(perm[n_train + n_val:])
    mats = [InteractionMatrix.from_rows(p, y.n_items) for p in parts]
    return SplitBundle(*mats, ratios=ratios, seed=seed)


@dataclass
class AttackerView:
    """The attacker's partial copy of the interaction data.

    ``matrix`` rows are attacker-side users; ``user_ids[r]`` is the full-data
    row the attacker user ``r`` was sampled from.
    """

    matrix: InteractionMatrix
    user_ids: np.ndarray
    fraction: float
    level: str = "interaction"
    seed: int = 0
    source_nnz: int = field(default=0)

    @property
    def n_users(self):
        return self.matrix.n_users

    @property
    def n_items(self):
        return self.matrix.n_items

    def save(self, path):
        self.matrix.save(path, meta={"fraction": self.fraction, "level": self.level, "seed": self.seed,
                                     "source_nnz": self.source_nnz})
        np.savetxt(str(path) + ".users", self.user_ids, fmt="%d")

    @classmethod
    def load(cls, path):
        meta = read_meta(path)
        ids = np.loadtxt(str(path) + ".users", dtype=np.int64, ndmin=1)
        return cls(InteractionMatrix.load(path), ids, meta["fraction"], meta["level"], meta["seed"],
                   meta["source_nnz"])


def attacker_subsample(y, fraction=0.25, seed=0, level="interaction"):
    """Uniform sample of ``round(fraction * nnz)`` interactions (or users) without replacement.

    Users left with no interaction are dropped from the attacker's index.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"attacker fraction must be in (0, 1], got {fraction}")
    if level not in ("interaction", "user"):
        raise ConfigError(f"unknown sampling level {level!r}")
    rng = Rng(seed, "attacker-view", level)
    users, items = y.pairs()
    if level == "interaction":
        n_keep = int(round(fraction * y.nnz))
        keep = np.sort(rng.choice(y.nnz, size=n_keep, replace=False)) if fraction < 1.0 else np.arange(y.nnz)
        users, items = users[keep], items[keep]
    else:
        n_keep = int(round(fraction * y.n_users))
        chosen = rng.choice(y.n_users, size=n_keep, replace=False) if fraction < 1.0 else np.arange(y.n_users)
        mask = np.isin(users, chosen)
        users, items = users[mask], items[mask]
    kept_users = np.unique(users)
    remap = np.full(y.n_users, -1, dtype=np.int64)
    remap[kept_users] = np.arange(kept_users.size)
    matrix = InteractionMatrix.from_pairs(remap[users], items, kept_users.size, y.n_items)
    dropped = y.n_users - kept_users.size
    if dropped:
        log.info("attacker view: dropped %d users with no sampled interactions", dropped)
    return AttackerView(matrix, kept_users, float(fraction), level, seed, y.nnz)


def view_in_full_index(view, n_users):
    """Re-express the view's rows in the full user index (users absent from the view are empty)."""
    users, items = view.matrix.pairs()
    return InteractionMatrix.from_pairs(view.user_ids[users], items, n_users, view.n_items)
