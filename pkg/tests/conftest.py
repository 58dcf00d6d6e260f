import os
import time
from pathlib import Path

import numpy as np
import pytest

from shillab.data import InteractionMatrix, load_ratings, split_holdout
from shillab.victims import train_victim

ROOT = Path(__file__).resolve().parent.parent
ML100K = Path(os.environ.get("SHILLAB_ML100K", ROOT / "data" / "ml-100k" / "u.data"))
FILMTRUST = Path(os.environ.get("SHILLAB_FILMTRUST", ROOT / "data" / "filmtrust" / "ratings.txt"))


@pytest.fixture(scope="session")
def ml100k_path():
    if not ML100K.exists():
        pytest.skip(f"ML-100K ratings not found at {ML100K} (run scripts/fetch_ml100k.py)")
    return ML100K


@pytest.fixture(scope="session")
def ml100k(ml100k_path):
    return load_ratings(ml100k_path)


@pytest.fixture(scope="session")
def ml100k_split(ml100k):
    return split_holdout(ml100k.matrix, seed=0)


@pytest.fixture(scope="session")
def ml100k_mf(ml100k_split):
    """MF trained with the default configuration; (model, seconds)."""
    t0 = time.perf_counter()
    model = train_victim("MF", ml100k_split.train, val=ml100k_split.val)
    return model, time.perf_counter() - t0


@pytest.fixture
def toy_matrix():
    # 6 users x 8 items
    rows = [[0, 1, 2], [1, 2, 3, 4], [0, 4], [5, 6, 7], [2, 5, 6], [0, 1, 2, 3, 4, 5]]
    return InteractionMatrix.from_rows(rows, 8)


def random_matrix(rng, n_users, n_items, density=0.3, min_per_row=1):
    dense = rng.random((n_users, n_items)) < density
    for u in range(n_users):
        if dense[u].sum() < min_per_row:
            dense[u, rng.choice(n_items, size=min_per_row, replace=False)] = True
    return InteractionMatrix.from_dense(dense.astype(np.int8))
