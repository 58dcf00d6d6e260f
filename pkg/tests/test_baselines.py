import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from conftest import random_matrix
from shillab.baselines import (
    HEURISTICS,
    HeuristicConfig,
    average_attack,
    bandwagon_attack,
    default_budget,
    popular_pool,
    random_attack,
)
from shillab.data import InteractionMatrix
from shillab.errors import ConfigError


def _counts_view(counts, n_items=None):
    """One user per interaction so item ``i`` is seen ``counts[i]`` times."""
    n_items = n_items or len(counts)
    rows = [[i] for i, c in enumerate(counts) for _ in range(c)]
    return InteractionMatrix.from_rows(rows, n_items)


def _filler_counts(fake, n_items, targets):
    counts = np.bincount(fake.pairs()[1], minlength=n_items)
    counts[list(targets)] = 0
    return counts


@pytest.mark.parametrize("method", sorted(HEURISTICS))
def test_budget_equal_to_targets_gives_target_rows(method, toy_matrix):
    fake = HEURISTICS[method](toy_matrix, HeuristicConfig(k=3, targets=(6, 7), budget=2))
    assert [fake.row(r).tolist() for r in range(3)] == [[6, 7]] * 3


@pytest.mark.parametrize("method", sorted(HEURISTICS))
def test_k_rows_with_exact_budget(method, ml100k):
    cfg = HeuristicConfig(k=50, targets=(10, 20, 30), budget=40, seed=1)
    fake = HEURISTICS[method](ml100k.matrix, cfg)
    assert fake.n_users == 50 and fake.n_items == ml100k.matrix.n_items
    assert np.all(fake.row_lengths() == 40)


@pytest.mark.parametrize("method", sorted(HEURISTICS))
def test_fixed_seed_is_deterministic(method, toy_matrix):
    cfg = HeuristicConfig(k=5, targets=(7,), budget=4, seed=3)
    assert HEURISTICS[method](toy_matrix, cfg) == HEURISTICS[method](toy_matrix, cfg)


def test_default_budget_is_rounded_mean_length(toy_matrix):
    # lengths 3, 4, 2, 3, 3, 6 -> mean 3.5 -> round half to even gives 4
    assert default_budget(toy_matrix) == 4
    assert HeuristicConfig(targets=(0,)).resolved(toy_matrix).budget == 4


def test_config_errors(toy_matrix):
    with pytest.raises(ConfigError):
        random_attack(toy_matrix, HeuristicConfig(k=1, targets=(0, 1, 2), budget=2))
    with pytest.raises(ConfigError):
        random_attack(toy_matrix, HeuristicConfig(k=1, budget=9))
    with pytest.raises(ConfigError):
        bandwagon_attack(toy_matrix, HeuristicConfig(k=1, budget=3, pool_size=9))
    with pytest.raises(ConfigError):
        random_attack(toy_matrix, HeuristicConfig(k=0, budget=3))
    with pytest.raises(ConfigError):
        average_attack(_counts_view([3, 2, 0, 0]), HeuristicConfig(k=1, budget=3))


def test_average_follows_frequency_ratio():
    view = _counts_view([99, 1, 0], n_items=3)
    fake = average_attack(view, HeuristicConfig(k=10_000, targets=(2,), budget=2, seed=0))
    counts = _filler_counts(fake, 3, (2,))[:2]
    assert counts.sum() == 10_000
    assert chisquare(counts, [9900, 100]).pvalue > 0.01


def test_average_with_equal_counts_is_uniform():
    view = _counts_view([5] * 6)
    fake = average_attack(view, HeuristicConfig(k=6000, targets=(0,), budget=3, seed=0))
    counts = _filler_counts(fake, 6, (0,))[1:]
    assert chisquare(counts).pvalue > 0.01
    ref = _filler_counts(random_attack(view, HeuristicConfig(k=6000, targets=(0,), budget=3, seed=0)), 6, (0,))[1:]
    assert chisquare(ref).pvalue > 0.01


def test_random_fillers_uniform():
    view = _counts_view([50, 1, 1, 1, 1])
    fake = random_attack(view, HeuristicConfig(k=8000, targets=(1,), budget=2, seed=4))
    counts = _filler_counts(fake, 5, (1,))
    assert chisquare(counts[[0, 2, 3, 4]]).pvalue > 0.01


def test_popular_pool_matches_sort_oracle():
    counts = [3, 7, 7, 0, 5, 1, 7]
    view = _counts_view(counts)
    oracle = sorted(range(7), key=lambda i: (-counts[i], i))
    for size in range(1, 8):
        assert popular_pool(view, size).tolist() == oracle[:size]
    assert popular_pool(view, 3, exclude=(1,)).tolist() == [2, 6, 4]


def test_bandwagon_pool_of_one():
    view = _counts_view([2, 9, 4, 1, 3])
    fake = bandwagon_attack(view, HeuristicConfig(k=40, targets=(0,), budget=3, pool_size=1, seed=2))
    for r in range(40):
        row = set(fake.row(r).tolist())
        assert {0, 1} <= row and len(row) == 3


def test_bandwagon_fillers_come_from_pool():
    view = _counts_view([2, 9, 4, 1, 3, 8, 0, 0])
    fake = bandwagon_attack(view, HeuristicConfig(k=30, targets=(7,), budget=3, pool_size=3, seed=0))
    pool = set(popular_pool(view, 3, exclude=(7,)).tolist())
    for r in range(30):
        assert set(fake.row(r).tolist()) - {7} <= pool


def test_bandwagon_full_pool_is_uniform():
    view = _counts_view([40, 1, 10, 1, 5, 2])
    fake = bandwagon_attack(view, HeuristicConfig(k=6000, targets=(1,), budget=2, pool_size=6, seed=5))
    counts = _filler_counts(fake, 6, (1,))
    assert chisquare(counts[[0, 2, 3, 4, 5]]).pvalue > 0.01


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(sorted(HEURISTICS)), st.integers(1, 6), st.integers(0, 3),
       st.integers(0, 8))
def test_rows_contain_targets_without_duplicates(seed, method, k, n_targets, extra):
    view = random_matrix(np.random.default_rng(seed), 12, 15, 0.5)
    targets = tuple(range(n_targets))
    budget = n_targets + extra
    if budget == 0:
        budget = 1
    fake = HEURISTICS[method](view, HeuristicConfig(k=k, targets=targets, budget=budget, seed=seed, pool_size=4))
    assert fake.n_users == k
    for r in range(k):
        row = fake.row(r).tolist()
        assert len(row) == len(set(row)) == budget
        assert set(targets) <= set(row)
