import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_matrix
from shillab.data import InteractionMatrix
from shillab.errors import ConfigError, DimensionError, EvaluationError
from shillab.evaluation import (
    AttackReport,
    DetectorConfig,
    attack_metrics,
    check_metrics,
    detect,
    inject,
    knn_mean_distance,
    pca_export,
    pca_project,
    score_flags,
    target_ranks,
)
from shillab.trainconf import TrainConfig
from shillab.victims import train_victim


class FixedScores:
    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=np.float64)

    def score_users(self, users):
        return self.scores[np.asarray(users)]


# inject

def test_inject_zero_fakes_is_identity(toy_matrix):
    assert inject(toy_matrix, InteractionMatrix.empty(0, 8)) == toy_matrix


def test_inject_ml100k_row_count(ml100k):
    fakes = InteractionMatrix.from_rows([[0, 1, 2]] * 50, ml100k.matrix.n_items)
    y2 = inject(ml100k.matrix, fakes)
    assert y2.n_users == 993
    assert y2.nnz == ml100k.matrix.nnz + fakes.nnz
    assert y2.row(943).tolist() == [0, 1, 2]


def test_inject_item_mismatch(toy_matrix):
    with pytest.raises(DimensionError):
        inject(toy_matrix, InteractionMatrix.from_rows([[0]], 9))


# attack metrics

def _scores_with_target_ranks(ranks, n_items=15, target=14):
    """Score rows in which ``target`` lands at the given 1-based ranks."""
    rows = []
    for r in ranks:
        others = [i for i in range(n_items) if i != target]
        row = np.zeros(n_items)
        for pos, i in enumerate(others):
            row[i] = n_items - pos - (1 if pos >= r - 1 else 0)
        row[target] = n_items - (r - 1) - 0.5
        rows.append(row)
    return np.array(rows)


def test_ranks_two_twelve_five():
    scores = _scores_with_target_ranks([2, 12, 5])
    assert target_ranks(scores, 14).tolist() == [2, 12, 5]
    train = InteractionMatrix.empty(3, 15)
    m = attack_metrics(FixedScores(scores), [14], train, K=10)
    assert m.hr == pytest.approx(2 / 3, abs=1e-15)
    assert m.mrr == pytest.approx(7 / 30, abs=1e-15)


def test_target_never_in_top_k():
    m = attack_metrics(FixedScores(_scores_with_target_ranks([11, 13, 15])), [14], InteractionMatrix.empty(3, 15))
    assert (m.hr, m.mrr) == (0.0, 0.0)


def test_target_always_first():
    m = attack_metrics(FixedScores(_scores_with_target_ranks([1, 1, 1])), [14], InteractionMatrix.empty(3, 15))
    assert (m.hr, m.mrr) == (1.0, 1.0)


def test_tied_target_ranks_after_lower_indices():
    assert target_ranks(np.array([[1.0, 1.0, 1.0, 0.0]]), 2).tolist() == [3]


def test_target_owned_by_everyone_is_skipped(caplog):
    train = InteractionMatrix.from_rows([[0], [0]], 3)
    scores = np.array([[0.0, 1.0, 2.0], [0.0, 2.0, 1.0]])
    m = attack_metrics(FixedScores(scores), [0, 1], train, K=1)
    assert m.skipped == [0] and list(m.per_target) == [1]
    assert m.hr == 0.5 and "skipped" in caplog.text
    with pytest.raises(EvaluationError):
        attack_metrics(FixedScores(scores), [0], train)


def brute_force_attack_metrics(scores, targets, train, K):
    """Per user, sort every non-train item by (score desc, index asc) and read off the target position."""
    hrs, mrrs = [], []
    for t in targets:
        h = rr = n = 0
        for u in range(scores.shape[0]):
            seen = set(train.row(u).tolist())
            if t in seen:
                continue
            n += 1
            ranked = sorted((i for i in range(scores.shape[1]) if i not in seen), key=lambda i: (-scores[u, i], i))
            pos = ranked.index(t) + 1
            if pos <= K:
                h += 1
                rr += 1 / pos
        if n:
            hrs.append(h / n)
            mrrs.append(rr / n)
    return float(np.mean(hrs)), float(np.mean(mrrs))


def test_five_user_toy_matches_brute_force():
    train = InteractionMatrix.from_rows([[0, 1], [2], [3, 7], [0, 5, 6], [4]], 8)
    scores = np.array([[0.1, 0.9, 0.3, 0.3, 0.2, 0.8, 0.0, 0.5],
                       [0.4, 0.4, 0.4, 0.1, 0.9, 0.2, 0.3, 0.4],
                       [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
                       [0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0],
                       [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]])
    m = attack_metrics(FixedScores(scores), [2, 6, 7], train, K=3)
    hr, mrr = brute_force_attack_metrics(scores, [2, 6, 7], train, 3)
    assert m.hr == pytest.approx(hr, abs=1e-12) and m.mrr == pytest.approx(mrr, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_attack_metrics_oracle_and_invariant(seed, K):
    rng = np.random.default_rng(seed)
    train = random_matrix(rng, 5, 8, 0.3, min_per_row=0)
    scores = rng.integers(0, 3, size=(5, 8)).astype(float)
    targets = sorted(rng.choice(8, size=2, replace=False).tolist())
    if all(train.item_counts()[t] == 5 for t in targets):
        return
    m = attack_metrics(FixedScores(scores), targets, train, K=K, chunk=2)
    hr, mrr = brute_force_attack_metrics(scores, targets, train, K)
    assert m.hr == pytest.approx(hr, abs=1e-12) and m.mrr == pytest.approx(mrr, abs=1e-12)
    check_metrics(m.to_dict())


def test_check_metrics_rejects_inconsistent_cells():
    with pytest.raises(EvaluationError):
        check_metrics({"hr": 0.1, "mrr": 0.2, "per_target": {}})
    with pytest.raises(EvaluationError):
        check_metrics({"hr": 0.2, "mrr": 0.1, "per_target": {"3": {"hr": 1.5, "mrr": 0.0}}})


def test_no_injection_retraining_reproduces_clean_metrics():
    train = random_matrix(np.random.default_rng(8), 12, 10, 0.3)
    cfg = TrainConfig(epochs=5, batch_size=8, seed=2)
    clean = train_victim("MF", train, cfg, dim=4)
    again = train_victim("MF", inject(train, InteractionMatrix.empty(0, 10)), cfg, dim=4)
    a = attack_metrics(clean, [1, 4], train).to_dict()
    b = attack_metrics(again, [1, 4], train).to_dict()
    assert a == b


# PCA

def test_pca_two_points():
    pts = np.array([[1.0, 2.0, 3.0], [4.0, 6.0, 3.0]])
    out = pca_project(pts)
    delta = 5.0
    np.testing.assert_allclose(np.sort(out[:, 0]), [-delta / 2, delta / 2], atol=1e-12)
    np.testing.assert_allclose(out[:, 1], 0.0, atol=1e-12)


def test_pca_identical_rows():
    np.testing.assert_array_equal(pca_project(np.ones((4, 3))), np.zeros((4, 2)))


def test_pca_needs_two_rows():
    with pytest.raises(ConfigError):
        pca_project(np.ones((1, 3)))


def test_pca_matches_eigendecomposition():
    x = np.array([[2.0, 0.0, 1.0, 3.0], [0.0, 1.0, 4.0, 1.0], [3.0, 2.0, 0.0, 0.0], [1.0, 5.0, 2.0, 2.0]])
    xc = x - x.mean(axis=0)
    w, v = np.linalg.eigh(xc.T @ xc)
    order = np.argsort(w)[::-1][:2]
    expected = np.empty((4, 2))
    for c, idx in enumerate(order):
        vec = v[:, idx]
        first = vec[np.flatnonzero(np.abs(vec) > 1e-12)[0]]
        expected[:, c] = xc @ (vec if first > 0 else -vec)
    np.testing.assert_allclose(pca_project(x), expected, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_pca_is_deterministic_and_centred(seed):
    x = np.random.default_rng(seed).normal(size=(7, 5))
    a, b = pca_project(x), pca_project(x.copy())
    assert np.array_equal(a, b)
    np.testing.assert_allclose(a.mean(axis=0), 0.0, atol=1e-12)
    assert a[:, 0].var() >= a[:, 1].var() - 1e-12


def test_pca_export_csv(tmp_path):
    normal = InteractionMatrix.from_rows([[0, 1], [1, 2], [0, 2]], 3)
    coords, labels = pca_export([("Normal", normal), ("Random", np.array([[1.0, 1.0, 1.0]]))], tmp_path / "p.csv")
    assert labels == ["Normal"] * 3 + ["Random"]
    with open(tmp_path / "p.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "label"] and len(rows) == 5
    assert float(rows[1][0]) == coords[0, 0]


# detection

def test_knn_mean_distance_line():
    pts = np.array([[0.0], [1.0], [3.0]])
    np.testing.assert_allclose(knn_mean_distance(pts, 1), [1.0, 1.0, 2.0])
    np.testing.assert_allclose(knn_mean_distance(pts, 2), [2.0, 1.5, 2.5])
    with pytest.raises(ConfigError):
        knn_mean_distance(pts, 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_knn_matches_brute_force(seed, q):
    pts = np.random.default_rng(seed).normal(size=(9, 2))
    out = knn_mean_distance(pts, q, chunk=4)
    for i in range(9):
        d = sorted(math.dist(pts[i], pts[j]) for j in range(9) if j != i)
        assert out[i] == pytest.approx(np.mean(d[:q]), abs=1e-9)


def _toy_injected():
    genuine = random_matrix(np.random.default_rng(0), 40, 12, 0.3)
    fakes = InteractionMatrix.from_rows([[0, 1, 2]] * 5, 12)
    return inject(genuine, fakes)


def test_flag_everyone():
    y = _toy_injected()
    out = detect(y, 40, DetectorConfig(q=3, flag_fraction=1.0))
    assert out.precision == pytest.approx(5 / 45) and out.recall == 1.0


def test_flag_no_one():
    out = detect(_toy_injected(), 40, DetectorConfig(q=3, flag_fraction=0.0))
    assert (out.precision, out.recall, out.precision_undefined) == (0.0, 0.0, True)


def test_detect_needs_more_profiles_than_q():
    with pytest.raises(ConfigError):
        detect(InteractionMatrix.from_rows([[0]] * 5, 2), 4, DetectorConfig(q=5))


def test_detector_config_validation():
    with pytest.raises(ConfigError):
        DetectorConfig(q=0)
    with pytest.raises(ConfigError):
        DetectorConfig(flag_fraction=1.5)


def test_detect_flags_expected_count():
    y = _toy_injected()
    out = detect(y, 40, DetectorConfig(q=3, flag_fraction=0.55))
    assert out.flagged.size == round(0.55 * 45)
    assert 0.0 <= out.precision <= 1.0 and 0.0 <= out.recall <= 1.0
    top = set(np.argsort(-out.scores, kind="stable")[:out.flagged.size].tolist())
    assert top == set(out.flagged.tolist())


def test_score_flags_counts():
    is_fake = np.array([False, False, True, True])
    assert score_flags([1, 2], is_fake) == (0.5, 0.5, False)


# report

def _metrics(hr, mrr):
    return {"hr": hr, "mrr": mrr, "K": 10, "per_target": {"7": {"hr": hr, "mrr": mrr, "users": 3}}, "skipped": []}


def test_report_csv_and_save(tmp_path):
    rep = AttackReport(config={"a": 1}, config_hash="abc")
    rep.clean["MF"] = _metrics(0.0, 0.0)
    rep.add_cell("MF", "random", _metrics(0.5, 0.25))
    rep.detection["random"] = {"precision": 0.1, "recall": 0.2, "flagged": 3}
    assert rep.metrics_csv().splitlines() == [
        "victim,method,target,hr,mrr",
        "MF,none,mean,0.000000,0.000000",
        "MF,none,7,0.000000,0.000000",
        "MF,random,mean,0.500000,0.250000",
        "MF,random,7,0.500000,0.250000",
    ]
    rep.save(tmp_path)
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["cells"]["MF"]["random"]["hr"] == 0.5
    assert (tmp_path / "detection.csv").read_text().splitlines()[1] == "random,0.100000,0.200000,3"
    with pytest.raises(EvaluationError):
        rep.add_cell("MF", "bad", _metrics(0.1, 0.3))
