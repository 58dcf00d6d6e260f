"""Injection, target-item hit metrics, unsupervised detection and PCA export."""

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionMatrix
from .errors import ConfigError, DimensionError, EvaluationError
from .victims import masked_scores

log = logging.getLogger(__name__)


def inject(y, y_a):
    """Row-stack fake profiles under the genuine ones; fakes get indices [n, n+k)."""
    if y.n_items != y_a.n_items:
        raise DimensionError(f"item universes differ: {y.n_items} vs {y_a.n_items}")
    if y_a.n_users == 0:
        return y
    return y.vstack(y_a)


@dataclass
class TargetMetrics:
    hr: float
    mrr: float
    per_target: dict
    skipped: list
    K: int

    def to_dict(self):
        return {
            "hr": self.hr,
            "mrr": self.mrr,
            "K": self.K,
            "per_target": {str(t): v for t, v in self.per_target.items()},
            "skipped": list(self.skipped),
        }


def target_ranks(scores, target):
    """1-based rank of ``target`` in each row; ties go to the lower item index.

    Rows where the target score is -inf (excluded) get rank 0.
    """
    st = scores[:, target][:, None]
    above = (scores > st).sum(axis=1)
    tied_before = (scores[:, :target] == st).sum(axis=1)
    ranks = 1 + above + tied_before
    ranks[~np.isfinite(st[:, 0])] = 0
    return ranks


def attack_metrics(model, targets, train, users=None, K=10, chunk=512):
    """HR@K and MRR@K of each target over genuine users who have not interacted with it.

    ``train`` is the genuine training matrix; ``users`` defaults to all of its rows.
    """
    targets = [int(t) for t in targets]
    if not targets:
        raise ConfigError("no target items")
    users = np.arange(train.n_users) if users is None else np.asarray(users)
    hits = {t: 0 for t in targets}
    rr = {t: 0.0 for t in targets}
    eligible = {t: 0 for t in targets}
    for lo in range(0, users.size, chunk):
        block = users[lo:lo + chunk]
        s = masked_scores(model, block, train)
        for t in targets:
            r = target_ranks(s, t)
            ok = r > 0
            eligible[t] += int(ok.sum())
            top = ok & (r <= K)
            hits[t] += int(top.sum())
            rr[t] += float((1.0 / r[top]).sum())
    per_target = {}
    skipped = []
    for t in targets:
        if eligible[t] == 0:
            log.warning("target %d was interacted with by every evaluated user; skipped", t)
            skipped.append(t)
            continue
        per_target[t] = {"hr": hits[t] / eligible[t], "mrr": rr[t] / eligible[t], "users": eligible[t]}
    if not per_target:
        raise EvaluationError("every target was skipped")
    hr = float(np.mean([v["hr"] for v in per_target.values()]))
    mrr = float(np.mean([v["mrr"] for v in per_target.values()]))
    return TargetMetrics(hr, mrr, per_target, skipped, K)


def pca_project(x, n_components=2):
    """Project rows onto the top principal components of the centred data.

    Each component's sign is fixed so its first nonzero loading is positive.
    Missing components (rank-deficient input) come back as zero columns.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ConfigError("PCA needs at least two rows")
    xc = x - x.mean(axis=0)
    _, sv, vt = np.linalg.svd(xc, full_matrices=False)
    out = np.zeros((x.shape[0], n_components))
    tol = max(x.shape) * np.finfo(np.float64).eps * (sv[0] if sv.size else 0.0)
    for c in range(min(n_components, vt.shape[0])):
        if sv[c] <= tol:
            break
        v = vt[c]
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if nz.size and v[nz[0]] < 0:
            v = -v
        out[:, c] = xc @ v
    return out


def knn_mean_distance(points, q, chunk=1024):
    """Mean Euclidean distance from each point to its ``q`` nearest other points."""
    n = points.shape[0]
    if n <= q:
        raise ConfigError(f"need more than q={q} profiles, got {n}")
    sq = (points * points).sum(axis=1)
    out = np.empty(n)
    for lo in range(0, n, chunk):
        p = points[lo:lo + chunk]
        d2 = sq[lo:lo + chunk, None] + sq[None, :] - 2.0 * p @ points.T
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(p.shape[0]), np.arange(lo, lo + p.shape[0])] = np.inf
        near = np.partition(d2, q - 1, axis=1)[:, :q]
        out[lo:lo + chunk] = np.sqrt(near).mean(axis=1)
    return out


@dataclass(frozen=True)
class DetectorConfig:
    q: int = 10
    flag_fraction: float = 0.55
    components: int = 2

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("q must be >= 1")
        if not 0.0 <= self.flag_fraction <= 1.0:
            raise ConfigError("flag_fraction must be in [0, 1]")


@dataclass
class DetectorOutput:
    scores: np.ndarray
    flagged: np.ndarray
    precision: float
    recall: float
    precision_undefined: bool = False

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "flagged": int(self.flagged.size),
            "precision_undefined": self.precision_undefined,
        }


def score_flags(flagged, is_fake):
    """Precision and recall of a flagged set; precision is 0 (and marked undefined) when nothing is flagged."""
    flagged = np.asarray(flagged, dtype=np.int64)
    n_fake = int(is_fake.sum())
    tp = int(is_fake[flagged].sum()) if flagged.size else 0
    if flagged.size == 0:
        return 0.0, 0.0, True
    recall = tp / n_fake if n_fake else 0.0
    return tp / flagged.size, recall, False


def detect(y_prime, n_genuine, cfg=DetectorConfig()):
    """Flag the most isolated profiles in a 2-D PCA projection of all rows.

    Rows ``[n_genuine, n)`` are the known fakes; the labels are only used for scoring.
    """
    n = y_prime.n_users
    if n <= cfg.q:
        raise ConfigError(f"need more than q={cfg.q} profiles, got {n}")
    coords = pca_project(y_prime.to_dense(), cfg.components)
    scores = knn_mean_distance(coords, cfg.q)
    n_flag = int(round(cfg.flag_fraction * n))
    order = np.lexsort((np.arange(n), -scores))
    flagged = np.sort(order[:n_flag])
    is_fake = np.arange(n) >= n_genuine
    precision, recall, undefined = score_flags(flagged, is_fake)
    return DetectorOutput(scores, flagged, precision, recall, undefined)


def pca_export(groups, path=None):
    """Jointly project labelled profile matrices and optionally write ``x,y,label`` CSV.

    ``groups`` is a sequence of ``(label, InteractionMatrix or dense array)``.
    Returns ``(coords, labels)``.
    """
    blocks, labels = [], []
    for label, rows in groups:
        dense = rows.to_dense() if isinstance(rows, InteractionMatrix) else np.asarray(rows, dtype=np.float64)
        blocks.append(dense)
        labels.extend([label] * dense.shape[0])
    coords = pca_project(np.vstack(blocks), 2)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "label"])
            for (x, y), label in zip(coords, labels):
                w.writerow([repr(float(x)), repr(float(y)), label])
    return coords, labels


@dataclass
class AttackReport:
    """Results per (victim kind, attack method) plus run bookkeeping."""

    config: dict = field(default_factory=dict)
    config_hash: str = ""
    cells: dict = field(default_factory=dict)
    clean: dict = field(default_factory=dict)
    detection: dict = field(default_factory=dict)
    runtimes: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    targets: list = field(default_factory=list)
    recommendation: dict = field(default_factory=dict)
    cached: list = field(default_factory=list)

    def add_cell(self, victim, method, metrics):
        metrics = metrics.to_dict() if hasattr(metrics, "to_dict") else metrics
        check_metrics(metrics)
        self.cells.setdefault(victim, {})[method] = metrics

    def metrics_rows(self):
        rows = []
        for victim in sorted(self.clean):
            m = self.clean[victim]
            rows.append((victim, "none", m["hr"], m["mrr"]))
        for victim in sorted(self.cells):
            for method in sorted(self.cells[victim]):
                m = self.cells[victim][method]
                rows.append((victim, method, m["hr"], m["mrr"]))
        return rows

    def metrics_csv(self):
        """Victim x method table of HR/MRR, mean over targets then one row per target."""
        lines = ["victim,method,target,hr,mrr"]
        for victim, method, hr, mrr in self.metrics_rows():
            lines.append(f"{victim},{method},mean,{hr:.6f},{mrr:.6f}")
            cell = self.clean[victim] if method == "none" else self.cells[victim][method]
            for t in sorted(cell["per_target"], key=int):
                v = cell["per_target"][t]
                lines.append(f"{victim},{method},{t},{v['hr']:.6f},{v['mrr']:.6f}")
        return "\n".join(lines) + "\n"

    def detection_csv(self):
        lines = ["method,precision,recall,flagged"]
        for method in sorted(self.detection):
            d = self.detection[method]
            lines.append(f"{method},{d['precision']:.6f},{d['recall']:.6f},{d['flagged']}")
        return "\n".join(lines) + "\n"

    def to_dict(self):
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "targets": self.targets,
            "seeds": self.seeds,
            "clean": self.clean,
            "cells": self.cells,
            "detection": self.detection,
            "runtimes": self.runtimes,
            "inputs": self.inputs,
            "recommendation": self.recommendation,
            "cached": self.cached,
        }

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.json"), "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        with open(os.path.join(directory, "metrics.csv"), "w") as fh:
            fh.write(self.metrics_csv())
        if self.detection:
            with open(os.path.join(directory, "detection.csv"), "w") as fh:
                fh.write(self.detection_csv())


def check_metrics(metrics):
    """Assert ``0 <= MRR <= HR <= 1`` for the mean and every per-target entry of a metrics dict."""
    cells = [metrics] + list(metrics["per_target"].values())
    for c in cells:
        if not (0.0 <= c["mrr"] <= c["hr"] <= 1.0):
            raise EvaluationError(f"metric invariant violated: hr={c['hr']}, mrr={c['mrr']}")
