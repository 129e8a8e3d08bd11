"""Ranking metrics and label-derived ratios used for evaluation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionError, DomainError, UndefinedMetricError
from .inject import LabelState


def _prepare(scores, truth):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(truth).ravel()
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores vs {y.size} labels")
    if np.any(np.isnan(s)):
        raise DomainError("scores contain NaN")
    return s, y.astype(bool)


def auc_roc(scores, truth) -> float:
    """Mann-Whitney AUC: P(anomaly outscores normal), ties counting one half."""
    s, y = _prepare(scores, truth)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs at least one positive and one negative")
    # mid-ranks are multiples of 1/2, so the rank sum and U are exact in float64
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores, truth, tie_seed=None) -> float:
    """Average precision over positives in descending-score order.

    Tied scores keep ascending node order. With ``tie_seed`` the nodes are
    first permuted by ``default_rng(tie_seed)`` so ties are broken at random
    but reproducibly.
    """
    s, y = _prepare(scores, truth)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one positive")
    order = np.arange(s.size)
    if tie_seed is not None:
        order = np.random.default_rng(tie_seed).permutation(s.size)
    order = order[np.argsort(-s[order], kind="stable")]
    hits = y[order]
    tp = np.cumsum(hits)
    rank = np.arange(1, s.size + 1)
    precision = tp[hits] / rank[hits]
    return math.fsum(precision.tolist()) / n_pos


def pu_labels(ls: LabelState, subset) -> np.ndarray:
    """1 for labeled anomalies in ``subset``, 0 for everything else."""
    subset = np.asarray(subset, dtype=np.int64)
    return np.isin(subset, ls.positives).astype(np.int8)


def imbalance_ratio(ls: LabelState) -> float:
    """Negative-to-positive ratio of the training PU labels."""
    pos = np.intersect1d(ls.split.train, ls.positives).size
    if pos == 0:
        raise DomainError("imbalance ratio undefined: no labeled training anomalies")
    return (ls.split.train.size - pos) / pos


def config_fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class MetricReport:
    auc_roc: float
    auc_pr: float
    n_pos: int
    n_neg: int
    seed: int | None = None
    fingerprint: str = ""
    subset: str = "test"

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def evaluate(scores, ground_truth, nodes, seed=None, fingerprint="", subset="test"):
    """Score ``nodes`` against ground-truth anomaly membership."""
    nodes = np.asarray(nodes, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)[nodes]
    y = np.isin(nodes, ground_truth)
    return MetricReport(auc_roc(s, y), auc_pr(s, y), int(y.sum()), int((~y).sum()),
                        seed, fingerprint, subset)
