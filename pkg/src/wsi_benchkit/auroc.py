"""Binary AUROC with exact tie handling.

The statistic is the Mann-Whitney U normalised by ``n_pos * n_neg``: the
probability that a random positive outscores a random negative, with ties
between a positive and a negative score credited 0.5.  The fast path uses
midranks (O(n log n)); ``auroc_pairwise`` is the brute-force counting oracle
kept for verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingleClassRun
from .scores import PredictionSet


@dataclass(frozen=True)
class AurocValue:
    value: float
    n_pos: int
    n_neg: int


def _split(scores: np.ndarray, labels: np.ndarray):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClassRun("AUROC undefined: need at least one positive and one negative")
    return scores, labels, n_pos, n_neg


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc_scores(scores, labels) -> AurocValue:
    """Rank-based AUROC from raw score/label arrays."""
    scores, labels, n_pos, n_neg = _split(scores, labels)
    ranks = _midranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return AurocValue(value=u / (n_pos * n_neg), n_pos=n_pos, n_neg=n_neg)


def auroc(preds: PredictionSet) -> AurocValue:
    return auroc_scores(preds.scores, preds.labels)


def auroc_pairwise(scores, labels) -> AurocValue:
    """O(n_pos * n_neg) counting oracle: wins + half-credit for ties."""
    scores, labels, n_pos, n_neg = _split(scores, labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        wins += float((p > neg).sum()) + 0.5 * float((p == neg).sum())
    return AurocValue(value=wins / (n_pos * n_neg), n_pos=n_pos, n_neg=n_neg)
