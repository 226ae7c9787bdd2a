"""Partition agreement indices and bad-point detection reporting."""

from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from .exceptions import DomainError

__all__ = [
    "rand_index",
    "adjusted_rand_index",
    "partition_with_bad",
    "bad_point_report",
    "BadPointReport",
]


def _contingency(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("partitions must be equal-length 1-d label vectors")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def rand_index(a, b):
    """Fraction of point pairs on which two partitions agree."""
    a = np.asarray(a)
    n = a.shape[0]
    if n < 2:
        raise DomainError("rand_index needs at least two points")
    table = _contingency(a, b)
    pairs_both = sum(comb(int(v), 2) for v in table.ravel())
    pairs_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    pairs_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    disagree = (pairs_a - pairs_both) + (pairs_b - pairs_both)
    return (total - disagree) / total


def adjusted_rand_index(a, b):
    """Hubert-Arabie adjusted Rand index.

    1 for identical partitions, expected 0 under independent random
    labelling, negative values possible.  When both partitions are a
    single class the chance-correction denominator vanishes; the
    partitions are then identical and 1 is returned by convention.
    """
    table = _contingency(a, b)
    n = int(table.sum())
    if n < 2:
        raise DomainError("adjusted_rand_index needs at least two points")
    sum_comb = sum(comb(int(v), 2) for v in table.ravel())
    sum_rows = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_cols = sum(comb(int(v), 2) for v in table.sum(axis=0))
    total = comb(n, 2)
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0
    return (sum_comb - expected) / (max_index - expected)


def partition_with_bad(labels, bad_flags):
    """Merge component labels and a bad mask into one partition.

    Flagged points form a single extra class above the largest label id,
    mirroring a ground truth where bad points are their own class.
    """
    labels = np.asarray(labels).astype(int).copy()
    bad_flags = np.asarray(bad_flags, dtype=bool)
    labels[bad_flags] = labels.max() + 1
    return labels


@dataclass(frozen=True)
class BadPointReport:
    lam: np.ndarray            # per-component good-point proportion
    eta: np.ndarray            # per-component inflation factor
    flagged_per_component: np.ndarray
    flagged: np.ndarray        # indices of flagged observations
    precision: Optional[float] = None
    recall: Optional[float] = None


def bad_point_report(result, truth=None):
    """Summarize contamination estimates and detected bad points.

    ``result`` is a FitResult; an observation is flagged when its
    posterior good-point probability under its assigned component falls
    below one half.  With ``truth`` supplied (boolean mask), detection
    precision and recall are included.
    """
    model = result.model
    G = model.G
    flagged_mask = np.asarray(result.bad_flags, dtype=bool)
    hard = np.asarray(result.hard_labels)
    per_comp = np.array([int(np.sum(flagged_mask & (hard == g))) for g in range(G)])
    precision = recall = None
    if truth is not None:
        truth = np.asarray(truth, dtype=bool)
        tp = int(np.sum(flagged_mask & truth))
        precision = tp / max(int(flagged_mask.sum()), 1)
        recall = tp / max(int(truth.sum()), 1)
    return BadPointReport(
        lam=np.array([c.lam for c in model.components]),
        eta=np.array([c.eta for c in model.components]),
        flagged_per_component=per_comp,
        flagged=np.nonzero(flagged_mask)[0],
        precision=precision,
        recall=recall,
    )
