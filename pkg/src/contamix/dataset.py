"""Observation container shared by fitting, simulation and I/O."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DataError

__all__ = ["Dataset"]


@dataclass(frozen=True)
class Dataset:
    """An n x p observation matrix with optional labels and bad-point truth.

    Missing values are rejected at construction; labels, when present,
    are integer class ids and ``bad_truth`` a boolean mask of the same
    length as ``x``.
    """

    x: np.ndarray
    feature_names: tuple = ()
    labels: Optional[np.ndarray] = None
    bad_truth: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2:
            raise DataError(f"expected a 2-d observation matrix, got shape {x.shape}")
        if x.shape[0] < 1 or x.shape[1] < 1:
            raise DataError(f"dataset must be non-empty, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise DataError("non-finite value in observation matrix",
                            row=int(bad[0]), column=int(bad[1]))
        object.__setattr__(self, "x", x)
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("feature_names length does not match column count")
        object.__setattr__(self, "feature_names", names)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (x.shape[0],):
                raise DataError("labels length does not match row count")
            object.__setattr__(self, "labels", labels)
        if self.bad_truth is not None:
            flags = np.asarray(self.bad_truth, dtype=bool)
            if flags.shape != (x.shape[0],):
                raise DataError("bad_truth length does not match row count")
            object.__setattr__(self, "bad_truth", flags)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    def truth_partition(self):
        """Labels with truly-bad rows mapped to their own class.

        Bad points form one extra class above the largest label id, so a
        fitted partition can be scored against (components + bad) truth.
        """
        if self.labels is None:
            raise DataError("dataset carries no labels")
        labels = np.asarray(self.labels).copy()
        if self.bad_truth is not None and labels.dtype.kind in "iu":
            labels = labels.astype(int)
            labels[self.bad_truth] = labels.max() + 1
        return labels
