"""Outlier detection in ranked lists via the interquartile-range rule.

An item is an outlier when at least one of its observable presentation
features (price, rating count, discount tag and the like) sticks out of the
interquartile fence computed over the presented list. Feature columns are
min-max normalized per list first, so degrees are comparable across
features and across lists; quartiles use linear interpolation between
order statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

MIN_LIST_LENGTH = 4
DEFAULT_DEGREE_THRESHOLD = 0.5
IQR_FACTOR = 1.5

EMPTY_SIGNATURE_TOKEN = "-"
SIGNATURE_JOIN_TOKEN = "+"


@dataclass(frozen=True)
class OutlierSignature:
    """Sorted 1-based outlier positions of one ranked list.

    The empty signature stands for a normal (outlier-free) ranking. The
    text encoding is ``-`` for empty and ``+``-joined positions otherwise,
    for example ``4+9``.
    """

    positions: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        pos = tuple(int(p) for p in self.positions)
        if any(p < 1 for p in pos):
            raise ValueError("outlier positions are 1-based, got %r" % (pos,))
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError("positions must be strictly ascending, got %r" % (pos,))
        object.__setattr__(self, "positions", pos)

    @property
    def is_empty(self) -> bool:
        return not self.positions

    def lazy(self) -> "OutlierSignature":
        """Keep only the first outlier position (lazy handling of multiples)."""
        if self.is_empty:
            return self
        return OutlierSignature((self.positions[0],))

    def encode(self) -> str:
        if self.is_empty:
            return EMPTY_SIGNATURE_TOKEN
        return SIGNATURE_JOIN_TOKEN.join(str(p) for p in self.positions)

    @classmethod
    def decode(cls, text: str) -> "OutlierSignature":
        text = text.strip()
        if text in ("", EMPTY_SIGNATURE_TOKEN):
            return cls(())
        try:
            positions = tuple(int(t) for t in text.split(SIGNATURE_JOIN_TOKEN))
        except ValueError:
            raise ValueError("cannot decode outlier signature %r" % text) from None
        return cls(tuple(sorted(positions)))

    @classmethod
    def empty(cls) -> "OutlierSignature":
        return cls(())


@dataclass
class ObservableFeatureSet:
    """Observable presentation features of one ranked list, top rank first."""

    values: np.ndarray
    feature_names: list[str] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2:
            raise ValueError("observable features must be a 2-d array")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observable features must be finite")
        if self.feature_names is not None and len(self.feature_names) != self.values.shape[1]:
            raise ValueError("feature_names length disagrees with columns")

    @property
    def n_items(self) -> int:
        return self.values.shape[0]


@dataclass
class OutlierVerdict:
    """Per-item outlier decision for one ranked list.

    ``signed_degrees`` keeps the direction of the excursion (positive above
    the upper fence, negative below the lower one); ``degrees`` is the
    magnitude actually compared with the threshold.
    """

    degrees: np.ndarray
    signed_degrees: np.ndarray
    is_outlier: np.ndarray
    threshold: float

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(int(i) + 1 for i in np.nonzero(self.is_outlier)[0])

    def signature(self, lazy: bool = False) -> OutlierSignature:
        sig = OutlierSignature(self.positions)
        return sig.lazy() if lazy else sig


def iqr_bounds(values: Sequence[float]) -> tuple[float, float]:
    """Interquartile fences (Q1 - 1.5 IQR, Q3 + 1.5 IQR).

    Quartiles are linearly interpolated at fractional order-statistic
    positions 0.25 (n-1) and 0.75 (n-1). Needs at least four values.
    """
    arr = np.sort(np.asarray(values, dtype=float))
    if arr.size < MIN_LIST_LENGTH:
        raise ValueError("need at least %d values for quartiles, got %d" % (MIN_LIST_LENGTH, arr.size))
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    q1 = _interpolated_quantile(arr, 0.25)
    q3 = _interpolated_quantile(arr, 0.75)
    iqr = q3 - q1
    return (q1 - IQR_FACTOR * iqr, q3 + IQR_FACTOR * iqr)


def _interpolated_quantile(sorted_values: np.ndarray, q: float) -> float:
    pos = q * (sorted_values.size - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return float(sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac)


def minmax_normalize(column: np.ndarray) -> np.ndarray:
    """Scale one feature column to [0, 1]; a constant column maps to zeros."""
    lo = column.min()
    hi = column.max()
    if hi == lo:
        return np.zeros_like(column)
    return (column - lo) / (hi - lo)


def detect(
    features: ObservableFeatureSet | np.ndarray,
    threshold: float = DEFAULT_DEGREE_THRESHOLD,
) -> OutlierVerdict:
    """Flag outlier items of one ranked list.

    Each column is min-max normalized over the list, fenced with the IQR
    rule, and every item's degree is its distance beyond the fence (zero
    inside). An item is an outlier iff any feature degree exceeds the
    threshold.
    """
    if not isinstance(features, ObservableFeatureSet):
        features = ObservableFeatureSet(np.asarray(features))
    if features.n_items < MIN_LIST_LENGTH:
        raise ValueError(
            "outlier detection needs at least %d items, got %d"
            % (MIN_LIST_LENGTH, features.n_items)
        )
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    n, m = features.values.shape
    signed = np.zeros((n, m))
    for j in range(m):
        col = minmax_normalize(features.values[:, j])
        lower, upper = iqr_bounds(col)
        above = np.maximum(0.0, col - upper)
        below = np.maximum(0.0, lower - col)
        signed[:, j] = above - below
    magnitudes = np.abs(signed)
    best = np.argmax(magnitudes, axis=1)
    rows = np.arange(n)
    degrees = magnitudes[rows, best]
    signed_degrees = signed[rows, best]
    is_outlier = degrees > threshold
    return OutlierVerdict(
        degrees=degrees,
        signed_degrees=signed_degrees,
        is_outlier=is_outlier,
        threshold=threshold,
    )
