"""Evaluation metrics: NDCG, binary cross-entropy, two-sample t-test, CTR.

The t-test p-value is computed from scratch through the regularized
incomplete beta function so the package carries no statistics dependency;
the continued-fraction evaluation is accurate to well below 1e-10 over the
parameter range a t-test can produce.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from typing import NamedTuple, Sequence

import numpy as np

METRIC_SCHEMA_VERSION = 1

_CE_EPS_DEFAULT = 1e-6


def ndcg_at_k(
    ranked_grades: Sequence[float],
    ideal_source: Sequence[float] | None = None,
    k: int = 10,
    binary_gains: bool = False,
) -> float:
    """NDCG@k of a ranked list of relevance grades.

    Args:
        ranked_grades: grades in presented order, best rank first.
        ideal_source: grade multiset the ideal ranking is built from
            (sorted descending). Defaults to ``ranked_grades`` itself.
        k: cutoff, must be positive.
        binary_gains: use gain ``g`` instead of ``2**g - 1``.

    Returns:
        NDCG in [0, 1]. A list whose ideal DCG is zero (all grades zero)
        scores 0.0 by convention.
    """
    if k <= 0:
        raise ValueError("k must be positive, got %r" % (k,))
    grades = np.asarray(ranked_grades, dtype=float)
    ideal = grades if ideal_source is None else np.asarray(ideal_source, dtype=float)
    if grades.size and grades.min() < 0 or ideal.size and ideal.min() < 0:
        raise ValueError("relevance grades must be non-negative")
    dcg = _dcg(grades[:k], binary_gains)
    idcg = _dcg(np.sort(ideal)[::-1][:k], binary_gains)
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def _dcg(grades: np.ndarray, binary_gains: bool) -> float:
    if grades.size == 0:
        return 0.0
    gains = grades if binary_gains else np.exp2(grades) - 1.0
    ranks = np.arange(1, grades.size + 1, dtype=float)
    return float(np.sum(gains / np.log2(ranks + 1.0)))


def mean_binary_ce(
    predictions: Sequence[float],
    labels: Sequence[float],
    clamp_eps: float = _CE_EPS_DEFAULT,
) -> float:
    """Mean binary cross-entropy with prediction clamping.

    Predictions are clamped into [clamp_eps, 1 - clamp_eps] before taking
    logs, so inputs outside [0, 1] (for example inverse-propensity corrected
    clicks, which can exceed 1) stay finite.
    """
    p = np.asarray(predictions, dtype=float)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("predictions and labels must have equal length")
    if p.size == 0:
        raise ValueError("mean_binary_ce of empty input")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary")
    if not 0.0 < clamp_eps < 0.5:
        raise ValueError("clamp_eps must lie in (0, 0.5)")
    p = np.clip(p, clamp_eps, 1.0 - clamp_eps)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


class TTestResult(NamedTuple):
    statistic: float
    p_value: float
    df: float


def t_test_two_sample(
    a: Sequence[float], b: Sequence[float], welch: bool = False
) -> TTestResult:
    """Two-sided two-sample t-test.

    Pooled-variance Student's t by default, Welch's unequal-variance
    variant when ``welch`` is set. Degenerate zero-variance inputs follow
    the usual convention: equal means give (t=0, p=1), unequal means give
    (t=+/-inf, p=0).
    """
    xa = np.asarray(a, dtype=float)
    xb = np.asarray(b, dtype=float)
    if xa.size < 2 or xb.size < 2:
        raise ValueError("each sample needs at least two observations")
    na, nb = xa.size, xb.size
    ma, mb = float(xa.mean()), float(xb.mean())
    va = float(xa.var(ddof=1))
    vb = float(xb.var(ddof=1))
    diff = ma - mb
    if welch:
        denom_sq = va / na + vb / nb
        if denom_sq == 0.0:
            return _degenerate_ttest(diff, float(na + nb - 2))
        t = diff / math.sqrt(denom_sq)
        df = denom_sq**2 / (
            (va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1)
        )
    else:
        df = float(na + nb - 2)
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        if pooled == 0.0:
            return _degenerate_ttest(diff, df)
        t = diff / math.sqrt(pooled * (1.0 / na + 1.0 / nb))
    p = _t_sf_two_sided(t, df)
    return TTestResult(float(t), float(p), float(df))


def _degenerate_ttest(diff: float, df: float) -> TTestResult:
    if diff == 0.0:
        return TTestResult(0.0, 1.0, df)
    return TTestResult(math.copysign(math.inf, diff), 0.0, df)


def _t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided p-value for a t statistic with df degrees of freedom."""
    if math.isinf(t):
        return 0.0
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(0.5 * df, 0.5, x)


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Continued-fraction evaluation (modified Lentz) applied on whichever
    side of the symmetry point converges fast, following the classic
    numerical treatment.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    max_iter = 300
    eps = 3e-16
    fpmin = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def ctr(clicks: float, impressions: float) -> float:
    """Click-through rate with the 0/0 -> 0 convention.

    At most one click per impression, so clicks may never exceed
    impressions.
    """
    if clicks < 0 or impressions < 0:
        raise ValueError("clicks and impressions must be non-negative")
    if clicks > impressions:
        raise ValueError(
            "clicks (%r) exceed impressions (%r)" % (clicks, impressions)
        )
    if impressions == 0:
        return 0.0
    return clicks / impressions


@dataclass(frozen=True)
class MetricReport:
    """Evaluation summary for one trained relevance model on one corpus.

    ``mean_ce`` is None for estimators without corrected-click predictions
    (the full-information oracle).
    """

    estimator: str
    ndcg: float | None
    ndcg_k: int
    mean_ce: float | None
    n_queries: int
    n_records: int
    seed: int

    def to_json(self) -> str:
        payload = {"schema_version": METRIC_SCHEMA_VERSION}
        payload.update(asdict(self))
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def csv_header() -> list[str]:
        return [
            "schema_version",
            "estimator",
            "ndcg",
            "ndcg_k",
            "mean_ce",
            "n_queries",
            "n_records",
            "seed",
        ]

    def csv_row(self) -> list[str]:
        def fmt(v: float | int | str | None) -> str:
            if v is None:
                return ""
            if isinstance(v, float):
                return "%.12g" % v
            return str(v)

        return [
            str(METRIC_SCHEMA_VERSION),
            self.estimator,
            fmt(self.ndcg),
            str(self.ndcg_k),
            fmt(self.mean_ce),
            str(self.n_queries),
            str(self.n_records),
            str(self.seed),
        ]


def write_metric_reports(reports: Sequence[MetricReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricReport.csv_header())
        for report in reports:
            writer.writerow(report.csv_row())


def read_metric_reports(path) -> list[MetricReport]:
    reports = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            reports.append(
                MetricReport(
                    estimator=row["estimator"],
                    ndcg=float(row["ndcg"]) if row["ndcg"] else None,
                    ndcg_k=int(row["ndcg_k"]),
                    mean_ce=float(row["mean_ce"]) if row["mean_ce"] else None,
                    n_queries=int(row["n_queries"]),
                    n_records=int(row["n_records"]),
                    seed=int(row["seed"]),
                )
            )
    return reports
