"""Observational click-log analytics.

Everything here is descriptive: no model is fitted, the log is only
aggregated. Three views of the same log answer the questions that
motivate outlier-aware propensities in the first place. Per-position CTR
split by the item-level outlier flag shows whether flagged items attract
extra clicks at their rank. Grouping whole rankings by their single
outlier position traces how one misplaced item reshapes the click curve
around it. The page-level contrast condenses that into per-class
averages with significance tests.

A "page" is one presented ranking, identified by (query, signature);
its impressions accumulate over sessions. All aggregation is plain
summation over records, so results do not depend on record order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clicksim import ClickLog
from .metrics import t_test_two_sample

DEFAULT_MIN_SUPPORT = 0.01
NORMAL_GROUP = "normal"


@dataclass(frozen=True)
class RankCell:
    """Click and impression totals for one rank within one series."""

    rank: int
    clicks: int
    impressions: int

    def __post_init__(self) -> None:
        if self.clicks > self.impressions:
            raise ValueError(
                "cell at rank %d has more clicks than impressions" % self.rank
            )

    @property
    def ctr(self) -> float:
        return self.clicks / self.impressions


@dataclass
class CtrBreakdown:
    """Per-rank CTR series split by outlier status, plus group curves.

    ``per_rank`` covers every record. ``outlier_cells`` holds records
    whose rank is an outlier position of their page, ``non_outlier_cells``
    the complement, so the two partition the log. ``groups`` maps a group
    label (a single outlier position, or ``normal``) to a whole-curve
    series over the group's pages; pages with two or more outliers belong
    to no position group and are left out of the curves.
    """

    per_rank: list[RankCell]
    outlier_cells: dict[int, RankCell]
    non_outlier_cells: dict[int, RankCell]
    groups: dict[str, list[RankCell]]
    suppressed_groups: int = 0


@dataclass(frozen=True)
class ClassStats:
    """Per-item averages for one outlier class, mean over pages."""

    avg_clicks: float
    avg_impressions: float
    avg_ctr: float


@dataclass(frozen=True)
class OutlierContrast:
    """Outlier vs non-outlier items on abnormal pages.

    Each metric is computed per page and class first, then averaged over
    pages; the per-page values are also the samples behind the p-values.
    p-values are None when fewer than two abnormal pages carry both
    classes.
    """

    outlier: ClassStats
    non_outlier: ClassStats
    p_clicks: float | None
    p_impressions: float | None
    p_ctr: float | None
    n_abnormal_pages: int


def _outlier_flags(log: ClickLog) -> np.ndarray:
    """Boolean per record: is the record's rank an outlier position of its page."""
    table = np.zeros((len(log.signatures), log.top_k + 1), dtype=bool)
    for i, sig in enumerate(log.signatures):
        for pos in sig.positions:
            if pos <= log.top_k:
                table[i, pos] = True
    return table[log.sig_idx, log.rank]


def _rank_cells(
    rank: np.ndarray, clicked: np.ndarray, impression: np.ndarray, top_k: int
) -> dict[int, RankCell]:
    clicks = np.bincount(rank, weights=clicked, minlength=top_k + 1)
    imps = np.bincount(rank, weights=impression, minlength=top_k + 1)
    return {
        k: RankCell(k, int(clicks[k]), int(imps[k]))
        for k in range(1, top_k + 1)
        if imps[k] > 0
    }


def ctr_per_position(log: ClickLog) -> CtrBreakdown:
    """CTR per rank, split by the item-level outlier flag.

    A record counts as outlier when its rank is one of its page's outlier
    positions; everything else is the non-outlier series, so the two
    series partition the log exactly. Ranks without impressions in a
    series are simply absent from it.
    """
    if log.n_records == 0:
        raise ValueError("empty click log")
    flags = _outlier_flags(log)
    total = _rank_cells(log.rank, log.clicked, log.impression, log.top_k)
    out = _rank_cells(
        log.rank[flags], log.clicked[flags], log.impression[flags], log.top_k
    )
    non = _rank_cells(
        log.rank[~flags], log.clicked[~flags], log.impression[~flags], log.top_k
    )
    return CtrBreakdown(
        per_rank=[total[k] for k in sorted(total)],
        outlier_cells=out,
        non_outlier_cells=non,
        groups={},
    )


def _page_codes(log: ClickLog) -> tuple[np.ndarray, int]:
    """Per-record page index and the number of distinct pages."""
    qids = log.query_ids_per_record()
    _, query_idx = np.unique(np.asarray(qids, dtype=object), return_inverse=True)
    packed = query_idx * len(log.signatures) + log.sig_idx
    _, page_idx = np.unique(packed, return_inverse=True)
    return page_idx, int(page_idx.max()) + 1


def ctr_by_outlier_group(
    log: ClickLog, min_support_fraction: float = DEFAULT_MIN_SUPPORT
) -> CtrBreakdown:
    """One CTR-vs-rank curve per single-outlier position group.

    Pages whose signature is exactly one position form that position's
    group; a group is emitted only when it holds at least
    ``min_support_fraction`` of all pages in the log. Normal pages always
    contribute their own curve under the ``normal`` label. Curves are
    raw counts, left for any downstream plotting layer to smooth.
    """
    if log.n_records == 0:
        raise ValueError("empty click log")
    if not 0.0 <= min_support_fraction <= 1.0:
        raise ValueError("min_support_fraction must lie in [0, 1]")
    base = ctr_per_position(log)

    # group id per signature: -1 normal, -2 multi-outlier, else the position
    sig_group = np.full(len(log.signatures), -2, dtype=np.int64)
    for i, sig in enumerate(log.signatures):
        if sig.is_empty:
            sig_group[i] = -1
        elif len(sig.positions) == 1:
            sig_group[i] = sig.positions[0]
    record_group = sig_group[log.sig_idx]

    page_idx, n_pages = _page_codes(log)
    page_group = np.full(n_pages, -2, dtype=np.int64)
    page_group[page_idx] = record_group
    support = np.bincount(page_group[page_group >= 0], minlength=log.top_k + 1)

    groups: dict[str, list[RankCell]] = {}
    suppressed = 0
    normal_mask = record_group == -1
    if normal_mask.any():
        cells = _rank_cells(
            log.rank[normal_mask],
            log.clicked[normal_mask],
            log.impression[normal_mask],
            log.top_k,
        )
        groups[NORMAL_GROUP] = [cells[k] for k in sorted(cells)]
    for pos in range(1, log.top_k + 1):
        if support[pos] == 0:
            continue
        if support[pos] < min_support_fraction * n_pages:
            suppressed += 1
            continue
        mask = record_group == pos
        cells = _rank_cells(
            log.rank[mask], log.clicked[mask], log.impression[mask], log.top_k
        )
        groups[str(pos)] = [cells[k] for k in sorted(cells)]
    base.groups = groups
    base.suppressed_groups = suppressed
    return base


def outlier_vs_nonoutlier_summary(log: ClickLog) -> OutlierContrast:
    """Per-class item averages over abnormal pages, with t-tests.

    On each abnormal page the outlier items and the remaining items are
    averaged separately (clicks per item, impressions per item, clicks
    over impressions); the page-level values are then averaged and
    compared across classes with a two-sample t-test. Pages missing
    either class are skipped.
    """
    if log.n_records == 0:
        raise ValueError("empty click log")
    flags = _outlier_flags(log)
    page_idx, n_pages = _page_codes(log)

    abnormal_sig = np.array([not s.is_empty for s in log.signatures])
    page_abnormal = np.zeros(n_pages, dtype=bool)
    page_abnormal[page_idx] = abnormal_sig[log.sig_idx]
    if not page_abnormal.any():
        raise ValueError(
            "no abnormal rankings in the log; the outlier contrast needs at "
            "least one page with a nonempty outlier signature (run outlier "
            "detection first, or simulate with p_abnormal > 0)"
        )

    stats: dict[bool, dict[str, np.ndarray]] = {}
    for is_outlier in (True, False):
        mask = flags == is_outlier
        pages = page_idx[mask]
        clicks = np.bincount(pages, weights=log.clicked[mask], minlength=n_pages)
        imps = np.bincount(pages, weights=log.impression[mask], minlength=n_pages)
        # distinct items per page and class, not record counts
        items = np.zeros(n_pages, dtype=np.int64)
        unique_pairs = np.unique(
            pages * log.n_pairs + log.pair_idx[mask]
        )
        np.add.at(items, unique_pairs // log.n_pairs, 1)
        stats[is_outlier] = {"clicks": clicks, "impressions": imps, "items": items}

    usable = (
        page_abnormal
        & (stats[True]["items"] > 0)
        & (stats[False]["items"] > 0)
        & (stats[True]["impressions"] > 0)
        & (stats[False]["impressions"] > 0)
    )
    if not usable.any():
        raise ValueError(
            "abnormal pages never carry both an outlier and a non-outlier "
            "item, so the two classes cannot be contrasted"
        )

    samples: dict[bool, dict[str, np.ndarray]] = {}
    for is_outlier in (True, False):
        s = stats[is_outlier]
        samples[is_outlier] = {
            "clicks": s["clicks"][usable] / s["items"][usable],
            "impressions": s["impressions"][usable] / s["items"][usable],
            "ctr": s["clicks"][usable] / s["impressions"][usable],
        }

    n_used = int(usable.sum())

    def pvalue(metric: str) -> float | None:
        if n_used < 2:
            return None
        return t_test_two_sample(
            samples[True][metric], samples[False][metric]
        ).p_value

    def class_stats(is_outlier: bool) -> ClassStats:
        s = samples[is_outlier]
        return ClassStats(
            avg_clicks=float(s["clicks"].mean()),
            avg_impressions=float(s["impressions"].mean()),
            avg_ctr=float(s["ctr"].mean()),
        )

    return OutlierContrast(
        outlier=class_stats(True),
        non_outlier=class_stats(False),
        p_clicks=pvalue("clicks"),
        p_impressions=pvalue("impressions"),
        p_ctr=pvalue("ctr"),
        n_abnormal_pages=n_used,
    )


def write_ctr_breakdown(breakdown: CtrBreakdown, path: str | Path) -> None:
    """Tidy ``rank,group,clicks,impressions,ctr`` CSV of every series."""
    series: list[tuple[str, list[RankCell]]] = [
        ("all", breakdown.per_rank),
        ("outlier", [breakdown.outlier_cells[k] for k in sorted(breakdown.outlier_cells)]),
        ("non_outlier", [breakdown.non_outlier_cells[k] for k in sorted(breakdown.non_outlier_cells)]),
    ]
    for label in sorted(breakdown.groups, key=_group_sort_key):
        series.append((label, breakdown.groups[label]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "group", "clicks", "impressions", "ctr"])
        for label, cells in series:
            for cell in cells:
                writer.writerow(
                    [cell.rank, label, cell.clicks, cell.impressions, "%.12g" % cell.ctr]
                )


def _group_sort_key(label: str) -> tuple[int, int]:
    if label == NORMAL_GROUP:
        return (0, 0)
    return (1, int(label))


def write_outlier_contrast(contrast: OutlierContrast, path: str | Path) -> None:
    """Summary JSON with per-class averages and p-values."""
    payload = {
        "outlier": vars(contrast.outlier),
        "non_outlier": vars(contrast.non_outlier),
        "p_values": {
            "clicks": contrast.p_clicks,
            "impressions": contrast.p_impressions,
            "ctr": contrast.p_ctr,
        },
        "n_abnormal_pages": contrast.n_abnormal_pages,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
