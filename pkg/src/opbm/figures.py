"""Figure rendering for reports.

Everything renders through the Agg backend straight to PNG files, with
fixed sizes, explicit colors and stripped writer metadata, so the bytes
of a figure are a pure function of its inputs (given the matplotlib
version). The analytics and experiment layers stay plotting-free; this
module consumes their outputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .clicksim import PropensityTable  # noqa: E402
from .loglab import NORMAL_GROUP, CtrBreakdown  # noqa: E402

# fixed palette so series colors never depend on dict ordering
_COLORS = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

_SAVE_KWARGS = dict(dpi=120, metadata={"Software": None})


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)
    return path


def fig_ctr_per_position(breakdown: CtrBreakdown, path: str | Path) -> Path:
    """Outlier vs non-outlier CTR against rank."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    series = [
        ("non-outlier", breakdown.non_outlier_cells, _COLORS[0], "o"),
        ("outlier", breakdown.outlier_cells, _COLORS[1], "s"),
    ]
    for label, cells, color, marker in series:
        if not cells:
            continue
        ranks = sorted(cells)
        ax.plot(
            ranks,
            [cells[k].ctr for k in ranks],
            color=color,
            marker=marker,
            label=label,
        )
    ax.set_xlabel("rank")
    ax.set_ylabel("CTR")
    ax.set_title("CTR per position")
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def fig_group_curves(breakdown: CtrBreakdown, path: str | Path) -> Path:
    """One CTR curve per outlier-position group, normal rankings in black."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    labels = sorted(
        breakdown.groups, key=lambda g: (-1 if g == NORMAL_GROUP else int(g))
    )
    color_i = 0
    for label in labels:
        cells = breakdown.groups[label]
        if label == NORMAL_GROUP:
            color, name = "black", "normal"
        else:
            color = _COLORS[color_i % len(_COLORS)]
            color_i += 1
            name = "outlier at %s" % label
        ax.plot(
            [c.rank for c in cells],
            [c.ctr for c in cells],
            color=color,
            marker=".",
            label=name,
        )
    ax.set_xlabel("rank")
    ax.set_ylabel("CTR")
    ax.set_title("CTR by outlier position group")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _finish(fig, path)


def fig_propensity_heatmap(table: PropensityTable, path: str | Path) -> Path:
    """Estimated examination probability per (rank, signature) cell."""
    signatures = sorted(
        table.signatures(), key=lambda s: (len(s.positions), s.positions)
    )
    known = {(rank, sig): theta for rank, sig, theta in table.cells()}
    matrix = [
        [known.get((k, sig), float("nan")) for sig in signatures]
        for k in range(1, table.top_k + 1)
    ]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * len(signatures) + 2.0), 4.5))
    image = ax.imshow(matrix, aspect="auto", cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_yticks(range(table.top_k))
    ax.set_yticklabels([str(k) for k in range(1, table.top_k + 1)])
    ax.set_xticks(range(len(signatures)))
    ax.set_xticklabels([s.encode() for s in signatures], rotation=90, fontsize=7)
    ax.set_xlabel("outlier signature")
    ax.set_ylabel("rank")
    ax.set_title("examination propensities")
    fig.colorbar(image, ax=ax, shrink=0.8)
    fig.tight_layout()
    return _finish(fig, path)


def fig_metric(rows, metric: str, path: str | Path) -> Path:
    """Aggregate view of one metric: lines over alpha, or bars for one.

    ``rows`` are aggregate records with alpha/estimator/<metric>_mean/
    <metric>_std keys; estimators missing the metric (the oracle has no
    cross-entropy) are skipped.
    """
    mean_key, std_key = metric + "_mean", metric + "_std"
    rows = [r for r in rows if r.get(mean_key) is not None]
    if not rows:
        raise ValueError("no rows carry %s" % mean_key)
    estimators = list(dict.fromkeys(r["estimator"] for r in rows))
    alphas = sorted({r["alpha"] for r in rows})
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if len(alphas) > 1:
        for i, kind in enumerate(estimators):
            mine = {r["alpha"]: r for r in rows if r["estimator"] == kind}
            xs = [a for a in alphas if a in mine]
            means = [mine[a][mean_key] for a in xs]
            stds = [mine[a][std_key] or 0.0 for a in xs]
            color = _COLORS[i % len(_COLORS)]
            ax.plot(xs, means, color=color, marker="o", label=kind)
            ax.fill_between(
                xs,
                [m - s for m, s in zip(means, stds)],
                [m + s for m, s in zip(means, stds)],
                color=color,
                alpha=0.2,
                linewidth=0,
            )
        ax.set_xlabel("alpha")
    else:
        means = []
        stds = []
        for kind in estimators:
            row = next(r for r in rows if r["estimator"] == kind)
            means.append(row[mean_key])
            stds.append(row[std_key] or 0.0)
        xs = range(len(estimators))
        ax.bar(
            xs,
            means,
            yerr=stds,
            color=[_COLORS[i % len(_COLORS)] for i in xs],
            capsize=4,
        )
        ax.set_xticks(list(xs))
        ax.set_xticklabels(estimators)
    ax.set_ylabel(metric)
    ax.set_title("%s by estimator" % metric)
    if len(alphas) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3, axis="y")
    return _finish(fig, path)
