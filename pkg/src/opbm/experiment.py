"""Multi-run experiment orchestration.

One experiment is a grid of independent runs: every alpha value in the
config's grid times ``n_runs`` replicates. Run ``r`` derives its seed as
``base_seed + r`` and uses it for every stage (corpus, split, production
ranker, outlier placement, simulation, EM, training), so any run can be
reproduced alone and runs could execute in any order. A failed run is
recorded in the manifest and the others continue.

Results land in one directory: the canonical config copy, per-run metric
CSVs, the aggregate (mean, std) CSV, rendered figures, and a manifest
that lists every emitted file with its content hash. Nothing in the
outputs depends on wall-clock time, so a rerun with the same config
reproduces every file byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import __version__
from .clicksim import (
    ClickLog,
    ClickModelConfig,
    PropensityTable,
    assign_outlier_signatures,
    pair_feature_matrix,
    pair_relevance_labels,
    simulate,
    train_production_ranker,
    true_propensity_table,
)
from .config import ExperimentConfig, config_hash, save_config
from .corpus import RankingCorpus, SplitSpec, split_corpus, synthesize_corpus
from .metrics import MetricReport, mean_binary_ce, write_metric_reports
from .propensity_em import EMConfig, RegressionConfig, run_em
from .ranker import (
    EstimatorSpec,
    corrected_relevance_estimates,
    mean_ndcg,
    train_unbiased,
)

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_SCHEMA_VERSION = 1

# estimator kind -> the signature view its EM runs on
_EM_VIEW = {"pbm": "empty", "opbm": "full", "opbm_lazy": "lazy"}


def _alpha_label(alpha: float) -> str:
    return "alpha_%g" % alpha


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def run_one(
    config: ExperimentConfig,
    alpha: float,
    seed: int,
    real_table: PropensityTable | None = None,
    artifacts_out: dict | None = None,
) -> list[MetricReport]:
    """One replicate: simulate, estimate, train every estimator, evaluate.

    Pass a dict as ``artifacts_out`` to also receive the run's internals
    (click log, estimated and analytic propensity tables, pair labels,
    corpus split) for inspection beyond the metric reports.
    """
    corpus = synthesize_corpus(
        config.n_queries, config.docs_per_query, config.feature_dim, seed=seed
    )
    split = split_corpus(
        corpus,
        SplitSpec(
            config.train_fraction,
            config.test_fraction,
            config.production_fraction,
            seed=seed,
        ),
    )
    production = train_production_ranker(
        split.production, seed=seed, n_rounds=config.production_rounds
    )
    signatures = assign_outlier_signatures(
        split.train.query_ids,
        top_k=config.top_k,
        p_abnormal=config.p_abnormal,
        placement=config.placement,
        positions=config.outlier_positions,
        seed=seed,
    )
    click_config = ClickModelConfig(
        model=config.click_model,
        alpha=alpha,
        sigma=config.sigma,
        eta=config.eta,
        top_k=config.top_k,
        table=real_table,
        seed=seed,
    )
    log = simulate(
        split.train, production, signatures, click_config,
        n_clicks_target=config.n_clicks,
    )
    features = pair_feature_matrix(log, split.train)
    labels = pair_relevance_labels(log, split.train).astype(float)

    em_config = EMConfig(
        iterations=config.em_iterations,
        label_mode=config.em_label_mode,
        regression=RegressionConfig(
            n_rounds=config.em_regression_rounds,
            learning_rate=config.em_learning_rate,
        ),
        seed=seed,
    )
    tables: dict[str, PropensityTable] = {}
    for kind in config.estimators:
        view = _EM_VIEW.get(kind)
        if view is None or kind in tables:
            continue
        state = run_em(log.with_signatures(view), features, em_config)
        tables[kind] = state.propensity_table()

    train_reg = RegressionConfig(
        n_rounds=config.ranker_rounds, learning_rate=config.ranker_learning_rate
    )
    reports: list[MetricReport] = []
    for kind in config.estimators:
        spec = EstimatorSpec(
            kind=kind, table=tables.get(kind), weight_cap=config.weight_cap
        )
        if kind == "oracle":
            model = train_unbiased(
                log, features, spec, train_reg, seed=seed, oracle_labels=labels
            )
            mean_ce = None
        else:
            model = train_unbiased(log, features, spec, train_reg, seed=seed)
            mean_ce = mean_binary_ce(
                corrected_relevance_estimates(log, spec), labels
            )
        reports.append(
            MetricReport(
                estimator=kind,
                ndcg=mean_ndcg(model, split.test, k=config.ndcg_k),
                ndcg_k=config.ndcg_k,
                mean_ce=mean_ce,
                n_queries=split.test.n_queries,
                n_records=log.n_records,
                seed=seed,
            )
        )
    if artifacts_out is not None:
        artifacts_out.update(
            log=log,
            tables=tables,
            true_table=true_propensity_table(click_config, list(signatures.values())),
            labels=labels,
            split=split,
        )
    return reports


AGGREGATE_HEADER = [
    "alpha",
    "estimator",
    "n_runs",
    "ndcg_mean",
    "ndcg_std",
    "ce_mean",
    "ce_std",
]


def aggregate_rows(
    per_run: dict[float, list[list[MetricReport]]], estimators: tuple[str, ...]
) -> list[dict[str, object]]:
    """Mean and sample std per (alpha, estimator) over successful runs."""
    rows: list[dict[str, object]] = []
    for alpha in sorted(per_run):
        runs = per_run[alpha]
        for kind in estimators:
            ndcgs = [
                r.ndcg for run in runs for r in run if r.estimator == kind
            ]
            ces = [
                r.mean_ce
                for run in runs
                for r in run
                if r.estimator == kind and r.mean_ce is not None
            ]
            if not ndcgs:
                continue
            rows.append(
                {
                    "alpha": alpha,
                    "estimator": kind,
                    "n_runs": len(ndcgs),
                    "ndcg_mean": float(np.mean(ndcgs)),
                    "ndcg_std": float(np.std(ndcgs, ddof=1)) if len(ndcgs) > 1 else 0.0,
                    "ce_mean": float(np.mean(ces)) if ces else None,
                    "ce_std": float(np.std(ces, ddof=1)) if len(ces) > 1 else None,
                }
            )
    return rows


def write_aggregate(rows: list[dict[str, object]], path: Path) -> None:
    def fmt(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return "%.12g" % value
        return str(value)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for row in rows:
            writer.writerow([fmt(row[key]) for key in AGGREGATE_HEADER])


def read_aggregate(path: Path) -> list[dict[str, object]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for raw in csv.DictReader(fh):
            rows.append(
                {
                    "alpha": float(raw["alpha"]),
                    "estimator": raw["estimator"],
                    "n_runs": int(raw["n_runs"]),
                    "ndcg_mean": float(raw["ndcg_mean"]),
                    "ndcg_std": float(raw["ndcg_std"]),
                    "ce_mean": float(raw["ce_mean"]) if raw["ce_mean"] else None,
                    "ce_std": float(raw["ce_std"]) if raw["ce_std"] else None,
                }
            )
    return rows


def run_experiment(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    render_figures: bool = True,
) -> Path:
    """Execute the full grid and write results, returning the directory."""
    out = Path(output_dir if output_dir is not None else config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.ini")
    files: list[Path] = [out / "config.ini"]

    real_table = None
    if config.click_model == "opbm_real":
        real_table = PropensityTable.from_csv(config.propensity_table)

    run_entries: list[dict[str, object]] = []
    per_run: dict[float, list[list[MetricReport]]] = {}
    for alpha in config.alphas:
        per_run[alpha] = []
        for r in range(config.n_runs):
            seed = config.base_seed + r
            entry: dict[str, object] = {
                "alpha": alpha,
                "run": r,
                "seed": seed,
                "status": "ok",
            }
            try:
                reports = run_one(config, alpha, seed, real_table)
            except Exception as exc:
                entry["status"] = "error"
                entry["error"] = "%s: %s" % (type(exc).__name__, exc)
                logger.exception("run %d at alpha %g failed", r, alpha)
            else:
                per_run[alpha].append(reports)
                run_dir = out / "runs" / _alpha_label(alpha) / ("run_%d" % r)
                run_dir.mkdir(parents=True, exist_ok=True)
                metrics_path = run_dir / "metrics.csv"
                write_metric_reports(reports, metrics_path)
                files.append(metrics_path)
            run_entries.append(entry)

    rows = aggregate_rows(per_run, config.estimators)
    aggregate_path = out / "aggregate.csv"
    write_aggregate(rows, aggregate_path)
    files.append(aggregate_path)

    if render_figures and rows:
        from . import figures

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        files.append(figures.fig_metric(rows, "ndcg", fig_dir / "ndcg.png"))
        if any(row["ce_mean"] is not None for row in rows):
            files.append(figures.fig_metric(rows, "ce", fig_dir / "ce.png"))

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "toolkit_version": __version__,
        "experiment": config.name,
        "config_hash": config_hash(config),
        "runs": run_entries,
        "files": {
            str(path.relative_to(out)): file_sha256(path) for path in files
        },
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def verify_results(results_dir: str | Path) -> list[str]:
    """Re-hash every manifest entry; the list of drift messages is empty
    when the directory still matches what the experiment wrote."""
    out = Path(results_dir)
    manifest_path = out / MANIFEST_NAME
    if not manifest_path.exists():
        return ["missing %s" % MANIFEST_NAME]
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    problems: list[str] = []
    for rel, want in sorted(manifest.get("files", {}).items()):
        path = out / rel
        if not path.exists():
            problems.append("missing file: %s" % rel)
        elif file_sha256(path) != want:
            problems.append("hash drift: %s" % rel)
    return problems
