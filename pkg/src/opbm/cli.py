"""Command line front end.

Each subcommand wraps one pipeline stage with plain file interfaces
(svmlight corpora, CSV logs and tables, text model files), and
``experiment`` chains them all under a config file or preset. Everything
is seeded explicitly, so identical invocations write identical files.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

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
from .config import (
    PRESET_NAMES,
    ExperimentConfig,
    apply_overrides,
    load_config,
    preset,
)
from .corpus import (
    RankingCorpus,
    SplitSpec,
    load_corpus,
    split_corpus,
    synthesize_corpus,
    write_corpus,
    write_synthetic_manifest,
)
from .experiment import run_experiment, verify_results
from .learners import RelevanceModel
from .loglab import (
    ctr_by_outlier_group,
    outlier_vs_nonoutlier_summary,
    write_ctr_breakdown,
    write_outlier_contrast,
)
from .metrics import MetricReport, mean_binary_ce, write_metric_reports
from .outliers import (
    DEFAULT_DEGREE_THRESHOLD,
    ObservableFeatureSet,
    OutlierSignature,
    detect,
)
from .propensity_em import (
    EMConfig,
    RegressionConfig,
    export_table,
    export_trace,
    run_em,
)
from .ranker import (
    EstimatorSpec,
    corrected_relevance_estimates,
    mean_ndcg,
    read_rankings,
    score_and_rank,
    train_unbiased,
    write_rankings,
)


def _positions(text: str) -> tuple[int, ...]:
    if not text:
        return ()
    return tuple(int(p) for p in text.split(","))


def write_signatures(
    signatures: dict[str, OutlierSignature], path: str | Path
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "signature"])
        for qid in sorted(signatures):
            writer.writerow([qid, signatures[qid].encode()])


def read_signatures(path: str | Path) -> dict[str, OutlierSignature]:
    out: dict[str, OutlierSignature] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"query_id", "signature"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError("%s: expected header query_id,signature" % path)
        for row in reader:
            out[row["query_id"]] = OutlierSignature.decode(row["signature"])
    if not out:
        raise ValueError("%s: no signature rows" % path)
    return out


def _write_query_list(queries, path: str | Path) -> None:
    Path(path).write_text("".join("%s\n" % q for q in queries), encoding="utf-8")


def _read_query_list(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]


def _load_corpus_arg(args) -> RankingCorpus:
    fmt = "synthetic_manifest" if args.corpus.endswith(".ini") else "svmlight"
    return load_corpus(args.corpus, fmt=fmt)


# ------------------------------------------------------------- subcommands


def _cmd_synth(args) -> int:
    corpus = synthesize_corpus(
        args.queries, args.docs, args.features, seed=args.seed
    )
    write_corpus(corpus, args.out)
    print("wrote %d queries to %s" % (corpus.n_queries, args.out))
    if args.manifest:
        write_synthetic_manifest(
            args.manifest, args.queries, args.docs, args.features, args.seed
        )
        print("wrote manifest to %s" % args.manifest)
    return 0


def _read_sidecar(path: str) -> dict[tuple[str, str], np.ndarray]:
    table: dict[tuple[str, str], np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["query_id", "doc_id"]:
            raise ValueError(
                "%s: sidecar header must start with query_id,doc_id" % path
            )
        for row in reader:
            table[(row[0], row[1])] = np.array([float(v) for v in row[2:]])
    return table


def _cmd_detect(args) -> int:
    if (args.observable_cols is None) == (args.sidecar is None):
        print(
            "detect: pass exactly one of --observable-cols or --sidecar",
            file=sys.stderr,
        )
        return 2
    if args.observable_cols is not None and not args.corpus:
        print("detect: --observable-cols needs --corpus", file=sys.stderr)
        return 2
    corpus = _load_corpus_arg(args) if args.observable_cols is not None else None
    sidecar = _read_sidecar(args.sidecar) if args.sidecar is not None else None
    cols = _positions(args.observable_cols) if args.observable_cols else ()
    rankings = read_rankings(args.rankings)
    signatures: dict[str, OutlierSignature] = {}
    for qid, docs in rankings.items():
        presented = [d for d, _ in docs[: args.top_k]]
        if sidecar is not None:
            feats = np.array([sidecar[(qid, did)] for did in presented])
        else:
            group = corpus.group(qid)
            rows = [group.features[group.doc_ids.index(d)] for d in presented]
            feats = np.array(rows)[:, list(cols)]
        verdict = detect(ObservableFeatureSet(feats), threshold=args.threshold)
        signatures[qid] = verdict.signature(lazy=args.lazy)
    write_signatures(signatures, args.out)
    n_abnormal = sum(1 for s in signatures.values() if not s.is_empty)
    print(
        "wrote %d signatures (%d abnormal) to %s"
        % (len(signatures), n_abnormal, args.out)
    )
    return 0


def _cmd_simulate(args) -> int:
    corpus = _load_corpus_arg(args)
    split = split_corpus(
        corpus,
        SplitSpec(
            args.train_fraction,
            args.test_fraction,
            args.production_fraction,
            seed=args.seed,
        ),
    )
    production = train_production_ranker(
        split.production, seed=args.seed, n_rounds=args.production_rounds
    )
    if args.signatures:
        signatures = read_signatures(args.signatures)
    else:
        signatures = assign_outlier_signatures(
            split.train.query_ids,
            top_k=args.top_k,
            p_abnormal=args.p_abnormal,
            placement=args.placement,
            positions=_positions(args.positions),
            seed=args.seed,
        )
    table = PropensityTable.from_csv(args.table) if args.table else None
    config = ClickModelConfig(
        model=args.model,
        alpha=args.alpha,
        sigma=args.sigma,
        eta=args.eta,
        top_k=args.top_k,
        table=table,
        seed=args.seed,
    )
    log = simulate(
        split.train, production, signatures, config, n_clicks_target=args.n_clicks
    )
    log.to_csv(args.out)
    print(
        "wrote %d records (%d clicks, %d sessions) to %s"
        % (log.n_records, log.n_clicks, log.n_sessions, args.out)
    )
    if args.true_table_out:
        sigs = sorted(
            set(signatures.values()) - {OutlierSignature.empty()},
            key=lambda s: s.positions,
        )
        true_propensity_table(config, sigs).to_csv(args.true_table_out)
        print("wrote true propensity table to %s" % args.true_table_out)
    if args.test_queries_out and split.test is not None:
        _write_query_list(split.test.query_ids, args.test_queries_out)
        print("wrote test query ids to %s" % args.test_queries_out)
    return 0


def _cmd_estimate(args) -> int:
    log = ClickLog.from_csv(args.log).with_signatures(args.view)
    corpus = _load_corpus_arg(args)
    features = pair_feature_matrix(log, corpus)
    config = EMConfig(
        iterations=args.iterations,
        theta_floor=args.theta_floor,
        label_mode=args.label_mode,
        regression=RegressionConfig(
            n_rounds=args.rounds, learning_rate=args.learning_rate
        ),
        seed=args.seed,
    )
    state = run_em(log, features, config)
    export_table(state, args.table_out)
    print(
        "wrote %d propensity cells to %s (final log-likelihood %.4f)"
        % (len(state.theta), args.table_out, state.log_likelihood[-1])
    )
    if args.trace_out:
        export_trace(state, args.trace_out)
        print("wrote EM trace to %s" % args.trace_out)
    return 0


def _cmd_train(args) -> int:
    log = ClickLog.from_csv(args.log)
    corpus = _load_corpus_arg(args)
    features = pair_feature_matrix(log, corpus)
    table = PropensityTable.from_csv(args.table) if args.table else None
    spec = EstimatorSpec(
        kind=args.estimator, table=table, weight_cap=args.weight_cap
    )
    reg = RegressionConfig(n_rounds=args.rounds, learning_rate=args.learning_rate)
    labels = None
    if args.estimator == "oracle":
        labels = pair_relevance_labels(log, corpus).astype(float)
    model = train_unbiased(
        log, features, spec, reg, seed=args.seed, oracle_labels=labels
    )
    model.save(args.model_out)
    print("wrote %s model to %s" % (args.estimator, args.model_out))
    if args.rankings_out:
        target = corpus
        if args.rank_queries:
            target = corpus.subset(_read_query_list(args.rank_queries))
        write_rankings(score_and_rank(model, target), args.rankings_out)
        print("wrote rankings for %d queries to %s" % (target.n_queries, args.rankings_out))
    return 0


def _cmd_evaluate(args) -> int:
    model = RelevanceModel.load(args.model)
    full_corpus = _load_corpus_arg(args)
    corpus = full_corpus
    if args.queries:
        corpus = corpus.subset(_read_query_list(args.queries))
    ndcg = mean_ndcg(model, corpus, k=args.k, binary_gains=args.binary_gains)
    mean_ce = None
    n_records = 0
    if args.log:
        if not args.estimator:
            print("evaluate: --log needs --estimator", file=sys.stderr)
            return 2
        log = ClickLog.from_csv(args.log)
        n_records = log.n_records
        table = PropensityTable.from_csv(args.table) if args.table else None
        spec = EstimatorSpec(
            kind=args.estimator, table=table, weight_cap=args.weight_cap
        )
        mean_ce = mean_binary_ce(
            corrected_relevance_estimates(log, spec),
            pair_relevance_labels(log, full_corpus).astype(float),
        )
    report = MetricReport(
        estimator=args.name,
        ndcg=ndcg,
        ndcg_k=args.k,
        mean_ce=mean_ce,
        n_queries=corpus.n_queries,
        n_records=n_records,
        seed=args.seed,
    )
    write_metric_reports([report], args.out)
    line = "ndcg@%d %.6f" % (args.k, ndcg)
    if mean_ce is not None:
        line += "  mean_ce %.6f" % mean_ce
    print("%s: %s -> %s" % (args.name, line, args.out))
    return 0


def _cmd_analyze(args) -> int:
    log = ClickLog.from_csv(args.log)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    breakdown = ctr_by_outlier_group(log, min_support_fraction=args.min_support)
    csv_path = out_dir / "ctr_breakdown.csv"
    write_ctr_breakdown(breakdown, csv_path)
    print("wrote CTR breakdown to %s" % csv_path)
    try:
        contrast = outlier_vs_nonoutlier_summary(log)
    except ValueError as exc:
        print("contrast skipped: %s" % exc)
    else:
        json_path = out_dir / "outlier_contrast.json"
        write_outlier_contrast(contrast, json_path)
        print("wrote outlier contrast to %s" % json_path)
    if not args.no_figures:
        from . import figures

        p1 = figures.fig_ctr_per_position(breakdown, out_dir / "ctr_per_position.png")
        print("wrote figure %s" % p1)
        if breakdown.groups:
            p2 = figures.fig_group_curves(breakdown, out_dir / "ctr_by_group.png")
            print("wrote figure %s" % p2)
    return 0


def _cmd_experiment(args) -> int:
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            print("experiment: --set expects key=value, got %r" % item, file=sys.stderr)
            return 2
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if args.preset:
        config = preset(args.preset, overrides)
    elif args.config:
        config = load_config(args.config)
        if overrides:
            config = apply_overrides(config, overrides)
    else:
        config = ExperimentConfig()
        if overrides:
            config = apply_overrides(config, overrides)
    out = run_experiment(
        config, output_dir=args.out, render_figures=not args.no_figures
    )
    print("experiment %s finished: %s" % (config.name, out))
    aggregate = out / "aggregate.csv"
    if aggregate.exists():
        for line in aggregate.read_text(encoding="utf-8").strip().splitlines():
            print("  " + line)
    return 0


def _cmd_verify(args) -> int:
    problems = verify_results(args.dir)
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        return 1
    print("%s: all files match the manifest" % args.dir)
    return 0


# -------------------------------------------------------------- arg wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opbm",
        description="Outlier-aware click modeling and unbiased ranker training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic graded corpus")
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--docs", type=int, default=10)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="svmlight output path")
    p.add_argument("--manifest", default="", help="also write a regenerating manifest")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("detect", help="flag outlier items of ranked lists")
    p.add_argument("--corpus", help="svmlight corpus (or manifest .ini)")
    p.add_argument("--rankings", required=True, help="query_id,doc_id,rank,score CSV")
    p.add_argument("--observable-cols", default=None,
                   help="comma-separated feature indices observable to users")
    p.add_argument("--sidecar", default=None,
                   help="query_id,doc_id,<feature...> CSV of observable features")
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--threshold", type=float, default=DEFAULT_DEGREE_THRESHOLD)
    p.add_argument("--lazy", action="store_true",
                   help="keep only the first outlier position per list")
    p.add_argument("--out", required=True, help="query_id,signature CSV")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("simulate", help="simulate biased clicks over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default="pbm",
                   choices=("pbm", "opbm_g", "opbm_mg", "opbm_real"))
    p.add_argument("--alpha", type=float, default=0.75)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--table", default="", help="propensity table CSV for opbm_real")
    p.add_argument("--p-abnormal", type=float, default=0.5)
    p.add_argument("--placement", default="uniform",
                   choices=("none", "uniform", "fixed"))
    p.add_argument("--positions", default="", help="fixed outlier positions, e.g. 4,9")
    p.add_argument("--signatures", default="",
                   help="query_id,signature CSV overriding synthetic placement")
    p.add_argument("--n-clicks", type=int, default=100_000)
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--production-fraction", type=float, default=0.01)
    p.add_argument("--production-rounds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="click log CSV")
    p.add_argument("--true-table-out", default="",
                   help="also write the analytic propensity table")
    p.add_argument("--test-queries-out", default="",
                   help="also write the test split query ids")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="EM propensity estimation from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--view", default="full", choices=("full", "lazy", "empty"),
                   help="signature view: full outliers, first-only, or none")
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--label-mode", default="sample", choices=("sample", "soft"))
    p.add_argument("--rounds", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.2)
    p.add_argument("--theta-floor", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--table-out", required=True)
    p.add_argument("--trace-out", default="")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("train", help="train a debiased ranker from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--estimator", required=True,
                   choices=("naive", "pbm", "opbm", "opbm_lazy", "oracle"))
    p.add_argument("--table", default="", help="propensity table CSV")
    p.add_argument("--weight-cap", type=float, default=1e4)
    p.add_argument("--rounds", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", required=True)
    p.add_argument("--rankings-out", default="")
    p.add_argument("--rank-queries", default="",
                   help="limit exported rankings to these query ids")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", default="", help="restrict to these query ids")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--binary-gains", action="store_true")
    p.add_argument("--log", default="", help="click log for cross-entropy")
    p.add_argument("--estimator", default="", help="estimator kind for the CE weights")
    p.add_argument("--table", default="", help="propensity table for the CE weights")
    p.add_argument("--weight-cap", type=float, default=1e4)
    p.add_argument("--name", default="model", help="estimator label in the report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("analyze", help="observational analytics of a click log")
    p.add_argument("--log", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-support", type=float, default=0.01)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("experiment", help="run a multi-seed experiment grid")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (repeatable)")
    p.add_argument("--out", default=None, help="results directory override")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("verify", help="re-hash results against their manifest")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=_cmd_verify)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
