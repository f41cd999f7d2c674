"""IPS-weighted ranker training and scoring.

Five estimators share one training path: naive uses raw clicks, pbm
weights clicks by inverse rank propensity, opbm by inverse (rank, outlier
signature) propensity, opbm_lazy by the first outlier position only, and
oracle trains on true binarized labels. All five fit the same
boosted-stump learner so that differences in test rankings come from the
click correction, not from model capacity.

The IPS reduction is weighted binary classification: every record
contributes its click as the label; clicked records carry weight
min(1/theta, cap) and unclicked records weight 1. Clicked weights are
rescaled to mean 1, which changes no argmin (uniform rescaling of one
class of an affine loss) but makes trained models exactly invariant to
the overall scale of the propensity table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .clicksim import ClickLog, PropensityTable
from .corpus import RankingCorpus
from .learners import RelevanceModel, make_learner
from .metrics import ndcg_at_k
from .outliers import OutlierSignature
from .propensity_em import RegressionConfig

ESTIMATOR_KINDS = ("naive", "pbm", "opbm", "opbm_lazy", "oracle")
DEFAULT_WEIGHT_CAP = 1e4

_TABLE_KINDS = ("pbm", "opbm", "opbm_lazy")


@dataclass(frozen=True)
class EstimatorSpec:
    """Which click correction to apply when training from a log."""

    kind: str
    table: PropensityTable | None = None
    weight_cap: float = DEFAULT_WEIGHT_CAP

    def __post_init__(self) -> None:
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(
                "unknown estimator kind %r (expected one of %s)"
                % (self.kind, ", ".join(ESTIMATOR_KINDS))
            )
        if self.kind in _TABLE_KINDS and self.table is None:
            raise ValueError("estimator %r requires a propensity table" % self.kind)
        if self.weight_cap <= 1.0:
            raise ValueError("weight_cap must exceed 1")


def _record_signature(spec: EstimatorSpec, signature: OutlierSignature) -> OutlierSignature:
    if spec.kind == "pbm":
        return OutlierSignature.empty()
    if spec.kind == "opbm_lazy":
        return signature.lazy()
    return signature


def ips_weight(record, spec: EstimatorSpec) -> float:
    """Inverse-propensity weight of a single click record.

    Unclicked records weigh 0. Clicked records weigh 1 under naive and
    1/theta of the estimator's cell otherwise. Oracle does not reweight
    clicks at all.
    """
    if spec.kind == "oracle":
        raise ValueError("oracle trains on true labels, not IPS weights")
    if not record.clicked:
        return 0.0
    if spec.kind == "naive":
        return 1.0
    theta = spec.table.theta(record.rank, _record_signature(spec, record.signature))
    return 1.0 / theta


def ips_weights(log: ClickLog, spec: EstimatorSpec) -> np.ndarray:
    """Vectorized ips_weight over a whole log, in record order."""
    if spec.kind == "oracle":
        raise ValueError("oracle trains on true labels, not IPS weights")
    clicked = log.clicked.astype(float)
    if spec.kind == "naive":
        return clicked
    cells, cell_idx = log.cell_keys()
    theta_cells = np.array(
        [spec.table.theta(rank, _record_signature(spec, sig)) for rank, sig in cells]
    )
    return clicked / theta_cells[cell_idx]


def corrected_relevance_estimates(log: ClickLog, spec: EstimatorSpec) -> np.ndarray:
    """Per-pair relevance estimates: the mean corrected click c/theta.

    Averaging over a pair's impressions turns the per-record corrected
    clicks into the estimator's relevance estimate for that pair, aligned
    with ``log.pairs``. Under naive this is the raw click-through rate.
    """
    weights = ips_weights(log, spec)
    sums = np.bincount(log.pair_idx, weights=weights, minlength=log.n_pairs)
    counts = np.bincount(log.pair_idx, minlength=log.n_pairs)
    return sums / counts


def train_unbiased(
    log: ClickLog,
    features: np.ndarray,
    spec: EstimatorSpec,
    regression_config=None,
    seed: int = 0,
    oracle_labels: np.ndarray | None = None,
) -> RelevanceModel:
    """Fit the debiased relevance model for one estimator.

    Records pool into per-pair fractional labels with summed weights,
    which is loss-equivalent to per-record fitting because the weighted
    cross-entropy is affine in the label. ``oracle_labels`` (binary, one
    per log pair) replaces the click signal when spec.kind is oracle.
    """
    if regression_config is None:
        regression_config = RegressionConfig()
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] != log.n_pairs:
        raise ValueError(
            "features must have shape (%d, d), got %r" % (log.n_pairs, features.shape)
        )
    if spec.kind == "oracle":
        if oracle_labels is None:
            raise ValueError("oracle estimator requires oracle_labels per pair")
        y = np.asarray(oracle_labels, dtype=float)
        if y.shape != (log.n_pairs,):
            raise ValueError("oracle_labels must align with log.pairs")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("oracle_labels must be binary")
        pair_weights = np.ones(log.n_pairs)
    else:
        clicked = log.clicked.astype(float)
        if spec.kind == "naive":
            click_weights = clicked.copy()
        else:
            click_weights = np.minimum(ips_weights(log, spec), spec.weight_cap)
        n_clicked = log.n_clicks
        if n_clicked > 0:
            click_weights *= n_clicked / click_weights.sum()
        # unclicked records keep weight one; the label is the click itself
        record_weights = np.where(clicked == 1.0, click_weights, 1.0)
        weight_sum = np.bincount(log.pair_idx, weights=record_weights, minlength=log.n_pairs)
        label_sum = np.bincount(
            log.pair_idx, weights=record_weights * clicked, minlength=log.n_pairs
        )
        y = label_sum / weight_sum
        pair_weights = weight_sum
    learner = make_learner(
        regression_config.learner,
        regression_config.n_rounds,
        regression_config.learning_rate,
        loss="logistic",
        l2=regression_config.l2,
    )
    learner.fit(features, y, sample_weight=pair_weights)
    return RelevanceModel(
        learner=learner,
        feature_dim=features.shape[1],
        clamp_lo=regression_config.clamp_lo,
        clamp_hi=regression_config.clamp_hi,
    )


def score_and_rank(
    model: RelevanceModel, corpus: RankingCorpus
) -> dict[str, list[tuple[str, float]]]:
    """Rank every query's documents by descending model score.

    Ties break by ascending doc_id so rankings are reproducible across
    runs and input orderings.
    """
    if corpus.feature_dim != model.feature_dim:
        raise ValueError(
            "feature dim mismatch: corpus %d, model %d"
            % (corpus.feature_dim, model.feature_dim)
        )
    rankings: dict[str, list[tuple[str, float]]] = {}
    for group in corpus.groups:
        scores = model.score(group.features)
        order = np.lexsort((group.doc_ids, -scores))
        rankings[group.query_id] = [
            (group.doc_ids[i], float(scores[i])) for i in order
        ]
    return rankings


def write_rankings(rankings: dict[str, list[tuple[str, float]]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "doc_id", "rank", "score"])
        for query_id in sorted(rankings):
            for rank, (doc_id, score) in enumerate(rankings[query_id], start=1):
                writer.writerow([query_id, doc_id, rank, "%.12g" % score])


def read_rankings(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    """Inverse of write_rankings; rows must arrive rank-ordered per query."""
    rankings: dict[str, list[tuple[str, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"query_id", "doc_id", "rank", "score"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValueError("%s: expected header query_id,doc_id,rank,score" % path)
        for row in reader:
            docs = rankings.setdefault(row["query_id"], [])
            if int(row["rank"]) != len(docs) + 1:
                raise ValueError(
                    "%s: ranks of query %s are not consecutive from 1"
                    % (path, row["query_id"])
                )
            docs.append((row["doc_id"], float(row["score"])))
    if not rankings:
        raise ValueError("%s: no ranking rows" % path)
    return rankings


def mean_ndcg(
    model: RelevanceModel,
    corpus: RankingCorpus,
    k: int = 10,
    binary_gains: bool = False,
) -> float:
    """Mean NDCG@k of the model's rankings against the corpus grades."""
    total = 0.0
    for group in corpus.groups:
        scores = model.score(group.features)
        order = np.lexsort((group.doc_ids, -scores))
        ranked_grades = [group.grades[i] for i in order]
        total += ndcg_at_k(ranked_grades, k=k, binary_gains=binary_gains)
    return total / corpus.n_queries
