"""Regression-based EM estimation of outlier-aware examination propensities.

The latent-variable model behind a click log is: click = examination and
relevance, with examination probability theta depending on the (rank,
outlier signature) cell and relevance probability gamma depending on the
query-document pair. The E-step computes posteriors of the two latent
events for unclicked records; the M-step re-estimates theta per cell as a
posterior mean and re-fits gamma as a regression function of the pair
features, which generalizes relevance across queries and keeps the number
of parameters bounded.

gamma is learned from features alone; the outlier signature enters only
through theta. Propensities are identified up to a scale shared with
gamma, so estimated tables are anchored at theta(rank 1, empty) = 1.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .clicksim import ClickLog, PropensityTable
from .learners import (
    DEFAULT_CLAMP_HI,
    DEFAULT_CLAMP_LO,
    RelevanceModel,
    make_learner,
)
from .outliers import OutlierSignature

logger = logging.getLogger(__name__)

THETA_FLOOR_DEFAULT = 1e-6
LABEL_MODES = ("sample", "soft")

# theta = 1 is an absorbing E-step state: at theta = 1 every unclicked
# record has examination posterior exactly 1 whatever gamma says, so a
# cell that touches the boundary can never be revised downward. Cells are
# therefore initialized and capped slightly inside the boundary; only the
# anchor cell (rank 1, empty signature) is pinned to exactly 1.
THETA_INIT_MARGIN = 0.05
THETA_CAP_MARGIN = 1e-3


@dataclass(frozen=True)
class RegressionConfig:
    """How the relevance regressor is fitted inside each M-step."""

    learner: str = "boosted_stumps"
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 2
    l2: float = 1e-3
    clamp_lo: float = DEFAULT_CLAMP_LO
    clamp_hi: float = DEFAULT_CLAMP_HI

    def __post_init__(self) -> None:
        if self.learner == "boosted_stumps" and self.max_leaves != 2:
            raise ValueError("depth-1 stumps have exactly two leaves")
        if not 0.0 < self.clamp_lo < self.clamp_hi < 1.0:
            raise ValueError("clamp bounds must satisfy 0 < lo < hi < 1")


@dataclass(frozen=True)
class EMConfig:
    """EM loop parameters: fixed iteration budget, no early stopping."""

    iterations: int = 20
    theta_floor: float = THETA_FLOOR_DEFAULT
    anchor_normalize: bool = True
    label_mode: str = "sample"
    regression: RegressionConfig = field(default_factory=RegressionConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0.0 < self.theta_floor < 1.0:
            raise ValueError("theta_floor must lie in (0, 1)")
        if self.label_mode not in LABEL_MODES:
            raise ValueError("label_mode must be one of %s" % (LABEL_MODES,))


@dataclass
class EMState:
    """Fitted EM output: the propensity cells, the relevance model, trace."""

    theta: dict[tuple[int, OutlierSignature], float]
    gamma_model: RelevanceModel
    iteration: int
    log_likelihood: list[float]
    anchor_scale: list[float] = field(default_factory=list)

    def propensity_table(self) -> PropensityTable:
        return PropensityTable(self.theta)


def posterior(theta, gamma, clicked):
    """E-step posteriors (P(E=1 | c), P(R=1 | c)) per record.

    For clicked records both are 1 (a click implies examination and
    relevance). For unclicked records:

        P(E=1 | C=0) = theta (1 - gamma) / (1 - theta gamma)
        P(R=1 | C=0) = (1 - theta) gamma / (1 - theta gamma)

    Scalars or arrays broadcast; scalar inputs return floats.
    """
    theta_a = np.asarray(theta, dtype=float)
    gamma_a = np.asarray(gamma, dtype=float)
    c = np.asarray(clicked)
    scalar = theta_a.ndim == 0 and gamma_a.ndim == 0 and c.ndim == 0
    theta_a, gamma_a, c = np.broadcast_arrays(theta_a, gamma_a, c)
    if np.any((theta_a < 0) | (theta_a > 1)) or np.any((gamma_a < 0) | (gamma_a > 1)):
        raise ValueError("theta and gamma must lie in [0, 1]")
    prod = theta_a * gamma_a
    clicked_mask = c.astype(bool)
    if np.any(clicked_mask & (prod <= 0.0)):
        raise ValueError("clicked record with zero click probability (theta*gamma == 0)")
    if np.any(~clicked_mask & (prod >= 1.0)):
        raise ValueError("division by zero: theta*gamma == 1 on an unclicked record")
    denom = np.where(clicked_mask, 1.0, 1.0 - prod)
    p_e1 = np.where(clicked_mask, 1.0, theta_a * (1.0 - gamma_a) / denom)
    p_r1 = np.where(clicked_mask, 1.0, (1.0 - theta_a) * gamma_a / denom)
    if scalar:
        return float(p_e1), float(p_r1)
    return p_e1, p_r1


def posterior_joint(theta, gamma, clicked):
    """Joint posteriors P(E=e, R=r | c) ordered (1,1), (1,0), (0,1), (0,0).

    The four terms form a distribution (they sum to 1) for either value of
    the click.
    """
    theta_a = np.asarray(theta, dtype=float)
    gamma_a = np.asarray(gamma, dtype=float)
    c = np.asarray(clicked)
    scalar = theta_a.ndim == 0 and gamma_a.ndim == 0 and c.ndim == 0
    theta_a, gamma_a, c = np.broadcast_arrays(theta_a, gamma_a, c)
    clicked_mask = c.astype(bool)
    prod = theta_a * gamma_a
    if np.any(~clicked_mask & (prod >= 1.0)):
        raise ValueError("division by zero: theta*gamma == 1 on an unclicked record")
    denom = np.where(clicked_mask, 1.0, 1.0 - prod)
    e1r1 = np.where(clicked_mask, 1.0, 0.0)
    e1r0 = np.where(clicked_mask, 0.0, theta_a * (1.0 - gamma_a) / denom)
    e0r1 = np.where(clicked_mask, 0.0, (1.0 - theta_a) * gamma_a / denom)
    e0r0 = np.where(clicked_mask, 0.0, (1.0 - theta_a) * (1.0 - gamma_a) / denom)
    if scalar:
        return float(e1r1), float(e1r0), float(e0r1), float(e0r0)
    return e1r1, e1r0, e0r1, e0r0


def update_theta(
    log: ClickLog,
    p_e1: np.ndarray,
    config: EMConfig,
    return_scale: bool = False,
):
    """M-step for theta: per-cell posterior mean of examination.

    Each (rank, signature) cell observed in the log gets the mean of
    ``c + (1 - c) P(E=1 | C=0)`` over its records, floored at theta_floor.
    With anchoring, the whole table is rescaled so theta(1, empty) = 1;
    values that would exceed 1 after rescaling are capped (the anchor cell
    is the largest in practice, so the cap is rarely live). With
    ``return_scale`` the result is a (table, scale) tuple, where scale is
    the divisor the anchoring applied (1.0 when anchoring is off).
    """
    p_e1 = np.asarray(p_e1, dtype=float)
    if p_e1.shape != (log.n_records,):
        raise ValueError("p_e1 must align with the log records")
    cells, cell_idx = log.cell_keys()
    c = log.clicked.astype(float)
    contrib = c + (1.0 - c) * p_e1
    sums = np.bincount(cell_idx, weights=contrib, minlength=len(cells))
    counts = np.bincount(cell_idx, minlength=len(cells))
    theta = sums / counts
    theta = np.maximum(theta, config.theta_floor)
    scale = 1.0
    if config.anchor_normalize:
        anchor_key = (1, OutlierSignature.empty())
        try:
            anchor_pos = cells.index(anchor_key)
            scale = theta[anchor_pos]
        except ValueError:
            scale = theta.max()
            logger.warning(
                "anchor cell (rank 1, empty signature) missing from the log; "
                "normalizing by the largest cell instead"
            )
        theta = np.minimum(theta / scale, 1.0)
        theta = np.maximum(theta, config.theta_floor)
    table = {key: float(val) for key, val in zip(cells, theta)}
    if return_scale:
        return table, float(scale)
    return table


def fit_relevance(
    log: ClickLog,
    p_r1: np.ndarray,
    features: np.ndarray,
    config: EMConfig,
    rng: np.random.Generator | None = None,
) -> RelevanceModel:
    """M-step for gamma: regress relevance posteriors on pair features.

    In ``sample`` mode each record contributes a Bernoulli draw from its
    relevance posterior (clicked records are relevant with probability 1);
    in ``soft`` mode the posterior itself is the target. Records of the
    same query-document pair are pooled into one weighted fractional
    target, which leaves the cross-entropy objective unchanged because it
    is affine in the label.
    """
    p_r1 = np.asarray(p_r1, dtype=float)
    if p_r1.shape != (log.n_records,):
        raise ValueError("p_r1 must align with the log records")
    features = np.asarray(features, dtype=float)
    if features.shape[0] != log.n_pairs:
        raise ValueError("features must align with log.pairs")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.label_mode == "sample":
        r = (rng.random(log.n_records) < p_r1).astype(float)
    else:
        r = p_r1
    label_sum = np.bincount(log.pair_idx, weights=r, minlength=log.n_pairs)
    n_per = np.bincount(log.pair_idx, minlength=log.n_pairs).astype(float)
    if np.any(n_per == 0):
        raise ValueError("log.pairs contains a pair with no records")
    y = label_sum / n_per
    if y.min() == y.max():
        warnings.warn(
            "all relevance labels are identical (%.3f); fitting a constant model" % y[0],
            stacklevel=2,
        )
    reg = config.regression
    learner = make_learner(
        reg.learner, reg.n_rounds, reg.learning_rate, loss="logistic", l2=reg.l2
    )
    learner.fit(features, y, sample_weight=n_per)
    return RelevanceModel(
        learner=learner,
        feature_dim=features.shape[1],
        clamp_lo=reg.clamp_lo,
        clamp_hi=reg.clamp_hi,
    )


def log_likelihood(
    log: ClickLog, theta_per_record: np.ndarray, gamma_per_record: np.ndarray
) -> float:
    """Bernoulli log-likelihood of the clicks: sum of
    c log(theta gamma) + (1 - c) log(1 - theta gamma)."""
    prod = np.asarray(theta_per_record) * np.asarray(gamma_per_record)
    c = log.clicked.astype(float)
    if np.any((prod <= 0.0) & (c == 1.0)) or np.any((prod >= 1.0) & (c == 0.0)):
        raise ValueError("degenerate click probability in likelihood")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(c == 1.0, np.log(prod), np.log1p(-prod))
    return float(terms.sum())


def run_em(log: ClickLog, features: np.ndarray, config: EMConfig) -> EMState:
    """Full regression-based EM loop over a click log.

    ``features`` holds one row per ``log.pairs`` entry. theta starts at
    1/rank in every signature column and gamma at a constant 0.5; each
    iteration runs the E-step, the theta update and the relevance fit,
    then records the log-likelihood under the updated parameters. The
    regression M-step is approximate, so small likelihood decreases can
    occur and are logged rather than raised.

    The E-step reads theta through a cap of 1 - THETA_CAP_MARGIN (and the
    1/rank init is offset the same way) so that no cell starts or gets
    trapped at the absorbing boundary; the reported table itself is not
    clipped.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[0] != log.n_pairs:
        raise ValueError(
            "features must have shape (%d, d), got %r" % (log.n_pairs, features.shape)
        )
    cells, cell_idx = log.cell_keys()
    theta_cells = np.minimum(
        np.array([1.0 / rank for rank, _ in cells]), 1.0 - THETA_INIT_MARGIN
    )
    gamma_pairs = np.full(log.n_pairs, 0.5)
    rng = np.random.default_rng(config.seed)
    c = log.clicked.astype(float)
    trace: list[float] = []
    scales: list[float] = []
    model: RelevanceModel | None = None
    theta_map: dict[tuple[int, OutlierSignature], float] = {
        key: float(val) for key, val in zip(cells, theta_cells)
    }
    for iteration in range(1, config.iterations + 1):
        theta_r = np.minimum(theta_cells, 1.0 - THETA_CAP_MARGIN)[cell_idx]
        gamma_r = gamma_pairs[log.pair_idx]
        p_e1, p_r1 = posterior(theta_r, gamma_r, c)
        theta_map, scale = update_theta(log, p_e1, config, return_scale=True)
        scales.append(scale)
        theta_cells = np.array([theta_map[key] for key in cells])
        model = fit_relevance(log, p_r1, features, config, rng)
        gamma_pairs = model.predict_proba(features)
        ll = log_likelihood(log, theta_cells[cell_idx], gamma_pairs[log.pair_idx])
        if trace and ll < trace[-1]:
            logger.warning(
                "log-likelihood decreased at iteration %d: %.6f -> %.6f",
                iteration,
                trace[-1],
                ll,
            )
        trace.append(ll)
    assert model is not None
    return EMState(
        theta=theta_map,
        gamma_model=model,
        iteration=config.iterations,
        log_likelihood=trace,
        anchor_scale=scales,
    )


def export_table(state: EMState, path: str | Path) -> None:
    """Write the estimated propensity table as rank,signature,theta CSV."""
    state.propensity_table().to_csv(path)


def export_trace(state: EMState, path: str | Path) -> None:
    """Write the per-iteration likelihood and anchor-scale trace as CSV."""
    import csv

    scales = state.anchor_scale or [float("nan")] * len(state.log_likelihood)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "log_likelihood", "theta_anchor_scale"])
        for i, (ll, scale) in enumerate(zip(state.log_likelihood, scales), start=1):
            writer.writerow([i, "%.12g" % ll, "%.12g" % scale])
