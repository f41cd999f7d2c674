"""Click simulation under position bias and outlier bias.

Clicks follow the examination hypothesis: an item is clicked iff it is
examined and relevant, with examination probability depending on the rank
and, for the outlier-aware models, on where outliers sit in the ranking.
Available models:

- ``pbm``: examination (1/k)^eta, rank only.
- ``opbm_g``: a rank-k mixture (1-alpha)/k^eta + alpha N(k; o, sigma) of
  position bias and a Gaussian attention bump centered on the single
  outlier position o.
- ``opbm_mg``: the mean of ``opbm_g`` over every outlier position of the
  ranking, for rankings with multiple outliers.
- ``opbm_real``: examination read from a propensity table keyed by
  (rank, signature), typically estimated from logs.

Simulated relevance is the binarized grade, so the per-item click
probability is examination times binary relevance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .corpus import RankingCorpus, binarize_grades
from .learners import BoostedStumps, RelevanceModel
from .outliers import OutlierSignature

CLICK_MODELS = ("pbm", "opbm_g", "opbm_mg", "opbm_real")
DEFAULT_TOP_K = 10

PLACEMENT_MODES = ("none", "uniform", "fixed")


@dataclass(frozen=True)
class ClickModelConfig:
    """Parameters of the simulated click behavior."""

    model: str = "pbm"
    alpha: float = 0.75
    sigma: float = 1.0
    eta: float = 1.0
    top_k: int = DEFAULT_TOP_K
    table: "PropensityTable | None" = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.model not in CLICK_MODELS:
            raise ValueError("unknown click model %r (expected one of %s)" % (self.model, ", ".join(CLICK_MODELS)))
        if self.model in ("opbm_g", "opbm_mg"):
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError("alpha must lie in [0, 1]")
            if self.sigma <= 0.0:
                raise ValueError("sigma must be positive")
        if self.model == "opbm_real" and self.table is None:
            raise ValueError("opbm_real requires a propensity table")
        if self.eta < 0.0:
            raise ValueError("eta must be non-negative")
        if self.top_k < 1:
            raise ValueError("top_k must be positive")


class PropensityTable:
    """Examination propensities keyed by (rank, outlier signature).

    Every value lies in [0, 1] and the empty-signature column is total over
    ranks 1..K, so plain position-bias lookups never miss. CSV encoding is
    ``rank,signature,theta`` with ``-`` for the empty signature and
    ``+``-joined positions otherwise.
    """

    def __init__(self, cells: Mapping[tuple[int, OutlierSignature], float]):
        if not cells:
            raise ValueError("empty propensity table")
        self._cells: dict[tuple[int, OutlierSignature], float] = {}
        for (rank, sig), theta in cells.items():
            rank = int(rank)
            if rank < 1:
                raise ValueError("ranks are 1-based, got %d" % rank)
            if not isinstance(sig, OutlierSignature):
                raise ValueError("signature keys must be OutlierSignature")
            theta = float(theta)
            if not 0.0 <= theta <= 1.0:
                raise ValueError("theta(%d, %s)=%r outside [0, 1]" % (rank, sig.encode(), theta))
            self._cells[(rank, sig)] = theta
        self.top_k = max(rank for rank, _ in self._cells)
        empty_ranks = {rank for rank, sig in self._cells if sig.is_empty}
        missing = set(range(1, self.top_k + 1)) - empty_ranks
        if missing:
            raise ValueError(
                "empty-signature column is missing ranks %s (must be total over 1..%d)"
                % (sorted(missing), self.top_k)
            )

    def theta(self, rank: int, signature: OutlierSignature) -> float:
        try:
            return self._cells[(int(rank), signature)]
        except KeyError:
            raise ValueError(
                "uncovered signature: no propensity for rank=%d signature=%s"
                % (rank, signature.encode())
            ) from None

    def cells(self) -> list[tuple[int, OutlierSignature, float]]:
        return sorted(
            ((rank, sig, theta) for (rank, sig), theta in self._cells.items()),
            key=lambda row: (row[0], row[1].encode()),
        )

    def signatures(self) -> set[OutlierSignature]:
        return {sig for _, sig in self._cells}

    def scaled(self, factor: float) -> "PropensityTable":
        return PropensityTable(
            {key: theta * factor for key, theta in self._cells.items()}
        )

    def __len__(self) -> int:
        return len(self._cells)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PropensityTable):
            return NotImplemented
        return self._cells == other._cells

    def max_abs_difference(self, other: "PropensityTable") -> float:
        keys = set(self._cells) | set(other._cells)
        diff = 0.0
        for key in keys:
            a = self._cells.get(key)
            b = other._cells.get(key)
            if a is None or b is None:
                return math.inf
            diff = max(diff, abs(a - b))
        return diff

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "signature", "theta"])
            for rank, sig, theta in self.cells():
                writer.writerow([rank, sig.encode(), "%.17g" % theta])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PropensityTable":
        cells: dict[tuple[int, OutlierSignature], float] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"rank", "signature", "theta"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise ValueError("%s: expected header rank,signature,theta" % path)
            for lineno, row in enumerate(reader, start=2):
                try:
                    rank = int(row["rank"])
                    theta = float(row["theta"])
                except (TypeError, ValueError):
                    raise ValueError("%s line %d: malformed row %r" % (path, lineno, row)) from None
                sig = OutlierSignature.decode(row["signature"])
                key = (rank, sig)
                if key in cells:
                    raise ValueError("%s line %d: duplicate cell rank=%d signature=%s" % (path, lineno, rank, sig.encode()))
                cells[key] = theta
        return cls(cells)


def gaussian_density(x: float, mean: float, sigma: float) -> float:
    z = (x - mean) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def propensity(config: ClickModelConfig, rank: int, signature: OutlierSignature) -> float:
    """Examination probability of one rank under the configured model.

    The result is clamped into [0, 1] (the Gaussian bump can push the raw
    mixture above 1 for small sigma). An empty signature always reduces to
    plain position bias.
    """
    if rank < 1 or rank > config.top_k:
        raise ValueError("rank %d outside 1..%d" % (rank, config.top_k))
    if config.model == "opbm_real":
        return config.table.theta(rank, signature)
    pbm_value = (1.0 / rank) ** config.eta
    if config.model == "pbm" or signature.is_empty:
        return min(1.0, pbm_value)
    if config.model == "opbm_g":
        if len(signature.positions) != 1:
            raise ValueError(
                "opbm_g expects a single outlier position, got %s; use opbm_mg"
                % signature.encode()
            )
        mixed = _gauss_mixture(config, rank, signature.positions[0])
    elif config.model == "opbm_mg":
        mixed = float(
            np.mean([_gauss_mixture(config, rank, o) for o in signature.positions])
        )
    else:
        raise AssertionError("unreachable model %r" % config.model)
    return min(1.0, max(0.0, mixed))


def _gauss_mixture(config: ClickModelConfig, rank: int, outlier_position: int) -> float:
    pbm_value = (1.0 / rank) ** config.eta
    bump = gaussian_density(float(rank), float(outlier_position), config.sigma)
    return (1.0 - config.alpha) * pbm_value + config.alpha * bump


def true_propensity_table(
    config: ClickModelConfig, signatures: Sequence[OutlierSignature]
) -> PropensityTable:
    """The analytic propensity table for a set of signatures (plus empty)."""
    cells: dict[tuple[int, OutlierSignature], float] = {}
    wanted = {OutlierSignature.empty()} | set(signatures)
    for sig in wanted:
        for rank in range(1, config.top_k + 1):
            cells[(rank, sig)] = propensity(config, rank, sig)
    return PropensityTable(cells)


@dataclass(frozen=True)
class ClickRecord:
    """One presented item in one simulated or logged session."""

    session: int
    query_id: str
    doc_id: str
    rank: int
    signature: OutlierSignature
    impression: int
    clicked: int


class ClickLog:
    """Columnar click log: one entry per presented item.

    Pairs (query_id, doc_id) and signatures are interned; per-record
    columns are numpy arrays, so multi-million-record logs stay compact
    and the estimation loops can vectorize over them.
    """

    def __init__(
        self,
        pairs: list[tuple[str, str]],
        signatures: list[OutlierSignature],
        session: np.ndarray,
        pair_idx: np.ndarray,
        rank: np.ndarray,
        sig_idx: np.ndarray,
        impression: np.ndarray,
        clicked: np.ndarray,
        top_k: int | None = None,
    ):
        self.pairs = pairs
        self.signatures = signatures
        self.session = np.asarray(session, dtype=np.int64)
        self.pair_idx = np.asarray(pair_idx, dtype=np.int64)
        self.rank = np.asarray(rank, dtype=np.int64)
        self.sig_idx = np.asarray(sig_idx, dtype=np.int64)
        self.impression = np.asarray(impression, dtype=np.int64)
        self.clicked = np.asarray(clicked, dtype=np.int64)
        n = self.session.shape[0]
        for name in ("pair_idx", "rank", "sig_idx", "impression", "clicked"):
            if getattr(self, name).shape != (n,):
                raise ValueError("column %s disagrees on length" % name)
        if n == 0:
            raise ValueError("empty click log")
        if self.rank.min() < 1:
            raise ValueError("ranks are 1-based")
        if np.any(self.clicked > self.impression):
            raise ValueError("clicked without impression")
        self.top_k = int(top_k if top_k is not None else self.rank.max())

    @property
    def n_records(self) -> int:
        return int(self.session.shape[0])

    @property
    def n_clicks(self) -> int:
        return int(self.clicked.sum())

    @property
    def n_sessions(self) -> int:
        return int(np.unique(self.session).size)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return self.n_records

    def records(self) -> Iterator[ClickRecord]:
        for i in range(self.n_records):
            qid, did = self.pairs[self.pair_idx[i]]
            yield ClickRecord(
                session=int(self.session[i]),
                query_id=qid,
                doc_id=did,
                rank=int(self.rank[i]),
                signature=self.signatures[self.sig_idx[i]],
                impression=int(self.impression[i]),
                clicked=int(self.clicked[i]),
            )

    @classmethod
    def from_records(cls, records: Sequence[ClickRecord]) -> "ClickLog":
        pairs: list[tuple[str, str]] = []
        pair_lookup: dict[tuple[str, str], int] = {}
        sigs: list[OutlierSignature] = []
        sig_lookup: dict[OutlierSignature, int] = {}
        n = len(records)
        session = np.empty(n, dtype=np.int64)
        pair_idx = np.empty(n, dtype=np.int64)
        rank = np.empty(n, dtype=np.int64)
        sig_idx = np.empty(n, dtype=np.int64)
        impression = np.empty(n, dtype=np.int64)
        clicked = np.empty(n, dtype=np.int64)
        for i, rec in enumerate(records):
            key = (rec.query_id, rec.doc_id)
            if key not in pair_lookup:
                pair_lookup[key] = len(pairs)
                pairs.append(key)
            if rec.signature not in sig_lookup:
                sig_lookup[rec.signature] = len(sigs)
                sigs.append(rec.signature)
            session[i] = rec.session
            pair_idx[i] = pair_lookup[key]
            rank[i] = rec.rank
            sig_idx[i] = sig_lookup[rec.signature]
            impression[i] = rec.impression
            clicked[i] = rec.clicked
        return cls(pairs, sigs, session, pair_idx, rank, sig_idx, impression, clicked)

    def cell_keys(self) -> tuple[list[tuple[int, OutlierSignature]], np.ndarray]:
        """Unique (rank, signature) cells and the per-record cell index."""
        packed = self.sig_idx * (self.top_k + 1) + self.rank
        unique, inverse = np.unique(packed, return_inverse=True)
        keys = [
            (int(code % (self.top_k + 1)), self.signatures[int(code // (self.top_k + 1))])
            for code in unique
        ]
        return keys, inverse

    def query_ids_per_record(self) -> list[str]:
        return [self.pairs[i][0] for i in self.pair_idx]

    def with_signatures(self, mode: str) -> "ClickLog":
        """A copy whose signatures are re-keyed.

        ``full`` keeps them, ``lazy`` truncates each to its first outlier
        position, ``empty`` strips them entirely (plain position bias).
        """
        if mode == "full":
            mapped = list(self.signatures)
        elif mode == "lazy":
            mapped = [sig.lazy() for sig in self.signatures]
        elif mode == "empty":
            mapped = [OutlierSignature.empty() for _ in self.signatures]
        else:
            raise ValueError("unknown signature mode %r" % mode)
        new_sigs: list[OutlierSignature] = []
        lookup: dict[OutlierSignature, int] = {}
        remap = np.empty(len(mapped), dtype=np.int64)
        for i, sig in enumerate(mapped):
            if sig not in lookup:
                lookup[sig] = len(new_sigs)
                new_sigs.append(sig)
            remap[i] = lookup[sig]
        return ClickLog(
            pairs=self.pairs,
            signatures=new_sigs,
            session=self.session,
            pair_idx=self.pair_idx,
            rank=self.rank,
            sig_idx=remap[self.sig_idx],
            impression=self.impression,
            clicked=self.clicked,
            top_k=self.top_k,
        )

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["session", "query_id", "doc_id", "rank", "signature", "impression", "click"]
            )
            for rec in self.records():
                writer.writerow(
                    [
                        rec.session,
                        rec.query_id,
                        rec.doc_id,
                        rec.rank,
                        rec.signature.encode(),
                        rec.impression,
                        rec.clicked,
                    ]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "ClickLog":
        records = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"session", "query_id", "doc_id", "rank", "signature", "impression", "click"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise ValueError("%s: missing click log columns" % path)
            for lineno, row in enumerate(reader, start=2):
                try:
                    records.append(
                        ClickRecord(
                            session=int(row["session"]),
                            query_id=row["query_id"],
                            doc_id=row["doc_id"],
                            rank=int(row["rank"]),
                            signature=OutlierSignature.decode(row["signature"]),
                            impression=int(row["impression"]),
                            clicked=int(row["click"]),
                        )
                    )
                except (TypeError, ValueError) as exc:
                    raise ValueError("%s line %d: %s" % (path, lineno, exc)) from None
        if not records:
            raise ValueError("%s: empty click log" % path)
        return cls.from_records(records)


def pair_feature_matrix(log: ClickLog, corpus: RankingCorpus) -> np.ndarray:
    """Feature vectors aligned with ``log.pairs``."""
    rows = []
    for qid, did in log.pairs:
        group = corpus.group(qid)
        rows.append(group.features[group.doc_ids.index(did)])
    return np.asarray(rows, dtype=float)


def pair_relevance_labels(log: ClickLog, corpus: RankingCorpus) -> np.ndarray:
    """Binarized true relevance aligned with ``log.pairs``."""
    labels = []
    for qid, did in log.pairs:
        group = corpus.group(qid)
        labels.append(group.grades[group.doc_ids.index(did)])
    return binarize_grades(labels)


def train_production_ranker(
    production: RankingCorpus,
    seed: int = 0,
    n_rounds: int = 50,
    learning_rate: float = 0.1,
) -> RelevanceModel:
    """Fit the weak production ranker on the small production sample.

    Least-squares boosted stumps on graded labels (scaled to [0, 1]); the
    fit is deterministic, the seed is accepted for interface uniformity.
    """
    del seed  # the squared-loss fit has no random component
    X = np.vstack([g.features for g in production])
    y = np.concatenate([g.grades for g in production]).astype(float) / 4.0
    learner = BoostedStumps(n_rounds=n_rounds, learning_rate=learning_rate, loss="squared")
    learner.fit(X, y)
    return RelevanceModel(learner=learner, feature_dim=X.shape[1])


def rank_documents(
    model: RelevanceModel, group_features: np.ndarray, doc_ids: Sequence[str]
) -> np.ndarray:
    """Descending-score order with ascending doc_id as the tie-breaker."""
    scores = model.score(group_features)
    return np.lexsort((np.asarray(doc_ids, dtype=object), -scores))


def assign_outlier_signatures(
    query_ids: Sequence[str],
    top_k: int,
    p_abnormal: float,
    placement: str = "uniform",
    positions: Sequence[int] = (),
    seed: int = 0,
) -> dict[str, OutlierSignature]:
    """Synthetic outlier placement for simulated rankings.

    A fraction ``p_abnormal`` of rankings receives outliers; ``uniform``
    draws a single position uniformly from 1..top_k, ``fixed`` plants the
    given positions in every abnormal ranking, ``none`` leaves every
    ranking normal regardless of ``p_abnormal``.
    """
    if placement not in PLACEMENT_MODES:
        raise ValueError("unknown placement %r (expected one of %s)" % (placement, ", ".join(PLACEMENT_MODES)))
    if not 0.0 <= p_abnormal <= 1.0:
        raise ValueError("p_abnormal must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out: dict[str, OutlierSignature] = {}
    empty = OutlierSignature.empty()
    if placement == "fixed":
        if not positions:
            raise ValueError("fixed placement needs explicit positions")
        fixed = OutlierSignature(tuple(sorted(int(p) for p in positions)))
        if fixed.positions[-1] > top_k:
            raise ValueError("fixed outlier position beyond top_k=%d" % top_k)
    for qid in query_ids:
        if placement == "none" or rng.random() >= p_abnormal:
            out[qid] = empty
        elif placement == "fixed":
            out[qid] = fixed
        else:
            out[qid] = OutlierSignature((int(rng.integers(1, top_k + 1)),))
    return out


def simulate(
    corpus: RankingCorpus,
    ranker: RelevanceModel,
    signatures: Mapping[str, OutlierSignature],
    config: ClickModelConfig,
    n_clicks_target: int,
    session_cap: int | None = None,
    batch_size: int = 16384,
) -> ClickLog:
    """Simulate sessions until the click budget is met.

    Each session samples a query uniformly, presents the production
    ranking truncated to top_k, and draws independent Bernoulli clicks
    with probability examination * binary relevance. The loop stops at the
    first session that reaches ``n_clicks_target`` click events and errors
    out after ``session_cap`` sessions if the target is unreachable.
    """
    if n_clicks_target < 1:
        raise ValueError("n_clicks_target must be positive")
    if session_cap is None:
        session_cap = max(100_000, 1000 * n_clicks_target)
    n_queries = corpus.n_queries
    K = config.top_k

    pairs: list[tuple[str, str]] = []
    sig_list: list[OutlierSignature] = []
    sig_lookup: dict[OutlierSignature, int] = {}
    pair_grid = np.full((n_queries, K), -1, dtype=np.int64)
    click_prob = np.zeros((n_queries, K))
    presented = np.zeros((n_queries, K), dtype=bool)
    sig_of_query = np.zeros(n_queries, dtype=np.int64)
    for qi, group in enumerate(corpus):
        sig = signatures.get(group.query_id, OutlierSignature.empty())
        order = rank_documents(ranker, group.features, group.doc_ids)
        kq = min(K, group.n_docs)
        if not sig.is_empty and sig.positions[-1] > kq:
            raise ValueError(
                "query %s: outlier position %d beyond its presented list of %d items"
                % (group.query_id, sig.positions[-1], kq)
            )
        if sig not in sig_lookup:
            sig_lookup[sig] = len(sig_list)
            sig_list.append(sig)
        sig_of_query[qi] = sig_lookup[sig]
        gamma = binarize_grades(group.grades)
        for slot in range(kq):
            doc_pos = order[slot]
            pair_grid[qi, slot] = len(pairs)
            pairs.append((group.query_id, group.doc_ids[doc_pos]))
            theta = propensity(config, slot + 1, sig)
            click_prob[qi, slot] = theta * gamma[doc_pos]
            presented[qi, slot] = True

    rng = np.random.default_rng(config.seed)
    kept_queries: list[np.ndarray] = []
    kept_clicks: list[np.ndarray] = []
    total_clicks = 0
    total_sessions = 0
    done = False
    while not done:
        if total_sessions >= session_cap:
            raise RuntimeError(
                "click target unreachable: %d clicks after %d sessions (target %d)"
                % (total_clicks, total_sessions, n_clicks_target)
            )
        b = min(batch_size, session_cap - total_sessions)
        qs = rng.integers(0, n_queries, size=b)
        u = rng.random((b, K))
        clicks = u < click_prob[qs]
        per_session = clicks.sum(axis=1)
        cum = np.cumsum(per_session) + total_clicks
        reached = np.nonzero(cum >= n_clicks_target)[0]
        if reached.size:
            cut = int(reached[0]) + 1
            qs = qs[:cut]
            clicks = clicks[:cut]
            total_clicks = int(cum[cut - 1])
            total_sessions += cut
            done = True
        else:
            total_clicks = int(cum[-1]) if b else total_clicks
            total_sessions += b
        kept_queries.append(qs)
        kept_clicks.append(clicks)

    qs = np.concatenate(kept_queries)
    clicks = np.vstack(kept_clicks)
    n_sessions = qs.shape[0]
    mask = presented[qs]
    sessions_grid = np.broadcast_to(np.arange(n_sessions)[:, None], mask.shape)
    ranks_grid = np.broadcast_to(np.arange(1, K + 1)[None, :], mask.shape)
    log = ClickLog(
        pairs=pairs,
        signatures=sig_list,
        session=sessions_grid[mask],
        pair_idx=pair_grid[qs][mask],
        rank=ranks_grid[mask],
        sig_idx=np.repeat(sig_of_query[qs], mask.sum(axis=1)),
        impression=np.ones(int(mask.sum()), dtype=np.int64),
        clicked=clicks[mask].astype(np.int64),
        top_k=K,
    )
    return log
