"""Ranking corpora: svmlight-with-qid I/O, synthetic data, splits.

A corpus is a list of query groups, each holding the documents retrieved
for one query with dense feature vectors and graded relevance labels in
0..4. Relevance is binarized with the ``grade > 2`` rule wherever a click
model needs a Bernoulli relevance parameter.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

GRADE_MIN = 0
GRADE_MAX = 4
BINARY_RELEVANCE_THRESHOLD = 2

# Fixed five-level grade distribution for synthetic corpora, skewed toward
# irrelevant documents the way judged ranking collections usually are.
# roughly half the synthetic documents binarize to relevant; that matches
# the EM's constant-0.5 relevance start and keeps click simulation cheap
SYNTHETIC_GRADE_PROBS = (0.25, 0.15, 0.10, 0.25, 0.25)

# feature signal scale: large enough that relevance is learnable from
# features across queries, small enough that grades stay noisy per item
GRADE_SIGNAL_SCALE = 0.7


@dataclass
class QueryGroup:
    """Documents retrieved for a single query."""

    query_id: str
    doc_ids: list[str]
    features: np.ndarray
    grades: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.grades = np.asarray(self.grades, dtype=int)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        n = len(self.doc_ids)
        if self.features.shape[0] != n or self.grades.shape[0] != n:
            raise ValueError(
                "query %r: doc_ids, features and grades disagree on length"
                % self.query_id
            )
        if len(set(self.doc_ids)) != n:
            raise ValueError("query %r: duplicate doc_id" % self.query_id)
        if not np.all(np.isfinite(self.features)):
            raise ValueError("query %r: non-finite feature value" % self.query_id)
        if self.grades.size and (
            self.grades.min() < GRADE_MIN or self.grades.max() > GRADE_MAX
        ):
            raise ValueError(
                "query %r: grades must lie in %d..%d"
                % (self.query_id, GRADE_MIN, GRADE_MAX)
            )

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)


@dataclass
class RankingCorpus:
    """An ordered collection of query groups with a shared feature space."""

    groups: list[QueryGroup] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.groups:
            raise ValueError("empty corpus")
        dims = {g.features.shape[1] for g in self.groups}
        if len(dims) != 1:
            raise ValueError("inconsistent feature dimension across queries: %s" % sorted(dims))
        ids = [g.query_id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate query_id in corpus")
        self._by_id = {g.query_id: g for g in self.groups}

    @property
    def feature_dim(self) -> int:
        return self.groups[0].features.shape[1]

    @property
    def n_queries(self) -> int:
        return len(self.groups)

    @property
    def query_ids(self) -> list[str]:
        return [g.query_id for g in self.groups]

    def group(self, query_id: str) -> QueryGroup:
        return self._by_id[query_id]

    def subset(self, query_ids: Sequence[str]) -> "RankingCorpus":
        return RankingCorpus([self._by_id[q] for q in query_ids])

    def __iter__(self) -> Iterator[QueryGroup]:
        return iter(self.groups)

    def __len__(self) -> int:
        return len(self.groups)


def binarize_grade(grade: int) -> int:
    """Binary relevance: 1 iff the graded label exceeds the mid grade."""
    if grade != int(grade) or not GRADE_MIN <= grade <= GRADE_MAX:
        raise ValueError("grade must be an integer in %d..%d, got %r" % (GRADE_MIN, GRADE_MAX, grade))
    return int(int(grade) > BINARY_RELEVANCE_THRESHOLD)


def binarize_grades(grades: Sequence[int]) -> np.ndarray:
    """Vectorized ``binarize_grade`` over an array of grades."""
    arr = np.asarray(grades)
    if arr.size and (arr.min() < GRADE_MIN or arr.max() > GRADE_MAX):
        raise ValueError("grade out of range %d..%d" % (GRADE_MIN, GRADE_MAX))
    return (arr > BINARY_RELEVANCE_THRESHOLD).astype(int)


def load_corpus(
    path: str | Path,
    fmt: str = "svmlight",
    feature_dim: int | None = None,
) -> RankingCorpus:
    """Load a corpus from disk.

    ``fmt="svmlight"`` reads the usual ``<grade> qid:<id> <idx>:<val> ...``
    lines (1-based sparse indices, ``#`` starts a comment). With
    ``fmt="synthetic_manifest"`` the path names a small config file whose
    parameters regenerate a synthetic corpus deterministically.
    """
    if fmt == "svmlight":
        return _load_svmlight(Path(path), feature_dim)
    if fmt == "synthetic_manifest":
        return load_synthetic_manifest(Path(path))
    raise ValueError("unknown corpus format %r" % fmt)


def _load_svmlight(path: Path, feature_dim: int | None) -> RankingCorpus:
    rows = []  # (qid, doc_id_or_None, grade, {idx: val})
    max_index = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line, _, comment = raw.partition("#")
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2 or not tokens[1].startswith("qid:"):
                raise ValueError("%s line %d: expected '<grade> qid:<id> ...'" % (path, lineno))
            try:
                grade = int(tokens[0])
            except ValueError:
                raise ValueError("%s line %d: grade %r is not an integer" % (path, lineno, tokens[0])) from None
            if not GRADE_MIN <= grade <= GRADE_MAX:
                raise ValueError("%s line %d: grade %d outside %d..%d" % (path, lineno, grade, GRADE_MIN, GRADE_MAX))
            qid = tokens[1][len("qid:"):]
            if not qid:
                raise ValueError("%s line %d: empty qid" % (path, lineno))
            pairs: dict[int, float] = {}
            for tok in tokens[2:]:
                idx_s, sep, val_s = tok.partition(":")
                if not sep:
                    raise ValueError("%s line %d: malformed feature pair %r" % (path, lineno, tok))
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise ValueError("%s line %d: malformed feature pair %r" % (path, lineno, tok)) from None
                if idx < 1:
                    raise ValueError("%s line %d: feature indices are 1-based, got %d" % (path, lineno, idx))
                if idx in pairs:
                    raise ValueError("%s line %d: duplicate feature index %d" % (path, lineno, idx))
                if feature_dim is not None and idx > feature_dim:
                    raise ValueError(
                        "%s line %d: feature index %d exceeds feature_dim=%d"
                        % (path, lineno, idx, feature_dim)
                    )
                pairs[idx] = val
            if pairs:
                max_index = max(max_index, max(pairs))
            doc_id = comment.strip() or None
            if doc_id is not None and len(doc_id.split()) != 1:
                doc_id = None
            rows.append((qid, doc_id, grade, pairs))
    if not rows:
        raise ValueError("%s: empty corpus" % path)
    dim = feature_dim if feature_dim is not None else max_index
    if dim < 1:
        raise ValueError("%s: could not infer a positive feature dimension" % path)

    order: list[str] = []
    grouped: dict[str, list[tuple[str | None, int, dict[int, float]]]] = {}
    for qid, doc_id, grade, pairs in rows:
        if qid not in grouped:
            grouped[qid] = []
            order.append(qid)
        grouped[qid].append((doc_id, grade, pairs))

    groups = []
    for qid in order:
        items = grouped[qid]
        feats = np.zeros((len(items), dim))
        grades = np.zeros(len(items), dtype=int)
        doc_ids = []
        for j, (doc_id, grade, pairs) in enumerate(items):
            for idx, val in pairs.items():
                feats[j, idx - 1] = val
            grades[j] = grade
            doc_ids.append(doc_id if doc_id is not None else "%s.d%03d" % (qid, j))
        groups.append(QueryGroup(qid, doc_ids, feats, grades))
    return RankingCorpus(groups)


def write_corpus(corpus: RankingCorpus, path: str | Path) -> None:
    """Write a corpus in svmlight-with-qid format (doc id in the comment).

    Feature values are written with ``repr`` so a load/write cycle
    round-trips exactly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for group in corpus:
            for j in range(group.n_docs):
                feats = group.features[j]
                parts = [str(int(group.grades[j])), "qid:%s" % group.query_id]
                for idx in np.nonzero(feats)[0]:
                    parts.append("%d:%s" % (idx + 1, repr(float(feats[idx]))))
                parts.append("# %s" % group.doc_ids[j])
                fh.write(" ".join(parts) + "\n")


def synthesize_corpus(
    n_queries: int,
    docs_per_query: int,
    feature_dim: int,
    seed: int,
    grade_probs: Sequence[float] = SYNTHETIC_GRADE_PROBS,
) -> RankingCorpus:
    """Generate a synthetic graded corpus, deterministic in ``seed``.

    Grades are drawn from a fixed five-level distribution; features are a
    grade-dependent mean vector plus unit Gaussian noise, so the grade is
    learnable from the features but not separable.
    """
    if n_queries < 1 or docs_per_query < 1 or feature_dim < 1:
        raise ValueError("n_queries, docs_per_query and feature_dim must be positive")
    probs = np.asarray(grade_probs, dtype=float)
    if probs.size != GRADE_MAX + 1 or abs(probs.sum() - 1.0) > 1e-9 or probs.min() < 0:
        raise ValueError("grade_probs must be a distribution over %d grades" % (GRADE_MAX + 1))
    rng = np.random.default_rng(seed)
    direction = rng.uniform(0.2, 1.0, size=feature_dim)
    width = len(str(n_queries - 1))
    groups = []
    for qi in range(n_queries):
        qid = "q%0*d" % (width, qi)
        grades = rng.choice(GRADE_MAX + 1, size=docs_per_query, p=probs)
        noise = rng.normal(0.0, 1.0, size=(docs_per_query, feature_dim))
        feats = GRADE_SIGNAL_SCALE * grades[:, None] * direction[None, :] + noise
        doc_ids = ["%s.d%03d" % (qid, j) for j in range(docs_per_query)]
        groups.append(QueryGroup(qid, doc_ids, feats, grades))
    return RankingCorpus(groups)


def write_synthetic_manifest(
    path: str | Path,
    n_queries: int,
    docs_per_query: int,
    feature_dim: int,
    seed: int,
) -> None:
    parser = configparser.ConfigParser()
    parser["corpus"] = {
        "format": "synthetic",
        "n_queries": str(n_queries),
        "docs_per_query": str(docs_per_query),
        "feature_dim": str(feature_dim),
        "seed": str(seed),
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def load_synthetic_manifest(path: str | Path) -> RankingCorpus:
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read or "corpus" not in parser:
        raise ValueError("%s: not a synthetic corpus manifest" % path)
    section = parser["corpus"]
    if section.get("format", "synthetic") != "synthetic":
        raise ValueError("%s: manifest format %r is not 'synthetic'" % (path, section.get("format")))
    try:
        return synthesize_corpus(
            n_queries=section.getint("n_queries"),
            docs_per_query=section.getint("docs_per_query"),
            feature_dim=section.getint("feature_dim"),
            seed=section.getint("seed"),
        )
    except TypeError:
        raise ValueError("%s: manifest is missing a required corpus key" % path) from None


class SplitSpec(NamedTuple):
    """Query-level split fractions; production is drawn from the train side."""

    train_fraction: float = 0.8
    test_fraction: float = 0.2
    production_fraction: float = 0.01
    seed: int = 0


class SplitResult(NamedTuple):
    """Split output; a member is None when its fraction was zero.

    Production queries remain inside the train split, they are flagged by
    membership in ``production`` rather than removed from ``train``.
    """

    train: RankingCorpus
    production: "RankingCorpus | None"
    test: "RankingCorpus | None"


def split_corpus(corpus: RankingCorpus, spec: SplitSpec) -> SplitResult:
    """Partition a corpus by query, deterministic in ``spec.seed``.

    A positive fraction that rounds to zero queries is an error; a fraction
    of exactly zero yields None for that member.
    """
    for name, frac in (
        ("train_fraction", spec.train_fraction),
        ("test_fraction", spec.test_fraction),
        ("production_fraction", spec.production_fraction),
    ):
        if not 0.0 <= frac <= 1.0:
            raise ValueError("%s must lie in [0, 1]" % name)
    if spec.train_fraction + spec.test_fraction > 1.0 + 1e-12:
        raise ValueError("train_fraction + test_fraction exceeds 1")
    n = corpus.n_queries
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(n)
    ids = corpus.query_ids
    n_train = int(round(spec.train_fraction * n))
    n_test = int(round(spec.test_fraction * n))
    if n_train + n_test > n:
        n_test = n - n_train
    if spec.train_fraction > 0 and n_train == 0:
        raise ValueError("train split is empty at train_fraction=%r" % spec.train_fraction)
    if spec.test_fraction > 0 and n_test == 0:
        raise ValueError("test split is empty at test_fraction=%r" % spec.test_fraction)
    if n_train == 0:
        raise ValueError("train split is empty")
    n_prod = 0
    if spec.production_fraction > 0:
        n_prod = max(1, int(round(spec.production_fraction * n)))
        if n_prod > n_train:
            raise ValueError(
                "production sample (%d queries) exceeds the train split (%d)"
                % (n_prod, n_train)
            )
    train_ids = [ids[i] for i in order[:n_train]]
    test_ids = [ids[i] for i in order[n - n_test:]] if n_test else []
    prod_ids = train_ids[:n_prod]
    train = corpus.subset(sorted(train_ids))
    production = corpus.subset(sorted(prod_ids)) if prod_ids else None
    test = corpus.subset(sorted(test_ids)) if test_ids else None
    return SplitResult(train, production, test)
