"""Corpus I/O, synthesis and split tests."""

import numpy as np
import pytest

from opbm.corpus import (
    RankingCorpus,
    QueryGroup,
    SplitSpec,
    binarize_grade,
    binarize_grades,
    load_corpus,
    split_corpus,
    synthesize_corpus,
    write_corpus,
    write_synthetic_manifest,
)


def kendall_tau(x, y):
    """O(n^2) pairwise Kendall tau, used as an independent probe oracle."""
    n = len(x)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = (x[i] - x[j]) * (y[i] - y[j])
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    total = n * (n - 1) / 2
    return (concordant - discordant) / total


class TestSvmlightParser:
    def test_sparse_line_becomes_dense(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("2 qid:7 1:0.5 3:1.0\n")
        corpus = load_corpus(p, feature_dim=3)
        group = corpus.group("7")
        assert group.grades.tolist() == [2]
        np.testing.assert_allclose(group.features[0], [0.5, 0.0, 1.0])

    def test_inferred_feature_dim_is_max_index(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:a 2:1.0\n0 qid:a 4:2.0\n")
        corpus = load_corpus(p)
        assert corpus.feature_dim == 4

    def test_comment_stripped_and_used_as_doc_id(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:a 1:1.0 # doc-their-id\n0 qid:a 1:2.0\n")
        group = load_corpus(p).group("a")
        assert group.doc_ids[0] == "doc-their-id"
        assert group.doc_ids[1] == "a.d001"

    def test_groups_follow_first_appearance_order(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:b 1:1.0\n0 qid:a 1:1.5\n2 qid:b 1:2.0\n")
        corpus = load_corpus(p)
        assert corpus.query_ids == ["b", "a"]
        assert corpus.group("b").n_docs == 2

    def test_malformed_pair_reports_line_number(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:a 1:1.0\n1 qid:a 1-broken\n")
        with pytest.raises(ValueError, match="line 2"):
            load_corpus(p)

    def test_zero_index_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:a 0:1.0\n")
        with pytest.raises(ValueError, match="1-based"):
            load_corpus(p)

    def test_duplicate_index_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:a 2:1.0 2:3.0\n")
        with pytest.raises(ValueError, match="duplicate feature index"):
            load_corpus(p)

    def test_index_beyond_declared_dim_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 qid:a 5:1.0\n")
        with pytest.raises(ValueError, match="exceeds feature_dim"):
            load_corpus(p, feature_dim=3)

    def test_non_integer_grade_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1.5 qid:a 1:1.0\n")
        with pytest.raises(ValueError, match="not an integer"):
            load_corpus(p)

    def test_missing_qid_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("1 1:1.0\n")
        with pytest.raises(ValueError, match="qid"):
            load_corpus(p)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# nothing here\n\n")
        with pytest.raises(ValueError, match="empty corpus"):
            load_corpus(p)

    def test_write_load_round_trip(self, tmp_path):
        corpus = synthesize_corpus(5, 7, 4, seed=3)
        p = tmp_path / "c.txt"
        write_corpus(corpus, p)
        loaded = load_corpus(p, feature_dim=4)
        assert loaded.query_ids == corpus.query_ids
        for orig, back in zip(corpus, loaded):
            assert back.doc_ids == orig.doc_ids
            assert back.grades.tolist() == orig.grades.tolist()
            np.testing.assert_array_equal(back.features, orig.features)


class TestSynthesize:
    def test_same_seed_identical(self):
        a = synthesize_corpus(4, 6, 5, seed=11)
        b = synthesize_corpus(4, 6, 5, seed=11)
        for ga, gb in zip(a, b):
            np.testing.assert_array_equal(ga.features, gb.features)
            np.testing.assert_array_equal(ga.grades, gb.grades)

    def test_different_seed_differs(self):
        a = synthesize_corpus(4, 6, 5, seed=11)
        b = synthesize_corpus(4, 6, 5, seed=12)
        assert any(
            not np.array_equal(ga.features, gb.features) for ga, gb in zip(a, b)
        )

    def test_shapes_and_grade_range(self):
        corpus = synthesize_corpus(3, 8, 6, seed=0)
        assert corpus.n_queries == 3
        for g in corpus:
            assert g.features.shape == (8, 6)
            assert g.grades.min() >= 0 and g.grades.max() <= 4

    def test_grades_learnable_by_least_squares_probe(self):
        # Fit a linear probe on half the queries, check rank agreement on
        # the other half: features must carry usable relevance signal.
        corpus = synthesize_corpus(60, 10, 8, seed=21)
        half = corpus.n_queries // 2
        X_tr = np.vstack([g.features for g in corpus.groups[:half]])
        y_tr = np.concatenate([g.grades for g in corpus.groups[:half]])
        X1 = np.hstack([X_tr, np.ones((X_tr.shape[0], 1))])
        w, *_ = np.linalg.lstsq(X1, y_tr, rcond=None)
        taus = []
        for g in corpus.groups[half:]:
            pred = np.hstack([g.features, np.ones((g.n_docs, 1))]) @ w
            if len(set(g.grades.tolist())) > 1:
                taus.append(kendall_tau(pred.tolist(), g.grades.tolist()))
        assert np.mean(taus) > 0.2

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError):
            synthesize_corpus(0, 5, 3, seed=0)


class TestBinarize:
    @pytest.mark.parametrize("grade,expected", [(0, 0), (1, 0), (2, 0), (3, 1), (4, 1)])
    def test_threshold(self, grade, expected):
        assert binarize_grade(grade) == expected

    @pytest.mark.parametrize("grade", [-1, 5, 2.5])
    def test_out_of_range_rejected(self, grade):
        with pytest.raises(ValueError):
            binarize_grade(grade)

    def test_vectorized_matches_scalar(self):
        grades = [0, 1, 2, 3, 4, 4, 0]
        np.testing.assert_array_equal(
            binarize_grades(grades), [binarize_grade(g) for g in grades]
        )


class TestSplit:
    def make(self, n):
        return synthesize_corpus(n, 5, 3, seed=9)

    def test_partition_by_query(self):
        corpus = self.make(50)
        res = split_corpus(corpus, SplitSpec(0.8, 0.2, 0.05, seed=1))
        train_ids = set(res.train.query_ids)
        test_ids = set(res.test.query_ids)
        assert train_ids.isdisjoint(test_ids)
        assert train_ids | test_ids == set(corpus.query_ids)

    def test_production_is_inside_train(self):
        corpus = self.make(100)
        res = split_corpus(corpus, SplitSpec(0.8, 0.2, 0.01, seed=2))
        assert set(res.production.query_ids) <= set(res.train.query_ids)

    def test_one_percent_of_hundred_is_one_query(self):
        corpus = self.make(100)
        res = split_corpus(corpus, SplitSpec(0.8, 0.2, 0.01, seed=3))
        assert res.production.n_queries == 1

    def test_deterministic_in_seed(self):
        corpus = self.make(40)
        r1 = split_corpus(corpus, SplitSpec(0.7, 0.3, 0.05, seed=4))
        r2 = split_corpus(corpus, SplitSpec(0.7, 0.3, 0.05, seed=4))
        assert r1.train.query_ids == r2.train.query_ids
        assert r1.test.query_ids == r2.test.query_ids
        r3 = split_corpus(corpus, SplitSpec(0.7, 0.3, 0.05, seed=5))
        assert r1.train.query_ids != r3.train.query_ids

    def test_zero_test_fraction_allowed(self):
        corpus = self.make(20)
        res = split_corpus(corpus, SplitSpec(1.0, 0.0, 0.1, seed=0))
        assert res.test is None
        assert res.train.n_queries == 20

    def test_positive_fraction_rounding_to_zero_is_error(self):
        corpus = self.make(10)
        with pytest.raises(ValueError, match="test split is empty"):
            split_corpus(corpus, SplitSpec(0.95, 0.01, 0.1, seed=0))

    def test_fractions_above_one_rejected(self):
        corpus = self.make(10)
        with pytest.raises(ValueError, match="exceeds 1"):
            split_corpus(corpus, SplitSpec(0.9, 0.9, 0.1, seed=0))


class TestManifest:
    def test_manifest_load_is_deterministic(self, tmp_path):
        p = tmp_path / "corpus.manifest"
        write_synthetic_manifest(p, n_queries=6, docs_per_query=4, feature_dim=3, seed=13)
        a = load_corpus(p, fmt="synthetic_manifest")
        b = load_corpus(p, fmt="synthetic_manifest")
        assert a.query_ids == b.query_ids
        for ga, gb in zip(a, b):
            np.testing.assert_array_equal(ga.features, gb.features)

    def test_manifest_matches_direct_synthesis(self, tmp_path):
        p = tmp_path / "corpus.manifest"
        write_synthetic_manifest(p, n_queries=6, docs_per_query=4, feature_dim=3, seed=13)
        a = load_corpus(p, fmt="synthetic_manifest")
        b = synthesize_corpus(6, 4, 3, seed=13)
        for ga, gb in zip(a, b):
            np.testing.assert_array_equal(ga.features, gb.features)

    def test_missing_key_rejected(self, tmp_path):
        p = tmp_path / "corpus.manifest"
        p.write_text("[corpus]\nformat = synthetic\nn_queries = 5\n")
        with pytest.raises(ValueError, match="missing"):
            load_corpus(p, fmt="synthetic_manifest")

    def test_unknown_format_rejected(self, tmp_path):
        p = tmp_path / "x"
        p.write_text("")
        with pytest.raises(ValueError, match="unknown corpus format"):
            load_corpus(p, fmt="parquet")


class TestCorpusValidation:
    def test_duplicate_doc_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate doc_id"):
            QueryGroup("q", ["d", "d"], np.zeros((2, 2)), np.array([0, 1]))

    def test_inconsistent_feature_dim_rejected(self):
        g1 = QueryGroup("a", ["d0"], np.zeros((1, 2)), np.array([0]))
        g2 = QueryGroup("b", ["d0"], np.zeros((1, 3)), np.array([0]))
        with pytest.raises(ValueError, match="inconsistent feature dimension"):
            RankingCorpus([g1, g2])

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty corpus"):
            RankingCorpus([])
