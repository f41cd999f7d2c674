"""Click model, propensity table and simulator tests."""

import math

import numpy as np
import pytest

from opbm.clicksim import (
    ClickLog,
    ClickModelConfig,
    ClickRecord,
    PropensityTable,
    assign_outlier_signatures,
    gaussian_density,
    pair_feature_matrix,
    pair_relevance_labels,
    propensity,
    rank_documents,
    simulate,
    train_production_ranker,
    true_propensity_table,
)
from opbm.corpus import binarize_grades, synthesize_corpus
from opbm.learners import RelevanceModel, BoostedStumps
from opbm.outliers import OutlierSignature

EMPTY = OutlierSignature.empty()


def sig(*positions):
    return OutlierSignature(tuple(positions))


class TestPropensity:
    def test_pbm_inverse_rank(self):
        cfg = ClickModelConfig(model="pbm")
        assert propensity(cfg, 1, EMPTY) == 1.0
        assert propensity(cfg, 4, EMPTY) == 0.25

    def test_pbm_eta_exponent(self):
        cfg = ClickModelConfig(model="pbm", eta=2.0)
        assert propensity(cfg, 4, EMPTY) == pytest.approx(1.0 / 16.0)

    def test_gauss_mixture_at_the_outlier(self):
        # alpha=0.75, sigma=1, rank 4 with the outlier at 4:
        # 0.25 * (1/4) + 0.75 * N(0) = 0.0625 + 0.75 * 0.39894228...
        cfg = ClickModelConfig(model="opbm_g", alpha=0.75, sigma=1.0)
        got = propensity(cfg, 4, sig(4))
        np.testing.assert_allclose(got, 0.3617067103010745, atol=1e-12)

    def test_empty_signature_reduces_to_pbm(self):
        cfg = ClickModelConfig(model="opbm_g", alpha=0.75, sigma=1.0)
        pbm = ClickModelConfig(model="pbm")
        for k in range(1, 11):
            assert propensity(cfg, k, EMPTY) == propensity(pbm, k, EMPTY)

    def test_alpha_zero_is_pbm_for_any_signature(self):
        cfg = ClickModelConfig(model="opbm_g", alpha=0.0, sigma=1.0)
        for k in range(1, 11):
            assert propensity(cfg, k, sig(5)) == pytest.approx((1.0 / k))

    def test_outlier_position_is_a_local_maximum(self):
        cfg = ClickModelConfig(model="opbm_g", alpha=0.75, sigma=1.0)
        for o in (4, 6, 9):
            at = propensity(cfg, o, sig(o))
            before = propensity(cfg, o - 1, sig(o))
            after = propensity(cfg, o + 1, sig(o)) if o < 10 else 0.0
            assert at > before and at > after

    def test_multi_gauss_is_mean_of_singles(self):
        mg = ClickModelConfig(model="opbm_mg", alpha=0.6, sigma=1.0)
        g = ClickModelConfig(model="opbm_g", alpha=0.6, sigma=1.0)
        for k in range(1, 11):
            want = 0.5 * (propensity(g, k, sig(4)) + propensity(g, k, sig(9)))
            np.testing.assert_allclose(propensity(mg, k, sig(4, 9)), want, atol=1e-12)

    def test_single_gauss_rejects_multi_outlier_signature(self):
        cfg = ClickModelConfig(model="opbm_g", alpha=0.5, sigma=1.0)
        with pytest.raises(ValueError, match="opbm_mg"):
            propensity(cfg, 3, sig(4, 9))

    def test_result_clamped_to_one(self):
        cfg = ClickModelConfig(model="opbm_g", alpha=1.0, sigma=0.05)
        assert propensity(cfg, 4, sig(4)) == 1.0
        assert gaussian_density(4.0, 4.0, 0.05) > 1.0

    def test_rank_bounds_checked(self):
        cfg = ClickModelConfig(model="pbm", top_k=10)
        with pytest.raises(ValueError, match="outside"):
            propensity(cfg, 0, EMPTY)
        with pytest.raises(ValueError, match="outside"):
            propensity(cfg, 11, EMPTY)

    def test_real_table_lookup(self):
        table = true_propensity_table(
            ClickModelConfig(model="opbm_g", alpha=0.75, sigma=1.0), [sig(4)]
        )
        cfg = ClickModelConfig(model="opbm_real", table=table)
        np.testing.assert_allclose(
            propensity(cfg, 4, sig(4)), 0.3617067103010745, atol=1e-12
        )
        with pytest.raises(ValueError, match="uncovered signature"):
            propensity(cfg, 4, sig(7))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="unknown click model"):
            ClickModelConfig(model="cascade")
        with pytest.raises(ValueError, match="alpha"):
            ClickModelConfig(model="opbm_g", alpha=1.5)
        with pytest.raises(ValueError, match="requires a propensity table"):
            ClickModelConfig(model="opbm_real")


class TestPropensityTable:
    def make_cells(self):
        cells = {(k, EMPTY): 1.0 / k for k in range(1, 6)}
        cells[(4, sig(4))] = 0.36
        return cells

    def test_round_trip_csv(self, tmp_path):
        table = PropensityTable(self.make_cells())
        path = tmp_path / "table.csv"
        table.to_csv(path)
        assert PropensityTable.from_csv(path) == table

    def test_encoding_tokens(self, tmp_path):
        cells = self.make_cells()
        cells[(2, sig(2, 4))] = 0.5
        path = tmp_path / "table.csv"
        PropensityTable(cells).to_csv(path)
        text = path.read_text()
        assert "2,2+4,0.5" in text
        assert "1,-,1" in text

    def test_empty_column_must_be_total(self):
        cells = {(k, EMPTY): 1.0 / k for k in (1, 2, 3, 5)}
        with pytest.raises(ValueError, match=r"missing ranks \[4\]"):
            PropensityTable(cells)

    def test_value_range_validated(self):
        with pytest.raises(ValueError, match="outside"):
            PropensityTable({(1, EMPTY): 1.2})

    def test_uncovered_cell_error_names_the_cell(self):
        table = PropensityTable(self.make_cells())
        with pytest.raises(ValueError, match="rank=3 signature=4"):
            table.theta(3, sig(4))

    def test_duplicate_csv_cell_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("rank,signature,theta\n1,-,1.0\n1,-,0.9\n")
        with pytest.raises(ValueError, match="duplicate cell"):
            PropensityTable.from_csv(path)

    def test_scaled(self):
        table = PropensityTable(self.make_cells())
        half = table.scaled(0.5)
        assert half.theta(4, sig(4)) == pytest.approx(0.18)


class TestClickLog:
    def make_log(self):
        records = [
            ClickRecord(0, "qa", "d1", 1, EMPTY, 1, 1),
            ClickRecord(0, "qa", "d2", 2, EMPTY, 1, 0),
            ClickRecord(1, "qb", "d9", 1, sig(2), 1, 0),
            ClickRecord(1, "qb", "d3", 2, sig(2), 1, 1),
        ]
        return ClickLog.from_records(records)

    def test_round_trip_records(self):
        log = self.make_log()
        assert log.n_records == 4
        assert log.n_clicks == 2
        assert log.n_sessions == 2
        back = list(log.records())
        assert back[3].doc_id == "d3"
        assert back[3].signature == sig(2)

    def test_csv_round_trip(self, tmp_path):
        log = self.make_log()
        path = tmp_path / "log.csv"
        log.to_csv(path)
        loaded = ClickLog.from_csv(path)
        assert list(loaded.records()) == list(log.records())
        header = path.read_text().splitlines()[0]
        assert header == "session,query_id,doc_id,rank,signature,impression,click"

    def test_signature_re_keying(self):
        records = [
            ClickRecord(0, "q", "a", 1, sig(2, 4), 1, 0),
            ClickRecord(0, "q", "b", 2, sig(2, 4), 1, 1),
        ]
        log = ClickLog.from_records(records)
        lazy = log.with_signatures("lazy")
        assert lazy.signatures[lazy.sig_idx[0]] == sig(2)
        empty = log.with_signatures("empty")
        assert empty.signatures[empty.sig_idx[0]].is_empty
        full = log.with_signatures("full")
        assert full.signatures[full.sig_idx[0]] == sig(2, 4)
        with pytest.raises(ValueError, match="unknown signature mode"):
            log.with_signatures("first")

    def test_cell_keys(self):
        log = self.make_log()
        keys, idx = log.cell_keys()
        assert set(keys) == {(1, EMPTY), (2, EMPTY), (1, sig(2)), (2, sig(2))}
        assert len(idx) == 4
        assert keys[idx[0]] == (1, EMPTY)
        assert keys[idx[3]] == (2, sig(2))

    def test_click_without_impression_rejected(self):
        with pytest.raises(ValueError, match="clicked without impression"):
            ClickLog.from_records([ClickRecord(0, "q", "a", 1, EMPTY, 0, 1)])


class TestProductionRanker:
    def test_beats_least_squares_probe_on_training_ndcg(self):
        from opbm.metrics import ndcg_at_k

        corpus = synthesize_corpus(5, 10, 6, seed=17)
        model = train_production_ranker(corpus, seed=0)
        X = np.vstack([g.features for g in corpus])
        y = np.concatenate([g.grades for g in corpus]).astype(float)
        X1 = np.hstack([X, np.ones((X.shape[0], 1))])
        w, *_ = np.linalg.lstsq(X1, y, rcond=None)

        def mean_ndcg(score_fn):
            vals = []
            for g in corpus:
                order = np.argsort(-score_fn(g.features), kind="stable")
                vals.append(ndcg_at_k(g.grades[order].tolist(), g.grades.tolist(), k=10))
            return np.mean(vals)

        stump_ndcg = mean_ndcg(model.score)
        probe_ndcg = mean_ndcg(lambda F: np.hstack([F, np.ones((F.shape[0], 1))]) @ w)
        assert stump_ndcg > probe_ndcg

    def test_deterministic_in_seed(self):
        corpus = synthesize_corpus(3, 8, 4, seed=9)
        m1 = train_production_ranker(corpus, seed=5)
        m2 = train_production_ranker(corpus, seed=5)
        X = np.vstack([g.features for g in corpus])
        np.testing.assert_array_equal(m1.score(X), m2.score(X))


class TestRankDocuments:
    def test_ties_break_by_doc_id(self):
        model = RelevanceModel(
            learner=BoostedStumps(n_rounds=1).fit(np.zeros((2, 2)), np.zeros(2)),
            feature_dim=2,
        )
        order = rank_documents(model, np.zeros((3, 2)), ["zz", "aa", "mm"])
        assert [["zz", "aa", "mm"][i] for i in order] == ["aa", "mm", "zz"]


class TestAssignSignatures:
    def test_zero_probability_all_normal(self):
        sigs = assign_outlier_signatures([f"q{i}" for i in range(50)], 10, 0.0, seed=1)
        assert all(s.is_empty for s in sigs.values())

    def test_none_placement_ignores_probability(self):
        sigs = assign_outlier_signatures(["a", "b"], 10, 1.0, placement="none", seed=1)
        assert all(s.is_empty for s in sigs.values())

    def test_uniform_placement_rate_and_range(self):
        qids = [f"q{i}" for i in range(4000)]
        sigs = assign_outlier_signatures(qids, 10, 0.5, seed=2)
        abnormal = [s for s in sigs.values() if not s.is_empty]
        assert 0.45 < len(abnormal) / len(qids) < 0.55
        assert all(len(s.positions) == 1 for s in abnormal)
        seen = {s.positions[0] for s in abnormal}
        assert seen == set(range(1, 11))

    def test_fixed_placement(self):
        sigs = assign_outlier_signatures(["a", "b", "c"], 10, 1.0, placement="fixed", positions=(9, 4), seed=3)
        assert all(s.positions == (4, 9) for s in sigs.values())

    def test_fixed_needs_positions_inside_top_k(self):
        with pytest.raises(ValueError, match="beyond top_k"):
            assign_outlier_signatures(["a"], 5, 1.0, placement="fixed", positions=(9,), seed=0)

    def test_deterministic(self):
        qids = [f"q{i}" for i in range(100)]
        s1 = assign_outlier_signatures(qids, 10, 0.5, seed=4)
        s2 = assign_outlier_signatures(qids, 10, 0.5, seed=4)
        assert s1 == s2


def perfect_ranker(corpus):
    """A ranker whose scores equal the grades (identity rankings)."""
    X = np.vstack([g.features for g in corpus])
    y = np.concatenate([g.grades for g in corpus]).astype(float) / 4.0
    learner = BoostedStumps(n_rounds=60, learning_rate=0.3, loss="squared").fit(X, y)
    return RelevanceModel(learner=learner, feature_dim=X.shape[1])


class TestSimulate:
    def setup_small(self, p_abnormal=0.5, model="opbm_g", alpha=0.75, seed=11, top_k=5):
        corpus = synthesize_corpus(10, 8, 4, seed=3)
        ranker = train_production_ranker(corpus, seed=0)
        sigs = assign_outlier_signatures(corpus.query_ids, top_k, p_abnormal, seed=7)
        cfg = ClickModelConfig(model=model, alpha=alpha, sigma=1.0, top_k=top_k, seed=seed)
        return corpus, ranker, sigs, cfg

    def test_deterministic_in_seed(self):
        corpus, ranker, sigs, cfg = self.setup_small()
        log1 = simulate(corpus, ranker, sigs, cfg, n_clicks_target=500)
        log2 = simulate(corpus, ranker, sigs, cfg, n_clicks_target=500)
        np.testing.assert_array_equal(log1.clicked, log2.clicked)
        np.testing.assert_array_equal(log1.pair_idx, log2.pair_idx)

    def test_stops_at_first_session_reaching_target(self):
        corpus, ranker, sigs, cfg = self.setup_small()
        log = simulate(corpus, ranker, sigs, cfg, n_clicks_target=300)
        assert log.n_clicks >= 300
        last = log.session.max()
        clicks_before_last = log.clicked[log.session < last].sum()
        assert clicks_before_last < 300

    def test_truncates_to_top_k(self):
        corpus, ranker, sigs, cfg = self.setup_small(top_k=5)
        log = simulate(corpus, ranker, sigs, cfg, n_clicks_target=100)
        assert log.rank.max() == 5
        # every session shows exactly top_k items of its 8-doc ranking
        _, counts = np.unique(log.session, return_counts=True)
        assert set(counts.tolist()) == {5}

    def test_impressions_are_one_per_presented_item(self):
        corpus, ranker, sigs, cfg = self.setup_small()
        log = simulate(corpus, ranker, sigs, cfg, n_clicks_target=100)
        assert set(np.unique(log.impression).tolist()) == {1}

    def test_unreachable_target_aborts_with_cap(self):
        # All-irrelevant corpus: gamma is 0 everywhere, no click can occur.
        corpus = synthesize_corpus(5, 6, 3, seed=1, grade_probs=(1.0, 0, 0, 0, 0))
        ranker = train_production_ranker(corpus, seed=0)
        cfg = ClickModelConfig(model="pbm", top_k=5, seed=2)
        with pytest.raises(RuntimeError, match="unreachable"):
            simulate(corpus, ranker, {}, cfg, n_clicks_target=10, session_cap=2000)

    def test_signature_beyond_presented_list_rejected(self):
        corpus = synthesize_corpus(3, 4, 3, seed=2)
        ranker = train_production_ranker(corpus, seed=0)
        sigs = {corpus.query_ids[0]: sig(6)}
        cfg = ClickModelConfig(model="opbm_g", alpha=0.5, top_k=8, seed=0)
        with pytest.raises(ValueError, match="beyond its presented list"):
            simulate(corpus, ranker, sigs, cfg, n_clicks_target=10)

    def test_mean_click_rate_convergence(self):
        # Monte Carlo fidelity at moderate scale; the acceptance suite
        # repeats this per cell for every model at tighter tolerances.
        from opbm.clicksim import propensity as theta_fn

        corpus = synthesize_corpus(6, 8, 4, seed=5)
        ranker = perfect_ranker(corpus)
        sigs = assign_outlier_signatures(corpus.query_ids, 5, 0.5, seed=6)
        cfg = ClickModelConfig(model="opbm_g", alpha=0.75, sigma=1.0, top_k=5, seed=13)
        target = 6000
        log = simulate(corpus, ranker, sigs, cfg, n_clicks_target=target)
        labels = pair_relevance_labels(log, corpus)
        clicks = np.bincount(log.pair_idx, weights=log.clicked, minlength=log.n_pairs)
        shown = np.bincount(log.pair_idx, minlength=log.n_pairs)
        keys, cell_idx = log.cell_keys()
        for p in range(log.n_pairs):
            if shown[p] < 300:
                continue
            rec = np.nonzero(log.pair_idx == p)[0][0]
            rank = int(log.rank[rec])
            signature = log.signatures[log.sig_idx[rec]]
            expected = theta_fn(cfg, rank, signature) * labels[p]
            got = clicks[p] / shown[p]
            sd = math.sqrt(max(expected * (1 - expected), 1e-9) / shown[p])
            assert abs(got - expected) < 5 * sd + 1e-9


class TestPairHelpers:
    def test_feature_and_label_alignment(self):
        corpus = synthesize_corpus(4, 6, 3, seed=8)
        ranker = train_production_ranker(corpus, seed=0)
        sigs = assign_outlier_signatures(corpus.query_ids, 4, 0.3, seed=9)
        cfg = ClickModelConfig(model="pbm", top_k=4, seed=10)
        log = simulate(corpus, ranker, sigs, cfg, n_clicks_target=50)
        feats = pair_feature_matrix(log, corpus)
        labels = pair_relevance_labels(log, corpus)
        assert feats.shape == (log.n_pairs, corpus.feature_dim)
        for i, (qid, did) in enumerate(log.pairs):
            group = corpus.group(qid)
            j = group.doc_ids.index(did)
            np.testing.assert_array_equal(feats[i], group.features[j])
            assert labels[i] == binarize_grades([group.grades[j]])[0]
