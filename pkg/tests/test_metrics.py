"""Metric-level tests with independently derived expected values.

Reference p-values and incomplete-beta values were computed offline with an
independent statistics library and frozen here as literals, so the from-
scratch implementations are checked against something they do not share
code with.
"""

import itertools
import math

import numpy as np
import pytest

from opbm.metrics import (
    MetricReport,
    ctr,
    mean_binary_ce,
    ndcg_at_k,
    read_metric_reports,
    regularized_incomplete_beta,
    t_test_two_sample,
    write_metric_reports,
)


def brute_force_ndcg(ranked, ideal_source, k, binary_gains=False):
    """Oracle: DCG by direct summation, ideal DCG by permutation search."""

    def dcg(grades):
        total = 0.0
        for i, g in enumerate(grades[:k], start=1):
            gain = g if binary_gains else 2.0**g - 1.0
            total += gain / math.log2(i + 1)
        return total

    best = max(dcg(list(p)) for p in itertools.permutations(ideal_source))
    if best == 0.0:
        return 0.0
    return dcg(list(ranked)) / best


class TestNdcg:
    def test_single_relevant_at_rank_two(self):
        np.testing.assert_allclose(
            ndcg_at_k([0, 1], [1, 0], k=2), 1.0 / math.log2(3.0)
        )

    def test_perfect_ranking_scores_one(self):
        assert ndcg_at_k([3, 2, 0], k=3) == pytest.approx(1.0)

    def test_all_zero_grades_score_zero(self):
        assert ndcg_at_k([0, 0, 0], k=3) == 0.0

    def test_cutoff_truncates(self):
        # Only the first k positions contribute to DCG.
        full = ndcg_at_k([0, 0, 3], [3, 0, 0], k=3)
        cut = ndcg_at_k([0, 0, 3], [3, 0, 0], k=2)
        assert cut == 0.0
        assert full > 0.0

    def test_binary_gains_switch(self):
        got = ndcg_at_k([1, 0, 1], k=3, binary_gains=True)
        want = 1.5 / (1.0 + 1.0 / math.log2(3.0))
        np.testing.assert_allclose(got, want)

    def test_negative_grade_rejected(self):
        with pytest.raises(ValueError):
            ndcg_at_k([1, -1], k=2)

    def test_non_positive_k_rejected(self):
        with pytest.raises(ValueError):
            ndcg_at_k([1, 0], k=0)

    def test_matches_permutation_oracle_on_random_lists(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n = int(rng.integers(1, 7))
            grades = rng.integers(0, 5, size=n).tolist()
            k = int(rng.integers(1, n + 1))
            got = ndcg_at_k(grades, k=k)
            want = brute_force_ndcg(grades, grades, k)
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_ideal_source_with_permutation_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(2, 7))
            pool = rng.integers(0, 4, size=n).tolist()
            order = rng.permutation(n)
            ranked = [pool[i] for i in order]
            got = ndcg_at_k(ranked, pool, k=n)
            want = brute_force_ndcg(ranked, pool, n)
            np.testing.assert_allclose(got, want, atol=1e-12)
            assert got <= 1.0 + 1e-12


class TestMeanBinaryCe:
    def test_half_probability(self):
        np.testing.assert_allclose(
            mean_binary_ce([0.5], [1]), math.log(2.0)
        )

    def test_corrected_click_above_one_is_clamped(self):
        # A corrected click 1/theta with theta=1/3 exceeds 1 and must be
        # clamped to 1 - eps before the log.
        got = mean_binary_ce([3.0], [1])
        np.testing.assert_allclose(got, -math.log(1.0 - 1e-6))
        assert got < 2e-6

    def test_confident_wrong_prediction_hits_clamp_ceiling(self):
        np.testing.assert_allclose(mean_binary_ce([1.0], [0]), -math.log(1e-6))

    def test_mean_over_records(self):
        got = mean_binary_ce([0.5, 0.5], [1, 0])
        np.testing.assert_allclose(got, math.log(2.0))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mean_binary_ce([0.5], [1, 0])

    def test_non_binary_label_rejected(self):
        with pytest.raises(ValueError):
            mean_binary_ce([0.5], [0.5])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_binary_ce([], [])

    def test_minimized_by_matching_prediction(self):
        # CE at the true rate is below CE at perturbed rates.
        rng = np.random.default_rng(3)
        y = (rng.random(2000) < 0.3).astype(float)
        base = mean_binary_ce(np.full(y.size, 0.3), y)
        for p in (0.1, 0.2, 0.45, 0.8):
            assert base < mean_binary_ce(np.full(y.size, p), y)


# (name, a, b, welch, t_ref, p_ref, df_ref) frozen from an independent
# reference implementation.
TTEST_CASES = [
    ("basic_shift", [1.0, 2.0, 3.0, 4.0, 5.0], [2.0, 3.0, 4.0, 5.0, 6.0], False,
     -1.0, 0.34659350708733416, 8.0),
    ("small_unequal_n", [1.1, 2.3, 0.9, 1.7], [4.2, 3.9, 5.1], False,
     -6.033815244679474, 0.0018002594478950017, 5.0),
    ("welch_heteroscedastic", [10.2, 9.8, 10.1, 10.3, 9.9, 10.0],
     [12.0, 8.1, 14.5, 6.2, 11.9], True,
     -0.32824359235588463, 0.7591096613768844, 4.021001825499815),
    ("near_null", [0.12, -0.34, 0.56, -0.07, 0.23, 0.44, -0.19, 0.05],
     [0.18, -0.21, 0.49, 0.02, -0.11, 0.37, 0.09, -0.03], False,
     0.0, 1.0, 14.0),
    ("large_n", np.linspace(-1.0, 1.0, 40).tolist(),
     np.linspace(-0.8, 1.3, 35).tolist(), False,
     -1.755478721822901, 0.08337246092352064, 73.0),
]


class TestTTest:
    @pytest.mark.parametrize(
        "name,a,b,welch,t_ref,p_ref,df_ref",
        TTEST_CASES,
        ids=[c[0] for c in TTEST_CASES],
    )
    def test_matches_frozen_reference(self, name, a, b, welch, t_ref, p_ref, df_ref):
        res = t_test_two_sample(a, b, welch=welch)
        np.testing.assert_allclose(res.statistic, t_ref, atol=1e-10)
        np.testing.assert_allclose(res.p_value, p_ref, atol=1e-10)
        np.testing.assert_allclose(res.df, df_ref, atol=1e-9)

    def test_swap_flips_sign_keeps_p(self):
        a = [1.0, 2.0, 3.5, 1.2]
        b = [2.2, 4.1, 3.3, 5.0, 2.9]
        r1 = t_test_two_sample(a, b)
        r2 = t_test_two_sample(b, a)
        np.testing.assert_allclose(r1.statistic, -r2.statistic)
        np.testing.assert_allclose(r1.p_value, r2.p_value)

    def test_zero_variance_equal_means(self):
        res = t_test_two_sample([1.0, 1.0, 1.0], [1.0, 1.0])
        assert res.statistic == 0.0
        assert res.p_value == 1.0

    def test_zero_variance_unequal_means(self):
        res = t_test_two_sample([1.0, 1.0], [2.0, 2.0])
        assert math.isinf(res.statistic) and res.statistic < 0
        assert res.p_value == 0.0

    def test_too_small_sample_rejected(self):
        with pytest.raises(ValueError):
            t_test_two_sample([1.0], [1.0, 2.0])

    def test_p_shrinks_with_separation(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0.0, 1.0, 50)
        last = 1.1
        for shift in (0.0, 0.4, 0.8, 1.6, 3.2):
            p = t_test_two_sample(a, a + shift).p_value
            assert p <= last + 1e-12
            last = p


# (a, b, x, I_x(a, b)) frozen from an independent reference implementation.
BETAINC_CASES = [
    (25.11629002420528, 5.41411866552658, 0.7756856902451935, 0.2310840488080648),
    (9.240725442626498, 2.010947823993985, 0.8735534453962619, 0.6248771013543439),
    (0.5090325912533166, 4.981001984781768, 0.7970694287520462, 0.9999010618194545),
    (18.877017627895718, 2.027284832870087, 0.2784256121007733, 5.125378793967888e-10),
    (10.418322629868747, 2.8369349435310856, 0.5045482589579533, 0.014040623216812455),
    (22.27384487735735, 5.9743516155760386, 0.7926619192137531, 0.48587773935850065),
    (25.00051540881416, 5.937072841786744, 0.21530869823559895, 8.634265373658751e-13),
    (6.660417744156429, 3.7914757443562754, 0.04394200796138337, 6.9888765169751e-08),
]


class TestIncompleteBeta:
    @pytest.mark.parametrize("a,b,x,ref", BETAINC_CASES)
    def test_matches_frozen_reference(self, a, b, x, ref):
        got = regularized_incomplete_beta(a, b, x)
        assert abs(got - ref) < 1e-10

    def test_bounds(self):
        assert regularized_incomplete_beta(2.0, 3.0, 0.0) == 0.0
        assert regularized_incomplete_beta(2.0, 3.0, 1.0) == 1.0

    def test_reflection_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            a = float(rng.uniform(0.4, 30.0))
            b = float(rng.uniform(0.4, 30.0))
            x = float(rng.uniform(0.0, 1.0))
            lhs = regularized_incomplete_beta(a, b, x)
            rhs = 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_invalid_arguments_rejected(self):
        with pytest.raises(ValueError):
            regularized_incomplete_beta(-1.0, 2.0, 0.5)
        with pytest.raises(ValueError):
            regularized_incomplete_beta(1.0, 2.0, 1.5)


class TestCtr:
    def test_simple_rate(self):
        assert ctr(3, 10) == pytest.approx(0.3)

    def test_zero_over_zero(self):
        assert ctr(0, 0) == 0.0

    def test_clicks_cannot_exceed_impressions(self):
        with pytest.raises(ValueError):
            ctr(3, 2)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ctr(-1, 2)


class TestMetricReport:
    def test_csv_round_trip(self, tmp_path):
        reports = [
            MetricReport("opbm", 0.3233, 10, 0.1732, 200, 50000, 42),
            MetricReport("oracle", 0.3451, 10, None, 200, 50000, 42),
        ]
        path = tmp_path / "reports.csv"
        write_metric_reports(reports, path)
        assert read_metric_reports(path) == reports

    def test_json_carries_schema_version(self):
        report = MetricReport("naive", 0.30, 10, 0.82, 10, 100, 1)
        import json

        payload = json.loads(report.to_json())
        assert payload["schema_version"] == 1
        assert payload["estimator"] == "naive"
