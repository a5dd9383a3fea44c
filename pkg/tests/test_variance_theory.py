import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockcalc import (
    Blocked,
    CompleteRandomization,
    StrataMoments,
    exact_moments,
    neyman_var_blocked,
    neyman_var_cr,
    table_from_arrays,
    var_blocked_strat,
    var_cr_srs,
    var_diff_finite,
    var_diff_mixed,
    var_diff_site_sampling,
    var_diff_strat,
    var_diff_strat_unequal,
    var_diff_two_stage,
    var_k,
)
from blockcalc.variance_theory import (
    MODE_CR_SRS_VS_BK_STRAT,
    MODE_CR_SRS_VS_CR_STRAT,
    TwoStageStratum,
    VarianceReport,
)

from conftest import equal_p_proportions, make_random_table, rel_close


def simple_moments(mu_t, mu_c, sigma2=1.0, weights=None, sigma2_t=None, sigma2_c=None):
    k = len(mu_t)
    return StrataMoments(
        weights=weights if weights is not None else np.full(k, 1.0 / k),
        mu_t=mu_t,
        mu_c=mu_c,
        sigma2_t=sigma2_t if sigma2_t is not None else np.full(k, sigma2),
        sigma2_c=sigma2_c if sigma2_c is not None else np.full(k, sigma2),
        sigma2_tc=np.zeros(k),
    )


class TestVarK:
    def test_two_point(self):
        assert var_k([0.0, 4.0], [0.5, 0.5]) == pytest.approx(4.0)

    def test_constants(self):
        assert var_k([3.0, 3.0, 3.0], [0.2, 0.3, 0.5]) == 0.0

    def test_single_value(self):
        assert var_k([7.0], [1.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="equal length"):
            var_k([1.0, 2.0], [1.0])

    def test_bad_weights(self):
        with pytest.raises(ValueError, match="weights"):
            var_k([1.0, 2.0], [0.5, 0.6])

    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=8),
        st.integers(0, 10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_nonnegative_and_shift_invariant(self, values, seed):
        rng = np.random.default_rng(seed)
        w = rng.random(len(values)) + 0.05
        w /= w.sum()
        base = var_k(values, w)
        assert base >= 0
        shifted = var_k(np.asarray(values) + 17.5, w)
        assert shifted == pytest.approx(base, abs=1e-8)


class TestNeymanVarCr:
    def test_two_unit_hand_value(self, two_unit_table):
        assert neyman_var_cr(two_unit_table, 1) == pytest.approx(1.0)

    def test_additive_effect_drops_effect_variance(self):
        rng = np.random.default_rng(1)
        y_c = rng.standard_normal(6)
        table = table_from_arrays([1] * 6, y_c + 5.0, y_c)
        s2 = float(np.var(y_c, ddof=1))
        assert neyman_var_cr(table, 2) == pytest.approx(s2 / 2 + s2 / 4)

    def test_mirrored_blocks(self, mirrored_blocks_table):
        assert neyman_var_cr(mirrored_blocks_table, 2) == pytest.approx(4.0 / 3.0)

    def test_tiny_table_rejected(self):
        table = table_from_arrays([1], [1.0], [0.0])
        with pytest.raises(ValueError, match="n >= 2"):
            neyman_var_cr(table, 1)


class TestNeymanVarBlocked:
    def test_mirrored_blocks(self, mirrored_blocks_table):
        assert neyman_var_blocked(mirrored_blocks_table, Blocked((1, 1))) == pytest.approx(2.0)

    def test_single_block_equals_cr(self):
        rng = np.random.default_rng(2)
        table = table_from_arrays([1] * 8, rng.standard_normal(8), rng.standard_normal(8))
        assert neyman_var_blocked(table, Blocked((3,))) == pytest.approx(
            neyman_var_cr(table, 3)
        )

    def test_constant_table(self):
        table = table_from_arrays([1, 1, 2, 2], [1.0] * 4, [1.0] * 4)
        assert neyman_var_blocked(table, Blocked((1, 1))) == 0.0

    def test_singleton_block_rejected(self):
        table = table_from_arrays([1, 2, 2, 2], np.arange(4.0), np.zeros(4))
        with pytest.raises(ValueError):
            neyman_var_blocked(table, Blocked((1, 1)))


class TestVarDiffFinite:
    def test_mirrored_blocks_decomposition(self, mirrored_blocks_table):
        report = var_diff_finite(mirrored_blocks_table, 0.5)
        assert report.decomposition["between_term"] == 0.0
        assert report.decomposition["within_term"] == pytest.approx(2.0 / 3.0)
        assert report.diff == pytest.approx(-2.0 / 3.0)
        assert report.diff == pytest.approx(report.var_cr - report.var_bk)

    def test_single_block_diff_zero(self):
        rng = np.random.default_rng(3)
        table = table_from_arrays([1] * 6, rng.standard_normal(6), rng.standard_normal(6))
        report = var_diff_finite(table, 0.5)
        assert report.diff == pytest.approx(0.0, abs=1e-15)

    def test_pure_between_spread_benefits_blocking(self):
        table = table_from_arrays([1, 1, 2, 2], [0, 0, 2, 2], [0, 0, 2, 2])
        report = var_diff_finite(table, 0.5)
        assert report.decomposition["within_term"] == 0.0
        assert report.diff == pytest.approx(report.decomposition["between_term"])
        assert report.diff > 0

    def test_fractional_counts_rejected(self, mirrored_blocks_table):
        with pytest.raises(ValueError, match="not an integer"):
            var_diff_finite(mirrored_blocks_table, 0.25)

    @pytest.mark.parametrize("seed", range(30))
    def test_identity_with_closed_forms_on_random_tables(self, seed):
        rng = np.random.default_rng(1000 + seed)
        table = make_random_table(rng)
        for p in equal_p_proportions(table):
            report = var_diff_finite(table, p)
            direct = report.var_cr - report.var_bk
            assert abs(report.diff - direct) <= 1e-12 * max(1.0, abs(direct))

    @pytest.mark.parametrize("seed", range(10))
    def test_equal_blocks_half_treated_null_effect_simplification(self, seed):
        # With K equal even blocks, half of each treated, and y_t == y_c,
        # the difference collapses to
        #   (1/(n-1)) [4 var_k(mean_ck) - (4(K-1)/n) mean_k(S2_ck)].
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        size = int(rng.choice([4, 6, 8]))
        n = k * size
        y = rng.standard_normal(n) + np.repeat(rng.standard_normal(k), size)
        labels = np.repeat(np.arange(1, k + 1), size)
        table = table_from_arrays(labels, y, y)
        report = var_diff_finite(table, 0.5)
        means = np.asarray([np.mean(y[labels == j]) for j in range(1, k + 1)])
        s2 = np.asarray([np.var(y[labels == j], ddof=1) for j in range(1, k + 1)])
        simplified = (
            4 * var_k(means, np.full(k, 1.0 / k))
            - 4 * (k - 1) / n * float(np.mean(s2))
        ) / (n - 1)
        assert abs(report.diff - simplified) <= 1e-12 * max(1.0, abs(simplified))


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(25))
    def test_closed_forms_match_enumeration(self, seed):
        rng = np.random.default_rng(7000 + seed)
        table = make_random_table(rng)
        n_t = int(rng.integers(1, table.n))
        cr = exact_moments(table, CompleteRandomization(n_t), "tau_hat")
        assert rel_close(neyman_var_cr(table, n_t), cr.variance, 1e-10)
        design = Blocked(tuple(int(rng.integers(1, s)) for s in table.block_sizes))
        bk = exact_moments(table, design, "tau_hat")
        assert rel_close(neyman_var_blocked(table, design), bk.variance, 1e-10)


class TestVarCrSrs:
    def test_arithmetic(self):
        moments = simple_moments([0.0], [0.0]).with_derived_pooled()
        assert var_cr_srs(moments, 10, 10) == pytest.approx(0.2)

    def test_degenerate_arm(self):
        moments = StrataMoments(
            weights=[1.0], mu_t=[0.0], mu_c=[0.0], sigma2_t=[0.0], sigma2_c=[2.0], sigma2_tc=[0.0]
        ).with_derived_pooled()
        assert var_cr_srs(moments, 5, 4) == pytest.approx(0.5)

    def test_mixture_built_pooled(self):
        moments = simple_moments([0.0, 2.0], [0.0, 2.0]).with_derived_pooled()
        assert moments.pooled.sigma2_c == pytest.approx(2.0)
        assert var_cr_srs(moments, 2, 2) == pytest.approx(2.0)

    def test_missing_pooled_rejected(self):
        moments = simple_moments([0.0, 2.0], [0.0, 2.0])
        with pytest.raises(ValueError, match="pooled"):
            var_cr_srs(moments, 2, 2)


class TestVarBlockedStrat:
    def test_arithmetic(self):
        moments = simple_moments([0.0, 0.0], [0.0, 0.0])
        assert var_blocked_strat(moments, [2, 2], [1, 1]) == pytest.approx(1.0)

    def test_zero_variances(self):
        moments = simple_moments([0.0, 1.0], [0.0, 1.0], sigma2=0.0)
        assert var_blocked_strat(moments, [4, 4], [2, 2]) == 0.0

    def test_single_stratum_reduces_to_srs_form(self):
        moments = simple_moments([0.0], [0.0], sigma2=3.0)
        assert var_blocked_strat(moments, [10], [4]) == pytest.approx(3.0 / 4 + 3.0 / 6)


class TestVarDiffStrat:
    def test_worked_two_stratum_example(self):
        moments = simple_moments([0.0, 2.0], [0.0, 2.0])
        report = var_diff_strat(moments, n=4, p=0.5)
        assert report.diff == pytest.approx(4.0 / 3.0)

    def test_equal_means_give_zero(self):
        moments = simple_moments([1.0, 1.0], [2.0, 2.0])
        report = var_diff_strat(moments, n=8, p=0.5)
        assert report.diff == pytest.approx(0.0, abs=1e-15)

    def test_single_stratum_gives_zero(self):
        moments = simple_moments([3.0], [1.0])
        assert var_diff_strat(moments, n=6, p=0.5).diff == pytest.approx(0.0, abs=1e-15)

    def test_nonnegative_under_fuzzing(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            k = int(rng.integers(1, 6))
            sizes = 2 * rng.integers(1, 13, size=k)
            n = int(sizes.sum())
            moments = simple_moments(
                rng.normal(size=k) * 3,
                rng.normal(size=k) * 3,
                weights=sizes / n,
                sigma2_t=rng.random(k) * 4,
                sigma2_c=rng.random(k) * 4,
            )
            report = var_diff_strat(moments, n=n, p=0.5)
            assert report.diff >= -1e-12


class TestVarDiffStratUnequal:
    def test_reduces_to_equal_proportions_exactly(self):
        rng = np.random.default_rng(8)
        k = 3
        w = np.full(k, 1.0 / k)
        moments = simple_moments(
            rng.normal(size=k), rng.normal(size=k), weights=w,
            sigma2_t=rng.random(k) + 0.5, sigma2_c=rng.random(k) + 0.5,
        )
        equal = var_diff_strat(moments, n=12, p=0.5)
        unequal = var_diff_strat_unequal(moments, n=12, p_k=[0.5] * k, p=0.5)
        assert unequal.diff == equal.diff
        assert unequal.decomposition["unequal_p_term"] == 0.0

    def test_worked_negative_example(self):
        moments = simple_moments([0.0, 0.0], [0.0, 0.0])
        report = var_diff_strat_unequal(moments, n=8, p_k=[0.25, 0.75], p=0.5)
        assert report.diff == pytest.approx(-1.0 / 6.0, abs=1e-15)

    def test_equal_means_equal_proportions_zero(self):
        moments = simple_moments([1.0, 1.0], [0.0, 0.0], sigma2_t=[2.0, 3.0], sigma2_c=[1.0, 4.0])
        report = var_diff_strat_unequal(moments, n=8, p_k=[0.5, 0.5])
        assert report.diff == pytest.approx(0.0, abs=1e-15)

    def test_mismatched_average_proportion_rejected(self):
        moments = simple_moments([0.0, 0.0], [0.0, 0.0])
        with pytest.raises(ValueError, match="weighted mean"):
            var_diff_strat_unequal(moments, n=8, p_k=[0.25, 0.75], p=0.4)

    @pytest.mark.parametrize("seed", range(20))
    def test_equal_arm_variance_simplification(self, seed):
        # With sigma2_ck == sigma2_tk == s2_k the varying-proportion term
        # equals sum_k n_k/(n^2 p(1-p)) (p-p_k)(p-(1-p_k))/((1-p_k)p_k) s2_k.
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 5))
        sizes = rng.choice([4, 8, 12], size=k)
        n = int(sizes.sum())
        w = sizes / n
        s2 = rng.random(k) * 5
        p_k = rng.choice([0.25, 0.5, 0.75], size=k)
        p = float(w @ p_k)
        if not 0 < p < 1 or np.any(np.round(p_k * sizes) != p_k * sizes):
            pytest.skip("infeasible draw")
        moments = simple_moments(
            rng.normal(size=k), rng.normal(size=k), weights=w, sigma2_t=s2, sigma2_c=s2
        )
        report = var_diff_strat_unequal(moments, n=n, p_k=p_k, p=p)
        simplified = float(
            np.sum(
                sizes / (n**2 * p * (1 - p))
                * (p - p_k) * (p - (1 - p_k)) / ((1 - p_k) * p_k)
                * s2
            )
        )
        assert abs(report.decomposition["unequal_p_term"] - simplified) <= 1e-12 * max(
            1.0, abs(simplified)
        )


class TestVarDiffMixed:
    def test_equal_means_zero_both_modes(self):
        moments = simple_moments([1.0, 1.0], [0.0, 0.0]).with_derived_pooled()
        for mode in (MODE_CR_SRS_VS_BK_STRAT, MODE_CR_SRS_VS_CR_STRAT):
            assert var_diff_mixed(moments, 4, 4, mode).diff == pytest.approx(0.0, abs=1e-15)

    def test_srs_vs_blocked_worked_example(self):
        moments = simple_moments([0.0, 2.0], [0.0, 2.0]).with_derived_pooled()
        report = var_diff_mixed(moments, 2, 2, MODE_CR_SRS_VS_BK_STRAT)
        assert report.diff == pytest.approx(1.0)

    def test_srs_vs_stratified_cr_can_be_negative(self):
        moments = simple_moments([1.0, 3.0], [0.0, 2.0]).with_derived_pooled()
        report = var_diff_mixed(moments, 2, 2, MODE_CR_SRS_VS_CR_STRAT)
        assert report.diff == pytest.approx(-1.0 / 3.0)

    def test_srs_vs_blocked_never_negative_under_fuzzing(self):
        rng = np.random.default_rng(77)
        for _ in range(300):
            k = int(rng.integers(1, 5))
            w = rng.random(k) + 0.1
            moments = simple_moments(
                rng.normal(size=k) * 2, rng.normal(size=k) * 2, weights=w / w.sum()
            ).with_derived_pooled()
            report = var_diff_mixed(moments, 5, 7, MODE_CR_SRS_VS_BK_STRAT)
            assert report.diff >= 0


class TestVarDiffSiteSampling:
    def make_block(self, values):
        values = np.asarray(values, dtype=float)
        return table_from_arrays([1] * len(values), values, values)

    def test_identical_blocks_make_blocking_costly(self):
        population = [self.make_block([0.0, 2.0])] * 3
        report = var_diff_site_sampling(population, k_draw=4, p=0.5, reps=400, seed=1)
        assert report.diff < 0
        assert report.diff + 3 * report.mc_se < 0

    def test_between_spread_only_makes_blocking_helpful(self):
        population = [self.make_block([0.0, 0.0]), self.make_block([2.0, 2.0])]
        report = var_diff_site_sampling(population, k_draw=4, p=0.5, reps=400, seed=2)
        assert report.diff > 0

    def test_same_seed_reproduces(self):
        population = [self.make_block([0.0, 1.0]), self.make_block([3.0, 5.0])]
        a = var_diff_site_sampling(population, k_draw=3, p=0.5, reps=200, seed=9)
        b = var_diff_site_sampling(population, k_draw=3, p=0.5, reps=200, seed=9)
        assert a == b

    def test_empty_population_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            var_diff_site_sampling([], k_draw=2, p=0.5)


class TestVarDiffTwoStage:
    def test_identical_means_exactly_zero(self):
        rows = [TwoStageStratum(1.0, 0.0, 1.0, 1.0, n_k=4)] * 3
        report = var_diff_two_stage(rows, k_draw=4, p=0.5, reps=300, seed=3)
        assert report.diff == 0.0

    def test_two_types_give_positive_estimate(self):
        rows = [
            TwoStageStratum(0.0, 0.0, 1.0, 1.0, n_k=4),
            TwoStageStratum(2.0, 2.0, 1.0, 1.0, n_k=4),
        ]
        report = var_diff_two_stage(rows, k_draw=4, p=0.5, reps=400, seed=4)
        assert report.diff > 0
        assert report.var_cr == pytest.approx(report.var_bk + report.diff)

    def test_estimate_never_negative(self):
        rng = np.random.default_rng(5)
        rows = [
            TwoStageStratum(float(rng.normal()), float(rng.normal()), 1.0, 2.0, n_k=4)
            for _ in range(5)
        ]
        report = var_diff_two_stage(rows, k_draw=3, p=0.25, reps=500, seed=5)
        assert report.diff >= 0

    def test_same_seed_reproduces(self):
        rows = [TwoStageStratum(0.0, 1.0, 1.0, 1.0, n_k=4)] * 2
        a = var_diff_two_stage(rows, k_draw=2, p=0.5, reps=100, seed=6)
        b = var_diff_two_stage(rows, k_draw=2, p=0.5, reps=100, seed=6)
        assert a == b


class TestVarianceReport:
    def test_ratio_undefined_when_var_cr_zero(self):
        report = VarianceReport(framework="finite", var_cr=0.0, var_bk=0.0, diff=0.0)
        assert report.ratio is None

    def test_inconsistent_diff_rejected(self):
        with pytest.raises(ValueError, match="inconsistent"):
            VarianceReport(framework="finite", var_cr=1.0, var_bk=0.5, diff=0.75)
