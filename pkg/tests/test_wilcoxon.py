import numpy as np
import pytest
from scipy.stats import rankdata

from src.analysis.wilcoxon import (EXACT_MAX_N, Alternative, PairedSample, _normal_p, candidate_improved,
                                   exact_rank_sum_counts, wilcoxon_signed_rank)
from src.utils.errors import InvalidArgumentError, ValidationError


def brute_force_two_sided(differences):
    """Two-sided p-value by enumerating every sign pattern."""
    differences = np.asarray(differences, dtype=float)
    differences = differences[differences != 0]
    ranks = rankdata(np.abs(differences))
    total = ranks.sum()
    observed = abs(ranks[differences > 0].sum() - total / 2)
    # one row per sign pattern, bit i set when difference i is positive
    patterns = (np.arange(2 ** len(ranks))[:, None] >> np.arange(len(ranks))) & 1
    t_plus = patterns @ ranks
    extreme = np.count_nonzero(np.abs(t_plus - total / 2) >= observed - 1e-9)
    return extreme / 2 ** len(ranks)


def sample_from(differences, **kwargs):
    differences = np.asarray(differences, dtype=float)
    return PairedSample(baseline=differences, candidate=np.zeros_like(differences), **kwargs)


class TestExactDistribution:

    def test_counts_cover_all_sign_patterns(self):
        counts = exact_rank_sum_counts([2, 4, 6, 8])
        assert counts.sum() == 16
        # doubled ranks 2, 4, 6, 8: sum 10 is reached by {2, 8} and {4, 6}
        assert counts[10] == 2
        np.testing.assert_array_equal(counts, counts[::-1])

    def test_all_improved_ten_cases(self):
        result = wilcoxon_signed_rank(sample_from(np.arange(1, 11) * 0.3))
        assert result.exact
        assert result.statistic == 0.0
        assert result.r_plus == 55.0
        assert result.p_value == pytest.approx(2 / 1024)

    @pytest.mark.parametrize('differences', [
        [1.5, -0.5, 2.0, 2.0, 3.0, -1.0, 0.5, 4.0],
        [0.2, 0.2, -0.2, 0.4, 0.4, 0.4, -0.1, 0.3, 0.9],
        [-1, -2, 3, -4, 5, -6, 7],
    ])
    def test_matches_enumeration_with_ties(self, differences):
        result = wilcoxon_signed_rank(sample_from(differences))
        assert result.p_value == pytest.approx(brute_force_two_sided(differences))

    def test_one_sided_is_half_of_symmetric_tail(self):
        sample = sample_from(np.arange(1, 9, dtype=float))
        one_sided = wilcoxon_signed_rank(sample, Alternative.CANDIDATE_BETTER)
        two_sided = wilcoxon_signed_rank(sample)
        assert one_sided.p_value == pytest.approx(1 / 256)
        assert two_sided.p_value == pytest.approx(2 * one_sided.p_value)


class TestNormalApproximation:

    def test_switches_above_exact_limit(self, rng):
        sample = sample_from(rng.normal(0.3, 1.0, size=EXACT_MAX_N + 1))
        assert not wilcoxon_signed_rank(sample).exact
        small = sample_from(rng.normal(0.3, 1.0, size=EXACT_MAX_N))
        assert wilcoxon_signed_rank(small).exact

    def test_thirty_uniform_improvements(self):
        # 30 tied ranks of 15.5: z = (232.5 - 0.5) / sqrt(30 * 15.5^2 / 4)
        result = wilcoxon_signed_rank(PairedSample(np.full(30, 3.0), np.full(30, 2.0)))
        assert result.n_effective == 30
        assert result.p_value < 5e-6
        assert result.p_value == pytest.approx(4.62e-8, rel=0.05)

    def test_dropped_zeros_do_not_count_towards_the_exact_limit(self, rng):
        differences = rng.normal(0.2, 1.0, size=EXACT_MAX_N)
        exact = wilcoxon_signed_rank(sample_from(differences)).p_value
        padded = wilcoxon_signed_rank(sample_from(np.append(differences, 0.0)), zero_method='wilcox')
        assert padded.exact
        assert padded.p_value == pytest.approx(exact)


class TestSampleHandling:

    def test_all_zero_differences_are_degenerate(self):
        result = wilcoxon_signed_rank(PairedSample(np.ones(6), np.ones(6)))
        assert result.degenerate
        assert result.p_value == 1.0
        assert result.n_effective == 0

    def test_swapping_sides_keeps_two_sided_p(self, rng):
        sample = PairedSample(rng.normal(5, 1, 15), rng.normal(4.5, 1, 15))
        assert wilcoxon_signed_rank(sample).p_value == pytest.approx(wilcoxon_signed_rank(sample.swapped()).p_value)
        forward = wilcoxon_signed_rank(sample, Alternative.CANDIDATE_BETTER).p_value
        backward = wilcoxon_signed_rank(sample.swapped(), Alternative.CANDIDATE_BETTER).p_value
        assert forward + backward >= 1.0 - 1e-12

    def test_higher_is_better_orientation(self):
        sample = PairedSample(np.array([0.8, 0.7, 0.9]), np.array([0.9, 0.8, 0.95]), lower_is_better=False)
        assert candidate_improved(sample)
        assert candidate_improved(sample.swapped()) is False

    def test_zero_methods_differ(self):
        sample = sample_from([0.0, 1.0, 2.0, -3.0])
        wilcox = wilcoxon_signed_rank(sample, zero_method='wilcox')
        pratt = wilcoxon_signed_rank(sample, zero_method='pratt')
        assert (wilcox.r_plus, wilcox.r_minus) == (3.0, 3.0)
        assert (pratt.r_plus, pratt.r_minus) == (5.0, 4.0)
        assert wilcox.n_effective == pratt.n_effective == 3

    def test_invalid_inputs(self):
        with pytest.raises(ValidationError):
            PairedSample(np.ones(3), np.ones(4))
        with pytest.raises(ValidationError):
            PairedSample(np.array([1.0, np.nan]), np.ones(2))
        with pytest.raises(InvalidArgumentError):
            wilcoxon_signed_rank(sample_from([1.0, 2.0]), zero_method='zsplit')


@pytest.mark.parametrize('n', range(1, 13))
def test_exact_p_equals_enumeration_for_small_samples(n):
    rng = np.random.default_rng(n)
    for _ in range(50):
        # Rounded values produce ties and zeros.
        differences = np.round(rng.normal(0.3, 1.0, size=n), 1)
        if not differences.any():
            continue
        result = wilcoxon_signed_rank(sample_from(differences))
        assert abs(result.p_value - brute_force_two_sided(differences)) < 1e-12


@pytest.mark.parametrize('n', range(20, EXACT_MAX_N + 1))
def test_exact_and_normal_p_agree_near_the_switch(n):
    rng = np.random.default_rng(1000 + n)
    for _ in range(10):
        differences = rng.normal(0.2, 1.0, size=n)
        ranks = rankdata(np.abs(differences))
        exact = wilcoxon_signed_rank(sample_from(differences))
        assert exact.exact
        approximate = _normal_p(ranks, float(ranks[differences > 0].sum()), Alternative.TWO_SIDED)
        assert abs(exact.p_value - approximate) < 0.01


@pytest.mark.slow
def test_normal_approximation_agrees_with_sign_flip_simulation():
    rng = np.random.default_rng(2024)
    differences = rng.normal(0.0, 1.0, size=100)
    result = wilcoxon_signed_rank(sample_from(differences))
    assert not result.exact

    ranks = rankdata(np.abs(differences))
    centre = ranks.sum() / 2
    observed = abs(result.r_plus - centre)
    extreme = 0
    draws = 2_000_000
    for _ in range(draws // 50_000):
        signs = rng.integers(0, 2, size=(50_000, 100), dtype=np.int8)
        t_plus = signs @ ranks
        extreme += int(np.count_nonzero(np.abs(t_plus - centre) >= observed))
    assert abs(result.p_value - extreme / draws) < 0.005
