"""
Wilcoxon Signed-Rank Module

This module compares a candidate method against a baseline on paired per-case
metric values with the Wilcoxon signed-rank test.

Differences are oriented so that a positive value favours the candidate
(baseline - candidate when lower is better). Ties among |differences| get
average ranks. Up to EXACT_MAX_N non-zero differences the p-value is exact:
the null distribution of the positive rank sum is built by dynamic
programming over doubled (integer) ranks, which counts the same sign patterns
as enumerating all 2^n of them. Above that a normal approximation with tie
correction and continuity correction is used.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from src.utils.errors import InvalidArgumentError, ValidationError

logger = logging.getLogger(__name__)

EXACT_MAX_N = 25

ZERO_METHODS = ('wilcox', 'pratt')


class Alternative(Enum):
    TWO_SIDED = 'two-sided'
    CANDIDATE_BETTER = 'candidate-better'


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Per-case (baseline, candidate) metric values for one metric and organ."""

    baseline: np.ndarray
    candidate: np.ndarray
    metric: str = ''
    organ: str = ''
    lower_is_better: bool = True
    excluded: int = 0

    def __post_init__(self):
        baseline = np.asarray(self.baseline, dtype=np.float64).ravel()
        candidate = np.asarray(self.candidate, dtype=np.float64).ravel()
        if baseline.shape != candidate.shape:
            raise ValidationError(
                f"paired sample {self.metric}/{self.organ}: {baseline.size} baseline "
                f"values vs {candidate.size} candidate values")
        if baseline.size == 0:
            raise ValidationError(f"paired sample {self.metric}/{self.organ} is empty")
        if not (np.all(np.isfinite(baseline)) and np.all(np.isfinite(candidate))):
            raise ValidationError(f"paired sample {self.metric}/{self.organ} has non-finite values")
        object.__setattr__(self, 'baseline', baseline)
        object.__setattr__(self, 'candidate', candidate)

    @property
    def improvements(self) -> np.ndarray:
        """Paired differences, positive where the candidate is better."""
        if self.lower_is_better:
            return self.baseline - self.candidate
        return self.candidate - self.baseline

    def swapped(self) -> 'PairedSample':
        return PairedSample(self.candidate, self.baseline, self.metric, self.organ,
                            self.lower_is_better, self.excluded)


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_effective: int
    degenerate: bool = False
    exact: bool = True
    r_plus: float = 0.0
    r_minus: float = 0.0


def candidate_improved(sample: PairedSample) -> bool:
    """True when the median paired difference favours the candidate."""
    return bool(np.median(sample.improvements) > 0)


def _signed_ranks(improvements: np.ndarray, zero_method: str):
    """Ranks of the non-zero differences and a mask of which are positive."""
    if zero_method == 'pratt':
        ranks = rankdata(np.abs(improvements))
        nonzero = improvements != 0
        return ranks[nonzero], improvements[nonzero] > 0
    nonzero = improvements[improvements != 0]
    return rankdata(np.abs(nonzero)), nonzero > 0


def exact_rank_sum_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """
    Number of sign patterns giving each doubled positive-rank sum.

    Args:
        doubled_ranks (sequence): 2 * rank for every non-zero difference

    Returns:
        ndarray: counts[k] = patterns whose doubled positive-rank sum is k
    """
    total = int(np.sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts += shifted
    return counts


def _exact_p(doubled: np.ndarray, t_plus2: int, alternative: Alternative) -> float:
    counts = exact_rank_sum_counts(doubled)
    total = len(counts) - 1
    sums = np.arange(total + 1)
    if alternative is Alternative.TWO_SIDED:
        extreme = np.abs(2 * sums - total) >= abs(2 * t_plus2 - total)
    else:
        extreme = sums >= t_plus2
    return float(counts[extreme].sum()) / float(2 ** len(doubled))


def _normal_p(ranks: np.ndarray, t_plus: float, alternative: Alternative) -> float:
    mean = ranks.sum() / 2.0
    # Var of sum_i r_i * Bernoulli(1/2); with average ranks this equals the
    # tie-corrected n(n+1)(2n+1)/24 - sum(t^3 - t)/48.
    sd = np.sqrt(np.sum(ranks ** 2) / 4.0)
    if alternative is Alternative.TWO_SIDED:
        z = max(abs(t_plus - mean) - 0.5, 0.0) / sd
        return float(min(1.0, 2.0 * norm.sf(z)))
    z = (t_plus - mean - 0.5) / sd
    return float(norm.sf(z))


def wilcoxon_signed_rank(sample: PairedSample, alternative: Alternative = Alternative.TWO_SIDED,
                         zero_method: str = 'wilcox') -> WilcoxonResult:
    """
    Wilcoxon signed-rank test of candidate against baseline.

    Args:
        sample (PairedSample): Paired metric values
        alternative (Alternative): Two-sided, or one-sided in the candidate's favour
        zero_method (str): 'wilcox' drops zero differences before ranking,
            'pratt' ranks them and then drops them

    Returns:
        WilcoxonResult: W, p-value, number of non-zero differences, flags
    """
    alternative = Alternative(alternative)
    if zero_method not in ZERO_METHODS:
        raise InvalidArgumentError(f"zero_method must be one of {ZERO_METHODS}, got {zero_method}")

    ranks, positive = _signed_ranks(sample.improvements, zero_method)
    n_effective = int(ranks.size)
    if n_effective == 0:
        logger.info("Wilcoxon %s/%s: all differences are zero", sample.metric, sample.organ)
        return WilcoxonResult(statistic=0.0, p_value=1.0, n_effective=0, degenerate=True)

    r_plus = float(ranks[positive].sum())
    r_minus = float(ranks[~positive].sum())
    if alternative is Alternative.TWO_SIDED:
        statistic = min(r_plus, r_minus)
    else:
        statistic = r_plus

    exact = n_effective <= EXACT_MAX_N
    if exact:
        doubled = np.rint(2.0 * ranks).astype(np.int64)
        p_value = _exact_p(doubled, int(doubled[positive].sum()), alternative)
    else:
        p_value = _normal_p(ranks, r_plus, alternative)

    return WilcoxonResult(statistic=statistic, p_value=min(p_value, 1.0), n_effective=n_effective,
                          degenerate=False, exact=exact, r_plus=r_plus, r_minus=r_minus)
