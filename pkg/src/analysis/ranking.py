"""
Ensemble Ranking Module

This module turns Wilcoxon comparisons into the significance-points ranking
of ensemble methods, and selects the best single cross-validation model.

Points per comparison (strict inequalities, improvement required):

    5 for p < 0.000005
    4 for p < 0.00005
    3 for p < 0.0005
    2 for p < 0.005
    1 for p < 0.05
    0 otherwise, or when the candidate did not improve
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from src.utils.errors import InvalidArgumentError, ValidationError

logger = logging.getLogger(__name__)

POINT_THRESHOLDS = ((5e-6, 5), (5e-5, 4), (5e-4, 3), (5e-3, 2), (5e-2, 1))

RANKED_METRICS = ('mdta', 'hd95')


def significance_points(p: float, improved: bool) -> int:
    """
    Points awarded for an improvement at significance level p.

    Args:
        p (float): p-value in [0, 1]
        improved (bool): Whether the candidate beat the baseline

    Returns:
        int: 0..5
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p-value must lie in [0, 1], got {p}")
    if not improved:
        return 0
    # Strict thresholds: a p-value on a boundary gets the lower bracket
    for threshold, points in POINT_THRESHOLDS:
        if p < threshold:
            return points
    return 0


def significance_marker(points: int) -> str:
    """Asterisk marker for a points value; 'ns' when not significant."""
    return '*' * points if points > 0 else 'ns'


@dataclass(frozen=True)
class Comparison:
    """One Wilcoxon comparison of an ensemble method against the baseline."""

    method: str
    organ: str
    dataset_size: str
    metric: str
    p_value: float
    improved: bool

    @property
    def points(self) -> int:
        return significance_points(self.p_value, self.improved)


@dataclass
class RankingTable:
    """Points per method and metric, summed across organs and dataset sizes."""

    points: Dict[str, Dict[str, int]] = field(default_factory=dict)
    metrics: Sequence[str] = RANKED_METRICS

    def total(self, method: str) -> int:
        return sum(self.points[method].get(metric, 0) for metric in self.metrics)

    @property
    def methods(self) -> List[str]:
        return list(self.points)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for method in self.points:
            row = {'method': method}
            for metric in self.metrics:
                row[f'{metric}_points'] = self.points[method].get(metric, 0)
            row['total_points'] = self.total(method)
            rows.append(row)
        columns = ['method'] + [f'{m}_points' for m in self.metrics] + ['total_points']
        return pd.DataFrame(rows, columns=columns)


def build_ranking_table(comparisons: Sequence[Comparison],
                        metrics: Sequence[str] = RANKED_METRICS) -> RankingTable:
    """
    Sum significance points per (method, metric).

    Methods appear in the order they are first seen in `comparisons`.

    Args:
        comparisons (list): Comparison records
        metrics (sequence): Metrics that earn points

    Returns:
        RankingTable: Aggregated points
    """
    table = RankingTable(points={}, metrics=tuple(metrics))
    for comparison in comparisons:
        # Unranked metrics still list the method
        row = table.points.setdefault(comparison.method, {m: 0 for m in metrics})
        if comparison.metric in metrics:
            row[comparison.metric] += comparison.points
    return table


@dataclass
class BestModelSelection:
    """Outcome of best-model selection with the data behind the decision."""

    index: int
    medians: Dict[int, Dict[str, float]]
    ranks: Dict[int, Dict[str, float]]
    excluded: List[int]
    warnings: List[str] = field(default_factory=list)

    def rank_sum(self, model: int) -> float:
        return sum(self.ranks[model].values())

    def explanation(self) -> List[str]:
        lines = []
        for model in sorted(self.medians):
            med = self.medians[model]
            rnk = self.ranks[model]
            lines.append(
                f"model {model}: median mDTA {med['mdta']:.4f} mm (rank {rnk['mdta']:g}), "
                f"median HD95 {med['hd95']:.4f} mm (rank {rnk['hd95']:g}), "
                f"rank sum {self.rank_sum(model):g}")
        lines.extend(self.warnings)
        lines.append(f"best model: {self.index}")
        return lines


def _defined(values) -> np.ndarray:
    array = np.asarray([np.nan if v is None else v for v in values], dtype=np.float64)
    return array[np.isfinite(array)]


def select_best_model(per_model_metrics: Sequence[Dict[str, Sequence[Optional[float]]]]) -> BestModelSelection:
    """
    Pick the model with the best median mDTA and HD95 ranks.

    Models are ranked by median mDTA and by median HD95 (ascending, average
    ranks for equal medians). The smallest rank sum wins; ties go to the lower
    median mDTA, then to the lowest model index. Models with no defined value
    for a metric are excluded with a warning.

    Args:
        per_model_metrics (list): For each model, {'mdta': [...], 'hd95': [...]}

    Returns:
        BestModelSelection: Winner index, medians, ranks and exclusions
    """
    if not per_model_metrics:
        raise ValidationError("best-model selection needs at least one model")

    # Median of each metric per model
    medians = {}
    excluded = []
    warnings = []
    for index, metrics in enumerate(per_model_metrics):
        values = {m: _defined(metrics.get(m, ())) for m in RANKED_METRICS}
        empty = [m for m, v in values.items() if v.size == 0]
        if empty:
            excluded.append(index)
            message = f"model {index} excluded: no defined {', '.join(empty)} values"
            warnings.append(message)
            logger.warning(message)
            continue
        medians[index] = {m: float(np.median(v)) for m, v in values.items()}

    if not medians:
        raise ValidationError("every model was excluded from best-model selection")

    included = sorted(medians)
    # Average ranks per metric, lower median is better
    ranks = {index: {} for index in included}
    for metric in RANKED_METRICS:
        metric_ranks = rankdata([medians[i][metric] for i in included], method='average')
        for index, rank in zip(included, metric_ranks):
            ranks[index][metric] = float(rank)

    # Tie-break on median mDTA, then on the index
    best = min(included, key=lambda i: (sum(ranks[i].values()), medians[i]['mdta'], i))
    return BestModelSelection(best, medians, ranks, excluded, warnings)
