"""
Metric Table Merger Module

This module loads the per-organ metric tables written by `eval`, merges them,
pairs baseline and candidate rows case by case, and runs the Wilcoxon
comparison for every (method, organ, dataset size, metric).
"""

import logging
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.analysis.ranking import Comparison, significance_marker, significance_points
from src.analysis.wilcoxon import Alternative, PairedSample, candidate_improved, wilcoxon_signed_rank
from src.utils.errors import ValidationError
from src.utils.missing_finder import PAIR_KEYS, require_matching_keys
from src.utils.reports import read_report

logger = logging.getLogger(__name__)

METRIC_COLUMNS = {'mdta': 'mdta_mm', 'hd95': 'hd95_mm'}

REQUIRED_COLUMNS = ['case_id', 'organ', 'method', 'mdta_mm', 'hd95_mm', 'volume_diff_cm3']

COMPARISON_COLUMNS = [
    'method', 'organ', 'dataset_size', 'metric', 'n_pairs', 'n_excluded',
    'median_baseline', 'median_candidate', 'median_difference',
    'statistic', 'p_value', 'improved', 'points', 'marker', 'degenerate',
]


def load_metric_table(path: str) -> pd.DataFrame:
    """
    Read one metric table and check its columns.

    Args:
        path (str): CSV or JSON report written by `eval`

    Returns:
        DataFrame: Rows with string keys and float metric columns
    """
    if not os.path.exists(path):
        raise ValidationError(f"metric table {path} does not exist")
    # Read the table and normalise its header
    df = read_report(path)
    df.columns = [str(col).strip() for col in df.columns]
    # Check required columns
    missing = [col for col in REQUIRED_COLUMNS if col not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    # Tables without dataset sizes form a single group
    if 'dataset_size' not in df.columns:
        df['dataset_size'] = 'all'
    for col in ('case_id', 'organ', 'method', 'dataset_size'):
        df[col] = df[col].astype(str)
    for col in ('mdta_mm', 'hd95_mm', 'volume_diff_cm3'):
        df[col] = pd.to_numeric(df[col], errors='coerce')

    # One row per case, organ, size and method
    duplicated = df.duplicated(subset=list(PAIR_KEYS) + ['method'])
    if duplicated.any():
        first = df[duplicated].iloc[0]
        raise ValidationError(
            f"{path}: duplicate row for case {first['case_id']} organ {first['organ']} "
            f"method {first['method']}")
    logger.info("Loaded %d metric rows from %s", len(df), path)
    return df


def merge_metric_tables(paths: Sequence[str]) -> pd.DataFrame:
    """Concatenate metric tables; the same (case, organ, size, method) twice is an error."""
    if not paths:
        raise ValidationError("no metric tables given")
    # Combine all tables
    merged = pd.concat([load_metric_table(p) for p in paths], ignore_index=True)
    duplicated = merged.duplicated(subset=list(PAIR_KEYS) + ['method'])
    if duplicated.any():
        first = merged[duplicated].iloc[0]
        raise ValidationError(
            f"method {first['method']} appears in more than one table "
            f"(case {first['case_id']}, organ {first['organ']})")
    return merged


def methods_in_order(df: pd.DataFrame) -> List[str]:
    """
    Method names in the order they first appear.

    Args:
        df (DataFrame): Metric rows with a 'method' column

    Returns:
        list: Distinct method names
    """
    return list(dict.fromkeys(df['method']))


def pair_metric(baseline_df: pd.DataFrame, candidate_df: pd.DataFrame, metric: str,
                organ: str, dataset_size: str) -> Tuple[pd.DataFrame, int]:
    """
    Case-aligned (baseline, candidate) values of one metric for one organ.

    Pairs where either side is undefined are dropped and counted.

    Returns:
        tuple: (DataFrame with 'baseline' and 'candidate' columns, excluded count)
    """
    column = METRIC_COLUMNS[metric]

    def select(df):
        rows = df[(df['organ'] == organ) & (df['dataset_size'] == dataset_size)]
        return rows[['case_id', column]]

    # Align the two sides on case id
    paired = select(baseline_df).merge(select(candidate_df), on='case_id',
                                       suffixes=('_baseline', '_candidate'))
    paired = paired.rename(columns={f'{column}_baseline': 'baseline',
                                    f'{column}_candidate': 'candidate'})
    paired = paired.sort_values('case_id', kind='mergesort').reset_index(drop=True)
    # Drop pairs with an undefined side
    defined = paired['baseline'].notna() & paired['candidate'].notna()
    excluded = int((~defined).sum())
    return paired[defined].reset_index(drop=True), excluded


def _comparison_row(method: str, organ: str, dataset_size: str, metric: str,
                    paired: pd.DataFrame, excluded: int, alternative: Alternative,
                    zero_method: str) -> Dict[str, object]:
    row = {'method': method, 'organ': organ, 'dataset_size': dataset_size, 'metric': metric,
           'n_pairs': len(paired), 'n_excluded': excluded}
    if paired.empty:
        logger.warning("%s %s/%s %s: no defined pairs, comparison skipped",
                       method, organ, dataset_size, metric)
        row.update(median_baseline=np.nan, median_candidate=np.nan, median_difference=np.nan,
                   statistic=0.0, p_value=1.0, improved=False, points=0, marker='ns', degenerate=True)
        return row

    # Run the test
    sample = PairedSample(paired['baseline'].to_numpy(), paired['candidate'].to_numpy(),
                          metric=metric, organ=organ, excluded=excluded)
    result = wilcoxon_signed_rank(sample, alternative, zero_method)
    improved = candidate_improved(sample)
    # Points only count when the median difference favours the candidate
    points = significance_points(result.p_value, improved)
    row.update(
        median_baseline=float(np.median(sample.baseline)),
        median_candidate=float(np.median(sample.candidate)),
        median_difference=float(np.median(sample.improvements)),
        statistic=result.statistic,
        p_value=result.p_value,
        improved=improved,
        points=points,
        marker=significance_marker(points),
        degenerate=result.degenerate,
    )
    return row


def compare_methods(baseline_df: pd.DataFrame, candidate_df: pd.DataFrame,
                    alternative: Alternative = Alternative.TWO_SIDED,
                    zero_method: str = 'wilcox') -> Tuple[pd.DataFrame, List[Comparison]]:
    """
    Wilcoxon comparison of every candidate method against the baseline.

    Candidate methods keep the order they first appear in `candidate_df`;
    organs and dataset sizes keep the baseline's order.

    Args:
        baseline_df (DataFrame): Metric rows of the baseline (one method)
        candidate_df (DataFrame): Metric rows of one or more candidate methods
        alternative (Alternative): Test sidedness
        zero_method (str): Zero-difference handling

    Returns:
        tuple: (comparison table, Comparison records for the ranking table)
    """
    if len(methods_in_order(baseline_df)) != 1:
        raise ValidationError(f"baseline table must hold one method, found {methods_in_order(baseline_df)}")
    # Organ and size groups, in baseline order
    groups = list(dict.fromkeys(zip(baseline_df['organ'], baseline_df['dataset_size'])))

    rows = []
    comparisons = []
    for method in methods_in_order(candidate_df):
        candidate = candidate_df[candidate_df['method'] == method]
        require_matching_keys(baseline_df, candidate, name=method)
        # One test per group and metric
        for organ, dataset_size in groups:
            for metric in METRIC_COLUMNS:
                paired, excluded = pair_metric(baseline_df, candidate, metric, organ, dataset_size)
                if excluded:
                    logger.warning("%s %s/%s %s: %d undefined pair(s) excluded",
                                   method, organ, dataset_size, metric, excluded)
                row = _comparison_row(method, organ, dataset_size, metric, paired, excluded,
                                      alternative, zero_method)
                rows.append(row)
                comparisons.append(Comparison(method, organ, dataset_size, metric,
                                              row['p_value'], row['improved']))
    return pd.DataFrame(rows, columns=COMPARISON_COLUMNS), comparisons


def volume_summary(tables: Sequence[pd.DataFrame]) -> pd.DataFrame:
    """
    Mean signed volume difference per method and organ, over defined rows.

    Every method also gets an 'all' row averaged over all of its organs.
    """
    rows = []
    for df in tables:
        for method in methods_in_order(df):
            subset = df[(df['method'] == method) & df['volume_diff_cm3'].notna()]
            # Per organ
            for organ in dict.fromkeys(subset['organ']):
                values = subset.loc[subset['organ'] == organ, 'volume_diff_cm3']
                rows.append({'method': method, 'organ': organ, 'n': len(values),
                             'mean_volume_diff_cm3': float(values.mean())})
            # Over every organ
            rows.append({'method': method, 'organ': 'all', 'n': len(subset),
                         'mean_volume_diff_cm3': float(subset['volume_diff_cm3'].mean())
                         if len(subset) else np.nan})
    return pd.DataFrame(rows, columns=['method', 'organ', 'n', 'mean_volume_diff_cm3'])
