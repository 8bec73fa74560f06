"""
Missing Key Finder Module

This module finds rows or files that are present on one side of a join and
missing on the other: metric tables that must pair up case by case, and
prediction directories that must hold one volume per manifest case.
"""

import logging
import os
from typing import List, Sequence, Set, Tuple

import pandas as pd

from src.utils.errors import KeyMismatchError

logger = logging.getLogger(__name__)

PAIR_KEYS = ('case_id', 'organ', 'dataset_size')


def _key_set(df: pd.DataFrame, keys: Sequence[str]) -> Set[Tuple]:
    return set(df[list(keys)].astype(str).itertuples(index=False, name=None))


def find_missing_keys(baseline_df: pd.DataFrame, candidate_df: pd.DataFrame,
                      keys: Sequence[str] = PAIR_KEYS) -> pd.DataFrame:
    """
    List key tuples present in only one of two metric tables.

    Args:
        baseline_df (DataFrame): Baseline metric rows
        candidate_df (DataFrame): Candidate metric rows
        keys (sequence): Columns identifying a row

    Returns:
        DataFrame: One row per unmatched key, with a 'missing_from' column
    """
    baseline_keys = _key_set(baseline_df, keys)
    candidate_keys = _key_set(candidate_df, keys)

    records = [dict(zip(keys, k), missing_from='candidate') for k in sorted(baseline_keys - candidate_keys)]
    records += [dict(zip(keys, k), missing_from='baseline') for k in sorted(candidate_keys - baseline_keys)]
    return pd.DataFrame(records, columns=list(keys) + ['missing_from'])


def require_matching_keys(baseline_df: pd.DataFrame, candidate_df: pd.DataFrame,
                          keys: Sequence[str] = PAIR_KEYS, name: str = 'candidate') -> None:
    """Raise KeyMismatchError naming every unmatched key."""
    missing = find_missing_keys(baseline_df, candidate_df, keys)
    if missing.empty:
        return
    described = [
        f"{'/'.join(str(row[k]) for k in keys)} (missing from {row['missing_from']})"
        for _, row in missing.iterrows()
    ]
    logger.debug("Unmatched keys between baseline and %s: %d", name, len(described))
    raise KeyMismatchError(f"baseline and {name} do not share case/organ keys", described)


def find_missing_predictions(case_ids: Sequence[str], pred_dir: str, suffix: str = '.mha') -> List[str]:
    """Case ids whose prediction volume is absent from `pred_dir`."""
    return [c for c in case_ids if not os.path.exists(os.path.join(pred_dir, f"{c}{suffix}"))]
