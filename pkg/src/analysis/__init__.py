"""
Segmentation Analysis Package

This package contains the surface-distance metrics, the Wilcoxon test and
the significance-points ranking.
"""

from .metrics import (
    extract_surface,
    distance_field,
    mdta,
    hd95,
    volume_difference,
    evaluate_case
)

from .wilcoxon import (
    PairedSample,
    WilcoxonResult,
    wilcoxon_signed_rank
)

from .ranking import (
    significance_points,
    build_ranking_table,
    select_best_model
)

__all__ = [
    'extract_surface',
    'distance_field',
    'mdta',
    'hd95',
    'volume_difference',
    'evaluate_case',
    'PairedSample',
    'WilcoxonResult',
    'wilcoxon_signed_rank',
    'significance_points',
    'build_ranking_table',
    'select_best_model'
]
