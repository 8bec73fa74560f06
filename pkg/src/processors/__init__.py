"""
Ensemble Processors Package

This package contains the fusion methods, STAPLE, the per-case runner and
the metric table merger.
"""

from .fusion import (
    FusionMethod,
    FusionVariant,
    softmax_channels,
    argmax_labels,
    fuse_logit_sum,
    fuse_softmax_sum,
    majority_vote,
    fuse
)

from .staple import (
    StapleParams,
    StapleResult,
    staple_binary,
    staple_multiclass,
    observed_log_likelihood
)

__all__ = [
    'FusionMethod',
    'FusionVariant',
    'softmax_channels',
    'argmax_labels',
    'fuse_logit_sum',
    'fuse_softmax_sum',
    'majority_vote',
    'fuse',
    'StapleParams',
    'StapleResult',
    'staple_binary',
    'staple_multiclass',
    'observed_log_likelihood'
]
