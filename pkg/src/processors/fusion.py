"""
Ensemble Fusion Module

This module combines the outputs of several segmentation models into one
label volume. Four strategies are supported:

    logit-sum      sum raw channel scores across models, then argmax
    softmax-sum    softmax each model's scores per voxel, sum, then argmax
    majority-vote  argmax each model, then take the most frequent label
    staple         argmax each model, then STAPLE consensus (see staple.py)

Model scores are treated as raw pre-softmax outputs. Ties in argmax and in
voting go to the lowest label index, so background wins a full tie.
"""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np

from src.processors.staple import StapleParams, staple_multiclass
from src.utils.errors import UsageError, ValidationError
from src.volumes.grid import LabelVolume, ScoreVolume, require_same_geometry

logger = logging.getLogger(__name__)


class FusionVariant(Enum):
    LOGIT_SUM = 'logit-sum'
    SOFTMAX_SUM = 'softmax-sum'
    MAJORITY_VOTE = 'majority-vote'
    STAPLE = 'staple'

    @property
    def needs_scores(self) -> bool:
        return self in (FusionVariant.LOGIT_SUM, FusionVariant.SOFTMAX_SUM)


@dataclass(frozen=True)
class FusionMethod:
    """A fusion strategy; STAPLE carries its parameters."""

    variant: FusionVariant
    staple: Optional[StapleParams] = None

    def __post_init__(self):
        variant = FusionVariant(self.variant)
        object.__setattr__(self, 'variant', variant)
        if variant is FusionVariant.STAPLE and self.staple is None:
            object.__setattr__(self, 'staple', StapleParams())
        if variant is not FusionVariant.STAPLE and self.staple is not None:
            raise ValidationError(f"{variant.value} takes no STAPLE parameters")

    @property
    def name(self) -> str:
        return self.variant.value


def softmax(scores: np.ndarray) -> np.ndarray:
    """
    Per-voxel softmax over axis 0 in float64 with max subtraction.

    Args:
        scores (ndarray): Array of shape (C, ...)

    Returns:
        ndarray: float64 probabilities of the same shape
    """
    wide = np.asarray(scores, dtype=np.float64)
    # Subtract the max so exp never overflows
    shifted = wide - wide.max(axis=0, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=0, keepdims=True)
    return shifted


def softmax_channels(scores: ScoreVolume) -> ScoreVolume:
    """
    Map channel scores to per-voxel probabilities.

    Args:
        scores (ScoreVolume): Raw scores

    Returns:
        ScoreVolume: Probabilities in (0, 1) summing to 1 per voxel
    """
    # float64 data stays float64 in the returned volume
    return ScoreVolume(scores.geometry, softmax(scores.data))


def argmax_labels(scores: ScoreVolume) -> LabelVolume:
    """
    Per-voxel index of the highest-scoring channel (lowest index on ties).

    Args:
        scores (ScoreVolume): Channel scores

    Returns:
        LabelVolume: Labels with num_labels equal to the channel count
    """
    return LabelVolume(scores.geometry, scores.channels, np.argmax(scores.data, axis=0))


def _check_scores(models: Sequence[ScoreVolume]) -> None:
    if not models:
        raise ValidationError("fusion needs at least one model")
    if not all(isinstance(m, ScoreVolume) for m in models):
        raise UsageError(
            "score-summing fusion needs score volumes, got label masks",
            hint="use majority-vote or staple for label inputs")
    require_same_geometry(models)
    # Every model must score the same labels
    channels = {m.channels for m in models}
    if len(channels) != 1:
        raise ValidationError(f"models disagree on channel count: {sorted(channels)}")


def _canonical_order(models: Sequence[ScoreVolume]) -> List[ScoreVolume]:
    """Order models by payload digest so summation order ignores list order."""
    return sorted(models, key=lambda m: hashlib.sha256(m.data.tobytes()).digest())


def _sum_then_argmax(models: Sequence[ScoreVolume], transform) -> LabelVolume:
    ordered = _canonical_order(models)
    # Accumulate in float64
    total = np.zeros(ordered[0].data.shape, dtype=np.float64)
    for model in ordered:
        total += transform(model.data)
    return LabelVolume(ordered[0].geometry, ordered[0].channels, np.argmax(total, axis=0))


def fuse_logit_sum(models: Sequence[ScoreVolume]) -> LabelVolume:
    """
    Sum raw scores across models in float64, then take the argmax.

    Args:
        models (list): ScoreVolumes sharing geometry and channel count

    Returns:
        LabelVolume: Fused segmentation
    """
    _check_scores(models)
    return _sum_then_argmax(models, lambda data: data.astype(np.float64))


def fuse_softmax_sum(models: Sequence[ScoreVolume]) -> LabelVolume:
    """
    Sum per-model softmax probabilities, then take the argmax.

    Args:
        models (list): ScoreVolumes sharing geometry and channel count

    Returns:
        LabelVolume: Fused segmentation
    """
    _check_scores(models)
    return _sum_then_argmax(models, softmax)


def as_label_masks(inputs: Sequence[Union[ScoreVolume, LabelVolume]]) -> List[LabelVolume]:
    """Argmax any score volumes so every input is a label mask."""
    return [argmax_labels(v) if isinstance(v, ScoreVolume) else v for v in inputs]


def majority_vote(masks: Sequence[Union[ScoreVolume, LabelVolume]]) -> LabelVolume:
    """
    Most frequent label per voxel; ties go to the lowest label.

    Score volumes are reduced to masks with argmax_labels first.

    Args:
        masks (list): LabelVolumes (or ScoreVolumes) sharing geometry and labels

    Returns:
        LabelVolume: Fused segmentation
    """
    if not masks:
        raise ValidationError("majority vote needs at least one mask")
    masks = as_label_masks(masks)
    geometry = require_same_geometry(masks)
    label_counts = {m.num_labels for m in masks}
    if len(label_counts) != 1:
        raise ValidationError(f"masks disagree on num_labels: {sorted(label_counts)}")
    num_labels = label_counts.pop()

    # Count votes per label, then argmax picks the lowest label on ties
    votes = np.zeros((num_labels,) + geometry.shape, dtype=np.int32)
    for mask in masks:
        for label in range(num_labels):
            votes[label] += mask.data == label
    return LabelVolume(geometry, num_labels, np.argmax(votes, axis=0))


def fuse(inputs: Sequence[Union[ScoreVolume, LabelVolume]], method: FusionMethod) -> LabelVolume:
    """
    Fuse model outputs with the chosen strategy.

    Args:
        inputs (list): Model outputs, all score volumes or all label volumes
        method (FusionMethod): Strategy to apply

    Returns:
        LabelVolume: Fused segmentation
    """
    variant = method.variant
    logger.debug("Fusing %d inputs with %s", len(inputs), variant.value)
    if variant is FusionVariant.LOGIT_SUM:
        return fuse_logit_sum(inputs)
    if variant is FusionVariant.SOFTMAX_SUM:
        return fuse_softmax_sum(inputs)
    if variant is FusionVariant.MAJORITY_VOTE:
        return majority_vote(inputs)
    return staple_multiclass(as_label_masks(inputs), method.staple)
