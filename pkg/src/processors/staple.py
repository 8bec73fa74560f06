"""
STAPLE Consensus Module

This module estimates a consensus segmentation from several binary rater
masks with the STAPLE expectation-maximization algorithm, jointly estimating
each rater's sensitivity p_j and specificity q_j.

E-step, for voxel i with rater decisions d_ij and foreground prior pi:

    a_i = pi       * prod_j p_j^d_ij       (1 - p_j)^(1 - d_ij)
    b_i = (1 - pi) * prod_j (1 - q_j)^d_ij q_j^(1 - d_ij)
    W_i = a_i / (a_i + b_i)

M-step:

    p_j = sum_i W_i d_ij / sum_i W_i
    q_j = sum_i (1 - W_i)(1 - d_ij) / sum_i (1 - W_i)

Products are evaluated in log space, raters are visited in a canonical order
(by decision digest) so results do not depend on the order raters are given.
The multi-organ wrapper runs the binary algorithm once per foreground label
inside the union bounding box of that label, dilated by a margin.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import DegenerateInputError, InvalidArgumentError, ValidationError
from src.volumes.grid import (LabelVolume, box_slices, dilate_box, mask_bounding_box,
                              require_same_geometry, union_box)

logger = logging.getLogger(__name__)

# p and q are kept inside [EPS, 1 - EPS] whenever their logarithm is taken.
EPS = 1e-12

PRIOR_MODES = ('rater-mean',)


@dataclass(frozen=True)
class StapleParams:
    init_sensitivity: float = 0.99999
    init_specificity: float = 0.99999
    max_iterations: int = 100
    convergence_tol: float = 1e-7
    prior_mode: str = 'rater-mean'
    roi_margin: Optional[int] = 5

    def __post_init__(self):
        if not 0.0 < self.init_sensitivity < 1.0:
            raise InvalidArgumentError(f"init_sensitivity must be in (0, 1), got {self.init_sensitivity}")
        if not 0.0 < self.init_specificity < 1.0:
            raise InvalidArgumentError(f"init_specificity must be in (0, 1), got {self.init_specificity}")
        if int(self.max_iterations) < 1:
            raise InvalidArgumentError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.convergence_tol > 0:
            raise InvalidArgumentError(f"convergence_tol must be > 0, got {self.convergence_tol}")
        if self.prior_mode not in PRIOR_MODES:
            raise InvalidArgumentError(f"prior_mode must be one of {PRIOR_MODES}, got {self.prior_mode}")
        if self.roi_margin is not None and int(self.roi_margin) < 0:
            raise InvalidArgumentError(f"roi_margin must be >= 0, got {self.roi_margin}")

    def as_dict(self) -> Dict[str, object]:
        return {
            'init_sensitivity': self.init_sensitivity,
            'init_specificity': self.init_specificity,
            'max_iterations': int(self.max_iterations),
            'convergence_tol': self.convergence_tol,
            'prior_mode': self.prior_mode,
            'roi_margin': None if self.roi_margin is None else int(self.roi_margin),
        }


@dataclass(frozen=True, eq=False)
class StapleResult:
    """
    Consensus posterior over the ROI plus per-rater performance estimates.

    `log_likelihoods` holds the observed-data log-likelihood evaluated at the
    start of every iteration and once more at the final parameters.
    """

    posterior: np.ndarray
    sensitivities: np.ndarray
    specificities: np.ndarray
    iterations_run: int
    converged: bool
    prior: float
    log_likelihoods: List[float] = field(default_factory=list)

    def consensus(self) -> np.ndarray:
        """Maximum-a-posteriori foreground mask (W >= 0.5)."""
        return self.posterior >= 0.5


def _stack_decisions(decisions: Sequence[np.ndarray]) -> np.ndarray:
    if len(decisions) == 0:
        raise ValidationError("STAPLE needs at least one rater")
    shapes = {np.shape(d) for d in decisions}
    if len(shapes) != 1:
        raise ValidationError(f"rater masks differ in shape: {sorted(shapes)}")
    return np.stack([np.asarray(d, dtype=bool) for d in decisions])


def _canonical_rater_order(stack: np.ndarray) -> np.ndarray:
    digests = [hashlib.sha256(np.packbits(r).tobytes()).digest() for r in stack]
    return np.array(sorted(range(len(digests)), key=lambda j: (digests[j], j)), dtype=np.intp)


def foreground_prior(stack: np.ndarray, prior_mode: str = 'rater-mean') -> float:
    """Mean foreground fraction across raters."""
    return float(np.mean([r.mean() for r in stack]))


def _log_terms(stack: np.ndarray, p: np.ndarray, q: np.ndarray, prior: float):
    """log a_i and log b_i, accumulated rater by rater in stack order."""
    p = np.clip(p, EPS, 1.0 - EPS)
    q = np.clip(q, EPS, 1.0 - EPS)
    log_a = np.full(stack.shape[1:], np.log(prior), dtype=np.float64)
    log_b = np.full(stack.shape[1:], np.log1p(-prior), dtype=np.float64)
    for j, rater in enumerate(stack):
        log_a += np.where(rater, np.log(p[j]), np.log1p(-p[j]))
        log_b += np.where(rater, np.log1p(-q[j]), np.log(q[j]))
    return log_a, log_b


def _e_step(stack: np.ndarray, p: np.ndarray, q: np.ndarray, prior: float) -> Tuple[np.ndarray, float]:
    log_a, log_b = _log_terms(stack, p, q, prior)
    log_norm = np.logaddexp(log_a, log_b)
    posterior = np.exp(log_a - log_norm)
    return np.clip(posterior, 0.0, 1.0), float(np.sum(log_norm))


def _m_step(stack: np.ndarray, posterior: np.ndarray, p: np.ndarray, q: np.ndarray):
    weight_fg = posterior.sum()
    weight_bg = (1.0 - posterior).sum()
    new_p = p.copy()
    new_q = q.copy()
    for j, rater in enumerate(stack):
        if weight_fg > 0:
            new_p[j] = posterior[rater].sum() / weight_fg
        if weight_bg > 0:
            new_q[j] = (1.0 - posterior[~rater]).sum() / weight_bg
    return np.clip(new_p, 0.0, 1.0), np.clip(new_q, 0.0, 1.0)


def observed_log_likelihood(decisions: Sequence[np.ndarray], sensitivities, specificities,
                            prior: float) -> float:
    """
    Observed-data log-likelihood sum_i log(a_i + b_i) of a STAPLE model.

    Args:
        decisions (list): Binary rater masks of one shape
        sensitivities (array): p_j per rater
        specificities (array): q_j per rater
        prior (float): Foreground prior pi

    Returns:
        float: The log-likelihood
    """
    stack = _stack_decisions(decisions)
    order = _canonical_rater_order(stack)
    p = np.asarray(sensitivities, dtype=np.float64)[order]
    q = np.asarray(specificities, dtype=np.float64)[order]
    return _e_step(stack[order], p, q, prior)[1]


def staple_binary(decisions: Sequence[np.ndarray], params: StapleParams = None) -> StapleResult:
    """
    Run binary STAPLE on rater masks covering a common region.

    Args:
        decisions (list): R boolean arrays of identical shape
        params (StapleParams, optional): Algorithm settings

    Returns:
        StapleResult: Posterior, per-rater sensitivity/specificity, convergence info
    """
    params = params or StapleParams()
    stack = _stack_decisions(decisions)
    if not stack.any():
        raise DegenerateInputError("every rater is empty, there is no foreground evidence")
    if stack.all():
        raise DegenerateInputError("every rater marks the whole region as foreground")

    order = _canonical_rater_order(stack)
    inverse = np.argsort(order)
    stack = stack[order]
    raters = stack.shape[0]
    prior = foreground_prior(stack, params.prior_mode)

    if np.all(stack == stack[0]):
        # Unanimous raters: p = q = 1 is an exact fixed point of the updates.
        ones = np.ones(raters)
        _, log_lik = _e_step(stack, ones, ones, prior)
        return StapleResult(stack[0].astype(np.float64), ones, ones.copy(), 0, True, prior, [log_lik])

    p = np.full(raters, params.init_sensitivity, dtype=np.float64)
    q = np.full(raters, params.init_specificity, dtype=np.float64)
    trace = []
    converged = False
    iterations = 0
    for iterations in range(1, int(params.max_iterations) + 1):
        posterior, log_lik = _e_step(stack, p, q, prior)
        trace.append(log_lik)
        new_p, new_q = _m_step(stack, posterior, p, q)
        change = float(np.mean(np.abs(new_p - p) + np.abs(new_q - q)))
        p, q = new_p, new_q
        logger.debug("STAPLE iteration %d: log-likelihood %.6f, change %.3e", iterations, log_lik, change)
        if change < params.convergence_tol:
            converged = True
            break

    posterior, log_lik = _e_step(stack, p, q, prior)
    trace.append(log_lik)
    if not converged:
        logger.warning("STAPLE stopped after %d iterations without converging", iterations)
    return StapleResult(posterior, p[inverse], q[inverse], iterations, converged, prior, trace)


def staple_multiclass_detailed(masks: Sequence[LabelVolume], params: StapleParams = None):
    """
    Per-organ STAPLE over multi-label masks, returning per-label results too.

    Args:
        masks (list): LabelVolumes sharing geometry and num_labels
        params (StapleParams, optional): Algorithm settings

    Returns:
        tuple: (consensus LabelVolume, {label: StapleResult})
    """
    params = params or StapleParams()
    if not masks:
        raise ValidationError("STAPLE needs at least one mask")
    geometry = require_same_geometry(masks)
    label_counts = {m.num_labels for m in masks}
    if len(label_counts) != 1:
        raise ValidationError(f"masks disagree on num_labels: {sorted(label_counts)}")
    num_labels = label_counts.pop()

    labels = np.zeros(geometry.shape, dtype=np.uint8)
    best = np.full(geometry.shape, -1.0)
    results = {}
    full_grid = tuple((0, d - 1) for d in geometry.dims)

    for label in range(1, num_labels):
        box = None
        for mask in masks:
            box = union_box(box, mask_bounding_box(mask.data == label))
        if box is None:
            continue
        roi = full_grid if params.roi_margin is None else dilate_box(box, int(params.roi_margin), geometry)
        region = box_slices(roi)
        try:
            result = staple_binary([m.data[region] == label for m in masks], params)
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"label {label}: {exc}") from exc
        results[label] = result

        roi_best = best[region]
        roi_labels = labels[region]
        claim = (result.posterior >= 0.5) & (result.posterior > roi_best)
        roi_best[claim] = result.posterior[claim]
        roi_labels[claim] = label
        logger.info("STAPLE label %d: %d iterations, converged=%s, ROI %s",
                    label, result.iterations_run, result.converged, roi)

    return LabelVolume(geometry, num_labels, labels), results


def staple_multiclass(masks: Sequence[LabelVolume], params: StapleParams = None) -> LabelVolume:
    """
    Consensus label volume from per-organ binary STAPLE.

    Voxels claimed by several labels take the label with the highest
    posterior (lowest label on exact ties); unclaimed voxels are background.

    Args:
        masks (list): LabelVolumes sharing geometry and num_labels
        params (StapleParams, optional): Algorithm settings

    Returns:
        LabelVolume: Consensus segmentation
    """
    return staple_multiclass_detailed(masks, params)[0]
