"""
Segmentation Metrics Module

This module measures how far a predicted structure is from its reference:

    mDTA   bi-directional mean distance-to-agreement: the average of the two
           directed mean surface distances (pred -> ref and ref -> pred)
    HD95   the larger of the two directed nearest-rank 95th percentiles of
           surface distances
    volume difference   predicted minus reference volume, in cm^3

Surfaces are the voxels of a structure with at least one face-adjacent
neighbour outside it (the grid edge counts as outside). Distances are taken
between voxel centres in millimetres, using an exact Euclidean distance
transform that honours anisotropic spacing.

When either structure is empty the distance metrics are undefined; they are
reported as None together with a flag, never as 0.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure

from src.utils.errors import EmptyStructureError, ValidationError
from src.volumes.grid import GridGeometry, LabelVolume, check_label, structure_volume_cm3

logger = logging.getLogger(__name__)

FACE_CONNECTIVITY = generate_binary_structure(3, 1)

FLAG_EMPTY_PREDICTION = 'empty_prediction'
FLAG_EMPTY_REFERENCE = 'empty_reference'


@dataclass(frozen=True, eq=False)
class SurfaceSet:
    """Boundary voxels of one structure; `coords` rows are (x, y, z)."""

    geometry: GridGeometry
    mask: np.ndarray

    @property
    def coords(self) -> np.ndarray:
        return np.argwhere(self.mask)[:, ::-1]

    @property
    def empty(self) -> bool:
        return not self.mask.any()

    def __len__(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class OrganMetrics:
    label: int
    organ: str
    mdta_mm: Optional[float]
    hd95_mm: Optional[float]
    volume_diff_cm3: float
    flags: Tuple[str, ...] = ()

    @property
    def defined(self) -> bool:
        return self.mdta_mm is not None


@dataclass(frozen=True)
class MetricReport:
    """Per-organ metrics of one prediction against its reference."""

    case_id: str
    method: str
    entries: List[OrganMetrics] = field(default_factory=list)
    dataset_size: str = 'all'

    def to_rows(self) -> List[Dict[str, object]]:
        """Flat rows (case, organ, method, mdta, hd95, vol_diff, flags)."""
        return [
            {
                'case_id': self.case_id,
                'organ': entry.organ,
                'label': entry.label,
                'method': self.method,
                'dataset_size': self.dataset_size,
                'mdta_mm': entry.mdta_mm,
                'hd95_mm': entry.hd95_mm,
                'volume_diff_cm3': entry.volume_diff_cm3,
                'flags': ';'.join(entry.flags),
            }
            for entry in self.entries
        ]


def extract_surface(mask: LabelVolume, label: int) -> SurfaceSet:
    """
    Boundary voxels of a label under 6-connectivity.

    Args:
        mask (LabelVolume): Segmentation
        label (int): Structure to outline

    Returns:
        SurfaceSet: Voxels of the label with a face neighbour outside it
    """
    check_label(mask, label)
    return surface_of(mask.data == label, mask.geometry)


def surface_of(selected: np.ndarray, geometry: GridGeometry) -> SurfaceSet:
    """Voxels of `selected` that erosion removes; outside the grid counts as background."""
    interior = binary_erosion(selected, structure=FACE_CONNECTIVITY, border_value=0)
    return SurfaceSet(geometry, selected & ~interior)


def distance_field(targets: SurfaceSet, geometry: GridGeometry = None) -> np.ndarray:
    """
    Distance in mm from every voxel centre to the nearest target voxel centre.

    Args:
        targets (SurfaceSet): Non-empty target voxels
        geometry (GridGeometry, optional): Grid; defaults to the surface's own

    Returns:
        ndarray: float64 field of shape (nz, ny, nx)
    """
    geometry = geometry or targets.geometry
    if targets.empty:
        raise EmptyStructureError("distance field needs at least one target voxel")
    # EDT measures to the nearest zero, so the targets are the zeros
    return distance_transform_edt(~targets.mask, sampling=geometry.sampling)


def surface_distances(pred_surface: SurfaceSet, ref_surface: SurfaceSet,
                      geometry: GridGeometry = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Directed surface distances in both directions.

    Returns:
        tuple: (pred -> ref distances, ref -> pred distances), in mm
    """
    geometry = geometry or ref_surface.geometry
    pred_to_ref = distance_field(ref_surface, geometry)[pred_surface.mask]
    ref_to_pred = distance_field(pred_surface, geometry)[ref_surface.mask]
    return pred_to_ref, ref_to_pred


def nearest_rank_percentile(values: np.ndarray, percent: int = 95) -> float:
    """The ceil(percent * n / 100)-th smallest value (1-indexed)."""
    n = len(values)
    # integer ceil, no float rounding
    rank = (percent * n + 99) // 100
    return float(np.partition(values, rank - 1)[rank - 1])


def _mdta_from(pred_to_ref: np.ndarray, ref_to_pred: np.ndarray) -> float:
    return (float(np.mean(pred_to_ref)) + float(np.mean(ref_to_pred))) / 2.0


def _hd95_from(pred_to_ref: np.ndarray, ref_to_pred: np.ndarray) -> float:
    return max(nearest_rank_percentile(pred_to_ref), nearest_rank_percentile(ref_to_pred))


def mdta(pred_surface: SurfaceSet, ref_surface: SurfaceSet,
         geometry: GridGeometry = None) -> Optional[float]:
    """
    Bi-directional mean distance-to-agreement in mm.

    Args:
        pred_surface (SurfaceSet): Predicted structure boundary
        ref_surface (SurfaceSet): Reference structure boundary
        geometry (GridGeometry, optional): Grid spacing source

    Returns:
        float or None: Mean of the two directed means, None if a surface is empty
    """
    if pred_surface.empty or ref_surface.empty:
        return None
    return _mdta_from(*surface_distances(pred_surface, ref_surface, geometry))


def hd95(pred_surface: SurfaceSet, ref_surface: SurfaceSet,
         geometry: GridGeometry = None) -> Optional[float]:
    """
    95th-percentile Hausdorff distance in mm.

    Args:
        pred_surface (SurfaceSet): Predicted structure boundary
        ref_surface (SurfaceSet): Reference structure boundary
        geometry (GridGeometry, optional): Grid spacing source

    Returns:
        float or None: Max of directed nearest-rank 95th percentiles, None if a surface is empty
    """
    if pred_surface.empty or ref_surface.empty:
        return None
    return _hd95_from(*surface_distances(pred_surface, ref_surface, geometry))


def volume_difference(pred: LabelVolume, ref: LabelVolume, label: int) -> float:
    """Signed volume difference pred - ref for one label, in cm^3."""
    if pred.geometry != ref.geometry:
        raise ValidationError("volume difference needs volumes on the same grid")
    return structure_volume_cm3(pred, label) - structure_volume_cm3(ref, label)


def evaluate_case(pred: LabelVolume, ref: LabelVolume, labels: Iterable[int] = None,
                  case_id: str = '', method: str = '', label_names: Dict[int, str] = None,
                  dataset_size: str = 'all') -> MetricReport:
    """
    Compute mDTA, HD95 and volume difference for each requested organ.

    Args:
        pred (LabelVolume): Prediction
        ref (LabelVolume): Gold standard
        labels (iterable, optional): Organ labels; defaults to 1..L-1 of the reference
        case_id (str): Case identifier recorded in the report
        method (str): Method name recorded in the report
        label_names (dict, optional): Organ names by label
        dataset_size (str): Training-set-size tag recorded in the report

    Returns:
        MetricReport: One entry per label, undefined distances flagged
    """
    if pred.geometry != ref.geometry:
        raise ValidationError(
            f"case {case_id}: prediction grid {pred.geometry.dims} differs from reference {ref.geometry.dims}")
    label_names = label_names or {}
    labels = list(labels) if labels is not None else list(range(1, ref.num_labels))

    # Score each organ
    entries = []
    for label in labels:
        check_label(ref, label)
        check_label(pred, label)
        # Boundaries of both structures
        pred_surface = extract_surface(pred, label)
        ref_surface = extract_surface(ref, label)
        # Empty structures leave the distances undefined
        flags = []
        if pred_surface.empty:
            flags.append(FLAG_EMPTY_PREDICTION)
        if ref_surface.empty:
            flags.append(FLAG_EMPTY_REFERENCE)

        if flags:
            mdta_mm = hd95_mm = None
            logger.warning("Case %s label %d: %s, distance metrics undefined",
                           case_id, label, ' and '.join(flags))
        else:
            pred_to_ref, ref_to_pred = surface_distances(pred_surface, ref_surface, ref.geometry)
            mdta_mm = _mdta_from(pred_to_ref, ref_to_pred)
            hd95_mm = _hd95_from(pred_to_ref, ref_to_pred)

        entries.append(OrganMetrics(
            label=label,
            organ=label_names.get(label, f"label_{label}"),
            mdta_mm=mdta_mm,
            hd95_mm=hd95_mm,
            volume_diff_cm3=volume_difference(pred, ref, label),
            flags=tuple(flags),
        ))
    return MetricReport(case_id, method, entries, dataset_size)
