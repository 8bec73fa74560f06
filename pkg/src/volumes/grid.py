"""
Voxel Grid Module

This module defines the value types shared by every other part of the toolkit:
grid geometry, per-model score volumes and label volumes, plus the basic
structural operations on them (bounding boxes, box dilation, structure volume).

Memory layout is channel-major, then z, y, x with x varying fastest. In numpy
terms a LabelVolume holds an array of shape (nz, ny, nx) and a ScoreVolume an
array of shape (C, nz, ny, nx). Geometry and boxes are always given in
(x, y, z) order.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.utils.errors import GeometryMismatchError, InvalidArgumentError, ValidationError

MAX_LABELS = 256

# Inclusive (lo, hi) voxel index range per axis, in (x, y, z) order.
Box = Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]


@dataclass(frozen=True)
class GridGeometry:
    """Voxel counts and physical spacing (mm) along x, y and z."""

    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValidationError(f"dims must be three positive integers, got {self.dims}")
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValidationError(f"spacing must be three positive reals, got {self.spacing}")
        # Python ints so the product cannot wrap
        if math.prod(dims) > np.iinfo(np.intp).max:
            raise ValidationError(f"grid {dims} is too large to address")
        object.__setattr__(self, 'dims', dims)
        object.__setattr__(self, 'spacing', spacing)

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Array shape (nz, ny, nx) of a volume on this grid."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @property
    def sampling(self) -> Tuple[float, float, float]:
        """Spacing in array axis order (sz, sy, sx)."""
        sx, sy, sz = self.spacing
        return (sz, sy, sx)

    @property
    def voxel_count(self) -> int:
        return math.prod(self.dims)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class ScoreVolume:
    """
    Per-channel scores over a grid. Channel 0 is background.

    Data read from files or produced by models is float32. Float64 input
    (derived probabilities, for instance) is kept at full precision in memory;
    files always store 32-bit floats.
    """

    geometry: GridGeometry
    data: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.data)
        dtype = np.float64 if raw.dtype == np.float64 else np.float32
        data = raw.astype(dtype, copy=False)
        if data.ndim != 4 or data.shape[1:] != self.geometry.shape:
            raise ValidationError(
                f"score data shape {data.shape} does not match (C,) + {self.geometry.shape}")
        if data.shape[0] < 2:
            raise ValidationError(f"score volumes need at least 2 channels, got {data.shape[0]}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("score volume contains non-finite values")
        object.__setattr__(self, 'data', _frozen(data))

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    def __eq__(self, other):
        if not isinstance(other, ScoreVolume):
            return NotImplemented
        return (self.geometry == other.geometry
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """One organ label per voxel; 0 is background, 1..num_labels-1 are organs."""

    geometry: GridGeometry
    num_labels: int
    data: np.ndarray

    def __post_init__(self):
        num_labels = int(self.num_labels)
        if not 2 <= num_labels <= MAX_LABELS:
            raise ValidationError(f"num_labels must be in [2, {MAX_LABELS}], got {num_labels}")
        raw = np.asarray(self.data)
        if raw.shape != self.geometry.shape:
            raise ValidationError(
                f"label data shape {raw.shape} does not match {self.geometry.shape}")
        if raw.size and (raw.min() < 0 or raw.max() >= num_labels):
            raise ValidationError(
                f"label values must lie in [0, {num_labels - 1}], "
                f"found range [{raw.min()}, {raw.max()}]")
        object.__setattr__(self, 'num_labels', num_labels)
        object.__setattr__(self, 'data', _frozen(raw.astype(np.uint8, copy=False)))

    def mask(self, label: int) -> np.ndarray:
        """Boolean array of voxels equal to `label`."""
        check_label(self, label)
        return self.data == label

    def __eq__(self, other):
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return (self.geometry == other.geometry
                and self.num_labels == other.num_labels
                and np.array_equal(self.data, other.data))


def check_label(volume: LabelVolume, label: int) -> None:
    """
    Raise InvalidArgumentError unless `label` is a valid label of `volume`.

    Args:
        volume (LabelVolume): Volume whose label range applies
        label (int): Label to check
    """
    if not 0 <= int(label) < volume.num_labels:
        raise InvalidArgumentError(
            f"label {label} out of range for a volume with {volume.num_labels} labels")


def bounding_box(mask: LabelVolume, label: int) -> Optional[Box]:
    """
    Tightest axis-aligned box containing every voxel equal to `label`.

    Args:
        mask (LabelVolume): Volume to scan
        label (int): Label to locate

    Returns:
        Box or None: Inclusive (x, y, z) ranges, or None when the label is absent
    """
    return mask_bounding_box(mask.mask(label))


def mask_bounding_box(selected: np.ndarray) -> Optional[Box]:
    """Bounding box of a boolean (z, y, x) array, in (x, y, z) order."""
    if not selected.any():
        return None
    ranges = []
    # array axes are (z, y, x); collapse the other two axes for each
    for axis in (2, 1, 0):
        others = tuple(a for a in range(3) if a != axis)
        hits = np.flatnonzero(selected.any(axis=others))
        ranges.append((int(hits[0]), int(hits[-1])))
    return tuple(ranges)


def dilate_box(box: Box, margin: int, geometry: GridGeometry) -> Box:
    """
    Move each face of a box outward by `margin` voxels, clamped to the grid.

    Args:
        box (Box): Non-empty inclusive box in (x, y, z) order
        margin (int): Voxels to add on every side, >= 0
        geometry (GridGeometry): Grid supplying the clamping bounds

    Returns:
        Box: The dilated box
    """
    if margin < 0:
        raise InvalidArgumentError(f"margin must be >= 0, got {margin}")
    return tuple(
        (max(lo - margin, 0), min(hi + margin, dim - 1))
        for (lo, hi), dim in zip(box, geometry.dims)
    )


def union_box(first: Optional[Box], second: Optional[Box]) -> Optional[Box]:
    """
    Smallest box containing both boxes.

    Args:
        first (Box or None): A box, or None for no voxels
        second (Box or None): A box, or None for no voxels

    Returns:
        Box or None: The union, None only when both are None
    """
    if first is None:
        return second
    if second is None:
        return first
    return tuple((min(a[0], b[0]), max(a[1], b[1])) for a, b in zip(first, second))


def box_slices(box: Box) -> Tuple[slice, slice, slice]:
    """Array slices (z, y, x) selecting the voxels of a box."""
    (x0, x1), (y0, y1), (z0, z1) = box
    return (slice(z0, z1 + 1), slice(y0, y1 + 1), slice(x0, x1 + 1))


def structure_volume_cm3(mask: LabelVolume, label: int) -> float:
    """
    Physical volume of one label in cubic centimetres.

    Args:
        mask (LabelVolume): Segmentation
        label (int): Label to measure

    Returns:
        float: voxel count * sx * sy * sz / 1000
    """
    count = int(np.count_nonzero(mask.mask(label)))
    return count * mask.geometry.voxel_volume_mm3 / 1000.0


def require_same_geometry(volumes, names=None) -> GridGeometry:
    """
    Check that every volume shares one geometry.

    Args:
        volumes (list): ScoreVolume or LabelVolume instances
        names (list, optional): Labels (usually paths) used in the error message

    Returns:
        GridGeometry: The common geometry
    """
    if not volumes:
        raise ValidationError("at least one volume is required")
    names = list(names) if names is not None else [f"input[{i}]" for i in range(len(volumes))]
    reference = volumes[0].geometry
    offending = [name for vol, name in zip(volumes, names) if vol.geometry != reference]
    if offending:
        raise GeometryMismatchError(
            f"geometry differs from {names[0]} {reference.dims}/{reference.spacing}",
            offending)
    return reference
