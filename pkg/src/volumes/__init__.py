"""
Volume Types Package

This package contains the grid geometry and volume value types.
"""

from .grid import (
    GridGeometry,
    ScoreVolume,
    LabelVolume,
    bounding_box,
    dilate_box,
    structure_volume_cm3
)

__all__ = [
    'GridGeometry',
    'ScoreVolume',
    'LabelVolume',
    'bounding_box',
    'dilate_box',
    'structure_volume_cm3'
]
