"""
Volume Extractors Package

This package contains modules for reading volumes and case manifests.
"""

from .metaimage import (
    read_volume,
    write_volume
)

from .manifest import (
    CaseManifest,
    read_manifest,
    read_manifests,
    write_manifest
)

__all__ = [
    'read_volume',
    'write_volume',
    'CaseManifest',
    'read_manifest',
    'read_manifests',
    'write_manifest'
]
