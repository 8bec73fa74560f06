"""Shared fixtures for the test suite."""

import os

import numpy as np
import pytest

from src.extractors.manifest import CaseManifest, write_manifest
from src.extractors.metaimage import write_volume
from src.volumes.grid import GridGeometry, LabelVolume, ScoreVolume


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_geometry():
    return GridGeometry(dims=(12, 10, 8), spacing=(1.0, 1.0, 1.0))


def box_mask(geometry, boxes, num_labels=None):
    """LabelVolume with each (label, ((x0, x1), (y0, y1), (z0, z1))) box filled, bounds inclusive."""
    data = np.zeros(geometry.shape, dtype=np.uint8)
    for label, ((x0, x1), (y0, y1), (z0, z1)) in boxes:
        data[z0:z1 + 1, y0:y1 + 1, x0:x1 + 1] = label
    if num_labels is None:
        num_labels = max([label for label, _ in boxes], default=0) + 1
    return LabelVolume(geometry, max(num_labels, 2), data)


def one_hot_scores(mask, high=4.0, low=-4.0):
    """ScoreVolume whose argmax is `mask`."""
    data = np.full((mask.num_labels,) + mask.geometry.shape, low, dtype=np.float32)
    for label in range(mask.num_labels):
        data[label][mask.data == label] = high
    return ScoreVolume(mask.geometry, data)


@pytest.fixture
def write_case(tmp_path):
    """Write a reference and model outputs to disk and return the manifest path."""

    def _write(reference, outputs, case_id='case_000', label_names=None, manifest_name='manifest.json'):
        case_dir = tmp_path / case_id
        case_dir.mkdir(exist_ok=True)
        ref_path = str(case_dir / 'reference.mha')
        write_volume(reference, ref_path)
        output_paths = []
        for index, volume in enumerate(outputs):
            path = str(case_dir / f'model_{index}.mha')
            write_volume(volume, path)
            output_paths.append(path)
        manifest_path = str(tmp_path / manifest_name)
        names = label_names or {label: f'organ_{label}' for label in range(1, reference.num_labels)}
        write_manifest([CaseManifest(case_id, ref_path, output_paths, names)], manifest_path)
        return manifest_path

    return _write


def read_bytes(path):
    with open(path, 'rb') as handle:
        return handle.read()


def tree_bytes(root):
    """Relative path -> file bytes for every file below `root`."""
    contents = {}
    for directory, _, files in os.walk(root):
        for name in files:
            path = os.path.join(directory, name)
            contents[os.path.relpath(path, root)] = read_bytes(path)
    return contents
