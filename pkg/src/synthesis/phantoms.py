"""
Synthetic Phantom Module

This module generates seeded synthetic cases for desk-scale experiments: a
ground-truth label volume made of non-overlapping ellipsoidal organs, and R
simulated model outputs (score volumes) whose organ boundaries are shifted by
a per-rater bias and a smooth random displacement field.

Random numbers come from numpy's Philox4x64 counter-based generator. Every
stream is keyed by the config seed and starts at the counter

    (0, case index, rater index, stream id)

where the stream id is the organ label the field perturbs. Word 0 is the
block counter advanced by the generator, so streams never overlap and any
stream can be reproduced without generating the others.

Scores for organ channel l at voxel x are

    sharpness * (bias_j + noise_jl(x) - sd_l(x))

with sd_l the first-order signed distance (mm) to the ellipsoid surface,
negative inside. The background channel is 0, so a voxel is labelled l
exactly when its perturbed boundary encloses it.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.ndimage import map_coordinates

from src.extractors.manifest import CaseManifest, load_structured
from src.utils.errors import OverlapError, ValidationError
from src.volumes.grid import MAX_LABELS, GridGeometry, LabelVolume, ScoreVolume

logger = logging.getLogger(__name__)

CONFIG_KEYS = {'seed', 'dims', 'spacing', 'organs', 'raters', 'bias_mm', 'noise_amplitude_mm',
               'noise_scale_mm', 'sharpness', 'num_cases'}
ORGAN_KEYS = {'label', 'name', 'center_mm', 'radii_mm'}


@dataclass(frozen=True)
class OrganSpec:
    """An ellipsoidal organ: centre and semi-axes in mm, (x, y, z) order."""

    label: int
    center_mm: Tuple[float, float, float]
    radii_mm: Tuple[float, float, float]
    name: str = ''

    def __post_init__(self):
        if not 1 <= int(self.label) < MAX_LABELS:
            raise ValidationError(f"organ label must be in 1..{MAX_LABELS - 1}, got {self.label}")
        center = tuple(float(c) for c in self.center_mm)
        radii = tuple(float(r) for r in self.radii_mm)
        if len(center) != 3 or len(radii) != 3:
            raise ValidationError(f"organ {self.label}: centre and radii need three values each")
        if not all(r > 0 for r in radii):
            raise ValidationError(f"organ {self.label}: radii must be positive, got {radii}")
        object.__setattr__(self, 'label', int(self.label))
        object.__setattr__(self, 'center_mm', center)
        object.__setattr__(self, 'radii_mm', radii)
        object.__setattr__(self, 'name', self.name or f"organ_{self.label}")


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    dims: Tuple[int, int, int]
    spacing: Tuple[float, float, float]
    organs: Tuple[OrganSpec, ...]
    raters: int
    bias_mm: Tuple[float, ...]
    noise_amplitude_mm: float = 1.0
    noise_scale_mm: float = 8.0
    sharpness: float = 2.0
    num_cases: int = 1

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.raters) < 1:
            raise ValidationError(f"raters must be >= 1, got {self.raters}")
        if int(self.num_cases) < 1:
            raise ValidationError(f"num_cases must be >= 1, got {self.num_cases}")
        if not self.noise_amplitude_mm >= 0:
            raise ValidationError(f"noise_amplitude_mm must be >= 0, got {self.noise_amplitude_mm}")
        if not self.noise_scale_mm > 0:
            raise ValidationError(f"noise_scale_mm must be > 0, got {self.noise_scale_mm}")
        if not self.sharpness > 0:
            raise ValidationError(f"sharpness must be > 0, got {self.sharpness}")

        bias = self.bias_mm
        if np.isscalar(bias):
            bias = [bias] * int(self.raters)
        bias = tuple(float(b) for b in bias)
        if len(bias) != int(self.raters):
            raise ValidationError(f"bias_mm lists {len(bias)} values for {self.raters} raters")

        organs = tuple(self.organs)
        labels = [o.label for o in organs]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"organ labels must be unique, got {labels}")

        object.__setattr__(self, 'seed', int(self.seed))
        object.__setattr__(self, 'raters', int(self.raters))
        object.__setattr__(self, 'num_cases', int(self.num_cases))
        object.__setattr__(self, 'bias_mm', bias)
        object.__setattr__(self, 'organs', organs)
        object.__setattr__(self, 'dims', tuple(int(d) for d in self.dims))
        object.__setattr__(self, 'spacing', tuple(float(s) for s in self.spacing))

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.dims, self.spacing)

    @property
    def num_labels(self) -> int:
        return max([o.label for o in self.organs], default=0) + 1 if self.organs else 2

    @property
    def label_names(self) -> Dict[int, str]:
        return {o.label: o.name for o in self.organs}

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> 'SynthConfig':
        if not isinstance(document, dict):
            raise ValidationError("synthetic config must be a JSON object")
        unknown = set(document) - CONFIG_KEYS
        if unknown:
            raise ValidationError(f"unknown synthetic config keys {sorted(unknown)}")
        defaults = default_synth_config()
        organs = defaults.organs
        if 'organs' in document:
            organs = []
            for entry in document['organs']:
                extra = set(entry) - ORGAN_KEYS
                if extra:
                    raise ValidationError(f"unknown organ keys {sorted(extra)}")
                organs.append(OrganSpec(entry['label'], entry['center_mm'], entry['radii_mm'],
                                        entry.get('name', '')))
        raters = document.get('raters', defaults.raters)
        bias = document.get('bias_mm', defaults.bias_mm if raters == defaults.raters else 0.0)
        return cls(
            seed=document.get('seed', defaults.seed),
            dims=document.get('dims', defaults.dims),
            spacing=document.get('spacing', defaults.spacing),
            organs=tuple(organs),
            raters=raters,
            bias_mm=bias,
            noise_amplitude_mm=float(document.get('noise_amplitude_mm', defaults.noise_amplitude_mm)),
            noise_scale_mm=float(document.get('noise_scale_mm', defaults.noise_scale_mm)),
            sharpness=float(document.get('sharpness', defaults.sharpness)),
            num_cases=document.get('num_cases', defaults.num_cases),
        )

    def as_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'dims': list(self.dims),
            'spacing': list(self.spacing),
            'organs': [
                {'label': o.label, 'name': o.name,
                 'center_mm': list(o.center_mm), 'radii_mm': list(o.radii_mm)}
                for o in self.organs
            ],
            'raters': self.raters,
            'bias_mm': list(self.bias_mm),
            'noise_amplitude_mm': self.noise_amplitude_mm,
            'noise_scale_mm': self.noise_scale_mm,
            'sharpness': self.sharpness,
            'num_cases': self.num_cases,
        }


def default_synth_config(seed: int = 0) -> SynthConfig:
    """Two organs on a 64^3 1 mm grid, five raters with spread-out biases."""
    return SynthConfig(
        seed=seed,
        dims=(64, 64, 64),
        spacing=(1.0, 1.0, 1.0),
        organs=(
            OrganSpec(1, (20.0, 32.0, 32.0), (10.0, 12.0, 14.0), 'organ_a'),
            OrganSpec(2, (45.0, 30.0, 32.0), (8.0, 9.0, 11.0), 'organ_b'),
        ),
        raters=5,
        bias_mm=(0.25, -0.5, 0.75, -1.0, 1.25),
        noise_amplitude_mm=1.0,
        noise_scale_mm=8.0,
        sharpness=2.0,
        num_cases=1,
    )


def load_synth_config(path: str) -> SynthConfig:
    """Read a synthetic config JSON file; missing keys take the defaults."""
    try:
        return SynthConfig.from_dict(load_structured(path))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: malformed synthetic config ({exc})") from exc


def rater_stream(seed: int, case_index: int, rater_index: int, stream: int) -> np.random.Generator:
    """
    Independent random stream for one (case, rater, stream) triple.

    Args:
        seed (int): Philox key
        case_index (int): Case number
        rater_index (int): Rater number
        stream (int): Stream id within the rater (the organ label)

    Returns:
        Generator: numpy Generator over a Philox4x64 bit generator
    """
    counter = np.array([0, case_index, rater_index, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=seed, counter=counter))


def _axis_coordinates(geometry: GridGeometry):
    """Voxel-centre positions (mm) along z, y, x, shaped for broadcasting."""
    nx, ny, nz = geometry.dims
    sx, sy, sz = geometry.spacing
    z = (np.arange(nz, dtype=np.float64) * sz)[:, None, None]
    y = (np.arange(ny, dtype=np.float64) * sy)[None, :, None]
    x = (np.arange(nx, dtype=np.float64) * sx)[None, None, :]
    return z, y, x


def ellipsoid_level(geometry: GridGeometry, organ: OrganSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Level function f and signed distance of an ellipsoid on the grid.

    f = |(x - c) / r|, so the organ is f < 1. The signed distance is the
    first-order estimate (f - 1) / |grad f|; it is exact for spheres.

    Returns:
        tuple: (f, signed distance in mm), arrays of shape (nz, ny, nx)
    """
    z, y, x = _axis_coordinates(geometry)
    cx, cy, cz = organ.center_mm
    rx, ry, rz = organ.radii_mm
    ux, uy, uz = (x - cx) / rx, (y - cy) / ry, (z - cz) / rz
    level = np.sqrt(ux ** 2 + uy ** 2 + uz ** 2)
    gradient_norm = np.sqrt((ux / rx) ** 2 + (uy / ry) ** 2 + (uz / rz) ** 2)
    with np.errstate(divide='ignore', invalid='ignore'):
        distance = (level - 1.0) * level / gradient_norm
    distance = np.where(gradient_norm > 0, distance, -min(organ.radii_mm))
    return level, distance


def generate_ground_truth(config: SynthConfig) -> LabelVolume:
    """
    Rasterize the organs: a voxel is labelled l iff its centre lies inside organ l.

    Args:
        config (SynthConfig): Phantom description

    Returns:
        LabelVolume: Ground truth with num_labels = max organ label + 1
    """
    geometry = config.geometry
    labels = np.zeros(geometry.shape, dtype=np.uint8)
    for organ in config.organs:
        inside = ellipsoid_level(geometry, organ)[0] < 1.0
        taken = inside & (labels > 0)
        if taken.any():
            other = int(np.min(labels[taken]))
            raise OverlapError(other, organ.label, int(np.count_nonzero(taken)))
        labels[inside] = organ.label
        logger.debug("Organ %d rasterized to %d voxels", organ.label, int(np.count_nonzero(inside)))
    return LabelVolume(geometry, config.num_labels, labels)


def smooth_noise(rng: np.random.Generator, geometry: GridGeometry, amplitude: float,
                 scale_mm: float) -> np.ndarray:
    """
    Smooth random field: a Gaussian lattice every `scale_mm`, trilinearly upsampled.

    Args:
        rng (Generator): Source of lattice values
        geometry (GridGeometry): Output grid
        amplitude (float): Lattice standard deviation in mm
        scale_mm (float): Lattice spacing in mm

    Returns:
        ndarray: float64 field of shape (nz, ny, nx)
    """
    if amplitude == 0:
        return np.zeros(geometry.shape, dtype=np.float64)
    nx, ny, nz = geometry.dims
    sx, sy, sz = geometry.spacing
    lattice_shape = tuple(
        int(math.ceil((n - 1) * s / scale_mm)) + 1 for n, s in ((nz, sz), (ny, sy), (nx, sx)))
    lattice = rng.standard_normal(lattice_shape) * amplitude
    coordinates = np.meshgrid(
        np.arange(nz) * sz / scale_mm,
        np.arange(ny) * sy / scale_mm,
        np.arange(nx) * sx / scale_mm,
        indexing='ij')
    return map_coordinates(lattice, coordinates, order=1, mode='nearest')


def generate_model_outputs(config: SynthConfig, truth: LabelVolume,
                           case_index: int = 0) -> List[ScoreVolume]:
    """
    Simulated model outputs for one case, one ScoreVolume per rater.

    Args:
        config (SynthConfig): Phantom description
        truth (LabelVolume): Ground truth from generate_ground_truth(config)
        case_index (int): Case number selecting the random streams

    Returns:
        list: R ScoreVolumes with num_labels channels
    """
    geometry = config.geometry
    if truth.geometry != geometry or truth.num_labels != config.num_labels:
        raise ValidationError("truth volume does not match the synthetic config")
    distances = {organ.label: ellipsoid_level(geometry, organ)[1] for organ in config.organs}

    outputs = []
    for rater in range(config.raters):
        scores = np.zeros((config.num_labels,) + geometry.shape, dtype=np.float64)
        for organ in config.organs:
            rng = rater_stream(config.seed, case_index, rater, organ.label)
            noise = smooth_noise(rng, geometry, config.noise_amplitude_mm, config.noise_scale_mm)
            scores[organ.label] = config.sharpness * (config.bias_mm[rater] + noise - distances[organ.label])
        # Unused label slots stay far below background.
        for label in set(range(1, config.num_labels)) - set(distances):
            scores[label] = -config.sharpness * max(geometry.dims) * max(geometry.spacing)
        # model outputs are single precision, as they are on disk
        outputs.append(ScoreVolume(geometry, scores.astype(np.float32)))
    return outputs


@dataclass
class SyntheticCase:
    case_id: str
    truth: LabelVolume
    outputs: List[ScoreVolume] = field(default_factory=list)


def case_id_for(case_index: int) -> str:
    """
    Identifier of a synthetic case.

    Args:
        case_index (int): Zero-based case number

    Returns:
        str: 'case_' plus the index padded to three digits
    """
    return f"case_{case_index:03d}"


def generate_cases(config: SynthConfig) -> List[SyntheticCase]:
    """All cases of a config; the truth is shared, rater noise differs per case."""
    truth = generate_ground_truth(config)
    return [
        SyntheticCase(case_id_for(k), truth, generate_model_outputs(config, truth, k))
        for k in range(config.num_cases)
    ]


def case_manifests(config: SynthConfig, truth_path: str,
                   output_paths: Sequence[Sequence[str]]) -> List[CaseManifest]:
    """Manifest entries for written synthetic cases."""
    return [
        CaseManifest(case_id_for(k), truth_path, list(paths), config.label_names, 'all', 'scores')
        for k, paths in enumerate(output_paths)
    ]
