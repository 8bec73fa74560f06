"""
MetaImage Volume Module

This module reads and writes score and label volumes in a small, bit-exact
subset of the MetaImage format. A volume is a text header followed by a raw
little-endian payload, either appended to the header (`.mha`,
ElementDataFile = LOCAL) or stored in a sibling file (`.mhd` + `.raw`).

Header keys, in the order they are written:

    ObjectType = Image
    NDims = 3                       (4 for score volumes)
    DimSize = nx ny nz              (nx ny nz C for score volumes)
    ElementSpacing = sx sy sz       (sx sy sz 1.0 for score volumes)
    ElementType = MET_UCHAR         (MET_FLOAT for score volumes)
    ElementByteOrderMSB = False
    NumberOfLabels = L              (label volumes only; optional on read)
    ElementDataFile = LOCAL         (or the raw file name, always the last key)

The channel axis of a score volume is the 4th, slowest-varying dimension.
"""

import logging
import math
import os
from typing import Dict, Tuple, Union

import numpy as np

from src.utils.errors import ValidationError, VolumeParseError, VolumeTruncatedError
from src.volumes.grid import GridGeometry, LabelVolume, ScoreVolume

logger = logging.getLogger(__name__)

Volume = Union[ScoreVolume, LabelVolume]

ELEMENT_TYPES = {
    'MET_UCHAR': np.dtype('<u1'),
    'MET_FLOAT': np.dtype('<f4'),
}

REQUIRED_KEYS = ('ObjectType', 'NDims', 'DimSize', 'ElementSpacing',
                 'ElementType', 'ElementByteOrderMSB', 'ElementDataFile')

# Written by other MetaImage tools; accepted and ignored when harmless.
IGNORED_KEYS = {'Offset', 'Origin', 'Position', 'TransformMatrix', 'Rotation', 'Orientation',
                'CenterOfRotation', 'AnatomicalOrientation', 'BinaryData',
                'CompressedData', 'ElementNumberOfChannels', 'Comment'}

MAX_HEADER_LINES = 64


def _read_header(handle, path: str) -> Tuple[Dict[str, str], int]:
    """
    Parse `Key = Value` lines up to and including ElementDataFile.

    Returns:
        tuple: (header dict, byte offset of the first payload byte)
    """
    header = {}
    for _ in range(MAX_HEADER_LINES):
        raw = handle.readline()
        if not raw:
            break
        line = raw.decode('ascii', errors='replace').strip()
        if not line:
            continue
        if '=' not in line:
            raise VolumeParseError(line.split()[0], "expected 'Key = Value'", path)
        key, value = (part.strip() for part in line.split('=', 1))
        if key == 'BinaryDataByteOrderMSB':
            key = 'ElementByteOrderMSB'
        header[key] = value
        if key == 'ElementDataFile':
            return header, handle.tell()
    raise VolumeParseError('ElementDataFile', 'missing (must be the last header key)', path)


def _parse_ints(header: Dict[str, str], key: str, path: str):
    try:
        return [int(tok) for tok in header[key].split()]
    except ValueError:
        raise VolumeParseError(key, f"expected integers, got '{header[key]}'", path)


def _parse_floats(header: Dict[str, str], key: str, path: str):
    try:
        return [float(tok) for tok in header[key].split()]
    except ValueError:
        raise VolumeParseError(key, f"expected numbers, got '{header[key]}'", path)


def read_volume(path: str) -> Volume:
    """
    Read a MetaImage file into a ScoreVolume or LabelVolume.

    MET_UCHAR with NDims = 3 yields a LabelVolume; MET_FLOAT with NDims = 4
    yields a ScoreVolume whose 4th dimension is the channel axis.

    Args:
        path (str): Path to a `.mha` or `.mhd` header

    Returns:
        ScoreVolume or LabelVolume: The decoded volume
    """
    path = str(path)
    try:
        handle = open(path, 'rb')
    except OSError as exc:
        raise OSError(f"failed to read volume {path}: {exc.strerror or exc}") from exc
    with handle:
        header, offset = _read_header(handle, path)
        for key in REQUIRED_KEYS:
            if key not in header:
                raise VolumeParseError(key, 'missing', path)

        if header['ObjectType'] != 'Image':
            raise VolumeParseError('ObjectType', f"expected 'Image', got '{header['ObjectType']}'", path)
        if header['ElementByteOrderMSB'] not in ('False', 'false', '0'):
            raise VolumeParseError('ElementByteOrderMSB', 'only little-endian payloads are supported', path)
        if header.get('CompressedData', 'False') not in ('False', 'false', '0'):
            raise VolumeParseError('CompressedData', 'compressed payloads are not supported', path)
        for key in header:
            if key not in REQUIRED_KEYS and key not in IGNORED_KEYS and key != 'NumberOfLabels':
                logger.debug("Ignoring header key %s in %s", key, path)

        element_type = header['ElementType']
        if element_type not in ELEMENT_TYPES:
            raise VolumeParseError('ElementType', f"unsupported type '{element_type}'", path)
        ndims = _parse_ints(header, 'NDims', path)
        expected_ndims = 3 if element_type == 'MET_UCHAR' else 4
        if ndims != [expected_ndims]:
            raise VolumeParseError('NDims', f"{element_type} volumes need NDims = {expected_ndims}", path)
        dims = _parse_ints(header, 'DimSize', path)
        if len(dims) != expected_ndims or any(d < 1 for d in dims):
            raise VolumeParseError('DimSize', f"expected {expected_ndims} positive sizes, got '{header['DimSize']}'", path)
        spacing = _parse_floats(header, 'ElementSpacing', path)
        if len(spacing) < 3 or not all(np.isfinite(s) and s > 0 for s in spacing[:3]):
            raise VolumeParseError('ElementSpacing', f"expected positive spacings, got '{header['ElementSpacing']}'", path)

        data_file = header['ElementDataFile']
        if data_file == 'LOCAL':
            handle.seek(offset)
            payload = handle.read()
        else:
            raw_path = os.path.join(os.path.dirname(path), data_file)
            try:
                with open(raw_path, 'rb') as raw_handle:
                    payload = raw_handle.read()
            except (OSError, ValueError) as exc:
                # ValueError covers names with embedded NUL bytes
                raise VolumeParseError('ElementDataFile', f"cannot read payload file {raw_path}: {exc}", path) from exc

    dtype = ELEMENT_TYPES[element_type]
    element_count = math.prod(dims)
    if element_count > np.iinfo(np.intp).max:
        raise VolumeParseError('DimSize', f"{header['DimSize']} is too large to address", path)
    expected_bytes = element_count * dtype.itemsize
    if len(payload) != expected_bytes:
        raise VolumeTruncatedError(
            f"{path}: header declares {expected_bytes} payload bytes, found {len(payload)}")

    geometry = GridGeometry(dims=tuple(dims[:3]), spacing=tuple(spacing[:3]))
    array = np.frombuffer(payload, dtype=dtype)

    if element_type == 'MET_UCHAR':
        if 'NumberOfLabels' in header:
            counts = _parse_ints(header, 'NumberOfLabels', path)
            if len(counts) != 1:
                raise VolumeParseError('NumberOfLabels', f"expected one integer, got '{header['NumberOfLabels']}'", path)
            num_labels = counts[0]
        else:
            num_labels = max(2, int(array.max()) + 1 if array.size else 2)
        try:
            return LabelVolume(geometry, num_labels, array.reshape(geometry.shape))
        except ValidationError as exc:
            raise ValidationError(f"{path}: {exc}") from exc

    channels = dims[3]
    try:
        return ScoreVolume(geometry, array.reshape((channels,) + geometry.shape))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _format_header(volume: Volume, data_file: str) -> bytes:
    nx, ny, nz = volume.geometry.dims
    spacing = ' '.join(repr(s) for s in volume.geometry.spacing)
    lines = ['ObjectType = Image']
    if isinstance(volume, ScoreVolume):
        lines += [
            'NDims = 4',
            f'DimSize = {nx} {ny} {nz} {volume.channels}',
            f'ElementSpacing = {spacing} 1.0',
            'ElementType = MET_FLOAT',
            'ElementByteOrderMSB = False',
        ]
    else:
        lines += [
            'NDims = 3',
            f'DimSize = {nx} {ny} {nz}',
            f'ElementSpacing = {spacing}',
            'ElementType = MET_UCHAR',
            'ElementByteOrderMSB = False',
            f'NumberOfLabels = {volume.num_labels}',
        ]
    lines.append(f'ElementDataFile = {data_file}')
    return ('\n'.join(lines) + '\n').encode('ascii')


def volume_payload(volume: Volume) -> bytes:
    """Raw little-endian payload bytes of a volume."""
    if isinstance(volume, ScoreVolume):
        return volume.data.astype('<f4', copy=False).tobytes()
    return volume.data.astype('<u1', copy=False).tobytes()


def write_volume(volume: Volume, path: str) -> None:
    """
    Write a volume as `.mha` (payload appended) or `.mhd` + `.raw`.

    Args:
        volume (ScoreVolume or LabelVolume): Volume to write
        path (str): Destination header path; the suffix picks the layout
    """
    path = str(path)
    payload = volume_payload(volume)
    try:
        if path.endswith('.mhd'):
            raw_name = os.path.splitext(os.path.basename(path))[0] + '.raw'
            with open(path, 'wb') as handle:
                handle.write(_format_header(volume, raw_name))
            with open(os.path.join(os.path.dirname(path), raw_name), 'wb') as handle:
                handle.write(payload)
        else:
            with open(path, 'wb') as handle:
                handle.write(_format_header(volume, 'LOCAL'))
                handle.write(payload)
    except OSError as exc:
        raise OSError(f"failed to write volume {path}: {exc.strerror or exc}") from exc
    logger.debug("Wrote %s volume %s to %s", type(volume).__name__, volume.geometry.dims, path)
