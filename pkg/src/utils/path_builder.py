"""
Output Path Builder Module

This module builds the deterministic output paths used by every command and
the provenance records written next to fused volumes. Paths never carry
timestamps, so a rerun with the same inputs overwrites the same files.

    <out>/<method>/<case_id>.mha
    <out>/<method>/<case_id>.provenance.json
    <out>/model_<k>/<case_id>.mha          (synthetic model outputs)
"""

import hashlib
import os
from typing import Any, Dict, Sequence

from src.extractors.manifest import dump_structured

DIGEST_CHUNK = 1 << 20


def method_dir(out_dir: str, method: str) -> str:
    """
    Directory holding one fusion method's outputs.

    Args:
        out_dir (str): Output root
        method (str): Method name

    Returns:
        str: <out_dir>/<method>
    """
    return os.path.join(out_dir, method)


def fused_volume_path(out_dir: str, method: str, case_id: str) -> str:
    return os.path.join(method_dir(out_dir, method), f"{case_id}.mha")


def provenance_path(volume_path: str) -> str:
    return os.path.splitext(volume_path)[0] + '.provenance.json'


def model_output_path(out_dir: str, model_index: int, case_id: str) -> str:
    return os.path.join(out_dir, f"model_{model_index}", f"{case_id}.mha")


def ensure_parent(path: str) -> str:
    """Create the parent directory of `path` if needed and return `path`."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def file_digest(path: str) -> str:
    """
    SHA-256 of a file's bytes, hex encoded.

    For `.mhd` headers the digest covers the header and its sibling `.raw`.
    """
    digest = hashlib.sha256()
    paths = [path]
    if path.endswith('.mhd'):
        paths.append(os.path.splitext(path)[0] + '.raw')
    for item in paths:
        with open(item, 'rb') as handle:
            for chunk in iter(lambda: handle.read(DIGEST_CHUNK), b''):
                digest.update(chunk)
    return digest.hexdigest()


def build_provenance(method: str, params: Dict[str, Any], input_paths: Sequence[str],
                     output_path: str, version: str) -> Dict[str, Any]:
    """
    Provenance record of one fused case.

    Args:
        method (str): Fusion method name
        params (dict): Method parameters (STAPLE settings or empty)
        input_paths (list): Model output volumes, in manifest order
        output_path (str): Written fused volume
        version (str): Package version

    Returns:
        dict: method, params, input and output digests, version
    """
    return {
        'method': method,
        'params': dict(params),
        'inputs': [{'path': os.path.basename(p), 'sha256': file_digest(p)} for p in input_paths],
        'output': {'path': os.path.basename(output_path), 'sha256': file_digest(output_path)},
        'version': version,
    }


def write_provenance(record: Dict[str, Any], volume_path: str) -> str:
    path = provenance_path(volume_path)
    dump_structured(record, path)
    return path
