"""
Case Manifest Module

This module reads and writes experiment manifests: for each case, the gold
standard label volume, the ordered model outputs (all score volumes or all
label volumes) and the organ names. Manifests are JSON documents, either a
single case object or {"cases": [...]}:

    {
      "cases": [
        {
          "case_id": "case_000",
          "reference": "truth/case_000.mha",
          "model_outputs": ["models/model_0/case_000.mha", ...],
          "label_names": {"1": "brainstem", "2": "spinal_cord"},
          "dataset_size": "all"
        }
      ]
    }

Relative paths are resolved against the manifest's directory. Manifests are
validated eagerly: every referenced volume is opened and geometry-checked.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from src.extractors.metaimage import read_volume
from src.utils.errors import GeometryMismatchError, ValidationError
from src.volumes.grid import LabelVolume, ScoreVolume

logger = logging.getLogger(__name__)

CASE_KEYS = {'case_id', 'reference', 'model_outputs', 'label_names', 'dataset_size'}


@dataclass(frozen=True)
class CaseManifest:
    """One evaluation case: reference mask, model outputs and organ names."""

    case_id: str
    reference_path: str
    model_outputs: List[str]
    label_names: Dict[int, str]
    dataset_size: str = 'all'
    output_kind: Optional[str] = field(default=None, compare=False)

    def organ_name(self, label: int) -> str:
        return self.label_names.get(label, f"label_{label}")


def load_structured(path: str) -> Any:
    """
    Load a JSON structured-text file.

    Args:
        path (str): File to read

    Returns:
        Any: The decoded document
    """
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc


def dump_structured(document: Any, path: str) -> None:
    """Write a JSON document with stable key order and a trailing newline."""
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, indent=2, sort_keys=True)
        handle.write('\n')


def _case_from_dict(entry: Dict[str, Any], base_dir: str, source: str) -> CaseManifest:
    unknown = set(entry) - CASE_KEYS
    if unknown:
        raise ValidationError(f"{source}: unknown manifest keys {sorted(unknown)}")
    for key in ('case_id', 'reference', 'model_outputs'):
        if key not in entry:
            raise ValidationError(f"{source}: manifest entry is missing '{key}'")
    outputs = entry['model_outputs']
    if not isinstance(outputs, list) or not outputs:
        raise ValidationError(f"{source}: case {entry['case_id']} needs at least one model output")

    def resolve(p):
        return os.path.normpath(os.path.join(base_dir, p))

    try:
        label_names = {int(k): str(v) for k, v in (entry.get('label_names') or {}).items()}
    except ValueError as exc:
        raise ValidationError(f"{source}: label_names keys must be integers") from exc

    return CaseManifest(
        case_id=str(entry['case_id']),
        reference_path=resolve(entry['reference']),
        model_outputs=[resolve(p) for p in outputs],
        label_names=label_names,
        dataset_size=str(entry.get('dataset_size', 'all')),
    )


def validate_case(case: CaseManifest) -> CaseManifest:
    """
    Open every volume of a case and check the manifest invariants.

    Args:
        case (CaseManifest): Case to validate

    Returns:
        CaseManifest: The same case with `output_kind` set to 'scores' or 'labels'
    """
    absent = [p for p in [case.reference_path] + case.model_outputs if not os.path.exists(p)]
    if absent:
        raise ValidationError(f"case {case.case_id}: missing volume file(s) {', '.join(absent)}")
    reference = read_volume(case.reference_path)
    if not isinstance(reference, LabelVolume):
        raise ValidationError(f"{case.reference_path}: reference must be a label volume")
    outputs = [read_volume(p) for p in case.model_outputs]

    paths = [case.reference_path] + case.model_outputs
    volumes = [reference] + outputs
    offending = [p for p, v in zip(paths, volumes) if v.geometry != reference.geometry]
    if offending:
        raise GeometryMismatchError(
            f"case {case.case_id}: geometry differs from reference {case.reference_path}",
            offending)

    kinds = {type(v) for v in outputs}
    if len(kinds) != 1:
        raise ValidationError(
            f"case {case.case_id}: model outputs mix score and label volumes")
    kind = 'scores' if kinds == {ScoreVolume} else 'labels'

    num_labels = reference.num_labels
    for path, volume in zip(case.model_outputs, outputs):
        width = volume.channels if kind == 'scores' else volume.num_labels
        if width != num_labels:
            raise ValidationError(
                f"case {case.case_id}: {path} has {width} labels/channels, "
                f"reference has {num_labels}")

    bad = [k for k in case.label_names if not 1 <= k < num_labels]
    if bad:
        raise ValidationError(
            f"case {case.case_id}: label_names keys {bad} outside 1..{num_labels - 1}")

    return CaseManifest(case.case_id, case.reference_path, list(case.model_outputs),
                        dict(case.label_names), case.dataset_size, kind)


def read_manifests(path: str, validate: bool = True) -> List[CaseManifest]:
    """
    Read every case listed in a manifest file.

    Args:
        path (str): Manifest JSON path
        validate (bool): Open and geometry-check all referenced volumes

    Returns:
        list: CaseManifest per case, in file order
    """
    document = load_structured(path)
    base_dir = os.path.dirname(os.path.abspath(path))
    if isinstance(document, dict) and 'cases' in document:
        entries = document['cases']
    else:
        entries = [document]
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"{path}: manifest lists no cases")

    cases = [_case_from_dict(entry, base_dir, path) for entry in entries]
    seen = set()
    for case in cases:
        if case.case_id in seen:
            raise ValidationError(f"{path}: duplicate case_id {case.case_id}")
        seen.add(case.case_id)

    if validate:
        cases = [validate_case(case) for case in cases]
    logger.info("Loaded %d case(s) from %s", len(cases), path)
    return cases


def read_manifest(path: str, validate: bool = True) -> CaseManifest:
    """
    Read a single-case manifest.

    Args:
        path (str): Manifest JSON path
        validate (bool): Open and geometry-check all referenced volumes

    Returns:
        CaseManifest: The case
    """
    cases = read_manifests(path, validate=validate)
    if len(cases) != 1:
        raise ValidationError(f"{path}: expected one case, found {len(cases)}")
    return cases[0]


def write_manifest(cases: List[CaseManifest], path: str) -> None:
    """
    Write cases to a manifest file with paths relative to its directory.

    Args:
        cases (list): CaseManifest entries
        path (str): Destination JSON path
    """
    base_dir = os.path.dirname(os.path.abspath(path))

    def relative(p):
        return os.path.relpath(os.path.abspath(p), base_dir).replace(os.sep, '/')

    document = {'cases': [
        {
            'case_id': case.case_id,
            'reference': relative(case.reference_path),
            'model_outputs': [relative(p) for p in case.model_outputs],
            'label_names': {str(k): v for k, v in sorted(case.label_names.items())},
            'dataset_size': case.dataset_size,
        }
        for case in cases
    ]}
    dump_structured(document, path)
