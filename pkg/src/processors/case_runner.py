"""
Case Runner Module

This module runs the per-case steps of the pipeline (fusion, evaluation,
synthetic case generation) over a worker pool. Each case is processed
sequentially by one worker; results come back in input order, so outputs do
not depend on the number of workers.
"""

import logging
import os
from functools import partial
from multiprocessing import Pool
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

from tqdm import tqdm

from src.analysis.metrics import MetricReport, evaluate_case
from src.extractors.manifest import CaseManifest, dump_structured
from src.extractors.metaimage import read_volume, write_volume
from src.processors.fusion import FusionMethod, argmax_labels, fuse
from src.synthesis.phantoms import SynthConfig, case_id_for, generate_model_outputs
from src.utils.errors import UsageError, ValidationError
from src.utils.path_builder import (build_provenance, ensure_parent, fused_volume_path,
                                    model_output_path, write_provenance)
from src.volumes.grid import LabelVolume, ScoreVolume

logger = logging.getLogger(__name__)


def run_cases(worker: Callable[[Any], Any], items: Sequence[Any], workers: int = 1,
              desc: str = "Processing cases") -> List[Any]:
    """
    Apply `worker` to every item, in parallel when workers > 1.

    Args:
        worker (callable): Picklable top-level function (or partial of one)
        items (sequence): Work items
        workers (int): Number of processes; 1 runs in this process
        desc (str): Progress bar label

    Returns:
        list: worker(item) for each item, in input order
    """
    items = list(items)
    workers = max(1, min(int(workers), len(items) or 1))
    # In-process run for a single worker
    if workers == 1:
        return [worker(item) for item in tqdm(items, desc=desc, disable=len(items) < 2)]
    logger.info("%s with %d worker processes", desc, workers)
    # imap keeps the input order
    with Pool(processes=workers) as pool:
        return list(tqdm(pool.imap(worker, items), total=len(items), desc=desc))


def fuse_one_case(case: CaseManifest, method: FusionMethod, out_dir: str, version: str) -> Dict[str, Any]:
    """
    Fuse one case's model outputs and write the volume and its provenance record.

    Args:
        case (CaseManifest): Validated case
        method (FusionMethod): Fusion strategy
        out_dir (str): Output root; files go to <out_dir>/<method>/
        version (str): Package version recorded in the provenance

    Returns:
        dict: case_id, output path and output digest
    """
    # Load the model outputs
    inputs = [read_volume(p) for p in case.model_outputs]
    if method.variant.needs_scores and not all(isinstance(v, ScoreVolume) for v in inputs):
        raise UsageError(
            f"case {case.case_id}: {method.name} needs score volumes, the manifest lists label masks",
            hint="use majority-vote or staple for label inputs")
    # Fuse and save
    fused = fuse(inputs, method)
    path = ensure_parent(fused_volume_path(out_dir, method.name, case.case_id))
    write_volume(fused, path)
    # Provenance sidecar next to the volume
    params = method.staple.as_dict() if method.staple is not None else {}
    record = build_provenance(method.name, params, case.model_outputs, path, version)
    write_provenance(record, path)
    logger.debug("Case %s fused with %s -> %s", case.case_id, method.name, path)
    return {'case_id': case.case_id, 'path': path, 'sha256': record['output']['sha256']}


def fuse_cases(cases: Sequence[CaseManifest], method: FusionMethod, out_dir: str,
               version: str, workers: int = 1) -> List[Dict[str, Any]]:
    """Fuse every case with one method, see fuse_one_case."""
    worker = partial(fuse_one_case, method=method, out_dir=out_dir, version=version)
    return run_cases(worker, cases, workers, desc=f"Fusing ({method.name})")


def _prediction_for(case: CaseManifest, pred_dir: Optional[str], model_index: Optional[int]) -> LabelVolume:
    if model_index is not None:
        if not 0 <= model_index < len(case.model_outputs):
            raise UsageError(
                f"case {case.case_id} has {len(case.model_outputs)} model outputs, "
                f"--model-index {model_index} is out of range")
        volume = read_volume(case.model_outputs[model_index])
    else:
        path = os.path.join(pred_dir, f"{case.case_id}.mha")
        if not os.path.exists(path):
            raise ValidationError(f"case {case.case_id}: no prediction at {path}")
        volume = read_volume(path)
    # Raw scores are evaluated through their argmax
    if isinstance(volume, ScoreVolume):
        volume = argmax_labels(volume)
    return volume


def evaluate_one_case(case: CaseManifest, method: str, pred_dir: Optional[str] = None,
                      model_index: Optional[int] = None) -> MetricReport:
    """
    Evaluate one case's prediction against its reference.

    The prediction is either <pred_dir>/<case_id>.mha or, with `model_index`,
    the k-th raw model output of the case (argmax for score volumes).
    """
    # Load reference and prediction
    reference = read_volume(case.reference_path)
    prediction = _prediction_for(case, pred_dir, model_index)
    if prediction.num_labels != reference.num_labels:
        raise ValidationError(
            f"case {case.case_id}: prediction has {prediction.num_labels} labels, "
            f"reference has {reference.num_labels}")
    return evaluate_case(prediction, reference, case_id=case.case_id, method=method,
                         label_names=case.label_names, dataset_size=case.dataset_size)


def evaluate_cases(cases: Sequence[CaseManifest], method: str, pred_dir: Optional[str] = None,
                   model_index: Optional[int] = None, workers: int = 1) -> List[MetricReport]:
    worker = partial(evaluate_one_case, method=method, pred_dir=pred_dir, model_index=model_index)
    return run_cases(worker, cases, workers, desc=f"Evaluating ({method})")


def write_case_reports(reports: Iterable[MetricReport], report_dir: str) -> List[str]:
    """One JSON MetricReport per case, <report_dir>/<case_id>.json."""
    os.makedirs(report_dir, exist_ok=True)
    paths = []
    for report in reports:
        path = os.path.join(report_dir, f"{report.case_id}.json")
        dump_structured({'case_id': report.case_id, 'method': report.method,
                         'dataset_size': report.dataset_size, 'organs': report.to_rows()}, path)
        paths.append(path)
    return paths


def synthesize_one_case(case_index: int, config: SynthConfig, truth: LabelVolume,
                        out_dir: str) -> List[str]:
    """Generate and write every rater output of one synthetic case."""
    case_id = case_id_for(case_index)
    paths = []
    # One file per rater
    for rater, volume in enumerate(generate_model_outputs(config, truth, case_index)):
        path = ensure_parent(model_output_path(out_dir, rater, case_id))
        write_volume(volume, path)
        paths.append(path)
    return paths


def synthesize_cases(config: SynthConfig, truth: LabelVolume, out_dir: str,
                     workers: int = 1) -> List[List[str]]:
    worker = partial(synthesize_one_case, config=config, truth=truth, out_dir=out_dir)
    return run_cases(worker, range(config.num_cases), workers, desc="Generating cases")
