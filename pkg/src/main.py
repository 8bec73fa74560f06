"""
Segmentation Ensemble Toolkit Main Module

This is the command-line entry point. It wires manifests through fusion,
evaluation, statistical comparison, best-model selection and synthetic data
generation:

    seg-ensemble synth      generate a seeded synthetic dataset and manifest
    seg-ensemble fuse       fuse each case's model outputs with one or more methods
    seg-ensemble eval       per-organ mDTA / HD95 / volume difference reports
    seg-ensemble compare    Wilcoxon comparison and significance-points ranking
    seg-ensemble select-bm  pick the best single model from per-model reports

Every subcommand also reads options from `--config FILE` (JSON, keys are the
long flag names with '-' replaced by '_'); flags given on the command line win.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 internal error.
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List

import pandas as pd

from src import __version__
from src.analysis.ranking import build_ranking_table, select_best_model
from src.analysis.wilcoxon import ZERO_METHODS, Alternative
from src.extractors.manifest import dump_structured, load_structured, read_manifests, write_manifest
from src.extractors.metaimage import write_volume
from src.processors.case_runner import evaluate_cases, fuse_cases, synthesize_cases, write_case_reports
from src.processors.data_merger import (compare_methods, load_metric_table, merge_metric_tables,
                                        volume_summary)
from src.processors.fusion import FusionMethod, FusionVariant
from src.processors.staple import StapleParams
from src.synthesis.phantoms import (SynthConfig, case_manifests, default_synth_config,
                                    generate_ground_truth, load_synth_config)
from src.utils.errors import EXIT_OK, UsageError, ValidationError, exit_code_for
from src.utils.logging_setup import configure_logging
from src.utils.reports import REPORT_FORMATS, write_report

logger = logging.getLogger(__name__)

METHOD_NAMES = [v.value for v in FusionVariant]

REPORT_COLUMNS = ['case_id', 'organ', 'label', 'method', 'dataset_size',
                  'mdta_mm', 'hd95_mm', 'volume_diff_cm3', 'flags']

# Values used when neither the command line nor the config file sets an option.
DEFAULTS = {
    'workers': None,
    'verbose': 0,
    'format': 'csv',
    'alternative': Alternative.TWO_SIDED.value,
    'zero_method': 'wilcox',
    'staple_init_sensitivity': StapleParams.init_sensitivity,
    'staple_init_specificity': StapleParams.init_specificity,
    'staple_max_iterations': StapleParams.max_iterations,
    'staple_convergence_tol': StapleParams.convergence_tol,
    'staple_roi_margin': StapleParams.roi_margin,
}

REQUIRED = {
    'synth': ['out'],
    'fuse': ['manifest', 'method', 'out'],
    'eval': ['manifest', 'out'],
    'compare': ['baseline', 'candidates', 'out'],
    'select-bm': ['model_csvs'],
}


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors become UsageError (exit code 1)."""

    def error(self, message):
        raise UsageError(message, hint=f"run '{self.prog} --help' for usage")


@dataclass
class RunConfig:
    """Resolved options of one command: flags, then config file, then defaults."""

    command: str
    options: Dict[str, Any] = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__['options'][name]
        except KeyError:
            raise AttributeError(name)

    @property
    def workers(self) -> int:
        return int(self.options.get('workers') or os.cpu_count() or 1)


def roi_margin_arg(text: str):
    if text.lower() == 'none':
        return 'none'
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer or 'none', got '{text}'")
    if value < 0:
        raise argparse.ArgumentTypeError(f"ROI margin must be >= 0, got {value}")
    return value


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument('--config', help='JSON file with option values (flags win)')
    sub.add_argument('--workers', type=int, default=None,
                     help='Worker processes (default: number of CPUs)')
    sub.add_argument('-v', '--verbose', action='count', default=None,
                     help='More logging (-v info, -vv debug)')


def _add_staple_options(sub: argparse.ArgumentParser) -> None:
    group = sub.add_argument_group('STAPLE parameters')
    group.add_argument('--staple-init-sensitivity', type=float, default=None)
    group.add_argument('--staple-init-specificity', type=float, default=None)
    group.add_argument('--staple-max-iterations', type=int, default=None)
    group.add_argument('--staple-convergence-tol', type=float, default=None)
    group.add_argument('--staple-roi-margin', type=roi_margin_arg, default=None,
                       help="Voxels added around each organ's box, or 'none' for the whole grid")


def build_parser() -> CliParser:
    parser = CliParser(prog='seg-ensemble', description='Segmentation ensemble fusion and evaluation')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True
    parser.subcommands = {}

    synth = subparsers.add_parser('synth', help='Generate a synthetic dataset')
    synth.add_argument('--synth-config', help='Synthetic dataset description (JSON)')
    synth.add_argument('--seed', type=int, default=None, help='Override the config seed')
    synth.add_argument('--num-cases', type=int, default=None, help='Override the number of cases')
    synth.add_argument('--out', help='Output directory')
    _add_common(synth)

    fuse = subparsers.add_parser('fuse', help='Fuse model outputs per case')
    fuse.add_argument('--manifest', help='Case manifest (JSON)')
    fuse.add_argument('--method', nargs='+', choices=METHOD_NAMES + ['all'], default=None,
                      help='Fusion method(s)')
    fuse.add_argument('--out', help='Output directory; volumes go to <out>/<method>/')
    _add_staple_options(fuse)
    _add_common(fuse)

    evaluate = subparsers.add_parser('eval', help='Evaluate predictions against references')
    evaluate.add_argument('--manifest', help='Case manifest (JSON)')
    source = evaluate.add_mutually_exclusive_group()
    source.add_argument('--pred-dir', help='Directory holding <case_id>.mha predictions')
    source.add_argument('--model-index', type=int, default=None,
                        help="Evaluate the k-th raw model output of each case")
    evaluate.add_argument('--method-name', help='Method recorded in the report')
    evaluate.add_argument('--out', help='Aggregate report path')
    evaluate.add_argument('--format', choices=REPORT_FORMATS, default=None)
    _add_common(evaluate)

    compare = subparsers.add_parser('compare', help='Compare methods against a baseline')
    compare.add_argument('--baseline', help='Baseline metric table')
    compare.add_argument('--candidates', nargs='+', default=None, help='Candidate metric tables')
    compare.add_argument('--out', help='Output directory for the comparison reports')
    compare.add_argument('--format', choices=REPORT_FORMATS, default=None)
    compare.add_argument('--alternative', choices=[a.value for a in Alternative], default=None)
    compare.add_argument('--zero-method', choices=ZERO_METHODS, default=None)
    _add_common(compare)

    select = subparsers.add_parser('select-bm', help='Select the best single model')
    select.add_argument('--model-csvs', nargs='+', default=None,
                        help='Per-model metric tables, in model index order')
    select.add_argument('--out', help='Optional JSON file for the selection')
    _add_common(select)

    parser.subcommands.update(synth=synth, fuse=fuse, eval=evaluate, compare=compare)
    parser.subcommands['select-bm'] = select
    return parser


def _option_names(parser: CliParser, command: str) -> List[str]:
    sub = parser.subcommands[command]
    return [a.dest for a in sub._actions if a.dest not in ('help', 'config')]


def resolve_config(parser: CliParser, args: argparse.Namespace) -> RunConfig:
    """
    Merge command-line flags with the optional --config file.

    Args:
        parser (CliParser): Parser that produced `args`
        args (Namespace): Parsed flags

    Returns:
        RunConfig: Resolved options
    """
    names = _option_names(parser, args.command)
    file_options = {}
    if getattr(args, 'config', None):
        if not os.path.exists(args.config):
            raise UsageError(f"config file {args.config} does not exist")
        file_options = load_structured(args.config)
        if not isinstance(file_options, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(file_options) - set(names))
        if unknown:
            raise UsageError(f"unknown config keys {unknown} for '{args.command}'",
                             hint=f"valid keys: {', '.join(sorted(names))}")

    options = {}
    for name in names:
        if name in vars(args) and getattr(args, name) is not None:
            options[name] = getattr(args, name)
        elif name in file_options:
            options[name] = file_options[name]
        else:
            options[name] = DEFAULTS.get(name)

    missing = [n for n in REQUIRED[args.command] if options.get(n) is None]
    if missing:
        raise UsageError(f"'{args.command}' needs {', '.join('--' + n.replace('_', '-') for n in missing)}")
    return RunConfig(args.command, options)


def _as_list(value) -> List[str]:
    """Config files may give a single string where a flag takes several values."""
    return [value] if isinstance(value, str) else list(value)


def _require_files(paths: List[str]) -> None:
    absent = [p for p in paths if not os.path.exists(p)]
    if absent:
        raise UsageError(f"input file(s) not found: {', '.join(absent)}")


def staple_params_from(config: RunConfig) -> StapleParams:
    margin = config.staple_roi_margin
    return StapleParams(
        init_sensitivity=float(config.staple_init_sensitivity),
        init_specificity=float(config.staple_init_specificity),
        max_iterations=int(config.staple_max_iterations),
        convergence_tol=float(config.staple_convergence_tol),
        roi_margin=None if margin in (None, 'none') else int(margin),
    )


def cmd_synth(config: RunConfig) -> int:
    """Write ground truth, R model outputs per case and a manifest."""
    synth_path = config.synth_config
    if synth_path:
        _require_files([synth_path])
        synth = load_synth_config(synth_path)
    else:
        synth = default_synth_config()
    overrides = synth.as_dict()
    if config.seed is not None:
        overrides['seed'] = config.seed
    if config.num_cases is not None:
        overrides['num_cases'] = config.num_cases
    synth = SynthConfig.from_dict(overrides)

    out_dir = config.out
    os.makedirs(out_dir, exist_ok=True)
    truth = generate_ground_truth(synth)
    truth_path = os.path.join(out_dir, 'truth.mha')
    write_volume(truth, truth_path)
    output_paths = synthesize_cases(synth, truth, out_dir, config.workers)

    manifest_path = os.path.join(out_dir, 'manifest.json')
    write_manifest(case_manifests(synth, truth_path, output_paths), manifest_path)
    dump_structured(synth.as_dict(), os.path.join(out_dir, 'synth_config.json'))
    print(f"Generated {synth.num_cases} case(s) with {synth.raters} rater(s) in {out_dir}")
    print(f"Manifest saved to {manifest_path}")
    return EXIT_OK


def cmd_fuse(config: RunConfig) -> int:
    """Fuse every case with each requested method and write volumes with provenance."""
    _require_files([config.manifest])
    requested = _as_list(config.method)
    unknown = [m for m in requested if m not in METHOD_NAMES + ['all']]
    if unknown:
        raise UsageError(f"unknown fusion method(s) {unknown}",
                         hint=f"choose from {', '.join(METHOD_NAMES)} or all")
    names = METHOD_NAMES if 'all' in requested else list(dict.fromkeys(requested))
    methods = [
        FusionMethod(FusionVariant.STAPLE, staple_params_from(config)) if name == 'staple'
        else FusionMethod(FusionVariant(name))
        for name in names
    ]
    cases = read_manifests(config.manifest)
    if any(case.output_kind == 'labels' for case in cases):
        for method in methods:
            if method.variant.needs_scores:
                raise UsageError(f"{method.name} needs score volumes, the manifest lists label masks",
                                 hint="use majority-vote or staple for label inputs")

    for method in methods:
        results = fuse_cases(cases, method, config.out, __version__, config.workers)
        print(f"Fused {len(results)} case(s) with {method.name} -> {os.path.join(config.out, method.name)}")
    return EXIT_OK


def cmd_eval(config: RunConfig) -> int:
    """Evaluate a prediction directory (or one raw model) for every manifest case."""
    _require_files([config.manifest])
    if config.pred_dir is None and config.model_index is None:
        raise UsageError("'eval' needs --pred-dir or --model-index")
    if config.pred_dir is not None and config.model_index is not None:
        raise UsageError("--pred-dir and --model-index are mutually exclusive")
    if config.pred_dir is not None and not os.path.isdir(config.pred_dir):
        raise UsageError(f"prediction directory {config.pred_dir} does not exist")

    if config.method_name:
        method = config.method_name
    elif config.model_index is not None:
        method = f"model_{config.model_index}"
    else:
        method = os.path.basename(os.path.normpath(config.pred_dir))

    cases = read_manifests(config.manifest)
    reports = evaluate_cases(cases, method, config.pred_dir, config.model_index, config.workers)
    rows = [row for report in reports for row in report.to_rows()]
    path = write_report(pd.DataFrame(rows, columns=REPORT_COLUMNS), config.out, config.format)
    write_case_reports(reports, os.path.splitext(path)[0] + '_cases')

    flagged = sum(1 for row in rows if row['flags'])
    print(f"Evaluated {len(reports)} case(s) for {method}: {len(rows)} rows, {flagged} flagged")
    print(f"Report saved to {path}")
    return EXIT_OK


def cmd_compare(config: RunConfig) -> int:
    """Wilcoxon comparison of candidate tables against the baseline, plus ranking."""
    _require_files([config.baseline] + _as_list(config.candidates))
    baseline = load_metric_table(config.baseline)
    candidates = merge_metric_tables(_as_list(config.candidates))
    table, comparisons = compare_methods(baseline, candidates, Alternative(config.alternative),
                                         config.zero_method)
    ranking = build_ranking_table(comparisons).to_frame()
    volumes = volume_summary([baseline, candidates])

    out_dir = config.out
    paths = [
        write_report(table, os.path.join(out_dir, 'comparison'), config.format),
        write_report(ranking, os.path.join(out_dir, 'ranking'), config.format),
        write_report(volumes, os.path.join(out_dir, 'volume_summary'), config.format),
    ]
    print("Ranking (significance points):")
    print(ranking.to_string(index=False))
    print(f"Reports saved to {', '.join(paths)}")
    return EXIT_OK


def cmd_select_bm(config: RunConfig) -> int:
    """Best single model from per-model metric tables."""
    model_csvs = _as_list(config.model_csvs)
    _require_files(model_csvs)
    per_model = []
    for path in model_csvs:
        df = load_metric_table(path)
        per_model.append({'mdta': df['mdta_mm'].tolist(), 'hd95': df['hd95_mm'].tolist()})
    selection = select_best_model(per_model)
    for line in selection.explanation():
        print(line)
    if config.out:
        dump_structured({
            'best_model': selection.index,
            'model_csvs': model_csvs,
            'medians': {str(k): v for k, v in selection.medians.items()},
            'ranks': {str(k): v for k, v in selection.ranks.items()},
            'excluded': selection.excluded,
        }, config.out)
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'fuse': cmd_fuse,
    'eval': cmd_eval,
    'compare': cmd_compare,
    'select-bm': cmd_select_bm,
}


def main(argv: List[str] = None) -> int:
    """
    Run one subcommand and return its exit code.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = resolve_config(parser, args)
        configure_logging(int(config.verbose or 0))
        logger.debug("Resolved options for %s: %s", config.command, config.options)
        return COMMANDS[config.command](config)
    except (UsageError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception as exc:
        logger.debug("Internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
