"""
Command line interface.

.. code:: text

    bilevel-obstacle run --config configs/example1.toml
    bilevel-obstacle evaluate --config configs/example1.toml --checkpoint runs/example1/stage2.ckpt
        --grid 64 128
    bilevel-obstacle compare --config configs/example1.toml --weights 1 5
    bilevel-obstacle fixture-check --json

Exit codes: 0 on success, 1 when a check failed, 2 for config, input and IO errors,
3 when training diverged or a solver broke down.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__
from .checks import run_fixture_checks
from .config import RESOLVED_CONFIG_NAME, RunConfig, dump_config, dumps_config, load_config
from .errors import BilevelObstacleError, DivergenceError, SolverError
from .experiments import compare_methods, refine_checkpoint, run_experiment, write_comparison
from .metrics import control_function, evaluate_resolutions
from .oracle import recovered_objective
from .serialization import load_checkpoint, write_field

if TYPE_CHECKING:
    from ._types import FieldFn, FloatArray


__all__ = ('build_parser', 'main')

_log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

console = Console()


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format='%(message)s',
        datefmt='[%X]',
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def _resolve(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, 'seed', None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, 'out', None) is not None:
        config = config.with_output_dir(args.out)
    return config


def _prepare_out(directory: str, config: RunConfig) -> None:
    os.makedirs(directory, exist_ok=True)
    dump_config(config, os.path.join(directory, RESOLVED_CONFIG_NAME))


def _emit(args: argparse.Namespace, report: Any, table: Optional[Table] = None) -> None:
    if args.json or table is None:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        console.print(table)


def _fmt(value: Any) -> str:
    if value is None:
        return '-'
    if isinstance(value, float):
        return f'{value:.4e}'
    return str(value)


def _table(title: str, rows: Sequence[Dict[str, Any]], columns: Sequence[str]) -> Table:
    table = Table(title=title, show_header=True, header_style='bold magenta')
    for column in columns:
        table.add_column(column, justify='right' if column != 'method' else 'left')
    for row in rows:
        table.add_row(*(_fmt(row.get(column)) for column in columns))
    return table


# commands


def cmd_run(args: argparse.Namespace) -> int:
    config = _resolve(args)
    if args.dry_run:
        print(dumps_config(config), end='')
        return EXIT_OK

    summary = run_experiment(config)
    rows = [{'stage': stage, **summary[stage]} for stage in ('stage1', 'stage2')]
    columns = ('stage', 'upper_loss', 'lower_loss', 'state_error', 'control_error', 'wall_ms')
    _emit(args, summary, _table(f'{summary["example"]} (seed {summary["seed"]})', rows, columns))
    return EXIT_OK


def cmd_stage2(args: argparse.Namespace) -> int:
    config = _resolve(args)
    report = refine_checkpoint(config, load_checkpoint(args.checkpoint))
    columns = ('upper_loss', 'lower_loss', 'state_error', 'control_error', 'wall_ms')
    _emit(args, report, _table(f'stage 2 on {report["example"]}', [report], columns))
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve(args)
    problem = config.problem.build()
    checkpoint = load_checkpoint(args.checkpoint)
    resolutions = args.grid or list(config.output.resolutions)

    evaluations = evaluate_resolutions(checkpoint, problem, resolutions)
    rows = [
        {
            'N': evaluation.N,
            **evaluation.errors(problem),
            'network_energy': evaluation.energy(),
            'wall_ms': evaluation.wall_ms,
        }
        for evaluation in evaluations
    ]
    if args.out is not None:
        _prepare_out(args.out, config)
        with open(os.path.join(args.out, 'evaluation.json'), 'w', encoding='utf-8') as fp:
            json.dump(rows, fp, indent=2)
    columns = ('N', 'state_error', 'control_error', 'network_energy', 'wall_ms')
    _emit(args, rows, _table(f'{problem.name} from {args.checkpoint}', rows, columns))
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    config = _resolve(args)
    problem = config.problem.build()
    N = args.grid[0] if args.grid else config.output.grid

    control: FieldFn
    if args.checkpoint is not None:
        control, source = control_function(load_checkpoint(args.checkpoint), problem), args.checkpoint
    elif problem.exact_control is not None:
        control, source = problem.exact_control, 'exact control'
    else:
        control, source = _zero_field, 'zero control'

    recovered = recovered_objective(problem, control, N)
    report = {
        'example': problem.name,
        'control': source,
        'N': N,
        'recovered_objective': recovered.objective,
        'recovered_energy': recovered.energy,
        'sweeps': recovered.iterations,
    }
    if args.out is not None:
        _prepare_out(args.out, config)
        state = recovered.state
        write_field(os.path.join(args.out, 'oracle_state.txt'), state.points(), state.values, 'state')
    columns = ('control', 'N', 'recovered_objective', 'recovered_energy', 'sweeps')
    _emit(args, report, _table(f'grid oracle on {problem.name}', [report], columns))
    return EXIT_OK


def _zero_field(points: FloatArray) -> FloatArray:
    return points[:, 0] * 0.0


def cmd_compare(args: argparse.Namespace) -> int:
    config = _resolve(args)
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint is not None else None
    rows = compare_methods(config, args.weights, checkpoint=checkpoint)
    write_comparison(os.path.join(config.output.dir, 'comparison.csv'), rows)

    columns = ('method', 'weight', 'state_error', 'control_error', 'recovered_objective', 'wall_ms')
    _emit(args, rows, _table(f'{config.problem.example}: bilevel vs single level', rows, columns))
    return EXIT_OK


def cmd_fixture_check(args: argparse.Namespace) -> int:
    results = run_fixture_checks()
    report = {
        'passed': all(result.passed for result in results),
        'checks': [result.to_dict() for result in results],
    }
    rows = [result.to_dict() for result in results]
    for row in rows:
        row['passed'] = 'ok' if row['passed'] else 'FAILED'
    _emit(args, report, _table('fixture checks', rows, ('name', 'passed', 'value', 'threshold', 'detail')))
    return EXIT_OK if report['passed'] else EXIT_CHECK_FAILED


# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='bilevel-obstacle', description='Mesh-free bilevel optimal control of obstacle problems.'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help='Log at DEBUG level.')
    verbosity.add_argument('--quiet', action='store_true', help='Only log warnings and errors.')
    commands = parser.add_subparsers(dest='command', required=True, metavar='command')

    def command(
        name: str, handler: Callable[[argparse.Namespace], int], help: str
    ) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help, description=help)
        sub.set_defaults(handler=handler)
        sub.add_argument('--json', action='store_true', help='Print a machine-readable report.')
        return sub

    def run_flags(sub: argparse.ArgumentParser) -> None:
        sub.add_argument('--config', required=True, help='Run configuration (TOML).')
        sub.add_argument('--seed', type=int, help='Override the seed of every random stream.')
        sub.add_argument('--out', help='Override the output directory.')

    run = command('run', cmd_run, 'Train Stage 1 and Stage 2 and write every artifact.')
    run_flags(run)
    run.add_argument('--dry-run', action='store_true', help='Print the resolved config and exit.')

    stage2 = command('stage2', cmd_stage2, 'Refine the state of a Stage-1 checkpoint.')
    run_flags(stage2)
    stage2.add_argument('--checkpoint', required=True, help='Stage-1 checkpoint.')

    evaluate = command('evaluate', cmd_evaluate, 'Evaluate a checkpoint on grids without training.')
    run_flags(evaluate)
    evaluate.add_argument('--checkpoint', required=True, help='Checkpoint to evaluate.')
    evaluate.add_argument('--grid', type=int, nargs='+', metavar='N', help='Grid resolutions.')

    oracle = command('oracle', cmd_oracle, 'Solve for the grid state of a control and report its objective.')
    run_flags(oracle)
    oracle.add_argument('--checkpoint', help='Take the control from this checkpoint.')
    oracle.add_argument('--grid', type=int, nargs=1, metavar='N', help='Grid resolution.')

    compare = command('compare', cmd_compare, 'Compare the bilevel method with single-level training.')
    run_flags(compare)
    compare.add_argument(
        '--weights', type=float, nargs='*', default=[], metavar='W', help='Single-level weights.'
    )
    compare.add_argument('--checkpoint', help='Use this checkpoint for the bilevel row instead of training.')

    command('fixture-check', cmd_fixture_check, 'Run the closed-form checks on the quadratic fixture.')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of ``bilevel-obstacle``; returns the exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose, args.quiet)

    try:
        return args.handler(args)
    except (DivergenceError, SolverError) as exc:
        _log.error('%s', exc)
        return EXIT_NUMERICAL
    except (BilevelObstacleError, OSError) as exc:
        _log.error('%s', exc)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
