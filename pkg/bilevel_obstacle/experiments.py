"""
End-to-end pipelines behind the command line: the two-stage run, stand-alone refinement,
and the comparison against the weighted single-level baseline.

Every pipeline takes a resolved :class:`RunConfig`; all randomness flows from its seed.
"""

from __future__ import annotations

import csv
import logging
import os
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence

import numpy as np

from .config import RESOLVED_CONFIG_NAME, RunConfig, dump_config
from .domains import UnitSquare
from .errors import InputError
from .metrics import control_function, evaluate_on_grid, evaluate_points
from .networks import NetworkSpec
from .objectives import NeuralObjective
from .oracle import recovered_objective
from .optimizer import train_single_level, train_stage1, train_stage2
from .problems import STREAM_PROBE, ProblemSpec, batch_rng
from .serialization import (
    Checkpoint,
    NetworkParams,
    load_checkpoint,
    save_checkpoint,
    write_field,
    write_summary,
    write_trajectory,
)

if TYPE_CHECKING:
    from ._types import FloatArray
    from .serialization import TrajectoryRow


__all__ = (
    'COMPARISON_COLUMNS',
    'build_objective',
    'make_checkpoint',
    'checkpoint_report',
    'run_experiment',
    'refine_checkpoint',
    'compare_methods',
    'write_comparison',
    'dump_fields',
)

_log = logging.getLogger(__name__)

COMPARISON_COLUMNS = (
    'method',
    'weight',
    'state_error',
    'control_error',
    'recovered_objective',
    'recovered_energy',
    'network_energy',
    'wall_ms',
)

# scattered points dumped for domains without a grid
SCATTER_POINTS = 4096


def build_objective(config: RunConfig) -> NeuralObjective:
    problem = config.problem.build()
    net = NetworkSpec(
        blocks=config.network.blocks,
        width=config.network.width,
        activation=config.network.activation,
        seed=config.optimizer.seed,
    )
    return NeuralObjective(problem, net, net)


def make_checkpoint(
    objective: NeuralObjective,
    config: RunConfig,
    theta_y: FloatArray,
    theta_u: FloatArray,
    *,
    iteration: int,
    stage: str,
) -> Checkpoint:
    return Checkpoint(
        problem=objective.problem.name,
        seed=config.optimizer.seed,
        iteration=iteration,
        stage=stage,
        networks=(
            NetworkParams('state', objective.state_net, np.asarray(theta_y, dtype=np.float64)),
            NetworkParams('control', objective.control_net, np.asarray(theta_u, dtype=np.float64)),
        ),
    )


def _final_losses(trajectory: Sequence[TrajectoryRow]) -> Dict[str, Optional[float]]:
    if not trajectory:
        return {'upper_loss': None, 'lower_loss': None}
    return {'upper_loss': trajectory[-1].upper_loss, 'lower_loss': trajectory[-1].lower_loss}


def checkpoint_report(checkpoint: Checkpoint, problem: ProblemSpec, N: int) -> Dict[str, Any]:
    """
    Relative errors and network energy of a checkpoint on the ``N x N`` grid.

    Errors are ``None`` when the problem has no analytic solution; every value is ``None``
    on domains without a grid.
    """
    if not isinstance(problem.domain, UnitSquare):
        return {'grid': None, 'state_error': None, 'control_error': None, 'network_energy': None}
    evaluation = evaluate_on_grid(checkpoint, problem, N)
    return {'grid': N, **evaluation.errors(problem), 'network_energy': evaluation.energy()}


def dump_fields(directory: str, checkpoint: Checkpoint, problem: ProblemSpec, N: int, seed: int) -> None:
    """
    Write ``state.txt``, ``control.txt`` and ``obstacle.txt``: interior grid nodes on the unit
    square, uniformly scattered points otherwise.
    """
    if isinstance(problem.domain, UnitSquare):
        evaluation = evaluate_on_grid(checkpoint, problem, N)
        fields = {
            'state': evaluation.interior(evaluation.state),
            'control': evaluation.interior(evaluation.control),
            'obstacle': evaluation.interior(evaluation.obstacle),
        }
        for name, field in fields.items():
            write_field(os.path.join(directory, f'{name}.txt'), field.points(), field.values, name)
        return

    points = problem.domain.sample_interior(SCATTER_POINTS, batch_rng(seed, 0, STREAM_PROBE))
    values = evaluate_points(checkpoint, problem, points)
    for name in ('state', 'control', 'obstacle'):
        write_field(os.path.join(directory, f'{name}.txt'), points, values[name], name)


def _prepare(directory: str, config: RunConfig) -> None:
    os.makedirs(directory, exist_ok=True)
    dump_config(config, os.path.join(directory, RESOLVED_CONFIG_NAME))


def run_experiment(config: RunConfig) -> Dict[str, Any]:
    """
    Stage 1, then Stage 2, with every artifact written to ``config.output.dir``.

    Writes the resolved config, ``trajectory.csv``, ``stage2_trajectory.csv``,
    ``stage1.ckpt``, ``stage2.ckpt``, ``summary.json`` and, if enabled, field dumps of the
    final networks.

    Returns
    -------
    :class:`dict`
        The summary record.

    Raises
    ------
    DivergenceError
        Either stage diverged.
    """
    directory = config.output.dir
    _prepare(directory, config)
    objective = build_objective(config)
    problem = objective.problem
    N = config.output.grid

    _log.info('stage 1 on %s: %d iterations', problem.name, config.optimizer.iterations)
    stage1 = train_stage1(objective, config.optimizer)
    write_trajectory(os.path.join(directory, 'trajectory.csv'), stage1.trajectory)
    first = make_checkpoint(
        objective,
        config,
        stage1.state.theta_y,
        stage1.state.theta_u,
        iteration=stage1.state.k,
        stage='stage1',
    )
    save_checkpoint(os.path.join(directory, 'stage1.ckpt'), first)

    _log.info('stage 2 on %s: %d iterations', problem.name, config.stage2.iterations)
    stage2 = train_stage2(objective, stage1.state.theta_u, stage1.state.theta_y, config.stage2)
    write_trajectory(os.path.join(directory, 'stage2_trajectory.csv'), stage2.trajectory)
    second = make_checkpoint(
        objective,
        config,
        stage2.theta_y,
        stage1.state.theta_u,
        iteration=config.stage2.iterations,
        stage='stage2',
    )
    save_checkpoint(os.path.join(directory, 'stage2.ckpt'), second)

    if config.output.dump_fields:
        dump_fields(directory, second, problem, N, config.optimizer.seed)

    summary = {
        'example': problem.name,
        'seed': config.optimizer.seed,
        'stage1': {
            **_final_losses(stage1.trajectory),
            'iterations': stage1.state.k,
            'wall_ms': stage1.wall_ms,
            **checkpoint_report(first, problem, N),
        },
        'stage2': {
            **_final_losses(stage2.trajectory),
            'iterations': config.stage2.iterations,
            'wall_ms': stage2.wall_ms,
            **checkpoint_report(second, problem, N),
        },
    }
    write_summary(os.path.join(directory, 'summary.json'), summary)
    return summary


def refine_checkpoint(config: RunConfig, checkpoint: Checkpoint) -> Dict[str, Any]:
    """Run Stage 2 alone from a Stage-1 checkpoint; writes ``stage2.ckpt`` and its trajectory."""
    directory = config.output.dir
    _prepare(directory, config)
    objective = build_objective(config)
    problem = objective.problem
    if checkpoint.problem != problem.name:
        raise InputError(
            f'Checkpoint was trained on {checkpoint.problem!r}, config asks for {problem.name!r}'
        )

    theta_u = checkpoint.network('control').params
    stage2 = train_stage2(objective, theta_u, checkpoint.network('state').params, config.stage2)
    write_trajectory(os.path.join(directory, 'stage2_trajectory.csv'), stage2.trajectory)
    refined = make_checkpoint(
        objective, config, stage2.theta_y, theta_u, iteration=config.stage2.iterations, stage='stage2'
    )
    save_checkpoint(os.path.join(directory, 'stage2.ckpt'), refined)

    return {
        'example': problem.name,
        'seed': config.stage2.seed,
        **_final_losses(stage2.trajectory),
        'wall_ms': stage2.wall_ms,
        **checkpoint_report(refined, problem, config.output.grid),
    }


def _comparison_row(
    method: str,
    weight: Optional[float],
    checkpoint: Checkpoint,
    problem: ProblemSpec,
    N: int,
    wall_ms: Optional[float],
) -> Dict[str, Any]:
    report = checkpoint_report(checkpoint, problem, N)
    row: Dict[str, Any] = {
        'method': method,
        'weight': weight,
        'state_error': report['state_error'],
        'control_error': report['control_error'],
        'recovered_objective': None,
        'recovered_energy': None,
        'network_energy': report['network_energy'],
        'wall_ms': wall_ms,
    }
    if isinstance(problem.domain, UnitSquare):
        recovered = recovered_objective(problem, control_function(checkpoint, problem), N)
        row['recovered_objective'] = recovered.objective
        row['recovered_energy'] = recovered.energy
    return row


def compare_methods(
    config: RunConfig, weights: Sequence[float], *, checkpoint: Optional[Checkpoint] = None
) -> List[Dict[str, Any]]:
    """
    One row for the bilevel method, then one per single-level weight.

    The bilevel row comes from ``checkpoint`` when given, otherwise from a full two-stage
    run in ``config.output.dir``. Values that cannot be computed are ``None``, never 0.
    """
    if any(not weight > 0 for weight in weights):
        raise InputError(f'Single-level weights must be positive, got {list(weights)}')

    objective = build_objective(config)
    problem = objective.problem
    N = config.output.grid

    if checkpoint is None:
        summary = run_experiment(config)
        checkpoint = load_checkpoint(os.path.join(config.output.dir, 'stage2.ckpt'))
        wall_ms = summary['stage1']['wall_ms'] + summary['stage2']['wall_ms']
    else:
        _prepare(config.output.dir, config)
        wall_ms = None

    rows = [_comparison_row('bilevel', None, checkpoint, problem, N, wall_ms)]
    for weight in weights:
        _log.info('single-level baseline with weight %g', weight)
        result = train_single_level(objective, weight, config.optimizer)
        baseline = make_checkpoint(
            objective,
            config,
            result.theta_y,
            result.theta_u,
            iteration=config.optimizer.iterations,
            stage='single_level',
        )
        rows.append(_comparison_row('single_level', weight, baseline, problem, N, result.wall_ms))
    return rows


def write_comparison(path: str, rows: Sequence[Dict[str, Any]]) -> None:
    """CSV with :data:`COMPARISON_COLUMNS`; missing values are written as empty fields."""
    with open(path, 'w', newline='', encoding='utf-8') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            cells = []
            for column in COMPARISON_COLUMNS:
                value = row.get(column)
                if value is None or (isinstance(value, float) and not np.isfinite(value)):
                    cells.append('')
                elif isinstance(value, float):
                    cells.append(repr(value))
                else:
                    cells.append(str(value))
            writer.writerow(cells)
