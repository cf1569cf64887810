"""Error metrics and evaluation of trained networks on grids."""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np

from .autodiff import as_tensor
from .concurrency import gather_in_threads
from .domains import UnitSquare
from .errors import ContractError, InputError
from .objectives import NeuralObjective
from .oracle import GridField, grid_integral, grid_points, recovered_objective
from .problems import lower_integrand_energy, make_batch
from .timer import Timer

if TYPE_CHECKING:
    from ._types import FieldFn, FloatArray
    from .problems import ProblemSpec
    from .serialization import Checkpoint


__all__ = (
    'relative_l2',
    'GridEvaluation',
    'objective_from_checkpoint',
    'evaluate_points',
    'evaluate_on_grid',
    'evaluate_resolutions',
    'control_function',
    'state_consistency',
)

_log = logging.getLogger(__name__)

# grid nodes pushed through the networks at once
EVAL_CHUNK = 16384


def relative_l2(field_hat: GridField, field_ref: GridField) -> float:
    """
    ``sqrt(sum (hat - ref)^2 / sum ref^2)`` over the interior nodes.

    Raises
    ------
    InputError
        The resolutions differ or the reference vanishes.
    """
    if field_hat.N != field_ref.N:
        raise InputError(f'Cannot compare a field at N={field_hat.N} with one at N={field_ref.N}')
    reference = float(np.sum(field_ref.values**2))
    if reference == 0.0:
        raise InputError('Relative error is undefined for a zero reference field')
    return float(np.sqrt(np.sum((field_hat.values - field_ref.values) ** 2) / reference))


@dataclasses.dataclass(frozen=True)
class GridEvaluation:
    """
    Network fields at all ``(N+1)^2`` nodes of a grid, boundary included, as ``(N+1, N+1)`` arrays.

    ``energy_density`` is ``1/2 |grad y|^2 - (f + u) y`` of the network fields; the source
    omits ``u`` when the control is the obstacle.
    """

    N: int
    state: FloatArray
    control: FloatArray
    obstacle: FloatArray
    energy_density: FloatArray
    wall_ms: float

    @staticmethod
    def interior(full: FloatArray) -> GridField:
        N = full.shape[0] - 1
        return GridField(N, full[1:-1, 1:-1].ravel())

    def energy(self) -> float:
        return grid_integral(self.energy_density, self.N)

    def errors(self, problem: ProblemSpec) -> Dict[str, Optional[float]]:
        """Relative state and control errors against the analytic solution; ``None`` without one."""
        if not problem.has_reference or self.N < 2:
            return {'state_error': None, 'control_error': None}
        assert problem.exact_state is not None and problem.exact_control is not None
        return {
            'state_error': relative_l2(
                self.interior(self.state), GridField.from_function(problem.exact_state, self.N)
            ),
            'control_error': relative_l2(
                self.interior(self.control), GridField.from_function(problem.exact_control, self.N)
            ),
        }


def objective_from_checkpoint(checkpoint: Checkpoint, problem: ProblemSpec) -> NeuralObjective:
    """
    Rebuild the objective the checkpoint was trained with.

    Raises
    ------
    ContractError
        The checkpoint belongs to another problem or its embeddings do not match.
    """
    if checkpoint.problem != problem.name:
        raise ContractError(f'Checkpoint was trained on {checkpoint.problem!r}, not {problem.name!r}')
    state = checkpoint.network('state').spec
    control = checkpoint.network('control').spec
    if state.embedding != problem.state_embedding or control.embedding != problem.control_embedding:
        raise ContractError(
            f'Checkpoint embeddings ({state.embedding}, {control.embedding}) do not match '
            f'{problem.name} ({problem.state_embedding}, {problem.control_embedding})'
        )
    return NeuralObjective(problem, state, control)


def _forward(checkpoint: Checkpoint, problem: ProblemSpec, points: FloatArray) -> Dict[str, FloatArray]:
    objective = objective_from_checkpoint(checkpoint, problem)
    theta_y = as_tensor(checkpoint.network('state').params)
    theta_u = as_tensor(checkpoint.network('control').params)

    parts: Dict[str, List[FloatArray]] = {'state': [], 'control': [], 'obstacle': [], 'energy': []}
    for start in range(0, points.shape[0], EVAL_CHUNK):
        batch = make_batch(problem, points[start : start + EVAL_CHUNK], order=1)
        fields = objective.fields(theta_y, theta_u, batch)
        source = 0.0 if problem.obstacle_is_control else fields.control.value
        assert fields.obstacle is not None

        parts['state'].append(fields.state.value.data)
        parts['control'].append(fields.control.value.data)
        parts['obstacle'].append(fields.obstacle.value.data)
        parts['energy'].append(lower_integrand_energy(fields.state, source, batch.f).data)

    return {name: np.concatenate(chunks) for name, chunks in parts.items()}


def evaluate_points(
    checkpoint: Checkpoint, problem: ProblemSpec, points: FloatArray
) -> Dict[str, FloatArray]:
    """
    Network state, control and obstacle at scattered points, for domains without a grid.

    Returns a mapping with the keys ``state``, ``control``, ``obstacle`` and ``energy``.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise InputError(f'Expected points of shape (n, 2), got {points.shape}')
    return _forward(checkpoint, problem, points)


def evaluate_on_grid(checkpoint: Checkpoint, problem: ProblemSpec, N: int) -> GridEvaluation:
    """
    Forward pass of the checkpoint's networks at every node of the ``N x N`` grid.

    No parameter is changed. Nodes are processed in fixed chunks, so the result does not
    depend on how many resolutions are evaluated or in which order.

    Raises
    ------
    InputError
        ``N < 1``.
    ContractError
        The checkpoint does not match the problem, or the problem is not posed on the unit square.
    """
    if N < 1:
        raise InputError(f'Grid resolution must be at least 1, got {N}')
    if not isinstance(problem.domain, UnitSquare):
        raise ContractError(f'{problem.name} is posed on {problem.domain!r}; use evaluate_points instead')

    with Timer() as timer:
        values = _forward(checkpoint, problem, grid_points(N))

    shape = (N + 1, N + 1)
    evaluation = GridEvaluation(
        N=N,
        state=values['state'].reshape(shape),
        control=values['control'].reshape(shape),
        obstacle=values['obstacle'].reshape(shape),
        energy_density=values['energy'].reshape(shape),
        wall_ms=timer.get_time_ms(),
    )
    _log.debug('evaluated %s at N=%d in %.1f ms', problem.name, N, evaluation.wall_ms)
    return evaluation


def evaluate_resolutions(
    checkpoint: Checkpoint, problem: ProblemSpec, resolutions: Sequence[int]
) -> List[GridEvaluation]:
    """:func:`evaluate_on_grid` at several resolutions in worker threads, results in input order."""
    return gather_in_threads(lambda N: evaluate_on_grid(checkpoint, problem, N), resolutions)


def control_function(checkpoint: Checkpoint, problem: ProblemSpec) -> FieldFn:
    """The embedded control (the obstacle, for obstacle control) of a checkpoint as a plain field."""
    objective = objective_from_checkpoint(checkpoint, problem)
    theta_y = as_tensor(checkpoint.network('state').params)
    theta_u = as_tensor(checkpoint.network('control').params)

    def control(points: FloatArray) -> FloatArray:
        batch = make_batch(problem, points, order=objective.control_order)
        return objective.fields(theta_y, theta_u, batch).control.value.data

    return control


def state_consistency(checkpoint: Checkpoint, problem: ProblemSpec, N: int) -> float:
    """
    Relative distance between the network state and the grid state of the network control.

    Raises
    ------
    ContractError
        The problem is not posed on the unit square.
    """
    recovered = recovered_objective(problem, control_function(checkpoint, problem), N)
    evaluation = evaluate_on_grid(checkpoint, problem, N)
    return relative_l2(evaluation.interior(evaluation.state), recovered.state)
