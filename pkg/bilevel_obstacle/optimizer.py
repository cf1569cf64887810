"""
Training loops: the single-loop Moreau-envelope bilevel method, the lower-level
refinement stage, the weighted single-level baseline, and merit diagnostics.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING, Any, Callable, List, NamedTuple, Optional, Tuple

import numpy as np

from .adam import Adam, AdamParams
from .errors import ContractError, DivergenceError, InputError
from .problems import STREAM_HALF, STREAM_SINGLE_LEVEL, STREAM_STAGE2, STREAM_TRAIN, batch_rng
from .serialization import TrajectoryRow
from .timer import Timer

if TYPE_CHECKING:
    from ._types import FloatArray
    from .objectives import BilevelObjective


__all__ = (
    'HyperParams',
    'StepSizes',
    'StepInfo',
    'TrainState',
    'Stage1Result',
    'Stage2Result',
    'SingleLevelResult',
    'MeritRecord',
    'penalty_parameter',
    'step_sizes',
    'init_state',
    'proximal_step',
    's2foba_step',
    'train_stage1',
    'train_stage2',
    'train_single_level',
    'merit_diagnostics',
)

_log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class HyperParams:
    """
    Settings of a bilevel training run.

    Attributes
    ----------
    gamma: :class:`float`
        Proximal parameter of the Moreau envelope.
    c0, c_exp: :class:`float`
        Penalty schedule ``c_k = c0 * (k + 1) ** c_exp``.
    schedule: :class:`str`
        ``experimental``: the base rates decayed by ``decay`` every ``decay_every`` iterations.
        ``theoretical``: ``alpha0 (k+1)^-p``, ``beta0 (k+1)^-p``, ``eta0 (k+1)^-q``.
    alpha0, beta0, eta0: :class:`float`
        Base step sizes of the state, control and auxiliary updates.
    p, q: :class:`float`
        Exponents of the theoretical schedule; need ``1/2 < q < 1`` and ``(q+1)/2 < p < 1``.
    batch_size: :class:`int`
        Collocation points per batch.
    iterations: :class:`int`
        Iteration budget ``T``.
    seed: :class:`int`
        Root of every random stream of the run.
    log_every: :class:`int`
        Progress is logged every this many iterations.
    divergence_bound: :class:`float`
        A parameter norm above this aborts the run.
    """

    gamma: float = 20.0
    c0: float = 5.0
    c_exp: float = 0.3
    schedule: str = 'experimental'
    alpha0: float = 1e-3
    beta0: float = 1e-3
    eta0: float = 1e-3
    decay: float = 0.8
    decay_every: int = 1000
    p: float = 0.8
    q: float = 0.55
    batch_size: int = 512
    iterations: int = 20000
    seed: int = 0
    log_every: int = 500
    divergence_bound: float = 1e6

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise InputError(f'gamma must be positive, got {self.gamma}')
        if not self.c0 > 0 or self.c_exp < 0:
            raise InputError(
                f'Penalty schedule needs c0 > 0 and c_exp >= 0, got c0={self.c0}, c_exp={self.c_exp}'
            )
        if min(self.alpha0, self.beta0, self.eta0) <= 0:
            raise InputError('Step sizes alpha0, beta0 and eta0 must be positive')
        if self.batch_size < 1 or self.iterations < 0 or self.log_every < 1 or self.decay_every < 1:
            raise InputError(
                f'Invalid budget: batch_size={self.batch_size}, iterations={self.iterations}, '
                f'log_every={self.log_every}, decay_every={self.decay_every}'
            )
        if self.seed < 0:
            raise InputError(f'seed must be non-negative, got {self.seed}')
        if self.schedule == 'experimental':
            if not 0 < self.decay <= 1:
                raise InputError(f'decay must lie in (0, 1], got {self.decay}')
        elif self.schedule == 'theoretical':
            if not 0.5 < self.q < 1:
                raise InputError(f'The theoretical schedule needs 1/2 < q < 1, got q={self.q}')
            if not (self.q + 1) / 2 < self.p < 1:
                raise InputError(
                    f'The theoretical schedule needs (q+1)/2 < p < 1, got p={self.p} with q={self.q}'
                )
        else:
            raise InputError(f'Unknown step-size schedule {self.schedule!r}')


class StepSizes(NamedTuple):
    alpha: float
    beta: float
    eta: float


def penalty_parameter(hp: HyperParams, k: int) -> float:
    """``c_k = c0 (k + 1)^c_exp``, nondecreasing in ``k``."""
    return hp.c0 * (k + 1.0) ** hp.c_exp


def step_sizes(hp: HyperParams, k: int) -> StepSizes:
    if hp.schedule == 'theoretical':
        t = k + 1.0
        return StepSizes(hp.alpha0 * t**-hp.p, hp.beta0 * t**-hp.p, hp.eta0 * t**-hp.q)

    factor = hp.decay ** (k // hp.decay_every)
    return StepSizes(hp.alpha0 * factor, hp.beta0 * factor, hp.eta0 * factor)


@dataclasses.dataclass(frozen=True)
class StepInfo:
    """Batch estimates of ``j`` and ``e`` at the iterate a step started from, with its schedule values."""

    upper: float
    lower: float
    sizes: StepSizes
    c: float


@dataclasses.dataclass(frozen=True)
class TrainState:
    """
    The iterate ``(theta_y, theta_u, z)`` after ``k`` steps.

    ``z`` lives in the state network's parameter space and tracks the proximal point of the
    lower-level loss. Together with the run seed, ``k`` fixes every batch still to come.
    """

    theta_y: FloatArray
    theta_u: FloatArray
    z: FloatArray
    k: int = 0
    last: Optional[StepInfo] = None

    def __post_init__(self) -> None:
        if self.z.shape != self.theta_y.shape:
            raise ContractError(f'z has shape {self.z.shape}, expected the state shape {self.theta_y.shape}')


def init_state(objective: BilevelObjective, hp: HyperParams) -> TrainState:
    theta_y, theta_u = objective.initial_params(hp.seed)
    return TrainState(theta_y=theta_y, theta_u=theta_u, z=theta_y.copy())


def _guard(bound: float, k: int, **arrays: FloatArray) -> None:
    norms = {f'|{name}|': float(np.linalg.norm(array)) for name, array in arrays.items()}
    if all(np.isfinite(norm) and norm <= bound for norm in norms.values()):
        return
    raise DivergenceError(f'Training diverged at iteration {k}', {'iteration': k, **norms})


def proximal_step(
    objective: BilevelObjective,
    z: FloatArray,
    theta_y: FloatArray,
    theta_u: FloatArray,
    batch: Any,
    eta: float,
    gamma: float,
) -> FloatArray:
    """One gradient step on ``z -> e(z, theta_u) + |z - theta_y|^2 / (2 gamma)``."""
    at_z = objective.evaluate(z, theta_u, batch, upper_weight=0.0, wrt=('y',))
    return z - eta * (at_z.grad_y + (z - theta_y) / gamma)


def s2foba_step(state: TrainState, objective: BilevelObjective, hp: HyperParams) -> TrainState:
    """
    One iteration of the single-loop bilevel method.

    In order: a proximal step on ``z``; a step on ``theta_y`` along the penalised gradient
    ``(1/c) grad j + grad e - (theta_y - z_new) / gamma`` on batch ``k``; a step on
    ``theta_u`` along ``(1/c) grad j + grad e`` at ``theta_y_new`` minus ``grad e`` at
    ``z_new``, on a second batch drawn independently of the first.

    Raises
    ------
    DivergenceError
        A new iterate is not finite or its norm exceeds ``hp.divergence_bound``.
    """
    k = state.k
    sizes = step_sizes(hp, k)
    c = penalty_parameter(hp, k)
    gamma = hp.gamma
    theta_y, theta_u, z = state.theta_y, state.theta_u, state.z

    batch = objective.sample(batch_rng(hp.seed, k, STREAM_TRAIN), hp.batch_size)
    z_new = proximal_step(objective, z, theta_y, theta_u, batch, sizes.eta, gamma)

    at_theta = objective.evaluate(theta_y, theta_u, batch, upper_weight=1.0 / c, wrt=('y',))
    theta_y_new = theta_y - sizes.alpha * (at_theta.grad_y - (theta_y - z_new) / gamma)

    half_batch = objective.sample(batch_rng(hp.seed, k, STREAM_HALF), hp.batch_size)
    at_new = objective.evaluate(theta_y_new, theta_u, half_batch, upper_weight=1.0 / c, wrt=('u',))
    at_prox = objective.evaluate(z_new, theta_u, half_batch, upper_weight=0.0, wrt=('u',))
    theta_u_new = theta_u - sizes.beta * (at_new.grad_u - at_prox.grad_u)

    _guard(hp.divergence_bound, k, theta_y=theta_y_new, theta_u=theta_u_new, z=z_new)
    return TrainState(
        theta_y=theta_y_new,
        theta_u=theta_u_new,
        z=z_new,
        k=k + 1,
        last=StepInfo(upper=at_theta.upper, lower=at_theta.lower, sizes=sizes, c=c),
    )


@dataclasses.dataclass(frozen=True)
class Stage1Result:
    state: TrainState
    trajectory: List[TrajectoryRow]
    wall_ms: float


def train_stage1(
    objective: BilevelObjective,
    hp: HyperParams,
    *,
    state: Optional[TrainState] = None,
    callback: Optional[Callable[[TrainState], None]] = None,
) -> Stage1Result:
    """
    Run ``hp.iterations`` bilevel steps from ``state`` (default: the seeded initialisation).

    Every iteration appends a trajectory row with the batch estimates of ``j`` and ``e`` at
    the iterate the step started from. ``callback`` sees each new state.
    """
    state = init_state(objective, hp) if state is None else state
    trajectory: List[TrajectoryRow] = []

    with Timer() as timer:
        for _ in range(hp.iterations):
            state = s2foba_step(state, objective, hp)
            info = state.last
            assert info is not None
            trajectory.append(
                TrajectoryRow(
                    iter=state.k - 1,
                    upper_loss=info.upper,
                    lower_loss=info.lower,
                    alpha=info.sizes.alpha,
                    beta=info.sizes.beta,
                    eta=info.sizes.eta,
                    c_k=info.c,
                    wall_ms=timer.elapsed_ms(),
                )
            )
            if callback is not None:
                callback(state)
            if state.k % hp.log_every == 0:
                _log.info(
                    'stage 1: iter %d, upper %.6e, lower %.6e, c_k %.4g',
                    state.k,
                    info.upper,
                    info.lower,
                    info.c,
                )

    return Stage1Result(state=state, trajectory=trajectory, wall_ms=timer.get_time_ms())


@dataclasses.dataclass(frozen=True)
class Stage2Result:
    theta_y: FloatArray
    trajectory: List[TrajectoryRow]
    wall_ms: float


def train_stage2(
    objective: BilevelObjective, theta_u: FloatArray, theta_y: FloatArray, adam: AdamParams
) -> Stage2Result:
    """
    Refine the state with the control frozen: Adam on the Monte Carlo lower-level loss.

    Trajectory rows report the learning rate in ``alpha``; ``beta``, ``eta`` and ``c_k`` are 0.

    Raises
    ------
    DivergenceError
        The state parameters stopped being finite or their norm exceeds ``adam.divergence_bound``.
    """
    optimizer = Adam(adam)
    trajectory: List[TrajectoryRow] = []

    with Timer() as timer:
        for k in range(adam.iterations):
            batch = objective.sample(batch_rng(adam.seed, k, STREAM_STAGE2), adam.batch_size)
            estimate = objective.evaluate(theta_y, theta_u, batch, upper_weight=0.0, wrt=('y',))
            theta_y = optimizer.step(theta_y, estimate.grad_y)
            _guard(adam.divergence_bound, k, theta_y=theta_y)

            trajectory.append(
                TrajectoryRow(
                    iter=k,
                    upper_loss=estimate.upper,
                    lower_loss=estimate.lower,
                    alpha=adam.lr,
                    beta=0.0,
                    eta=0.0,
                    c_k=0.0,
                    wall_ms=timer.elapsed_ms(),
                )
            )
            if (k + 1) % adam.log_every == 0:
                _log.info('stage 2: iter %d, lower %.6e', k + 1, estimate.lower)

    return Stage2Result(theta_y=theta_y, trajectory=trajectory, wall_ms=timer.get_time_ms())


@dataclasses.dataclass(frozen=True)
class SingleLevelResult:
    theta_y: FloatArray
    theta_u: FloatArray
    trajectory: List[TrajectoryRow]
    wall_ms: float


def train_single_level(objective: BilevelObjective, weight: float, hp: HyperParams) -> SingleLevelResult:
    """
    Plain stochastic gradient descent on ``j + weight * e`` jointly in both networks.

    Uses the experimental schedule of ``hp``: ``alpha`` for the state, ``beta`` for the control.
    Trajectory rows carry the weight in ``c_k``.
    """
    if not weight > 0:
        raise InputError(f'The single-level weight must be positive, got {weight}')

    theta_y, theta_u = objective.initial_params(hp.seed)
    schedule = dataclasses.replace(hp, schedule='experimental')
    trajectory: List[TrajectoryRow] = []

    with Timer() as timer:
        for k in range(hp.iterations):
            sizes = step_sizes(schedule, k)
            batch = objective.sample(batch_rng(hp.seed, k, STREAM_SINGLE_LEVEL), hp.batch_size)
            estimate = objective.evaluate(theta_y, theta_u, batch, lower_weight=weight, wrt=('y', 'u'))
            theta_y = theta_y - sizes.alpha * estimate.grad_y
            theta_u = theta_u - sizes.beta * estimate.grad_u
            _guard(hp.divergence_bound, k, theta_y=theta_y, theta_u=theta_u)

            trajectory.append(
                TrajectoryRow(
                    iter=k,
                    upper_loss=estimate.upper,
                    lower_loss=estimate.lower,
                    alpha=sizes.alpha,
                    beta=sizes.beta,
                    eta=0.0,
                    c_k=weight,
                    wall_ms=timer.elapsed_ms(),
                )
            )
            if (k + 1) % hp.log_every == 0:
                _log.info(
                    'single level (w=%g): iter %d, upper %.6e, lower %.6e',
                    weight,
                    k + 1,
                    estimate.upper,
                    estimate.lower,
                )

    return SingleLevelResult(
        theta_y=theta_y, theta_u=theta_u, trajectory=trajectory, wall_ms=timer.get_time_ms()
    )


@dataclasses.dataclass(frozen=True)
class MeritRecord:
    """
    Computable bounds on the penalty ``phi_c`` and the merit ``V = phi_c + C_z |z - z*|^2``.

    ``phi_lower <= phi_c <= phi_upper``, ``|z - z*| <= z_gap_bound`` and ``V <= merit_upper``.
    ``phi``, ``merit`` and ``z_gap`` are exact and only set for objectives with a closed-form
    proximal point.
    """

    k: int
    c: float
    phi_lower: float
    phi_upper: float
    prox_residual: float
    z_gap_bound: float
    merit_upper: float
    phi: Optional[float] = None
    merit: Optional[float] = None
    z_gap: Optional[float] = None


def merit_diagnostics(
    state: TrainState,
    objective: BilevelObjective,
    hp: HyperParams,
    probe_batch: Any,
    *,
    weak_convexity: float = 0.0,
    lower_lipschitz: float = 1.0,
) -> MeritRecord:
    """
    Estimate the penalty and the merit at ``state`` on a fixed probe batch.

    ``z`` stands in for the proximal point. With ``h(z) = e(z, theta_u) + |z - theta_y|^2 / (2 gamma)``
    strongly convex with modulus ``mu = 1/gamma - rho``,

    .. code:: py

        h(z) - |grad h(z)|^2 / (2 mu) <= e_gamma <= h(z)
        |z - z*| <= |grad h(z)| / mu

    which gives the two-sided penalty bounds and an upper bound of the merit. ``rho`` is
    ``weak_convexity`` and ``lower_lipschitz`` enters ``C_z = 6 (1 + L_e^2) / (gamma - gamma^2 rho)``.

    Raises
    ------
    ContractError
        ``gamma * weak_convexity >= 1``, so the proximal subproblem is not strongly convex.
    """
    gamma = hp.gamma
    mu = 1.0 / gamma - weak_convexity
    if mu <= 0:
        raise ContractError(
            f'Need gamma * rho < 1 for a well-posed proximal step, got gamma={gamma}, rho={weak_convexity}'
        )

    c = penalty_parameter(hp, state.k)
    theta_y, theta_u, z = state.theta_y, state.theta_u, state.z

    at_theta = objective.evaluate(theta_y, theta_u, probe_batch)
    at_z = objective.evaluate(z, theta_u, probe_batch, upper_weight=0.0, wrt=('y',))

    prox_value = at_z.lower + float(np.sum((z - theta_y) ** 2)) / (2.0 * gamma)
    residual = float(np.linalg.norm(at_z.grad_y + (z - theta_y) / gamma))
    phi_lower = at_theta.upper / c + at_theta.lower - prox_value
    phi_upper = phi_lower + residual**2 / (2.0 * mu)
    gap_bound = residual / mu
    c_z = 6.0 * (1.0 + lower_lipschitz**2) / (gamma - gamma**2 * weak_convexity)

    record = MeritRecord(
        k=state.k,
        c=c,
        phi_lower=phi_lower,
        phi_upper=phi_upper,
        prox_residual=residual,
        z_gap_bound=gap_bound,
        merit_upper=phi_upper + c_z * gap_bound**2,
    )

    prox_point = getattr(objective, 'prox_point', None)
    penalty = getattr(objective, 'penalty', None)
    if prox_point is None or penalty is None:
        return record

    z_gap = float(np.linalg.norm(z - prox_point(theta_y, theta_u, gamma)))
    phi = penalty(theta_y, theta_u, gamma, c)
    return dataclasses.replace(record, phi=phi, merit=phi + c_z * z_gap**2, z_gap=z_gap)
