"""
Problem definitions: data of each example, collocation batches and loss integrands.

Every integrand here works on a whole batch at once and returns a :class:`Tensor` of
per-point values; the objectives take the batch mean.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING, Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import SpatialJet, Tensor, as_tensor
from .domains import Domain, StarDomain, UnitSquare
from .errors import ContractError, InputError

if TYPE_CHECKING:
    from typing_extensions import TypeAlias

    from ._types import FieldFn, FloatArray


__all__ = (
    'STREAM_TRAIN',
    'STREAM_HALF',
    'STREAM_STAGE2',
    'STREAM_SINGLE_LEVEL',
    'STREAM_PROBE',
    'STREAM_NOISE',
    'batch_rng',
    'EnergyLoss',
    'EviResidualLoss',
    'ExampleDefaults',
    'ProblemSpec',
    'SampleBatch',
    'make_batch',
    'sample_uniform',
    'upper_integrand',
    'lower_integrand_energy',
    'lower_integrand_evi',
    'example1_state',
    'example1_state_laplacian',
    'example1_multiplier',
    'catalog',
    'EXAMPLES',
)

_log = logging.getLogger(__name__)

JetField: TypeAlias = Callable[[Sequence[SpatialJet]], SpatialJet]

# substream ids; one generator per (seed, iteration, substream)
STREAM_TRAIN = 0
STREAM_HALF = 1
STREAM_STAGE2 = 2
STREAM_SINGLE_LEVEL = 3
STREAM_PROBE = 4
STREAM_NOISE = 5


def batch_rng(seed: int, k: int, substream: int) -> np.random.Generator:
    """
    Counter-based generator for batch ``k`` of a substream.

    The Philox counter is started at ``(0, 0, substream, k)``; draws advance the low words
    only, so streams for distinct ``(k, substream)`` never overlap and any batch can be
    regenerated on its own.
    """
    if seed < 0 or k < 0 or substream < 0:
        raise InputError(
            f'Seeds and counters must be non-negative, got seed={seed}, k={k}, substream={substream}'
        )
    bit_generator = np.random.Philox(key=seed, counter=np.array([0, 0, substream, k], dtype=np.uint64))
    return np.random.Generator(bit_generator)


@dataclasses.dataclass(frozen=True)
class EnergyLoss:
    """Lower-level loss ``1/2 |grad y|^2 - (f + u) y`` (Dirichlet energy)."""

    kind = 'energy'
    jet_order = 1


@dataclasses.dataclass(frozen=True)
class EviResidualLoss:
    """
    Lower-level loss ``scale * |P(y - tau A y + tau (f + u)) - y|^2`` with
    ``A y = -Laplace(y) + b . grad(y)`` and ``P`` the pointwise projection onto the obstacle.
    """

    tau: float = 0.01
    convection: Tuple[float, float] = (1.0, -1.0)
    scale: float = 10.0

    kind = 'evi_residual'
    jet_order = 2

    def __post_init__(self) -> None:
        if self.tau <= 0 or self.scale <= 0:
            raise InputError(
                f'EVI residual needs tau > 0 and scale > 0, got tau={self.tau}, scale={self.scale}'
            )


LowerLoss: TypeAlias = Union[EnergyLoss, EviResidualLoss]


@dataclasses.dataclass(frozen=True)
class ExampleDefaults:
    """Run settings an example ships with; the config file may override each one."""

    gamma: float
    c0: float
    c_exp: float
    iterations: int
    learning_rate: float = 1e-3


@dataclasses.dataclass(frozen=True)
class ProblemSpec:
    """
    Everything defining one optimal control problem of obstacle type.

    Attributes
    ----------
    name: :class:`str`
        Catalog id.
    domain: :class:`Domain`
        Where the state lives.
    sigma: :class:`float`
        Tikhonov weight of the control cost.
    f: Callable
        Source term on points ``(m, 2)``.
    y_d: Callable
        Target state on points ``(m, 2)``.
    psi: Optional[Callable]
        Obstacle as a function of coordinate jets. ``None`` when the obstacle is the control.
    obstacle_side: :class:`str`
        ``lower`` (state above the obstacle) or ``upper`` (state below it).
    state_embedding, control_embedding: :class:`str`
        Output embeddings of the two networks.
    control_bounds: Optional[Tuple[float, float]]
        Box ``[u_a, u_b]`` for ``control_clamp``.
    lower_loss: Union[:class:`EnergyLoss`, :class:`EviResidualLoss`]
        Which lower-level loss is trained.
    control_cost: :class:`str`
        ``l2`` for ``sigma/2 |u|^2`` or ``h1_seminorm`` for ``sigma/2 |grad u|^2``.
    exact_state, exact_control: Optional[Callable]
        Analytic solution, when known.
    defaults: :class:`ExampleDefaults`
        Recommended run settings.
    """

    name: str
    domain: Domain
    sigma: float
    f: FieldFn
    y_d: FieldFn
    psi: Optional[JetField]
    defaults: ExampleDefaults
    obstacle_side: str = 'lower'
    state_embedding: str = 'state_square'
    control_embedding: str = 'control_raw'
    control_bounds: Optional[Tuple[float, float]] = None
    lower_loss: LowerLoss = EnergyLoss()
    control_cost: str = 'l2'
    exact_state: Optional[FieldFn] = None
    exact_control: Optional[FieldFn] = None

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise InputError(f'sigma must be positive, got {self.sigma}')
        if self.obstacle_side not in ('lower', 'upper'):
            raise InputError(f'obstacle_side must be lower or upper, got {self.obstacle_side!r}')
        if self.control_cost not in ('l2', 'h1_seminorm'):
            raise InputError(f'Unknown control cost {self.control_cost!r}')
        if self.control_bounds is not None and self.control_bounds[0] > self.control_bounds[1]:
            raise InputError(f'Empty control box {self.control_bounds}')

    @property
    def obstacle_is_control(self) -> bool:
        return self.psi is None

    @property
    def has_reference(self) -> bool:
        return self.exact_state is not None and self.exact_control is not None

    @property
    def jet_order(self) -> int:
        return self.lower_loss.jet_order

    def obstacle_values(self, points: FloatArray) -> FloatArray:
        if self.psi is None:
            raise ContractError(f'{self.name} has a trained obstacle, not a fixed one')
        return self.psi(SpatialJet.coordinates(points, 0)).value.data


@dataclasses.dataclass(frozen=True)
class SampleBatch:
    """
    Collocation points with the data the losses read at them.

    ``psi`` and ``mask`` are jets of the requested order; they do not depend on any
    parameters, so the same batch serves every forward pass of an iteration.
    """

    points: FloatArray
    f: FloatArray
    y_d: FloatArray
    psi: Optional[SpatialJet]
    mask: SpatialJet
    order: int

    def __len__(self) -> int:
        return self.points.shape[0]


def make_batch(problem: ProblemSpec, points: FloatArray, order: Optional[int] = None) -> SampleBatch:
    order = problem.jet_order if order is None else order
    points = np.asarray(points, dtype=np.float64)
    coords = SpatialJet.coordinates(points, order)
    psi = None if problem.psi is None else problem.psi(coords)
    return SampleBatch(
        points=points,
        f=problem.f(points),
        y_d=problem.y_d(points),
        psi=psi,
        mask=problem.domain.mask(coords),
        order=order,
    )


def sample_uniform(
    problem: ProblemSpec, m: int, rng: np.random.Generator, order: Optional[int] = None
) -> SampleBatch:
    """``m`` i.i.d. points uniform on the problem's domain, with cached data."""
    return make_batch(problem, problem.domain.sample_interior(m, rng), order)


# integrands


def _values(field: Any) -> Tensor:
    return field.value if isinstance(field, SpatialJet) else as_tensor(field)


def upper_integrand(y_hat: Any, u_hat: Any, y_d: Any, problem: ProblemSpec) -> Tensor:
    """
    ``1/2 |y - y_d|^2 + sigma/2 |u|^2``, or ``sigma/2 |grad u|^2`` for the seminorm cost.

    Raises
    ------
    ContractError
        The seminorm cost was requested for a control without first partials.
    """
    misfit = _values(y_hat) - y_d
    if problem.control_cost == 'l2':
        cost = _values(u_hat).square()
    else:
        if not isinstance(u_hat, SpatialJet) or u_hat.grad_x is None:
            raise ContractError('The H1-seminorm control cost needs a control jet with first partials')
        cost = u_hat.grad_norm_squared()
    return 0.5 * misfit.square() + (0.5 * problem.sigma) * cost


def lower_integrand_energy(y_jet: SpatialJet, u_hat: Any, f: Any) -> Tensor:
    """``1/2 |grad y|^2 - (f + u) y``."""
    if y_jet.grad_x is None:
        raise ContractError('The energy integrand needs a state jet with first partials')
    return 0.5 * y_jet.grad_norm_squared() - (_values(u_hat) + f) * y_jet.value


def lower_integrand_evi(
    y_jet: SpatialJet,
    u_hat: Any,
    f: Any,
    psi: Any,
    loss: EviResidualLoss,
    side: str = 'lower',
) -> Tensor:
    """
    Fixed-point residual ``scale * |P(y - tau A y + tau (f + u)) - y|^2``.

    ``P`` is ``max(., psi)`` for a lower obstacle and ``min(., psi)`` for an upper one;
    ``psi`` is the obstacle's values at the batch points.

    Raises
    ------
    ContractError
        The state jet carries no second partials.
    """
    if y_jet.laplacian_terms is None:
        raise ContractError('The EVI residual needs a state jet with second partials (order 2)')

    y = y_jet.value
    a_y = -y_jet.laplacian()
    for axis, coefficient in enumerate(loss.convection):
        if coefficient:
            a_y = a_y + coefficient * y_jet.partial(axis)

    step = y - loss.tau * a_y + loss.tau * (_values(u_hat) + f)
    projected = step.maximum(psi) if side == 'lower' else step.minimum(psi)
    return loss.scale * (projected - y).square()


# example 1: known solution with a bi-active set


def _cubic(t: FloatArray) -> FloatArray:
    return t**3 - t**2 + 0.25 * t


def _cubic_dd(t: FloatArray) -> FloatArray:
    return 6.0 * t - 2.0


def _example1_quadrant(points: FloatArray) -> np.ndarray:
    return np.all((points > 0.0) & (points < 0.5), axis=-1)


def example1_state(points: FloatArray) -> FloatArray:
    """``y = 3200 g(x1) g(x2)`` on ``(0, 1/2)^2`` and 0 elsewhere, ``g(t) = t^3 - t^2 + t/4``."""
    x1, x2 = points[..., 0], points[..., 1]
    return np.where(_example1_quadrant(points), 3200.0 * _cubic(x1) * _cubic(x2), 0.0)


def example1_state_laplacian(points: FloatArray) -> FloatArray:
    x1, x2 = points[..., 0], points[..., 1]
    inside = 3200.0 * (_cubic_dd(x1) * _cubic(x2) + _cubic(x1) * _cubic_dd(x2))
    return np.where(_example1_quadrant(points), inside, 0.0)


def example1_multiplier(points: FloatArray) -> FloatArray:
    """``max(0, -2|x1 - 0.8| - 2|x1 x2 - 0.3| + 0.5)``."""
    x1, x2 = points[..., 0], points[..., 1]
    return np.maximum(0.0, -2.0 * np.abs(x1 - 0.8) - 2.0 * np.abs(x1 * x2 - 0.3) + 0.5)


def _example1_source(points: FloatArray) -> FloatArray:
    return -example1_state_laplacian(points) - example1_state(points) - example1_multiplier(points)


def _example1_target(points: FloatArray) -> FloatArray:
    return example1_state(points) + example1_multiplier(points) - example1_state_laplacian(points)


def _zero_obstacle(coords: Sequence[SpatialJet]) -> SpatialJet:
    return coords[0] * 0.0


def _constant(value: float) -> FieldFn:
    def field(points: FloatArray) -> FloatArray:
        return np.full(points.shape[0], value)

    return field


def _example1() -> ProblemSpec:
    return ProblemSpec(
        name='example1',
        domain=UnitSquare(),
        sigma=1.0,
        f=_example1_source,
        y_d=_example1_target,
        psi=_zero_obstacle,
        defaults=ExampleDefaults(gamma=20.0, c0=5.0, c_exp=0.3, iterations=20000),
        exact_state=example1_state,
        exact_control=example1_state,
    )


def _example1_box() -> ProblemSpec:
    # the unconstrained optimum exceeds 0.7, so no analytic reference
    return dataclasses.replace(
        _example1(),
        name='example1_box',
        control_embedding='control_clamp',
        control_bounds=(0.0, 0.7),
        exact_state=None,
        exact_control=None,
    )


def _example2_data(points: FloatArray) -> FloatArray:
    return -5.0 * np.abs(points[..., 0] * points[..., 1] - 0.5) + 1.25


def _example2() -> ProblemSpec:
    return ProblemSpec(
        name='example2',
        domain=UnitSquare(),
        sigma=0.02,
        f=_example2_data,
        y_d=_example2_data,
        psi=_zero_obstacle,
        defaults=ExampleDefaults(gamma=500.0, c0=5.0, c_exp=0.3, iterations=20000),
    )


def _example3() -> ProblemSpec:
    domain = StarDomain()

    def obstacle(coords: Sequence[SpatialJet]) -> SpatialJet:
        return domain.mask(coords) * 3.0

    return ProblemSpec(
        name='example3',
        domain=domain,
        sigma=1.0,
        f=_constant(2.0),
        y_d=_constant(2.0),
        psi=obstacle,
        defaults=ExampleDefaults(gamma=50.0, c0=5.0, c_exp=0.2, iterations=20000),
        state_embedding='state_relu',
    )


def _example4_source(points: FloatArray) -> FloatArray:
    x2 = points[..., 1]
    return np.where((x2 > 0.25) & (x2 < 0.65), -100.0, 150.0)


def _example4() -> ProblemSpec:
    return ProblemSpec(
        name='example4',
        domain=UnitSquare(),
        sigma=0.5,
        f=_example4_source,
        y_d=_constant(5.0),
        psi=None,
        defaults=ExampleDefaults(gamma=50.0, c0=0.2, c_exp=0.2, iterations=10000),
        obstacle_side='upper',
        state_embedding='state_below_obstacle',
        control_embedding='obstacle_raw',
        control_cost='h1_seminorm',
    )


def _example5_source(points: FloatArray) -> FloatArray:
    return 10.0 * (np.sin(2.0 * np.pi * points[..., 1]) + points[..., 0])


def _example5_target(points: FloatArray) -> FloatArray:
    x1, x2 = points[..., 0], points[..., 1]
    return x1 * (1.0 - x1) * x2 * (1.0 - x2)


def _example5(tau: float = 0.01) -> ProblemSpec:
    return ProblemSpec(
        name='example5',
        domain=UnitSquare(),
        sigma=0.01,
        f=_example5_source,
        y_d=_example5_target,
        psi=_zero_obstacle,
        defaults=ExampleDefaults(gamma=200000.0, c0=5.0, c_exp=0.3, iterations=20000, learning_rate=2e-4),
        lower_loss=EviResidualLoss(tau=tau),
    )


EXAMPLES: Dict[str, Callable[..., ProblemSpec]] = {
    'example1': _example1,
    'example1_box': _example1_box,
    'example2': _example2,
    'example3': _example3,
    'example4': _example4,
    'example5': _example5,
}


def catalog(example_id: str, **options: Any) -> ProblemSpec:
    """
    Look up a problem by id.

    Parameters
    ----------
    example_id: :class:`str`
        One of :data:`EXAMPLES`.
    **options
        Per-example knobs; only ``example5`` takes one, ``tau``.

    Raises
    ------
    InputError
        Unknown id or option.
    """
    try:
        factory = EXAMPLES[example_id]
    except KeyError:
        raise InputError(f'Unknown example {example_id!r}, expected one of {sorted(EXAMPLES)}') from None

    try:
        problem = factory(**options)
    except TypeError:
        raise InputError(f'{example_id} does not accept options {sorted(options)}') from None

    _log.debug('loaded %s on %r', problem.name, problem.domain)
    return problem
