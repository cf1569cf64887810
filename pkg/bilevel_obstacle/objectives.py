from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING, Any, Iterable, Optional, Protocol, Tuple

import numpy as np

from .autodiff import SpatialJet, Tensor
from .networks import NetworkSpec, apply_control_embedding, apply_state_embedding, forward_jet, init_xavier
from .problems import (
    ProblemSpec,
    lower_integrand_energy,
    lower_integrand_evi,
    sample_uniform,
    upper_integrand,
)

if TYPE_CHECKING:
    from ._types import FloatArray
    from .problems import SampleBatch


__all__ = ('GradientEstimate', 'BilevelObjective', 'NeuralObjective', 'FieldValues')


@dataclasses.dataclass(frozen=True)
class GradientEstimate:
    """
    Monte Carlo estimates at one ``(theta_y, theta_u)`` on one batch.

    Both loss values are always reported; each gradient is ``None`` unless it was requested.
    """

    upper: float
    lower: float
    grad_y: Optional[FloatArray] = None
    grad_u: Optional[FloatArray] = None


class BilevelObjective(Protocol):
    """
    What the training loops need from a problem: initial parameters, batches and
    gradient oracles of ``upper_weight * j + lower_weight * e``.
    """

    def initial_params(self, seed: int) -> Tuple[FloatArray, FloatArray]:
        ...

    def sample(self, rng: np.random.Generator, m: int) -> Any:
        ...

    def evaluate(
        self,
        theta_y: FloatArray,
        theta_u: FloatArray,
        batch: Any,
        *,
        upper_weight: float = 1.0,
        lower_weight: float = 1.0,
        wrt: Iterable[str] = (),
    ) -> GradientEstimate:
        ...


@dataclasses.dataclass(frozen=True)
class FieldValues:
    """Network fields on a batch: the state, the control and the obstacle the state sees."""

    state: SpatialJet
    control: SpatialJet
    obstacle: Optional[SpatialJet]


class NeuralObjective:
    """
    Monte Carlo upper and lower losses of a problem, with the state and the control
    represented by two residual networks.

    Parameters
    ----------
    problem: :class:`ProblemSpec`
        The control problem.
    state_net: :class:`NetworkSpec`
        Architecture of the state network.
    control_net: :class:`NetworkSpec`
        Architecture of the control (or obstacle) network.
    """

    def __init__(self, problem: ProblemSpec, state_net: NetworkSpec, control_net: NetworkSpec):
        self.problem = problem
        self.state_net = dataclasses.replace(state_net, embedding=problem.state_embedding)
        self.control_net = dataclasses.replace(control_net, embedding=problem.control_embedding)

    def __repr__(self) -> str:
        return (
            f'NeuralObjective(problem={self.problem.name!r}, '
            f'state_net={self.state_net}, control_net={self.control_net})'
        )

    @property
    def control_order(self) -> int:
        # the control jet only needs derivatives when they enter a loss
        if self.problem.obstacle_is_control or self.problem.control_cost == 'h1_seminorm':
            return 1
        return 0

    def initial_params(self, seed: int) -> Tuple[FloatArray, FloatArray]:
        state = init_xavier(dataclasses.replace(self.state_net, seed=seed))
        control = init_xavier(dataclasses.replace(self.control_net, seed=seed + 1))
        return state, control

    def sample(self, rng: np.random.Generator, m: int) -> SampleBatch:
        return sample_uniform(self.problem, m, rng)

    def fields(self, theta_y: Any, theta_u: Any, batch: SampleBatch) -> FieldValues:
        """Embedded state and control jets at the batch points."""
        problem = self.problem
        control_order = min(batch.order, self.control_order)

        raw_u = forward_jet(self.control_net, theta_u, SpatialJet.inputs(batch.points, control_order))
        control = apply_control_embedding(
            self.control_net.embedding, raw_u, bounds=problem.control_bounds, mask=batch.mask
        )

        raw_y = forward_jet(self.state_net, theta_y, SpatialJet.inputs(batch.points, batch.order))
        obstacle = control if problem.obstacle_is_control else batch.psi
        state = apply_state_embedding(self.state_net.embedding, raw_y, obstacle, batch.mask)
        return FieldValues(state=state, control=control, obstacle=obstacle)

    def losses(self, fields: FieldValues, batch: SampleBatch) -> Tuple[Tensor, Tensor]:
        """Batch means of the upper and lower integrands."""
        problem = self.problem
        source = 0.0 if problem.obstacle_is_control else fields.control.value

        if problem.lower_loss.kind == 'energy':
            lower = lower_integrand_energy(fields.state, source, batch.f)
        else:
            psi = fields.obstacle.value.data if fields.obstacle is not None else 0.0
            lower = lower_integrand_evi(
                fields.state, source, batch.f, psi, problem.lower_loss, side=problem.obstacle_side
            )

        upper_loss = upper_integrand(fields.state, fields.control, batch.y_d, problem).mean()
        return upper_loss, lower.mean()

    def evaluate(
        self,
        theta_y: FloatArray,
        theta_u: FloatArray,
        batch: SampleBatch,
        *,
        upper_weight: float = 1.0,
        lower_weight: float = 1.0,
        wrt: Iterable[str] = (),
    ) -> GradientEstimate:
        wrt = tuple(wrt)
        leaf_y = Tensor(theta_y, requires_grad='y' in wrt)
        leaf_u = Tensor(theta_u, requires_grad='u' in wrt)

        fields = self.fields(leaf_y, leaf_u, batch)
        upper, lower = self.losses(fields, batch)

        total = lower * lower_weight
        if upper_weight:
            total = total + upper * upper_weight
        if wrt:
            total.backward()

        def grad(leaf: Tensor, name: str) -> Optional[FloatArray]:
            if name not in wrt:
                return None
            return np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad

        return GradientEstimate(
            upper=upper.item(),
            lower=lower.item(),
            grad_y=grad(leaf_y, 'y'),
            grad_u=grad(leaf_u, 'u'),
        )
