"""Self-checks of the bilevel machinery on the quadratic fixture, where everything is known in closed form."""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple

import numpy as np

from .fixture import FixtureBatch, QuadraticFixture, quadratic_fixture
from .optimizer import HyperParams, TrainState, merit_diagnostics, proximal_step, s2foba_step

if TYPE_CHECKING:
    from typing_extensions import TypeAlias

    from ._types import FloatArray


__all__ = (
    'CheckResult',
    'check_envelope_gradient',
    'check_contraction',
    'check_merit_descent',
    'run_fixture_checks',
)

_log = logging.getLogger(__name__)

EnvelopeGradient: TypeAlias = Callable[['FloatArray', 'FloatArray', float], Tuple['FloatArray', 'FloatArray']]


@dataclasses.dataclass(frozen=True)
class CheckResult:
    """Outcome of one check: the measured worst case against its threshold."""

    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ''

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _central_difference(func: Callable[[FloatArray], float], x: FloatArray, step: float) -> FloatArray:
    grad = np.empty_like(x)
    for i in range(x.size):
        shift = np.zeros_like(x)
        shift[i] = step
        grad[i] = (func(x + shift) - func(x - shift)) / (2.0 * step)
    return grad


def check_envelope_gradient(
    fixture: Optional[QuadraticFixture] = None,
    *,
    points: int = 100,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-8,
    grad_fn: Optional[EnvelopeGradient] = None,
) -> CheckResult:
    """
    Compare the envelope gradient ``((y - z*) / gamma, grad_u e(z*, u))`` with central
    differences of the closed-form envelope at random points and random ``gamma``.

    ``grad_fn`` replaces the gradient under test; it defaults to the fixture's own.
    """
    fixture = quadratic_fixture() if fixture is None else fixture
    grad_fn = fixture.envelope_gradient if grad_fn is None else grad_fn
    rng = np.random.default_rng(seed)
    dim_y = fixture.dim_y

    worst = 0.0
    for _ in range(points):
        theta_y, theta_u = rng.standard_normal(dim_y), rng.standard_normal(fixture.dim_u)
        gamma = float(rng.uniform(0.5, 20.0))

        def envelope(theta: FloatArray) -> float:
            return fixture.envelope(theta[:dim_y], theta[dim_y:], gamma)

        reference = _central_difference(envelope, np.concatenate([theta_y, theta_u]), step)
        grad_y, grad_u = grad_fn(theta_y, theta_u, gamma)
        difference = np.linalg.norm(np.concatenate([grad_y, grad_u]) - reference)
        error = difference / max(np.linalg.norm(reference), 1e-12)
        worst = max(worst, float(error))

    return CheckResult('envelope_gradient', worst < tolerance, worst, tolerance, f'{points} random points')


def check_contraction(
    fixture: Optional[QuadraticFixture] = None,
    *,
    gamma: float = 20.0,
    eta: float = 0.01,
    steps: int = 200,
    seed: int = 0,
) -> CheckResult:
    """
    Iterate the proximal step with ``theta`` fixed and measure ``|z_{k+1} - z*| / |z_k - z*|``.

    The bound is ``1 - eta (1/gamma - rho)`` plus ``1e-10``, valid for
    ``0 < eta < 2 / (L_e + 2/gamma - rho)``.
    """
    fixture = quadratic_fixture() if fixture is None else fixture
    rho = fixture.weak_convexity
    bound = 1.0 - eta * (1.0 / gamma - rho) + 1e-10

    rng = np.random.default_rng(seed)
    theta_y, theta_u = fixture.initial_params(seed)
    target = fixture.prox_point(theta_y, theta_u, gamma)
    z = target + rng.standard_normal(fixture.dim_y)
    batch = FixtureBatch()

    worst = 0.0
    for _ in range(steps):
        gap = np.linalg.norm(z - target)
        z = proximal_step(fixture, z, theta_y, theta_u, batch, eta, gamma)
        worst = max(worst, float(np.linalg.norm(z - target) / gap))

    detail = f'{steps} steps, gamma={gamma}, eta={eta}'
    return CheckResult('contraction', worst <= bound, worst, bound, detail)


def merit_check_params(steps: int = 5000) -> HyperParams:
    """Step sizes for which the fixture's merit provably decreases in the deterministic case."""
    return HyperParams(
        gamma=1.0,
        c0=2.0,
        c_exp=0.0,
        schedule='experimental',
        alpha0=0.002,
        beta0=0.002,
        eta0=0.3,
        batch_size=1,
        iterations=steps,
        log_every=max(steps, 1),
    )


def check_merit_descent(
    fixture: Optional[QuadraticFixture] = None,
    *,
    steps: int = 5000,
    burn_in: int = 10,
    tolerance: float = 1e-12,
) -> CheckResult:
    """
    Run the bilevel step with exact oracles and check that the merit
    ``phi_c + C_z |z - z*|^2`` never increases after ``burn_in`` steps.
    """
    fixture = quadratic_fixture() if fixture is None else fixture
    hp = merit_check_params(steps)
    theta_y, theta_u = fixture.initial_params(hp.seed)
    state = TrainState(theta_y=theta_y, theta_u=theta_u, z=theta_y.copy())
    probe = FixtureBatch()

    def merit(state: TrainState) -> float:
        record = merit_diagnostics(
            state,
            fixture,
            hp,
            probe,
            weak_convexity=fixture.weak_convexity,
            lower_lipschitz=fixture.lower_lipschitz,
        )
        assert record.merit is not None
        return record.merit

    previous = merit(state)
    worst = -np.inf
    for k in range(steps):
        state = s2foba_step(state, fixture, hp)
        current = merit(state)
        if k >= burn_in:
            worst = max(worst, (current - previous) / max(1.0, abs(previous)))
        previous = current

    return CheckResult(
        'merit_descent', worst <= tolerance, float(worst), tolerance, f'{steps} steps after {burn_in} burn-in'
    )


def run_fixture_checks(*, grad_fn: Optional[EnvelopeGradient] = None) -> List[CheckResult]:
    """Run every fixture check; ``grad_fn`` swaps the envelope gradient under test."""
    fixture = quadratic_fixture()
    results = [
        check_envelope_gradient(fixture, grad_fn=grad_fn),
        check_contraction(fixture),
        check_merit_descent(fixture),
    ]
    for result in results:
        log = _log.info if result.passed else _log.error
        status = 'ok' if result.passed else 'FAILED'
        log('%s: %s (%.3e vs %.3e)', result.name, status, result.value, result.threshold)
    return results
