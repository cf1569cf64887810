from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING, Any, Iterable, Optional, Tuple

import numpy as np

from .errors import InputError
from .objectives import GradientEstimate

if TYPE_CHECKING:
    from ._types import FloatArray


__all__ = ('FixtureBatch', 'QuadraticFixture', 'quadratic_fixture')


@dataclasses.dataclass(frozen=True)
class FixtureBatch:
    """Stands in for a sample batch; only carries the generator of the gradient noise."""

    noise_rng: Optional[np.random.Generator] = None


class QuadraticFixture:
    """
    A bilevel problem with every envelope quantity in closed form.

    .. code:: py

        e(y, u) = 1/2 |y - M u|^2
        j(y, u) = 1/2 |y - a|^2 + 1/2 |u|^2

    For proximal parameter ``gamma`` the proximal point is ``(gamma M u + y) / (1 + gamma)``
    and the Moreau envelope is ``|y - M u|^2 / (2 (1 + gamma))``. ``e`` is convex in ``y``
    (weak-convexity modulus 0) with a 1-Lipschitz gradient.

    Parameters
    ----------
    matrix: :class:`numpy.ndarray`
        ``M``, of shape ``(dim_y, dim_u)``.
    target: :class:`numpy.ndarray`
        ``a``, of length ``dim_y``.
    noise: :class:`float`
        Standard deviation of Gaussian noise added to every gradient oracle. With 0 the
        oracles are exact (full batch).
    """

    weak_convexity = 0.0
    lower_lipschitz = 1.0

    def __init__(self, matrix: Any, target: Any, noise: float = 0.0):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (matrix.shape[0],):
            raise InputError(f'Target of shape {target.shape} does not match matrix of shape {matrix.shape}')
        if noise < 0:
            raise InputError(f'Noise level must be non-negative, got {noise}')

        self.matrix = matrix
        self.target = target
        self.noise = float(noise)

    def __repr__(self) -> str:
        return f'QuadraticFixture(dim_y={self.dim_y}, dim_u={self.dim_u}, noise={self.noise})'

    @property
    def dim_y(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim_u(self) -> int:
        return self.matrix.shape[1]

    # oracle interface

    def initial_params(self, seed: int) -> Tuple[FloatArray, FloatArray]:
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.dim_y), rng.standard_normal(self.dim_u)

    def sample(self, rng: np.random.Generator, m: int) -> FixtureBatch:
        return FixtureBatch(rng if self.noise > 0 else None)

    def residual(self, theta_y: FloatArray, theta_u: FloatArray) -> FloatArray:
        return theta_y - self.matrix @ theta_u

    def upper(self, theta_y: FloatArray, theta_u: FloatArray) -> float:
        return 0.5 * float(np.sum((theta_y - self.target) ** 2) + np.sum(theta_u**2))

    def lower(self, theta_y: FloatArray, theta_u: FloatArray) -> float:
        return 0.5 * float(np.sum(self.residual(theta_y, theta_u) ** 2))

    def lower_grad(self, theta_y: FloatArray, theta_u: FloatArray) -> Tuple[FloatArray, FloatArray]:
        r = self.residual(theta_y, theta_u)
        return r, -self.matrix.T @ r

    def evaluate(
        self,
        theta_y: FloatArray,
        theta_u: FloatArray,
        batch: FixtureBatch,
        *,
        upper_weight: float = 1.0,
        lower_weight: float = 1.0,
        wrt: Iterable[str] = (),
    ) -> GradientEstimate:
        wrt = tuple(wrt)
        e_y, e_u = self.lower_grad(theta_y, theta_u)
        grads = {
            'y': upper_weight * (theta_y - self.target) + lower_weight * e_y,
            'u': upper_weight * theta_u + lower_weight * e_u,
        }
        if batch.noise_rng is not None:
            for name in wrt:
                grads[name] = grads[name] + self.noise * batch.noise_rng.standard_normal(grads[name].shape)

        return GradientEstimate(
            upper=self.upper(theta_y, theta_u),
            lower=self.lower(theta_y, theta_u),
            grad_y=grads['y'] if 'y' in wrt else None,
            grad_u=grads['u'] if 'u' in wrt else None,
        )

    # closed forms

    def prox_point(self, theta_y: FloatArray, theta_u: FloatArray, gamma: float) -> FloatArray:
        return (gamma * (self.matrix @ theta_u) + theta_y) / (1.0 + gamma)

    def envelope(self, theta_y: FloatArray, theta_u: FloatArray, gamma: float) -> float:
        return float(np.sum(self.residual(theta_y, theta_u) ** 2)) / (2.0 * (1.0 + gamma))

    def envelope_gradient(
        self, theta_y: FloatArray, theta_u: FloatArray, gamma: float
    ) -> Tuple[FloatArray, FloatArray]:
        """``((y - z*) / gamma, grad_u e(z*, u))`` with ``z*`` the proximal point."""
        z = self.prox_point(theta_y, theta_u, gamma)
        _, grad_u = self.lower_grad(z, theta_u)
        return (theta_y - z) / gamma, grad_u

    def penalty(self, theta_y: FloatArray, theta_u: FloatArray, gamma: float, c: float) -> float:
        """``j / c + e - e_gamma``; the lower bound of ``j`` is 0."""
        return (
            self.upper(theta_y, theta_u) / c
            + self.lower(theta_y, theta_u)
            - self.envelope(theta_y, theta_u, gamma)
        )

    def penalty_gradient(
        self, theta_y: FloatArray, theta_u: FloatArray, gamma: float, c: float
    ) -> Tuple[FloatArray, FloatArray]:
        e_y, e_u = self.lower_grad(theta_y, theta_u)
        env_y, env_u = self.envelope_gradient(theta_y, theta_u, gamma)
        return (
            (theta_y - self.target) / c + e_y - env_y,
            theta_u / c + e_u - env_u,
        )

    def penalty_minimizer(self, gamma: float, c: float) -> Tuple[FloatArray, FloatArray]:
        """The unique stationary point of the penalty for fixed ``gamma`` and ``c``."""
        dim_y, dim_u = self.dim_y, self.dim_u
        coupling = np.hstack([np.eye(dim_y), -self.matrix])
        hessian = np.eye(dim_y + dim_u) / c + (gamma / (1.0 + gamma)) * coupling.T @ coupling
        rhs = np.concatenate([self.target / c, np.zeros(dim_u)])
        theta = np.linalg.solve(hessian, rhs)
        return theta[:dim_y], theta[dim_y:]


def quadratic_fixture(noise: float = 0.0, *, matrix: Any = None, target: Any = None) -> QuadraticFixture:
    """The default three-dimensional fixture used by the checks and tests."""
    if matrix is None:
        matrix = [[0.8, 0.2, 0.0], [-0.3, 0.6, 0.1], [0.0, 0.4, 0.5]]
    if target is None:
        target = [1.0, -0.5, 0.25]
    return QuadraticFixture(matrix, target, noise)
