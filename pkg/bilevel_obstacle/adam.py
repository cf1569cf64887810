from __future__ import annotations

import dataclasses
from typing import TYPE_CHECKING

import numpy as np

from .errors import InputError

if TYPE_CHECKING:
    from ._types import FloatArray


__all__ = ('AdamParams', 'Adam')


@dataclasses.dataclass(frozen=True)
class AdamParams:
    """Settings of the lower-level refinement run."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 5000
    batch_size: int = 512
    seed: int = 0
    log_every: int = 100
    divergence_bound: float = 1e6

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.eps <= 0:
            raise InputError(f'Adam needs lr > 0 and eps > 0, got lr={self.lr}, eps={self.eps}')
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InputError(f'Moment decays must lie in [0, 1), got {self.beta1}, {self.beta2}')
        if not self.divergence_bound > 0:
            raise InputError(f'Divergence bound must be positive, got {self.divergence_bound}')
        if self.iterations < 0 or self.batch_size < 1:
            raise InputError(f'Invalid budget: iterations={self.iterations}, batch_size={self.batch_size}')


class Adam:
    """
    Adam on one flat parameter vector.

    The step is ``lr / (1 - beta1^t) * m / (sqrt(v / (1 - beta2^t)) + eps)``; a zero
    gradient leaves both moments and the parameters untouched on the first step.
    """

    def __init__(self, params: AdamParams):
        self.params = params
        self.m: FloatArray = np.zeros(0)
        self.v: FloatArray = np.zeros(0)
        self.t = 0

    def step(self, theta: FloatArray, grad: FloatArray) -> FloatArray:
        """Return the updated parameters; ``theta`` itself is not modified."""
        p = self.params
        if self.t == 0:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1

        bc1 = 1.0 - p.beta1**self.t
        bc2 = 1.0 - p.beta2**self.t

        self.m = p.beta1 * self.m + (1.0 - p.beta1) * grad
        self.v = p.beta2 * self.v + (1.0 - p.beta2) * (grad * grad)

        denom = np.sqrt(self.v / bc2) + p.eps
        return theta - (p.lr / bc1) * self.m / denom
