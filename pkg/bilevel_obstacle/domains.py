from __future__ import annotations

import abc
from typing import TYPE_CHECKING, List, Sequence, Tuple

import numpy as np

from .autodiff import SpatialJet
from .errors import InputError, SolverError

if TYPE_CHECKING:
    from ._types import FloatArray


__all__ = ('Domain', 'UnitSquare', 'StarDomain')


class Domain(abc.ABC):
    """
    A bounded planar domain together with a smooth mask vanishing on its boundary.

    Subclasses provide membership, the mask as a jet function and boundary samples.
    """

    name: str
    dim: int = 2

    @property
    @abc.abstractmethod
    def bounding_box(self) -> Tuple[FloatArray, FloatArray]:
        raise NotImplementedError

    @abc.abstractmethod
    def contains(self, points: FloatArray) -> np.ndarray:
        """Boolean array, ``True`` for points strictly inside."""
        raise NotImplementedError

    @abc.abstractmethod
    def mask(self, coords: Sequence[SpatialJet]) -> SpatialJet:
        """The boundary mask ``m``: smooth, zero on the boundary, positive inside."""
        raise NotImplementedError

    @abc.abstractmethod
    def sample_boundary(self, n: int, rng: np.random.Generator) -> FloatArray:
        """``n`` points on the boundary."""
        raise NotImplementedError

    def mask_values(self, points: FloatArray) -> FloatArray:
        return self.mask(SpatialJet.coordinates(points, 0)).value.data

    def sample_interior(self, m: int, rng: np.random.Generator, *, max_rounds: int = 64) -> FloatArray:
        """
        ``m`` points drawn uniformly from the domain by rejection from the bounding box.

        Raises
        ------
        InputError
            ``m`` is not positive.
        SolverError
            Fewer than ``m`` points were accepted after ``max_rounds`` proposal rounds.
        """
        if m < 1:
            raise InputError(f'Expected at least one sample point, got m={m}')

        low, high = self.bounding_box
        accepted: List[FloatArray] = []
        count = 0
        for _ in range(max_rounds):
            need = m - count
            proposals = rng.uniform(low, high, size=(max(2 * need, 64), self.dim))
            inside = proposals[self.contains(proposals)][:need]
            accepted.append(inside)
            count += inside.shape[0]
            if count == m:
                return np.concatenate(accepted)

        raise SolverError(
            f'Rejection sampling on {self.name} accepted {count} of {m} points in {max_rounds} rounds; '
            'the domain is degenerate relative to its bounding box'
        )


class UnitSquare(Domain):
    """The open unit square with mask ``x1 (1 - x1) x2 (1 - x2)``."""

    name = 'unit_square'

    def __repr__(self) -> str:
        return 'UnitSquare()'

    @property
    def bounding_box(self) -> Tuple[FloatArray, FloatArray]:
        return np.zeros(2), np.ones(2)

    def contains(self, points: FloatArray) -> np.ndarray:
        return np.all((points > 0.0) & (points < 1.0), axis=-1)

    def mask(self, coords: Sequence[SpatialJet]) -> SpatialJet:
        x1, x2 = coords
        return x1 * (1.0 - x1) * x2 * (1.0 - x2)

    def sample_interior(self, m: int, rng: np.random.Generator, *, max_rounds: int = 64) -> FloatArray:
        if m < 1:
            raise InputError(f'Expected at least one sample point, got m={m}')
        # half-open [tiny, 1) excludes both edges
        return rng.uniform(np.nextafter(0.0, 1.0), 1.0, size=(m, 2))

    def sample_boundary(self, n: int, rng: np.random.Generator) -> FloatArray:
        side = rng.integers(0, 4, size=n)
        t = rng.uniform(0.0, 1.0, size=n)
        points = np.empty((n, 2))
        points[:, 0] = np.select([side == 0, side == 1, side == 2], [t, 1.0, t], default=0.0)
        points[:, 1] = np.select([side == 0, side == 1, side == 2], [0.0, t, 1.0], default=t)
        return points


class StarDomain(Domain):
    """
    Star-shaped domain ``{(r, zeta) : r < rho(zeta)}`` in polar coordinates with

    .. code:: py

        rho(zeta) = base + sum(amp * trig(k * zeta) for amp, trig, k in terms)

    and mask ``1 - (r / rho(zeta))^2``.

    The mask is evaluated without any angle: ``cos(k zeta)`` and ``sin(k zeta)`` follow from
    ``x / r`` and ``y / r`` by the angle-addition recursion, so it stays a composition of
    differentiable jet primitives.
    """

    name = 'star'

    def __init__(
        self,
        base: float = 2.25,
        terms: Sequence[Tuple[float, str, int]] = ((0.21, 'sin', 4), (0.18, 'cos', 6), (0.135, 'cos', 5)),
    ):
        for _, trig, k in terms:
            if trig not in ('sin', 'cos') or k < 1:
                raise InputError(f'Invalid radius term ({trig!r}, {k})')
        self.base = float(base)
        self.terms = tuple((float(amp), trig, int(k)) for amp, trig, k in terms)

    def __repr__(self) -> str:
        return f'StarDomain(base={self.base}, terms={self.terms})'

    @property
    def max_radius(self) -> float:
        return abs(self.base) + sum(abs(amp) for amp, _, _ in self.terms)

    @property
    def bounding_box(self) -> Tuple[FloatArray, FloatArray]:
        r = self.max_radius
        return np.full(2, -r), np.full(2, r)

    def radius(self, zeta: FloatArray) -> FloatArray:
        rho = np.full(np.shape(zeta), self.base)
        for amp, trig, k in self.terms:
            rho = rho + amp * (np.sin(k * zeta) if trig == 'sin' else np.cos(k * zeta))
        return rho

    def contains(self, points: FloatArray) -> np.ndarray:
        r = np.hypot(points[..., 0], points[..., 1])
        zeta = np.arctan2(points[..., 1], points[..., 0])
        return r < self.radius(zeta)

    def _radius_jet(self, cos1: SpatialJet, sin1: SpatialJet) -> SpatialJet:
        top = max((k for _, _, k in self.terms), default=1)
        cos_k, sin_k = [None, cos1], [None, sin1]
        for k in range(2, top + 1):
            cos_k.append(cos_k[k - 1] * cos1 - sin_k[k - 1] * sin1)
            sin_k.append(sin_k[k - 1] * cos1 + cos_k[k - 1] * sin1)

        rho = None
        for amp, trig, k in self.terms:
            term = (sin_k[k] if trig == 'sin' else cos_k[k]) * amp
            rho = term if rho is None else rho + term
        return (cos1 * 0.0 if rho is None else rho) + self.base

    def mask(self, coords: Sequence[SpatialJet]) -> SpatialJet:
        x1, x2 = coords
        r2 = x1.square() + x2.square()
        # any finite direction at the origin; r2 = 0 there makes the mask exactly 1
        origin = (r2.value.data == 0.0).astype(np.float64)
        inv_r = (r2 + origin).sqrt().reciprocal()
        rho = self._radius_jet(x1 * inv_r, x2 * inv_r)
        return 1.0 - r2 * rho.reciprocal().square()

    def sample_boundary(self, n: int, rng: np.random.Generator) -> FloatArray:
        zeta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        rho = self.radius(zeta)
        return np.stack([rho * np.cos(zeta), rho * np.sin(zeta)], axis=-1)
