"""
Finite-difference grid oracles on the unit square.

Nodes are ``(i/N, j/N)``; a :class:`GridField` holds the ``(N-1)^2`` interior values in
row-major order with ``x1`` as the slow index, i.e. node ``(i, j)`` sits at position
``(i-1)(N-1) + (j-1)``. Boundary values are zero.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING, NamedTuple, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import trapezoid

from .domains import UnitSquare
from .errors import ContractError, InputError, SolverError

if TYPE_CHECKING:
    from ._types import FieldFn, FloatArray
    from .problems import ProblemSpec


__all__ = (
    'GridField',
    'GridOperator',
    'PdasResult',
    'RecoveredObjective',
    'interior_points',
    'grid_points',
    'laplacian_matrix',
    'convection_diffusion_matrix',
    'operator_for',
    'poisson_solve',
    'pdas_solve',
    'grid_integral',
    'recovered_objective',
)

_log = logging.getLogger(__name__)

# largest N solved by sparse LU; Krylov methods above
DIRECT_SOLVE_MAX_N = 256


def interior_points(N: int) -> FloatArray:
    """Interior nodes ``(N-1)^2 x 2`` in :class:`GridField` order."""
    t = np.arange(1, N) / N
    x1, x2 = np.meshgrid(t, t, indexing='ij')
    return np.column_stack([x1.ravel(), x2.ravel()])


def grid_points(N: int) -> FloatArray:
    """All ``(N+1)^2`` nodes, boundary included, row-major with ``x1`` slow."""
    t = np.arange(N + 1) / N
    x1, x2 = np.meshgrid(t, t, indexing='ij')
    return np.column_stack([x1.ravel(), x2.ravel()])


@dataclasses.dataclass(frozen=True)
class GridField:
    """
    Interior nodal values of a field with zero Dirichlet data.

    Attributes
    ----------
    N: :class:`int`
        Resolution; the mesh width is ``1/N``.
    values: :class:`numpy.ndarray`
        ``(N-1)^2`` interior values.
    """

    N: int
    values: FloatArray

    def __post_init__(self) -> None:
        if self.N < 1:
            raise InputError(f'Grid resolution must be at least 1, got {self.N}')
        if np.shape(self.values) != ((self.N - 1) ** 2,):
            raise InputError(
                f'A grid with N={self.N} has {(self.N - 1) ** 2} interior nodes, got {np.shape(self.values)}'
            )

    @classmethod
    def from_function(cls, func: FieldFn, N: int) -> GridField:
        return cls(N, np.asarray(func(interior_points(N)), dtype=np.float64))

    @classmethod
    def constant(cls, value: float, N: int) -> GridField:
        return cls(N, np.full((N - 1) ** 2, float(value)))

    @property
    def h(self) -> float:
        return 1.0 / self.N

    def points(self) -> FloatArray:
        return interior_points(self.N)

    def padded(self) -> FloatArray:
        """``(N+1, N+1)`` array of all nodes with the zero boundary filled in."""
        full = np.zeros((self.N + 1, self.N + 1))
        full[1:-1, 1:-1] = self.values.reshape(self.N - 1, self.N - 1)
        return full


@dataclasses.dataclass(frozen=True)
class GridOperator:
    """A discrete elliptic operator on the interior nodes, with a flag picking the Krylov method."""

    matrix: sp.csr_matrix
    symmetric: bool
    N: int


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n), format='csr') / h**2


def laplacian_matrix(N: int) -> GridOperator:
    """The 5-point ``-Laplace`` with zero Dirichlet data, as a Kronecker sum."""
    n = N - 1
    second = _second_difference(n, 1.0 / N)
    eye = sp.identity(n, format='csr')
    return GridOperator(sp.csr_matrix(sp.kron(second, eye) + sp.kron(eye, second)), symmetric=True, N=N)


def convection_diffusion_matrix(N: int, convection: Tuple[float, float]) -> GridOperator:
    """``-Laplace + b . grad`` with central differences for the convection term."""
    n = N - 1
    h = 1.0 / N
    central = sp.diags([-1.0, 1.0], [-1, 1], shape=(n, n), format='csr') / (2.0 * h)
    eye = sp.identity(n, format='csr')
    matrix = laplacian_matrix(N).matrix
    matrix = matrix + convection[0] * sp.kron(central, eye) + convection[1] * sp.kron(eye, central)
    return GridOperator(sp.csr_matrix(matrix), symmetric=not any(convection), N=N)


def operator_for(problem: ProblemSpec, N: int) -> GridOperator:
    """
    The grid operator of a problem's lower level.

    Raises
    ------
    ContractError
        The problem does not live on the unit square.
    """
    if not isinstance(problem.domain, UnitSquare):
        raise ContractError(
            f'{problem.name} is posed on {problem.domain!r}; grid oracles need the unit square'
        )
    loss = problem.lower_loss
    if loss.kind == 'evi_residual':
        return convection_diffusion_matrix(N, loss.convection)
    return laplacian_matrix(N)


def _jacobi(matrix: sp.csr_matrix) -> spla.LinearOperator:
    inverse_diagonal = 1.0 / matrix.diagonal()
    return spla.LinearOperator(matrix.shape, matvec=lambda v: inverse_diagonal * v)


def _solve(matrix: sp.csr_matrix, rhs: FloatArray, N: int, symmetric: bool) -> FloatArray:
    if rhs.size == 0:
        return np.zeros(0)

    if N <= DIRECT_SOLVE_MAX_N:
        solution = spla.spsolve(matrix.tocsc(), rhs)
    else:
        krylov = spla.cg if symmetric else spla.bicgstab
        solution, info = krylov(matrix, rhs, rtol=1e-12, atol=0.0, maxiter=20 * rhs.size, M=_jacobi(matrix))
        if info != 0:
            raise SolverError(f'{krylov.__name__} stopped with info={info} on a system of size {rhs.size}')

    solution = np.asarray(solution, dtype=np.float64)
    if not np.all(np.isfinite(solution)):
        raise SolverError(f'Linear solve broke down on a system of size {rhs.size}')
    return solution


def _matching(*fields: GridField) -> int:
    sizes = {field.N for field in fields}
    if len(sizes) != 1:
        raise InputError(f'Grid fields have different resolutions {sorted(sizes)}')
    return sizes.pop()


def poisson_solve(rhs: GridField) -> GridField:
    """
    Solve ``-Laplace y = rhs`` with zero Dirichlet data on the 5-point stencil.

    Raises
    ------
    SolverError
        The linear solve broke down.
    """
    operator = laplacian_matrix(rhs.N)
    return GridField(rhs.N, _solve(operator.matrix, rhs.values, rhs.N, symmetric=True))


class PdasResult(NamedTuple):
    state: GridField
    multiplier: GridField
    iterations: int


def pdas_solve(
    psi: GridField,
    rhs: GridField,
    *,
    operator: Optional[GridOperator] = None,
    side: str = 'lower',
    c: float = 1.0,
    max_sweeps: int = 100,
) -> PdasResult:
    """
    Primal-dual active set method for the discrete obstacle problem.

    Finds ``y`` and ``lam`` with ``K y = rhs + lam``, ``y >= psi``, ``lam >= 0`` and
    ``lam (y - psi) = 0``. It starts from the unconstrained solve. Each sweep takes the
    active set ``{lam + c (psi - y) > 0}``, pins ``y = psi`` there and solves the reduced
    system on the rest. It stops once the active set repeats.

    Parameters
    ----------
    psi: :class:`GridField`
        The obstacle.
    rhs: :class:`GridField`
        Right-hand side, e.g. ``f + u``.
    operator: Optional[:class:`GridOperator`]
        ``K``; the 5-point Laplacian by default.
    side: :class:`str`
        ``lower`` for ``y >= psi``; ``upper`` for ``y <= psi``, solved on the reflected
        problem ``w = -y >= -psi``. The returned multiplier always satisfies
        ``K y = rhs + lam``, so it is nonpositive for an upper obstacle.
    c: :class:`float`
        Positive active-set constant.
    max_sweeps: :class:`int`
        Sweep budget.

    Returns
    -------
    :class:`PdasResult`
        State, multiplier and the number of sweeps.

    Raises
    ------
    InputError
        ``N < 4``, mismatched resolutions, or a bad ``side`` or ``c``.
    SolverError
        No termination within ``max_sweeps``, or a linear solve broke down.
    """
    N = _matching(psi, rhs)
    if N < 4:
        raise InputError(f'The active-set oracle needs N >= 4, got {N}')
    if side not in ('lower', 'upper'):
        raise InputError(f'side must be lower or upper, got {side!r}')
    if not c > 0:
        raise InputError(f'The active-set constant must be positive, got {c}')

    operator = laplacian_matrix(N) if operator is None else operator
    if operator.N != N:
        raise InputError(f'Operator is for N={operator.N}, fields are for N={N}')

    sign = 1.0 if side == 'lower' else -1.0
    obstacle = sign * psi.values
    load = sign * rhs.values
    matrix = operator.matrix

    y = _solve(matrix, load, N, operator.symmetric)
    lam = np.zeros_like(y)
    active = lam + c * (obstacle - y) > 0

    for sweep in range(1, max_sweeps + 1):
        inactive = np.flatnonzero(~active)
        pinned = np.flatnonzero(active)

        y = np.empty_like(load)
        y[pinned] = obstacle[pinned]
        reduced_rhs = load[inactive] - matrix[inactive][:, pinned] @ obstacle[pinned]
        y[inactive] = _solve(matrix[inactive][:, inactive], reduced_rhs, N, operator.symmetric)

        lam = np.zeros_like(y)
        lam[pinned] = matrix[pinned] @ y - load[pinned]

        next_active = lam + c * (obstacle - y) > 0
        _log.debug('pdas sweep %d at N=%d: %d active nodes', sweep, N, int(next_active.sum()))
        if np.array_equal(next_active, active):
            return PdasResult(GridField(N, sign * y), GridField(N, sign * lam), sweep)
        active = next_active

    residual = matrix @ y - load - lam
    raise SolverError(
        f'Active-set method did not terminate after {max_sweeps} sweeps at N={N}: '
        f'|K y - rhs - lam| = {np.linalg.norm(residual):.3e}, '
        f'min(y - psi) = {np.min(y - obstacle):.3e}, min(lam) = {np.min(lam):.3e}'
    )


def grid_integral(full: FloatArray, N: int) -> float:
    """Trapezoid rule over an ``(N+1, N+1)`` array of nodal values."""
    h = 1.0 / N
    return float(trapezoid(trapezoid(full, dx=h, axis=1), dx=h))


def _dirichlet_integral(full: FloatArray) -> float:
    # one forward difference per edge; the h^-2 of the quotient cancels the h^2 cell area
    return float(np.sum(np.diff(full, axis=0) ** 2) + np.sum(np.diff(full, axis=1) ** 2))


class RecoveredObjective(NamedTuple):
    objective: float
    energy: float
    state: GridField
    multiplier: GridField
    iterations: int


def recovered_objective(
    problem: ProblemSpec,
    control: FieldFn,
    N: int,
    *,
    max_sweeps: int = 100,
) -> RecoveredObjective:
    """
    Put the lower-level constraint back: solve for the grid state of a given control and
    evaluate the upper-level objective there.

    ``control`` is evaluated at all ``(N+1)^2`` nodes. For problems whose obstacle is the
    control, it is used as the obstacle (upper side, right-hand side ``f``); otherwise it is
    added to the source and the fixed obstacle is used. ``J`` and the lower energy
    ``1/2 |grad y|^2 - (f + u) y`` are integrated with the trapezoid rule on the full grid.

    Raises
    ------
    ContractError
        The problem is not posed on the unit square.
    SolverError
        The active-set method failed.
    """
    operator = operator_for(problem, N)
    nodes = grid_points(N)
    u_full = np.asarray(control(nodes), dtype=np.float64).reshape(N + 1, N + 1)
    u_interior = GridField(N, u_full[1:-1, 1:-1].ravel())
    f = GridField.from_function(problem.f, N)

    if problem.obstacle_is_control:
        psi, rhs, source = u_interior, f, f
    else:
        psi = GridField.from_function(problem.obstacle_values, N)
        rhs = GridField(N, f.values + u_interior.values)
        source = rhs

    state, multiplier, iterations = pdas_solve(
        psi, rhs, operator=operator, side=problem.obstacle_side, max_sweeps=max_sweeps
    )

    y_full = state.padded()
    y_d = np.asarray(problem.y_d(nodes), dtype=np.float64).reshape(N + 1, N + 1)
    tracking = 0.5 * grid_integral((y_full - y_d) ** 2, N)
    if problem.control_cost == 'l2':
        cost = grid_integral(u_full**2, N)
    else:
        cost = _dirichlet_integral(u_full)
    objective = tracking + 0.5 * problem.sigma * cost

    energy = 0.5 * _dirichlet_integral(y_full) - grid_integral(source.padded() * y_full, N)

    _log.info('recovered objective at N=%d: J=%.6e after %d sweeps', N, objective, iterations)
    return RecoveredObjective(objective, energy, state, multiplier, iterations)

