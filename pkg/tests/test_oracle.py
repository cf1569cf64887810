import numpy as np
import pytest

from bilevel_obstacle import (
    ContractError,
    GridField,
    InputError,
    SolverError,
    catalog,
    example1_multiplier,
    example1_state,
    grid_integral,
    grid_points,
    interior_points,
    laplacian_matrix,
    operator_for,
    pdas_solve,
    poisson_solve,
    recovered_objective,
)


def sine_mode(points):
    return np.sin(np.pi * points[:, 0]) * np.sin(np.pi * points[:, 1])


def poisson_error(N):
    rhs = GridField.from_function(lambda p: 2.0 * np.pi**2 * sine_mode(p), N)
    return np.max(np.abs(poisson_solve(rhs).values - sine_mode(interior_points(N))))


def test_interior_points_order():
    points = interior_points(4)
    assert points.shape == (9, 2)
    np.testing.assert_array_equal(points[0], [0.25, 0.25])
    np.testing.assert_array_equal(points[1], [0.25, 0.5])
    np.testing.assert_array_equal(points[3], [0.5, 0.25])
    assert grid_points(4).shape == (25, 2)


def test_padded_field_has_a_zero_boundary():
    field = GridField(4, np.arange(9.0))
    full = field.padded()
    assert full.shape == (5, 5)
    assert full[2, 3] == 5.0
    np.testing.assert_array_equal(full[0], 0.0)
    np.testing.assert_array_equal(full[:, -1], 0.0)

    with pytest.raises(InputError):
        GridField(4, np.zeros(8))


def test_poisson_solve_is_second_order():
    coarse, fine = poisson_error(16), poisson_error(32)
    assert fine < 1e-3
    assert 3.5 <= coarse / fine <= 4.5


def test_poisson_solve_is_linear():
    rng = np.random.default_rng(0)
    a, b = GridField(8, rng.standard_normal(49)), GridField(8, rng.standard_normal(49))
    combined = poisson_solve(GridField(8, 2.0 * a.values - b.values)).values
    expected = 2.0 * poisson_solve(a).values - poisson_solve(b).values
    np.testing.assert_allclose(combined, expected, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(poisson_solve(GridField.constant(0.0, 8)).values, 0.0)


def test_inactive_obstacle_gives_the_poisson_solution():
    rhs = GridField.from_function(lambda p: 10.0 * p[:, 0], 16)
    result = pdas_solve(GridField.constant(-1e6, 16), rhs)

    assert result.iterations == 1
    np.testing.assert_allclose(result.state.values, poisson_solve(rhs).values, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(result.multiplier.values, 0.0)


def test_trivial_obstacle_problem():
    zero = GridField.constant(0.0, 8)
    result = pdas_solve(zero, zero)
    np.testing.assert_array_equal(result.state.values, 0.0)
    np.testing.assert_array_equal(result.multiplier.values, 0.0)


def test_example1_obstacle_problem_satisfies_kkt():
    N = 32
    problem = catalog('example1')
    psi = GridField.from_function(problem.obstacle_values, N)
    rhs = GridField.from_function(lambda p: problem.f(p) + example1_state(p), N)
    state, multiplier, iterations = pdas_solve(psi, rhs)

    gap = state.values - psi.values
    assert iterations >= 1
    assert np.all(gap >= 0.0)
    assert np.all(multiplier.values >= 0.0)
    np.testing.assert_array_equal(gap * multiplier.values, 0.0)

    K = laplacian_matrix(N).matrix
    residual = K @ state.values - rhs.values - multiplier.values
    assert np.linalg.norm(residual) <= 1e-8 * (np.linalg.norm(K @ state.values) + np.linalg.norm(rhs.values))

    reference = example1_state(state.points())
    assert np.linalg.norm(state.values - reference) <= 0.05 * np.linalg.norm(reference)
    assert np.any(multiplier.values[example1_multiplier(state.points()) > 0.1] > 0.0)


def test_upper_obstacle_by_reflection():
    N = 16
    psi = GridField.constant(0.01, N)
    state, multiplier, _ = pdas_solve(psi, GridField.constant(100.0, N), side='upper')

    assert np.all(state.values <= psi.values)
    assert np.all(multiplier.values <= 0.0)
    assert np.any(multiplier.values < 0.0)


def test_convection_operator():
    problem = catalog('example5')
    N = 16
    operator = operator_for(problem, N)
    assert not operator.symmetric
    assert operator_for(catalog('example1'), N).symmetric

    result = pdas_solve(
        GridField.from_function(problem.obstacle_values, N),
        GridField.from_function(problem.f, N),
        operator=operator,
    )
    assert np.all(result.state.values >= 0.0)
    assert np.all(result.multiplier.values >= 0.0)


def test_pdas_input_errors():
    with pytest.raises(InputError):
        pdas_solve(GridField.constant(0.0, 3), GridField.constant(0.0, 3))
    with pytest.raises(InputError):
        pdas_solve(GridField.constant(0.0, 8), GridField.constant(0.0, 16))
    with pytest.raises(InputError):
        pdas_solve(GridField.constant(0.0, 8), GridField.constant(0.0, 8), side='both')
    with pytest.raises(InputError):
        pdas_solve(GridField.constant(0.0, 8), GridField.constant(0.0, 8), operator=laplacian_matrix(16))


def test_sweep_budget():
    psi, rhs = GridField.constant(0.5, 8), GridField.constant(0.0, 8)
    with pytest.raises(SolverError):
        pdas_solve(psi, rhs, max_sweeps=1)

    result = pdas_solve(psi, rhs)
    assert result.iterations > 1
    assert np.all(result.state.values >= 0.5)


def test_recovered_objective_of_the_zero_control():
    N = 16
    problem = catalog('example1')
    recovered = recovered_objective(problem, lambda p: np.zeros(p.shape[0]), N)

    state, _, _ = pdas_solve(GridField.constant(0.0, N), GridField.from_function(problem.f, N))
    y_d = problem.y_d(grid_points(N)).reshape(N + 1, N + 1)
    expected = 0.5 * grid_integral((state.padded() - y_d) ** 2, N)

    assert recovered.objective == pytest.approx(expected, rel=1e-12)
    assert recovered.objective >= 0.0
    np.testing.assert_allclose(recovered.state.values, state.values, rtol=0, atol=1e-12)


def test_grid_oracles_need_the_unit_square():
    with pytest.raises(ContractError):
        operator_for(catalog('example3'), 8)
    with pytest.raises(ContractError):
        recovered_objective(catalog('example3'), lambda p: np.zeros(p.shape[0]), 8)


def test_grid_integral():
    assert grid_integral(np.ones((9, 9)), 8) == pytest.approx(1.0, rel=1e-14)
    x = grid_points(8)[:, 0].reshape(9, 9)
    assert grid_integral(x, 8) == pytest.approx(0.5, rel=1e-14)


@pytest.mark.slow
def test_recovered_objective_settles_under_refinement():
    problem = catalog('example1')
    values = [recovered_objective(problem, problem.exact_control, N).objective for N in (32, 64, 128, 256)]
    steps = np.abs(np.diff(values))
    assert steps[0] > steps[1] > steps[2]
    assert abs(values[3] - values[2]) <= 0.05 * abs(values[3])
