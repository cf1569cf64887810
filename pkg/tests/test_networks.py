import numpy as np
import pytest

from bilevel_obstacle import (
    InputError,
    NetworkSpec,
    UnitSquare,
    batch_rng,
    catalog,
    control_clamp,
    embed_control,
    embed_obstacle_control,
    embed_state,
    eval_with_spatial_jet,
    init_xavier,
    raw_forward,
    state_relu,
    state_square,
)


def test_xavier_biases_are_zero_and_weights_bounded():
    spec = NetworkSpec(blocks=3, width=16, seed=5)
    theta = init_xavier(spec)
    assert theta.shape == (spec.num_params,)

    offset = 0
    for fan_in, fan_out in spec.layers:
        weights = theta[offset : offset + fan_in * fan_out]
        offset += fan_in * fan_out
        bias = theta[offset : offset + fan_out]
        offset += fan_out

        assert np.all(np.abs(weights) <= np.sqrt(6.0 / (fan_in + fan_out)))
        np.testing.assert_array_equal(bias, 0.0)

    hidden = theta[2 * 16 + 16 : 2 * 16 + 16 + 256]
    assert np.max(np.abs(hidden)) <= 0.4330127018922193


def test_xavier_is_deterministic():
    spec = NetworkSpec(seed=11)
    np.testing.assert_array_equal(init_xavier(spec), init_xavier(spec))
    assert not np.array_equal(init_xavier(spec), init_xavier(NetworkSpec(seed=12)))


def test_zero_parameters_give_zero_output():
    spec = NetworkSpec()
    points = np.random.default_rng(0).uniform(size=(10, 2))
    np.testing.assert_array_equal(raw_forward(spec, np.zeros(spec.num_params), points), 0.0)


def test_one_block_forward_by_hand():
    spec = NetworkSpec(blocks=1, width=1, activation='relu')
    # lift x1 + x2; block h + relu(2 relu(h) + 0.5); readout 3 h + 1
    theta = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 2.0, 0.5, 3.0, 1.0])
    assert spec.num_params == theta.size

    # h = 0.75, block adds relu(1.5 + 0.5) = 2, readout 3 * 2.75 + 1
    assert raw_forward(spec, theta, np.array([0.25, 0.5]))[0] == pytest.approx(9.25, abs=1e-14)


def test_output_is_continuous():
    spec = NetworkSpec(seed=2)
    theta = init_xavier(spec)
    x = np.array([[0.4, 0.6]])
    base = raw_forward(spec, theta, x)[0]
    gaps = [abs(raw_forward(spec, theta, x + delta)[0] - base) for delta in (1e-2, 1e-4, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_dimension_and_length_mismatches_are_rejected():
    spec = NetworkSpec()
    with pytest.raises(InputError):
        eval_with_spatial_jet(spec, np.zeros(spec.num_params), np.zeros(3))
    with pytest.raises(InputError):
        raw_forward(spec, np.zeros(spec.num_params + 1), np.zeros(2))
    with pytest.raises(InputError):
        NetworkSpec(activation='gelu')
    with pytest.raises(InputError):
        NetworkSpec(embedding='state_cube')


def test_square_state_embedding_cases():
    # N = -1, m = 0.2, psi = 0
    assert state_square(np.array([-1.0]), np.array([0.0]), np.array([0.2])).data[0] == pytest.approx(0.2)
    # on the boundary the obstacle is returned exactly
    np.testing.assert_array_equal(state_square(np.array([7.3]), np.array([0.4]), np.array([0.0])).data, [0.4])


def test_relu_state_embedding_returns_obstacle_below_it():
    np.testing.assert_array_equal(state_relu(np.array([0.1]), np.array([0.5]), np.array([1.0])).data, [0.5])
    assert state_relu(np.array([2.0]), np.array([0.5]), np.array([0.5])).data[0] == pytest.approx(1.0)


def test_control_clamp_cases():
    raw = np.array([0.35, -2.0, 5.0])
    np.testing.assert_allclose(control_clamp(raw, 0.0, 0.7).data, [0.35, 0.0, 0.7], rtol=0, atol=1e-15)

    once = control_clamp(np.linspace(-3.0, 3.0, 101), 0.0, 0.7).data
    np.testing.assert_allclose(control_clamp(once, 0.0, 0.7).data, once, rtol=0, atol=1e-15)

    with pytest.raises(InputError):
        control_clamp(raw, 1.0, 0.0)


@pytest.mark.parametrize('example', ['example1', 'example2', 'example3', 'example5'])
def test_state_embedding_is_feasible(example):
    problem = catalog(example)
    spec = NetworkSpec(embedding=problem.state_embedding, seed=4)
    theta = init_xavier(spec) * 3.0
    points = problem.domain.sample_interior(100_000, batch_rng(0, 0, 0))

    psi = problem.obstacle_values(points)
    y_hat = embed_state(spec, theta, points, psi, problem.domain.mask_values(points))
    assert np.min(y_hat - psi) >= -1e-12


def test_clamped_control_stays_in_the_box():
    spec = NetworkSpec(embedding='control_clamp', seed=9)
    points = np.random.default_rng(9).uniform(size=(100_000, 2))
    u_hat = embed_control(spec, init_xavier(spec) * 10.0, points, 0.0, 0.7)
    assert np.min(u_hat) >= -1e-12
    assert np.max(u_hat) <= 0.7 + 1e-12


def test_square_state_is_exact_on_the_boundary():
    domain = UnitSquare()
    spec = NetworkSpec(embedding='state_square', seed=1)
    points = domain.sample_boundary(1000, np.random.default_rng(1))
    psi = np.sin(points[:, 0]) + points[:, 1]

    y_hat = embed_state(spec, init_xavier(spec), points, psi, domain.mask_values(points))
    assert np.max(np.abs(y_hat - psi)) <= 1e-12


def test_obstacle_control_embedding():
    domain = UnitSquare()
    spec_psi = NetworkSpec(embedding='obstacle_raw', seed=2)
    spec_y = NetworkSpec(embedding='state_below_obstacle', seed=3)
    theta_psi, theta_y = init_xavier(spec_psi) * 3.0, init_xavier(spec_y) * 3.0
    rng = np.random.default_rng(2)

    inside = rng.uniform(size=(100_000, 2))
    psi_hat, y_hat = embed_obstacle_control(
        spec_psi, theta_psi, spec_y, theta_y, inside, domain.mask_values(inside)
    )
    assert np.max(y_hat - psi_hat) <= 1e-12

    mask = domain.mask_values(inside)
    free = mask * raw_forward(spec_y, theta_y, inside)
    below = free < psi_hat
    np.testing.assert_allclose(y_hat[below], free[below], rtol=0, atol=1e-12)
    np.testing.assert_array_equal(y_hat[~below], psi_hat[~below])

    edge = domain.sample_boundary(1000, rng)
    psi_hat, y_hat = embed_obstacle_control(
        spec_psi, theta_psi, spec_y, theta_y, edge, domain.mask_values(edge)
    )
    np.testing.assert_array_equal(psi_hat, 0.0)
    np.testing.assert_array_equal(y_hat, 0.0)
