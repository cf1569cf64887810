import numpy as np
import pytest

from bilevel_obstacle import (
    FixtureBatch,
    InputError,
    QuadraticFixture,
    check_envelope_gradient,
    quadratic_fixture,
)


def test_decoupled_fixture_closed_forms():
    fixture = QuadraticFixture(np.zeros((2, 2)), [1.0, 2.0])
    y, u = np.array([3.0, -1.0]), np.array([0.5, 0.5])
    gamma, c = 4.0, 2.0

    np.testing.assert_allclose(fixture.prox_point(y, u, gamma), y / 5.0)
    assert fixture.envelope(y, u, gamma) == pytest.approx(10.0 / 10.0)
    assert fixture.lower(y, u) == pytest.approx(5.0)

    theta_y, theta_u = fixture.penalty_minimizer(gamma, c)
    np.testing.assert_allclose(theta_y, np.array([1.0, 2.0]) / (1.0 + c * gamma / (1.0 + gamma)))
    np.testing.assert_allclose(theta_u, 0.0, atol=1e-15)


def test_envelope_gradient_matches_finite_differences(fixture):
    result = check_envelope_gradient(fixture)
    assert result.passed
    assert result.value < 1e-8


def test_penalty_minimizer_is_stationary(fixture):
    for gamma, c in ((1.0, 2.0), (20.0, 5.0), (0.5, 100.0)):
        theta_y, theta_u = fixture.penalty_minimizer(gamma, c)
        grad_y, grad_u = fixture.penalty_gradient(theta_y, theta_u, gamma, c)
        assert np.linalg.norm(np.concatenate([grad_y, grad_u])) < 1e-12


def test_envelope_lies_below_the_lower_loss(fixture, rng):
    for _ in range(50):
        y, u = rng.standard_normal(3), rng.standard_normal(3)
        gamma = rng.uniform(0.1, 50.0)
        assert fixture.envelope(y, u, gamma) <= fixture.lower(y, u) + 1e-15
        assert fixture.penalty(y, u, gamma, 3.0) >= fixture.upper(y, u) / 3.0 - 1e-15


def test_feasible_point_penalty_is_the_scaled_upper_loss(fixture, rng):
    u = rng.standard_normal(3)
    y = fixture.matrix @ u
    assert fixture.penalty(y, u, 2.0, 7.0) == pytest.approx(fixture.upper(y, u) / 7.0, abs=1e-15)


def test_constructor_validation():
    with pytest.raises(InputError):
        QuadraticFixture(np.eye(3), [1.0, 2.0])
    with pytest.raises(InputError):
        quadratic_fixture(noise=-0.1)


def test_exact_oracles_ignore_the_generator(fixture):
    batch = fixture.sample(np.random.default_rng(0), 1)
    assert batch.noise_rng is None

    y, u = fixture.initial_params(0)
    estimate = fixture.evaluate(y, u, batch, wrt=('y', 'u'))
    e_y, e_u = fixture.lower_grad(y, u)
    np.testing.assert_allclose(estimate.grad_y, y - fixture.target + e_y)
    np.testing.assert_allclose(estimate.grad_u, u + e_u)


def test_noisy_oracles_are_reproducible():
    noisy = quadratic_fixture(noise=0.5)
    y, u = noisy.initial_params(3)

    first = noisy.evaluate(y, u, FixtureBatch(np.random.default_rng(9)), wrt=('y',))
    again = noisy.evaluate(y, u, FixtureBatch(np.random.default_rng(9)), wrt=('y',))
    exact = noisy.evaluate(y, u, FixtureBatch(), wrt=('y',))

    np.testing.assert_array_equal(first.grad_y, again.grad_y)
    assert not np.allclose(first.grad_y, exact.grad_y)
    assert first.grad_u is None
    assert first.upper == exact.upper
