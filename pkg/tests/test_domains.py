import numpy as np
import pytest

from bilevel_obstacle import InputError, SolverError, SpatialJet, StarDomain, UnitSquare, batch_rng, catalog


def test_unit_square_samples_are_interior_and_reproducible():
    domain = UnitSquare()
    first = domain.sample_interior(4, batch_rng(7, 0, 0))
    again = domain.sample_interior(4, batch_rng(7, 0, 0))

    assert first.shape == (4, 2)
    assert np.all((first > 0.0) & (first < 1.0))
    np.testing.assert_array_equal(first, again)


def test_unit_square_sample_mean():
    points = UnitSquare().sample_interior(1_000_000, batch_rng(0, 0, 0))
    band = 5.0 * np.sqrt(1.0 / 12.0 / points.shape[0])
    np.testing.assert_allclose(points.mean(axis=0), [0.5, 0.5], rtol=0, atol=band)


def test_star_samples_lie_inside_the_radius():
    domain = StarDomain()
    points = domain.sample_interior(20_000, np.random.default_rng(3))

    r = np.hypot(points[:, 0], points[:, 1])
    zeta = np.arctan2(points[:, 1], points[:, 0])
    assert points.shape == (20_000, 2)
    assert np.all(r < domain.radius(zeta))


def test_masks_vanish_on_the_boundary_and_are_positive_inside():
    rng = np.random.default_rng(0)
    for domain in (UnitSquare(), StarDomain()):
        edge = domain.sample_boundary(1000, rng)
        assert np.max(np.abs(domain.mask_values(edge))) <= 1e-12

        inside = domain.sample_interior(1000, rng)
        assert np.all(domain.mask_values(inside) > 0.0)


def test_unit_square_boundary_points_lie_on_edges():
    points = UnitSquare().sample_boundary(500, np.random.default_rng(1))
    on_edge = np.any((points == 0.0) | (points == 1.0), axis=1)
    assert np.all(on_edge)
    assert np.all((points >= 0.0) & (points <= 1.0))


def test_sample_count_must_be_positive():
    with pytest.raises(InputError):
        UnitSquare().sample_interior(0, np.random.default_rng(0))
    with pytest.raises(InputError):
        StarDomain().sample_interior(-3, np.random.default_rng(0))


def test_rejection_sampling_gives_up():
    class Hollow(StarDomain):
        def contains(self, points):
            return np.zeros(points.shape[0], dtype=bool)

    with pytest.raises(SolverError):
        Hollow().sample_interior(10, np.random.default_rng(0), max_rounds=3)


def test_star_radius_terms_are_validated():
    with pytest.raises(InputError):
        StarDomain(terms=((0.1, 'tan', 2),))


def test_star_mask_is_finite_at_the_centre():
    domain = StarDomain()
    points = np.array([[0.0, 0.0], [1e-3, 0.0]])

    values = domain.mask_values(points)
    assert values[0] == 1.0
    np.testing.assert_allclose(values[1], 1.0, rtol=0, atol=1e-6)

    jet = domain.mask(SpatialJet.coordinates(points, 2))
    assert np.all(np.isfinite(jet.value.data))
    assert np.all(np.isfinite(jet.grad_x.data))
    assert np.all(np.isfinite(jet.laplacian_terms.data))
    np.testing.assert_array_equal(jet.grad_x.data[:, 0], 0.0)

    assert np.all(np.isfinite(catalog('example3').obstacle_values(points)))
