import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import quad

from app.exceptions import ConvergenceError, DomainValidationError
from app.schemas.mixture import InitialProfile, RateMixture
from app.services.mixture import (
    front_inverse,
    front_limit,
    front_position,
    front_velocity,
    lagrangian_inverse,
    lagrangian_map,
)
from app.services.roots import newton_bisect


def test_single_component_front_matches_exponential(make_mixture):
    rng = np.random.default_rng(1)
    for f, t in zip(rng.uniform(0.01, 5.0, 100), rng.uniform(0.0, 10.0, 100)):
        m = make_mixture((f, 1.0))
        assert abs(front_position(m, t) - (1.0 - math.exp(-f * t))) <= 1e-12


def test_front_with_inert_component(two_component):
    assert front_position(two_component, 1.0) == pytest.approx(0.5 * (1 - math.exp(-1.0)), abs=1e-15)
    assert front_position(two_component, 1.0) == pytest.approx(0.31606, abs=1e-5)
    assert front_limit(two_component) == 0.5


def test_front_vectorized_and_velocity(two_component):
    t = np.linspace(0.0, 3.0, 7)
    np.testing.assert_allclose(front_position(two_component, t), 0.5 * -np.expm1(-t), atol=1e-15)
    np.testing.assert_allclose(front_velocity(two_component, t), 0.5 * np.exp(-t), atol=1e-15)


def test_front_inverse_examples(make_mixture, two_component):
    assert front_inverse(make_mixture((1.0, 1.0)), 0.5) == pytest.approx(math.log(2.0), abs=1e-12)
    assert front_inverse(two_component, 0.25) == pytest.approx(math.log(2.0), abs=1e-12)
    assert front_inverse(two_component, 0.0) == 0.0


def test_front_inverse_round_trip(smooth_field):
    m = smooth_field.mixture
    for t in np.linspace(0.0, 15.0, 40):
        assert front_inverse(m, front_position(m, t)) == pytest.approx(t, abs=1e-10)


def test_front_inverse_rejects_unreachable_positions(two_component, make_mixture):
    with pytest.raises(DomainValidationError):
        front_inverse(two_component, 0.6)
    with pytest.raises(DomainValidationError):
        front_inverse(make_mixture((1.0, 1.0)), 1.0 - 1e-13)
    with pytest.raises(DomainValidationError):
        front_inverse(make_mixture((1.0, 1.0)), -0.1)


def test_lagrangian_map_with_inert_component(two_component):
    p = InitialProfile.uniform(two_component)
    for y, t in [(0.1, 0.5), (0.7, 1.0), (0.95, 3.0)]:
        expected = 1 - (1 - y) * (0.5 * math.exp(-t) + 0.5)
        assert lagrangian_map(p, two_component, y, t) == pytest.approx(expected, abs=1e-14)


def test_lagrangian_inverse_with_inert_component(two_component):
    p = InitialProfile.uniform(two_component)
    for y, t in [(0.6, 0.5), (0.8, 1.0), (0.99, 3.0)]:
        expected = 1 - (1 - y) / (0.5 * math.exp(-t) + 0.5)
        assert lagrangian_inverse(p, two_component, y, t) == pytest.approx(expected, abs=1e-12)


def test_lagrangian_inverse_round_trip(smooth_field):
    p, m = smooth_field.profile, smooth_field.mixture
    rng = np.random.default_rng(7)
    for y, t in zip(rng.uniform(0.0, 0.99, 100), rng.uniform(0.0, 5.0, 100)):
        image = lagrangian_map(p, m, y, t)
        assert lagrangian_inverse(p, m, image, t) == pytest.approx(y, abs=1e-10)


def test_lagrangian_inverse_rejects_stationary_region(two_component):
    p = InitialProfile.uniform(two_component)
    with pytest.raises(DomainValidationError):
        lagrangian_inverse(p, two_component, 0.1, 2.0)


def test_tail_mass_matches_quadrature(smooth_profile, two_cell_field):
    for profile in (smooth_profile, two_cell_field.profile):
        for y in np.linspace(0.0, 0.95, 12):
            exact = profile.tail_mass(y)
            for i in range(profile.n_components):
                numeric, _ = quad(
                    lambda z: profile.values(z)[i], y, 1.0,
                    points=[0.5] if y < 0.5 else None, epsabs=1e-14, epsrel=1e-14,
                )
                assert abs(exact[i] - numeric) <= 1e-12


def test_profile_densities_sum_to_one(smooth_profile):
    values = smooth_profile.values(np.linspace(0.0, 0.999, 50))
    np.testing.assert_allclose(values.sum(axis=0), 1.0, atol=1e-10)


def test_mixture_validation(make_mixture):
    with pytest.raises(ValidationError):
        make_mixture((1.0, 0.5), (2.0, 0.4))
    with pytest.raises(ValidationError):
        make_mixture((0.0, 1.0))
    with pytest.raises(ValidationError):
        make_mixture((-1.0, 1.0))
    with pytest.raises(DomainValidationError):
        RateMixture.from_arrays([1.0, 2.0], [0.5, 0.6])


def test_normalized_mixture():
    m = RateMixture.normalized([1.0, 2.0, 4.0], [1.0, 1.0, 2.0])
    np.testing.assert_allclose(m.weights, [0.25, 0.25, 0.5])
    assert m.mean_rate == pytest.approx(2.75)


def test_profile_validation():
    with pytest.raises(ValidationError, match="sum to 1"):
        InitialProfile(breakpoints=(0.0, 1.0), cells=(((0.5,), (0.6,)),))
    with pytest.raises(ValidationError, match="negative"):
        InitialProfile(breakpoints=(0.0, 1.0), cells=(((-0.1, 2.0), (1.1, -2.0)),))
    with pytest.raises(ValidationError, match="degree"):
        InitialProfile(breakpoints=(0.0, 1.0), cells=(((1.0, 0, 0, 0, 0),),))
    with pytest.raises(ValidationError, match="breakpoints"):
        InitialProfile(breakpoints=(0.0, 0.9), cells=(((1.0,),),))


def test_profile_must_match_mixture(smooth_profile, two_component):
    with pytest.raises(DomainValidationError):
        smooth_profile.check_consistent(two_component)


def test_newton_bisect_finds_cube_root():
    root = newton_bisect(lambda x: (x ** 3 - 2.0, 3 * x ** 2), 0.0, 2.0)
    assert root == pytest.approx(2 ** (1 / 3), abs=1e-14)


def test_newton_bisect_needs_a_bracket():
    with pytest.raises(DomainValidationError):
        newton_bisect(lambda x: (x + 1.0, 1.0), 0.0, 1.0)


def test_newton_bisect_iteration_cap():
    # a vanishing derivative forces bisection, which cannot finish in 3 steps
    with pytest.raises(ConvergenceError):
        newton_bisect(lambda x: (x - 0.3, 0.0), 0.0, 1.0, tol=1e-15, max_iter=3)


def _random_mixture(rng, size):
    weights = rng.dirichlet(np.ones(size))
    weights[-1] = 1.0 - weights[:-1].sum()
    return RateMixture.from_arrays(rng.uniform(0.1, 2.0, size), weights)


def test_front_position_is_strictly_increasing():
    rng = np.random.default_rng(21)
    t = np.linspace(0.0, 5.0, 200)
    for _ in range(20):
        m = _random_mixture(rng, int(rng.integers(1, 6)))
        assert np.all(np.diff(front_position(m, t)) > 0)


def _random_piecewise(rng, cells, size):
    """Piecewise-constant profile on random breakpoints with the mixture it carries."""
    edges = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, cells - 1)), [1.0]])
    values = rng.dirichlet(np.ones(size), size=cells)
    values[:, -1] = 1.0 - values[:, :-1].sum(axis=1)
    rho = np.diff(edges) @ values
    rho[-1] = 1.0 - rho[:-1].sum()
    profile = InitialProfile(
        breakpoints=tuple(edges.tolist()),
        cells=tuple(tuple((float(u),) for u in row) for row in values),
    )
    return profile, RateMixture.from_arrays(rng.uniform(0.1, 2.0, size), rho)


def test_lagrangian_map_is_strictly_increasing():
    rng = np.random.default_rng(34)
    y = np.linspace(0.0, 0.999, 500)
    for _ in range(20):
        p, m = _random_piecewise(rng, int(rng.integers(2, 6)), int(rng.integers(1, 5)))
        for t in (0.3, 2.0):
            assert np.all(np.diff(lagrangian_map(p, m, y, t)) > 0)
