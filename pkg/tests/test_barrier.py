import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bmchaos import barrier as B
from bmchaos.rng import substream


def test_linear_closed_form():
    assert B.bm_linear_barrier_closed_form(1.0, 1.0) == pytest.approx(0.8646647167633873, abs=1e-15)
    assert B.bm_linear_barrier_closed_form(0.0, 2.0) == 0.0
    with pytest.raises(ValueError):
        B.bm_linear_barrier_closed_form(-1.0, 1.0)


def test_linear_barrier_monte_carlo(rng):
    v = B.linear_barrier_check(1.0, 1.0, 4000, rng, horizon=20.0, band=0.03)
    assert v.passed, v


def test_barrier_spec_values_and_validation():
    lin = B.BarrierSpec("linear", {"a": 1.5, "c": 0.5})
    assert lin.value(2.0) == pytest.approx(2.5)
    crit = B.BarrierSpec("critical", {"beta": 3.0, "M": 2.0})
    assert crit.value(0.0) == pytest.approx(3.0)
    s = 4.0
    assert crit.value(s) == pytest.approx(2 * s + 3.0 - math.sqrt(s) / (2.0 * math.log(2 + s) ** 2))
    with pytest.raises(ValueError):
        B.BarrierSpec("linear", {"a": 1.0})
    with pytest.raises(ValueError):
        B.BarrierSpec("spline", {})
    with pytest.raises(ValueError):
        B.BarrierSpec("log", {"K": 1.0, "coef": 2.0}, horizon=2.5, mode="minima")


def test_fit_log_slope_exact_power_law():
    xs = np.array([16.0, 64.0, 256.0])
    slope, se = B.fit_log_slope(xs, 3.0 * xs ** -0.5, 1e-3 * np.ones(3))
    assert slope == pytest.approx(-0.5, abs=1e-12) and se > 0
    assert math.isnan(B.fit_log_slope(xs, np.array([0.1, 0.0, 0.01]), np.ones(3))[0])


def test_minima_event_decreases_with_horizon(rng):
    m, se = B.minima_event_probabilities([4, 64], 2.0, None, 4000, rng)
    assert m[1] < m[0]
    assert np.all(se > 0)


def test_angle_density_routes_agree():
    theta = np.linspace(-math.pi, math.pi, 301)
    for t in (0.05, 0.7, 6.0):
        a, bound = B.angle_density_fourier(theta, 0.4, t)
        b = B.angle_density_wrapped(theta, 0.4, t)
        assert np.max(np.abs(a - b)) < 1e-10
        assert bound < 1e-15


@settings(max_examples=40, deadline=None)
@given(t=st.floats(0.2, 10.0), th=st.floats(-math.pi, math.pi), th0=st.floats(-3.0, 3.0))
def test_angle_density_near_uniform(t, th, th0):
    dev = abs(float(B.angle_density(th, th0, t)) - 1 / (2 * math.pi))
    assert dev <= B.uniform_deviation_bound(t) + 1e-14


def test_poisson_summation_battery():
    vs = B.poisson_summation_check(t_values=[0.5, 2.0], n_angles=200)
    assert all(v.passed for v in vs)


def test_change_of_measure_zero_and_one(rng):
    v = B.change_of_measure_check(1.5, 1.0, 0.5, B.PathFunctional("zero"), 100, rng)
    assert v.estimate == 0.0 and v.passed
    v = B.change_of_measure_check(1.5, 1.0, 0.5, B.PathFunctional("one"), 20000, rng,
                                  dt=1e-3, n_sigma=4.0)
    assert v.passed, v.note


def test_lhs_importance_sampler_matches_quadrature(rng):
    left = B.lhs_samples(1.2, 0.8, 1.0, B.PathFunctional("one"), 20000, rng)
    q = B.lhs_quadrature(1.2, 0.8, 1.0)
    assert abs(left.mean() - q) < 4 * left.std() / math.sqrt(left.size)


def test_derivative_functional_nonnegative(rng):
    vals = B.lhs_samples(1.5, 1.0, 0.5, B.PathFunctional("derivative", beta=4.0), 2000, rng)
    assert np.all(vals >= 0)


def test_bessel3_moments(rng):
    out = B.bessel3_moment_check(0.0, [1.0, 4.0], 40000, rng, survival_paths=300,
                                 survival_horizon=10.0, rel_band=0.03)
    assert all(v.passed for v in out), [(v.name, v.estimate, v.target) for v in out]


def test_decoupling_statistics_extremes():
    r = np.random.default_rng(0)
    angles = r.uniform(-math.pi, math.pi, 20000)
    lts = r.exponential(size=(20000, 2))
    worst, tv = B.decoupling_statistics(angles, lts)
    assert worst < 0.1 and tv < 0.05
    # local times that are functions of the angle are far from independent
    lts_dep = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    worst, tv = B.decoupling_statistics(angles, lts_dep)
    assert worst > 0.5 and tv > 0.5


def test_excursion_sample_shapes():
    angles, lts, tries = B.excursion_sample(2, 20, substream(9, "exc"), dh=1e-3)
    assert angles.shape == (20,) and lts.shape == (20, 2) and tries >= 20
    assert np.all(lts >= 0)


def test_continuity_experiment_rejects_bad_ratio(rng):
    with pytest.raises(ValueError):
        B.continuity_lemma_experiment(1.0, 0.5, 10, rng)
