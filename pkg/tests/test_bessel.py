import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from bmchaos import _kernels as K
from bmchaos.bessel import (BridgeSpec, PathSample, PrecisionWarning, besq_transition_density,
                            besq_transition_sample, bessel_bridge_0dim_sample, bessel_path_sample,
                            log_modified_bessel_i, modified_bessel_i, pitman_bridge_squared,
                            rn_derivative_bessel)

# I_1(1) from an independent arbitrary-precision evaluation, frozen
I1_AT_1 = 0.565159103992485


def test_i1_at_one():
    assert math.isclose(float(modified_bessel_i(1.0, 1.0)), I1_AT_1, rel_tol=1e-12)


def test_i0_at_zero():
    assert float(modified_bessel_i(0.0, 0.0)) == 1.0
    assert float(modified_bessel_i(2.0, 0.0)) == 0.0


@settings(max_examples=80, deadline=None)
@given(nu=st.floats(0.0, 5.0), z=st.floats(1e-3, 60.0))
def test_bessel_i_against_scipy(nu, z):
    ref = special.ive(nu, z)
    ours = float(np.exp(log_modified_bessel_i(nu, z) - z))
    tol = 1e-12 if z <= 30 else 1e-10
    assert math.isclose(ours, ref, rel_tol=max(tol, 1e-11))


def test_besq0_atom(rng):
    y = besq_transition_sample(np.ones(200_000), 1.0, 0.0, rng)
    f = np.mean(y == 0)
    target = math.exp(-0.5)
    assert abs(f - target) < 4 * math.sqrt(target * (1 - target) / y.size)


def test_besq3_mean(rng):
    y = besq_transition_sample(np.ones(200_000), 1.0, 3.0, rng)
    assert abs(y.mean() - 4.0) < 4 * y.std() / math.sqrt(y.size)


def test_density_atom_and_chi_square():
    td = besq_transition_density(1.0, 0.5, 1.0, 0.0)
    assert math.isclose(float(td.atom), math.exp(-0.5), rel_tol=1e-14)
    ys = np.array([0.1, 1.0, 2.5, 7.0])
    for t in (0.5, 2.0):
        q = besq_transition_density(np.zeros(4), ys, t, 3.0).density
        ref = stats.chi2.pdf(ys / t, 3) / t
        assert np.allclose(q, ref, rtol=1e-12)


@pytest.mark.parametrize("x,t,d", [(1.0, 1.0, 0.0), (3.0, 0.7, 0.0), (1.0, 1.0, 3.0),
                                   (2.0, 1.5, 1.0)])
def test_density_mass_is_one(x, t, d):
    def f(y):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PrecisionWarning)
            return float(besq_transition_density(x, y, t, d).density)
    atom = float(besq_transition_density(x, 1.0, t, d).atom) if d == 0 else 0.0
    mass = integrate.quad(f, 0, x + 80 * t + 40, limit=400, points=[x])[0]
    assert abs(mass + atom - 1.0) < 1e-8


def test_density_matches_sampler(rng):
    y = besq_transition_sample(np.full(50_000, 2.0), 1.0, 0.0, rng)
    pos = y[y > 0]
    grid = np.linspace(0, 20, 2001)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrecisionWarning)
        dens = besq_transition_density(np.full(grid.size, 2.0), grid, 1.0, 0.0).density
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    res = stats.kstest(pos, lambda v: np.interp(v, grid, cdf))
    assert res.pvalue > 1e-3


def test_additivity_ks(rng):
    n = 10_000
    a = sum(besq_transition_sample(np.full(n, x), 1.0, 0.0, rng) for x in (0.5, 1.0, 1.5))
    b = besq_transition_sample(np.full(n, 3.0), 1.0, 0.0, rng)
    assert stats.ks_2samp(a, b).pvalue >= 1e-3


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.0, 10.0), t=st.floats(0.05, 5.0), d=st.sampled_from([0.0, 1.0, 2.0, 3.0]))
def test_sampler_nonnegative_and_absorbing(x, t, d):
    rng = np.random.default_rng(1)
    y = besq_transition_sample(np.full(64, x), t, d, rng)
    assert np.all(y >= 0)
    if x == 0 and d == 0:
        assert np.all(y == 0)


def test_bessel_path_mean(rng):
    ends = np.array([bessel_path_sample(1.0, 3.0, [1.0], rng).values[-1] ** 2
                     for _ in range(20_000)])
    assert abs(ends.mean() - 4.0) < 4 * ends.std() / math.sqrt(ends.size)


def test_bridge_zero_to_zero_is_zero(rng):
    spec = BridgeSpec(0.0, 0.0, 1.0, np.linspace(0.1, 0.9, 9))
    for method in ("markov-bridge", "pitman"):
        p = bessel_bridge_0dim_sample(spec, rng, method)
        assert np.all(p.values == 0)


def test_bridge_pinned(rng):
    spec = BridgeSpec(1.3, 0.4, 2.0, np.linspace(0.2, 1.8, 5))
    p = bessel_bridge_0dim_sample(spec, rng)
    assert p.values[0] == 1.3 and p.values[-1] == 0.4
    assert np.all(p.values >= 0)


def test_bridge_methods_agree(rng):
    spec = BridgeSpec(1.0, 1.0, 1.0, np.array([0.5]))
    a = [bessel_bridge_0dim_sample(spec, rng, "markov-bridge").values[1] for _ in range(3000)]
    b = np.sqrt(pitman_bridge_squared(np.ones(3000), np.ones(3000), 1.0, np.array([0.5]), rng)[:, 0])
    assert stats.ks_2samp(a, b).pvalue >= 1e-3


def test_bridge_spec_validation():
    with pytest.raises(ValueError):
        BridgeSpec(-1.0, 1.0, 1.0, np.array([0.5]))
    with pytest.raises(ValueError):
        BridgeSpec(1.0, 1.0, 1.0, np.array([1.5]))


def test_rn_derivative_constant_path():
    times = np.linspace(0, 2.0, 201)
    path = PathSample(times, np.full(times.size, 1.5))
    # a = 1 for d = 3: exponent vanishes, ratio X_t / x = 1
    assert math.isclose(rn_derivative_bessel(path, 1.5, 2.0, 3.0), 1.0)
    # a = -1/2 for d = 0: exp(-(3/8) t / x^2)
    assert math.isclose(rn_derivative_bessel(path, 1.5, 2.0, 0.0),
                        math.exp(-0.375 * 2.0 / 1.5 ** 2), rel_tol=1e-12)


def test_rn_transfer_identity(rng):
    """E^3_1[1{X_1 < 2}] against E^1_1[1{X_1 < 2} RN 1{survive}]."""
    n = 100_000
    x3 = np.sqrt(besq_transition_sample(np.ones(n), 1.0, 3.0, rng))
    lhs = np.mean(x3 < 2)
    # Brownian paths from 1 with an exact killing check on a fine grid
    steps = 1000
    dt = 1.0 / steps
    w = np.ones(n)
    x = np.ones(n)
    for _ in range(steps):
        y = x + math.sqrt(dt) * rng.standard_normal(n)
        alive = (y > 0) & (rng.random(n) > np.exp(-2 * np.clip(x, 0, None) * np.clip(y, 0, None) / dt))
        w *= alive
        x = np.where(alive, y, 1.0)
    rhs = np.mean(w * x * (x < 2))   # a = 1: RN = X_1 / x
    assert abs(rhs / lhs - 1) < 0.02


def test_euler_agrees_with_exact(rng):
    n = 4000
    exact = besq_transition_sample(np.ones(n), 1.0, 0.0, rng)
    euler = K.besq_euler(1.0, 0.0, 1e-3, 1000, n, rng)
    assert stats.ks_2samp(exact, euler).pvalue >= 1e-3
