import math

import numpy as np
import pytest
from scipy.stats import ks_2samp
from hypothesis import given, settings, strategies as st

from bmchaos import chaos as C
from bmchaos.bessel import besq_transition_sample
from bmchaos.domains import Disc, Square
from bmchaos.rng import substream

# exp(-exp(2)) from an independent arbitrary-precision evaluation, frozen
EPS_GAMMA_1 = 6.17978989331094e-04


def test_eps_gamma_values():
    assert math.isclose(C.eps_gamma(1.0), EPS_GAMMA_1, rel_tol=1e-12)
    assert math.isclose(C.eps_gamma(1e-9), math.exp(-math.e), rel_tol=1e-8)
    with pytest.raises(ValueError):
        C.eps_gamma(2.0)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0.01, 1.9), b=st.floats(0.01, 1.9))
def test_eps_gamma_decreasing(a, b):
    if a < b:
        assert C.eps_gamma(a) >= C.eps_gamma(b)


def test_subcritical_examples():
    eps = math.exp(-5)
    mass = C.measure_subcritical(np.array([100.0 * eps]), 2.0, eps, 1.0)[0]
    assert math.isclose(mass, math.sqrt(5) * math.exp(10), rel_tol=1e-12)   # 4.92e4
    zero = C.measure_subcritical(np.zeros(3), 1.5, eps, 0.5).sum()
    assert math.isclose(zero, math.sqrt(5) * eps ** 1.125 * 1.5, rel_tol=1e-12)
    L = np.array([0.01, 0.2])
    assert np.allclose(C.measure_subcritical(L, 1.2, eps, 2.0),
                       2 * C.measure_subcritical(L, 1.2, eps, 1.0))


def test_seneta_heyde_example():
    eps = math.exp(-5)
    mass = C.measure_seneta_heyde(np.array([100.0 * eps]), eps, 1.0)[0]
    assert math.isclose(mass, 5 * math.exp(10), rel_tol=1e-12)               # 1.101e5
    assert math.isclose(C.measure_seneta_heyde(np.zeros(1), eps, 1.0)[0], 5 * eps ** 2,
                        rel_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(k=st.integers(1, 20), L=st.lists(st.floats(0, 5), min_size=1, max_size=8),
       area=st.floats(1e-6, 1.0))
def test_seneta_heyde_identity_exact(k, L, area):
    eps = math.exp(-k)
    L = np.array(L) * eps
    a = C.measure_seneta_heyde(L, eps, area)
    b = math.sqrt(abs(math.log(eps))) * C.measure_subcritical(L, 2.0, eps, area)
    assert np.array_equal(a, b)


def test_derivative_signs():
    k = 6
    eps = math.exp(-k)
    crit = (2 * k) ** 2 * eps
    assert C.measure_derivative(np.array([crit]), eps, 1.0)[0] == 0.0
    assert C.measure_derivative(np.array([(2 * k + 1) ** 2 * eps]), eps, 1.0)[0] < 0
    assert math.isclose(C.measure_derivative(np.zeros(1), eps, 1.0)[0],
                        math.sqrt(k) * eps ** 2 * 2 * k, rel_tol=1e-12)


def test_good_events_simple():
    s = np.arange(0, 41) / 4
    h = np.zeros((1, s.size))
    G, Gp, far = C.good_event_masks(h, s, np.array([0]), 10, 1.0, 10.0, np.array([0.5]))
    assert G[0] and Gp[0] and far[0]
    h2 = np.zeros((1, s.size))
    h2[0, 12] = 2 * s[12] + 1.0 + 0.1
    G, Gp, _ = C.good_event_masks(h2, s, np.array([0]), 10, 1.0, 10.0, np.array([0.05]))
    assert not G[0] and not Gp[0]
    # before k_x nothing is checked
    G, _, _ = C.good_event_masks(h2, s, np.array([4]), 10, 1.0, 10.0, np.array([0.5]))
    assert G[0]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), beta=st.floats(0.5, 8.0), M=st.floats(0.5, 20.0))
def test_second_layer_nested(seed, beta, M):
    r = np.random.default_rng(seed)
    s = np.arange(0, 33) / 4
    h = 2 * s[None, :] + beta + r.normal(0, 1.0, size=(50, s.size))
    kx = r.integers(0, 9, size=50)
    G, Gp, _ = C.good_event_masks(h, s, kx, 8, beta, M, r.random(50))
    assert np.all(~Gp | G)


def test_restricted_derivative():
    eps = math.exp(-8)
    L = np.array([0.0, 10 * eps, 200 * eps])
    G = np.array([True, True, False])
    with pytest.raises(C.SurrogateError):
        C.measure_derivative_restricted(None, L, G, G, G, eps, 6.0, 1.0)
    mh, mhh = C.measure_derivative_restricted(None, L, G, G, np.array([True, False, True]),
                                              eps, 6.0, 1.0, surrogate=True)
    assert mh[2] == 0 and np.all(mh >= 0)
    assert mhh[1] == 0 and np.all(mhh <= mh)
    zero, _ = C.measure_derivative_restricted(L, L, np.zeros(3, bool), np.zeros(3, bool),
                                              np.ones(3, bool), eps, 6.0, 1.0)
    assert np.all(zero == 0)


def test_grid_inside_domain():
    for dom in (Disc((0.0, 0.0), 1.0), Square((0.0, 0.0), 1.0)):
        pts, h, capped = C.chaos_grid(dom, math.exp(-5), 10_000)
        assert np.all(dom.distance_to_boundary(pts) >= h / math.sqrt(2) - 1e-12)
        assert len(pts) <= 10_000


def test_cascade_field_identities():
    p = C.ChaosParams(ks=(7,), max_cells=4000)
    f = C.cascade_field(p, 7, substream(1, "field"))
    assert np.array_equal(f.m, math.sqrt(7) * f.m2)
    assert np.all(f.mhathat <= f.mhat) and np.all(f.mhat <= f.m)
    assert np.all(f.muhat[f.G] >= 0)
    assert f.surrogate
    t = f.totals()
    assert t.mhathat <= t.mhat <= t.m


def test_cascade_field_deterministic():
    p = C.ChaosParams(ks=(6,), max_cells=2000)
    a = C.cascade_field(p, 6, substream(3, "x"))
    b = C.cascade_field(p, 6, substream(3, "x"))
    assert np.array_equal(a.L_tau, b.L_tau) and np.array_equal(a.G, b.G)


def test_ring_kernel_integrates_circumference():
    for rho in (0.3, 0.05):
        ker = C.ring_kernel(rho, max(rho / 10, 0.006), 0.004)
        assert math.isclose(ker.sum() * 0.004 ** 2, 2 * math.pi * rho, rel_tol=1e-12)


def test_rasters_hold_total_time():
    p = C.ChaosParams(backend="path", path_dt=1e-4, pixel=0.01)
    r = C.simulate_rasters(p, substream(4, "raster"))
    # the exit step is partial, so the rasters agree with the clocks to one step
    assert abs(r.occ_tau.sum() - r.tau) <= p.path_dt
    assert abs(r.occ_tau.sum() + r.occ_extra.sum() - r.t2) <= 2 * p.path_dt


def _brute(z, counts, t, funcs, rng):
    y = np.sqrt(besq_transition_sample(np.repeat(z, counts), t, 0.0, rng))
    return np.array([f(y).sum() for f in funcs])


def test_conditional_sums_match_brute_force():
    funcs = C._moment_funcs(4, (1.5,))
    z = np.array([0.0, 3.0, 12.0])
    counts = np.array([400, 400, 400])
    agg = np.array([C._conditional_sums(z, counts, 2.0, funcs, 50, substream(5, "a", i))
                    for i in range(150)])
    bru = np.array([_brute(z, counts, 2.0, funcs, substream(5, "b", i)) for i in range(150)])
    # the sums are too heavy-tailed for a mean comparison; compare laws by rank
    for j in range(len(funcs)):
        assert ks_2samp(agg[:, j], bru[:, j]).pvalue > 1e-3


def test_marginal_sums_match_brute_force():
    funcs = C._moment_funcs(5, (1.0,))
    d = np.array([0.003, 0.05, 0.4])
    counts = np.array([300, 300, 300])
    R, eps = 2.0, math.exp(-5)
    kp = math.log(R / eps)
    p = np.clip(np.log(R / d) / kp, 0, 1)
    agg, bru = [], []
    for i in range(300):
        agg.append(C._marginal_sums(d, counts, R, eps, funcs, 30, substream(6, "a", i)))
        r = substream(6, "b", i)
        hit = r.random(counts.sum()) < np.repeat(p, counts)
        y = np.sqrt(np.where(hit, r.exponential(2 * kp, counts.sum()), 0.0))
        bru.append([f(y).sum() for f in funcs])
    agg, bru = np.array(agg), np.array(bru)
    for j in range(len(funcs)):
        assert ks_2samp(agg[:, j], bru[:, j]).pvalue > 1e-3


def test_aggregate_totals_shapes():
    p = C.ChaosParams(backend="cascade-aggregate", ks=(6,))
    out = C.aggregate_totals(p, 6, substream(1, "agg"), gammas=(1.0, 1.5))
    assert [t.gamma for t in out] == [1.0, 1.5]
    assert out[0].m2 == out[1].m2 and out[0].m == pytest.approx(math.sqrt(6) * out[0].m2)
    assert math.isnan(out[0].mhat)


def test_diagnostics_on_synthetic_ensemble():
    tot = []
    for run in range(5):
        for k in (6, 8, 10):
            m2 = 10.0 / k
            tot.append(C.ChaosTotals(k, 1.5, 6.0, 10.0, "synthetic", m_gamma=2 * 1.9 * 0.5,
                                     m2=m2, m=math.sqrt(k) * m2, mu=1.0 if k < 10 else 0.5 * 2,
                                     run=run))
    b = C.convergence_diagnostics(tot, checks=("decay",))
    assert [v.passed for v in b.verdicts] == [True, True]
    assert "chaos_runs" in b.tables and "chaos_medians" in b.tables


def test_params_validation():
    with pytest.raises(ValueError):
        C.ChaosParams(gamma=2.5)
    with pytest.raises(ValueError):
        C.ChaosParams(backend="lattice")
    with pytest.raises(ValueError):
        C.ChaosParams(x0=(3.0, 0.0))
