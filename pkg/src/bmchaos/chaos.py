"""Approximations of Brownian multiplicative chaos from circle local times.

For a cell of area a centred at x, with Y = sqrt(L_{x,eps}/eps) and
k = |log eps|:

* subcritical:    sqrt(k) eps^{gamma^2/2} e^{gamma Y} a
* Seneta-Heyde:   sqrt(k) times the gamma = 2 subcritical mass
* derivative:     sqrt(k) eps^2 (2k - Y) e^{2Y} a

Restricted versions multiply by barrier events on the radial profile
s -> h_{x,e^{-s}} over s in [k_x, k]:  G (h <= 2s + beta) and G' (the same
barrier lowered by sqrt(s) / (M log(2 + s)^2)), plus the filter
|x - x0| >= 1/M.

Three backends produce the local times:

``cascade``
    one exact radial cascade per grid centre, independent across centres.
    Exact marginal law per centre, no spatial coupling.  The grid is capped at
    ``max_cells`` centres.
``cascade-aggregate``
    the same independent-centre model evaluated on the full design grid
    without enumerating cells.  Per cell Y^2 is 0 with probability
    1 - log(R/d)/log(R/eps) and otherwise exponential with mean
    2 log(R/eps); the totals are a Gaussian sum over the light cells plus an
    exact draw of the heavy ones.  Unrestricted totals only.
``path``
    one Brownian path from x0, stopped at the exit of the domain and then
    continued to the exit of the disc of radius R around the domain centre.
    Circle local times at the coarse scales e^{-n}, n <= n1, come from the
    path by ring convolution of its occupation raster; finer scales are
    filled by independent cascades.  Joint at coarse scales.

R is the domain diameter.  Local times "stopped at tau_{x,R}" use the exit
of D(x, R) in the cascade backends and the exit of the common disc in the
path backend.
"""

from dataclasses import dataclass, field, asdict
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy.optimize import brentq
from scipy.signal import fftconvolve
from scipy.special import gammaincc, gammainccinv
from scipy.stats import poisson

from . import _kernels as K
from .bessel import besq_transition_density
from .domains import Disc, as_complex, domain_from_dict
from .localtimes import _shape_args, cascade_squared, interpolate_h
from .report import Battery, Verdict
from .rng import RngStream

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class SurrogateError(ValueError):
    """Only one stopping variant of the local times is available."""


def eps_gamma(gamma: float) -> float:
    """exp(-exp(2 / (2 - gamma))): below this eps the subcritical L^2 bounds apply."""
    if not gamma < 2:
        raise ValueError("gamma must be < 2")
    return math.exp(-math.exp(2.0 / (2.0 - gamma)))


def _k_of(eps: float) -> float:
    return abs(math.log(eps))


def measure_subcritical(L, gamma: float, eps: float, area):
    """sqrt|log eps| eps^{gamma^2/2} e^{gamma sqrt(L/eps)} * area, per cell."""
    if not 0 < gamma <= 2:
        raise ValueError("gamma must lie in (0, 2]")
    y = np.sqrt(np.asarray(L, dtype=float) / eps)
    return math.sqrt(_k_of(eps)) * eps ** (gamma * gamma / 2.0) * np.exp(gamma * y) * area


def measure_seneta_heyde(L, eps: float, area):
    """sqrt|log eps| times the gamma = 2 subcritical mass."""
    return math.sqrt(_k_of(eps)) * measure_subcritical(L, 2.0, eps, area)


def measure_derivative(L, eps: float, area):
    """sqrt|log eps| eps^2 (2 log(1/eps) - sqrt(L/eps)) e^{2 sqrt(L/eps)} * area."""
    k = _k_of(eps)
    y = np.sqrt(np.asarray(L, dtype=float) / eps)
    return math.sqrt(k) * eps * eps * (2.0 * k - y) * np.exp(2.0 * y) * area


def barrier_first(s, beta):
    return 2.0 * s + beta


def barrier_second(s, beta, M):
    s = np.asarray(s, dtype=float)
    return 2.0 * s + beta - np.sqrt(s) / (M * np.log(2.0 + s) ** 2)


def good_event_masks(h, s_grid, k_x, k: int, beta: float, M: float, dist):
    """Flags (G, G', far) per centre.

    ``h`` has shape (n, len(s_grid)); entries before k_x may be NaN.  Only
    s in [k_x, k] is checked; centres with k_x > k (start closer than eps)
    are unconstrained.  ``far`` is |x - x0| >= 1/M.
    """
    h = np.atleast_2d(np.asarray(h, dtype=float))
    s = np.asarray(s_grid, dtype=float)
    k_x = np.asarray(k_x)
    active = (s[None, :] >= k_x[:, None]) & (s[None, :] <= k + 1e-12)
    with np.errstate(invalid="ignore"):
        over1 = active & (h > barrier_first(s, beta)[None, :])
        over2 = active & (h > barrier_second(s, beta, M)[None, :])
    G = ~over1.any(axis=1)
    Gp = ~over2.any(axis=1)
    far = np.asarray(dist, dtype=float) >= 1.0 / M
    return G, Gp & G, far


def good_event_masks_from_profiles(profiles, eps: float, beta: float, M: float, x0):
    """Same flags computed from RadialProfile objects with ``h`` populated."""
    k = int(round(_k_of(eps)))
    out = []
    for p in profiles:
        if p.h is None:
            raise ValueError("profile has no interpolated field")
        d = abs(as_complex(p.center) - as_complex(x0))
        kx = p.k_x if p.k_x is not None else (max(0, math.ceil(-math.log(d) - 1e-12))
                                               if d > 0 else k + 1)
        G, Gp, far = good_event_masks(p.h[None, :], p.h_times, np.array([kx]), k, beta, M,
                                      np.array([d]))
        out.append((bool(G[0]), bool(Gp[0]), bool(far[0])))
    return out


def measure_derivative_restricted(L_tau, L_R, G, Gp, far, eps: float, beta: float, area,
                                  surrogate: bool = False):
    """Per-cell masses of the restricted derivative measure and its second layer.

    The linear factor uses L_R (local time up to the exit of D(x, R)), the
    exponential uses L_tau (up to the exit of the domain).  Passing
    ``L_tau=None`` requires ``surrogate=True`` and then uses L_R for both.
    """
    if L_tau is None:
        if not surrogate:
            raise SurrogateError("L_tau missing; pass surrogate=True to use L_R in its place")
        L_tau = L_R
    if L_R is None:
        raise SurrogateError("L_R is required for the linear factor")
    k = _k_of(eps)
    yR = np.sqrt(np.asarray(L_R, dtype=float) / eps)
    yT = np.sqrt(np.asarray(L_tau, dtype=float) / eps)
    dens = math.sqrt(k) * eps * eps * (-yR + 2.0 * k + beta) * np.exp(2.0 * yT) * area
    muhat = np.where(G, dens, 0.0)
    muhathat = np.where(np.asarray(Gp) & np.asarray(far), muhat, 0.0)
    return muhat, muhathat


# ---------------------------------------------------------------------------
# parameters, fields, totals


BACKENDS = ("cascade", "cascade-aggregate", "path", "path-aggregate")


@dataclass
class ChaosParams:
    gamma: float = 1.5
    ks: tuple = (6, 8, 10, 12)
    beta: float = 6.0
    M: float = 10.0
    domain: dict = field(default_factory=lambda: {"shape": "disc", "center": [0.0, 0.0],
                                                  "radius": 1.0})
    x0: tuple = (0.0, 0.0)
    backend: str = "cascade"
    spacing_factor: float = 1.0
    max_cells: int = 200_000
    sub: int = 4
    n1: int = 3
    path_dt: float = 1e-5
    pixel: float = 0.004
    heavy_target: int = 10_000
    gammas: tuple = (1.0, 1.5, 1.8)

    def __post_init__(self):
        if not 0 < self.gamma <= 2:
            raise ValueError("gamma must lie in (0, 2]")
        if self.beta <= 0 or self.M <= 0:
            raise ValueError("beta and M must be positive")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")
        self.ks = tuple(int(k) for k in self.ks)
        if any(k < 1 for k in self.ks):
            raise ValueError("depths must be positive integers")
        self.x0 = tuple(float(v) for v in self.x0)
        self.gammas = tuple(float(g) for g in self.gammas)
        dom = self.dom
        if not bool(dom.contains(np.array(self.x0))):
            raise ValueError("x0 must lie inside the domain")

    @property
    def dom(self):
        return domain_from_dict(self.domain)


@dataclass
class ChaosTotals:
    k: int
    gamma: float
    beta: float
    M: float
    backend: str
    m_gamma: float
    m2: float
    m: float
    mu: float
    mhat: float = math.nan
    mhathat: float = math.nan
    mhat_gamma: float = math.nan
    mhathat_gamma: float = math.nan
    muhat: float = math.nan
    muhathat: float = math.nan
    n_cells: float = 0
    spacing: float = 0.0
    capped: bool = False
    run: int = 0

    @property
    def ratio_sh_derivative(self) -> float:
        return self.m / self.mu if self.mu != 0 else math.nan

    @property
    def ratio_subcritical(self) -> float:
        if self.gamma >= 2 or self.mu == 0:
            return math.nan
        return self.m_gamma / ((2.0 - self.gamma) * self.mu)

    def csv_row(self) -> list:
        return [self.k, self.gamma, self.beta, self.M, self.m, self.mu, self.mhat, self.mhathat,
                self.ratio_sh_derivative, self.backend]


RUN_COLUMNS = ["k", "gamma", "beta", "M", "m_mass", "mu_mass", "mhat", "mhathat",
               "ratio_sh_derivative", "backend"]


@dataclass
class ChaosField:
    """Per-cell masses on a grid of centres for one depth k."""
    k: int
    gamma: float
    beta: float
    M: float
    centers: np.ndarray
    area: float
    L_tau: np.ndarray
    L_R: np.ndarray
    G: np.ndarray
    Gp: np.ndarray
    far: np.ndarray
    backend: str
    spacing: float
    capped: bool
    surrogate: bool

    def __post_init__(self):
        eps = math.exp(-self.k)
        a = self.area
        self.m_gamma = measure_subcritical(self.L_tau, self.gamma, eps, a)
        self.m2 = measure_subcritical(self.L_tau, 2.0, eps, a)
        self.m = math.sqrt(_k_of(eps)) * self.m2
        self.mu = measure_derivative(self.L_tau, eps, a)
        self.mhat = np.where(self.G, self.m, 0.0)
        self.mhathat = np.where(self.Gp & self.far, self.mhat, 0.0)
        self.mhat_gamma = np.where(self.G, self.m_gamma, 0.0)
        self.mhathat_gamma = np.where(self.Gp & self.far, self.mhat_gamma, 0.0)
        self.muhat, self.muhathat = measure_derivative_restricted(
            None if self.surrogate else self.L_tau, self.L_R, self.G, self.Gp, self.far, eps,
            self.beta, a, surrogate=self.surrogate)

    def region_mask(self, region=None):
        if region is None:
            return np.ones(len(self.centers), dtype=bool)
        return np.asarray(region(self.centers), dtype=bool)

    def totals(self, region=None, run: int = 0) -> ChaosTotals:
        sel = self.region_mask(region)
        s = {name: float(getattr(self, name)[sel].sum())
             for name in ("m_gamma", "m2", "m", "mu", "mhat", "mhathat", "mhat_gamma",
                          "mhathat_gamma", "muhat", "muhathat")}
        return ChaosTotals(self.k, self.gamma, self.beta, self.M, self.backend, n_cells=int(sel.sum()),
                           spacing=self.spacing, capped=self.capped, run=run, **s)


# ---------------------------------------------------------------------------
# grids


def design_spacing(eps: float, factor: float = 1.0) -> float:
    return factor * eps * abs(math.log(eps))


def center_grid(domain, spacing: float):
    """Cell centres of a square mesh whose cells lie inside the domain."""
    xmin, xmax, ymin, ymax = domain.bounding_box()
    xs = np.arange(xmin + spacing / 2, xmax, spacing)
    ys = np.arange(ymin + spacing / 2, ymax, spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = domain.distance_to_boundary(pts) >= spacing / math.sqrt(2.0)
    return pts[inside]


def chaos_grid(domain, eps: float, max_cells: int, factor: float = 1.0):
    """Design mesh of spacing factor * eps |log eps|, coarsened when it would
    exceed ``max_cells`` centres.  Returns (centres, spacing, capped)."""
    h = design_spacing(eps, factor)
    n_design = domain.area / h ** 2
    capped = n_design > max_cells
    if capped:
        h = math.sqrt(domain.area / max_cells)
    return center_grid(domain, h), h, capped


# ---------------------------------------------------------------------------
# cascade backend


def _k_index_array(d, k):
    with np.errstate(divide="ignore"):
        kx = np.ceil(-np.log(d) - 1e-12)
    kx = np.where(d > 0, np.maximum(kx, 0), k + 1)
    return np.where(d >= math.exp(-k), kx, k + 1).astype(int)


def radial_fields(d, k: int, R: float, sub: int, rng: RngStream):
    """Independent cascades for centres at distances ``d`` from the start.

    Returns (h on the grid s = j/sub, j = 0..k*sub, NaN before the seed
    scale; k_x per centre).  The seed scale is n0 = min(k_x, k); the seed is
    exponential with mean 2 log(R e^{n0}) (in squared-h units), thinned by the
    probability log(R/d) / log(R e^{n0}) of reaching that circle.
    """
    d = np.asarray(d, dtype=float)
    n = d.size
    kx = _k_index_array(d, k)
    n0 = np.minimum(kx, k)
    s_len = k * sub + 1
    h = np.full((n, s_len), np.nan)
    for start in np.unique(n0):
        idx = np.flatnonzero(n0 == start)
        rho = math.exp(-start)
        mean = 2.0 * math.log(R / rho)
        with np.errstate(divide="ignore"):
            p = np.where(d[idx] <= rho, 1.0, np.log(R / d[idx]) / math.log(R / rho))
        seed = rng.exponential(mean, size=idx.size)
        seed = np.where(rng.random(idx.size) < p, seed, 0.0)
        zsq = cascade_squared(seed, k - start, rng)
        h[idx, start * sub:] = interpolate_h(zsq, sub, rng)
    return h, kx


def cascade_field(params: ChaosParams, k: int, rng: RngStream) -> ChaosField:
    dom = params.dom
    eps = math.exp(-k)
    centers, spacing, capped = chaos_grid(dom, eps, params.max_cells, params.spacing_factor)
    x0 = np.asarray(params.x0)
    d = np.hypot(centers[:, 0] - x0[0], centers[:, 1] - x0[1])
    R = dom.diameter
    s_grid = np.arange(k * params.sub + 1) / params.sub
    G = np.empty(d.size, dtype=bool)
    Gp = np.empty(d.size, dtype=bool)
    far = np.empty(d.size, dtype=bool)
    L_R = np.empty(d.size)
    batch = 20_000
    for a in range(0, d.size, batch):
        sl = slice(a, a + batch)
        h, kx = radial_fields(d[sl], k, R, params.sub, rng)
        G[sl], Gp[sl], far[sl] = good_event_masks(h, s_grid, kx, k, params.beta, params.M, d[sl])
        L_R[sl] = eps * h[:, -1] ** 2
    return ChaosField(k, params.gamma, params.beta, params.M, centers, spacing ** 2, L_R, L_R,
                      G, Gp, far, "cascade", spacing, capped, surrogate=True)


# ---------------------------------------------------------------------------
# aggregate backend


def _ray_lengths(domain, x0, theta):
    """Distance from x0 to the boundary along each direction."""
    c = np.asarray(domain.center)
    v = np.asarray(x0, dtype=float) - c
    ux, uy = np.cos(theta), np.sin(theta)
    if isinstance(domain, Disc):
        b = v[0] * ux + v[1] * uy
        return -b + np.sqrt(b * b - (v @ v - domain.radius ** 2))
    hs = domain.half_side
    with np.errstate(divide="ignore"):
        tx = np.where(ux > 0, (hs - v[0]) / ux, np.where(ux < 0, (-hs - v[0]) / ux, np.inf))
        ty = np.where(uy > 0, (hs - v[1]) / uy, np.where(uy < 0, (-hs - v[1]) / uy, np.inf))
    return np.minimum(tx, ty)


def distance_bins(domain, x0, eps: float, margin: float, n_bins: int = 400, n_theta: int = 4096,
                  r_cap: float = math.inf):
    """Area of {y in domain shrunk by margin : |y - x0| in bin} for log-spaced bins
    up to ``r_cap``.

    Returns (representative distances, areas); the first bin is [0, eps).
    """
    theta = (np.arange(n_theta) + 0.5) * 2 * math.pi / n_theta
    rho = np.clip(_ray_lengths(domain, x0, theta) - margin, 0.0, None)
    r_max = min(rho.max(), r_cap)
    edges = np.concatenate([[0.0], np.geomspace(eps, max(r_max, eps * 1.0001), n_bins)])

    def A(r):
        return 0.5 * np.minimum(r, rho).__pow__(2).sum() * (2 * math.pi / n_theta)

    cum = np.array([A(r) for r in edges])
    areas = np.diff(cum)
    mids = np.concatenate([[eps / 2], np.sqrt(edges[1:-1] * edges[2:])])
    return mids, areas


@lru_cache(maxsize=None)
def _legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _gauss_moments(funcs, kp, y_star, n_nodes=256):
    """E[F 1{Y <= y*}] and E[F F^T 1{Y <= y*}] for Y^2 ~ Exp(mean 2 kp)."""
    nodes, weights = _legendre(n_nodes)
    y = 0.5 * y_star * (nodes + 1.0)
    w = 0.5 * y_star * weights * (y / kp) * np.exp(-y * y / (2.0 * kp))
    F = np.stack([f(y) for f in funcs])
    m1 = F @ w
    m2 = (F * w) @ F.T
    return m1, m2


def _moment_funcs(k, gammas):
    """Per-cell integrands as functions of Y = sqrt(L/eps): e^{2Y}, (2k - Y) e^{2Y}, e^{gamma Y}."""
    funcs = [lambda y: np.exp(2.0 * y), lambda y: (2.0 * k - y) * np.exp(2.0 * y)]
    funcs += [(lambda g: (lambda y: np.exp(g * y)))(g) for g in gammas]
    return funcs


def _gaussian_sum(light_n, mean_c, cov_c, rng):
    """Draw the sum over groups of light_n iid vectors with the given moments."""
    mean = (light_n[:, None] * mean_c).sum(axis=0)
    cov = np.einsum("i,ijk->jk", light_n.astype(float), cov_c)
    scale = np.sqrt(np.clip(np.diag(cov), 1e-300, None))
    corr = cov / np.outer(scale, scale)
    evals, evecs = np.linalg.eigh(corr)
    z = rng.standard_normal(len(mean))
    return mean + scale * (evecs @ (np.sqrt(np.clip(evals, 0, None)) * z))


def _marginal_sums(d, counts, R, eps, funcs, target, rng):
    """Sums of funcs(Y) over cells with the independent-centre marginal law.

    Per cell Y^2 is 0 with probability 1 - p(d) and otherwise exponential with
    mean 2 log(R/eps), p(d) = log(R/d) / log(R/eps) capped at 1.  Cells with
    Y > y* (chosen so that about ``target`` are expected) are drawn exactly;
    the rest enter through a Gaussian with matched mean and covariance.
    """
    kp = math.log(R / eps)
    with np.errstate(divide="ignore"):
        p = np.clip(np.log(R / d) / kp, 0.0, 1.0)
    expected = float((counts * p).sum())
    y_star = math.sqrt(2.0 * kp * math.log(expected / target)) if expected > target else 0.0
    q = math.exp(-y_star ** 2 / (2.0 * kp))
    F0 = np.array([f(np.zeros(1))[0] for f in funcs])
    if y_star > 0:
        e1, e2 = _gauss_moments(funcs, kp, y_star)
    else:
        e1, e2 = np.zeros(len(funcs)), np.zeros((len(funcs), len(funcs)))
    n_heavy = rng.binomial(counts, p * q)
    # per-cell law given "not heavy": zero w.p. (1-p)/(1-pq), light otherwise
    denom = 1.0 - p * q
    denom = np.where(denom > 0, denom, np.inf)   # such bins have no light cells
    mean_b = ((1.0 - p)[:, None] * F0[None, :] + p[:, None] * e1[None, :]) / denom[:, None]
    sec_b = ((1.0 - p)[:, None, None] * np.outer(F0, F0)[None] + p[:, None, None] * e2[None]) \
        / denom[:, None, None]
    cov_b = sec_b - mean_b[:, :, None] * mean_b[:, None, :]
    light = _gaussian_sum(counts - n_heavy, mean_b, cov_b, rng)
    yh = np.sqrt(y_star ** 2 + rng.exponential(2.0 * kp, size=int(n_heavy.sum())))
    return light + np.array([f(yh).sum() for f in funcs])


class _ConditionalLaw:
    """Law of Y = sqrt(Z_t) for BESQ^0 started at z, tabulated on a grid of sqrt(z)."""

    def __init__(self, u_max: float, t: float, n_grid: int = 513):
        self.t = float(t)
        self.u = np.linspace(0.0, max(u_max, 1e-9) * 1.0001, n_grid)
        self.du = self.u[1] - self.u[0]
        lam = self.u ** 2 / (2.0 * t)
        self.jmax = int(lam.max() + 12.0 * math.sqrt(lam.max()) + 40)
        self.j = np.arange(1, self.jmax + 1)
        self.pois = poisson.pmf(self.j[None, :], lam[:, None])

    def _locate(self, u):
        x = np.clip(np.asarray(u) / self.du, 0, len(self.u) - 1 - 1e-9)
        i = x.astype(int)
        return i, x - i

    def interp(self, table, u):
        i, f = self._locate(u)
        f = f.reshape(f.shape + (1,) * (table.ndim - 1))
        return table[i] * (1.0 - f) + table[i + 1] * f

    def tail_table(self, y_star: float):
        """P(Y > y*) on the grid (y* = 0 means P(Y > 0))."""
        return self.pois @ gammaincc(self.j, y_star ** 2 / (2.0 * self.t))

    def moment_tables(self, funcs, y_star: float, n_nodes: int = 256):
        """E[F(Y) 1{Y <= y*}] and E[F F^T 1{Y <= y*}] on the grid."""
        F0 = np.array([f(np.zeros(1))[0] for f in funcs])
        p0 = np.exp(-self.u ** 2 / (2.0 * self.t))
        m1 = p0[:, None] * F0[None, :]
        m2 = p0[:, None, None] * np.outer(F0, F0)[None]
        if y_star > 0:
            nodes, weights = _legendre(n_nodes)
            y = 0.5 * y_star * (nodes + 1.0)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                logq = besq_transition_density(self.u[:, None] ** 2, y[None, :] ** 2, self.t,
                                               0.0).log_density
            w = 0.5 * y_star * weights[None, :] * 2.0 * y[None, :] * np.exp(logq)
            F = np.stack([f(y) for f in funcs])
            m1 = m1 + w @ F.T
            m2 = m2 + np.einsum("un,an,bn->uab", w, F, F)
        return m1, m2

    def sample_tail(self, z, y_star: float, rng):
        """Exact draws of Y given Y > y* from starts z."""
        z = np.asarray(z, dtype=float)
        if z.size == 0:
            return z
        lam = z / (2.0 * self.t)
        c = y_star ** 2 / (2.0 * self.t)
        Qj = gammaincc(self.j, c)
        w = poisson.pmf(self.j[None, :], lam[:, None]) * Qj[None, :]
        cdf = np.cumsum(w, axis=1)
        cdf /= cdf[:, -1:]
        idx = (cdf < rng.random(z.size)[:, None]).sum(axis=1)
        idx = np.minimum(idx, self.jmax - 1)
        jj = self.j[idx]
        x = gammainccinv(jj, rng.random(z.size) * Qj[idx])
        return np.sqrt(2.0 * self.t * x)


def _conditional_sums(z, counts, t, funcs, target, rng):
    """Sums of funcs(Y) over ``counts[i]`` cells per start z[i], each cell with an
    independent BESQ^0 run of duration t from z[i] (Y = sqrt of the end value).

    Heavy cells (Y > y*, about ``target`` expected) are drawn exactly, the rest
    through a Gaussian with interpolated conditional moments.
    """
    u = np.sqrt(np.asarray(z, dtype=float))
    counts = np.asarray(counts)
    law = _ConditionalLaw(u.max() if u.size else 0.0, t)

    def expected(y):
        return float((counts * np.clip(law.interp(law.tail_table(y), u), 0, 1)).sum())

    if expected(0.0) <= target:
        y_star = 0.0
    else:
        hi = u.max() + 12.0 * math.sqrt(t) + 10.0
        y_star = brentq(lambda y: expected(y) - target, 0.0, hi, xtol=1e-6)
    q = np.clip(law.interp(law.tail_table(y_star), u), 0.0, 1.0)
    m1, m2 = law.moment_tables(funcs, y_star)
    n_heavy = rng.binomial(counts, q)
    keep = np.where(1.0 - q > 0, 1.0 - q, np.inf)
    mean_c = law.interp(m1, u) / keep[:, None]
    cov_c = law.interp(m2, u) / keep[:, None, None] - mean_c[:, :, None] * mean_c[:, None, :]
    light = _gaussian_sum(counts - n_heavy, mean_c, cov_c, rng)
    yh = law.sample_tail(np.repeat(np.asarray(z, dtype=float), n_heavy), y_star, rng)
    return light + np.array([f(yh).sum() for f in funcs])


def _totals_from_sums(S, params, k, gammas, area, backend, n_cells, spacing, capped, run):
    eps = math.exp(-k)
    sk = math.sqrt(_k_of(eps))
    m2 = sk * eps ** 2 * area * S[0]
    mu = sk * eps ** 2 * area * S[1]
    out = []
    for j, g in enumerate(gammas):
        mg = sk * eps ** (g * g / 2.0) * area * S[2 + j]
        out.append(ChaosTotals(k, g, params.beta, params.M, backend, mg, m2, sk * m2, mu,
                               n_cells=float(n_cells), spacing=spacing, capped=capped, run=run))
    return out


def aggregate_totals(params: ChaosParams, k: int, rng: RngStream, gammas=None, run: int = 0):
    """Totals of the independent-centre model on the uncapped design grid.

    Returns one ChaosTotals per gamma in ``gammas`` (default: params.gamma);
    all share the same sampled field.
    """
    gammas = (params.gamma,) if gammas is None else tuple(gammas)
    dom = params.dom
    eps = math.exp(-k)
    h = design_spacing(eps, params.spacing_factor)
    d, areas = distance_bins(dom, params.x0, eps, h / math.sqrt(2.0))
    counts = np.round(areas / h ** 2).astype(np.int64)
    S = _marginal_sums(d, counts, dom.diameter, eps, _moment_funcs(k, gammas),
                       params.heavy_target, rng)
    return _totals_from_sums(S, params, k, gammas, h * h, "cascade-aggregate", counts.sum(), h,
                             False, run)


# ---------------------------------------------------------------------------
# path backend


def ring_kernel(rho: float, half_width: float, pix: float, oversample: int = 8):
    """Pixel weights of the shell [rho - w, rho + w], divided by 2w.

    Weights are area fractions from an oversampled pixel grid, rescaled so
    the kernel integrates the exact shell area.
    """
    n = int(math.ceil((rho + half_width) / pix)) + 1
    offs = (np.arange(oversample) + 0.5) / oversample - 0.5
    c = np.arange(-n, n + 1) * pix
    fx = (c[:, None] + offs[None, :] * pix).ravel()
    X, Y = np.meshgrid(fx, fx, indexing="ij")
    r = np.hypot(X, Y)
    inside = ((r >= rho - half_width) & (r <= rho + half_width)).astype(float)
    m = 2 * n + 1
    frac = inside.reshape(m, oversample, m, oversample).mean(axis=(1, 3))
    exact = math.pi * ((rho + half_width) ** 2 - max(rho - half_width, 0.0) ** 2)
    frac *= exact / (frac.sum() * pix * pix)
    return frac / (2.0 * half_width)


@dataclass
class PathRasters:
    occ_tau: np.ndarray
    occ_extra: np.ndarray
    xmin: float
    ymin: float
    pix: float
    tau: float
    t2: float


def simulate_rasters(params: ChaosParams, rng: RngStream, max_steps: int = 400_000_000):
    dom = params.dom
    shape, cx, cy, size = _shape_args(dom)
    R = dom.diameter
    pix = params.pixel
    xmin, ymin = cx - R, cy - R
    n = int(math.ceil(2 * R / pix))
    ra, rb, t1, t2, done = K.walk_raster(params.x0[0], params.x0[1], params.path_dt, shape, cx,
                                         cy, size, cx, cy, R, xmin, ymin, pix, n, n, max_steps,
                                         rng)
    if not done:
        raise RuntimeError("path did not leave the outer disc within max_steps")
    return PathRasters(ra, rb, xmin, ymin, pix, t1, t2)


def coarse_local_times(rasters: PathRasters, centers, scales):
    """Local times of the circles of radius e^{-n}, n in ``scales``, around
    each centre: arrays (n_centres, n_scales) for the two stopping times."""
    pix = rasters.pix
    ii = np.clip(np.floor((centers[:, 0] - rasters.xmin) / pix).astype(int), 0,
                 rasters.occ_tau.shape[0] - 1)
    jj = np.clip(np.floor((centers[:, 1] - rasters.ymin) / pix).astype(int), 0,
                 rasters.occ_tau.shape[1] - 1)
    both = rasters.occ_tau + rasters.occ_extra
    Lt = np.empty((len(centers), len(scales)))
    LR = np.empty_like(Lt)
    for j, n in enumerate(scales):
        rho = math.exp(-n)
        w = max(rho / 10.0, 1.5 * pix)
        ker = ring_kernel(rho, w, pix)
        Lt[:, j] = fftconvolve(rasters.occ_tau, ker, mode="same")[ii, jj]
        LR[:, j] = fftconvolve(both, ker, mode="same")[ii, jj]
    return np.clip(Lt, 0, None), np.clip(LR, 0, None)


def path_field(params: ChaosParams, k: int, rng: RngStream, rasters: PathRasters | None = None):
    """Joint-at-coarse-scales field for one depth (see module docstring)."""
    dom = params.dom
    eps = math.exp(-k)
    n1 = min(params.n1, k)
    sub = params.sub
    if rasters is None:
        rasters = simulate_rasters(params, rng)
    centers, spacing, capped = chaos_grid(dom, eps, params.max_cells, params.spacing_factor)
    x0 = np.asarray(params.x0)
    d = np.hypot(centers[:, 0] - x0[0], centers[:, 1] - x0[1])
    R = dom.diameter
    kx = _k_index_array(d, k)
    scales = list(range(0, n1 + 1))
    # the tau raster only holds occupation before the exit, so circles that
    # cross the boundary keep their (partial) tau-local time
    Lt, LR = coarse_local_times(rasters, centers, scales)
    Lt = np.minimum(Lt, LR)
    s_grid = np.arange(k * sub + 1) / sub
    n = len(centers)
    G = np.empty(n, dtype=bool)
    Gp = np.empty(n, dtype=bool)
    far = np.empty(n, dtype=bool)
    L_tau = np.empty(n)
    L_R = np.empty(n)
    coupled = kx <= n1
    # centres close to the start: independent cascade, tau-local time := R-local time
    idx = np.flatnonzero(~coupled)
    if idx.size:
        h, kxi = radial_fields(d[idx], k, R, sub, rng)
        G[idx], Gp[idx], far[idx] = good_event_masks(h, s_grid, kxi, k, params.beta, params.M,
                                                     d[idx])
        L_R[idx] = eps * h[:, -1] ** 2
        L_tau[idx] = L_R[idx]
    idx = np.flatnonzero(coupled)
    batch = 20_000
    for a in range(0, idx.size, batch):
        ib = idx[a:a + batch]
        z_tau = math.exp(n1) * Lt[ib, -1]
        z_ext = math.exp(n1) * (LR[ib, -1] - Lt[ib, -1])
        ct = cascade_squared(z_tau, k - n1, rng)
        ce = cascade_squared(z_ext, k - n1, rng)
        zR = np.empty((ib.size, k + 1))
        zR[:, :n1 + 1] = LR[ib] * np.exp(np.arange(n1 + 1))[None, :]
        zR[:, n1:] = ct + ce
        h = interpolate_h(zR, sub, rng)
        # interpolation must not move the integer pins
        h[:, ::sub] = np.sqrt(zR)
        for m in np.unique(kx[ib]):
            if m > 0:
                h[np.flatnonzero(kx[ib] == m)[:, None], np.arange(m * sub)[None, :]] = np.nan
        G[ib], Gp[ib], far[ib] = good_event_masks(h, s_grid, kx[ib], k, params.beta, params.M,
                                                  d[ib])
        L_tau[ib] = eps * ct[:, -1]
        L_R[ib] = eps * zR[:, -1]
    return ChaosField(k, params.gamma, params.beta, params.M, centers, spacing ** 2, L_tau, L_R,
                      G, Gp, far, "path", spacing, capped, surrogate=False)


def coupling_scale(spacing: float, n1: int, k: int) -> int:
    """Deepest integer scale at which a mesh cell of this size still acts as one point."""
    return int(min(max(n1, math.floor(-math.log(spacing))), k - 1))


def path_aggregate_totals(params: ChaosParams, k: int, rng: RngStream,
                          rasters: PathRasters | None = None, gammas=None, run: int = 0):
    """Totals on the full design grid with coarse scales taken from one path.

    Coarse mesh centres get the tau-stopped local time at scale n1 from the
    path raster, continued by one cascade per centre down to the coupling
    scale of the coarse mesh.  Below that scale the design cells inside each
    coarse cell evolve independently and are summed through
    :func:`_conditional_sums`.  The disc of radius e^{-n1} around x0 uses the
    independent-centre marginal law instead.
    """
    gammas = (params.gamma,) if gammas is None else tuple(gammas)
    dom = params.dom
    eps = math.exp(-k)
    n1 = min(params.n1, k - 1)
    if rasters is None:
        rasters = simulate_rasters(params, rng)
    h = design_spacing(eps, params.spacing_factor)
    centers, H, capped = chaos_grid(dom, eps, params.max_cells, params.spacing_factor)
    x0 = np.asarray(params.x0)
    d = np.hypot(centers[:, 0] - x0[0], centers[:, 1] - x0[1])
    r_near = math.exp(-n1)
    far = d >= r_near
    n_c = coupling_scale(H, n1, k)
    Lt, _ = coarse_local_times(rasters, centers[far], [n1])
    z = cascade_squared(math.exp(n1) * Lt[:, 0], n_c - n1, rng)[:, -1]
    per_cell = max(1, int(round((H / h) ** 2)))
    funcs = _moment_funcs(k, gammas)
    S_far = _conditional_sums(z, np.full(z.size, per_cell), k - n_c, funcs, params.heavy_target,
                              rng)
    dn, areas = distance_bins(dom, params.x0, eps, h / math.sqrt(2.0), r_cap=r_near)
    counts = np.round(areas / h ** 2).astype(np.int64)
    S_near = _marginal_sums(dn, counts, dom.diameter, eps, funcs, params.heavy_target, rng)
    # far cells carry the coarse area split evenly, near cells the design area
    far_tot = _totals_from_sums(S_far, params, k, gammas, H * H / per_cell, "path-aggregate",
                                z.size * per_cell, H, capped, run)
    near_tot = _totals_from_sums(S_near, params, k, gammas, h * h, "path-aggregate",
                                 counts.sum(), h, capped, run)
    out = []
    for a, b in zip(far_tot, near_tot):
        vals = {f: getattr(a, f) + getattr(b, f)
                for f in ("m_gamma", "m2", "m", "mu", "n_cells")}
        out.append(ChaosTotals(**{**asdict(a), **vals}))
    return out


def chaos_field(params: ChaosParams, k: int, rng: RngStream) -> ChaosField:
    if params.backend == "cascade":
        return cascade_field(params, k, rng)
    if params.backend == "path":
        return path_field(params, k, rng)
    raise ValueError("the aggregate backend has no per-cell field; use aggregate_totals")


def run_totals(params: ChaosParams, rng: RngStream, run: int = 0, gammas=None) -> list:
    """Totals for every depth in params.ks (and every gamma in ``gammas``)
    from one realisation.  The path backend shares one path across depths."""
    gammas = (params.gamma,) if gammas is None else tuple(gammas)
    out = []
    rasters = (simulate_rasters(params, rng) if params.backend in ("path", "path-aggregate")
               else None)
    for k in params.ks:
        if params.backend == "cascade-aggregate":
            out.extend(aggregate_totals(params, k, rng, gammas, run))
            continue
        if params.backend == "path-aggregate":
            out.extend(path_aggregate_totals(params, k, rng, rasters, gammas, run))
            continue
        fld = (path_field(params, k, rng, rasters) if params.backend == "path"
               else cascade_field(params, k, rng))
        base = fld.totals(run=run)
        for g in gammas:
            eps = math.exp(-k)
            mg = float(measure_subcritical(fld.L_tau, g, eps, fld.area).sum())
            mhg = float(np.where(fld.G, measure_subcritical(fld.L_tau, g, eps, fld.area),
                                 0.0).sum())
            mhhg = float(np.where(fld.G & fld.Gp & fld.far,
                                  measure_subcritical(fld.L_tau, g, eps, fld.area), 0.0).sum())
            t = ChaosTotals(**{**asdict(base), "gamma": g, "m_gamma": mg, "mhat_gamma": mhg,
                               "mhathat_gamma": mhhg})
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# diagnostics


def _median(vals):
    v = np.asarray([x for x in vals if np.isfinite(x)], dtype=float)
    return float(np.median(v)) if v.size else math.nan


def convergence_diagnostics(totals, gamma_check: float = 1.5, sh_band=(0.55, 1.05),
                            sub_band=(1.3, 2.7), sh_spread: float = 3.0,
                            checks=("decay", "ratio")) -> Battery:
    """Ensemble verdicts over runs of :class:`ChaosTotals`.

    ``decay``: median of the gamma = 2 mass strictly decreasing in k, and the
    Seneta-Heyde median varying by less than a factor ``sh_spread``.
    ``ratio``: median m/mu at the deepest k inside ``sh_band`` and closer to
    sqrt(2/pi) than at the shallowest k; the same for (2 - gamma)^{-1} m^gamma/mu
    at ``gamma_check`` with ``sub_band`` and target 2.  All bands are
    engineering choices.  Medians per (k, gamma) are tabulated.
    """
    totals = list(totals)
    ks = sorted({t.k for t in totals})
    if len(ks) < 2:
        raise ValueError("need at least two depths")
    by = {}
    for t in totals:
        by.setdefault((t.k, t.gamma), []).append(t)
    gs = sorted({t.gamma for t in totals})
    g_any = min(gs, key=lambda g: abs(g - gamma_check))

    def med(k, g, attr):
        return _median([getattr(t, attr) for t in by.get((k, g), [])])

    runs = [t.csv_row() for t in totals]
    med_rows = []
    for k in ks:
        for g in gs:
            med_rows.append([k, g, len(by.get((k, g), [])), med(k, g, "m2"), med(k, g, "m"),
                             med(k, g, "mu"), med(k, g, "ratio_sh_derivative"),
                             med(k, g, "ratio_subcritical"),
                             float(math.exp(-k) < eps_gamma(g)) if g < 2 else math.nan])
    out = Battery(tables={
        "chaos_runs": (RUN_COLUMNS, runs),
        "chaos_medians": (["k", "gamma", "runs", "m2", "m", "mu", "ratio_sh_derivative",
                           "ratio_subcritical", "eps_below_eps_gamma"], med_rows)})
    lo_k, hi_k = ks[0], ks[-1]
    n_runs = len(by.get((hi_k, g_any), []))
    if "decay" in checks:
        m2 = [med(k, g_any, "m2") for k in ks]
        msh = [med(k, g_any, "m") for k in ks]
        dec = bool(np.all(np.diff(m2) < 0))
        out.verdicts.append(Verdict(
            "critical mass median decreasing in k", m2[-1], min(m2), max(m2), None, dec, n_runs,
            note="medians " + " ".join(f"k={k}:{v:.4g}" for k, v in zip(ks, m2))))
        spread = max(msh) / min(msh) if min(msh) > 0 else math.inf
        out.verdicts.append(Verdict(
            "Seneta-Heyde median spread", spread, min(msh), max(msh), sh_spread,
            spread < sh_spread, n_runs,
            note="medians " + " ".join(f"k={k}:{v:.4g}" for k, v in zip(ks, msh))))
    if "ratio" in checks:
        r_lo = med(lo_k, g_any, "ratio_sh_derivative")
        r_hi = med(hi_k, g_any, "ratio_sh_derivative")
        ok = (sh_band[0] <= r_hi <= sh_band[1]
              and abs(r_hi - SQRT_2_OVER_PI) < abs(r_lo - SQRT_2_OVER_PI))
        out.verdicts.append(Verdict(f"median m/mu at k={hi_k}", r_hi, min(r_lo, r_hi),
                                    max(r_lo, r_hi), SQRT_2_OVER_PI, ok, n_runs,
                                    note=f"k={lo_k}:{r_lo:.4g} band={list(sh_band)}"))
        if abs(g_any - gamma_check) < 1e-12 and g_any < 2:
            s_lo = med(lo_k, g_any, "ratio_subcritical")
            s_hi = med(hi_k, g_any, "ratio_subcritical")
            ok = sub_band[0] <= s_hi <= sub_band[1] and abs(s_hi - 2.0) < abs(s_lo - 2.0)
            note = f"k={lo_k}:{s_lo:.4g} band={list(sub_band)}"
            if math.exp(-hi_k) >= eps_gamma(g_any):
                note += f" eps=e^-{hi_k} not below eps_gamma={eps_gamma(g_any):.3g}"
            out.verdicts.append(Verdict(
                f"median (2-gamma)^-1 m^gamma/mu at k={hi_k} gamma={g_any:g}", s_hi,
                min(s_lo, s_hi), max(s_lo, s_hi), 2.0, ok, n_runs, note=note))
        else:
            out.verdicts.append(Verdict(f"median (2-gamma)^-1 m^gamma/mu gamma={gamma_check:g}",
                                        math.nan, math.nan, math.nan, 2.0, False, 0,
                                        note="gamma not in the ensemble"))
    return out
