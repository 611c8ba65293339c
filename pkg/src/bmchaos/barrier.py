"""Monte Carlo checks of the one-dimensional estimates behind the chaos
construction: barrier events for Brownian motion and Bessel processes, the
Girsanov transfer from dimension 0 to Brownian motion, moments of the 3D
Bessel process, the wrapped angular density of the skew product, and an
exit-angle decoupling experiment.

Every Monte Carlo routine returns a :class:`Verdict` carrying the estimate,
a 95% interval, the target and the sample size.
"""

from dataclasses import dataclass, field
import math
import time
import warnings

import numpy as np

from . import _kernels as K
from .bessel import PrecisionWarning, besq_transition_density, besq_transition_sample, pitman_bridge_squared
from .report import Verdict, normal_ci
from .rng import RngStream

VerificationVerdict = Verdict

_KINDS = {"inf": K.BARRIER_INF, "linear": K.BARRIER_LINEAR, "log": K.BARRIER_LOG,
          "critical": K.BARRIER_CRITICAL}


class BridgeCorrectionWarning(RuntimeWarning):
    """The barrier bends too much over one step for the crossing correction."""


def bm_linear_barrier_closed_form(a: float, c: float) -> float:
    """P_0(X_s < c s + a for all s >= 0) = 1 - exp(-2 a c)."""
    if a < 0 or c < 0:
        raise ValueError("intercept and slope must be nonnegative")
    return -math.expm1(-2.0 * a * c)


@dataclass
class BarrierSpec:
    """Barrier b(s) and the event it defines.

    kind "linear": a + c s.  kind "log": K + coef log(1 + s) + slope s.
    kind "critical": 2 s + beta - sqrt(s) / (M log(2 + s)^2).  kind "inf": no
    barrier.  Mode "continuous" asks for X_s < b(s) for all s <= horizon;
    mode "minima" asks for min_{[k, k+1]} X <= b(k) for k = 0 .. horizon - 1.
    """
    kind: str = "linear"
    params: dict = field(default_factory=dict)
    horizon: float = 40.0
    mode: str = "continuous"
    analytic_tail: bool = True
    biased: bool = False

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if self.mode not in ("continuous", "minima"):
            raise ValueError(f"unknown barrier mode {self.mode!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        need = {"inf": (), "linear": ("a", "c"), "log": ("K", "coef"),
                "critical": ("beta", "M")}[self.kind]
        missing = [k for k in need if k not in self.params]
        if missing:
            raise ValueError(f"barrier {self.kind} needs parameter(s) {missing}")
        if self.mode == "minima" and float(self.horizon) != int(self.horizon):
            raise ValueError("minima mode needs an integer horizon")

    def vector(self) -> np.ndarray:
        p = self.params
        if self.kind == "linear":
            return np.array([p["a"], p["c"], 0.0])
        if self.kind == "log":
            return np.array([p["K"], p["coef"], p.get("slope", 0.0)])
        if self.kind == "critical":
            return np.array([p["beta"], p["M"], 0.0])
        return np.zeros(3)

    def value(self, s) -> float:
        return K.barrier_value(_KINDS[self.kind], self.vector(), float(s))

    def max_slope(self) -> float:
        p = self.params
        if self.kind == "linear":
            return abs(p["c"])
        if self.kind == "log":
            return abs(p["coef"]) + abs(p.get("slope", 0.0))
        if self.kind == "critical":
            # derivative of sqrt(s) is unbounded at 0; use the slope over [0, 1e-3]
            return 2.0 + math.sqrt(1e-3) / (p["M"] * math.log(2.0) ** 2) / 1e-3
        return 0.0


@dataclass
class ProcessSpec:
    """kind "bm" (from x0), "bm-with-drift" (drift gamma) or "bessel" (d, r0)."""
    kind: str = "bm"
    gamma: float = 0.0
    d: float = 3.0
    r0: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("bm", "bm-with-drift", "bessel"):
            raise ValueError(f"unknown process {self.kind!r}")


def _bernoulli_verdict(name, weights, target, passed, note="", t0=None):
    w = np.asarray(weights, dtype=float)
    m = float(w.mean())
    se = float(w.std(ddof=1) / math.sqrt(w.size)) if w.size > 1 else math.inf
    lo, hi = normal_ci(m, se)
    return Verdict(name, m, max(lo, 0.0), min(hi, 1.0), target, passed(m, se), w.size,
                   runtime=0.0 if t0 is None else time.perf_counter() - t0, note=note)


def barrier_weights(spec: BarrierSpec, process: ProcessSpec, n_paths: int, dt: float,
                    rng: RngStream, h_max: float = 0.25, tol: float | None = None) -> np.ndarray:
    """Per-path conditional probabilities of the barrier event (their mean
    is the estimate)."""
    kind = _KINDS[spec.kind]
    p = spec.vector()
    if spec.kind == "inf":
        return np.ones(n_paths)
    if spec.mode == "minima":
        if process.kind == "bessel":
            raise ValueError("minima mode is implemented for Brownian motion only")
        drift = process.gamma if process.kind == "bm-with-drift" else 0.0
        return K.minima_barrier_bm(n_paths, int(spec.horizon), process.x0, drift, kind, p, rng)
    if not dt <= 1e-3:
        raise ValueError("continuous mode needs dt <= 1e-3")
    if spec.max_slope() * math.sqrt(dt) > 0.5:
        warnings.warn("barrier moves by more than half a standard deviation per step; "
                      "the crossing correction is unreliable", BridgeCorrectionWarning,
                      stacklevel=3)
    if process.kind == "bessel":
        return K.sup_barrier_bessel(n_paths, process.r0, process.d, kind, p, float(spec.horizon),
                                    dt, False, rng)
    drift = process.gamma if process.kind == "bm-with-drift" else 0.0
    tail = p[1] if (spec.kind == "linear" and spec.analytic_tail) else 0.0
    tol = dt if tol is None else tol
    if spec.biased:
        h_max = dt
    w, _ = K.sup_barrier_bm(n_paths, process.x0, drift, kind, p, float(spec.horizon), dt,
                            max(h_max, dt), tol, tail, not spec.biased, rng)
    return w


def mc_barrier_probability(spec: BarrierSpec, process: ProcessSpec, n_paths: int, dt: float,
                           rng: RngStream, target: float | None = None, band: float = 0.01,
                           name: str = "barrier") -> Verdict:
    """Monte Carlo barrier probability; passes when within ``band`` of ``target``."""
    t0 = time.perf_counter()
    w = barrier_weights(spec, process, n_paths, dt, rng)
    note = f"{spec.kind}/{spec.mode} horizon={spec.horizon:g}"
    if spec.kind == "linear" and spec.analytic_tail and spec.mode == "continuous":
        note += " +analytic tail"
    if target is None:
        return _bernoulli_verdict(name, w, None, lambda m, se: True, note, t0)
    return _bernoulli_verdict(name, w, target, lambda m, se: abs(m - target) <= band, note, t0)


def linear_barrier_check(a: float, c: float, n_paths: int, rng: RngStream, horizon=40.0,
                         dt=1e-3, band=0.01) -> Verdict:
    spec = BarrierSpec("linear", {"a": a, "c": c}, horizon)
    return mc_barrier_probability(spec, ProcessSpec("bm"), n_paths, dt, rng,
                                  bm_linear_barrier_closed_form(a, c), band,
                                  name=f"linear barrier a={a:g} c={c:g}")


# ---------------------------------------------------------------------------
# scaling exponents


def fit_log_slope(xs, probs, ses):
    """Least-squares slope of log p against log x with a delta-method error."""
    lx = np.log(np.asarray(xs, dtype=float))
    p = np.asarray(probs, dtype=float)
    if np.any(p <= 0):
        return math.nan, math.inf
    ly = np.log(p)
    sy = np.asarray(ses, dtype=float) / p
    xc = lx - lx.mean()
    slope = float((xc * (ly - ly.mean())).sum() / (xc ** 2).sum())
    se = float(math.sqrt(((xc / (xc ** 2).sum()) ** 2 * sy ** 2).sum()))
    return slope, se


def minima_event_probabilities(n_values, K_level: float, gamma: float | None, n_paths: int,
                               rng: RngStream, n_fixed: int | None = None):
    """P(for all k < n: min_{[k,k+1]} X <= (2 - gamma) k + 2 log(1 + k) + K).

    With ``gamma`` None the linear part is dropped.  Returns means and
    standard errors per entry of ``n_values``.
    """
    means, ses = [], []
    for n in n_values:
        slope = 0.0 if gamma is None else 2.0 - gamma
        spec = BarrierSpec("log", {"K": K_level, "coef": 2.0, "slope": slope},
                           horizon=int(n if n_fixed is None else n_fixed), mode="minima")
        w = barrier_weights(spec, ProcessSpec("bm"), n_paths, 1.0, rng)
        means.append(float(w.mean()))
        ses.append(float(w.std(ddof=1) / math.sqrt(n_paths)))
    return np.array(means), np.array(ses)


def barrier_n_exponent(n_values=(16, 64, 256), K_level=2.0, n_paths=100_000, rng=None,
                       target=-0.5, band=0.1) -> Verdict:
    t0 = time.perf_counter()
    m, se = minima_event_probabilities(n_values, K_level, None, n_paths, rng)
    slope, sse = fit_log_slope(n_values, m, se)
    note = "P=" + ",".join(f"{v:.4g}" for v in m)
    return Verdict("barrier n-exponent", slope, slope - 1.96 * sse, slope + 1.96 * sse, target,
                   abs(slope - target) <= band, n_paths * len(n_values),
                   runtime=time.perf_counter() - t0, note=note)


def barrier_gamma_exponent(gammas=(1.5, 1.75, 1.9), K_level=2.0, n_paths=100_000, rng=None,
                           target=1.0, band=0.15, n_rule="minimal") -> Verdict:
    """Fitted exponent of (2 - gamma) for the drifted minima event.

    ``n_rule`` "minimal" uses n = ceil((2 - gamma)^-4) per gamma (the
    smallest admissible horizon); "common" uses the largest of those for
    every gamma.
    """
    t0 = time.perf_counter()
    ns = [math.ceil((2.0 - g) ** -4 - 1e-9) for g in gammas]
    means, ses = [], []
    for g, n in zip(gammas, ns):
        horizon = n if n_rule == "minimal" else max(ns)
        m, s = minima_event_probabilities([horizon], K_level, g, n_paths, rng)
        means.append(m[0])
        ses.append(s[0])
    slope, sse = fit_log_slope([2.0 - g for g in gammas], means, ses)
    note = "P=" + ",".join(f"{v:.4g}" for v in means) + f" n_rule={n_rule}"
    return Verdict("barrier (2-gamma)-exponent", slope, slope - 1.96 * sse, slope + 1.96 * sse,
                   target, abs(slope - target) <= band, n_paths * len(gammas),
                   runtime=time.perf_counter() - t0, note=note)


# ---------------------------------------------------------------------------
# angular density of the skew product


def _fourier_terms(t: float, tol: float = 1e-17) -> int:
    # smallest P with exp(-P^2 t / 2) below tol
    return max(6, int(math.ceil(math.sqrt(-2.0 * math.log(tol) / t))) + 1)


def angle_density_fourier(theta, theta0: float, t: float, n_terms: int | None = None):
    """Fourier series of the wrapped heat kernel and its truncation bound."""
    if not t > 0:
        raise ValueError("t must be positive")
    P = _fourier_terms(t) if n_terms is None else int(n_terms)
    th = np.asarray(theta, dtype=float) - theta0
    p = np.arange(1, P + 1)
    decay = np.exp(-p ** 2 * t / 2.0)
    vals = (1.0 + 2.0 * np.cos(np.multiply.outer(th, p)) @ decay) / (2.0 * math.pi)
    tail_p = np.arange(P + 1, P + 200)
    bound = float(np.exp(-tail_p ** 2 * t / 2.0).sum() / math.pi)
    return vals, bound


def angle_density_wrapped(theta, theta0: float, t: float, n_images: int | None = None):
    """Sum of Gaussian images over the circle."""
    if not t > 0:
        raise ValueError("t must be positive")
    if n_images is None:
        n_images = int(math.ceil(math.sqrt(t) * 9.0 / (2 * math.pi))) + 2
    th = np.asarray(theta, dtype=float) - theta0
    th = np.mod(th + math.pi, 2.0 * math.pi) - math.pi
    n = np.arange(-n_images, n_images + 1)
    arg = np.add.outer(th, 2.0 * math.pi * n)
    return np.exp(-arg ** 2 / (2.0 * t)).sum(axis=-1) / math.sqrt(2.0 * math.pi * t)


def angle_density(theta, theta0: float, t: float):
    return angle_density_fourier(theta, theta0, t)[0]


def uniform_deviation_bound(t: float) -> float:
    """(1/pi) sum_{p >= 1} exp(-p^2 t / 2)."""
    p = np.arange(1, _fourier_terms(t) + 50)
    return float(np.exp(-p ** 2 * t / 2.0).sum() / math.pi)


def poisson_summation_check(t_values=None, n_angles=1000, tol=1e-10, tol_mass=1e-8) -> list:
    from scipy.integrate import quad
    t0 = time.perf_counter()
    t_values = np.linspace(0.5, 5.0, 10) if t_values is None else np.asarray(t_values)
    theta = np.linspace(-math.pi, math.pi, n_angles)
    worst = 0.0
    worst_mass = 0.0
    for t in t_values:
        a = angle_density_fourier(theta, 0.3, t)[0]
        b = angle_density_wrapped(theta, 0.3, t)
        worst = max(worst, float(np.abs(a - b).max()))
        mass, _ = quad(lambda u: float(angle_density(u, 0.3, t)), 0.0, 2 * math.pi,
                       epsabs=1e-13, epsrel=1e-13, limit=200)
        worst_mass = max(worst_mass, abs(mass - 1.0))
    rt = time.perf_counter() - t0
    return [Verdict("angle density: fourier vs wrapped", worst, worst, worst, 0.0, worst <= tol,
                    n_angles * len(t_values), runtime=rt),
            Verdict("angle density: total mass error", worst_mass, worst_mass, worst_mass, 0.0,
                    worst_mass <= tol_mass, len(t_values), runtime=rt)]


# ---------------------------------------------------------------------------
# change of measure from dimension 0 to Brownian motion


@dataclass
class PathFunctional:
    """f = 1 ("one"), f = 0 ("zero"), or f = (-X_t + 2t + beta) 1{X_s < 2s + beta
    for all s <= t} ("derivative")."""
    kind: str = "one"
    beta: float = 6.0

    def __post_init__(self):
        if self.kind not in ("one", "zero", "derivative"):
            raise ValueError(f"unknown functional {self.kind!r}")


def _bridge_below_line(paths, grid, beta):
    """Probability that piecewise Brownian bridges through ``paths`` (values on
    ``grid``) stay below 2s + beta."""
    b = 2.0 * grid + beta
    gap = b[None, :] - paths
    ok = np.all(gap > 0, axis=1)
    h = np.diff(grid)
    with np.errstate(over="ignore"):
        fac = -np.expm1(-2.0 * np.clip(gap[:, :-1], 0, None) * np.clip(gap[:, 1:], 0, None) / h)
    return np.where(ok, np.prod(fac, axis=1), 0.0)


def lhs_samples(gamma, r, t, functional: PathFunctional, n_paths, rng, n_grid=200,
                spread=1.1):
    """Per-sample values whose mean is sqrt(t) e^{-gamma^2 t/2}
    E^0_r[e^{gamma X_t} 1{X_t > 0} f].

    The endpoint X_t is importance-sampled from a normal law truncated to
    (0, inf); for the barrier functional a zero-dimensional Bessel bridge
    from r to the endpoint is drawn on a grid.
    """
    from scipy.stats import truncnorm
    if functional.kind == "zero":
        return np.zeros(n_paths)
    mu, sd = r + gamma * t, spread * math.sqrt(t)
    a = (0.0 - mu) / sd
    z = truncnorm.rvs(a, np.inf, loc=mu, scale=sd, size=n_paths, random_state=rng)
    log_g = truncnorm.logpdf(z, a, np.inf, loc=mu, scale=sd)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrecisionWarning)
        log_q = besq_transition_density(r * r, z * z, t, 0.0).log_density
    logw = math.log(2.0) + np.log(z) + log_q + gamma * z - log_g
    vals = math.sqrt(t) * np.exp(logw - gamma ** 2 * t / 2.0)
    if functional.kind == "derivative":
        beta = functional.beta
        lin = -z + 2.0 * t + beta
        keep = (lin > 0) & (r < beta)
        surv = np.zeros(n_paths)
        if np.any(keep):
            grid = np.linspace(0.0, t, n_grid + 1)
            inner = grid[1:-1]
            sq = pitman_bridge_squared(np.full(keep.sum(), r * r), z[keep] ** 2, t, inner, rng)
            paths = np.concatenate([np.full((sq.shape[0], 1), r), np.sqrt(sq),
                                    z[keep][:, None]], axis=1)
            surv[keep] = _bridge_below_line(paths, grid, beta)
        vals = vals * np.where(keep, lin, 0.0) * surv
    return vals


def rhs_samples(gamma, r, t, functional: PathFunctional, n_paths, rng, dt=1e-3, refine=8):
    """Per-path values whose mean is the Brownian right-hand side, plus the
    quadrature error proxy of the inverse-square integral."""
    if functional.kind == "zero":
        return np.zeros(n_paths), np.zeros(n_paths)
    n_steps = max(1, int(round(t / dt)))
    use_barrier = functional.kind == "derivative"
    vals, qerr = K.drifted_bm_functional(n_paths, r, gamma, t, n_steps, functional.beta,
                                         use_barrier, refine, rng)
    pref = math.sqrt(r) * math.exp(gamma * r)
    return pref * vals, pref * qerr


def lhs_quadrature(gamma, r, t) -> float:
    """Deterministic value of the left-hand side for f = 1."""
    from scipy.integrate import quad

    def integrand(z):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PrecisionWarning)
            lq = besq_transition_density(r * r, z * z, t, 0.0).log_density
        return math.exp(math.log(2 * z) + float(lq) + gamma * z - gamma ** 2 * t / 2)

    mu = r + gamma * t
    val, _ = quad(integrand, 0.0, mu + 40 * math.sqrt(t), points=[mu], limit=400)
    return math.sqrt(t) * val


def change_of_measure_check(gamma: float, r: float, t: float, functional: PathFunctional,
                            n_paths: int, rng: RngStream, dt: float = 1e-3, refine: int = 8,
                            n_sigma: float = 3.0) -> Verdict:
    """Both sides of the dimension-0 to Brownian transfer by Monte Carlo."""
    if not 0 < gamma <= 2:
        raise ValueError("gamma must lie in (0, 2]")
    if not r > 0 or not t > 0:
        raise ValueError("r and t must be positive")
    t0 = time.perf_counter()
    left = lhs_samples(gamma, r, t, functional, n_paths, rng)
    right, qerr = rhs_samples(gamma, r, t, functional, n_paths, rng, dt, refine)
    ml, mr = float(left.mean()), float(right.mean())
    pooled = math.sqrt(left.var(ddof=1) / left.size + right.var(ddof=1) / right.size) \
        if n_paths > 1 else 0.0
    gap = ml - mr
    q = float(qerr.mean())
    name = f"change of measure gamma={gamma:g} r={r:g} t={t:g} f={functional.kind}"
    note = f"lhs={ml:.6g} rhs={mr:.6g} pooled_se={pooled:.3g} quad_err={q:.3g}"
    if functional.kind != "zero" and q > 0.1 * abs(gap) and q > 0:
        note += " quadrature error exceeds 10% of the gap"
    ok = abs(gap) <= n_sigma * pooled
    return Verdict(name, gap, gap - n_sigma * pooled, gap + n_sigma * pooled, 0.0, ok, 2 * n_paths,
                   runtime=time.perf_counter() - t0, note=note)


# ---------------------------------------------------------------------------
# 3D Bessel moments


def bessel3_moment_check(r: float, t_grid, n_paths: int, rng: RngStream,
                         M_levels=(5.0, 10.0, 20.0), survival_r: float = 1.0,
                         survival_horizon: float = 50.0, survival_dt: float = 0.01,
                         survival_paths: int = 2000, rel_band: float = 0.03,
                         n_sigma: float = 3.0) -> list:
    """Inverse moments of the 3D Bessel process and the survival surrogate.

    The survival probability above sqrt(s) / (M log(2 + s)^2) is zero from
    r = 0, so it is evaluated from ``survival_r`` on a finite horizon, with
    the same paths for every M.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    out = []
    for t in t_grid:
        t0 = time.perf_counter()
        x = np.sqrt(besq_transition_sample(np.full(n_paths, r * r), t, 3.0, rng))
        inv = 1.0 / x
        target = math.sqrt(2.0 / (math.pi * t))
        m, se = float(inv.mean()), float(inv.std(ddof=1) / math.sqrt(n_paths))
        lo, hi = normal_ci(m, se)
        out.append(Verdict(f"bessel3 E[1/X_t] t={t:g} r={r:g}", m, lo, hi, target,
                           abs(m / target - 1) <= rel_band, n_paths,
                           runtime=time.perf_counter() - t0))
        inv2 = inv ** 2
        m2, se2 = float(inv2.mean()), float(inv2.std(ddof=1) / math.sqrt(n_paths))
        lo, hi = normal_ci(m2, se2)
        out.append(Verdict(f"bessel3 E[1/X_t^2] <= 2/t t={t:g} r={r:g}", m2, lo, hi, 2.0 / t,
                           m2 - n_sigma * se2 <= 2.0 / t, n_paths,
                           runtime=time.perf_counter() - t0))
    t0 = time.perf_counter()
    levels = np.asarray(M_levels, dtype=float)
    w = K.bessel_survival_levels(survival_paths, survival_r, 3.0, levels, survival_horizon,
                                 survival_dt, rng)
    probs = w.mean(axis=0)
    mono = bool(np.all(np.diff(probs) >= 0))
    se = float(w[:, -1].std(ddof=1) / math.sqrt(survival_paths))
    note = ("P=" + ",".join(f"{p:.4g}" for p in probs) + f" M={list(M_levels)}"
            f" r={survival_r:g} horizon={survival_horizon:g}")
    out.append(Verdict("bessel3 survival nondecreasing in M", float(probs[-1]),
                       float(probs[-1]) - 1.96 * se, float(probs[-1]) + 1.96 * se, None, mono,
                       survival_paths, runtime=time.perf_counter() - t0, note=note))
    return out


# ---------------------------------------------------------------------------
# exit angle versus local times


def _quadrant(angle):
    return (np.floor(np.mod(angle + math.pi / 4, 2 * math.pi) / (math.pi / 2))).astype(int) % 4


def excursion_sample(depth: int, n_conditioned: int, rng: RngStream, dh: float = 1e-4,
                     half_width: float = 0.02, max_tries: int | None = None):
    """Excursions from the circle of radius eta/e to the circle of radius eta
    (eta = 1 by scaling), conditioned by rejection to reach radius e^{-depth}.

    Uses the skew product: log|B| is a Brownian motion in the clock
    H = int ds / |B|^2 and the exit angle is sqrt(H) times a standard normal
    (start angle 0).  Returns the exit angles, the local-time densities of
    log|B| at the levels -1 .. -depth (the circle local times up to the
    radius factor) and the number of tries.
    """
    levels = -np.arange(1, depth + 1, dtype=float)
    max_tries = 50 * n_conditioned * depth if max_tries is None else max_tries
    angles, lts = [], []
    tries = 0
    while len(angles) < n_conditioned and tries < max_tries:
        tries += 1
        hit, H, occ = K.log_radius_walk(-1.0, -float(depth), dh, 1e4, levels, half_width, rng)
        if not hit or not math.isfinite(H):
            continue
        angles.append(math.sqrt(H) * rng.standard_normal())
        lts.append(occ)
    return np.asarray(angles), np.asarray(lts).reshape(-1, depth), tries


def decoupling_statistics(angles, lts):
    """Binned deviation of local-time cells given the exit quadrant.

    Cells are the four combinations of median splits of the local times at
    the two outermost levels.  Returns (max relative deviation, weighted
    total variation in [0, 2]).
    """
    q = _quadrant(angles)
    cell = (lts[:, 0] > np.median(lts[:, 0])).astype(int)
    if lts.shape[1] > 1:
        cell = 2 * cell + (lts[:, 1] > np.median(lts[:, 1])).astype(int)
    n_cells = 4 if lts.shape[1] > 1 else 2
    base = np.bincount(cell, minlength=n_cells) / cell.size
    worst = 0.0
    tv = 0.0
    for k in range(4):
        sel = q == k
        if not np.any(sel):
            continue
        cond = np.bincount(cell[sel], minlength=n_cells) / sel.sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(base > 0, np.abs(cond / base - 1.0), 0.0)
        worst = max(worst, float(rel.max()))
        tv += sel.mean() * float(np.abs(cond - base).sum())
    return worst, min(tv, 2.0)


def continuity_lemma_experiment(eta: float, eta_prime: float, n_paths: int, rng: RngStream,
                                dh: float = 1e-4) -> Verdict:
    """Empirical decoupling p-hat between exit angle and dyadic local times.

    ``n_paths`` is the number of conditioned excursions wanted.  The verdict
    fails (with a note) when fewer than 500 were obtained.
    """
    ratio = eta_prime / eta
    depth = int(round(-math.log(ratio)))
    if abs(-math.log(ratio) - depth) > 1e-9 or depth < 2:
        raise ValueError("need eta' = eta e^{-j} with j >= 2")
    t0 = time.perf_counter()
    angles, lts, tries = excursion_sample(depth, n_paths, rng, dh)
    n = angles.size
    note = f"depth={depth} conditioned={n} tries={tries}"
    if n < 500:
        warnings.warn(f"only {n} conditioned excursions", RuntimeWarning, stacklevel=2)
        return Verdict("continuity lemma p-hat", math.nan if n == 0 else 0.0, 0.0, 0.0, None,
                       False, n, runtime=time.perf_counter() - t0,
                       note=note + " insufficient conditioned samples")
    worst, tv = decoupling_statistics(angles, lts)
    return Verdict("continuity lemma p-hat", worst, worst, worst, None, True, n,
                   runtime=time.perf_counter() - t0, note=note + f" tv={tv:.4g}")


def continuity_decay_check(depths=(2, 5), repeats: int = 20, n_paths: int = 1000,
                           rng: RngStream = None, dh: float = 1e-4) -> Verdict:
    """Median p-hat over repeats must be strictly smaller at the deeper ratio."""
    t0 = time.perf_counter()
    med = []
    for d in depths:
        vals = [continuity_lemma_experiment(1.0, math.exp(-d), n_paths, rng, dh).estimate
                for _ in range(repeats)]
        med.append(float(np.median(vals)))
    ok = all(b < a for a, b in zip(med, med[1:]))
    note = "median p-hat " + ", ".join(f"e^-{d}:{m:.4g}" for d, m in zip(depths, med))
    return Verdict("continuity lemma decay", med[-1], min(med), max(med), None, ok,
                   repeats * n_paths * len(depths), runtime=time.perf_counter() - t0, note=note)
