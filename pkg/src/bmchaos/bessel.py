"""Bessel and squared-Bessel machinery.

Transitions are sampled exactly through the Poisson-Gamma representation of
the squared Bessel (BESQ) semigroup::

    BESQ^d_t from x  =  Gamma(d/2 + N, scale 2t),   N ~ Poisson(x / 2t)

which is the noncentral chi-square law scaled by ``t``.  For ``d = 0`` the
value is exactly 0 when ``N = 0``, and 0 is absorbing.

Zero-dimensional Bessel bridges are sampled either as a Markov bridge (the
forward kernel reweighted by the kernel to the endpoint) or through the
Pitman-Yor decomposition into a bridge to 0, a reversed bridge from 0 and a
``4J``-dimensional bridge from 0 to 0.  The two samplers share no code beyond
the Poisson-Gamma step to 0, so each one checks the other.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy.special import gammaln, ive

from .rng import RngStream

SERIES_LIMIT = 30.0
_SERIES_TERMS = 120


class PrecisionWarning(RuntimeWarning):
    """A density left the float64 range; use the returned log-density."""


class BridgeMixtureError(ValueError):
    """Pitman mixture weights do not form a sub-probability."""


@dataclass(frozen=True)
class BesselParams:
    dimension: float

    def __post_init__(self):
        if not self.dimension >= 0:
            raise ValueError(f"dimension must be >= 0, got {self.dimension}")

    @property
    def index(self) -> float:
        return (self.dimension - 1.0) / 2.0


@dataclass(frozen=True)
class BridgeSpec:
    start: float
    end: float
    duration: float
    grid: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        if self.start < 0 or self.end < 0:
            raise ValueError("bridge endpoints must be nonnegative")
        if not self.duration > 0:
            raise ValueError("bridge duration must be positive")
        if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
            raise ValueError("bridge grid must be strictly increasing")
        if grid.size and (grid[0] <= 0 or grid[-1] >= self.duration):
            raise ValueError("bridge grid must lie strictly inside (0, duration)")


@dataclass
class PathSample:
    times: np.ndarray
    values: np.ndarray
    integral: float | None = None  # trapezoidal int ds / X_s^2, inf if X touches 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have the same shape")


@dataclass
class TransitionDensity:
    density: np.ndarray
    log_density: np.ndarray
    atom: np.ndarray = field(default_factory=lambda: np.zeros(()))


# ---------------------------------------------------------------------------
# modified Bessel function of the first kind


def _series_i(nu, z):
    """Power series of I_nu(z), summed in linear space (z <= 30)."""
    half = z / 2.0
    with np.errstate(divide="ignore"):
        term = np.exp(nu * np.log(half) - gammaln(nu + 1.0))
    total = term.copy()
    q = half * half
    for k in range(_SERIES_TERMS):
        term = term * q / ((k + 1.0) * (k + 1.0 + nu))
        total += term
    return total


def log_modified_bessel_i(nu: float, z) -> np.ndarray:
    """log I_nu(z) for z >= 0, finite wherever I_nu(z) > 0."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    if nu < 0 and float(nu).is_integer():
        nu = -nu
    out = np.empty_like(z)
    if nu < -1:
        from scipy.special import iv

        with np.errstate(divide="ignore"):
            return np.log(iv(nu, z))
    zero = z == 0
    small = (z <= SERIES_LIMIT) & ~zero
    large = z > SERIES_LIMIT
    if np.any(zero):
        out[zero] = 0.0 if nu == 0 else (-np.inf if nu > 0 else np.inf)
    if np.any(small):
        out[small] = np.log(_series_i(nu, z[small]))
    if np.any(large):
        out[large] = np.log(ive(nu, z[large])) + z[large]
    return out


def modified_bessel_i(nu: float, z) -> np.ndarray:
    """I_nu(z): power series up to z = 30, exponentially scaled beyond."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("z must be nonnegative")
    if nu < 0 and float(nu).is_integer():
        nu = -nu
    if nu < -1:
        from scipy.special import iv

        return iv(nu, z)
    out = np.empty_like(z)
    zero = z == 0
    small = (z <= SERIES_LIMIT) & ~zero
    large = z > SERIES_LIMIT
    if np.any(zero):
        out[zero] = 1.0 if nu == 0 else (0.0 if nu > 0 else np.inf)
    if np.any(small):
        out[small] = _series_i(nu, z[small])
    if np.any(large):
        with np.errstate(over="ignore"):
            out[large] = ive(nu, z[large]) * np.exp(z[large])
    return out


# ---------------------------------------------------------------------------
# squared Bessel transitions


def _check_transition(x, t, d):
    if np.any(np.asarray(x) < 0):
        raise ValueError("start value must be nonnegative")
    if np.any(np.asarray(t) < 0):
        raise ValueError("time step must be nonnegative")
    if d < 0:
        raise ValueError("dimension must be nonnegative")


def _poisson_gamma(shape0, lam, scale, rng):
    n = rng.poisson(lam)
    shape = shape0 + n
    pos = shape > 0
    out = np.zeros(np.shape(shape), dtype=float)
    if np.ndim(out) == 0:
        return float(rng.gamma(shape, scale)) if pos else 0.0
    scale = np.broadcast_to(scale, out.shape)
    out[pos] = rng.gamma(shape[pos], scale[pos])
    return out


def besq_transition_sample(x, t, d: float, rng: RngStream):
    """Exact draw of BESQ^d_t started at ``x`` (vectorised over ``x``).

    ``t = 0`` returns the start value unchanged.
    """
    _check_transition(x, t, d)
    if np.ndim(t) == 0 and t == 0:
        return np.array(x, dtype=float) if np.ndim(x) else float(x)
    if np.any(np.asarray(t) == 0):
        raise ValueError("time step must be positive")
    x = np.asarray(x, dtype=float)
    lam = x / (2.0 * t)
    shape0 = np.full(x.shape, d / 2.0)
    out = _poisson_gamma(shape0, lam, np.broadcast_to(2.0 * np.asarray(t, float), x.shape), rng)
    return out


def besq_transition_density(x, y, t: float, d: float) -> TransitionDensity:
    """Transition density q_t^d(x, y) of BESQ^d and, for d = 0, the atom at 0.

    Evaluated in log space through log I_nu with nu = d/2 - 1.  A
    :class:`PrecisionWarning` is emitted when the density itself under- or
    overflows; ``log_density`` stays accurate.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_transition(x, t, d)
    if not t > 0:
        raise ValueError("time step must be positive")
    if np.any(y < 0):
        raise ValueError("end value must be nonnegative")
    x, y = np.broadcast_arrays(x, y)
    nu = d / 2.0 - 1.0
    logq = np.full(x.shape, -np.inf)
    from_zero = x == 0
    if d > 0 and np.any(from_zero):
        yy = y[from_zero]
        with np.errstate(divide="ignore"):
            logq[from_zero] = ((d / 2.0 - 1.0) * np.log(yy) - yy / (2.0 * t)
                               - (d / 2.0) * math.log(2.0 * t) - gammaln(d / 2.0))
    both = (~from_zero) & (y > 0)
    if np.any(both):
        xx, yy = x[both], y[both]
        w = np.sqrt(xx * yy) / t
        logq[both] = (-math.log(2.0 * t) + 0.5 * nu * (np.log(yy) - np.log(xx))
                      - (xx + yy) / (2.0 * t) + log_modified_bessel_i(nu, w))
    at_zero = (~from_zero) & (y == 0)
    if np.any(at_zero):
        xx = x[at_zero]
        if d == 0:
            # limit of the I_1 form as y -> 0
            logq[at_zero] = np.log(xx) - 2.0 * math.log(2.0 * t) - xx / (2.0 * t)
        elif d < 2:
            logq[at_zero] = np.inf
        elif d == 2:
            logq[at_zero] = -math.log(2.0 * t) - xx / (2.0 * t)
    with np.errstate(over="ignore", under="ignore"):
        dens = np.exp(logq)
    lost = np.isfinite(logq) & ((dens == 0) | ~np.isfinite(dens))
    if np.any(lost):
        warnings.warn("transition density out of float64 range; use log_density",
                      PrecisionWarning, stacklevel=2)
    atom = np.where(x == 0, 1.0, np.exp(-x / (2.0 * t))) if d == 0 else np.zeros(x.shape)
    return TransitionDensity(density=dens, log_density=logq, atom=atom)


# ---------------------------------------------------------------------------
# paths


def _with_origin(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("time grid must be a nonempty 1-d sequence")
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("time grid must be increasing and nonnegative")
    if times[0] > 0:
        times = np.concatenate([[0.0], times])
    return times


def bessel_paths(r0: float, d: float, times, n_paths: int, rng: RngStream,
                 refine: int = 1, small: float = 1.0):
    """Sample ``n_paths`` Bessel^d paths on a grid starting at time 0.

    Returns ``(grid, values, integrals)`` where ``values`` has shape
    ``(n_paths, len(grid))`` and ``integrals`` holds the trapezoidal
    approximation of int ds / X_s^2 (inf once a path reaches 0).  Intervals
    that start below ``small`` are split into ``refine`` exact sub-steps for
    the integral.
    """
    if r0 < 0:
        raise ValueError("r0 must be nonnegative")
    if d < 0:
        raise ValueError("dimension must be nonnegative")
    grid = _with_origin(times)
    z = np.full(n_paths, float(r0) ** 2)
    values = np.empty((n_paths, grid.size))
    values[:, 0] = r0
    integral = np.where(z > 0, 0.0, np.inf)
    for i in range(1, grid.size):
        dt = grid[i] - grid[i - 1]
        fine = (np.sqrt(z) < small) if refine > 1 else np.zeros(n_paths, bool)
        coarse = ~fine
        if np.any(coarse):
            zc = besq_transition_sample(z[coarse], dt, d, rng)
            with np.errstate(divide="ignore"):
                integral[coarse] += 0.5 * dt * (1.0 / z[coarse] + 1.0 / zc)
            z[coarse] = zc
        if np.any(fine):
            zf = z[fine]
            acc = integral[fine]
            h = dt / refine
            for _ in range(refine):
                zn = besq_transition_sample(zf, h, d, rng)
                with np.errstate(divide="ignore"):
                    acc += 0.5 * h * (1.0 / zf + 1.0 / zn)
                zf = zn
            z[fine] = zf
            integral[fine] = acc
        values[:, i] = np.sqrt(z)
    integral[np.any(values == 0, axis=1)] = np.inf
    return grid, values, integral


def bessel_path_sample(r0: float, d: float, times, rng: RngStream,
                       refine: int = 1, small: float = 1.0) -> PathSample:
    grid, values, integral = bessel_paths(r0, d, times, 1, rng, refine, small)
    return PathSample(grid, values[0], float(integral[0]))


def rn_derivative_bessel(path: PathSample, x: float, t: float, d: float) -> float:
    """Radon-Nikodym derivative of the Bessel^d law against Bessel^1 on [0, t].

    (X_t / x)^a exp(-a(a-1)/2 int_0^t ds / X_s^2) with a = (d - 1) / 2.
    """
    if not x > 0:
        raise ValueError("start value must be positive")
    a = BesselParams(d).index
    hit = np.nonzero(np.isclose(path.times, t, rtol=0, atol=1e-12))[0]
    if hit.size == 0:
        raise ValueError(f"time {t} is not on the path grid")
    j = int(hit[0])
    vals = path.values[: j + 1]
    if np.any(vals <= 0):
        raise ValueError("path touches 0 before t; derivative undefined")
    if a == 0:
        return 1.0
    if j == path.times.size - 1 and path.integral is not None:
        integral = path.integral
    else:
        ts = path.times[: j + 1]
        integral = float(np.sum(0.5 * np.diff(ts) * (1 / vals[:-1] ** 2 + 1 / vals[1:] ** 2)))
    return float((vals[-1] / x) ** a * math.exp(-0.5 * a * (a - 1.0) * integral))


def rn_weight(end_values, integrals, x: float, d: float) -> np.ndarray:
    """Vectorised :func:`rn_derivative_bessel` from end values and integrals."""
    a = BesselParams(d).index
    end_values = np.asarray(end_values, dtype=float)
    if a == 0:
        return np.ones_like(end_values)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (end_values / x) ** a * np.exp(-0.5 * a * (a - 1.0) * np.asarray(integrals))
    return np.where(end_values > 0, w, 0.0)


# ---------------------------------------------------------------------------
# zero-dimensional Bessel bridges


def _to_zero_step(z, s, r, delta, rng):
    """One step of a BESQ^delta bridge to 0: move by ``s`` with ``r`` left."""
    lam = z * r / (2.0 * s * (s + r))
    shape0 = np.broadcast_to(np.asarray(delta, float) / 2.0, np.shape(z)).copy()
    return _poisson_gamma(shape0, lam, np.full(np.shape(z), 2.0 * s * r / (s + r)), rng)


def bridge_to_zero(start, grid, duration, delta, rng):
    """Squared values of BESQ^delta bridges from ``start`` to 0 on ``grid``."""
    z = np.array(start, dtype=float, ndmin=1)
    grid = np.asarray(grid, dtype=float)
    out = np.empty((z.size, grid.size))
    prev = 0.0
    for i, tn in enumerate(grid):
        z = _to_zero_step(z, tn - prev, duration - tn, delta, rng)
        out[:, i] = z
        prev = tn
    return out


def pitman_weights(z: float, variant: str = "normalized", n_max: int | None = None):
    """Mixture probabilities of the 4n-dimensional component, n = 1, 2, ...

    ``normalized``: (z/2)^(2n-1) / (n! (n-1)! I_1(z)), which sums to one.
    ``printed``: (1/n!) (z/2)^(2n-1) Gamma(n) I_1(z), with the leftover mass
    meaning "no component"; raises :class:`BridgeMixtureError` when the terms
    add up to more than one.
    """
    if z < 0:
        raise ValueError("z must be nonnegative")
    if n_max is None:
        n_max = int(z / 2 + 12 * math.sqrt(z + 1) + 40)
    n = np.arange(1, n_max + 1, dtype=float)
    if z == 0:
        return n, np.zeros(n.size)
    log_i1 = float(log_modified_bessel_i(1.0, z))
    if variant == "normalized":
        logp = (2 * n - 1) * math.log(z / 2) - gammaln(n + 1) - gammaln(n) - log_i1
    elif variant == "printed":
        logp = (2 * n - 1) * math.log(z / 2) - gammaln(n + 1) + gammaln(n) + log_i1
    else:
        raise ValueError(f"unknown weight variant {variant!r}")
    p = np.exp(logp)
    total = p.sum()
    if variant == "printed" and (total > 1 + 1e-12 or not np.isfinite(total)):
        raise BridgeMixtureError(
            f"printed mixture weights sum to {total:.6g} > 1 at z = {z:.6g}")
    return n, p


def sample_bessel_index(z, rng: RngStream) -> np.ndarray:
    """Draw J with P(J = n) = (z/2)^(2n-1) / (n! (n-1)! I_1(z)), n >= 1.

    Vectorised over ``z``; entries with z = 0 return 0 (no component).
    """
    z = np.array(z, dtype=float, ndmin=1)
    out = np.zeros(z.size, dtype=np.int64)
    pos = z > 0
    if not np.any(pos):
        return out
    zp = z[pos]
    width = int(10 * math.sqrt(zp.max() + 1)) + 25
    lo = np.maximum(1, np.round(zp / 2).astype(np.int64) - width)
    n = lo[:, None] + np.arange(2 * width + 1)[None, :]
    log_i1 = log_modified_bessel_i(1.0, zp)
    logp = ((2 * n - 1) * np.log(zp / 2)[:, None] - gammaln(n + 1.0) - gammaln(n.astype(float))
            - log_i1[:, None])
    cdf = np.cumsum(np.exp(logp), axis=1)
    u = rng.random(zp.size) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    out[pos] = n[np.arange(zp.size), np.minimum(idx, n.shape[1] - 1)]
    return out


def pitman_bridge_squared(x, y, duration: float, grid, rng: RngStream,
                          weights: str = "normalized") -> np.ndarray:
    """Squared zero-dimensional Bessel bridges via the Pitman-Yor decomposition.

    ``x`` and ``y`` are squared endpoints (arrays of equal length).  Returns
    squared values on ``grid`` with shape ``(len(x), len(grid))``.
    """
    x = np.array(x, dtype=float, ndmin=1)
    y = np.array(y, dtype=float, ndmin=1)
    grid = np.asarray(grid, dtype=float)
    first = bridge_to_zero(x, grid, duration, 0.0, rng)
    second = bridge_to_zero(y, (duration - grid)[::-1], duration, 0.0, rng)[:, ::-1]
    z = np.sqrt(x * y) / duration
    if weights == "normalized":
        j = sample_bessel_index(z, rng)
    else:
        j = np.zeros(z.size, dtype=np.int64)
        for i, zi in enumerate(z):
            if zi == 0:
                continue
            n, p = pitman_weights(zi, "printed")
            u = rng.random()
            k = np.searchsorted(np.cumsum(p), u, side="right")
            j[i] = int(n[k]) if k < n.size else 0
    third = bridge_to_zero(np.zeros(x.size), grid, duration, 4.0 * j, rng)
    return first + second + third


def _nm_weights(alpha, beta):
    """Gamma shapes N + M and their weights in the Markov-bridge step."""
    centre = alpha + math.sqrt(alpha * beta)
    n_max = int(centre + 12 * math.sqrt(centre + 1) + 40)
    centre_m = beta + math.sqrt(alpha * beta)
    m_max = int(centre_m + 12 * math.sqrt(centre_m + 1) + 40)
    n = np.arange(1, n_max + 1, dtype=float)[:, None]
    m = np.arange(1, m_max + 1, dtype=float)[None, :]
    logw = (n * math.log(alpha) + m * math.log(beta) - gammaln(n + 1) - gammaln(n)
            - gammaln(m + 1) - gammaln(m) + gammaln(n + m))
    w = np.exp(logw - logw.max())
    return (n + m).ravel(), (w / w.sum()).ravel()


def markov_bridge_squared(x: float, y: float, duration: float, grid, rng: RngStream) -> np.ndarray:
    """One squared zero-dimensional Bessel bridge by sequential conditioning.

    Each step draws from q_s(a, .) q_r(., y) / q_{s+r}(a, y).  For y > 0 that
    kernel is a Gamma(N + M) mixture over two Poisson indices; for y = 0 it
    reduces to the Poisson-Gamma step to 0 (with its atom).
    """
    grid = np.asarray(grid, dtype=float)
    if x == 0 and y > 0:
        rev = markov_bridge_squared(y, 0.0, duration, (duration - grid)[::-1], rng)
        return rev[::-1]
    out = np.empty(grid.size)
    a = float(x)
    prev = 0.0
    for i, tn in enumerate(grid):
        s, r = tn - prev, duration - tn
        if a == 0:
            a = 0.0
        elif y == 0:
            a = float(_to_zero_step(np.array([a]), s, r, 0.0, rng)[0])
        else:
            alpha = a * r / (2 * s * (s + r))
            beta = y * s / (2 * r * (s + r))
            shapes, w = _nm_weights(alpha, beta)
            k = np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right")
            shape = shapes[min(k, shapes.size - 1)]
            a = float(rng.gamma(shape, 2 * s * r / (s + r)))
        out[i] = a
        prev = tn
    return out


def bessel_bridge_0dim_sample(spec: BridgeSpec, rng: RngStream, method: str = "markov-bridge",
                              weights: str = "normalized") -> PathSample:
    """Zero-dimensional Bessel bridge from ``spec.start`` to ``spec.end``.

    Returned values are the (unsquared) bridge at 0, every grid point and
    ``spec.duration``; the endpoints are pinned exactly.
    """
    x, y, T = spec.start ** 2, spec.end ** 2, spec.duration
    if method == "pitman":
        sq = pitman_bridge_squared([x], [y], T, spec.grid, rng, weights)[0]
    elif method == "markov-bridge":
        sq = markov_bridge_squared(x, y, T, spec.grid, rng)
    else:
        raise ValueError(f"unknown bridge method {method!r}")
    times = np.concatenate([[0.0], spec.grid, [T]])
    values = np.concatenate([[spec.start], np.sqrt(sq), [spec.end]])
    return PathSample(times, values)
