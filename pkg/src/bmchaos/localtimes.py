"""Planar Brownian local times of circles.

Two independent routes produce the local time L_{x,e^{-n}} of the circles
around a centre x:

* path simulation: a discretised Brownian path, killed at the exit of a
  domain (bridge-corrected), whose occupation of a thin shell around the
  circle is divided by the shell width;
* the radial cascade: in the variable s = log(1/radius), the process
  sqrt(e^s L_{x,e^{-s}}) stopped at the exit of D(x, R) is a zero-dimensional
  Bessel process, so unit steps of the exact squared-Bessel transition give
  the whole profile without any path.

The cascade is seeded with an exponential variable (Green function of the
disc D(x, R)) multiplied, for a start outside the seed circle, by the
probability of ever reaching that circle.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np

from . import _kernels as K
from .bessel import bridge_to_zero, pitman_bridge_squared, besq_transition_sample
from .domains import Disc, Square, as_complex, domain_from_dict
from .rng import RngStream


class LocalTimeWarning(RuntimeWarning):
    """Too few discretisation steps landed in the shell for a usable estimate."""


def _shape_args(domain):
    if isinstance(domain, Disc):
        return K.DISC, domain.center[0], domain.center[1], domain.radius
    if isinstance(domain, Square):
        return K.SQUARE, domain.center[0], domain.center[1], domain.half_side
    raise TypeError(f"unsupported domain {domain!r}")


def default_dt(domain) -> float:
    return 1e-6 * domain.diameter ** 2


def default_half_width(eps: float) -> float:
    return eps / abs(math.log(eps))


def k_index(x, x0) -> int:
    """Smallest nonnegative n with e^{-n} <= |x - x0|."""
    d = abs(as_complex(x) - as_complex(x0))
    if d == 0:
        raise ValueError("k index undefined at the start point")
    return max(0, math.ceil(-math.log(d) - 1e-12))


# ---------------------------------------------------------------------------
# path records


@dataclass
class PathRecord:
    dt: float
    tau: float
    exited: bool
    steps: int
    probes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    occupation: np.ndarray = field(default_factory=lambda: np.zeros(0))
    positions: np.ndarray | None = None
    domain: object = None

    def occupation_of(self, x, r_lo: float, r_hi: float) -> float:
        """Time spent in {r_lo <= |B - x| <= r_hi}, from a registered probe or
        from stored positions."""
        c = as_complex(x)
        for row, occ in zip(self.probes, self.occupation):
            if (row[0] == c.real and row[1] == c.imag
                    and math.isclose(row[2], r_lo, rel_tol=1e-12, abs_tol=1e-15)
                    and math.isclose(row[3], r_hi, rel_tol=1e-12, abs_tol=1e-15)):
                return float(occ)
        if self.positions is None:
            raise ValueError("shell was not registered as a probe and positions were not stored")
        r = np.hypot(self.positions[:, 0] - c.real, self.positions[:, 1] - c.imag)
        return float(self.dt * np.count_nonzero((r >= r_lo) & (r <= r_hi)))


def shell_probe(x, eps: float, r: float | None = None):
    r = default_half_width(eps) if r is None else r
    c = as_complex(x)
    return (c.real, c.imag, eps - r, eps + r)


def annulus_probe(x, eps: float):
    c = as_complex(x)
    return (c.real, c.imag, eps, math.e * eps)


def _check_start(domain, start, dt):
    d = float(domain.distance_to_boundary(np.array([as_complex(start).real, as_complex(start).imag])))
    if d <= 0:
        raise ValueError("start point must lie strictly inside the domain")
    if dt >= d * d:
        raise ValueError(f"dt = {dt:g} too coarse: squared distance to the boundary is {d * d:g}")


def simulate_path_until_exit(domain, start, dt: float | None, rng: RngStream, probes=(),
                             store: bool = False, max_steps: int = 200_000_000) -> PathRecord:
    """Brownian path from ``start`` killed at the exit of ``domain``.

    Exit between grid points is detected with the bridge crossing probability
    exp(-2 d1 d2 / dt).  Occupations of the annuli listed in ``probes`` (rows
    (px, py, r_lo, r_hi)) are accumulated on the fly; ``store`` keeps all
    positions instead (memory heavy).
    """
    dt = default_dt(domain) if dt is None else float(dt)
    _check_start(domain, start, dt)
    s = as_complex(start)
    shape, cx, cy, size = _shape_args(domain)
    probes = np.asarray(probes, dtype=float).reshape(-1, 4)
    if store:
        pos, tau, exited = K.walk_store(s.real, s.imag, dt, shape, cx, cy, size, max_steps, rng)
        occ = np.zeros(probes.shape[0])
        rec = PathRecord(dt, float(tau), bool(exited), pos.shape[0], probes, occ, pos, domain)
        rec.occupation = np.array([rec.occupation_of(complex(p[0], p[1]), p[2], p[3]) for p in probes])
        return rec
    tau, occ, steps, exited = K.walk_occupation(s.real, s.imag, dt, shape, cx, cy, size,
                                                probes, max_steps, rng)
    return PathRecord(dt, float(tau), bool(exited), int(steps), probes, occ, None, domain)


def _circle_inside(domain, x, radius) -> bool:
    if domain is None:
        return True
    c = as_complex(x)
    return float(domain.distance_to_boundary(np.array([c.real, c.imag]))) > radius


def circle_local_time_estimate(path: PathRecord, x, eps: float, r: float | None = None,
                               min_steps: int = 20) -> float:
    """(1 / 2r) * time spent within distance r of the circle of radius eps."""
    r = default_half_width(eps) if r is None else float(r)
    if not 0 < r < eps:
        raise ValueError("half-width must satisfy 0 < r < eps")
    if not _circle_inside(path.domain, x, eps + r):
        return 0.0
    occ = path.occupation_of(x, eps - r, eps + r)
    if 0 < occ < min_steps * path.dt:
        warnings.warn(f"only {occ / path.dt:.0f} steps in the shell; estimate is unreliable",
                      LocalTimeWarning, stacklevel=2)
    return occ / (2.0 * r)


def annulus_occupation(path: PathRecord, x, eps: float) -> float:
    """Time spent in {eps <= |B - x| <= e * eps}."""
    if not _circle_inside(path.domain, x, math.e * eps):
        return 0.0
    return path.occupation_of(x, eps, math.e * eps)


def path_local_times(domain, start, probes, n_paths: int, dt: float | None, rng: RngStream,
                     max_steps: int = 200_000_000):
    """Occupations of ``probes`` for ``n_paths`` independent paths.

    Returns an array of shape (n_paths, n_probes) and the exit times.
    """
    dt = default_dt(domain) if dt is None else float(dt)
    _check_start(domain, start, dt)
    s = as_complex(start)
    shape, cx, cy, size = _shape_args(domain)
    probes = np.asarray(probes, dtype=float).reshape(-1, 4)
    occ = np.empty((n_paths, probes.shape[0]))
    taus = np.empty(n_paths)
    for i in range(n_paths):
        tau, o, _, exited = K.walk_occupation(s.real, s.imag, dt, shape, cx, cy, size,
                                              probes, max_steps, rng)
        if not exited:
            raise RuntimeError("path did not exit within max_steps")
        occ[i] = o
        taus[i] = tau
    return occ, taus


# ---------------------------------------------------------------------------
# radial cascade


@dataclass
class RadialProfile:
    center: tuple
    n0: int
    depth: int
    L: np.ndarray
    R: float = 1.0
    k_x: int | None = None
    seed: int | None = None
    domain: dict | None = None
    h: np.ndarray | None = None
    h_times: np.ndarray | None = None

    def __post_init__(self):
        self.center = tuple(float(c) for c in self.center)
        self.L = np.asarray(self.L, dtype=float)
        if self.L.shape != (self.depth + 1,):
            raise ValueError("L must hold depth + 1 values")
        if np.any(self.L < 0):
            raise ValueError("local times must be nonnegative")

    @property
    def radii(self) -> np.ndarray:
        return np.exp(-(self.n0 + np.arange(self.depth + 1)))

    @property
    def bessel_values(self) -> np.ndarray:
        """sqrt(e^{n} L_{x, e^{-n}}) at the integer scales n0 .. n0 + depth."""
        return np.sqrt(self.L * np.exp(self.n0 + np.arange(self.depth + 1)))

    def to_dict(self) -> dict:
        out = {"center": list(self.center), "n0": self.n0, "depth": self.depth,
               "L": [float(v) for v in self.L], "R": self.R, "k_x": self.k_x,
               "seed": self.seed, "domain": self.domain}
        if self.h is not None:
            out["h"] = [float(v) for v in self.h]
            out["h_times"] = [float(v) for v in self.h_times]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RadialProfile":
        d = dict(d)
        h = d.pop("h", None)
        ht = d.pop("h_times", None)
        prof = cls(**d)
        if h is not None:
            prof.h = np.asarray(h, dtype=float)
            prof.h_times = np.asarray(ht, dtype=float)
        return prof


def seed_hit_probability(distance, R: float, radius: float):
    """Probability that a path started at ``distance`` from x reaches the
    circle of the given radius before leaving D(x, R)."""
    distance = np.asarray(distance, dtype=float)
    with np.errstate(divide="ignore"):
        p = np.log(R / distance) / math.log(R / radius)
    return np.clip(np.where(distance <= radius, 1.0, p), 0.0, 1.0)


def cascade_squared(seed_sq, depth: int, rng: RngStream) -> np.ndarray:
    """Unit-time BESQ^0 steps from the squared seeds; shape (n, depth + 1)."""
    z = np.array(seed_sq, dtype=float, ndmin=1)
    out = np.empty((z.size, depth + 1))
    out[:, 0] = z
    for j in range(1, depth + 1):
        z = besq_transition_sample(z, 1.0, 0.0, rng)
        out[:, j] = z
    return out


def seed_squared(n: int, n0: int, R: float, rng: RngStream, distance=None,
                 mean_override: float | None = None) -> np.ndarray:
    """Squared Bessel seeds e^{n0} L_{x, e^{-n0}} for ``n`` centres."""
    rho = math.exp(-n0)
    if not rho < R:
        raise ValueError("the seed circle must be smaller than R")
    mean_L = 2.0 * rho * math.log(R / rho) if mean_override is None else float(mean_override)
    seed = rng.exponential(mean_L, size=n) / rho
    if distance is not None:
        p = seed_hit_probability(distance, R, rho)
        seed = np.where(rng.random(n) < p, seed, 0.0)
    return seed


def exact_radial_cascade(x, R: float, n0: int, depth: int, rng: RngStream,
                         seed_mean_override: float | None = None, start=None,
                         seed_value: float | None = None) -> RadialProfile:
    """Local times L_{x, e^{-(n0+j)}}(tau_{x,R}), j = 0..depth, without a path.

    The seed L[0] is exponential with mean 2 e^{-n0} log(R e^{n0}) (or the
    override), thinned by the hitting probability when ``start`` lies outside
    the seed circle; ``seed_value`` forces it.
    """
    if seed_value is not None:
        seed_sq = np.array([float(seed_value) * math.exp(n0)])
        if seed_value < 0:
            raise ValueError("seed must be nonnegative")
        if not math.exp(-n0) < R:
            raise ValueError("the seed circle must be smaller than R")
    else:
        dist = None
        if start is not None:
            dist = np.array([abs(as_complex(start) - as_complex(x))])
        seed_sq = seed_squared(1, n0, R, rng, dist, seed_mean_override)
    z = cascade_squared(seed_sq, depth, rng)[0]
    L = z * np.exp(-(n0 + np.arange(depth + 1)))
    kx = k_index(x, start) if start is not None and as_complex(start) != as_complex(x) else None
    return RadialProfile(center=tuple((as_complex(x).real, as_complex(x).imag)), n0=n0,
                         depth=depth, L=L, R=R, k_x=kx)


def interpolate_h(z_sq: np.ndarray, sub: int, rng: RngStream) -> np.ndarray:
    """Zero-dimensional Bessel bridges between consecutive unit-scale values.

    ``z_sq`` has shape (n, m + 1) holding squared values at integer scales;
    returns h of shape (n, m * sub + 1) on the grid of step 1/sub, pinned
    exactly at the integer points.
    """
    z_sq = np.atleast_2d(np.asarray(z_sq, dtype=float))
    n, m1 = z_sq.shape
    out = np.empty((n, (m1 - 1) * sub + 1))
    ends = np.sqrt(z_sq)
    out[:, ::sub] = ends
    if sub > 1 and m1 > 1:
        grid = np.arange(1, sub) / sub
        for j in range(m1 - 1):
            a, b = z_sq[:, j], z_sq[:, j + 1]
            live = (a > 0) | (b > 0)
            mid = np.zeros((n, sub - 1))
            if np.any(live):
                mid[live] = np.sqrt(pitman_bridge_squared(a[live], b[live], 1.0, grid, rng))
            out[:, j * sub + 1:(j + 1) * sub] = mid
    return out


def h_field_interpolate(profile: RadialProfile, rng: RngStream, sub: int = 8) -> RadialProfile:
    """Fill ``profile.h`` on [n0, n0 + depth] with step 1/sub."""
    if sub < 1:
        raise ValueError("sub must be a positive integer")
    z_sq = profile.L * np.exp(profile.n0 + np.arange(profile.depth + 1))
    h = interpolate_h(z_sq[None, :], sub, rng)[0]
    h[::sub] = profile.bessel_values
    profile.h = h
    profile.h_times = profile.n0 + np.arange(profile.depth * sub + 1) / sub
    return profile


# ---------------------------------------------------------------------------
# hitting probability


@dataclass
class HittingEstimate:
    estimate: float
    ci_lo: float
    ci_hi: float
    prediction: float
    n_paths: int


def green_prediction(domain, x0, x, eps: float) -> float:
    return domain.green(x0, x) / abs(math.log(eps))


def hitting_probability_estimate(domain, x0, x, eps: float, n_paths: int, rng: RngStream,
                                 tol: float | None = None) -> HittingEstimate:
    """P_{x0}(reach D(x, eps) before leaving the domain) by walk-on-spheres.

    Only the hitting event matters here, so no occupation is tracked and the
    walk jumps to uniform points of the largest admissible circle.  The
    stopping shells have width ``tol`` (default 1e-4 of the domain diameter
    for the boundary, 1e-3 eps for the target).
    """
    a, c = as_complex(x0), as_complex(x)
    if abs(a - c) <= eps:
        raise ValueError("x0 must lie outside D(x, eps)")
    shape, cx, cy, size = _shape_args(domain)
    tb = 1e-4 * domain.diameter if tol is None else tol
    hits = K.wos_hits(a.real, a.imag, shape, cx, cy, size, c.real, c.imag, eps, 1e-3 * eps,
                      tb, int(n_paths), rng)
    p = hits / n_paths
    lo, hi = wilson_interval(hits, n_paths)
    return HittingEstimate(p, lo, hi, green_prediction(domain, x0, x, eps), int(n_paths))


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def profile_from_json(d: dict) -> RadialProfile:
    prof = RadialProfile.from_dict(d)
    if prof.domain is not None:
        domain_from_dict(prof.domain)  # validate
    return prof
