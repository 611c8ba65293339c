"""Compiled inner loops.

Every kernel takes a numpy ``Generator`` and draws from it directly, so the
counter-based streams of :mod:`bmchaos.rng` stay the only source of
randomness.  Domain shapes are encoded as integers: 0 = disc, 1 = square.
"""

import math

import numpy as np
from numba import njit

DISC = 0
SQUARE = 1


@njit(cache=True)
def _dist_and_cross(shape, cx, cy, size, px, py, qx, qy, dt):
    """Distance of q to the boundary and probability that the Brownian bridge
    from p to q left the domain in between (nearest face / tangent line)."""
    if shape == DISC:
        d1 = size - math.hypot(px - cx, py - cy)
        d2 = size - math.hypot(qx - cx, qy - cy)
        if d2 <= 0.0:
            return d2, 1.0
        return d2, math.exp(-2.0 * d1 * d2 / dt)
    # square: product of survivals against the four faces
    surv = 1.0
    dmin = 1e300
    for axis in range(2):
        if axis == 0:
            a, b = px - cx, qx - cx
        else:
            a, b = py - cy, qy - cy
        for sgn in (1.0, -1.0):
            d1 = size - sgn * a
            d2 = size - sgn * b
            if d2 < dmin:
                dmin = d2
            if d2 <= 0.0:
                return d2, 1.0
            surv *= 1.0 - math.exp(-2.0 * d1 * d2 / dt)
    return dmin, 1.0 - surv


@njit(cache=True)
def walk_occupation(x0, y0, dt, shape, cx, cy, size, probes, max_steps, rng):
    """Planar Brownian motion from (x0, y0) until it leaves the domain.

    ``probes`` rows are (px, py, r_lo, r_hi); the returned array holds the
    time spent in each annulus r_lo <= |B - p| <= r_hi (left-point rule).
    Returns (exit time, occupations, steps, exited flag).
    """
    n_probe = probes.shape[0]
    occ = np.zeros(n_probe)
    sq = math.sqrt(dt)
    px, py = x0, y0
    t = 0.0
    for step in range(max_steps):
        for j in range(n_probe):
            r = math.hypot(px - probes[j, 0], py - probes[j, 1])
            if probes[j, 2] <= r <= probes[j, 3]:
                occ[j] += dt
        qx = px + sq * rng.standard_normal()
        qy = py + sq * rng.standard_normal()
        d2, pc = _dist_and_cross(shape, cx, cy, size, px, py, qx, qy, dt)
        if d2 <= 0.0 or rng.random() < pc:
            return t + 0.5 * dt, occ, step + 1, True
        px, py = qx, qy
        t += dt
    return t, occ, max_steps, False


@njit(cache=True)
def walk_raster(x0, y0, dt, shape, cx, cy, size, c2x, c2y, r2,
                xmin, ymin, pix, nx, ny, max_steps, rng):
    """Brownian path binned on a raster in two phases.

    Phase one runs until the exit of the domain, phase two continues until the
    exit of the disc D((c2x, c2y), r2).  Returns the two occupation rasters,
    the two exit times and a completion flag.
    """
    ra = np.zeros((nx, ny))
    rb = np.zeros((nx, ny))
    sq = math.sqrt(dt)
    px, py = x0, y0
    t = 0.0
    phase = 0
    t1 = 0.0
    for step in range(max_steps):
        i = int(math.floor((px - xmin) / pix))
        j = int(math.floor((py - ymin) / pix))
        if 0 <= i < nx and 0 <= j < ny:
            if phase == 0:
                ra[i, j] += dt
            else:
                rb[i, j] += dt
        qx = px + sq * rng.standard_normal()
        qy = py + sq * rng.standard_normal()
        if phase == 0:
            d2, pc = _dist_and_cross(shape, cx, cy, size, px, py, qx, qy, dt)
            if d2 <= 0.0 or rng.random() < pc:
                phase = 1
                t1 = t + 0.5 * dt
        d2, pc = _dist_and_cross(DISC, c2x, c2y, r2, px, py, qx, qy, dt)
        if d2 <= 0.0 or rng.random() < pc:
            if phase == 0:
                t1 = t + 0.5 * dt
            return ra, rb, t1, t + 0.5 * dt, True
        px, py = qx, qy
        t += dt
    return ra, rb, t1, t, False


@njit(cache=True)
def besq_euler(x0, d, dt, n_steps, n_samples, rng):
    """Euler-Maruyama for dZ = d dt + 2 sqrt(Z) dW, floored at 0 (absorbing for d = 0)."""
    out = np.empty(n_samples)
    sq = math.sqrt(dt)
    for i in range(n_samples):
        z = x0
        for _ in range(n_steps):
            if z <= 0.0 and d == 0.0:
                z = 0.0
                break
            z = z + d * dt + 2.0 * math.sqrt(max(z, 0.0)) * sq * rng.standard_normal()
            if z < 0.0:
                z = 0.0
        out[i] = z
    return out


@njit(cache=True)
def srw_until_exit(N, counts, max_steps, rng):
    """Simple random walk from the origin of [-N, N]^2, counting visits.

    ``counts`` has shape (2N+1, 2N+1) and is updated in place; visits are
    recorded for sites inside the square before the first exit.  Returns the
    number of steps taken, which equals the number of recorded visits.
    """
    x = 0
    y = 0
    steps = 0
    while steps < max_steps:
        counts[x + N, y + N] += 1
        steps += 1
        u = rng.integers(0, 4)
        if u == 0:
            x += 1
        elif u == 1:
            x -= 1
        elif u == 2:
            y += 1
        else:
            y -= 1
        if x > N or x < -N or y > N or y < -N:
            return steps
    return -1


# --------------------------------------------------------------------------
# barrier events

BARRIER_INF = 0
BARRIER_LINEAR = 1
BARRIER_LOG = 2
BARRIER_CRITICAL = 3


@njit(cache=True)
def barrier_value(kind, p, s):
    if kind == BARRIER_INF:
        return 1e300
    if kind == BARRIER_LINEAR:
        return p[0] + p[1] * s
    if kind == BARRIER_LOG:
        # intercept + coefficient * log(1 + s) + slope * s
        return p[0] + p[1] * math.log1p(s) + p[2] * s
    # 2 s + beta - sqrt(s) / (M log(2 + s)^2)
    lg = math.log(2.0 + s)
    return 2.0 * s + p[0] - math.sqrt(s) / (p[1] * lg * lg)


@njit(cache=True)
def barrier_curvature(kind, p, s):
    if kind == BARRIER_LOG:
        return abs(p[1]) / (1.0 + s) ** 2
    if kind == BARRIER_CRITICAL:
        h = 1e-3 + 1e-3 * s
        lo = max(s - h, 0.0)
        return abs(barrier_value(kind, p, lo + 2 * h) - 2 * barrier_value(kind, p, lo + h)
                   + barrier_value(kind, p, lo)) / (h * h)
    return 0.0


@njit(cache=True)
def _step_size(kind, p, s, horizon, dt, h_max, tol):
    curv = barrier_curvature(kind, p, s)
    h = h_max
    if curv > 0.0:
        h = min(h_max, math.sqrt(8.0 * tol / curv))
    h = max(h, dt)
    return min(h, horizon - s)


@njit(cache=True)
def sup_barrier_bm(n_paths, x0, drift, kind, p, horizon, dt, h_max, tol, tail_slope, correct, rng):
    """Survival weights of {X_s < b(s) for all s <= horizon} for BM with drift.

    Steps are adaptive: as long as the chord error of the barrier is below
    ``tol`` the step grows up to ``h_max``; never below ``dt``.  Between grid
    points the exact Brownian-bridge crossing probability of the chord is
    used.  If ``tail_slope`` > 0 the weight is multiplied by the probability
    that a Brownian motion with drift ``drift`` stays below the line of slope
    ``tail_slope`` after the horizon (linear barriers only).  With
    ``correct`` false the crossing factor is skipped (raw discretisation).
    """
    w = np.empty(n_paths)
    steps = 0
    for i in range(n_paths):
        x = x0
        s = 0.0
        b = barrier_value(kind, p, 0.0)
        weight = 1.0 if x < b else 0.0
        while weight > 0.0 and s < horizon - 1e-12:
            h = _step_size(kind, p, s, horizon, dt, h_max, tol)
            xn = x + drift * h + math.sqrt(h) * rng.standard_normal()
            bn = barrier_value(kind, p, s + h)
            steps += 1
            if xn >= bn:
                weight = 0.0
                break
            if correct:
                weight *= 1.0 - math.exp(-2.0 * (b - x) * (bn - xn) / h)
            x, b, s = xn, bn, s + h
        if weight > 0.0 and tail_slope > 0.0:
            weight *= 1.0 - math.exp(-2.0 * (tail_slope - drift) * (b - x))
        w[i] = weight
    return w, steps


@njit(cache=True)
def minima_barrier_bm(n_paths, n, x0, drift, kind, p, rng):
    """Weights of {min over [k, k+1] of X <= b(k) for every k < n}, X a BM
    with drift started at x0.

    Exact: X is sampled at integer times and, given the two endpoints, the
    minimum of the unit Brownian bridge (whose law ignores the drift) falls
    below level b with probability exp(-2 (x - b)(y - b)) when both
    endpoints sit above b.
    """
    w = np.empty(n_paths)
    for i in range(n_paths):
        x = x0
        weight = 1.0
        for k in range(n):
            y = x + drift + rng.standard_normal()
            b = barrier_value(kind, p, float(k))
            if x > b and y > b:
                weight *= math.exp(-2.0 * (x - b) * (y - b))
            x = y
        w[i] = weight
    return w


@njit(cache=True)
def bridge_minima(x, y, u):
    """Minimum of a unit Brownian bridge from x to y, from a uniform u."""
    return 0.5 * (x + y - math.sqrt((x - y) ** 2 - 2.0 * math.log(u)))


@njit(cache=True)
def sup_barrier_bessel(n_paths, r0, d, kind, p, horizon, dt, lower, rng):
    """Survival weights for a Bessel^d path on a uniform grid of step ``dt``.

    Transitions are exact (Poisson-Gamma on the square); between grid points
    the Brownian-bridge crossing probability is used as a first-order
    correction.  With ``lower`` the event is {X_s > b(s)}, otherwise
    {X_s < b(s)}.
    """
    w = np.empty(n_paths)
    n = int(round(horizon / dt))
    for i in range(n_paths):
        z = r0 * r0
        x = r0
        s = 0.0
        b = barrier_value(kind, p, 0.0)
        weight = 1.0
        if lower:
            if x <= b and not (x == 0.0 and b == 0.0):
                weight = 0.0
        elif x >= b:
            weight = 0.0
        for _ in range(n):
            if weight == 0.0:
                break
            lam = z / (2.0 * dt)
            shape = d / 2.0 + rng.poisson(lam)
            z = rng.gamma(shape, 2.0 * dt) if shape > 0 else 0.0
            xn = math.sqrt(z)
            bn = barrier_value(kind, p, s + dt)
            g1 = (x - b) if lower else (b - x)
            g2 = (xn - bn) if lower else (bn - xn)
            if g2 <= 0.0:
                weight = 0.0
                break
            if g1 > 0.0:
                weight *= 1.0 - math.exp(-2.0 * g1 * g2 / dt)
            x, b, s = xn, bn, s + dt
        w[i] = weight
    return w


@njit(cache=True)
def drifted_bm_functional(n_paths, r, gamma, t, n_steps, beta, use_barrier, refine, rng):
    """Right-hand side integrand of the Girsanov transfer for BM paths.

    Y_s = X_s + gamma s with X a BM from r.  Returns per-path
    (t / Y_t)^(1/2) exp(-3/8 int ds / Y_s^2) * P(Y stays positive) and, when
    ``use_barrier``, also multiplies by (-Y_t + 2t + beta) and the probability
    of staying below 2s + beta.  Steps whose integrand exceeds 1 are split
    into ``refine`` Brownian-bridge sub-steps.  The second output is the
    absolute difference between the refined and unrefined integrals, a
    quadrature error proxy.
    """
    out = np.empty(n_paths)
    qerr = np.empty(n_paths)
    h = t / n_steps
    for i in range(n_paths):
        y = r
        s = 0.0
        integral = 0.0
        coarse = 0.0
        weight = 1.0
        for _ in range(n_steps):
            yn = y + gamma * h + math.sqrt(h) * rng.standard_normal()
            if yn <= 0.0:
                weight = 0.0
                break
            if use_barrier and yn >= 2.0 * (s + h) + beta:
                weight = 0.0
                break
            f0 = 1.0 / (y * y)
            f1 = 1.0 / (yn * yn)
            coarse += 0.5 * h * (f0 + f1)
            if refine > 1 and (f0 > 1.0 or f1 > 1.0):
                hs = h / refine
                ya = y
                for j in range(refine):
                    left = refine - j
                    if left == 1:
                        yb = yn
                    else:
                        # Brownian bridge from ya to yn over remaining time
                        mean = ya + (yn - ya) / left
                        var = hs * (left - 1) / left
                        yb = mean + math.sqrt(var) * rng.standard_normal()
                    if yb <= 0.0:
                        weight = 0.0
                        break
                    integral += 0.5 * hs * (1.0 / (ya * ya) + 1.0 / (yb * yb))
                    weight *= 1.0 - math.exp(-2.0 * ya * yb / hs)
                    if use_barrier:
                        sa = s + j * hs
                        ga = 2.0 * sa + beta - ya
                        gb = 2.0 * (sa + hs) + beta - yb
                        if gb <= 0.0:
                            weight = 0.0
                            break
                        weight *= 1.0 - math.exp(-2.0 * ga * gb / hs)
                    ya = yb
                if weight == 0.0:
                    break
            else:
                integral += 0.5 * h * (f0 + f1)
                weight *= 1.0 - math.exp(-2.0 * y * yn / h)
                if use_barrier:
                    ga = 2.0 * s + beta - y
                    gb = 2.0 * (s + h) + beta - yn
                    weight *= 1.0 - math.exp(-2.0 * ga * gb / h)
            y = yn
            s += h
        if weight == 0.0:
            out[i] = 0.0
            qerr[i] = 0.0
            continue
        val = math.sqrt(t / y) * math.exp(-0.375 * integral) * weight
        if use_barrier:
            val *= (-y + 2.0 * t + beta)
        out[i] = val
        qerr[i] = abs(math.sqrt(t / y) * weight * (math.exp(-0.375 * integral)
                                                   - math.exp(-0.375 * coarse)))
    return out, qerr


@njit(cache=True)
def log_radius_walk(start, deep, dh, max_h, levels, half_width, rng):
    """One-dimensional BM in log-radius from ``start`` until it reaches 0.

    Returns (hit ``deep`` before 0, total clock H, occupation densities at
    ``levels`` estimated with a window of ``half_width``).  The clock step
    grows quadratically with the distance to the tracked range so that deep
    excursions stay cheap.  Paths still running at ``max_h`` return H = inf.
    """
    occ = np.zeros(levels.shape[0])
    w = start
    h = 0.0
    hit = False
    lo = levels.min() - 1.0
    while True:
        dist = 0.0
        if w < lo:
            dist = lo - w
        step = dh * max(1.0, (dist / 0.25) ** 2)
        cap = (w / 3.0) ** 2
        if step > cap:
            step = max(cap, dh)
        for j in range(levels.shape[0]):
            if abs(w - levels[j]) <= half_width:
                occ[j] += step
        w += math.sqrt(step) * rng.standard_normal()
        h += step
        if w <= deep:
            hit = True
        if w >= 0.0:
            break
        if h > max_h:
            return hit, math.inf, occ / (2.0 * half_width)
    return hit, h, occ / (2.0 * half_width)


@njit(cache=True)
def walk_store(x0, y0, dt, shape, cx, cy, size, max_steps, rng):
    """Like :func:`walk_occupation` but returns the visited positions."""
    pos = np.empty((max_steps + 1, 2))
    pos[0, 0] = x0
    pos[0, 1] = y0
    sq = math.sqrt(dt)
    px, py = x0, y0
    for step in range(max_steps):
        qx = px + sq * rng.standard_normal()
        qy = py + sq * rng.standard_normal()
        d2, pc = _dist_and_cross(shape, cx, cy, size, px, py, qx, qy, dt)
        if d2 <= 0.0 or rng.random() < pc:
            return pos[: step + 1], step * dt + 0.5 * dt, True
        px, py = qx, qy
        pos[step + 1, 0] = px
        pos[step + 1, 1] = py
    return pos, max_steps * dt, False


@njit(cache=True)
def _boundary_distance(shape, cx, cy, size, px, py):
    if shape == DISC:
        return size - math.hypot(px - cx, py - cy)
    return min(size - abs(px - cx), size - abs(py - cy))


@njit(cache=True)
def wos_hits(x0, y0, shape, cx, cy, size, tx, ty, eps, tol_target, tol_boundary,
             n_paths, rng):
    """Walk-on-spheres count of paths reaching D(t, eps) before the boundary."""
    hits = 0
    for _ in range(n_paths):
        px, py = x0, y0
        while True:
            db = _boundary_distance(shape, cx, cy, size, px, py)
            dtg = math.hypot(px - tx, py - ty) - eps
            if dtg <= tol_target:
                hits += 1
                break
            if db <= tol_boundary:
                break
            r = min(db, dtg)
            a = 2.0 * math.pi * rng.random()
            px += r * math.cos(a)
            py += r * math.sin(a)
    return hits


@njit(cache=True)
def bessel_survival_levels(n_paths, r0, d, levels, horizon, dt, rng):
    """Weights of {X_s >= sqrt(s) / (M log(2 + s)^2) for all s <= horizon}
    for every M in ``levels``, all computed on the same Bessel^d paths.

    The grid is geometric near 0 (the barrier is steep there) and uniform
    with step ``dt`` afterwards; transitions are exact and the Brownian-bridge
    crossing correction is applied between grid points.  A larger M gives a
    lower barrier, hence a larger weight on every path.
    """
    m = levels.shape[0]
    w = np.ones((n_paths, m))
    # grid: dt * 2^-j for j = 30..1, then multiples of dt
    n_geo = 30
    n_lin = int(round(horizon / dt))
    grid = np.empty(n_geo + n_lin)
    for j in range(n_geo):
        grid[j] = dt * 2.0 ** (j - n_geo)
    for j in range(n_lin):
        grid[n_geo + j] = dt * (j + 1)
    for i in range(n_paths):
        z = r0 * r0
        x = r0
        s = 0.0
        alive = m
        for g in range(grid.shape[0]):
            if alive == 0:
                break
            s1 = grid[g]
            h = s1 - s
            lam = z / (2.0 * h)
            shape = d / 2.0 + rng.poisson(lam)
            z = rng.gamma(shape, 2.0 * h) if shape > 0 else 0.0
            xn = math.sqrt(z)
            lg0 = math.log(2.0 + s)
            lg1 = math.log(2.0 + s1)
            for j in range(m):
                if w[i, j] == 0.0:
                    continue
                b0 = math.sqrt(s) / (levels[j] * lg0 * lg0)
                b1 = math.sqrt(s1) / (levels[j] * lg1 * lg1)
                g1 = x - b0
                g2 = xn - b1
                if g2 <= 0.0 or g1 <= 0.0:
                    w[i, j] = 0.0
                    alive -= 1
                else:
                    w[i, j] *= 1.0 - math.exp(-2.0 * g1 * g2 / h)
            x = xn
            s = s1
    return w
