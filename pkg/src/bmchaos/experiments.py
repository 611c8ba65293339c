"""Experiment batteries and their deterministic parallel execution.

Each experiment is a list of tasks.  A task owns a logical label; its random
stream is ``substream(seed, experiment, *label)``, so results depend only on
(config, seed) and never on the worker count or completion order.  Results
are reduced in task-list order.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import math
import multiprocessing as mp
import time
import warnings

import numpy as np
from scipy import integrate, stats

from . import _kernels as K
from . import barrier as B
from . import chaos as C
from . import thickpoints as T
from .bessel import (BridgeSpec, PrecisionWarning, besq_transition_density,
                     besq_transition_sample, bessel_bridge_0dim_sample)
from .config import ExperimentConfig, config_hash
from .domains import Disc
from .localtimes import (LocalTimeWarning, exact_radial_cascade, hitting_probability_estimate,
                         path_local_times, shell_probe)
from .report import Battery, ExperimentReport, Verdict, normal_ci, write_report
from .rng import substream

KS_ALPHA = 1e-3


# ---------------------------------------------------------------------------
# parameter blocks


@dataclass
class BesselVerifyParams:
    n_samples: int = 10_000
    euler_dt: float = 1e-4
    atom_band: float = 0.01
    additivity_starts: tuple = (0.5, 1.0, 1.5)
    mean_samples: int = 1_000_000
    bridge_samples: int = 10_000
    green_paths: int = 10_000
    green_eps: float = 0.1
    green_dt: float = 4e-6
    green_band: float = 0.05
    green_width: float = 0.1
    ray_knight_samples: int = 1000
    ray_knight_n0: int = 1
    ray_knight_dt: float = 4e-6
    hitting_paths: int = 100_000
    hitting_band: float = 0.1

    def __post_init__(self):
        for name in ("n_samples", "mean_samples", "bridge_samples", "green_paths",
                     "ray_knight_samples", "hitting_paths"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be at least 2")
        for name in ("euler_dt", "green_dt", "ray_knight_dt", "green_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class BarrierBatteryParams:
    linear_paths: int = 200_000
    linear_a: float = 1.0
    linear_c: float = 0.5
    linear_horizon: float = 40.0
    linear_dt: float = 1e-3
    bessel3_paths: int = 100_000
    bessel3_times: tuple = (10.0, 100.0)
    com_paths: int = 20_000
    com_dt: float = 1e-3
    exponent_paths: int = 100_000
    n_values: tuple = (16, 64, 256)
    gammas: tuple = (1.5, 1.75, 1.9)
    continuity: bool = True
    continuity_repeats: int = 10
    continuity_paths: int = 1000

    def __post_init__(self):
        if self.linear_paths < 2 or self.bessel3_paths < 2 or self.com_paths < 2:
            raise ValueError("path counts must be at least 2")
        if len(self.n_values) < 2 or len(self.gammas) < 2:
            raise ValueError("exponent fits need at least two points")


@dataclass
class ChaosRunParams:
    n_runs: int = 10
    backend: str = "cascade"
    ks: tuple = (10,)
    gamma: float = 1.5
    gammas: tuple = (1.5,)
    beta: float = 6.0
    M: float = 10.0
    domain: dict = field(default_factory=lambda: {"shape": "disc", "center": [0.0, 0.0],
                                                  "radius": 1.0})
    x0: tuple = (0.0, 0.0)
    spacing_factor: float = 1.0
    max_cells: int = 200_000
    sub: int = 4
    n1: int = 3
    path_dt: float = 1e-5
    pixel: float = 0.004

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValueError("n_runs must be positive")
        self.chaos_params()   # validates the rest

    def chaos_params(self, backend=None, ks=None) -> C.ChaosParams:
        return C.ChaosParams(gamma=self.gamma, ks=tuple(ks or self.ks), beta=self.beta, M=self.M,
                             domain=dict(self.domain), x0=tuple(self.x0),
                             backend=backend or self.backend,
                             spacing_factor=self.spacing_factor, max_cells=self.max_cells,
                             sub=self.sub, n1=self.n1, path_dt=self.path_dt, pixel=self.pixel,
                             gammas=tuple(self.gammas))


@dataclass
class ChaosDiagnosticsParams(ChaosRunParams):
    n_runs: int = 50
    ks: tuple = (6, 8, 10, 12)
    backend: str = "cascade-aggregate"
    ratio_runs: int = 200
    ratio_ks: tuple = (8, 10, 12)
    ratio_backend: str = "path-aggregate"
    gammas: tuple = (1.0, 1.5, 1.8)
    gamma_check: float = 1.5
    sh_band: tuple = (0.55, 1.05)
    sub_band: tuple = (1.3, 2.7)
    sh_spread: float = 3.0

    def __post_init__(self):
        super().__post_init__()
        if self.ratio_runs < 1:
            raise ValueError("ratio_runs must be positive")
        if len(self.ks) < 2 or len(self.ratio_ks) < 2:
            raise ValueError("diagnostics need at least two depths")
        self.chaos_params(self.ratio_backend, self.ratio_ks)


@dataclass
class ThickpointsParams:
    Ns: tuple = (64, 128, 256, 512)
    trials: int = 20
    levels: tuple = (-3.0, -2.5, -2.0, -1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    band: tuple = (0.5, 1.2)
    top_N: int = 512
    pair: tuple = (128, 512)
    origin_Ns: tuple = (32, 64, 128)
    origin_trials: int = 1000

    def __post_init__(self):
        if any(n < 2 or n > T.MAX_N for n in self.Ns):
            raise ValueError(f"sizes must lie in [2, {T.MAX_N}]")
        if self.trials < 2:
            raise ValueError("trials must be at least 2")


PARAMS = {
    "bessel-verify": BesselVerifyParams,
    "barrier-battery": BarrierBatteryParams,
    "chaos-run": ChaosRunParams,
    "chaos-diagnostics": ChaosDiagnosticsParams,
    "thickpoints": ThickpointsParams,
}


# ---------------------------------------------------------------------------
# task runner


@dataclass(frozen=True)
class Task:
    label: tuple
    fn: object
    kwargs: dict = field(default_factory=dict)


def _execute(args):
    seed, experiment, task = args
    rng = substream(seed, experiment, *task.label)
    t0 = time.perf_counter()
    out = task.fn(rng, **task.kwargs)
    if isinstance(out, list):
        for v in out:
            if isinstance(v, Verdict) and v.runtime == 0:
                v.runtime = time.perf_counter() - t0
    return out


def run_tasks(tasks, seed: int, experiment: str, workers: int = 1) -> list:
    """Results of ``tasks`` in list order."""
    jobs = [(seed, experiment, t) for t in tasks]
    if workers <= 1 or len(jobs) <= 1:
        return [_execute(j) for j in jobs]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(_execute, jobs, chunksize=1))


# ---------------------------------------------------------------------------
# bessel-verify checks


def _ks_verdict(name, a, b, note=""):
    res = stats.ks_2samp(a, b)
    return Verdict(name, float(res.statistic), float(res.statistic), float(res.statistic), None,
                   res.pvalue >= KS_ALPHA, len(a) + len(b),
                   note=(f"p={res.pvalue:.4g} alpha={KS_ALPHA:g} " + note).strip())


def check_euler_vs_exact(rng, n=10_000, dt=1e-4, band=0.01, x=1.0, t=1.0):
    exact = besq_transition_sample(np.full(n, x), t, 0.0, rng)
    euler = K.besq_euler(x, 0.0, dt, int(round(t / dt)), n, rng)
    out = [_ks_verdict(f"BESQ0 exact vs Euler KS x={x:g} t={t:g}", exact, euler,
                       note=f"dt={dt:g}")]
    target = math.exp(-x / (2 * t))
    for label, s in (("Euler", euler), ("exact", exact)):
        f = float(np.mean(s == 0))
        se = math.sqrt(f * (1 - f) / n)
        lo, hi = normal_ci(f, se)
        out.append(Verdict(f"BESQ0 atom frequency {label}", f, lo, hi, target,
                           abs(f - target) <= band, n, note=f"band={band:g}"))
    return out


def check_additivity(rng, n=10_000, starts=(0.5, 1.0, 1.5), t=1.0):
    total = np.zeros(n)
    for x in starts:
        total += besq_transition_sample(np.full(n, x), t, 0.0, rng)
    single = besq_transition_sample(np.full(n, float(sum(starts))), t, 0.0, rng)
    return [_ks_verdict(f"BESQ0 additivity {len(starts)} starts", total, single)]


def check_mean_identity(rng, n=1_000_000, x=1.0, t=1.0, d=3.0):
    y = besq_transition_sample(np.full(n, x), t, d, rng)
    m, se = float(y.mean()), float(y.std(ddof=1) / math.sqrt(n))
    lo, hi = normal_ci(m, se)
    target = x + d * t
    return [Verdict(f"BESQ mean x+dt d={d:g}", m, lo, hi, target, abs(m - target) <= 3 * se, n)]


def check_transition_mass(rng=None, cases=((1.0, 1.0, 0.0), (4.0, 0.5, 0.0), (1.0, 1.0, 3.0),
                                           (0.0, 1.0, 3.0), (2.0, 2.0, 1.0)), tol=1e-8):
    worst = 0.0
    for x, t, d in cases:
        def dens(y):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PrecisionWarning)
                return float(besq_transition_density(x, y, t, d).density)
        atom = float(besq_transition_density(x, 0.0, t, d).atom) if d == 0 else 0.0
        hi = x + d * t + 60.0 * t + 20.0 * math.sqrt(x * t + t)
        val = integrate.quad(dens, 0.0, hi, limit=400, epsabs=1e-13, epsrel=1e-12,
                             points=[max(x, 1e-9)])[0]
        worst = max(worst, abs(val + atom - 1.0))
    return [Verdict("BESQ density plus atom integrates to 1", worst, worst, worst, 0.0,
                    worst <= tol, len(cases), note=f"tol={tol:g}")]


def check_bridge_methods(rng, n=10_000):
    spec = BridgeSpec(1.0, 1.0, 1.0, np.array([0.5]))
    a = np.array([bessel_bridge_0dim_sample(spec, rng, "markov-bridge").values[1]
                  for _ in range(n)])
    b = np.array([bessel_bridge_0dim_sample(spec, rng, "pitman").values[1] for _ in range(n)])
    return [_ks_verdict("bridge midpoint markov vs Pitman u=v=1 T=1", a, b)]


def check_green_identity(rng, n_paths=10_000, eps=0.1, dt=4e-6, band=0.05, width=0.1):
    """Shell half-width ``width * eps``: the default eps/|log eps| averages the
    mean profile over a band wide enough to bias it by about 5%."""
    dom = Disc((0.0, 0.0), 1.0)
    probe = shell_probe((0.0, 0.0), eps, width * eps)
    occ, _ = path_local_times(dom, (eps, 0.0), [probe], n_paths, dt, rng)
    lt = occ[:, 0] / (probe[3] - probe[2])
    target = 2.0 * eps * math.log(1.0 / eps)
    m, se = float(lt.mean()), float(lt.std(ddof=1) / math.sqrt(n_paths))
    lo, hi = normal_ci(m, se)
    return [Verdict(f"circle local time mean eps={eps:g}", m, lo, hi, target,
                    abs(m / target - 1.0) <= band, n_paths,
                    note=f"dt={dt:g} half_width={(probe[3] - probe[2]) / 2:.4g} band={band:g}")]


def check_ray_knight(rng, n=1000, n0=1, R=1.0, dt=4e-6):
    """Local time of the circle of radius e^{-(n0+1)}: cascade against paths
    started on the circle of radius e^{-n0} and killed on leaving D(0, R)."""
    rho0, rho1 = math.exp(-n0), math.exp(-(n0 + 1))
    casc = np.array([exact_radial_cascade((0.0, 0.0), R, n0, 1, rng).L[1] for _ in range(n)])
    r = rho1 / 10.0
    probe = (0.0, 0.0, rho1 - r, rho1 + r)
    occ, _ = path_local_times(Disc((0.0, 0.0), R), (rho0, 0.0), [probe], n, dt, rng)
    path = occ[:, 0] / (2.0 * r)
    return [_ks_verdict(f"Ray-Knight depth 1 cascade vs path n0={n0}", casc, path,
                        note=f"mean cascade={casc.mean():.4g} path={path.mean():.4g} dt={dt:g}")]


def check_hitting(rng, n_paths=100_000, band=0.1):
    est = hitting_probability_estimate(Disc((0.0, 0.0), 1.0), (0.0, 0.0), (0.5, 0.0),
                                       math.exp(-10), n_paths, rng)
    return [Verdict("hitting probability vs Green prediction", est.estimate, est.ci_lo,
                    est.ci_hi, est.prediction,
                    abs(est.estimate / est.prediction - 1.0) <= band, n_paths,
                    note=f"relative band={band:g}")]


def bessel_tasks(p: BesselVerifyParams) -> list:
    return [
        Task(("euler",), check_euler_vs_exact,
             dict(n=p.n_samples, dt=p.euler_dt, band=p.atom_band)),
        Task(("additivity",), check_additivity,
             dict(n=p.n_samples, starts=tuple(p.additivity_starts))),
        Task(("mean",), check_mean_identity, dict(n=p.mean_samples)),
        Task(("mass",), check_transition_mass),
        Task(("bridge",), check_bridge_methods, dict(n=p.bridge_samples)),
        Task(("green",), check_green_identity,
             dict(n_paths=p.green_paths, eps=p.green_eps, dt=p.green_dt, band=p.green_band,
                  width=p.green_width)),
        Task(("ray-knight",), check_ray_knight,
             dict(n=p.ray_knight_samples, n0=p.ray_knight_n0, dt=p.ray_knight_dt)),
        Task(("hitting",), check_hitting,
             dict(n_paths=p.hitting_paths, band=p.hitting_band)),
    ]


# ---------------------------------------------------------------------------
# barrier battery


def _linear(rng, **kw):
    return [B.linear_barrier_check(kw["a"], kw["c"], kw["n_paths"], rng, kw["horizon"], kw["dt"])]


def _bessel3(rng, n_paths, times):
    return B.bessel3_moment_check(0.0, times, n_paths, rng)


def _com(rng, gamma, functional, n_paths, dt):
    return [B.change_of_measure_check(gamma, 1.0, 4.0, B.PathFunctional(functional), n_paths,
                                      rng, dt=dt)]


def _poisson(rng):
    return B.poisson_summation_check()


def _n_exp(rng, n_values, n_paths):
    return [B.barrier_n_exponent(tuple(n_values), n_paths=n_paths, rng=rng)]


def _g_exp(rng, gammas, n_paths):
    return [B.barrier_gamma_exponent(tuple(gammas), n_paths=n_paths, rng=rng)]


def _continuity(rng, repeats, n_paths):
    return [B.continuity_decay_check(repeats=repeats, n_paths=n_paths, rng=rng)]


def barrier_tasks(p: BarrierBatteryParams) -> list:
    tasks = [
        Task(("linear",), _linear, dict(a=p.linear_a, c=p.linear_c, n_paths=p.linear_paths,
                                        horizon=p.linear_horizon, dt=p.linear_dt)),
        Task(("bessel3",), _bessel3, dict(n_paths=p.bessel3_paths, times=tuple(p.bessel3_times))),
        Task(("com", "one", 2.0), _com, dict(gamma=2.0, functional="one", n_paths=p.com_paths,
                                             dt=p.com_dt)),
        Task(("com", "one", 1.5), _com, dict(gamma=1.5, functional="one", n_paths=p.com_paths,
                                             dt=p.com_dt)),
        Task(("com", "derivative", 2.0), _com,
             dict(gamma=2.0, functional="derivative", n_paths=p.com_paths, dt=p.com_dt)),
        Task(("poisson",), _poisson),
        Task(("n-exponent",), _n_exp, dict(n_values=tuple(p.n_values), n_paths=p.exponent_paths)),
        Task(("gamma-exponent",), _g_exp, dict(gammas=tuple(p.gammas), n_paths=p.exponent_paths)),
    ]
    if p.continuity:
        tasks.append(Task(("continuity",), _continuity,
                          dict(repeats=p.continuity_repeats, n_paths=p.continuity_paths)))
    return tasks


# ---------------------------------------------------------------------------
# chaos


def chaos_run_task(rng, params: C.ChaosParams, run: int, gammas: tuple, identities: bool):
    """Totals for one run; with ``identities`` also the exact per-cell checks
    (needs a per-cell backend)."""
    if not identities:
        return C.run_totals(params, rng, run, gammas), None
    checks = {"sh_identity": True, "nesting": True, "muhat_nonneg": True, "masses_nonneg": True,
              "gp_in_g": True}
    totals = []
    rasters = C.simulate_rasters(params, rng) if params.backend == "path" else None
    for k in params.ks:
        fld = (C.path_field(params, k, rng, rasters) if params.backend == "path"
               else C.cascade_field(params, k, rng))
        eps = math.exp(-k)
        checks["sh_identity"] &= bool(np.array_equal(
            C.measure_seneta_heyde(fld.L_tau, eps, fld.area),
            math.sqrt(abs(math.log(eps))) * C.measure_subcritical(fld.L_tau, 2.0, eps, fld.area)))
        checks["sh_identity"] &= bool(np.array_equal(fld.m, C.measure_seneta_heyde(
            fld.L_tau, eps, fld.area)))
        checks["nesting"] &= bool(np.all(fld.mhathat <= fld.mhat) and np.all(fld.mhat <= fld.m))
        checks["gp_in_g"] &= bool(np.all(~fld.Gp | fld.G))
        checks["muhat_nonneg"] &= bool(np.all(fld.muhat[fld.G] >= 0)
                                       and np.all(fld.muhathat >= 0))
        checks["masses_nonneg"] &= bool(np.all(fld.m_gamma >= 0) and np.all(fld.m >= 0)
                                        and np.all(fld.mhat >= 0))
        tot = fld.totals(run=run)
        halves = [fld.totals(lambda c: c[:, 0] < 0, run), fld.totals(lambda c: c[:, 0] >= 0, run)]
        for t in [tot] + halves:
            checks["nesting"] &= t.mhathat <= t.mhat <= t.m
        for g in gammas:
            mg = C.measure_subcritical(fld.L_tau, g, eps, fld.area)
            totals.append(C.ChaosTotals(**{**asdict(tot), "gamma": g,
                                           "m_gamma": float(mg.sum()),
                                           "mhat_gamma": float(mg[fld.G].sum()),
                                           "mhathat_gamma": float(mg[fld.Gp & fld.far].sum())}))
        checks.setdefault("G_freq", []).append((k, float(fld.G.mean()), float(fld.Gp.mean())))
    return totals, checks


def chaos_run_battery(results, p: ChaosRunParams) -> Battery:
    totals = [t for res, _ in results for t in res]
    rows = [t.csv_row() for t in totals]
    detail = [[t.run, t.k, t.gamma, t.backend, t.m_gamma, t.m2, t.m, t.mu, t.mhat, t.mhathat,
               t.muhat, t.muhathat, t.n_cells, t.spacing, t.capped] for t in totals]
    out = Battery(tables={
        "chaos_runs": (C.RUN_COLUMNS, rows),
        "chaos_totals": (["run", "k", "gamma", "backend", "m_gamma", "m2", "m", "mu", "mhat",
                          "mhathat", "muhat", "muhathat", "n_cells", "spacing", "capped"],
                         detail)})
    n = len(results)
    finite = all(math.isfinite(t.m) and math.isfinite(t.mu) and t.m >= 0 for t in totals)
    out.verdicts.append(Verdict("chaos totals finite and m >= 0", float(finite), float(finite),
                                float(finite), 1.0, finite, n))
    checks = [c for _, c in results if c is not None]
    if checks:
        names = {"sh_identity": "m = sqrt|log eps| m^{gamma=2} bit-for-bit per cell",
                 "nesting": "mhathat <= mhat <= m per cell and per region",
                 "gp_in_g": "G' implies G per centre",
                 "muhat_nonneg": "restricted derivative integrand >= 0 on G",
                 "masses_nonneg": "m^gamma, m, mhat >= 0 per cell"}
        for key, name in names.items():
            ok = all(c[key] for c in checks)
            out.verdicts.append(Verdict(name, float(ok), float(ok), float(ok), 1.0, ok, n))
        freq = [row for c in checks for row in c["G_freq"]]
        out.tables["good_event_frequency"] = (["k", "G", "G_prime"], [list(r) for r in freq])
    return out


def chaos_run_tasks(p: ChaosRunParams) -> list:
    cp = p.chaos_params()
    per_cell = cp.backend in ("cascade", "path")
    return [Task(("run", r), chaos_run_task, dict(params=cp, run=r, gammas=tuple(p.gammas),
                                                 identities=per_cell))
            for r in range(p.n_runs)]


def diagnostics_tasks(p: ChaosDiagnosticsParams) -> list:
    decay = p.chaos_params(p.backend, p.ks)
    ratio = p.chaos_params(p.ratio_backend, p.ratio_ks)
    g = tuple(sorted(set(p.gammas) | {p.gamma_check}))
    tasks = [Task(("decay", r), chaos_run_task, dict(params=decay, run=r, gammas=(2.0,),
                                                     identities=False))
             for r in range(p.n_runs)]
    tasks += [Task(("ratio", r), chaos_run_task, dict(params=ratio, run=r, gammas=g,
                                                      identities=False))
              for r in range(p.ratio_runs)]
    return tasks


def diagnostics_battery(results, p: ChaosDiagnosticsParams) -> Battery:
    decay = [t for res, _ in results[:p.n_runs] for t in res]
    ratio = [t for res, _ in results[p.n_runs:] for t in res]
    a = C.convergence_diagnostics(decay, gamma_check=2.0, sh_spread=p.sh_spread,
                                  checks=("decay",))
    b = C.convergence_diagnostics(ratio, gamma_check=p.gamma_check, sh_band=tuple(p.sh_band),
                                  sub_band=tuple(p.sub_band), checks=("ratio",))
    out = Battery()
    out.verdicts = a.verdicts + b.verdicts
    out.tables["decay_runs"] = a.tables["chaos_runs"]
    out.tables["decay_medians"] = a.tables["chaos_medians"]
    out.tables["chaos_runs"] = b.tables["chaos_runs"]
    out.tables["chaos_medians"] = b.tables["chaos_medians"]
    out.tables["chaos_totals"] = (
        ["ensemble", "run", "k", "gamma", "backend", "m_gamma", "m2", "m", "mu"],
        [[name, t.run, t.k, t.gamma, t.backend, t.m_gamma, t.m2, t.m, t.mu]
         for name, ens in (("decay", decay), ("ratio", ratio)) for t in ens])
    return out


# ---------------------------------------------------------------------------
# thick points


def thick_trial(rng, N: int, trial: int):
    run = T.srw_local_time_field(N, rng, trial)
    assert int(run.counts.sum()) == run.steps
    return T.LatticeRun(N, run.counts[run.counts > 0].astype(np.int32), run.steps, trial)


def origin_trial(rng, N: int):
    return int(T.srw_local_time_field(N, rng).counts[N, N])


def thick_tasks(p: ThickpointsParams) -> list:
    tasks = [Task(("lattice", N, t), thick_trial, dict(N=N, trial=t))
             for N in p.Ns for t in range(p.trials)]
    tasks += [Task(("origin", N, t), origin_trial, dict(N=N))
              for N in p.origin_Ns for t in range(p.origin_trials)]
    return tasks


def thick_battery(results, p: ThickpointsParams) -> Battery:
    n_l = len(p.Ns) * p.trials
    runs = results[:n_l]
    origin = results[n_l:]
    out = T.thick_point_statistics(runs, p.levels, tuple(p.pair))
    out.extend(T.erdos_taylor_trend(runs, tuple(p.band), p.top_N))
    if p.origin_Ns:
        vals = iter(origin)
        by = {N: [next(vals) for _ in range(p.origin_trials)] for N in p.origin_Ns}
        out.extend(T.origin_visit_trend(p.origin_Ns, p.origin_trials, counts=by))
    return out


# ---------------------------------------------------------------------------
# dispatch


def _flatten_verdicts(results) -> Battery:
    out = Battery()
    for r in results:
        out.verdicts.extend(r)
    return out


EXPERIMENT_TASKS = {
    "bessel-verify": (bessel_tasks, lambda res, p: _flatten_verdicts(res)),
    "barrier-battery": (barrier_tasks, lambda res, p: _flatten_verdicts(res)),
    "chaos-run": (chaos_run_tasks, chaos_run_battery),
    "chaos-diagnostics": (diagnostics_tasks, diagnostics_battery),
    "thickpoints": (thick_tasks, thick_battery),
}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None, out_dir=None,
                   write: bool = True) -> ExperimentReport:
    """Run the battery named by ``cfg`` and optionally persist it."""
    make, reduce = EXPERIMENT_TASKS[cfg.experiment]
    t0 = time.perf_counter()
    tasks = make(cfg.params)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", LocalTimeWarning)
        results = run_tasks(tasks, cfg.seed, cfg.experiment, workers or cfg.workers)
    bat = reduce(results, cfg.params)
    rep = ExperimentReport(cfg.experiment, config_hash(cfg), cfg.seed, bat.verdicts, bat.tables,
                           wall_time=time.perf_counter() - t0)
    if write:
        write_report(rep, out_dir if out_dir is not None else cfg.out)
    return rep
