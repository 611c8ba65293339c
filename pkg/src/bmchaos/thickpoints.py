"""Visit counts of planar simple random walk killed on leaving [-N, N]^2.

The most visited site is compared with the leading order (2/sqrt(pi)) log N
of its square-root visit count, and with the second-order centring
-(1/sqrt(pi)) log log N.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import _kernels as K
from .report import Battery, Verdict
from .rng import RngStream

LEAD = 2.0 / math.sqrt(math.pi)     # 1.1284
SECOND = 1.0 / math.sqrt(math.pi)   # 0.5642
MAX_N = 4096


@dataclass
class LatticeRun:
    N: int
    counts: np.ndarray
    steps: int
    trial: int = 0

    @property
    def sup_ell(self) -> int:
        return int(self.counts.max())

    @property
    def centred_sup(self) -> float:
        """max sqrt(l) - 2 pi^{-1/2} log N + pi^{-1/2} log log N."""
        return centred(math.sqrt(self.sup_ell), self.N)

    def threshold_counts(self, levels) -> np.ndarray:
        """Number of sites whose centred sqrt visit count exceeds each level."""
        vals = np.sort(centred(np.sqrt(self.counts[self.counts > 0]), self.N))
        return vals.size - np.searchsorted(vals, np.asarray(levels, dtype=float), side="right")


def centred(root_ell, N: int):
    if N < 2:
        raise ValueError("centring needs N >= 2 (log log N)")
    ln = math.log(N)
    return root_ell - LEAD * ln + SECOND * math.log(ln)


def srw_local_time_field(N: int, rng: RngStream, trial: int = 0,
                         max_steps: int | None = None) -> LatticeRun:
    """Walk from the origin until it leaves [-N, N]^2, counting visits per site."""
    if N < 1:
        raise ValueError("N must be a positive integer")
    if N > MAX_N:
        raise MemoryError(f"N = {N} exceeds the dense-array limit {MAX_N}")
    counts = np.zeros((2 * N + 1, 2 * N + 1), dtype=np.int32)
    if max_steps is None:
        max_steps = 200 * (N + 1) ** 2 + 10_000
    steps = K.srw_until_exit(N, counts, max_steps, rng)
    if steps < 0:
        raise RuntimeError("walk did not exit within max_steps")
    return LatticeRun(N, counts, int(steps), trial)


def _quartiles(x):
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return float(q1), float(med), float(q3)


def thick_point_statistics(runs, levels=None, pair=(128, 512)) -> Battery:
    """Distribution of the centred maximum across trials and sizes.

    Table rows (N, trial, sup_ell, S_N); verdicts: per-run monotonicity of the
    threshold counts and, when both sizes of ``pair`` are present, the
    stabilisation check |median S_small - median S_large| < IQR at the large
    size (a band of our choosing; no limit law is claimed).
    """
    levels = np.linspace(-3.0, 3.0, 13) if levels is None else np.asarray(levels, dtype=float)
    rows = []
    by_n: dict[int, list] = {}
    mono = True
    thr_rows = []
    for run in runs:
        s = run.centred_sup
        rows.append([run.N, run.trial, run.sup_ell, s])
        by_n.setdefault(run.N, []).append(s)
        tc = run.threshold_counts(levels)
        mono &= bool(np.all(np.diff(tc) <= 0))
        thr_rows.extend([run.N, run.trial, a, int(c)] for a, c in zip(levels, tc))
    out = Battery(tables={
        "thickpoints": (["N", "trial", "sup_ell", "S_N"], rows),
        "threshold_counts": (["N", "trial", "level", "count"], thr_rows)})
    out.verdicts.append(Verdict("threshold counts nonincreasing", float(mono), float(mono),
                                float(mono), 1.0, mono, len(rows)))
    for N in sorted(by_n):
        q1, med, q3 = _quartiles(by_n[N])
        out.verdicts.append(Verdict(f"S_N median N={N}", med, q1, q3, None, len(by_n[N]) >= 20,
                                    len(by_n[N]), note="quartile interval; >= 20 trials needed"))
    small, large = pair
    if small in by_n and large in by_n:
        q1, med_l, q3 = _quartiles(by_n[large])
        med_s = _quartiles(by_n[small])[1]
        drift = abs(med_l - med_s)
        out.verdicts.append(Verdict(f"S_N drift N={small}->{large} below IQR", drift, drift,
                                    drift, q3 - q1, drift < q3 - q1,
                                    len(by_n[small]) + len(by_n[large])))
    return out


def erdos_taylor_trend(runs, band=(0.5, 1.2), top_N: int = 512) -> Battery:
    """R_N = mean max l / (log N)^2 against 4/pi: increasing in N, and inside
    ``band`` times 4/pi at ``top_N``."""
    target = 4.0 / math.pi
    by_n: dict[int, list] = {}
    for run in runs:
        by_n.setdefault(run.N, []).append(run.sup_ell)
    Ns = sorted(by_n)
    if len(Ns) < 3:
        raise ValueError("need at least three sizes")
    R, se = [], []
    rows = []
    for N in Ns:
        x = np.asarray(by_n[N], dtype=float) / math.log(N) ** 2
        R.append(float(x.mean()))
        se.append(float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0)
        rows.append([N, x.size, R[-1], se[-1], R[-1] / target])
    out = Battery(tables={"erdos_taylor": (["N", "trials", "R_N", "se", "R_N_over_4_pi"], rows)})
    inc = bool(np.all(np.diff(R) > 0))
    out.verdicts.append(Verdict("R_N increasing in N", R[-1], R[0], R[-1], target, inc,
                                sum(len(v) for v in by_n.values()),
                                note="R=" + ",".join(f"{r:.4f}" for r in R)))
    if top_N in by_n:
        i = Ns.index(top_N)
        lo, hi = band[0] * target, band[1] * target
        out.verdicts.append(Verdict(f"R_{top_N} in band", R[i], R[i] - 1.96 * se[i],
                                    R[i] + 1.96 * se[i], target, lo <= R[i] <= hi,
                                    len(by_n[top_N]), note=f"band [{lo:.4f}, {hi:.4f}]"))
    return out


def origin_visit_trend(Ns, trials: int, rng_for=None, counts=None) -> Battery:
    """Mean visits to the origin against log N: the fitted slope must be
    positive and every pairwise slope positive.

    Visit counts are simulated with ``rng_for(N, trial)`` or taken from
    ``counts[N]`` when given.
    """
    means = []
    for N in Ns:
        if counts is not None:
            v = counts[N]
        else:
            v = [srw_local_time_field(N, rng_for(N, t)).counts[N, N] for t in range(trials)]
        means.append(float(np.mean(v)))
    ln = np.log(np.asarray(Ns, dtype=float))
    slope, icpt = np.polyfit(ln, means, 1)
    pair = [(means[i + 1] - means[i]) / (ln[i + 1] - ln[i]) for i in range(len(Ns) - 1)]
    rows = [[N, trials, m] for N, m in zip(Ns, means)]
    stable = slope > 0 and all(p > 0 for p in pair)
    return Battery([Verdict("origin visits slope vs log N", float(slope), min(pair), max(pair),
                            2.0 / math.pi, stable, trials * len(Ns),
                            note="pairwise slopes " + ",".join(f"{p:.3f}" for p in pair))],
                   {"origin_visits": (["N", "trials", "mean_ell0"], rows)})
