"""Empirical measurement: histograms, total-variation estimates, density
lower-bound checks, and bound-dominance reports.

Total variation between two binned samples is half the L1 distance of the
normalised counts.  Monte-Carlo margins follow the normal approximation: for
two equal laws the TV estimator concentrates around a positive noise floor,
so every comparison against a theoretical bound carries an explicit
(bias + n_sigma * sd) margin rather than a bare 3-sigma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2 as chi2_dist
from scipy.stats import norm

from .errors import (
    AxisMismatch,
    InsufficientSamples,
    ShapeMismatch,
)
from .geometry import ConvexBody
from .reflection import ReflectionLaw
from . import rng as rngmod
from .dynamics import run_chain_ensemble

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------

@dataclass
class Histogram:
    """Equal-width counts over [lo, hi), optionally periodic."""

    lo: float
    hi: float
    counts: np.ndarray
    periodic: bool = False

    @property
    def bin_count(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @staticmethod
    def from_samples(values, bins: int, lo: float, hi: float,
                     periodic: bool = False) -> "Histogram":
        v = np.asarray(values, dtype=float)
        if periodic:
            v = lo + np.mod(v - lo, hi - lo)
        counts, _ = np.histogram(v, bins=bins, range=(lo, hi))
        return Histogram(lo=lo, hi=hi, counts=counts.astype(np.int64),
                         periodic=periodic)

    def merge(self, other: "Histogram") -> "Histogram":
        self._check_shape(other)
        return Histogram(self.lo, self.hi, self.counts + other.counts,
                         self.periodic)

    def probs(self) -> np.ndarray:
        t = self.total
        if t == 0:
            return np.zeros_like(self.counts, dtype=float)
        return self.counts / t

    def _check_shape(self, other: "Histogram"):
        if (self.bin_count != other.bin_count or self.lo != other.lo
                or self.hi != other.hi or self.periodic != other.periodic):
            raise ShapeMismatch("histograms live on different domains")


def tv_hist(h1: Histogram, h2: Histogram) -> float:
    """Half L1 distance between the normalised counts; in [0, 1]."""
    h1._check_shape(h2)
    return float(0.5 * np.abs(h1.probs() - h2.probs()).sum())


def tv_noise(h1: Histogram, h2: Histogram) -> tuple[float, float]:
    """(bias, sd) of the TV estimator under the equal-laws hypothesis.

    Pools the two samples for per-bin variances; bias is the expected value
    of the estimator when the true TV is zero.
    """
    h1._check_shape(h2)
    n1, n2 = max(h1.total, 1), max(h2.total, 1)
    p = (h1.counts + h2.counts) / (n1 + n2)
    var = p * (1.0 - p) * (1.0 / n1 + 1.0 / n2)
    sd_bin = np.sqrt(var)
    bias = 0.5 * float(np.sum(sd_bin)) * _SQRT_2_OVER_PI
    sd = 0.5 * math.sqrt(float(np.sum(var * (1.0 - 2.0 / math.pi))))
    return bias, sd


def tv_to_probs(h: Histogram, probs: np.ndarray) -> float:
    """TV between a histogram and exact bin probabilities."""
    probs = np.asarray(probs, dtype=float)
    if probs.size != h.bin_count:
        raise ShapeMismatch("probability vector does not match the bins")
    return float(0.5 * np.abs(h.probs() - probs).sum())


def two_sample_chi2(h1: Histogram, h2: Histogram) -> tuple[float, float]:
    """Two-sample chi-square statistic and p-value on shared bins.

    Bins empty in both samples are dropped; degrees of freedom shrink
    accordingly.
    """
    h1._check_shape(h2)
    n1, n2 = h1.total, h2.total
    if min(n1, n2) < 1000:
        raise InsufficientSamples("chi-square verdicts need >= 1000 samples")
    k1, k2 = h1.counts.astype(float), h2.counts.astype(float)
    keep = (k1 + k2) > 0
    k1, k2 = k1[keep], k2[keep]
    r1 = math.sqrt(n2 / n1)
    r2 = math.sqrt(n1 / n2)
    stat = float(np.sum((r1 * k1 - r2 * k2) ** 2 / (k1 + k2)))
    dof = int(keep.sum()) - 1
    pval = float(chi2_dist.sf(stat, dof))
    return stat, pval


# ---------------------------------------------------------------------------
# two-start TV curves
# ---------------------------------------------------------------------------

@dataclass
class TVCurve:
    """Empirical TV(n) between two chain ensembles, with noise margins."""

    axis: str                      # "step" or "time"
    grid: np.ndarray
    tv: np.ndarray
    bias: np.ndarray
    sd: np.ndarray

    def margin(self, n_sigma: float = 3.0) -> np.ndarray:
        return self.bias + n_sigma * self.sd


def empirical_tv_curve(body: ConvexBody, law: ReflectionLaw, s0: float,
                       s0_b: float, n_max: int, replicas: int, bins: int,
                       seed: int, workers: int = 1) -> TVCurve:
    """Two-start TV proxy curve for n = 0..n_max.

    Two independent replica ensembles are simulated, one per start; TV(n)
    compares their position histograms after n bounces.  This proxy is what
    the coupling argument bounds directly; distance to the invariant law is
    within a factor two of it by the triangle inequality.

    Replicas are simulated in fixed-size chunks with one counter-based
    stream per (start, chunk), so results are byte-identical for any
    worker count.
    """
    hists_a = _ensemble_histograms(body, law, s0, n_max, replicas, bins,
                                   seed, "tv-curve-a", workers)
    hists_b = _ensemble_histograms(body, law, s0_b, n_max, replicas, bins,
                                   seed, "tv-curve-b", workers)
    return curve_from_histograms(hists_a, hists_b)


def _hist_job(args):
    body, law, s0, n_max, bins, seed, kind, count, chunk_idx = args
    gen = rngmod.substream(seed, kind, chunk_idx)
    arcs = run_chain_ensemble(body, law, np.full(count, s0), n_max, gen)
    return [np.histogram(np.mod(arcs[n], body.perimeter), bins=bins,
                         range=(0.0, body.perimeter))[0].astype(np.int64)
            for n in range(n_max + 1)]


def _ensemble_histograms(body, law, s0, n_max, replicas, bins, seed, kind,
                         workers: int = 1):
    from .parallel import map_jobs
    chunks = rngmod.chunk_streams(seed, kind, replicas)
    jobs = [(body, law, s0, n_max, bins, seed, kind, stop - start, idx)
            for idx, (start, stop, _) in enumerate(chunks)]
    results = map_jobs(_hist_job, jobs, workers)
    totals = [np.zeros(bins, dtype=np.int64) for _ in range(n_max + 1)]
    for counts in results:
        for n in range(n_max + 1):
            totals[n] += counts[n]
    return [Histogram(0.0, body.perimeter, t, periodic=True) for t in totals]


def curve_from_histograms(hists_a, hists_b) -> TVCurve:
    grid = np.arange(len(hists_a), dtype=float)
    tv = np.empty(grid.size)
    bias = np.empty(grid.size)
    sd = np.empty(grid.size)
    for n, (ha, hb) in enumerate(zip(hists_a, hists_b)):
        tv[n] = tv_hist(ha, hb)
        bias[n], sd[n] = tv_noise(ha, hb)
    return TVCurve(axis="step", grid=grid, tv=tv, bias=bias, sd=sd)


# ---------------------------------------------------------------------------
# density lower-bound checks
# ---------------------------------------------------------------------------

@dataclass
class LbWindowResult:
    window: tuple
    required: float
    observed: float
    z: float
    passed: bool


@dataclass
class LbReport:
    passed: bool
    worst_z: float
    level: float
    n_samples: int
    windows: list[LbWindowResult] = field(default_factory=list)


def _dyadic_intervals(lo: float, hi: float, max_depth: int = 16):
    """Sub-intervals at dyadic resolutions 1, 2, 4, 8, ..., max_depth."""
    spans = []
    d = 1
    while d <= max_depth:
        width = (hi - lo) / d
        for k in range(d):
            spans.append((lo + k * width, lo + (k + 1) * width))
        d *= 2
    return spans


def lb_check(samples, window, level: float, confidence: float = norm.sf(3.0),
             min_samples: int = 10_000) -> LbReport:
    """Verify a density (or pair-density) lower bound statistically.

    For every dyadic sub-window W' down to 1/16 of the stated window the
    check requires

        empirical frequency + z_crit * sigma  >=  level * |W'|

    where sigma is the binomial standard deviation at the boundary
    hypothesis and z_crit = Phi^{-1}(1 - confidence).  Samples are a 1-d
    array for scalar windows or an (N, 2) array with a pair of intervals.
    """
    arr = np.asarray(samples, dtype=float)
    z_crit = float(norm.isf(confidence))
    if arr.ndim == 1:
        n = arr.size
        if n < min_samples:
            raise InsufficientSamples(f"need at least {min_samples} samples")
        subs = [(iv,) for iv in _dyadic_intervals(*window)]
        def measure(sub):
            return sub[0][1] - sub[0][0]
        def count(sub):
            lo, hi = sub[0]
            return int(np.count_nonzero((arr >= lo) & (arr < hi)))
    elif arr.ndim == 2 and arr.shape[1] == 2:
        n = arr.shape[0]
        if n < min_samples:
            raise InsufficientSamples(f"need at least {min_samples} samples")
        (alo, ahi), (blo, bhi) = window
        subs = []
        d1 = 1
        while d1 <= 16:
            d2 = 1
            while d1 * d2 <= 16:
                w1 = (ahi - alo) / d1
                w2 = (bhi - blo) / d2
                for i in range(d1):
                    for j in range(d2):
                        subs.append(((alo + i * w1, alo + (i + 1) * w1),
                                     (blo + j * w2, blo + (j + 1) * w2)))
                d2 *= 2
            d1 *= 2
        def measure(sub):
            return (sub[0][1] - sub[0][0]) * (sub[1][1] - sub[1][0])
        def count(sub):
            (l0, h0), (l1, h1) = sub
            m = (arr[:, 0] >= l0) & (arr[:, 0] < h0) \
                & (arr[:, 1] >= l1) & (arr[:, 1] < h1)
            return int(np.count_nonzero(m))
    else:
        raise ValueError("samples must be 1-d or (N, 2)")

    results = []
    worst = -math.inf
    for sub in subs:
        required = level * measure(sub)
        observed = count(sub) / n
        # variance at the boundary hypothesis, floored so degenerate cases
        # (claimed mass at or beyond one) still produce finite verdicts
        var = max(required * max(1.0 - required, 0.0), 1e-9)
        z = (required - observed) / math.sqrt(var / n)
        passed = z <= z_crit
        worst = max(worst, z)
        results.append(LbWindowResult(sub, required, observed, z, passed))
    return LbReport(passed=all(r.passed for r in results), worst_z=worst,
                    level=level, n_samples=n, windows=results)


# ---------------------------------------------------------------------------
# dominance reports
# ---------------------------------------------------------------------------

@dataclass
class DominancePoint:
    x: float
    empirical: float
    margin: float
    bound: float
    passed: bool


@dataclass
class DominanceReport:
    passed: bool
    axis: str
    points: list[DominancePoint]

    def rows(self):
        return [(p.x, p.empirical, p.margin, p.bound, p.passed)
                for p in self.points]


def dominance_report(curve: TVCurve, certificate, sigma_margin: float = 3.0,
                     skip_zero: bool = True) -> DominanceReport:
    """Pointwise comparison of an empirical curve against a certificate bound.

    Passes where empirical <= bound + bias + sigma_margin * sd.  The n = 0
    point is skipped by default (the bound is vacuous there for distinct
    starts).
    """
    if curve.axis != certificate.axis:
        raise AxisMismatch(
            f"curve axis {curve.axis!r} vs certificate axis {certificate.axis!r}")
    points = []
    for i, x in enumerate(curve.grid):
        if skip_zero and x == 0.0:
            continue
        bound = float(certificate.bound(x))
        margin = float(curve.bias[i] + sigma_margin * curve.sd[i])
        emp = float(curve.tv[i])
        points.append(DominancePoint(float(x), emp, margin, bound,
                                     emp <= bound + margin))
    return DominanceReport(passed=all(p.passed for p in points),
                           axis=curve.axis, points=points)


def survival_report(times, certificate, grid, sigma_margin: float = 3.0) -> DominanceReport:
    """Compare an empirical survival tail P(T > t) against a bound curve.

    ``times`` may contain NaN for replicas that never coupled; they count as
    survivors at every grid point.
    """
    t = np.asarray(times, dtype=float)
    n = t.size
    points = []
    for x in np.asarray(grid, dtype=float):
        surv = float(np.mean(~(t <= x)))  # NaN-safe: NaN survives
        sd = math.sqrt(max(surv * (1.0 - surv), 1.0 / n) / n)
        bound = float(certificate.bound(x))
        points.append(DominancePoint(float(x), surv, sigma_margin * sd,
                                     bound, surv <= bound + sigma_margin * sd))
    return DominanceReport(passed=all(p.passed for p in points),
                           axis=certificate.axis, points=points)
