"""Two-stage coupling of the continuous-time billiard in a disc.

Stage one repeatedly couples the *clocks*: after aligning within one
diameter, each process makes two bounces and the accumulated hitting times
are plateau-coupled on the certified two-bounce time window (floor delta,
guaranteed overlap h).  On failure the earlier process bounces until its
clock strictly passes the later one and the attempt repeats.

Once the clocks agree, stage two attempts to couple landing position and
time jointly on the product window of the pair profile; success makes the
two processes share position, velocity and clock forever.  On failure the
clocks are realigned and stage one resumes.

The engine is vectorised across replicas: all replicas advance through the
attempt state machine in lockstep under boolean masks, drawing from one
counter-based stream per fixed-size replica chunk.  The per-attempt success
probabilities are exactly the certified plateau masses, so the recorded
attempt statistics are directly comparable with the certificate constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import HypothesisViolated, OutsideBody, TangentRay
from ..geometry import TWO_PI
from ..rates import RateCertificate, disc_pair_profile
from ..reflection import ReflectionLaw
from .base import AttemptRecord, CouplingOutcome

_GUARD = 1e-9
_T_GRID = 2049
_U_GRID = 192


# ---------------------------------------------------------------------------
# two-bounce time density (table) and conditional angle sampler
# ---------------------------------------------------------------------------

class _TwoBounceTables:
    """Density of cos(A) + cos(B) for two independent law angles.

    Built on a fixed grid with a square-root substitution at the endpoint
    where the inner arccosine degenerates, which removes the integrable
    singularity of the integrand.
    """

    def __init__(self, law: ReflectionLaw):
        self.law = law
        self.m = 0.5 * law.support_width
        w_min = 2.0 * math.cos(self.m)
        self.w_grid = np.linspace(w_min + 1e-12, 2.0 - 1e-12, _T_GRID)
        self.pdf_grid = np.array([self._pdf_single(w) for w in self.w_grid])

    def _u_range(self, w):
        cos_m = math.cos(self.m)
        cos_hi = min(w - cos_m, 1.0)        # largest admissible cos(u)
        cos_lo = max(w - 1.0, cos_m)        # smallest admissible cos(u)
        if cos_hi <= cos_lo:
            return None
        return math.acos(cos_hi), math.acos(cos_lo)

    def _weights(self, w, n=_U_GRID):
        """Midpoint weights of the |first angle| conditional on a t-grid."""
        rng_u = self._u_range(w)
        if rng_u is None:
            return None, None
        u_lo, u_hi = rng_u
        t_hi = math.sqrt(u_hi - u_lo)
        t = (np.arange(n) + 0.5) * (t_hi / n)
        u = u_hi - t * t
        z = w - np.cos(u)
        v = np.arccos(np.clip(z, -1.0, 1.0))
        sin_v = np.maximum(np.sin(v), 1e-300)
        wgt = (self.law.density(u) * 2.0 * self.law.density(v) / sin_v
               * 2.0 * t * (t_hi / n))
        return u, np.maximum(wgt, 0.0)

    def _pdf_single(self, w):
        u, wgt = self._weights(w, n=512)
        if u is None:
            return 0.0
        return 2.0 * float(np.sum(wgt))  # both signs of the first angle

    def pdf(self, w):
        """Density of the cosine sum, interpolated from the table."""
        return np.interp(np.asarray(w, dtype=float), self.w_grid,
                         self.pdf_grid, left=0.0, right=0.0)

    def conditional_pair(self, w_targets, rng: np.random.Generator):
        """Sample (angle1, angle2) given cos(angle1) + cos(angle2) = w."""
        w_targets = np.atleast_1d(np.asarray(w_targets, dtype=float))
        n = w_targets.size
        th1 = np.empty(n)
        th2 = np.empty(n)
        # vectorised over the replica axis: each row gets its own t-grid
        cos_m = math.cos(self.m)
        u_lo = np.arccos(np.clip(np.minimum(w_targets - cos_m, 1.0), -1.0, 1.0))
        u_hi = np.arccos(np.clip(np.maximum(w_targets - 1.0, cos_m), -1.0, 1.0))
        t_hi = np.sqrt(np.maximum(u_hi - u_lo, 1e-300))
        t = (np.arange(_U_GRID) + 0.5)[None, :] * (t_hi[:, None] / _U_GRID)
        u = u_hi[:, None] - t * t
        z = w_targets[:, None] - np.cos(u)
        v = np.arccos(np.clip(z, -1.0, 1.0))
        sin_v = np.maximum(np.sin(v), 1e-300)
        wgt = self.law.density(u) * self.law.density(v) / sin_v * t
        cdf = np.cumsum(wgt, axis=1)
        tot = np.maximum(cdf[:, -1], 1e-300)
        pick = rng.random(n) * tot
        idx = np.minimum((cdf < pick[:, None]).sum(axis=1), _U_GRID - 1)
        rows = np.arange(n)
        u_sel = u[rows, idx]
        v_sel = v[rows, idx]
        sign_u = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        sign_v = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        th1[:] = sign_u * u_sel
        th2[:] = sign_v * v_sel
        return th1, th2


# ---------------------------------------------------------------------------
# batch engine
# ---------------------------------------------------------------------------

@dataclass
class BatchCouplingResult:
    coupled: np.ndarray          # bool per replica
    coupling_time: np.ndarray    # clock of coupling, NaN when uncoupled
    stage1_attempts: np.ndarray
    stage1_successes: np.ndarray
    stage2_attempts: np.ndarray
    stage2_successes: np.ndarray
    first_bounces: np.ndarray | None = None  # (replicas, k) angles of process a

    @property
    def stage1_rate(self) -> float:
        return float(self.stage1_successes.sum() / max(self.stage1_attempts.sum(), 1))

    @property
    def stage2_rate(self) -> float:
        return float(self.stage2_successes.sum() / max(self.stage2_attempts.sum(), 1))


def _first_hit_disc(r: float, position, velocity) -> tuple[float, float]:
    p = np.asarray(position, dtype=float)
    v = np.asarray(velocity, dtype=float)
    v = v / float(np.hypot(v[0], v[1]))
    b = float(np.dot(p, v))
    c0 = float(np.dot(p, p)) - r * r
    if c0 > 1e-12 * r * r:
        raise OutsideBody("process start lies outside the disc")
    tau = -b + math.sqrt(max(b * b - c0, 0.0))
    if tau <= 0.0:
        raise TangentRay("start velocity does not enter the disc")
    hit = p + tau * v
    return tau, math.atan2(hit[1], hit[0]) % TWO_PI


def couple_process_disc_batch(r: float, law: ReflectionLaw, start_a, start_b,
                              cert: RateCertificate, t_max: float,
                              n_replicas: int, seed: int,
                              record_first: int = 0,
                              trace: list | None = None,
                              workers: int = 1) -> BatchCouplingResult:
    """Run the two-stage coupling for many replicas of one start pair.

    ``start_*`` are (position, velocity) pairs anywhere in the closed disc.
    Replicas share the deterministic first flight and then evolve on
    independent chunk streams, so any worker count reproduces the same
    outcome arrays.  ``record_first`` keeps the first k landing angles of
    the first process for marginal checks; ``trace`` (single replica only)
    collects per-attempt records.
    """
    if cert.kind != "disc_process":
        raise HypothesisViolated("certificate kind must be disc_process")
    width = cert.inputs["width"]
    if not (2.0 * math.pi / 3.0 < width < math.pi):
        raise HypothesisViolated("certified width outside (2*pi/3, pi)")
    floor, eta, eps = (cert.inputs["floor"], cert.inputs["eta"],
                       cert.inputs["eps"])
    delta = cert.constants["delta"]
    prof2 = disc_pair_profile(r, width, floor, eps)
    tables = _TwoBounceTables(law)

    pos_a, vel_a = (np.asarray(start_a[0], float), np.asarray(start_a[1], float))
    pos_b, vel_b = (np.asarray(start_b[0], float), np.asarray(start_b[1], float))
    T0a, phi0a = _first_hit_disc(r, pos_a, vel_a)
    T0b, phi0b = _first_hit_disc(r, pos_b, vel_b)

    R = int(n_replicas)
    out = BatchCouplingResult(
        coupled=np.zeros(R, dtype=bool),
        coupling_time=np.full(R, np.nan),
        stage1_attempts=np.zeros(R, dtype=np.int64),
        stage1_successes=np.zeros(R, dtype=np.int64),
        stage2_attempts=np.zeros(R, dtype=np.int64),
        stage2_successes=np.zeros(R, dtype=np.int64),
        first_bounces=np.full((R, record_first), np.nan) if record_first else None,
    )
    if np.allclose(pos_a, pos_b) and np.allclose(vel_a, vel_b):
        out.coupled[:] = True
        out.coupling_time[:] = T0a
        if record_first:
            _fill_plain_chain(out.first_bounces, np.zeros(R, dtype=np.int64),
                              np.full(R, phi0a), law, rngmod.substream(seed, "pd-fill"))
        return out

    from ..parallel import map_jobs
    chunks = rngmod.chunk_streams(seed, "process-disc", R)
    jobs = [(hi - lo, seed, idx, r, law, tables, delta, prof2, width, eta,
             T0a, phi0a, T0b, phi0b, t_max, record_first,
             trace if len(chunks) == 1 else None)
            for idx, (lo, hi, _) in enumerate(chunks)]
    results = map_jobs(_chunk_job, jobs, workers)
    for (lo, hi, _), res in zip(chunks, results):
        sl = slice(lo, hi)
        for name in ("coupled", "coupling_time", "stage1_attempts",
                     "stage1_successes", "stage2_attempts",
                     "stage2_successes"):
            getattr(out, name)[sl] = res[name]
        if record_first:
            out.first_bounces[sl] = res["first_bounces"]
        if trace is not None and res.get("trace"):
            trace.extend(res["trace"])
    return out


def _chunk_job(args):
    (n, seed, chunk_idx, r, law, tables, delta, prof2, width, eta,
     T0a, phi0a, T0b, phi0b, t_max, record_first, trace) = args
    rng = rngmod.substream(seed, "process-disc", chunk_idx)
    local_trace = [] if trace is not None else None
    res = _run_chunk(n, rng, r, law, tables, delta, prof2, width, eta,
                     T0a, phi0a, T0b, phi0b, t_max, record_first,
                     local_trace)
    res["trace"] = local_trace
    return res


def _run_chunk(n, rng, r, law, tables, delta, prof2, width, eta,
               T0a, phi0a, T0b, phi0b, t_max, record_first, trace):
    phi = np.full(n, phi0a)
    phit = np.full(n, phi0b)
    c = np.full(n, T0a)
    ct = np.full(n, T0b)
    phase = np.ones(n, dtype=np.int8)
    active = np.ones(n, dtype=bool)
    coupled = np.zeros(n, dtype=bool)
    that = np.full(n, np.nan)
    s1a = np.zeros(n, dtype=np.int64)
    s1s = np.zeros(n, dtype=np.int64)
    s2a = np.zeros(n, dtype=np.int64)
    s2s = np.zeros(n, dtype=np.int64)
    cursor = np.zeros(n, dtype=np.int64)
    bounces = np.full((n, record_first), np.nan) if record_first else None

    w1_lo = 4.0 * r * math.cos(0.5 * width) + eta
    w1_hi = 4.0 * r - eta
    level2 = prof2["level"]
    aw = prof2["angle_halfwidth"]
    B_lo, B_hi = prof2["t_lo"], prof2["t_hi"]

    def record(idx, values):
        if bounces is None or idx.size == 0:
            return
        cur = cursor[idx]
        ok = cur < bounces.shape[1]
        bounces[idx[ok], cur[ok]] = values[ok]
        cursor[idx] += 1

    def bounce(idx, phi_arr, clock_arr, do_record):
        th = _angles(law, rng, idx.size)
        phi_arr[idx] = np.mod(phi_arr[idx] + math.pi + 2.0 * th, TWO_PI)
        clock_arr[idx] += 2.0 * r * np.cos(th)
        if do_record:
            record(idx, phi_arr[idx])

    def realign(idx):
        # the initially earlier process bounces until its clock strictly
        # passes the other's; the later process stays put
        a_lags = c[idx] <= ct[idx]
        ia = idx[a_lags]
        ib = idx[~a_lags]
        while ia.size:
            bounce(ia, phi, c, True)
            ia = ia[c[ia] <= ct[ia]]
        while ib.size:
            bounce(ib, phit, ct, False)
            ib = ib[ct[ib] <= c[ib]]

    max_ticks = 2_000_000
    for _ in range(max_ticks):
        if not np.any(active):
            break
        i1 = np.flatnonzero(active & (phase == 1))
        if i1.size:
            _stage1_tick(i1, rng, r, law, tables, delta, w1_lo, w1_hi,
                         phi, phit, c, ct, phase, s1a, s1s, record, bounce,
                         realign, trace)
        i2 = np.flatnonzero(active & (phase == 2))
        if i2.size:
            _stage2_tick(i2, rng, r, law, level2, aw, B_lo, B_hi,
                         phi, phit, c, ct, phase, coupled, that, s2a, s2s,
                         record, realign, trace)
        finished = active & (coupled | (np.minimum(c, ct) > t_max))
        active &= ~finished
    else:
        raise RuntimeError("coupling state machine exceeded its tick budget")

    if bounces is not None:
        _fill_plain_chain(bounces, cursor, phi, law, rng)

    return {
        "coupled": coupled,
        "coupling_time": that,
        "stage1_attempts": s1a,
        "stage1_successes": s1s,
        "stage2_attempts": s2a,
        "stage2_successes": s2s,
        "first_bounces": bounces,
    }


def _angles(law, rng, size):
    th = np.atleast_1d(law.sample(rng, size))
    np.clip(th, -(0.5 * math.pi - _GUARD), 0.5 * math.pi - _GUARD, out=th)
    return th


def _fill_plain_chain(bounces, cursor, phi, law, rng):
    k_max = bounces.shape[1]
    phi = phi.copy()
    while True:
        idx = np.flatnonzero(cursor < k_max)
        if idx.size == 0:
            break
        th = _angles(law, rng, idx.size)
        phi[idx] = np.mod(phi[idx] + math.pi + 2.0 * th, TWO_PI)
        bounces[idx, cursor[idx]] = phi[idx]
        cursor[idx] += 1


def _stage1_tick(i, rng, r, law, tables, delta, w1_lo, w1_hi,
                 phi, phit, c, ct, phase, s1a, s1s, record, bounce, realign,
                 trace):
    lo = np.maximum(c[i], ct[i]) + w1_lo
    hi = np.minimum(c[i], ct[i]) + w1_hi
    wlen = hi - lo
    mass = delta * np.maximum(wlen, 0.0)
    suc = rng.random(i.size) < mass
    s1a[i] += 1
    s1s[i[suc]] += 1
    if trace is not None:
        for m_, s_ in zip(mass, suc):
            trace.append(AttemptRecord(1, bool(s_), float(m_)))

    j = i[suc]
    if j.size:
        S = lo[suc] + rng.random(j.size) * wlen[suc]
        for phi_arr, clock_arr, rec in ((phi, c, True), (phit, ct, False)):
            w_t = (S - clock_arr[j]) / (2.0 * r)
            th1, th2 = tables.conditional_pair(w_t, rng)
            mid = np.mod(phi_arr[j] + math.pi + 2.0 * th1, TWO_PI)
            fin = np.mod(mid + math.pi + 2.0 * th2, TWO_PI)
            if rec:
                record(j, mid)
                record(j, fin)
            phi_arr[j] = fin
        c[j] = S
        ct[j] = S
        phase[j] = 2

    k = i[~suc]
    if k.size:
        for phi_arr, clock_arr, rec in ((phi, c, True), (phit, ct, False)):
            _residual_two_bounce(k, rng, r, law, tables, delta,
                                 lo[~suc], hi[~suc], phi_arr, clock_arr,
                                 rec, record)
        realign(k)


def _residual_two_bounce(k, rng, r, law, tables, delta, lo, hi,
                         phi_arr, clock_arr, rec, record):
    pend = np.arange(k.size)
    for _ in range(10_000):
        if pend.size == 0:
            return
        idx = k[pend]
        th1 = _angles(law, rng, pend.size)
        th2 = _angles(law, rng, pend.size)
        T = 2.0 * r * (np.cos(th1) + np.cos(th2))
        S = clock_arr[idx] + T
        inw = (S >= lo[pend]) & (S <= hi[pend])
        dens = tables.pdf(T / (2.0 * r)) / (2.0 * r)
        reject_p = np.where(inw, np.minimum(delta / np.maximum(dens, 1e-300),
                                            1.0), 0.0)
        acc = rng.random(pend.size) >= reject_p
        sel = idx[acc]
        if sel.size:
            mid = np.mod(phi_arr[sel] + math.pi + 2.0 * th1[acc], TWO_PI)
            fin = np.mod(mid + math.pi + 2.0 * th2[acc], TWO_PI)
            if rec:
                record(sel, mid)
                record(sel, fin)
            phi_arr[sel] = fin
            clock_arr[sel] += T[acc]
        pend = pend[~acc]
    raise RuntimeError("two-bounce residual sampler failed to terminate")


def _wrap_pi(x):
    return np.mod(np.asarray(x, dtype=float) + math.pi, TWO_PI) - math.pi


def _stage2_tick(i, rng, r, law, level2, aw, B_lo, B_hi,
                 phi, phit, c, ct, phase, coupled, that, s2a, s2s,
                 record, realign, trace):
    d = _wrap_pi(phit[i] - phi[i])
    a1 = np.maximum(-aw, d - aw)
    b1 = np.minimum(aw, d + aw)
    len1 = b1 - a1
    len2 = np.maximum(0.0, 2.0 * aw - TWO_PI + np.abs(d))
    p2lo = np.where(d >= 0.0, -aw, d - aw + TWO_PI)
    lenA = len1 + len2
    lenB = B_hi - B_lo
    mass = level2 * lenA * lenB
    suc = rng.random(i.size) < mass
    s2a[i] += 1
    s2s[i[suc]] += 1
    if trace is not None:
        for m_, s_ in zip(mass, suc):
            trace.append(AttemptRecord(2, bool(s_), float(m_)))

    j = i[suc]
    if j.size:
        u_piece = rng.random(j.size) * lenA[suc]
        in1 = u_piece < len1[suc]
        x_rel = np.where(in1, a1[suc] + u_piece,
                         p2lo[suc] + (u_piece - len1[suc]))
        phistar = np.mod(phi[j] + x_rel, TWO_PI)
        tstar = c[j] + B_lo + rng.random(j.size) * lenB
        for phi_arr in (phi, phit):
            rel = _wrap_pi(phistar - phi_arr[j])
            m = rel / 4.0
            z = (tstar - c[j]) / (4.0 * r)
            dd = np.arccos(np.clip(z / np.cos(m), -1.0, 1.0))
            swap = rng.random(j.size) < 0.5
            th1 = np.where(swap, m - dd, m + dd)
            th2 = np.where(swap, m + dd, m - dd)
            mid = np.mod(phi_arr[j] + math.pi + 2.0 * th1, TWO_PI)
            if phi_arr is phi:
                record(j, mid)
                record(j, phistar)
            phi_arr[j] = phistar
        c[j] = tstar
        ct[j] = tstar
        coupled[j] = True
        that[j] = tstar

    k = i[~suc]
    if k.size:
        nsel = ~suc
        snap_a = phi[k].copy()  # the joint window is anchored at the first
        # process's pre-attempt position; both residuals test against it
        for phi_arr, clock_arr, rec in ((phi, c, True), (phit, ct, False)):
            _residual_pair(k, rng, r, law, level2, a1[nsel], b1[nsel],
                           p2lo[nsel], len2[nsel], snap_a, B_lo, B_hi,
                           phi_arr, clock_arr, rec, record)
        realign(k)
        phase[k] = 1


def _residual_pair(k, rng, r, law, level2, a1, b1, p2lo, len2, phiA_snap,
                   B_lo, B_hi, phi_arr, clock_arr, rec, record):
    pend = np.arange(k.size)
    for _ in range(10_000):
        if pend.size == 0:
            return
        idx = k[pend]
        th1 = _angles(law, rng, pend.size)
        th2 = _angles(law, rng, pend.size)
        T = 2.0 * r * (np.cos(th1) + np.cos(th2))
        phip = np.mod(phi_arr[idx] + TWO_PI + 2.0 * (th1 + th2), TWO_PI)
        tin = (T >= B_lo) & (T <= B_hi)
        xr = _wrap_pi(phip - phiA_snap[pend])
        ain = (xr >= a1[pend]) & (xr <= b1[pend])
        ain |= (len2[pend] > 0.0) & (xr >= p2lo[pend]) \
            & (xr <= p2lo[pend] + len2[pend])
        member = tin & ain
        m = 0.5 * (th1 + th2)
        dd = 0.5 * (th1 - th2)
        f12 = law.density(th1) * law.density(th2)
        reject_p = np.where(
            member,
            np.clip(level2 * 4.0 * r * np.cos(m) * np.abs(np.sin(dd))
                    / np.maximum(f12, 1e-300), 0.0, 1.0),
            0.0)
        acc = rng.random(pend.size) >= reject_p
        sel = idx[acc]
        if sel.size:
            mid = np.mod(phi_arr[sel] + math.pi + 2.0 * th1[acc], TWO_PI)
            if rec:
                record(sel, mid)
                record(sel, phip[acc])
            phi_arr[sel] = phip[acc]
            clock_arr[sel] += T[acc]
        pend = pend[~acc]
    raise RuntimeError("pair residual sampler failed to terminate")


# ---------------------------------------------------------------------------
# single-pair wrapper
# ---------------------------------------------------------------------------

def couple_process_disc(r: float, law: ReflectionLaw, start, start_b,
                        cert: RateCertificate, t_max: float,
                        rng_or_seed) -> CouplingOutcome:
    """Couple one pair of continuous-time processes in a disc.

    Accepts (position, velocity) starts; returns the coupling time (clock
    at the joint success) and per-attempt records.  See the batch runner
    for the construction.
    """
    seed = rng_or_seed if isinstance(rng_or_seed, (int, np.integer)) \
        else int(rng_or_seed.integers(1 << 62))
    trace: list[AttemptRecord] = []
    res = couple_process_disc_batch(r, law, start, start_b, cert, t_max,
                                    n_replicas=1, seed=seed, trace=trace)
    return CouplingOutcome(
        coupled=bool(res.coupled[0]),
        coupling_time=(float(res.coupling_time[0]) if res.coupled[0] else None),
        attempts=trace)
