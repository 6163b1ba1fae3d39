"""Vectorised chain coupling for single-bounce blocks (replica batches).

Covers certificates with block length one (landing windows exceed half the
perimeter after a single bounce).  All replicas advance in lockstep: each
step every uncoupled pair attempts a plateau coupling of the next landing
position, with the plateau level taken from the certificate (the landing
density per unit arc length dominates it on the reachable arc).  Residual
draws are one real geometric bounce thinned by a single pointwise density
evaluation, so the whole step is a handful of array operations.

Used for the large-replica marginal-preservation and survival checks;
the scalar engine in ``chains`` remains the reference implementation and
handles multi-bounce blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import InvalidParams
from ..geometry import ConvexBody, Disc, Ellipse, TWO_PI
from ..rates import RateCertificate
from ..reflection import ReflectionLaw

_GUARD = 1e-9


@dataclass
class BatchChainResult:
    coupled: np.ndarray
    coupling_index: np.ndarray   # -1 where the horizon was reached uncoupled
    final_a: np.ndarray          # arc positions of the first chain
    final_b: np.ndarray
    attempts: int = 0
    successes: int = 0


# -- vectorised body kernels -------------------------------------------------

class _DiscOps:
    def __init__(self, body: Disc):
        self.r = body.r
        self.P = body.perimeter

    def bounce(self, s, theta):
        return np.mod(s + self.r * (math.pi + 2.0 * theta), self.P)

    def reach(self, s, half_width):
        # landing offset is pi + 2*theta for theta in [-hw, hw]
        lo = s + self.r * (math.pi - 2.0 * half_width)
        hi = s + self.r * (math.pi + 2.0 * half_width)
        return lo, hi

    def landing_density(self, s_from, s_to, law):
        # angle of the bounce realising the landing: theta = (offset - pi)/2
        off = np.mod(s_to - s_from, self.P) / self.r
        theta = 0.5 * (off - math.pi)
        return law.density(theta) / (2.0 * self.r)


class _EllipseOps:
    def __init__(self, body: Ellipse):
        self.body = body
        self.P = body.perimeter

    def _frame(self, s):
        body = self.body
        t = body._t_of_s(s)
        ct, st = np.cos(t), np.sin(t)
        speed = np.sqrt((body.a * st) ** 2 + (body.b * ct) ** 2)
        nx, ny = -body.b * ct / speed, -body.a * st / speed
        return ct, st, nx, ny

    def _exit(self, ct, st, nx, ny, theta):
        body = self.body
        c, s_ = np.cos(theta), np.sin(theta)
        dx, dy = c * nx - s_ * ny, s_ * nx + c * ny
        ux, uy = dx / body.a, dy / body.b
        A = ux * ux + uy * uy
        B = ct * ux + st * uy
        tau = -2.0 * B / A
        qx, qy = ct + tau * ux, st + tau * uy
        t_new = np.arctan2(qy, qx) % TWO_PI
        return np.asarray(body._s_spline(t_new))

    def bounce(self, s, theta):
        ct, st, nx, ny = self._frame(s)
        return self._exit(ct, st, nx, ny, theta)

    def reach(self, s, half_width):
        ct, st, nx, ny = self._frame(s)
        hw = min(half_width, 0.5 * math.pi - 1e-6)
        lo_hit = self._exit(ct, st, nx, ny, np.full_like(s, -hw))
        hi_hit = self._exit(ct, st, nx, ny, np.full_like(s, hw))
        lo = s + np.mod(lo_hit - s, self.P)
        hi = s + np.mod(hi_hit - s, self.P)
        hi = np.where(hi < lo, hi + self.P, hi)
        return lo, hi

    def landing_density(self, s_from, s_to, law):
        body = self.body
        pf = body.position_at(s_from)
        pt_ = body.position_at(s_to)
        tanf = body.tangent_at(s_from)
        tant = body.tangent_at(s_to)
        nf = np.stack([-tanf[..., 1], tanf[..., 0]], axis=-1)
        nt = np.stack([-tant[..., 1], tant[..., 0]], axis=-1)
        d = pt_ - pf
        dist = np.hypot(d[..., 0], d[..., 1])
        dist = np.maximum(dist, 1e-300)
        l = d / dist[..., None]
        psi = np.arctan2(nf[..., 0] * l[..., 1] - nf[..., 1] * l[..., 0],
                         l[..., 0] * nf[..., 0] + l[..., 1] * nf[..., 1])
        cos_land = -(nt[..., 0] * l[..., 0] + nt[..., 1] * l[..., 1])
        return law.density(psi) * np.maximum(cos_land, 0.0) / dist


def _ops_for(body):
    if isinstance(body, Disc):
        return _DiscOps(body)
    if isinstance(body, Ellipse):
        return _EllipseOps(body)
    raise InvalidParams("batch chain coupling supports discs and ellipses")


def couple_chains_batch(body: ConvexBody, law: ReflectionLaw, s0: float,
                        s0_b: float, cert: RateCertificate, n_steps: int,
                        n_replicas: int, seed: int) -> BatchChainResult:
    """Couple many replica pairs of single-bounce-block chains.

    The certificate must have block length one.  Returns per-replica
    coupling bookkeeping and the final arc positions of both chains after
    exactly ``n_steps`` bounces (coupled pairs keep evolving jointly).
    """
    if cert.constants["n0"] != 1:
        raise InvalidParams("batch engine requires a one-bounce certificate")
    width = cert.inputs["width"]
    floor = cert.inputs["floor"]
    if cert.kind == "disc_chain":
        level = 0.5 * floor / body.r   # per unit arc length
    else:
        level = cert.constants["q_min"]
    ops = _ops_for(body)
    P = body.perimeter
    half = 0.5 * width

    R = int(n_replicas)
    out = BatchChainResult(
        coupled=np.zeros(R, dtype=bool),
        coupling_index=np.full(R, -1, dtype=np.int64),
        final_a=np.empty(R), final_b=np.empty(R))
    for lo, hi, gen in rngmod.chunk_streams(seed, "chain-batch", R):
        sl = slice(lo, hi)
        n = hi - lo
        sa = np.full(n, float(body.wrap(s0)))
        sb = np.full(n, float(body.wrap(s0_b)))
        coupled = np.zeros(n, dtype=bool)
        cidx = np.full(n, -1, dtype=np.int64)
        att = suc = 0
        for step in range(1, n_steps + 1):
            j = np.flatnonzero(coupled)
            if j.size:
                th = _angles(law, gen, j.size)
                landed = ops.bounce(sa[j], th)
                sa[j] = landed
                sb[j] = landed
            i = np.flatnonzero(~coupled)
            if i.size == 0:
                continue
            lo_a, hi_a = ops.reach(sa[i], half)
            lo_b, hi_b = ops.reach(sb[i], half)
            p_lo, p_len, q_lo, q_len = _arc_intersections(
                lo_a, hi_a, lo_b, hi_b, P)
            mass = level * (p_len + q_len)
            u = gen.random(i.size)
            hit = u < mass
            att += i.size
            suc += int(hit.sum())
            j2 = i[hit]
            if j2.size:
                pick = gen.random(j2.size) * (p_len[hit] + q_len[hit])
                in1 = pick < p_len[hit]
                y = np.where(in1, p_lo[hit] + pick,
                             q_lo[hit] + (pick - p_len[hit]))
                y = np.mod(y, P)
                sa[j2] = y
                sb[j2] = y
                coupled[j2] = True
                cidx[j2] = step
            k = i[~hit]
            if k.size:
                sub = ~hit
                for arr in (sa, sb):
                    _residual_bounce(arr, k, ops, law, level,
                                     p_lo[sub], p_len[sub], q_lo[sub],
                                     q_len[sub], P, gen)
        out.coupled[sl] = coupled
        out.coupling_index[sl] = cidx
        out.final_a[sl] = sa
        out.final_b[sl] = sb
        out.attempts += att
        out.successes += suc
    return out


def _angles(law, rng, size):
    th = np.atleast_1d(law.sample(rng, size))
    np.clip(th, -(0.5 * math.pi - _GUARD), 0.5 * math.pi - _GUARD, out=th)
    return th


def _arc_intersections(lo_a, hi_a, lo_b, hi_b, P):
    """Intersection of two circle arcs given as unwrapped [lo, hi).

    Returns up to two pieces per pair as (start, length) in the coordinate
    frame of the first arc.
    """
    len_a = np.minimum(hi_a - lo_a, P)
    len_b = np.minimum(hi_b - lo_b, P)
    # offset of b's start relative to a's start, in [0, P)
    d = np.mod(lo_b - lo_a, P)
    # piece 1: b starting inside [0, len_a)
    p1_lo = d
    p1_hi = np.minimum(d + len_b, len_a)
    p1_len = np.maximum(p1_hi - p1_lo, 0.0)
    p1_len = np.where(d < len_a, p1_len, 0.0)
    # piece 2: b wrapped around (start at d - P)
    p2_lo = np.zeros_like(d)
    p2_hi = np.minimum(d + len_b - P, len_a)
    p2_len = np.maximum(p2_hi, 0.0)
    return (lo_a + p1_lo, p1_len, lo_a + p2_lo, p2_len)


def _residual_bounce(arr, idx, ops, law, level, p_lo, p_len, q_lo, q_len,
                     P, rng):
    pend = np.arange(idx.size)
    for _ in range(10_000):
        if pend.size == 0:
            return
        sel = idx[pend]
        th = _angles(law, rng, pend.size)
        landed = ops.bounce(arr[sel], th)
        member = _in_piece(landed, p_lo[pend], p_len[pend], P) \
            | _in_piece(landed, q_lo[pend], q_len[pend], P)
        dens = ops.landing_density(arr[sel], landed, law)
        reject = np.where(member,
                          np.minimum(level / np.maximum(dens, 1e-300), 1.0),
                          0.0)
        acc = rng.random(pend.size) >= reject
        arr[sel[acc]] = landed[acc]
        pend = pend[~acc]
    raise RuntimeError("batch residual bounce failed to terminate")


def _in_piece(x, lo, length, P):
    return np.mod(x - lo, P) < length
