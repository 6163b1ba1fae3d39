"""Planar compact convex bodies with two-sided curvature bounds.

A body is described by its boundary, an arc-length parametrised closed convex
curve.  Three variants are supported:

* ``Disc(r)``            -- circle of radius r centred at the origin,
* ``Ellipse(a, b)``      -- semi-axes a >= b, centred at the origin,
* ``CurvatureTable``     -- a closed curve reconstructed from tabulated
                            curvature values kappa(s) by integrating the
                            tangent angle.

All variants expose the same queries: boundary point/normal/tangent at an
arc-length coordinate, curvature, ray exit (first boundary hit of an interior
ray), chord angles, and scalar summaries (perimeter, diameter, curvature
bounds).  Discs and ellipses use closed forms; the tabulated variant works on
dense interpolation grids.  Bodies are immutable after construction and safe
to share between threads or processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import (
    CoincidentPoints,
    NonClosedCurve,
    OutsideBody,
    TangentRay,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BoundaryPoint:
    """A point of the boundary with its local frame.

    Attributes
    ----------
    s : arc-length coordinate in [0, perimeter)
    position : (2,) cartesian coordinates
    normal : (2,) inward unit normal
    tangent : (2,) unit tangent (counterclockwise orientation)
    """

    s: float
    position: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray


@dataclass(frozen=True)
class BodySummary:
    perimeter: float
    diameter: float
    curvature_min: float   # lower curvature bound c
    curvature_max: float   # upper curvature bound C

    def as_dict(self) -> dict:
        return {
            "perimeter": self.perimeter,
            "diameter": self.diameter,
            "c": self.curvature_min,
            "C": self.curvature_max,
        }


class ConvexBody:
    """Base class; use Disc, Ellipse or CurvatureTable."""

    variant: str = "abstract"

    # Subclasses set these at construction time.
    perimeter: float
    diameter: float
    curvature_min: float
    curvature_max: float

    @property
    def tol_geom(self) -> float:
        return 1e-9 * self.diameter

    @property
    def tol_root(self) -> float:
        return 1e-10 * self.diameter

    # -- elementary queries (vectorised in s) -------------------------------

    def wrap(self, s):
        """Reduce arc-length coordinates modulo the perimeter."""
        return np.mod(s, self.perimeter)

    def position_at(self, s):
        raise NotImplementedError

    def tangent_at(self, s):
        raise NotImplementedError

    def normal_at(self, s):
        """Inward unit normal: the tangent rotated by +pi/2 for a
        counterclockwise parametrisation."""
        t = self.tangent_at(s)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def curvature_at(self, s):
        raise NotImplementedError

    def gauge(self, point):
        """Signed implicit function: negative inside, zero on the boundary.

        Scaled so that near the boundary it approximates the signed distance.
        """
        raise NotImplementedError

    def arc_of_point(self, point) -> float:
        """Arc-length coordinate of a point assumed on (or near) the boundary."""
        raise NotImplementedError

    # -- composite queries ---------------------------------------------------

    def point_at(self, s: float) -> BoundaryPoint:
        s = float(self.wrap(s))
        return BoundaryPoint(
            s=s,
            position=np.asarray(self.position_at(s), dtype=float),
            normal=np.asarray(self.normal_at(s), dtype=float),
            tangent=np.asarray(self.tangent_at(s), dtype=float),
        )

    def exit_ray(self, origin, direction) -> tuple[float, BoundaryPoint]:
        """First boundary hit of the ray origin + tau * direction, tau > 0.

        The origin must lie in the closed body and the direction must point
        strictly inward when the origin is on the boundary.
        """
        origin = np.asarray(origin, dtype=float)
        direction = np.asarray(direction, dtype=float)
        g0 = self.gauge(origin)
        if g0 > self.tol_geom:
            raise OutsideBody(f"ray origin {origin} lies outside the body")
        if g0 > -self.tol_geom:  # origin effectively on the boundary
            s0 = self.arc_of_point(origin)
            if float(np.dot(direction, self.normal_at(s0))) <= self.tol_geom:
                raise TangentRay("direction does not point into the interior")
        tau = self._exit_tau(origin, direction)
        hit = origin + tau * direction
        s_hit = self.arc_of_point(hit)
        return tau, self.point_at(s_hit)

    def _exit_tau(self, origin, direction) -> float:
        """Positive root of gauge(origin + tau * direction) = 0."""
        raise NotImplementedError

    def chord_angle(self, x: BoundaryPoint, y: BoundaryPoint) -> float:
        """Signed angle at y between the chord toward x and the inward normal.

        Lies in [-pi/2, pi/2] for points of a convex boundary; positive when
        the chord is counterclockwise from the normal.
        """
        d = x.position - y.position
        norm = float(np.hypot(d[0], d[1]))
        if norm < self.tol_geom:
            raise CoincidentPoints("chord endpoints coincide")
        l = d / norm
        cosv = float(np.dot(l, y.normal))
        sinv = float(y.normal[0] * l[1] - y.normal[1] * l[0])
        return math.atan2(sinv, cosv)

    def summarize(self) -> BodySummary:
        return BodySummary(self.perimeter, self.diameter,
                           self.curvature_min, self.curvature_max)

    def _validate(self):
        c, C = self.curvature_min, self.curvature_max
        if not (0.0 < c <= C < math.inf):
            raise ValueError(f"curvature bounds must satisfy 0 < c <= C, got ({c}, {C})")
        if self.perimeter < math.pi * (2.0 / C) - self.tol_geom:
            raise ValueError("perimeter inconsistent with the curvature upper bound")
        if self.diameter < 2.0 / C - self.tol_geom:
            raise ValueError("diameter inconsistent with the curvature upper bound")


# ---------------------------------------------------------------------------
# Disc
# ---------------------------------------------------------------------------

class Disc(ConvexBody):
    variant = "disc"

    def __init__(self, r: float):
        if r <= 0:
            raise ValueError("radius must be positive")
        self.r = float(r)
        self.perimeter = TWO_PI * self.r
        self.diameter = 2.0 * self.r
        self.curvature_min = 1.0 / self.r
        self.curvature_max = 1.0 / self.r
        self._validate()

    def position_at(self, s):
        phi = np.asarray(s, dtype=float) / self.r
        return np.stack([self.r * np.cos(phi), self.r * np.sin(phi)], axis=-1)

    def tangent_at(self, s):
        phi = np.asarray(s, dtype=float) / self.r
        return np.stack([-np.sin(phi), np.cos(phi)], axis=-1)

    def curvature_at(self, s):
        return np.full_like(np.asarray(s, dtype=float), 1.0 / self.r)

    def gauge(self, point):
        p = np.asarray(point, dtype=float)
        return float(np.hypot(p[0], p[1]) - self.r)

    def arc_of_point(self, point) -> float:
        p = np.asarray(point, dtype=float)
        return float(self.wrap(math.atan2(p[1], p[0]) * self.r))

    def _exit_tau(self, origin, direction) -> float:
        # |o + tau d|^2 = r^2 with |d| = 1; take the positive root.
        b = float(np.dot(origin, direction))
        c0 = float(np.dot(origin, origin)) - self.r * self.r
        disc = max(b * b - c0, 0.0)
        tau = -b + math.sqrt(disc)
        if tau <= self.tol_root:
            raise TangentRay("exit chord degenerates")
        return tau


# ---------------------------------------------------------------------------
# Ellipse
# ---------------------------------------------------------------------------

class Ellipse(ConvexBody):
    """Ellipse x^2/a^2 + y^2/b^2 = 1 with a >= b > 0.

    Arc length is computed from the incomplete elliptic integral of the
    second kind; the inverse map s -> parameter angle uses a dense monotone
    table refined by Newton steps to machine precision.
    """

    variant = "ellipse"
    _TABLE = 4096

    def __init__(self, a: float, b: float):
        if not (a >= b > 0):
            raise ValueError("semi-axes must satisfy a >= b > 0")
        self.a = float(a)
        self.b = float(b)
        self._m = 1.0 - (self.b / self.a) ** 2  # squared eccentricity
        self.perimeter = 4.0 * self.a * special.ellipe(self._m)
        self.diameter = 2.0 * self.a
        self.curvature_min = self.b / self.a ** 2
        self.curvature_max = self.a / self.b ** 2
        t = np.linspace(0.0, TWO_PI, self._TABLE + 1)
        self._t_grid = t
        self._s_grid = self._s_of_t(t)
        # spline surrogate of the (slow) elliptic integral; interpolation
        # error is far below tol_geom at this table density
        self._s_spline = CubicSpline(t, self._s_grid)
        self._validate()

    # parameter angle t <-> arc length s ------------------------------------

    def _s_of_t(self, t):
        t = np.asarray(t, dtype=float)
        # arc length from t=0: a * [E(m) - E(pi/2 - t | m)] by the standard
        # reduction; ellipeinc handles arbitrary amplitude quasi-periodically.
        return self.a * (special.ellipe(self._m)
                         - special.ellipeinc(0.5 * math.pi - t, self._m))

    def _speed(self, t):
        return np.sqrt((self.a * np.sin(t)) ** 2 + (self.b * np.cos(t)) ** 2)

    def _s_of_t_fast(self, t):
        return self._s_spline(np.mod(t, TWO_PI)) \
            + self.perimeter * np.floor(np.asarray(t, dtype=float) / TWO_PI)

    def _t_of_s(self, s):
        s = self.wrap(np.asarray(s, dtype=float))
        t = np.interp(s, self._s_grid, self._t_grid)
        for _ in range(3):  # Newton refinement; ds/dt = speed > 0
            t = t - (self._s_spline(np.clip(t, 0.0, TWO_PI)) - s) / self._speed(t)
        return t

    # queries ----------------------------------------------------------------

    def position_at(self, s):
        t = self._t_of_s(s)
        return np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=-1)

    def tangent_at(self, s):
        t = self._t_of_s(s)
        sp = self._speed(t)
        return np.stack([-self.a * np.sin(t) / sp, self.b * np.cos(t) / sp], axis=-1)

    def curvature_at(self, s):
        t = self._t_of_s(s)
        return self.a * self.b / self._speed(t) ** 3

    def gauge(self, point):
        p = np.asarray(point, dtype=float)
        q = math.hypot(p[0] / self.a, p[1] / self.b)
        # rescale so the value approximates signed distance near the boundary
        return (q - 1.0) * self.b

    def arc_of_point(self, point) -> float:
        p = np.asarray(point, dtype=float)
        t = math.atan2(p[1] / self.b, p[0] / self.a) % TWO_PI
        return float(self._s_spline(t))

    def _exit_tau(self, origin, direction) -> float:
        # scale to the unit circle; the ray stays affine
        o = np.array([origin[0] / self.a, origin[1] / self.b])
        d = np.array([direction[0] / self.a, direction[1] / self.b])
        A = float(np.dot(d, d))
        B = float(np.dot(o, d))
        C0 = float(np.dot(o, o)) - 1.0
        disc = max(B * B - A * C0, 0.0)
        tau = (-B + math.sqrt(disc)) / A
        if tau <= self.tol_root:
            raise TangentRay("exit chord degenerates")
        return tau


# ---------------------------------------------------------------------------
# CurvatureTable
# ---------------------------------------------------------------------------

class CurvatureTable(ConvexBody):
    """Closed convex curve reconstructed from tabulated curvature.

    Input is a grid s_i in [0, L) with curvature values kappa_i > 0 treated
    as a periodic function of arc length.  The tangent angle is the integral
    of kappa; total turning must come out 2*pi and the reconstructed curve
    must close, both within a relative tolerance of 1e-6 after an affine
    correction of the tangent angle (tabulated data never closes exactly).
    """

    variant = "curvature_table"
    _DENSE = 8192
    _CLOSURE_RTOL = 1e-6

    def __init__(self, s_grid, kappa):
        s_grid = np.asarray(s_grid, dtype=float)
        kappa = np.asarray(kappa, dtype=float)
        if s_grid.ndim != 1 or s_grid.size < 8 or s_grid.size != kappa.size:
            raise ValueError("need matching 1-d grids with at least 8 samples")
        if np.any(np.diff(s_grid) <= 0) or s_grid[0] != 0.0:
            raise ValueError("s grid must start at 0 and increase strictly")
        if np.any(kappa <= 0):
            raise ValueError("curvature values must be strictly positive")

        self.perimeter = float(s_grid[-1] + (s_grid[-1] - s_grid[-2]))
        # periodic cubic interpolant of curvature
        s_ext = np.append(s_grid, self.perimeter)
        k_ext = np.append(kappa, kappa[0])
        self._kappa_spline = CubicSpline(s_ext, k_ext, bc_type="periodic")

        s = np.linspace(0.0, self.perimeter, self._DENSE + 1)
        k = self._kappa_spline(s)
        theta = _cumtrapz(k, s)
        total_turn = theta[-1]
        if abs(total_turn - TWO_PI) > self._CLOSURE_RTOL * TWO_PI:
            raise NonClosedCurve(
                f"total turning {total_turn:.9f} differs from 2*pi beyond tolerance")
        theta *= TWO_PI / total_turn  # affine correction to an exact full turn

        x = _cumtrapz(np.cos(theta), s)
        y = _cumtrapz(np.sin(theta), s)
        gap = math.hypot(x[-1], y[-1])
        if gap > self._CLOSURE_RTOL * self.perimeter:
            raise NonClosedCurve(
                f"endpoint mismatch {gap:.3e} exceeds closure tolerance")
        # distribute the leftover closure gap linearly along the curve
        x -= s / self.perimeter * x[-1]
        y -= s / self.perimeter * y[-1]

        cx, cy = np.mean(x[:-1]), np.mean(y[:-1])
        x -= cx
        y -= cy

        self._s_dense = s
        self._theta = CubicSpline(s, theta)
        self._x = CubicSpline(s, x)
        self._y = CubicSpline(s, y)

        # radial description around the interior centroid for gauge queries
        psi = np.unwrap(np.arctan2(y[:-1], x[:-1]))
        if psi[0] < 0:
            psi += TWO_PI
        rad = np.hypot(x[:-1], y[:-1])
        psi_ext = np.concatenate([psi, [psi[0] + TWO_PI]])
        rad_ext = np.concatenate([rad, [rad[0]]])
        s_by_psi = np.concatenate([s[:-1], [self.perimeter]])
        self._psi0 = psi[0]
        self._radial = CubicSpline(psi_ext, rad_ext, bc_type="periodic")
        self._s_of_psi = CubicSpline(psi_ext, _monotone_lift(s_by_psi, self.perimeter))

        self.curvature_min = float(np.min(k))
        self.curvature_max = float(np.max(k))
        self.diameter = self._diameter_search()
        self._validate()

    def _diameter_search(self) -> float:
        pts = np.stack([self._x(self._s_dense[:-1]), self._y(self._s_dense[:-1])], axis=-1)
        sub = pts[:: max(1, pts.shape[0] // 4096)]
        d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=-1)
        i, j = np.unravel_index(np.argmax(d2), d2.shape)
        return _refine_diameter(self, sub[i], sub[j])

    def position_at(self, s):
        s = self.wrap(np.asarray(s, dtype=float))
        return np.stack([self._x(s), self._y(s)], axis=-1)

    def tangent_at(self, s):
        s = self.wrap(np.asarray(s, dtype=float))
        th = self._theta(s)
        return np.stack([np.cos(th), np.sin(th)], axis=-1)

    def curvature_at(self, s):
        return self._kappa_spline(self.wrap(np.asarray(s, dtype=float)))

    def _psi_wrap(self, psi):
        return self._psi0 + np.mod(psi - self._psi0, TWO_PI)

    def gauge(self, point):
        p = np.asarray(point, dtype=float)
        psi = self._psi_wrap(math.atan2(p[1], p[0]))
        return float(math.hypot(p[0], p[1]) - self._radial(psi))

    def arc_of_point(self, point) -> float:
        p = np.asarray(point, dtype=float)
        psi = self._psi_wrap(math.atan2(p[1], p[0]))
        s = float(self.wrap(self._s_of_psi(psi)))
        # refine: project onto the curve by minimising distance locally
        for _ in range(4):
            pos = self.position_at(s)
            tan = self.tangent_at(s)
            s = float(self.wrap(s + float(np.dot(p - pos, tan))))
        return s

    def _exit_tau(self, origin, direction) -> float:
        # march until the gauge changes sign, then bisect with brentq
        step = self.diameter / 64.0
        f = lambda t: self.gauge(origin + t * direction)
        t_prev, t_cur = 0.0, step
        f_prev = f(t_prev)
        while f(t_cur) < 0.0 and t_cur < 3.0 * self.diameter:
            t_prev, f_prev = t_cur, f(t_cur)
            t_cur += step
        if f(t_cur) < 0.0:
            raise TangentRay("ray failed to exit; geometry inconsistent")
        # ensure the bracket starts inside
        if f_prev >= 0.0:
            t_prev = t_prev + 1e-12 * self.diameter
        tau = brentq(f, t_prev, t_cur, xtol=self.tol_root)
        if tau <= self.tol_root:
            raise TangentRay("exit chord degenerates")
        return float(tau)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _cumtrapz(values, s):
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(s), out=out[1:])
    return out


def _monotone_lift(seq, period):
    """Lift a cyclically increasing sequence to a strictly increasing one."""
    out = np.asarray(seq, dtype=float).copy()
    for i in range(1, out.size):
        while out[i] < out[i - 1]:
            out[i] += period
    return out


def _refine_diameter(body: ConvexBody, p, q) -> float:
    """Golden-section polish of a candidate farthest pair."""
    si = body.arc_of_point(p)
    sj = body.arc_of_point(q)

    def dist(a, b):
        d = body.position_at(a) - body.position_at(b)
        return float(np.hypot(d[0], d[1]))

    span = body.perimeter / 2048.0
    for _ in range(2):
        si = _golden_max(lambda s: dist(s, sj), si - span, si + span)
        sj = _golden_max(lambda s: dist(si, s), sj - span, sj + span)
        span /= 8.0
    return dist(si, sj)


def _golden_max(fn, lo, hi, iters=60):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# module-level operation wrappers (the public verbs)
# ---------------------------------------------------------------------------

def point_at(body: ConvexBody, s: float) -> BoundaryPoint:
    """Boundary point, inward normal and tangent at arc length s (mod perimeter)."""
    return body.point_at(s)


def exit_ray(body: ConvexBody, origin, direction) -> tuple[float, BoundaryPoint]:
    """First boundary hit of an interior ray; returns (tau, hit point)."""
    return body.exit_ray(origin, direction)


def chord_angle(body: ConvexBody, x: BoundaryPoint, y: BoundaryPoint) -> float:
    """Angle at y between the chord y->x and the inward normal at y."""
    return body.chord_angle(x, y)


def summarize(body: ConvexBody) -> BodySummary:
    """Perimeter, diameter and curvature bounds of the body."""
    return body.summarize()


def body_from_config(spec: dict) -> ConvexBody:
    """Build a body from its config mapping.

    Accepted forms::

        {"disc": {"r": 1.0}}
        {"ellipse": {"a": 2.0, "b": 1.0}}
        {"curvature_table": {"path": "curve.csv"}}   # CSV rows: s,kappa
    """
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError("body spec must be a single-key mapping")
    kind, args = next(iter(spec.items()))
    if kind == "disc":
        return Disc(args["r"])
    if kind == "ellipse":
        return Ellipse(args["a"], args["b"])
    if kind == "curvature_table":
        data = np.loadtxt(args["path"], delimiter=",", dtype=float)
        return CurvatureTable(data[:, 0], data[:, 1])
    raise ValueError(f"unknown body variant {kind!r}")
