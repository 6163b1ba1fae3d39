"""Billiard dynamics: the boundary chain and the continuous-time flight.

The particle flies at unit speed along chords and is reflected at each
boundary hit with a random angle from the reflection law.  The boundary hit
points form a Markov chain; the continuous-time process interpolates the
chords affinely (time and length coincide at unit speed).

The module provides

* single-trajectory simulation through the exact geometric engine
  (``chain_step`` / ``run_chain``),
* the closed-form polar recursion on discs (``disc_step_exact``), which is
  both a fast path and an independent oracle for the geometric engine,
* vectorised ensemble simulation across replicas (``run_chain_ensemble``),
* the one-step transition density of the chain with respect to arc length
  (``transition_density``) and its row integral / discretised matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import BeyondHorizon, CoincidentPoints, TangentRay
from .geometry import BoundaryPoint, ConvexBody, Disc, Ellipse, TWO_PI
from .reflection import ReflectionLaw, reflect

# reflection angles this close to +-pi/2 are resampled once, then rejected;
# the event has probability zero but floating point can reach it
TANGENCY_GUARD = 1e-9


@dataclass(frozen=True)
class ChainState:
    """Boundary chain state: arc length plus, on discs, the polar angle."""

    s: float
    point: BoundaryPoint
    phi: float | None = None


@dataclass(frozen=True)
class ProcessState:
    """Continuous-time state between or at bounces."""

    position: np.ndarray
    velocity: np.ndarray
    clock: float
    bounces_so_far: int


@dataclass
class Trajectory:
    """Bounce records of one trajectory.

    Row n (1-based) holds the state right after the n-th bounce; cumulative
    times satisfy T[n] = sum(tau[1..n]).  ``phi`` is the polar angle on
    discs and NaN otherwise.
    """

    s0: float
    step: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    s: np.ndarray = field(default_factory=lambda: np.empty(0))
    phi: np.ndarray = field(default_factory=lambda: np.empty(0))
    theta: np.ndarray = field(default_factory=lambda: np.empty(0))
    tau: np.ndarray = field(default_factory=lambda: np.empty(0))
    T: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return int(self.step.size)


def make_chain_state(body: ConvexBody, s: float) -> ChainState:
    pt = body.point_at(s)
    phi = pt.s / body.r if isinstance(body, Disc) else None
    return ChainState(s=pt.s, point=pt, phi=phi)


def chain_step(body: ConvexBody, law: ReflectionLaw, state: ChainState,
               rng: np.random.Generator) -> tuple[ChainState, float, float]:
    """One bounce: sample an angle, trace the chord, land on the boundary.

    Returns (next state, sampled angle, chord time).  An angle within the
    tangency guard of +-pi/2 is resampled once; a second occurrence raises
    TangentRay.
    """
    theta = float(law.sample(rng))
    if abs(theta) >= 0.5 * math.pi - TANGENCY_GUARD:
        theta = float(law.sample(rng))
        if abs(theta) >= 0.5 * math.pi - TANGENCY_GUARD:
            raise TangentRay("two consecutive tangential angles")
    velocity = reflect(state.point, theta)
    tau, hit = body.exit_ray(state.point.position, velocity)
    phi = hit.s / body.r if isinstance(body, Disc) else None
    return ChainState(s=hit.s, point=hit, phi=phi), theta, tau


def disc_step_exact(r: float, phi: float, theta: float) -> tuple[float, float]:
    """Closed-form disc bounce: next polar angle and chord time.

    next phi = (pi + 2*theta + phi) mod 2*pi, tau = 2*r*cos(theta).
    Serves as the oracle for the geometric engine on discs.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    return (math.pi + 2.0 * theta + phi) % TWO_PI, 2.0 * r * math.cos(theta)


def run_chain(body: ConvexBody, law: ReflectionLaw, s0: float, n_steps: int,
              rng: np.random.Generator) -> Trajectory:
    """Simulate n_steps bounces with the geometric engine.

    Deterministic given the generator state; the records are exactly the
    consumed random angles, so reruns from an equal stream reproduce the
    trajectory bit for bit.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    state = make_chain_state(body, s0)
    traj = Trajectory(s0=state.s)
    if n_steps == 0:
        return traj
    step = np.arange(1, n_steps + 1, dtype=np.int64)
    s = np.empty(n_steps)
    theta = np.empty(n_steps)
    tau = np.empty(n_steps)
    for i in range(n_steps):
        state, th, tv = chain_step(body, law, state, rng)
        s[i] = state.s
        theta[i] = th
        tau[i] = tv
    is_disc = isinstance(body, Disc)
    traj.step = step
    traj.s = s
    traj.phi = s / body.r if is_disc else np.full(n_steps, np.nan)
    traj.theta = theta
    traj.tau = tau
    traj.T = np.cumsum(tau)
    return traj


# ---------------------------------------------------------------------------
# vectorised ensembles
# ---------------------------------------------------------------------------

def run_chain_ensemble(body: ConvexBody, law: ReflectionLaw, s0, n_steps: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Positions of many independent chains, shape (n_steps + 1, replicas).

    ``s0`` may be a scalar (all replicas share the start) or an array of
    starts.  Discs use the polar recursion (equivalent to the geometric
    engine, see the disc oracle tests); ellipses use a vectorised chord
    solve.  Other bodies fall back to the scalar engine.
    """
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    if isinstance(body, Disc):
        return _ensemble_disc(body, law, s0, n_steps, rng)
    if isinstance(body, Ellipse):
        return _ensemble_ellipse(body, law, s0, n_steps, rng)
    out = np.empty((n_steps + 1, s0.size))
    for j, start in enumerate(s0):
        traj = run_chain(body, law, float(start), n_steps, rng)
        out[0, j] = traj.s0
        out[1:, j] = traj.s
    return out


def _guarded_angles(law, rng, shape):
    th = np.asarray(law.sample(rng, shape))
    bad = np.abs(th) >= 0.5 * math.pi - TANGENCY_GUARD
    if np.any(bad):
        th = np.where(bad, law.sample(rng, shape), th)
        np.clip(th, -(0.5 * math.pi - TANGENCY_GUARD),
                0.5 * math.pi - TANGENCY_GUARD, out=th)
    return th


def _ensemble_disc(body: Disc, law, s0, n_steps, rng):
    r = body.r
    theta = _guarded_angles(law, rng, (n_steps, s0.size))
    phi0 = s0 / r
    inc = math.pi + 2.0 * theta
    phi = np.vstack([phi0[None, :], phi0[None, :] + np.cumsum(inc, axis=0)])
    return np.mod(phi, TWO_PI) * r


def _ensemble_ellipse(body: Ellipse, law, s0, n_steps, rng):
    a, b = body.a, body.b
    out = np.empty((n_steps + 1, s0.size))
    out[0] = body.wrap(s0)
    t = body._t_of_s(out[0])
    for n in range(1, n_steps + 1):
        th = _guarded_angles(law, rng, t.shape)
        ct, st = np.cos(t), np.sin(t)
        speed = np.sqrt((a * st) ** 2 + (b * ct) ** 2)
        nx, ny = -b * ct / speed, -a * st / speed
        c, s_ = np.cos(th), np.sin(th)
        dx, dy = c * nx - s_ * ny, s_ * nx + c * ny
        # chord in coordinates scaled onto the unit circle
        ox, oy = ct, st
        ux, uy = dx / a, dy / b
        A = ux * ux + uy * uy
        B = ox * ux + oy * uy
        C0 = ox * ox + oy * oy - 1.0
        tau = (-B + np.sqrt(np.maximum(B * B - A * C0, 0.0))) / A
        qx, qy = ox + tau * ux, oy + tau * uy
        t = np.arctan2(qy, qx) % TWO_PI
        out[n] = body._s_spline(t)
    return out


# ---------------------------------------------------------------------------
# continuous-time interpolation
# ---------------------------------------------------------------------------

def sample_process_at(trajectory: Trajectory, body: ConvexBody, t: float) -> ProcessState:
    """State of the continuous-time process at clock time t.

    Locates the flight segment containing t by binary search and moves
    affinely along the chord.  t must not exceed the last recorded hit time.
    """
    if len(trajectory) == 0:
        raise BeyondHorizon("trajectory holds no bounces")
    times = np.concatenate([[0.0], trajectory.T])
    if t < 0.0 or t > times[-1]:
        raise BeyondHorizon(f"time {t} outside simulated span [0, {times[-1]}]")
    arcs = np.concatenate([[trajectory.s0], trajectory.s])
    k = int(np.searchsorted(times, t, side="right") - 1)
    k = min(k, len(trajectory) - 1)  # t == final time: stay on last segment
    p0 = body.position_at(arcs[k])
    p1 = body.position_at(arcs[k + 1])
    seg = p1 - p0
    seg_len = float(np.hypot(seg[0], seg[1]))
    velocity = seg / seg_len
    position = p0 + (t - times[k]) * velocity
    return ProcessState(position=position, velocity=velocity, clock=float(t),
                        bounces_so_far=k)


# ---------------------------------------------------------------------------
# transition kernel
# ---------------------------------------------------------------------------

def chord_times(body: ConvexBody, s0: float, thetas) -> np.ndarray:
    """Flight times of chords launched from one boundary point (vectorised).

    Disc and ellipse use closed-form intersections; other bodies fall back
    to the scalar ray solver.
    """
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if isinstance(body, Disc):
        return 2.0 * body.r * np.cos(thetas)
    pt = body.point_at(s0)
    if isinstance(body, Ellipse):
        a, b = body.a, body.b
        nx, ny = pt.normal
        c, s_ = np.cos(thetas), np.sin(thetas)
        dx, dy = c * nx - s_ * ny, s_ * nx + c * ny
        ox, oy = pt.position[0] / a, pt.position[1] / b
        ux, uy = dx / a, dy / b
        A = ux * ux + uy * uy
        B = ox * ux + oy * uy
        C0 = ox * ox + oy * oy - 1.0
        return (-B + np.sqrt(np.maximum(B * B - A * C0, 0.0))) / A
    from .reflection import reflect
    return np.array([body.exit_ray(pt.position, reflect(pt, float(t)))[0]
                     for t in thetas])


def launch_angle(body: ConvexBody, x: BoundaryPoint, y: BoundaryPoint) -> float:
    """Signed angle at x between the chord x->y and the inward normal at x."""
    d = y.position - x.position
    norm = float(np.hypot(d[0], d[1]))
    if norm < body.tol_geom:
        raise CoincidentPoints("chord endpoints coincide")
    l = d / norm
    cosv = float(np.dot(l, x.normal))
    sinv = float(x.normal[0] * l[1] - x.normal[1] * l[0])
    return math.atan2(sinv, cosv)


def transition_density(body: ConvexBody, law: ReflectionLaw,
                       x: BoundaryPoint, y: BoundaryPoint) -> float:
    """One-step chain density from x to y per unit arc length at y.

    density(angle of the chord at x) * cos(chord angle at y) / chord length.
    Normalisation (the row integral equals one) is enforced by quadrature
    tests rather than by construction.
    """
    d = y.position - x.position
    dist = float(np.hypot(d[0], d[1]))
    if dist < body.tol_geom:
        raise CoincidentPoints("transition density needs distinct points")
    psi = launch_angle(body, x, y)
    cos_land = float(np.dot(y.normal, -d / dist))
    return float(law.density(psi)) * max(cos_land, 0.0) / dist


def transition_density_row(body: ConvexBody, law: ReflectionLaw,
                           x: BoundaryPoint, s_targets) -> np.ndarray:
    """Vectorised transition density from x to each arc coordinate."""
    s_targets = np.asarray(s_targets, dtype=float)
    pos = body.position_at(s_targets)
    tan = body.tangent_at(s_targets)
    nrm = np.stack([-tan[..., 1], tan[..., 0]], axis=-1)
    d = pos - x.position[None, :]
    dist = np.hypot(d[..., 0], d[..., 1])
    ok = dist > body.tol_geom
    dist_safe = np.where(ok, dist, 1.0)
    l = d / dist_safe[..., None]
    cosv = l[..., 0] * x.normal[0] + l[..., 1] * x.normal[1]
    sinv = x.normal[0] * l[..., 1] - x.normal[1] * l[..., 0]
    psi = np.arctan2(sinv, cosv)
    cos_land = -(nrm[..., 0] * l[..., 0] + nrm[..., 1] * l[..., 1])
    vals = law.density(psi) * np.maximum(cos_land, 0.0) / dist_safe
    return np.where(ok, vals, 0.0)


def transition_row_integral(body: ConvexBody, law: ReflectionLaw,
                            x: BoundaryPoint, tol: float = 1e-9) -> float:
    """Integral of the transition density over the whole boundary.

    Equals one for every valid law/body pair.  The launch angle is monotone
    in the landing arc coordinate, so for laws with a smaller support the
    integration window is located by bisection on the support edges and
    integrated adaptively in between.
    """
    P = body.perimeter
    width = law.support_width

    def angle_of(ds: float) -> float:
        return launch_angle(body, x, body.point_at(x.s + ds))

    # the integrand has a finite limit as the landing point approaches x, so
    # a tiny inset only avoids the coincident-point guard
    inset = 10.0 * body.tol_geom
    lo, hi = inset, P - inset
    if width < math.pi - 1e-12:
        half = 0.5 * width
        lo = brentq(lambda ds: angle_of(ds) + half, inset, P - inset,
                    xtol=1e-13 * P)
        hi = brentq(lambda ds: angle_of(ds) - half, inset, P - inset,
                    xtol=1e-13 * P)

    def integrand(ds: float) -> float:
        return transition_density(body, law, x, body.point_at(x.s + ds))

    val, _ = quad(integrand, lo, hi, limit=400, epsabs=1e-10, epsrel=1e-10)
    # the inset near a full-support law's endpoints drops an O(inset) sliver
    return float(val)


def transition_matrix(body: ConvexBody, law: ReflectionLaw,
                      n_nodes: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint discretisation (nodes, matrix) of the transition kernel.

    M[i, j] approximates density(node_i -> node_j); multiplying on the right
    by (M * ds) composes steps.  Used for multi-bounce landing profiles.
    """
    nodes = (np.arange(n_nodes) + 0.5) * body.perimeter / n_nodes
    M = np.empty((n_nodes, n_nodes))
    for i, si in enumerate(nodes):
        M[i] = transition_density_row(body, law, body.point_at(si), nodes)
    return nodes, M
