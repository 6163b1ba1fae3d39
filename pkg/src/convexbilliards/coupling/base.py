"""Coupling primitives: windows, lower-bound profiles, plateau coupling.

The engine couples two random draws through a *plateau*: both laws dominate
``level`` times Lebesgue measure on their windows, so with probability
level * |overlap| one common value is drawn uniformly from the overlap and
both variables take it; otherwise each side samples its residual law by
rejection against its full density.  Marginals are preserved exactly and
the probability of drawing equal values is at least the plateau mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ResidualSamplingError

MAX_REJECTS = 1_000_000


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Window:
    """Disjoint union of intervals, optionally on a circle of given period.

    Pieces are (lo, hi) with hi > lo in an unwrapped coordinate; membership
    of a value is tested modulo the period when one is set.
    """

    pieces: tuple
    period: float | None = None

    @staticmethod
    def interval(lo: float, hi: float, period: float | None = None) -> "Window":
        return Window(pieces=((float(lo), float(hi)),) if hi > lo else (),
                      period=period)

    @property
    def length(self) -> float:
        return float(sum(hi - lo for lo, hi in self.pieces))

    @property
    def empty(self) -> bool:
        return self.length <= 0.0

    def contains(self, value) -> np.ndarray:
        v = np.asarray(value, dtype=float)
        out = np.zeros(v.shape, dtype=bool)
        for lo, hi in self.pieces:
            if self.period is None:
                out |= (v >= lo) & (v < hi)
            else:
                rel = np.mod(v - lo, self.period)
                out |= rel < (hi - lo)
        return out if out.ndim else bool(out)

    def sample(self, rng: np.random.Generator, size=None):
        lens = np.array([hi - lo for lo, hi in self.pieces])
        if lens.size == 0:
            raise ValueError("cannot sample from an empty window")
        probs = lens / lens.sum()
        idx = rng.choice(lens.size, size=size, p=probs)
        u = rng.random(size)
        los = np.array([lo for lo, _ in self.pieces])
        vals = los[idx] + u * lens[idx]
        if self.period is not None:
            vals = np.mod(vals, self.period)
        return vals if np.ndim(vals) else float(vals)

    def intersect(self, other: "Window") -> "Window":
        if self.period != other.period:
            raise ValueError("windows live on different domains")
        pieces = []
        for alo, ahi in self.pieces:
            for blo, bhi in other.pieces:
                if self.period is None:
                    lo, hi = max(alo, blo), min(ahi, bhi)
                    if hi > lo:
                        pieces.append((lo, hi))
                else:
                    # shift b-piece near the a-piece in the unwrapped line
                    for k in (-1.0, 0.0, 1.0):
                        lo = max(alo, blo + k * self.period)
                        hi = min(ahi, bhi + k * self.period)
                        if hi > lo:
                            pieces.append((lo, hi))
        return Window(pieces=tuple(sorted(pieces)), period=self.period)


@dataclass(frozen=True)
class ProductWindow:
    """Cartesian product of two scalar windows (e.g. landing arc x time)."""

    first: Window
    second: Window

    @property
    def length(self) -> float:
        return self.first.length * self.second.length

    @property
    def empty(self) -> bool:
        return self.first.empty or self.second.empty

    def contains(self, value) -> bool:
        u, v = value
        return bool(self.first.contains(u)) and bool(self.second.contains(v))

    def sample(self, rng: np.random.Generator):
        return (self.first.sample(rng), self.second.sample(rng))

    def intersect(self, other: "ProductWindow") -> "ProductWindow":
        return ProductWindow(self.first.intersect(other.first),
                             self.second.intersect(other.second))


@dataclass(frozen=True)
class LowerBoundProfile:
    """Certified plateau: law >= level * Lebesgue on the window."""

    level: float
    window: Window | ProductWindow

    def __post_init__(self):
        if self.level <= 0.0:
            raise ValueError("plateau level must be positive")
        if self.window.empty:
            raise ValueError("plateau window must be nonempty")
        if self.level * self.window.length > 1.0 + 1e-9:
            raise ValueError("plateau mass exceeds one; profile inconsistent")

    @property
    def mass(self) -> float:
        return self.level * self.window.length


# ---------------------------------------------------------------------------
# outcome records
# ---------------------------------------------------------------------------

@dataclass
class AttemptRecord:
    stage: int
    success: bool
    overlap_mass: float


@dataclass
class CouplingOutcome:
    """Result of one coupling run.

    ``coupling_index`` counts chain steps, ``coupling_time`` is the clock
    time of the continuous process; whichever does not apply stays None.
    After success both trajectories are identical entry for entry.
    """

    coupled: bool
    coupling_index: int | None = None
    coupling_time: float | None = None
    attempts: list[AttemptRecord] = field(default_factory=list)
    traj_a: np.ndarray | None = None
    traj_b: np.ndarray | None = None

    @property
    def stage_attempts(self) -> dict:
        out: dict = {}
        for rec in self.attempts:
            a, s = out.get(rec.stage, (0, 0))
            out[rec.stage] = (a + 1, s + int(rec.success))
        return out


# ---------------------------------------------------------------------------
# plateau (gamma) coupling
# ---------------------------------------------------------------------------

def gamma_couple(profile_a: LowerBoundProfile, profile_b: LowerBoundProfile,
                 sample_a, pdf_a, sample_b, pdf_b,
                 rng: np.random.Generator,
                 max_rejects: int = MAX_REJECTS):
    """One plateau-coupling attempt between two certified laws.

    With probability min(level) * |overlap| both outputs equal a uniform
    draw from the overlap; otherwise each side draws from its residual by
    rejection against its own density (``pdf_*`` evaluate the full law).
    Returns (success, value_a, value_b).  An empty overlap yields a
    deterministic failure with independent full-law draws.
    """
    level = min(profile_a.level, profile_b.level)
    overlap = profile_a.window.intersect(profile_b.window)
    mass = 0.0 if overlap.empty else level * overlap.length
    if mass > 0.0 and rng.random() < mass:
        v = overlap.sample(rng)
        return True, v, v
    va = _sample_residual(overlap, level if mass > 0.0 else 0.0,
                          sample_a, pdf_a, rng, max_rejects)
    vb = _sample_residual(overlap, level if mass > 0.0 else 0.0,
                          sample_b, pdf_b, rng, max_rejects)
    return False, va, vb


def _sample_residual(overlap, level, sample, pdf, rng, max_rejects):
    """Rejection sampler for (law - level * uniform-on-overlap) / (1 - mass)."""
    if level <= 0.0:
        return sample(rng)
    for _ in range(max_rejects):
        v = sample(rng)
        if not overlap.contains(v):
            return v
        dens = pdf(v)
        if dens <= level:
            continue  # no residual mass at this point
        if rng.random() < 1.0 - level / dens:
            return v
    raise ResidualSamplingError(
        f"residual rejection exceeded {max_rejects} iterations")


def success_mass(profile_a: LowerBoundProfile,
                 profile_b: LowerBoundProfile) -> float:
    """Plateau mass of one attempt: min(level) * |overlap|."""
    level = min(profile_a.level, profile_b.level)
    overlap = profile_a.window.intersect(profile_b.window)
    return 0.0 if overlap.empty else level * overlap.length
