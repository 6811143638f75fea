"""Grid solver for the jump-driven Fisher-KPP equation on ``[-L, L]``.

Between jumps the deterministic part (heat flow plus logistic growth at the
rate of the atom at zero) is integrated by Strang splitting with an implicit
Crank-Nicolson heat step.  Jumps ``u <- u + y u (1 - u)`` are applied exactly
at their event times.  The profile is 1 on the left and 0 on the right, so the
front invades to the right.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .measure import ReproductionMeasure, split, wave_speed
from .randomness import Skeleton, StreamKey, sample_marked_poisson, sample_skeleton


class SpdeError(ValueError):
    pass


@dataclass
class Field:
    values: np.ndarray
    dx: float
    L: float
    time: float = 0.0

    def __post_init__(self):
        self.values = np.clip(np.asarray(self.values, dtype=float), 0.0, 1.0)
        if self.values.ndim != 1 or self.values.size < 3:
            raise SpdeError("field needs at least 3 grid points")
        if self.dx <= 0:
            raise SpdeError("dx must be > 0")

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.values.size)

    def copy(self, values=None, time=None) -> "Field":
        return Field(
            self.values.copy() if values is None else values,
            self.dx,
            self.L,
            self.time if time is None else time,
        )

    def mass(self) -> float:
        return float(self.values.sum() * self.dx)


@dataclass(frozen=True)
class SpdeConfig:
    L: float = 20.0
    dx: float = 0.05
    dt_max: float | None = None
    theta: float = 0.5
    front_levels: tuple[float, ...] = (0.25, 0.5, 0.75)
    record_dt: float = 0.1
    margin_wavelengths: float = 10.0
    snapshot_times: tuple[float, ...] = ()
    max_snapshots: int = 1000
    max_steps: int = 50_000_000

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise SpdeError("; ".join(errors))

    @property
    def dt(self) -> float:
        return self.dx * self.dx if self.dt_max is None else self.dt_max

    @property
    def n_points(self) -> int:
        return int(round(2 * self.L / self.dx)) + 1

    def violations(self) -> list[str]:
        out = []
        if self.L <= 0:
            out.append("L must be > 0")
        if self.dx <= 0:
            out.append("dx must be > 0")
        elif self.L > 0 and self.n_points < 3:
            out.append("grid needs at least 3 points")
        if self.dt_max is not None and (self.dt_max <= 0 or self.dt_max > self.dx * self.dx * (1 + 1e-12)):
            out.append(f"dt_max={self.dt_max} must be in (0, dx**2]")
        if not (0.0 < self.theta < 1.0):
            out.append("theta must be in (0, 1)")
        if any(not (0.0 < q < 1.0) for q in self.front_levels):
            out.append("front levels must be in (0, 1)")
        if self.record_dt <= 0:
            out.append("record_dt must be > 0")
        return out


def ramp_profile(x, a: float, b: float):
    """1 for ``x <= a``, 0 for ``x >= b``, linear in between (a step when ``a == b``)."""
    x = np.asarray(x, dtype=float)
    if b < a:
        raise SpdeError("ramp needs a <= b")
    if b == a:
        return np.where(x <= a, 1.0, 0.0)
    return np.clip((b - x) / (b - a), 0.0, 1.0)


def initial_ramp(config: SpdeConfig, a: float, b: float) -> Field:
    if not (-config.L < a <= b < config.L):
        raise SpdeError(f"ramp [{a}, {b}] outside domain (-{config.L}, {config.L})")
    x = -config.L + config.dx * np.arange(config.n_points)
    return Field(ramp_profile(x, a, b), config.dx, config.L)


@dataclass(frozen=True)
class RampProfile:
    """Initial datum equal to 1 left of ``a``, 0 right of ``b``."""

    a: float
    b: float

    def __call__(self, x):
        return ramp_profile(x, self.a, self.b)

    def field(self, config: SpdeConfig) -> Field:
        return initial_ramp(config, self.a, self.b)


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __call__(self, x):
        return np.full(np.shape(x), float(self.value))

    def field(self, config: SpdeConfig) -> Field:
        return Field(np.full(config.n_points, float(self.value)), config.dx, config.L)


def _nsteps(h: float, dt: float) -> int:
    return max(1, math.ceil(h / dt - 1e-9))


def heat_step(f: Field, h: float, dt_max: float | None = None) -> Field:
    """Advance by the heat semigroup of ``0.5 d2/dx2`` for time ``h``."""
    if h <= 0:
        raise SpdeError("heat step needs h > 0")
    dt = f.dx * f.dx if dt_max is None else dt_max
    if dt > f.dx * f.dx * (1 + 1e-12):
        raise SpdeError("substep exceeds dx**2; order preservation is lost")
    n = _nsteps(h, dt)
    u = f.values.copy()
    kernels.heat_cn(u, h / n, f.dx, n, u[0], u[-1])
    return f.copy(np.clip(u, 0.0, 1.0), f.time + h)


def logistic_flow(u, r: float, h: float):
    g = math.exp(r * h)
    return u * g / (1.0 + u * (g - 1.0))


def logistic_step(f: Field, r: float, h: float) -> Field:
    return f.copy(logistic_flow(f.values, r, h), f.time + h)


def jump_map(u, y: float):
    return u + y * u * (1.0 - u)


def jump_apply(f: Field, y: float) -> Field:
    if not (0.0 < y <= 1.0):
        raise SpdeError(f"jump impact {y!r} outside (0, 1]")
    return f.copy(jump_map(f.values, y))


def front_position(f: Field, theta: float = 0.5) -> float:
    """Rightmost crossing of level ``theta``, linearly interpolated; ``-inf`` if none."""
    return _front(f.values, f.dx, f.L, theta)


def _front(u: np.ndarray, dx: float, L: float, theta: float) -> float:
    above = np.flatnonzero(u >= theta)
    if above.size == 0:
        return -math.inf
    i = int(above[-1])
    if i == u.size - 1:
        return L
    frac = (u[i] - theta) / (u[i] - u[i + 1])
    return -L + dx * (i + frac)


@dataclass
class Trajectory:
    times: np.ndarray
    fronts: dict[float, np.ndarray]
    mass: np.ndarray
    events: list[tuple[float, float, str]]
    final: Field
    snapshots: list[tuple[float, Field]] = field(default_factory=list)
    truncated: bool = False
    reason: str | None = None
    theta: float = 0.5

    @property
    def front(self) -> np.ndarray:
        return self.fronts[self.theta]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "front_position", "mass"])
        for t, x, m in zip(self.times, self.front, self.mass):
            w.writerow([f"{t:.17g}", f"{x:.17g}", f"{m:.17g}"])
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y", "source"])
        for t, y, src in self.events:
            w.writerow([f"{t:.17g}", f"{y:.17g}", src])
        return buf.getvalue()

    def snapshots_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "u"])
        for t, f in self.snapshots:
            for x, u in zip(f.x, f.values):
                w.writerow([f"{t:.17g}", f"{x:.17g}", f"{u:.17g}"])
        return buf.getvalue()


def margin_length(R: ReproductionMeasure, wavelengths: float = 10.0) -> float:
    """Required gap between the front and the right boundary: ``wavelengths / s``."""
    return wavelengths / wave_speed(R)


def recommended_half_width(
    R: ReproductionMeasure, T: float, left_pad: float = 10.0, ramp_width: float = 1.0,
    wavelengths: float = 10.0, speed_factor: float = 1.25,
) -> float:
    """Half-width ``L`` so a front started ``left_pad`` from the left edge keeps its margin to ``T``.

    The front is budgeted at ``speed_factor`` times the annealed speed ``sqrt(2 r)``,
    which bounds the mean front speed from above.
    """
    travel = speed_factor * math.sqrt(2.0 * R.total_mass()) * T
    return 0.5 * (left_pad + ramp_width + travel + margin_length(R, wavelengths))


def merge_events(skeleton: Skeleton, small_t, small_y, T: float) -> list[tuple[float, float, str]]:
    ev = [(t, y, "skeleton") for t, y in skeleton.points(T)]
    ev += [(float(t), float(y), "small") for t, y in zip(small_t, small_y)]
    ev.sort(key=lambda e: (e[0], e[2]))
    return ev


def evolve(
    u0: Field,
    R: ReproductionMeasure,
    delta: float,
    T: float,
    skeleton: Skeleton | None = None,
    key: StreamKey | None = None,
    config: SpdeConfig | None = None,
    enforce_margin: bool = True,
) -> Trajectory:
    """Solve up to time ``T`` from ``u0``.

    Large jumps come from ``skeleton`` (sampled from ``key`` if absent); jumps
    with impact in ``(0, delta]`` are sampled from a stream forked off ``key``.
    """
    config = config or SpdeConfig(L=u0.L, dx=u0.dx)
    if abs(config.dx - u0.dx) > 1e-15 or abs(config.L - u0.L) > 1e-12:
        raise SpdeError("field grid does not match config")
    if T <= 0:
        raise SpdeError("T must be > 0")
    sm = split(R, delta)
    if skeleton is None:
        if key is None:
            raise SpdeError("need a skeleton or a stream key")
        skeleton = sample_skeleton(sm, T, key.fork("skeleton"))
    else:
        if abs(skeleton.delta - sm.delta) > 1e-15:
            raise SpdeError(f"skeleton delta {skeleton.delta} != {sm.delta}")
        if skeleton.horizon < T:
            raise SpdeError("skeleton horizon shorter than T")
    if sm.minus.atoms:
        if key is None:
            raise SpdeError("small jumps present but no stream key given")
        st, sy = sample_marked_poisson(sm.minus.atoms, T, key.fork("small").generator())
    else:
        st, sy = (), ()
    events = merge_events(skeleton, st, sy, T)

    r = sm.minus.r0
    dt = config.dt
    u = u0.values.copy()
    left, right = float(u[0]), float(u[-1])
    levels = tuple(sorted(set(config.front_levels) | {config.theta}))
    margin = margin_length(R, config.margin_wavelengths) if R.total_mass() > 0 else 0.0

    n_rec = int(math.floor(T / config.record_dt + 1e-9))
    rec_times = [k * config.record_dt for k in range(n_rec + 1)]
    if T - rec_times[-1] > 1e-12:
        rec_times.append(T)
    snap_times = sorted(t for t in config.snapshot_times if 0 <= t <= T)
    marks = sorted({(t, "rec") for t in rec_times} | {(t, "snap") for t in snap_times})

    # one timeline of (time, kind, payload)
    timeline = [(t, 0 if kind == "snap" else 1, kind, None) for t, kind in marks]
    timeline += [(t, 2, "jump", (y, src)) for t, y, src in events]
    timeline.sort(key=lambda e: (e[0], e[1]))

    times, mass, snaps, applied = [], [], [], []
    fronts = {q: [] for q in levels}
    t_now, steps = 0.0, 0
    truncated, reason = False, None
    for t_ev, _, kind, payload in timeline:
        gap = t_ev - t_now
        if gap > 1e-13:
            n = _nsteps(gap, dt)
            steps += n
            if steps > config.max_steps:
                truncated, reason = True, "step budget exceeded"
                break
            if r > 0:
                kernels.strang_fkpp(u, gap / n, config.dx, n, r, left, right)
            else:
                kernels.heat_cn(u, gap / n, config.dx, n, left, right)
            np.clip(u, 0.0, 1.0, out=u)
            t_now = t_ev
        if kind == "jump":
            y, src = payload
            u += y * u * (1.0 - u)
            applied.append((t_ev, y, src))
        elif kind == "snap":
            if len(snaps) >= config.max_snapshots:
                truncated, reason = True, "snapshot memory limit exceeded"
                break
            snaps.append((t_ev, Field(u.copy(), config.dx, config.L, t_ev)))
        else:
            times.append(t_ev)
            mass.append(float(u.sum() * config.dx))
            for q in levels:
                fronts[q].append(_front(u, config.dx, config.L, q))
            lead = fronts[levels[0]][-1]
            if enforce_margin and lead > config.L - margin:
                truncated, reason = True, f"front at {lead:.4g} within margin {margin:.4g} of boundary"
                break

    return Trajectory(
        times=np.array(times),
        fronts={q: np.array(v) for q, v in fronts.items()},
        mass=np.array(mass),
        events=applied,
        final=Field(u, config.dx, config.L, t_now),
        snapshots=snaps,
        truncated=truncated,
        reason=reason,
        theta=config.theta,
    )
