"""Coordinated branching Brownian motion (CBBM), the dual particle system.

Particles move as independent Brownian motions.  At each skeleton point
``(t_j, y_j)`` every particle independently duplicates in place with
probability ``y_j``.  Small events come from the minus part of the measure:
the atom at zero makes each particle branch at rate ``r0``, and an atom
``(y, w)`` fires a coordinated event at rate ``(w / y) (1 - (1 - y)**n)`` in
which a nonempty Bernoulli(``y``) subset duplicates.

Two engines share these rules.  ``direct`` is a textbook Gillespie loop over
:func:`schedule_small_event`; ``batched`` proposes atom events at the constant
rate ``sum w / y`` and lets every particle flip its own coin (empty subsets are
no-ops), and grows the ``r0`` branching in vectorised generations.  Both
sample the same law.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .measure import ReproductionMeasure, SplitMeasure
from .randomness import Skeleton, StreamKey, sample_marked_poisson

EXACT_INT_LIMIT = 2**53
GAUSSIAN_THRESHOLD = 10**9
DEFAULT_CAP = 10**6


class CbbmError(RuntimeError):
    pass


class CapExceeded(CbbmError):
    pass


@dataclass
class ParticleSystem:
    positions: np.ndarray | None = None
    count: int | float = 1
    t: float = 0.0
    last_k: int = 0

    @classmethod
    def at(cls, x0, t: float = 0.0) -> "ParticleSystem":
        pos = np.array(x0, dtype=float).ravel()
        if pos.size < 1:
            raise CbbmError("need at least one particle")
        return cls(positions=pos, count=int(pos.size), t=t)

    @classmethod
    def counts_only(cls, n: int = 1, t: float = 0.0) -> "ParticleSystem":
        if n < 1:
            raise CbbmError("need at least one particle")
        return cls(positions=None, count=int(n), t=t)

    @property
    def mode(self) -> str:
        return "counts" if self.positions is None else "positions"

    @property
    def size(self) -> int | float:
        return self.count if self.positions is None else int(self.positions.size)

    def copy(self) -> "ParticleSystem":
        pos = None if self.positions is None else self.positions.copy()
        return ParticleSystem(pos, self.count, self.t, self.last_k)


def _as_count(v) -> int | float:
    # exact integers until the float mantissa runs out
    return int(v) if v < EXACT_INT_LIMIT else float(v)


def binomial_count(n, y: float, rng: np.random.Generator, threshold: int = GAUSSIAN_THRESHOLD):
    """``Binomial(n, y)``, Gaussian-approximated once ``n`` exceeds ``threshold``."""
    if y >= 1.0:
        return n
    if n <= threshold:
        return int(rng.binomial(int(n), y))
    mean, sd = n * y, math.sqrt(n * y * (1.0 - y))
    return min(max(round(mean + sd * rng.standard_normal()), 0), n)


def yule_growth(n, r: float, h: float, rng: np.random.Generator, threshold: int = GAUSSIAN_THRESHOLD):
    """Births in a rate-``r`` Yule process started from ``n`` over time ``h``.

    Exact: the population at time ``h`` is ``n`` plus a negative binomial with
    ``n`` successes and success probability ``exp(-r h)``.
    """
    if r <= 0 or h <= 0:
        return 0
    p = math.exp(-r * h)
    if n <= threshold:
        return int(rng.negative_binomial(int(n), p))
    mean = n * (1.0 - p) / p
    sd = math.sqrt(n * (1.0 - p)) / p
    return max(round(mean + sd * rng.standard_normal()), 0)


def diffuse(ps: ParticleSystem, h: float, rng: np.random.Generator) -> ParticleSystem:
    if h <= 0:
        raise CbbmError("diffusion step needs h > 0")
    if ps.positions is not None:
        ps.positions = ps.positions + math.sqrt(h) * rng.standard_normal(ps.positions.size)
    ps.t += h
    return ps


def _check_impact(y: float) -> None:
    if not (0.0 < y <= 1.0):
        raise CbbmError(f"impact {y!r} outside (0, 1]")


def large_event(ps: ParticleSystem, y: float, rng: np.random.Generator, threshold: int = GAUSSIAN_THRESHOLD) -> ParticleSystem:
    """Every particle independently duplicates in place with probability ``y``."""
    _check_impact(y)
    if ps.positions is None:
        ps.count = _as_count(ps.count + binomial_count(ps.count, y, rng, threshold))
    else:
        pos = ps.positions
        born = pos if y >= 1.0 else pos[rng.random(pos.size) < y]
        ps.positions = np.concatenate([pos, born])
        ps.count = int(ps.positions.size)
    return ps


ZERO_ATOM = -1


def small_event_rates(n, minus: ReproductionMeasure) -> np.ndarray:
    """Rates of the zero atom (first entry) and each atom of ``minus``, with ``n`` particles."""
    rates = [minus.r0 * n]
    for y, w in minus.atoms:
        # (w / y) * (1 - (1 - y)**n), computed stably
        q = -math.expm1(n * math.log1p(-y)) if y < 1.0 else 1.0
        rates.append(w / y * q)
    return np.array(rates)


def schedule_small_event(ps: ParticleSystem, minus: ReproductionMeasure, rng: np.random.Generator):
    """Waiting time to the next small event and which atom fires (``ZERO_ATOM`` or an index)."""
    rates = small_event_rates(ps.size, minus)
    total = float(rates.sum())
    if total <= 0:
        return math.inf, None
    wait = rng.exponential(1.0 / total)
    k = int(np.searchsorted(np.cumsum(rates), rng.random() * total, side="right"))
    k = min(k, rates.size - 1)
    return wait, (ZERO_ATOM if k == 0 else k - 1)


def _first_participant(n: int, y: float, rng: np.random.Generator) -> int:
    # P(first = j) proportional to (1-y)**j for j = 0..n-1
    log_q = math.log1p(-y)
    u = rng.random() * -math.expm1(n * log_q)
    return min(int(math.floor(math.log1p(-u) / log_q)), n - 1)


def conditional_participants(n: int, y: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of a Bernoulli(``y``) subset of ``range(n)`` conditioned to be nonempty.

    The first participant follows the geometric law truncated at ``n``; the
    indices after it are independent coins.
    """
    if y >= 1.0:
        return np.arange(n)
    first = _first_participant(n, y, rng)
    rest = first + 1 + np.flatnonzero(rng.random(n - first - 1) < y)
    return np.concatenate([[first], rest]).astype(np.int64)


def small_event_apply(
    ps: ParticleSystem, atom: int, minus: ReproductionMeasure, rng: np.random.Generator,
    threshold: int = GAUSSIAN_THRESHOLD,
) -> ParticleSystem:
    """Apply a small event; returns ``ps`` with the number of newborns in ``ps.last_k``."""
    n = ps.size
    if atom == ZERO_ATOM:
        k = 1
        if ps.positions is not None:
            i = int(rng.integers(n))
            ps.positions = np.append(ps.positions, ps.positions[i])
    else:
        y = minus.atoms[atom][0]
        if ps.positions is None:
            if y >= 1.0:
                k = n
            elif n <= threshold:
                first = _first_participant(int(n), y, rng)
                k = 1 + binomial_count(int(n) - first - 1, y, rng)
            else:
                k = max(binomial_count(n, y, rng, threshold), 1)
        else:
            idx = conditional_participants(n, y, rng)
            k = int(idx.size)
            ps.positions = np.concatenate([ps.positions, ps.positions[idx]])
    if ps.positions is None:
        ps.count = _as_count(ps.count + k)
    else:
        ps.count = int(ps.positions.size)
    ps.last_k = k
    return ps


def rightmost(ps: ParticleSystem) -> float:
    if ps.positions is None:
        raise CbbmError("rightmost particle is undefined in counts-only mode")
    return float(ps.positions.max())


def _bbm_generations(pos: np.ndarray, r: float, h: float, rng: np.random.Generator, cap: float):
    """Branching Brownian motion at rate ``r`` for time ``h``, one generation per pass."""
    out = []
    cur, rem = pos, np.full(pos.size, h)
    total = pos.size
    while cur.size:
        tau = rng.exponential(1.0 / r, cur.size)
        br = tau < rem
        fin = ~br
        out.append(cur[fin] + np.sqrt(rem[fin]) * rng.standard_normal(int(fin.sum())))
        nb = int(br.sum())
        if nb == 0:
            break
        bpos = cur[br] + np.sqrt(tau[br]) * rng.standard_normal(nb)
        brem = rem[br] - tau[br]
        total += nb
        if total > cap:
            raise CapExceeded(f"particle count exceeded cap {cap}")
        cur = np.concatenate([bpos, bpos])
        rem = np.concatenate([brem, brem])
    return np.concatenate(out) if out else pos


@dataclass
class CbbmRun:
    times: np.ndarray
    counts: np.ndarray
    rightmost: np.ndarray
    large_log: list[tuple[float, float, float, float]]  # (t_j, y_j, I_{t_j-}, I_{t_j})
    final: ParticleSystem
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    capped: bool = False
    reason: str | None = None

    @property
    def mode(self) -> str:
        return self.final.mode

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "I_t", "S_t"])
        for t, c, s in zip(self.times, self.counts, self.rightmost):
            w.writerow([f"{t:.17g}", f"{c:.17g}", "" if math.isnan(s) else f"{s:.17g}"])
        return buf.getvalue()

    def snapshots_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x"])
        for t, pos in self.snapshots:
            for x in pos:
                w.writerow([f"{t:.17g}", f"{x:.17g}"])
        return buf.getvalue()


def run(
    x0,
    split: SplitMeasure,
    skeleton: Skeleton,
    T: float,
    key: StreamKey,
    cap: float = DEFAULT_CAP,
    mode: str = "positions",
    checkpoints=None,
    record_dt: float = 0.1,
    snapshot_times=(),
    engine: str = "batched",
    threshold: int = GAUSSIAN_THRESHOLD,
) -> CbbmRun:
    """Simulate the dual on ``[0, T]`` conditional on ``skeleton``.

    ``x0`` is a list of starting positions (its length is the starting count in
    counts-only mode).  Records ``(t, I_t, S_t)`` at ``checkpoints`` (default:
    every ``record_dt``).  In positions mode the run stops with ``capped=True``
    once more than ``cap`` particles exist.
    """
    if T <= 0:
        raise CbbmError("T must be > 0")
    if skeleton.horizon < T:
        raise CbbmError("skeleton horizon shorter than T")
    if abs(skeleton.delta - split.delta) > 1e-15:
        raise CbbmError("skeleton and split use different delta")
    if mode not in ("positions", "counts"):
        raise CbbmError(f"unknown mode {mode!r}")
    if engine not in ("batched", "direct"):
        raise CbbmError(f"unknown engine {engine!r}")

    x0 = list(np.atleast_1d(np.asarray(x0, dtype=float)))
    ps = ParticleSystem.at(x0) if mode == "positions" else ParticleSystem.counts_only(len(x0))
    rng = key.generator()
    minus = split.minus

    if checkpoints is None:
        n_rec = int(math.floor(T / record_dt + 1e-9))
        checkpoints = [k * record_dt for k in range(n_rec + 1)]
        if T - checkpoints[-1] > 1e-12:
            checkpoints.append(T)
    checkpoints = sorted(float(c) for c in checkpoints if 0 <= c <= T)

    # (time, order, kind, payload); at equal times record before jumping
    timeline = [(c, 1, "rec", None) for c in checkpoints]
    timeline += [(float(s), 0, "snap", None) for s in snapshot_times if 0 <= s <= T]
    timeline += [(t, 2, "large", y) for t, y in skeleton.points(T)]
    if engine == "batched" and minus.atoms:
        pt, py = sample_marked_poisson(minus.atoms, T, key.fork("proposals").generator())
        timeline += [(float(t), 2, "prop", float(y)) for t, y in zip(pt, py)]
    timeline.sort(key=lambda e: (e[0], e[1]))

    times, counts, right, large_log, snaps = [], [], [], [], []
    capped, reason = False, None
    try:
        for t_ev, _, kind, payload in timeline:
            _advance(ps, t_ev, minus, rng, cap, engine, threshold)
            if kind == "rec":
                times.append(t_ev)
                counts.append(float(ps.size))
                right.append(rightmost(ps) if ps.positions is not None else math.nan)
            elif kind == "snap":
                if ps.positions is not None:
                    snaps.append((t_ev, ps.positions.copy()))
            elif kind == "large":
                before = ps.size
                large_event(ps, payload, rng, threshold)
                large_log.append((t_ev, payload, float(before), float(ps.size)))
            else:
                large_event(ps, payload, rng, threshold)
            if ps.positions is not None and ps.size > cap:
                raise CapExceeded(f"particle count exceeded cap {cap}")
    except CapExceeded as exc:
        capped, reason = True, str(exc)

    return CbbmRun(
        times=np.array(times),
        counts=np.array(counts),
        rightmost=np.array(right),
        large_log=large_log,
        final=ps,
        snapshots=snaps,
        capped=capped,
        reason=reason,
    )


def _advance(ps, t_target, minus, rng, cap, engine, threshold):
    h = t_target - ps.t
    if h <= 1e-15:
        return
    if engine == "batched":
        r = minus.r0
        if ps.positions is None:
            if r > 0:
                ps.count = _as_count(ps.count + yule_growth(ps.count, r, h, rng, threshold))
        elif r > 0:
            ps.positions = _bbm_generations(ps.positions, r, h, rng, cap)
            ps.count = int(ps.positions.size)
        else:
            ps.positions = ps.positions + math.sqrt(h) * rng.standard_normal(ps.positions.size)
        ps.t = t_target
        return
    while True:
        wait, atom = schedule_small_event(ps, minus, rng)
        if ps.t + wait >= t_target:
            diffuse(ps, t_target - ps.t, rng)
            ps.t = t_target
            return
        diffuse(ps, wait, rng)
        small_event_apply(ps, atom, minus, rng, threshold)
        if ps.positions is not None and ps.size > cap:
            raise CapExceeded(f"particle count exceeded cap {cap}")


def martingale_series(result: CbbmRun, minus_mass: float, n_max: int, I0: float | None = None) -> np.ndarray:
    """``M_n = exp(-t_n m) prod_{j<=n} I_{t_j-} / I_{t_{j-1}}`` for ``n = 0..n_max``.

    ``m`` is the total mass of the small part of the measure.  Returns NaN for
    indices beyond the recorded skeleton events.
    """
    out = np.full(n_max + 1, np.nan)
    out[0] = 1.0
    prev_I = float(result.counts[0]) if I0 is None else float(I0)
    log_m = 0.0
    for n, (tj, _, before, after) in enumerate(result.large_log[:n_max], start=1):
        log_m += math.log(before / prev_I)
        out[n] = math.exp(log_m - tj * minus_mass)
        prev_I = after
    return out
