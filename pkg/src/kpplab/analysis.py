"""Estimators and statistical comparisons against the closed-form rates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import cbbm as _cbbm
from . import spde as _spde
from .measure import (
    ReproductionMeasure,
    annealed_rate,
    c_delta,
    d_delta_eps,
    speed_integral,
    split,
    wave_speed,
)
from .randomness import Skeleton, StreamKey, sample_skeleton, skeleton_log_sum


class AnalysisError(ValueError):
    pass


MIN_FIT_SAMPLES = 10
MIN_MARTINGALE_REPLICAS = 100


@dataclass
class RateReport:
    estimate: float
    stderr: float
    window: tuple[float, float]
    target: float
    target_name: str
    verdict: bool

    def __post_init__(self):
        if not self.window[0] < self.window[1]:
            raise AnalysisError("window must satisfy t_lo < t_hi")
        if self.stderr < 0:
            raise AnalysisError("stderr must be >= 0")


@dataclass
class SpeedReport:
    speed: float
    stderr: float
    theta: float
    target: float
    jensen_bound: float
    window: tuple[float, float]
    theta_speeds: dict = field(default_factory=dict)
    theta_stable: bool = True
    verdict: bool = False


@dataclass
class DualityReport:
    lhs_mean: float
    lhs_stderr: float
    rhs_mean: float
    rhs_stderr: float
    combined_stderr: float
    z: float
    n_lhs: int
    n_rhs: int
    t: float
    x: list
    verdict: bool


@dataclass
class TailReport:
    lam: float
    times: list
    frequency: list
    stderr: list
    bound: list
    exponential_bound: list
    bound_respected: bool
    trend: str
    trend_ok: bool


@dataclass
class MartingaleReport:
    means: list
    stderr: list
    n_replicas: int
    per_n: list
    skipped: bool
    verdict: bool


@dataclass
class LlnReport:
    value: float
    target: float
    tolerance: float
    relative_error: float
    horizon: float
    n_points: int
    flagged_empty: bool
    verdict: bool


def ols_slope(x, y) -> tuple[float, float, float]:
    """Least-squares slope, its residual-based standard error, and intercept."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0:
        raise AnalysisError("degenerate abscissa")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    icpt = ym - slope * xm
    resid = y - (icpt + slope * x)
    dof = max(n - 2, 1)
    se = math.sqrt(max(float(resid @ resid), 0.0) / dof / sxx)
    return slope, se, float(icpt)


def _window(times, window):
    times = np.asarray(times, dtype=float)
    if window is None:
        window = (times[-1] / 3.0, times[-1])
    lo, hi = window
    return (float(lo), float(hi)), (times >= lo - 1e-12) & (times <= hi + 1e-12)


def fit_growth(
    times, counts, window=None, target: float = math.nan, target_name: str = "s^2/2",
    rel_tol: float = 0.1, kind: str = "match",
) -> RateReport:
    """Slope of ``log I_t`` against ``t`` over ``window`` (default ``[T/3, T]``).

    ``kind`` selects the verdict: ``match`` (within ``rel_tol`` of the target),
    ``below`` (more than three standard errors under it) or ``at_most``
    (not above it by more than three standard errors).
    """
    window, m = _window(times, window)
    if int(m.sum()) < MIN_FIT_SAMPLES:
        raise AnalysisError(f"window {window} holds fewer than {MIN_FIT_SAMPLES} samples")
    t = np.asarray(times, dtype=float)[m]
    c = np.asarray(counts, dtype=float)[m]
    if np.any(c <= 0):
        raise AnalysisError("counts must be positive")
    slope, se, _ = ols_slope(t, np.log(c))
    if kind == "match":
        ok = abs(slope - target) <= rel_tol * abs(target)
    elif kind == "below":
        ok = slope < target - 3.0 * se
    elif kind == "at_most":
        ok = slope <= target + 3.0 * se
    else:
        raise AnalysisError(f"unknown verdict kind {kind!r}")
    return RateReport(slope, se, window, float(target), target_name, bool(ok))


def growth_reports(times, counts, R: ReproductionMeasure, delta: float, window=None, rel_tol: float = 0.1):
    """Quenched growth against ``s^2/2`` (match), ``c_delta`` (upper bound) and ``r`` (strict gap)."""
    return [
        fit_growth(times, counts, window, speed_integral(R), "s^2/2", rel_tol, "match"),
        fit_growth(times, counts, window, c_delta(R, delta), "c_delta", rel_tol, "at_most"),
        fit_growth(times, counts, window, annealed_rate(R), "annealed r", rel_tol, "below"),
    ]


def fit_front_speed(
    times, fronts, window=None, theta: float = 0.5, target: float = math.nan,
    jensen_bound: float = math.nan, rel_tol: float = 0.1, upper: float | None = None,
) -> SpeedReport:
    """Least-squares front speed.

    ``fronts`` is either an array for level ``theta`` or a mapping from level
    to array; with a mapping every level is fitted and the spread reported.
    The verdict requires the ``theta`` fit within ``rel_tol`` of ``target``
    and, if given, strictly below ``upper``.
    """
    if not isinstance(fronts, dict):
        fronts = {theta: np.asarray(fronts, dtype=float)}
    if theta not in fronts:
        raise AnalysisError(f"no front recorded at level {theta}")
    window, m = _window(times, window)
    if int(m.sum()) < MIN_FIT_SAMPLES:
        raise AnalysisError(f"window {window} holds fewer than {MIN_FIT_SAMPLES} samples")
    t = np.asarray(times, dtype=float)[m]
    fits = {}
    for q, xs in fronts.items():
        xs = np.asarray(xs, dtype=float)[m]
        if not np.all(np.isfinite(xs)):
            raise AnalysisError(f"sentinel front values inside window at level {q}")
        fits[float(q)] = ols_slope(t, xs)[:2]
    speed, se = fits[float(theta)]
    speeds = [v[0] for v in fits.values()]
    ses = [v[1] for v in fits.values()]
    # level spread judged against combined stderr, with a 1% floor for noiseless runs
    stable = (max(speeds) - min(speeds)) <= max(3.0 * math.sqrt(2.0) * max(ses), 0.01 * abs(speed))
    ok = abs(speed - target) <= rel_tol * abs(target)
    if upper is not None:
        ok = ok and speed < upper
    return SpeedReport(
        speed, se, float(theta), float(target), float(jensen_bound), window,
        {str(k): v[0] for k, v in fits.items()}, bool(stable), bool(ok),
    )


def speed_report_for(traj: _spde.Trajectory, R: ReproductionMeasure, window=None, rel_tol=0.1, upper=None):
    return fit_front_speed(
        traj.times, traj.fronts, window, traj.theta, wave_speed(R),
        math.sqrt(2.0 * annealed_rate(R)), rel_tol, upper,
    )


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    n = v.size
    mean = math.fsum(v.tolist()) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum(((v - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def duality_check(
    R: ReproductionMeasure,
    delta: float,
    x,
    u0,
    t: float,
    N: int,
    key: StreamKey,
    config: _spde.SpdeConfig,
    cap: float = _cbbm.DEFAULT_CAP,
    skeleton: Skeleton | None = None,
) -> DualityReport:
    """Compare ``E[prod (1 - u_t(x_i))]`` with ``E[prod (1 - u_0(C_t))]`` under one skeleton.

    The dual runs backwards in time, so the particle system is driven by the
    skeleton reflected on ``[0, t]``.  When the conditional equation has no
    small jumps it is deterministic and is solved once.
    """
    xs = [float(v) for v in np.atleast_1d(x)]
    if len(xs) > 4:
        raise AnalysisError("use at most 4 points")
    if N < 2:
        raise AnalysisError(f"need at least 2 replicas for a standard error, got N={N}")
    for v in xs:
        if not (-config.L + 1.0 < v < config.L - 1.0):
            raise AnalysisError(f"x={v} too close to the domain boundary")
    sm = split(R, delta)
    if skeleton is None:
        skeleton = sample_skeleton(sm, t, key.fork("skeleton"))
    field0 = u0.field(config)

    def lhs_once(k: StreamKey | None) -> float:
        tr = _spde.evolve(field0, R, delta, t, skeleton=skeleton, key=k, config=config, enforce_margin=False)
        f = tr.final
        vals = np.interp(xs, f.x, f.values)
        return float(np.prod(1.0 - vals))

    if sm.minus.atoms:
        lhs = [lhs_once(key.fork("spde", i)) for i in range(N)]
        lhs_mean, lhs_se = mean_stderr(lhs)
        n_lhs = N
    else:
        lhs_mean, lhs_se, n_lhs = lhs_once(None), 0.0, 1

    rev = skeleton.reversed(t)
    rhs = []
    for i in range(N):
        res = _cbbm.run(xs, sm, rev, t, key.fork("cbbm", i), cap=cap, checkpoints=[t])
        if res.capped:
            raise _cbbm.CapExceeded(f"replica {i}: {res.reason}; choose a smaller t or measure")
        rhs.append(float(np.prod(1.0 - u0(res.final.positions))))
    rhs_mean, rhs_se = mean_stderr(rhs)
    comb = math.hypot(lhs_se, rhs_se)
    diff = abs(lhs_mean - rhs_mean)
    z = diff / comb if comb > 0 else (0.0 if diff == 0 else math.inf)
    return DualityReport(
        lhs_mean, lhs_se, rhs_mean, rhs_se, comb, z, n_lhs, N, float(t), xs, bool(z <= 3.0)
    )


def heat_ramp_expectation(x, a: float, b: float, t: float):
    """``E[ramp(x + B_t)]`` for the linear ramp from 1 at ``a`` to 0 at ``b``."""
    x = np.asarray(x, dtype=float)
    s = math.sqrt(t)
    za, zb = (a - x) / s, (b - x) / s
    phi = lambda z: np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    # 1 on (-inf, a) plus the linear part on (a, b)
    lin = ((b - x) * (ndtr(zb) - ndtr(za)) + s * (phi(zb) - phi(za))) / (b - a)
    return ndtr(za) + lin


def trend(values, direction: str) -> bool:
    v = list(values)
    if direction == "decreasing":
        return all(b < a for a, b in zip(v, v[1:]))
    if direction == "increasing":
        return all(b > a for a, b in zip(v, v[1:]))
    raise AnalysisError(f"unknown direction {direction!r}")


def tail_bound_check(
    rightmost, counts, lam: float, times, c_d: float, eps: float = 0.0,
    direction: str = "decreasing", last: int = 3,
) -> TailReport:
    """Empirical ``P(S_t > lam t)`` from replicas against the many-to-one bound.

    ``rightmost`` and ``counts`` are ``(replicas, len(times))`` arrays.  The
    bound at each time is ``mean(min(1, I_t P(B_t > lam t)))``; it must hold up
    to three standard errors.  The trend is checked over the last ``last`` times.
    """
    S = np.atleast_2d(np.asarray(rightmost, dtype=float))
    I = np.atleast_2d(np.asarray(counts, dtype=float))
    times = [float(t) for t in times]
    freq, ses, bound, expb = [], [], [], []
    for j, t in enumerate(times):
        hit = (S[:, j] > lam * t).astype(float)
        p, se = mean_stderr(hit)
        freq.append(p)
        ses.append(se)
        gauss = float(ndtr(-lam * math.sqrt(t)))
        bound.append(mean_stderr(np.minimum(1.0, I[:, j] * gauss))[0])
        expb.append(math.exp((c_d + eps) * t - 0.5 * lam * lam * t))
    respected = all(p <= b + 3 * se + 1e-15 for p, b, se in zip(freq, bound, ses))
    return TailReport(
        lam, times, freq, ses, bound, expb, bool(respected), direction,
        trend(freq[-last:], direction),
    )


def tail_probabilities_dual(
    R: ReproductionMeasure,
    delta: float,
    skeleton: Skeleton,
    lams,
    times,
    config: _spde.SpdeConfig,
    key: StreamKey | None = None,
    n_spde: int = 1,
) -> np.ndarray:
    """Quenched ``P(S_t > lam t)`` for the dual started at 0, read off the equation.

    Duality with a step initial datum gives ``P(S_t > z) = E u_t(z)`` where
    ``u`` starts from ``1{x < 0}`` and sees the skeleton reflected on ``[0, t]``.
    Returns an array of shape ``(len(lams), len(times))``.
    """
    lams = [float(v) for v in np.atleast_1d(lams)]
    sm = split(R, delta)
    if sm.minus.atoms and key is None:
        raise AnalysisError("small jumps need a stream key")
    reps = n_spde if sm.minus.atoms else 1
    x = -config.L + config.dx * np.arange(config.n_points)
    u0 = _spde.Field(np.where(x < 0, 1.0, 0.0), config.dx, config.L)
    out = np.zeros((len(lams), len(times)))
    for j, t in enumerate(times):
        rev = skeleton.reversed(t)
        acc = np.zeros(len(lams))
        for i in range(reps):
            k = key.fork("tail", j).fork("rep", i) if key is not None else None
            tr = _spde.evolve(u0, R, delta, t, skeleton=rev, key=k, config=config, enforce_margin=False)
            acc += np.interp([lam * t for lam in lams], tr.final.x, tr.final.values)
        out[:, j] = acc / reps
    return out


def quenched_mean_count(R: ReproductionMeasure, delta: float, skeleton: Skeleton, t: float, I0: float = 1.0) -> float:
    """``E[I_t | skeleton] = I0 exp(m t) prod (1 + y_j)`` with ``m`` the small-part mass."""
    sm = split(R, delta)
    log = sm.minus.total_mass() * t + math.fsum(math.log1p(y) for _, y in skeleton.points(t))
    return I0 * math.exp(log)


def stopped_series(M) -> np.ndarray:
    """Carry the last finite value forward: the martingale stopped at its last event."""
    M = np.array(M, dtype=float)
    for n in range(1, M.size):
        if not np.isfinite(M[n]):
            M[n] = M[n - 1]
    return M


def martingale_mean_test(M) -> MartingaleReport:
    """Column means of ``M_n`` (replicas x n) against 1 with three-standard-error bands."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n_rep = M.shape[0]
    if n_rep < MIN_MARTINGALE_REPLICAS:
        raise AnalysisError(f"need at least {MIN_MARTINGALE_REPLICAS} replicas, got {n_rep}")
    cols = [c for c in range(M.shape[1]) if np.all(np.isfinite(M[:, c]))]
    if cols != list(range(len(cols))):
        cols = list(range(next(c for c in range(M.shape[1]) if c not in cols)))
    means, ses, per = [], [], []
    for c in cols:
        m, se = mean_stderr(M[:, c])
        means.append(m)
        ses.append(se)
        per.append(bool(abs(m - 1.0) <= 3.0 * se + 1e-12))
    skipped = len(cols) <= 1
    return MartingaleReport(means, ses, n_rep, per, skipped, bool(all(per)))


def lln_check(
    skeleton: Skeleton, R: ReproductionMeasure, delta: float, eps: float = 0.0,
    T: float | None = None, n_sigma: float = 3.0,
) -> LlnReport:
    """Time-averaged skeleton log-sum against its mean rate, with a CLT tolerance.

    The standard deviation of the average is ``sqrt(int log(1+y+eps)**2 / y R(dy) / T)``.
    """
    T = skeleton.horizon if T is None else float(T)
    value = skeleton_log_sum(skeleton, T, eps) / T
    target = d_delta_eps(R, delta, eps)
    second = math.fsum(w / y * math.log1p(y + eps) ** 2 for y, w in R.atoms if y > delta)
    tol = n_sigma * math.sqrt(second / T)
    expected_points = math.fsum(w / y for y, w in R.atoms if y > delta) * T
    flagged = len(skeleton.times) == 0 and expected_points > 20
    rel = abs(value - target) / target if target > 0 else abs(value - target)
    ok = abs(value - target) <= tol and not flagged
    n = sum(1 for _ in skeleton.points(T))
    return LlnReport(value, target, tol, rel, T, n, flagged, bool(ok))


def tail_report_from_probabilities(
    probs, lam: float, times, expected_counts, c_d: float, eps: float = 0.0,
    direction: str = "decreasing", last: int = 3,
) -> TailReport:
    """Like :func:`tail_bound_check` but for exact quenched probabilities (zero stderr).

    ``expected_counts`` are ``E[I_t | skeleton]`` at ``times``; the many-to-one
    bound is ``min(1, E[I_t | skeleton] P(B_t > lam t))``.
    """
    times = [float(t) for t in times]
    probs = [float(p) for p in probs]
    bound = [min(1.0, m * float(ndtr(-lam * math.sqrt(t)))) for m, t in zip(expected_counts, times)]
    expb = [math.exp((c_d + eps) * t - 0.5 * lam * lam * t) for t in times]
    # grid error of the dual solve is well under 1e-3
    respected = all(p <= b + 1e-3 for p, b in zip(probs, bound))
    return TailReport(
        lam, times, probs, [0.0] * len(times), bound, expb, bool(respected), direction,
        trend(probs[-last:], direction),
    )
