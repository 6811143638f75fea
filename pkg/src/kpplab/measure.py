"""Reproduction measures and the closed-form rates derived from them.

A measure is ``r0 * delta_0 + sum_i w_i * delta_{y_i}`` on ``[0, 1]``.  The
atom at zero is the continuous (logistic) selection rate; an atom at ``y > 0``
fires jumps of impact ``y`` at rate ``w / y``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class MeasureError(ValueError):
    """Invalid measure or parameter."""


def _log1p_over(y: float, eps: float = 0.0) -> float:
    # log(1 + y + eps) / y with the y -> 0 convention (value 1 at eps = 0)
    if y == 0.0:
        return 1.0
    return math.log1p(y + eps) / y


@dataclass(frozen=True)
class ReproductionMeasure:
    r0: float = 0.0
    atoms: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        r0 = float(self.r0)
        if not math.isfinite(r0) or r0 < 0:
            raise MeasureError(f"atom at zero must be finite and >= 0, got {self.r0!r}")
        atoms = tuple((float(y), float(w)) for y, w in self.atoms)
        prev = 0.0
        for y, w in atoms:
            if not (0.0 < y <= 1.0):
                raise MeasureError(f"atom location {y!r} outside (0, 1]")
            if not math.isfinite(w) or w <= 0:
                raise MeasureError(f"atom weight {w!r} must be finite and > 0")
            if y <= prev:
                raise MeasureError("atom locations must be distinct and sorted ascending")
            prev = y
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_atoms(cls, r0: float = 0.0, atoms: Iterable[Sequence[float]] = ()) -> "ReproductionMeasure":
        """Build a measure from unsorted atoms, merging duplicate locations."""
        merged: dict[float, float] = {}
        for y, w in atoms:
            merged[float(y)] = merged.get(float(y), 0.0) + float(w)
        return cls(r0, tuple(sorted(merged.items())))

    def total_mass(self) -> float:
        return self.r0 + math.fsum(w for _, w in self.atoms)

    @property
    def locations(self) -> np.ndarray:
        return np.array([y for y, _ in self.atoms], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms], dtype=float)

    def jump_rate(self) -> float:
        """Total rate ``sum w/y`` of visible jumps (the atom at zero excluded)."""
        return math.fsum(w / y for y, w in self.atoms)

    def is_continuous_only(self) -> bool:
        return not self.atoms

    # literal format: {"r0": float, "atoms": [[y, w], ...]}
    def to_literal(self) -> dict:
        return {"r0": self.r0, "atoms": [[y, w] for y, w in self.atoms]}

    @classmethod
    def from_literal(cls, lit: dict) -> "ReproductionMeasure":
        if not isinstance(lit, dict):
            raise MeasureError("measure literal must be an object")
        unknown = set(lit) - {"r0", "atoms"}
        if unknown:
            raise MeasureError(f"unknown measure fields: {sorted(unknown)}")
        atoms = lit.get("atoms", [])
        for a in atoms:
            if len(a) != 2:
                raise MeasureError(f"atom {a!r} is not a [y, w] pair")
        return cls(float(lit.get("r0", 0.0)), tuple((float(y), float(w)) for y, w in atoms))

    def dumps(self) -> str:
        atoms = ", ".join(f"[{y:.17g}, {w:.17g}]" for y, w in self.atoms)
        return f'{{"r0": {self.r0:.17g}, "atoms": [{atoms}]}}'

    @classmethod
    def loads(cls, text: str) -> "ReproductionMeasure":
        return cls.from_literal(json.loads(text))


@dataclass(frozen=True)
class SplitMeasure:
    """Small-impact part on ``[0, delta]`` and large-impact atoms on ``(delta, 1]``."""

    minus: ReproductionMeasure
    plus: tuple[tuple[float, float], ...]
    delta: float

    def __post_init__(self):
        for y, _ in self.minus.atoms:
            if y > self.delta:
                raise MeasureError(f"minus part has atom {y} > delta={self.delta}")
        for y, w in self.plus:
            if not (self.delta < y <= 1.0) or w <= 0:
                raise MeasureError(f"plus atom ({y}, {w}) outside (delta, 1]")

    def plus_rate(self) -> float:
        return math.fsum(w / y for y, w in self.plus)

    def recombine(self) -> ReproductionMeasure:
        return ReproductionMeasure(self.minus.r0, self.minus.atoms + tuple(self.plus))


def _check_delta(delta: float, allow_zero: bool = False) -> float:
    delta = float(delta)
    lo_ok = delta >= 0.0 if allow_zero else delta > 0.0
    if not (lo_ok and delta <= 1.0):
        interval = "[0, 1]" if allow_zero else "(0, 1]"
        raise MeasureError(f"delta={delta!r} outside {interval}")
    return delta


def split(R: ReproductionMeasure, delta: float) -> SplitMeasure:
    """Split at ``delta``; an atom sitting exactly at ``delta`` goes to the minus side."""
    delta = _check_delta(delta)
    minus = tuple(a for a in R.atoms if a[0] <= delta)
    plus = tuple(a for a in R.atoms if a[0] > delta)
    return SplitMeasure(ReproductionMeasure(R.r0, minus), plus, delta)


def speed_integral(R: ReproductionMeasure) -> float:
    """``int log(1+y)/y R(dy)``, i.e. half the squared wave speed."""
    return R.r0 + math.fsum(w * _log1p_over(y) for y, w in R.atoms)


def wave_speed(R: ReproductionMeasure) -> float:
    """Front speed ``s`` with ``s**2 / 2 = int log(1+y)/y R(dy)``.

    Raises
    ------
    MeasureError
        If the measure has zero mass.
    """
    if R.total_mass() <= 0:
        raise MeasureError("wave speed undefined for the zero measure")
    return math.sqrt(2.0 * speed_integral(R))


def c_delta(R: ReproductionMeasure, delta: float) -> float:
    """Upper bound on the quenched growth rate at truncation ``delta``."""
    sm = split(R, delta)
    return sm.minus.total_mass() + math.fsum(w * _log1p_over(y) for y, w in sm.plus)


def c_delta_lower(R: ReproductionMeasure, delta: float) -> float:
    """Growth rate of the dual with the small atoms (y in (0, delta]) removed."""
    sm = split(R, delta)
    return R.r0 + math.fsum(w * _log1p_over(y) for y, w in sm.plus)


def d_delta_eps(R: ReproductionMeasure, delta: float, eps: float = 0.0) -> float:
    """Mean rate of ``sum log(1 + y_j + eps)`` over the large-jump skeleton."""
    delta = _check_delta(delta)
    if eps < 0:
        raise MeasureError(f"eps={eps!r} must be >= 0")
    return math.fsum(w * _log1p_over(y, eps) for y, w in R.atoms if y > delta)


def annealed_rate(R: ReproductionMeasure) -> float:
    return R.total_mass()


def moment_r(R: ReproductionMeasure, delta: float, p: float) -> float:
    """``int_{(delta, 1]} y**p R(dy)``.

    At ``delta == 0`` the atom at zero is counted with its full weight, so that
    the first moment over the whole measure is the total mass.
    """
    delta = _check_delta(delta, allow_zero=True)
    total = math.fsum(w * y**p for y, w in R.atoms if y > delta)
    if delta == 0.0:
        total += R.r0
    return total


def bernoulli_rate(eps: float, p: float) -> float:
    """Relative entropy of Bernoulli(eps) with respect to Bernoulli(p)."""
    for name, v in (("eps", eps), ("p", p)):
        if not (0.0 < v < 1.0):
            raise MeasureError(f"{name}={v!r} outside (0, 1)")
    return eps * math.log(eps / p) + (1.0 - eps) * math.log((1.0 - eps) / (1.0 - p))


def dirichlet_drift_eigenvalue(lam: float, box: float) -> float:
    """Principal eigenvalue of ``0.5 d2/dx2 + lam d/dx`` on ``(-box, box)``, Dirichlet."""
    if box <= 0:
        raise MeasureError(f"box half-width must be > 0, got {box!r}")
    return -0.5 * lam * lam - math.pi**2 / (8.0 * box * box)


def box_size(lam: float, c_lower: float, eps: float) -> float:
    """Smallest half-width whose principal eigenvalue is at least ``-c_lower + eps``."""
    if eps <= 0:
        raise MeasureError("eps must be > 0")
    gap = c_lower - eps - 0.5 * lam * lam
    if gap <= 0:
        raise MeasureError(
            f"infeasible: lam**2/2 = {0.5 * lam * lam:.6g} >= c_lower - eps = {c_lower - eps:.6g}"
        )
    return math.pi / math.sqrt(8.0 * gap)


def discretize_density(
    density: Callable[[float], float], n_atoms: int, r0: float = 0.0, lo: float = 0.0
) -> ReproductionMeasure:
    """Mass-preserving binning of a density on ``(lo, 1]`` into ``n_atoms`` atoms.

    Each bin's mass is placed at the bin's mass-weighted mean location.
    """
    from scipy.integrate import quad

    if n_atoms < 1:
        raise MeasureError("need at least one atom")
    edges = np.linspace(lo, 1.0, n_atoms + 1)
    atoms = []
    for a, b in zip(edges[:-1], edges[1:]):
        mass = quad(density, a, b)[0]
        if mass <= 0:
            continue
        first = quad(lambda y: y * density(y), a, b)[0]
        atoms.append((min(max(first / mass, np.nextafter(a, 1.0)), b), mass))
    return ReproductionMeasure.from_atoms(r0, atoms)


@dataclass
class FormulaTable:
    """All closed forms for one measure and truncation level."""

    measure: ReproductionMeasure
    delta: float
    eps: float = 0.0
    p: float = 1.0
    lam: float = 0.0
    box: float = 1.0
    box_eps: float = 0.01
    rows: dict = field(default_factory=dict)

    def compute(self) -> dict:
        R, d = self.measure, self.delta
        rows = {
            # zero measure gives speed 0 here rather than an error
            "wave_speed": math.sqrt(2.0 * speed_integral(R)),
            "half_speed_sq": speed_integral(R),
            "annealed_rate": annealed_rate(R),
            "c_delta": c_delta(R, d),
            "c_delta_lower": c_delta_lower(R, d),
            "d_delta_eps": d_delta_eps(R, d, self.eps),
            "moment_r": moment_r(R, d, self.p),
            "dirichlet_eigenvalue": dirichlet_drift_eigenvalue(self.lam, self.box),
        }
        try:
            rows["box_size"] = box_size(self.lam, rows["c_delta_lower"], self.box_eps)
        except MeasureError:
            rows["box_size"] = math.inf
        self.rows = rows
        return rows
