"""Seedable counter-based random streams and the large-jump skeleton."""
from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .measure import SplitMeasure

SEED_ENV = "KPP_SEED"
_MASK64 = (1 << 64) - 1


def _tag_to_int(tag: str) -> int:
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class StreamKey:
    """A master seed plus a path of ``(purpose, index)`` lanes.

    Forking appends to the path, so distinct fork sequences never collide and
    the stream of a replica does not depend on when it is evaluated.
    """

    master_seed: int
    lane: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not (0 <= int(self.master_seed) <= _MASK64):
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def fork(self, purpose: str, index: int = 0) -> "StreamKey":
        return StreamKey(self.master_seed, self.lane + ((str(purpose), int(index)),))

    def _entropy_words(self) -> list[int]:
        words = []
        for tag, idx in self.lane:
            words.append(_tag_to_int(tag))
            if idx < 0:
                raise ValueError("lane index must be >= 0")
            words.append(idx & _MASK64)
            words.append(idx >> 64)
        return words

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=tuple(self._entropy_words()))
        return np.random.Generator(np.random.Philox(ss))


def fork(key: StreamKey, purpose: str, index: int = 0) -> StreamKey:
    return key.fork(purpose, index)


def resolve_seed(flag: int | None = None, config: int | None = None, default: int = 0) -> int:
    """Seed precedence: explicit flag, then ``KPP_SEED``, then config, then default."""
    if flag is not None:
        return int(flag)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        return int(env, 0)
    if config is not None:
        return int(config)
    return default


@dataclass(frozen=True)
class Skeleton:
    """Ordered large-jump points ``(t_j, y_j)`` on ``(0, horizon]``."""

    horizon: float
    times: tuple[float, ...]
    marks: tuple[float, ...]
    delta: float

    def __post_init__(self):
        if len(self.times) != len(self.marks):
            raise ValueError("times and marks differ in length")
        t = np.asarray(self.times, dtype=float)
        if t.size:
            if t[0] <= 0 or t[-1] > self.horizon:
                raise ValueError("skeleton times must lie in (0, horizon]")
            if np.any(np.diff(t) <= 0):
                raise ValueError("skeleton times must be strictly increasing")
        for y in self.marks:
            if not (self.delta < y <= 1.0):
                raise ValueError(f"mark {y} outside (delta, 1]")

    @classmethod
    def empty(cls, horizon: float, delta: float) -> "Skeleton":
        return cls(float(horizon), (), (), float(delta))

    def __len__(self) -> int:
        return len(self.times)

    def points(self, t_max: float | None = None):
        for t, y in zip(self.times, self.marks):
            if t_max is not None and t > t_max:
                break
            yield t, y

    def reversed(self, t: float) -> "Skeleton":
        """The skeleton seen by the dual started at time ``t``: points ``t - t_j``."""
        pts = [(t - tj, y) for tj, y in zip(self.times, self.marks) if tj < t]
        pts.reverse()
        return Skeleton(
            float(t), tuple(p[0] for p in pts), tuple(p[1] for p in pts), self.delta
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "y"])
        for t, y in zip(self.times, self.marks):
            w.writerow([f"{t:.17g}", f"{y:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, horizon: float, delta: float) -> "Skeleton":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls(
            float(horizon),
            tuple(float(r["t"]) for r in rows),
            tuple(float(r["y"]) for r in rows),
            float(delta),
        )


def sample_marked_poisson(
    atoms, T: float, rng: np.random.Generator, t0: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Points of a Poisson process on ``(t0, t0 + T]`` with mark law ``w/y`` over atoms."""
    atoms = list(atoms)
    if not atoms or T <= 0:
        return np.empty(0), np.empty(0)
    ys = np.array([y for y, _ in atoms])
    rates = np.array([w / y for y, w in atoms])
    lam = math.fsum(rates)
    times = []
    t = t0
    # exponential interarrivals, drawn in blocks
    block = max(16, int(lam * T * 1.1) + 16)
    while True:
        gaps = rng.exponential(1.0 / lam, size=block)
        cum = t + np.cumsum(gaps)
        keep = cum[cum <= t0 + T]
        times.append(keep)
        if keep.size < block:
            break
        t = cum[-1]
    times = np.concatenate(times)
    if len(ys) == 1:
        marks = np.full(times.size, ys[0])
    else:
        marks = ys[rng.choice(len(ys), size=times.size, p=rates / lam)]
    return times, marks


def sample_skeleton(split: SplitMeasure, T: float, key: StreamKey) -> Skeleton:
    if T <= 0:
        raise ValueError("horizon must be > 0")
    rng = key.generator()
    times, marks = sample_marked_poisson(split.plus, T, rng)
    return Skeleton(float(T), tuple(times.tolist()), tuple(marks.tolist()), split.delta)


def skeleton_log_sum(S: Skeleton, t: float, eps: float = 0.0) -> float:
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return math.fsum(math.log1p(y + eps) for _, y in S.points(t))
