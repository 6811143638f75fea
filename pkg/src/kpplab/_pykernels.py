"""NumPy/LAPACK versions of the grid kernels; same contract as ``_ckernels``."""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import lapack


class _CN:
    def __init__(self, rho: float, m: int):
        self.rho = rho
        dl = np.full(m - 1, -rho)
        d = np.full(m, 1.0 + 2.0 * rho)
        du = np.full(m - 1, -rho)
        self.lu = lapack.dgttrf(dl, d, du)[:5]
        self.d = np.empty(m)

    def step(self, u: np.ndarray, left: float, right: float) -> None:
        # increment form: constant states are reproduced exactly
        u[0] = left
        u[-1] = right
        d = self.d
        np.subtract(u[:-2] + u[2:], 2.0 * u[1:-1], out=d)
        d *= 2.0 * self.rho
        x, info = lapack.dgttrs(*self.lu, d)
        u[1:-1] += x


def _logistic(u: np.ndarray, g: float) -> None:
    u[:] = u * g / (1.0 + u * (g - 1.0))


def heat_cn(u, h, dx, nsteps, left, right):
    n = u.shape[0]
    if n < 3 or nsteps <= 0:
        return
    cn = _CN(h / (4.0 * dx * dx), n - 2)
    for _ in range(nsteps):
        cn.step(u, left, right)


def strang_fkpp(u, h, dx, nsteps, r, left, right):
    n = u.shape[0]
    if n < 3 or nsteps <= 0:
        return
    half = _CN(h / (8.0 * dx * dx), n - 2)
    full = _CN(h / (4.0 * dx * dx), n - 2)
    g = math.exp(r * h)
    half.step(u, left, right)
    for _ in range(nsteps - 1):
        _logistic(u, g)
        full.step(u, left, right)
    _logistic(u, g)
    half.step(u, left, right)
