"""Kernel backend selection.

The compiled extension is used when it imports; ``KPP_BACKEND=python`` forces
the NumPy fallback.  ``use_backend`` switches at runtime (benchmarks, tests).
"""
from __future__ import annotations

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _default() -> str:
    requested = os.environ.get("KPP_BACKEND", "").strip().lower()
    if requested:
        if requested not in _BACKENDS:
            raise ImportError(f"KPP_BACKEND={requested!r} not available; have {available_backends()}")
        return requested
    return "compiled" if _ckernels is not None else "python"


BACKEND = _default()
_impl = _BACKENDS[BACKEND]


def use_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}")
    BACKEND = name
    _impl = _BACKENDS[name]


def heat_cn(u, h, dx, nsteps, left, right):
    _impl.heat_cn(u, float(h), float(dx), int(nsteps), float(left), float(right))


def strang_fkpp(u, h, dx, nsteps, r, left, right):
    _impl.strang_fkpp(u, float(h), float(dx), int(nsteps), float(r), float(left), float(right))
