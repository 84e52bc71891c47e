"""Backend selection for the hot loops.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy fallback in ``_pykernels``.  Set ``KDVB_SHOCK_BACKEND=python`` to force
the fallback (the benchmark and the backend-parity tests do this per call via
:func:`get_backend`).
"""
import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["compiled"] = _ckernels


def get_backend(name=None):
    if name is None:
        name = os.environ.get("KDVB_SHOCK_BACKEND", "compiled")
    if name not in _BACKENDS:
        if name == "compiled":
            name = "python"
        else:
            raise ValueError(f"unknown backend {name!r}; have {sorted(_BACKENDS)}")
    return name, _BACKENDS[name]


BACKEND_NAME, _impl = get_backend()


def available_backends():
    return sorted(_BACKENDS)


def stencil_apply(v, coeffs, out=None, backend=None):
    impl = _impl if backend is None else get_backend(backend)[1]
    v = np.ascontiguousarray(v, dtype=float)
    if out is None:
        out = np.empty_like(v)
    return impl.stencil_apply(v, np.ascontiguousarray(coeffs, dtype=float), out)


def trig_series(a, kappa, x, deriv=0, out=None, backend=None):
    impl = _impl if backend is None else get_backend(backend)[1]
    x = np.ascontiguousarray(x, dtype=float)
    if out is None:
        out = np.empty_like(x)
    return impl.trig_series(np.ascontiguousarray(a, dtype=complex), float(kappa), x, int(deriv), out)


def cumulative_trapezoid(y, h, out=None, backend=None):
    impl = _impl if backend is None else get_backend(backend)[1]
    y = np.ascontiguousarray(y, dtype=float)
    if out is None:
        out = np.empty_like(y)
    return impl.cumulative_trapezoid(y, float(h), out)


class BandedSolver:
    """Factor a banded matrix once and solve repeatedly.

    ``ab`` uses the LAPACK band layout with ``r`` sub- and super-diagonals.
    No pivoting: callers only pass matrices with positive definite
    symmetric part (I - tau * L for a dissipative L).
    """

    def __init__(self, ab, r, backend=None):
        self.backend, self._impl = get_backend(backend)
        self.r = int(r)
        self.n = ab.shape[1]
        work = np.ascontiguousarray(ab, dtype=float).copy()
        self._lu = self._impl.banded_factor(work, self.r)

    def solve(self, b, out=None):
        b = np.ascontiguousarray(b, dtype=float)
        if out is None:
            out = np.empty_like(b)
        return self._impl.banded_solve(self._lu, self.r, b, out)
