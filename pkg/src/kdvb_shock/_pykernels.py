"""Pure numpy/scipy versions of the compiled kernels in ``_ckernels``."""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


def stencil_apply(v, coeffs, out):
    r = len(coeffs) // 2
    padded = np.concatenate([np.zeros(r), v, np.zeros(r)])
    out[:] = np.correlate(padded, coeffs, mode="valid")
    return out


def banded_factor(ab, r):
    # returns a SuperLU handle instead of overwriting ab
    n = ab.shape[1]
    diags = []
    offsets = []
    for off in range(-r, r + 1):
        row = ab[r - off]
        if off >= 0:
            diags.append(row[off:])
        else:
            diags.append(row[: n + off])
        offsets.append(off)
    mat = sp.diags(diags, offsets, shape=(n, n), format="csc")
    return splu(mat, permc_spec="NATURAL")


def banded_solve(lu, r, b, x):
    x[:] = lu.solve(np.asarray(b))
    return x


def trig_series(a, kappa, x, deriv, out):
    k = np.arange(len(a))
    mult = (1j * k * kappa) ** deriv
    coef = a * mult
    phase = np.exp(1j * kappa * np.outer(x, k[1:]))
    vals = 2.0 * (phase @ coef[1:]).real
    if deriv == 0:
        vals += a[0].real
    out[:] = vals
    return out


def cumulative_trapezoid(y, h, out):
    out[0] = 0.0
    out[1:] = np.cumsum(0.5 * h * (y[:-1] + y[1:]))
    return out
