"""Exponential-rate fits for decaying time series.

Dispersion makes most of the monitored quantities oscillate while they
decay, so fits are made on the upper envelope max_{tau >= t} |y(tau)|
rather than on the raw samples.
"""
from dataclasses import dataclass

import numpy as np


class InsufficientDecayError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    rate: float
    amplitude: float
    t_start: float
    t_end: float
    residual: float
    npoints: int

    def predict(self, t):
        return self.amplitude * np.exp(-self.rate * np.asarray(t))


def upper_envelope(y):
    a = np.abs(np.asarray(y, dtype=float))
    return np.maximum.accumulate(a[::-1])[::-1]


def fit_decay(t, y, floor=0.0, window="tail-half", min_efolds=1.0,
              max_residual=0.5, envelope=True):
    """Least-squares slope of log|y| against t.

    Only samples above ``floor`` are used; of those, ``window`` selects the
    tail half (default) or all of them.  Raises InsufficientDecayError when
    fewer than one e-folding (``min_efolds``) is available or the fit
    residual (rms of the log misfit) exceeds ``max_residual``.
    """
    t = np.asarray(t, dtype=float)
    a = upper_envelope(y) if envelope else np.abs(np.asarray(y, dtype=float))
    keep = a > floor
    if keep.sum() < 4:
        raise InsufficientDecayError("fewer than 4 samples above the noise floor")
    idx = np.flatnonzero(keep)
    # contiguous leading block above the floor
    stop = idx[0]
    while stop + 1 < len(a) and keep[stop + 1]:
        stop += 1
    t_use = t[idx[0]:stop + 1]
    a_use = a[idx[0]:stop + 1]
    if window == "tail-half":
        mid = t_use[0] + 0.5 * (t_use[-1] - t_use[0])
        sel = t_use >= mid
        t_use, a_use = t_use[sel], a_use[sel]
    if len(t_use) < 4:
        raise InsufficientDecayError("fit window too short")
    logs = np.log(a_use)
    if logs[0] - logs[-1] < min_efolds:
        raise InsufficientDecayError(
            f"only {logs[0] - logs[-1]:.3g} e-foldings of decay in the fit window")
    slope, icpt = np.polyfit(t_use, logs, 1)
    resid = float(np.sqrt(np.mean((logs - (slope * t_use + icpt)) ** 2)))
    if resid > max_residual:
        raise InsufficientDecayError(f"fit residual {resid:.3g} exceeds {max_residual}")
    return DecayFit(rate=float(-slope), amplitude=float(np.exp(icpt)),
                    t_start=float(t_use[0]), t_end=float(t_use[-1]),
                    residual=resid, npoints=len(t_use))
