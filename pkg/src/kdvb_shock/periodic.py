"""Periodic far-field solutions on one period cell.

Solves u_t = s u_xi - f(u)_xi + gamma u_xixi - mu u_xixixi pseudo-spectrally.
The linear part is diagonal in Fourier space and is advanced exactly by the
ETDRK4 exponential integrator; the flux is evaluated on a zero-padded grid
and truncated back, so polynomial fluxes are free of aliasing.

Coefficients are stored as a_k = rfft(u)_k / M, so that
u(xi) = a_0 + 2 Re sum_{k>=1} a_k exp(i k kappa xi) with kappa = 2 pi / p.
"""
import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from . import kernels
from .fitting import InsufficientDecayError, fit_decay


class BlowUpError(RuntimeError):
    pass


class TailFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class PeriodicField:
    period: float
    coeffs: np.ndarray  # length M//2 + 1, Nyquist entry zero
    t: float = 0.0

    @property
    def M(self):
        return 2 * (len(self.coeffs) - 1)

    @property
    def kappa(self):
        return 2 * math.pi / self.period

    @property
    def mean(self):
        return float(self.coeffs[0].real)

    @property
    def nodes(self):
        return np.arange(self.M) * (self.period / self.M)

    @classmethod
    def from_values(cls, values, period, t=0.0):
        values = np.asarray(values, dtype=float)
        if values.shape[0] % 2:
            raise ValueError("use an even number of cell nodes")
        a = np.fft.rfft(values) / values.shape[0]
        a[-1] = 0.0
        return cls(float(period), a, float(t))

    @classmethod
    def from_function(cls, fn, period, M, t=0.0):
        x = np.arange(M) * (period / M)
        return cls.from_values(fn(x), period, t)

    def values(self, deriv=0, M=None):
        M = self.M if M is None else M
        a = self.coeffs
        if deriv:
            a = a * (1j * self.kappa * np.arange(len(a))) ** deriv
        return resample(a, M)

    def evaluate(self, x, deriv=0):
        """Exact Fourier evaluation at arbitrary points of the line."""
        return kernels.trig_series(self.coeffs[:-1], self.kappa, x, deriv)

    def flux_coeffs(self, flux, pad=4):
        """Coefficients of f(u) computed on a grid ``pad`` times finer."""
        Mp = pad * self.M
        return truncate(np.fft.rfft(flux.eval(resample(self.coeffs, Mp))) / Mp, len(self.coeffs))

    def deviation_norms(self):
        """L2, Linf and H1 norms of u - mean over the cell."""
        w = self.values()
        w = w - self.mean
        dw = self.values(deriv=1)
        h = self.period / self.M
        l2 = math.sqrt(h * float(np.sum(w * w)))
        h1 = math.sqrt(l2 ** 2 + h * float(np.sum(dw * dw)))
        return l2, float(np.max(np.abs(w))), h1


def resample(a, M):
    """Grid values on M nodes from coefficients a (any length)."""
    K = M // 2 + 1
    full = np.zeros(K, dtype=complex)
    n = min(K, len(a))
    full[:n] = a[:n]
    if n == K:
        full[-1] = 0.0
    return np.fft.irfft(full * M, n=M)


def truncate(a, K):
    out = np.zeros(K, dtype=complex)
    n = min(K, len(a))
    out[:n] = a[:n]
    out[-1] = 0.0
    return out


def linear_symbol(q, s, mu, gamma):
    """Fourier symbol of s d + gamma d^2 - mu d^3 at wavenumber q."""
    return 1j * s * q - gamma * q ** 2 + 1j * mu * q ** 3


class _ETDRK4:
    """One ETDRK4 step of fixed size for v' = L v + N(v), L diagonal."""

    def __init__(self, lin, dt, nonlin, contour=64):
        self.dt = dt
        self.nonlin = nonlin
        # full circle: the symbol is complex, so no conjugate symmetry to exploit
        r = np.exp(2j * np.pi * (np.arange(1, contour + 1) - 0.5) / contour)
        LR = dt * lin[:, None] + r[None, :]
        self.E = np.exp(dt * lin)
        self.E2 = np.exp(dt * lin / 2)
        eLR = np.exp(LR)
        self.Q = dt * np.mean((np.exp(LR / 2) - 1) / LR, axis=1)
        self.f1 = dt * np.mean((-4 - LR + eLR * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1)
        self.f2 = dt * np.mean((2 + LR + eLR * (-2 + LR)) / LR ** 3, axis=1)
        self.f3 = dt * np.mean((-4 - 3 * LR - LR ** 2 + eLR * (4 - LR)) / LR ** 3, axis=1)

    def step(self, v):
        N = self.nonlin
        Nv = N(v)
        a = self.E2 * v + self.Q * Nv
        Na = N(a)
        b = self.E2 * v + self.Q * Na
        Nb = N(b)
        c = self.E2 * a + self.Q * (2 * Nb - Nv)
        Nc = N(c)
        return self.E * v + Nv * self.f1 + 2 * (Na + Nb) * self.f2 + Nc * self.f3


class PeriodicSolver:
    """Owns the mutable stepping state for one cell."""

    def __init__(self, flux, mu, gamma, s, period, M, dt, pad=None):
        if M % 2:
            raise ValueError("M must be even")
        self.flux, self.mu, self.gamma, self.s = flux, mu, gamma, s
        self.period, self.M, self.dt = float(period), int(M), float(dt)
        self.K = M // 2 + 1
        if pad is None:
            # exact product for polynomial fluxes of this degree
            pad = max(1.5, (flux.degree + 1) / 2)
        self.Mp = 2 * int(math.ceil(pad * M / 2))
        self.q = (2 * math.pi / period) * np.arange(self.K)
        self.lin = linear_symbol(self.q, s, mu, gamma)
        self._steppers = {}

    def nonlin(self, a):
        u = resample(a, self.Mp)
        fa = truncate(np.fft.rfft(self.flux.eval(u)) / self.Mp, self.K)
        return -1j * self.q * fa

    def stepper(self, dt):
        key = round(dt, 14)
        st = self._steppers.get(key)
        if st is None:
            st = _ETDRK4(self.lin, dt, self.nonlin)
            self._steppers[key] = st
        return st


@dataclass
class PeriodicHistory:
    solver: PeriodicSolver
    times: np.ndarray
    coeffs: np.ndarray  # (n_snap, K)
    norms: np.ndarray = field(default=None)  # (n_snap, 3): L2, Linf, H1 of u - mean

    @property
    def period(self):
        return self.solver.period

    @property
    def mean(self):
        return float(self.coeffs[0, 0].real)

    def __post_init__(self):
        if self.norms is None:
            self.norms = np.array([self.field(i).deviation_norms() for i in range(len(self.times))])

    def field(self, i):
        return PeriodicField(self.period, self.coeffs[i], float(self.times[i]))

    def coeffs_at(self, t):
        """Dense output: a partial ETDRK4 step from the latest snapshot before t."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"t={t} outside history [{times[0]}, {times[-1]}]")
        j = int(np.searchsorted(times, t, side="right")) - 1
        j = min(max(j, 0), len(times) - 1)
        tau = t - times[j]
        if tau <= 1e-13:
            return self.coeffs[j]
        return self.solver.stepper(tau).step(self.coeffs[j])

    def at(self, t):
        return PeriodicField(self.period, self.coeffs_at(t), float(t))

    def mass_drift(self):
        return float(np.max(np.abs(self.coeffs[:, 0].real - self.coeffs[0, 0].real)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean", "l2", "linf", "h1"])
            for t, a, n in zip(self.times, self.coeffs[:, 0].real, self.norms):
                w.writerow([f"{v:.17g}" for v in (t, a, *n)])

    def to_json(self, path):
        sol = self.solver
        doc = {
            "period": sol.period, "M": sol.M, "dt": sol.dt, "mu": sol.mu,
            "gamma": sol.gamma, "s": sol.s, "flux": sol.flux.to_dict(),
            "nodes": self.field(0).nodes.tolist(),
            "times": [float(t) for t in self.times],
            "values": [resample(a, sol.M).tolist() for a in self.coeffs],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)

    @classmethod
    def from_json(cls, path):
        from .flux import flux_from_dict
        with open(path) as fh:
            doc = json.load(fh)
        sol = PeriodicSolver(flux_from_dict(doc["flux"]), doc["mu"], doc["gamma"], doc["s"],
                             doc["period"], doc["M"], doc["dt"])
        coeffs = np.array([PeriodicField.from_values(v, sol.period).coeffs for v in doc["values"]])
        return cls(sol, np.array(doc["times"]), coeffs)


def solve_periodic(flux, mu, gamma, s, period, w0, mean, T, dt, dt_out=None, blowup_factor=10.0):
    """Evolve u = mean + w0 on one cell up to T; w0 holds M cell samples."""
    w0 = np.asarray(w0, dtype=float)
    M = w0.shape[0]
    if abs(float(np.mean(w0))) > 1e-13 * max(1.0, float(np.max(np.abs(w0)))):
        raise ValueError(f"perturbation has nonzero cell mean {np.mean(w0):.3g}")
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a positive multiple of dt")
    dt_out = dt if dt_out is None else dt_out
    every = max(1, int(round(dt_out / dt)))
    solver = PeriodicSolver(flux, mu, gamma, s, period, M, dt)
    a = PeriodicField.from_values(mean + w0, period).coeffs
    a[0] = mean
    limit = blowup_factor * (abs(mean) + float(np.max(np.abs(w0))))
    step = solver.stepper(dt)
    times, snaps = [0.0], [a.copy()]
    for n in range(1, nsteps + 1):
        a = step.step(a)
        if n % every == 0 or n == nsteps:
            umax = float(np.max(np.abs(resample(a, M))))
            if not np.isfinite(umax) or (limit > 0 and umax > limit):
                raise BlowUpError(f"|u| = {umax:.3g} exceeds {limit:.3g} at t = {n * dt:g}")
            times.append(n * dt)
            snaps.append(a.copy())
    return PeriodicHistory(solver, np.array(times), np.array(snaps))


@dataclass(frozen=True)
class DecayMeasurement:
    order: int
    theta_meas: float
    theta_linear: float
    theta_poincare_sq: float
    theta_poincare_norm: float
    fit: object

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "fit"}
        d["fit_window"] = [self.fit.t_start, self.fit.t_end]
        d["fit_residual"] = self.fit.residual
        return d


def measure_decay(history, k=0, floor=None):
    """Exponential rate of ||d^k (u - mean)||_inf over the tail half of the history.

    Also returns the linear rate of the slowest excited mode and the
    Poincare reference rates for the squared norm (2 gamma kappa^2) and the
    norm itself (gamma kappa^2).
    """
    if k not in (0, 1, 2):
        raise ValueError("derivative order must be 0, 1 or 2")
    sol = history.solver
    series = []
    for a in history.coeffs:
        d = a.copy()
        d[0] = 0.0
        if k:
            d = d * (1j * sol.q) ** k
        series.append(np.max(np.abs(resample(d, sol.M))))
    series = np.array(series)
    if floor is None:
        floor = 1e-12 * (abs(history.mean) + 1.0) * max(1.0, (sol.q[-1]) ** k)
    if not np.any(series > floor):
        raise InsufficientDecayError("perturbation is zero; nothing to fit")
    fit = fit_decay(history.times, series, floor=floor)
    kappa = 2 * math.pi / sol.period
    excited = np.flatnonzero(np.abs(history.coeffs[0, 1:]) > 1e-14 * (abs(history.mean) + 1.0))
    k1 = int(excited[0]) + 1 if len(excited) else 1
    return DecayMeasurement(
        order=k, theta_meas=fit.rate,
        theta_linear=sol.gamma * (k1 * kappa) ** 2,
        theta_poincare_sq=2 * sol.gamma * kappa ** 2,
        theta_poincare_norm=sol.gamma * kappa ** 2,
        fit=fit,
    )


def spatial_defect(coeffs, period):
    """(1/p) int_0^p int_0^xi w(y) dy dxi for the zero-mean part of the coefficients."""
    kq = (2 * math.pi / period) * np.arange(1, len(coeffs) - 1)
    return float(-2.0 * np.sum((coeffs[1:-1] / (1j * kq)).real))


def defect_series(history, flux, s, mean=None):
    """Cell average of f(u) - f(mean) - s (u - mean) at every snapshot."""
    sol = history.solver
    mean = history.mean if mean is None else mean
    out = np.empty(len(history.times))
    fbar = float(flux.eval(mean))
    for i, a in enumerate(history.coeffs):
        u = resample(a, sol.Mp)
        out[i] = float(np.mean(flux.eval(u))) - fbar - s * (a[0].real - mean)
    return out


@dataclass(frozen=True)
class DefectIntegrals:
    I_t: float
    I_s: float
    tail: float
    tail_rate: float

    def to_dict(self):
        return dict(self.__dict__)


def flux_defect_integrals(history, flux, s, mean=None, tail_tol=1e-10):
    """Time integral of the cell-averaged flux defect and the spatial double integral."""
    mean = history.mean if mean is None else mean
    c = defect_series(history, flux, s, mean)
    t = history.times
    I_s = spatial_defect(history.coeffs[0], history.period)
    scale = abs(mean) + 1.0
    if np.max(np.abs(c)) <= 1e-15 * scale:
        return DefectIntegrals(0.0, I_s, 0.0, float("nan"))
    body = float(simpson(c, x=t))
    last = abs(c[-1])
    if last <= 1e-15 * scale:
        return DefectIntegrals(body, I_s, 0.0, float("nan"))
    # integrand's last decade
    sel = t >= t[-1] - (t[-1] - t[0]) / 3.0
    try:
        fit = fit_decay(t[sel], c[sel], floor=1e-15 * scale, window="all",
                        min_efolds=0.0, max_residual=0.5)
    except InsufficientDecayError as exc:
        raise TailFitError(f"flux defect not in the exponential regime: {exc}") from exc
    if fit.rate <= 0:
        raise TailFitError("flux defect is not decaying")
    tail = float(np.sign(c[-1]) * fit.amplitude * math.exp(-fit.rate * t[-1]) / fit.rate)
    if abs(tail) > max(tail_tol, 1e-3 * abs(body)):
        raise TailFitError(f"tail estimate {tail:.3g} too large; extend the horizon")
    return DefectIntegrals(body + tail, I_s, tail, fit.rate)
