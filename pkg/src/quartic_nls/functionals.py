"""Multilinear functionals of the gauged flow.

Hyperplane sums over Gamma(n) are enumerated tuple by tuple.  Time integrals
use composite Simpson on the sampling grid.  Modulation integrals (the tau
variable) exploit band limitation: a signal windowed by eta_delta has a
squared transform whose lag support is [-4 delta, 4 delta], so replacing the
modulation weight by its low-pass part on |xi| <= 4 delta changes nothing,
and after that substitution the trapezoid rule with spacing below
2 pi / (12 delta) is exact up to the 1e-10 truncation of eta_hat.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft as sfft
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve

from . import _kernels
from .dynamics import TrajectoryRecord, _phase_intensities, quartic
from .randomness import GaussianEnsemble, derive_trajectory_seed, gaussian_modes, smooth_step
from .spectral import (SpectralField, gamma_arrays, japanese, minimal_grid, modes,
                       phase_phi_array)


class QuadratureError(RuntimeError):
    """A quadrature could not meet its stated tolerance."""


# ---------------------------------------------------------------- hyperplane tables

@dataclass(frozen=True, eq=False)
class GammaTable:
    """All tuples of Gamma(n), |n| <= box, with every frequency inside the box."""

    box: int
    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray
    n: np.ndarray
    phi: np.ndarray

    def index(self, k: np.ndarray) -> np.ndarray:
        return k + self.box

    def __len__(self) -> int:
        return self.n.size


@lru_cache(maxsize=16)
def gamma_table(box: int) -> GammaTable:
    parts = [gamma_arrays(n, box) for n in range(-box, box + 1)]
    n1 = np.concatenate([p[0] for p in parts])
    n2 = np.concatenate([p[1] for p in parts])
    n3 = np.concatenate([p[2] for p in parts])
    n = n1 - n2 + n3
    phi = phase_phi_array(n1, n2, n3).astype(np.float64)
    for a in (n1, n2, n3, n, phi):
        a.setflags(write=False)
    return GammaTable(box, n1, n2, n3, n, phi)


def _gamma_sum(U: np.ndarray, box: int) -> np.ndarray:
    """sum_{Gamma(n)} U(n1) conj U(n2) U(n3) for each row of U."""
    tab = gamma_table(box)
    U = np.ascontiguousarray(np.atleast_2d(U), dtype=np.complex128)
    out = np.empty_like(U)
    _kernels.gamma_products(U, tab.index(tab.n1), tab.index(tab.n2), tab.index(tab.n3),
                            tab.index(tab.n), out)
    return out


# ---------------------------------------------------------------- nonlinearities

def nonlin_split(u: SpectralField) -> tuple[SpectralField, SpectralField]:
    """Non-resonant part (sum over Gamma(n)) and resonant part -|u_n|^2 u_n."""
    c = u.coeffs
    n1 = _gamma_sum(c, u.cutoff)[0]
    return SpectralField(u.cutoff, n1), SpectralField(u.cutoff, -(c.real**2 + c.imag**2) * c)


@dataclass(frozen=True, eq=False)
class RandomPhaseSpec:
    """Intensities |g_n^N|^2 behind the random phase Psi and the random gauge.

    ``cutoff`` is the truncation N of g^N (``None``: no truncation);
    ``sign`` selects the shift +-|g_n^N|^2 in the random modulation weight.
    """

    ensemble: GaussianEnsemble
    cutoff: int | None = None
    sign: int = 1

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.cutoff is not None and self.cutoff < 0:
            raise ValueError("phase cutoff must be non-negative")

    @classmethod
    def zero(cls, N: int) -> "RandomPhaseSpec":
        return cls(GaussianEnsemble.injected(np.zeros(2 * N + 1)))

    def intensities(self, N: int) -> np.ndarray:
        """|g_n^cutoff|^2 on modes |n| <= N; raises if the ensemble is too short."""
        return _phase_intensities(self.ensemble, N, self.cutoff)

    def psi(self, n1: int, n2: int, n3: int) -> float:
        n = n1 - n2 + n3
        M = max(abs(n1), abs(n2), abs(n3), abs(n))
        g = self.intensities(M)
        return float(g[n1 + M] - g[n2 + M] + g[n3 + M] - g[n + M])


def gauged_nonlin(w: SpectralField, t: float, phases: RandomPhaseSpec,
                  method: str = "enumerate") -> tuple[SpectralField, SpectralField]:
    """Gauged non-resonant and resonant nonlinearities at time t.

    ``enumerate`` sums exp(i t Psi) w1 conj(w2) w3 over Gamma(n); ``fft``
    ungauges, applies the dealiased product and subtracts the resonant terms.
    """
    N = w.cutoff
    gsq = phases.intensities(N)
    c = w.coeffs
    ph = np.exp(1j * t * gsq)
    u = c * ph
    if method == "enumerate":
        n1 = _gamma_sum(u, N)[0]
    elif method == "fft":
        from .spectral import cubic_coeffs
        mass = np.sum(u.real**2 + u.imag**2)
        n1 = cubic_coeffs(u, u, u) - 2 * mass * u + np.abs(u) ** 2 * u
    else:
        raise ValueError(f"unknown method {method!r}")
    n2 = -((c.real**2 + c.imag**2) - gsq) * c
    return SpectralField(N, n1 * np.conj(ph)), SpectralField(N, n2)


# ---------------------------------------------------------------- space-time fields

@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Fourier coefficients values[j, n + N] of a field at uniform times[j]."""

    cutoff: int
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        v = np.array(self.values, dtype=np.complex128)
        if v.shape != (t.size, 2 * self.cutoff + 1):
            raise ValueError(f"values have shape {v.shape}, expected {(t.size, 2 * self.cutoff + 1)}")
        if t.size >= 2:
            d = np.diff(t)
            if not np.all(d > 0) or np.max(np.abs(d - d[0])) > 1e-9 * d[0] + 1e-15:
                raise ValueError("time grid must be uniform and increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_record(cls, rec: TrajectoryRecord) -> "SpaceTimeField":
        return cls(rec.cutoff, rec.times, rec.states)

    @classmethod
    def linear(cls, f: SpectralField, times) -> "SpaceTimeField":
        """The free evolution e^{-i n^4 t} f_n sampled at ``times``."""
        times = np.asarray(times, dtype=float)
        return cls(f.cutoff, times, np.exp(-1j * np.outer(times, quartic(f.cutoff))) * f.coeffs)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def at(self, j: int) -> SpectralField:
        return SpectralField(self.cutoff, self.values[j])

    def time_index(self, t: float) -> int:
        j = int(round((t - self.times[0]) / self.step)) if self.times.size > 1 else 0
        if not 0 <= j < self.times.size or abs(self.times[j] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t = {t} is not a sampling time of this field")
        return j

    def interaction(self) -> np.ndarray:
        """e^{i n^4 t} w_n(t): removes the free rotation."""
        return self.values * np.exp(1j * np.outer(self.times, quartic(self.cutoff)))


def _require_start(w: SpaceTimeField):
    if w.times.size < 3:
        raise QuadratureError("need at least three time samples")
    if abs(w.times[0]) > 1e-12:
        raise ValueError("time integrals start at t = 0; the field must start there")


def _simpson(y: np.ndarray, h: float) -> np.ndarray:
    if np.iscomplexobj(y):
        return (cumulative_simpson(y.real, dx=h, axis=0, initial=0)
                + 1j * cumulative_simpson(y.imag, dx=h, axis=0, initial=0))
    return cumulative_simpson(y, dx=h, axis=0, initial=0)


def _cumulative(y: np.ndarray, h: float, tol: float | None, what: str) -> np.ndarray:
    """Cumulative Simpson along axis 0 with a step-doubling error check."""
    out = _simpson(y, h)
    if tol is not None:
        T = y.shape[0]
        if T < 5:
            raise QuadratureError(f"{what}: too few samples for an error estimate")
        coarse = _simpson(y[::2], 2 * h)
        est = float(np.max(np.abs(out[::2] - coarse))) / 15.0
        if not est <= tol:
            raise QuadratureError(f"{what}: estimated quadrature error {est:.3g} exceeds {tol:.3g}; "
                                  "sample the trajectory more densely")
    return out


def gauged_n1_series(w: SpaceTimeField, phases: RandomPhaseSpec) -> np.ndarray:
    """N1^omega(w)(t_j) for every sample, shape (T, 2N+1)."""
    gsq = phases.intensities(w.cutoff)
    ph = np.exp(1j * np.outer(w.times, gsq))
    return _gamma_sum(w.values * ph, w.cutoff) * np.conj(ph)


def energy_density(w: SpaceTimeField, phases: RandomPhaseSpec) -> np.ndarray:
    """-2 Re(i N1^omega_n conj(w_n)) at every sample (the time derivative of |w_n|^2)."""
    return 2.0 * np.imag(gauged_n1_series(w, phases) * np.conj(w.values))


def energy_increments(w: SpaceTimeField, phases: RandomPhaseSpec, tol: float | None = None) -> np.ndarray:
    """E_n(t_j) for every mode and sample, shape (T, 2N+1)."""
    _require_start(w)
    return _cumulative(energy_density(w, phases), w.step, tol, "energy increment")


def energy_increment(w: SpaceTimeField, n: int, t: float, phases: RandomPhaseSpec,
                     tol: float | None = None) -> float:
    if abs(n) > w.cutoff:
        raise ValueError(f"mode {n} outside the field cutoff {w.cutoff}")
    j = w.time_index(t)
    if j == 0:
        return 0.0
    return float(energy_increments(w, phases, tol)[j, n + w.cutoff])


def cancellation_violation(w: SpaceTimeField, phases: RandomPhaseSpec, tol: float | None = None) -> np.ndarray:
    """|w_n(t)|^2 - |g_n^N|^2 - E_n(t) on the grid."""
    gsq = phases.intensities(w.cutoff)
    e = energy_increments(w, phases, tol)
    return np.abs(w.values) ** 2 - gsq - e


def _duhamel(w: SpaceTimeField, integrand: np.ndarray, factor: complex, tol, what) -> np.ndarray:
    # factor * int_0^t S(t - t') F(t') dt'  for the mode-wise integrand F
    om = quartic(w.cutoff)
    rot = np.exp(1j * np.outer(w.times, om))
    acc = _cumulative(rot * integrand, w.step, tol, what)
    return factor * acc * np.conj(rot)


def quintic_duhamel_series(w: SpaceTimeField, phases: RandomPhaseSpec, tol: float | None = None) -> np.ndarray:
    """i int_0^t S(t - t') E_n(t') w_n(t') dt' at every sample."""
    _require_start(w)
    e = energy_increments(w, phases, tol)
    return _duhamel(w, e * w.values, 1j, tol, "quintic Duhamel term")


def resonant_duhamel_series(w: SpaceTimeField, phases: RandomPhaseSpec, tol: float | None = None) -> np.ndarray:
    """-i int_0^t S(t - t') N2^omega(w)(t') dt' at every sample."""
    _require_start(w)
    gsq = phases.intensities(w.cutoff)
    n2 = -(np.abs(w.values) ** 2 - gsq) * w.values
    return _duhamel(w, n2, -1j, tol, "resonant Duhamel term")


def quintic_duhamel(w: SpaceTimeField, phases: RandomPhaseSpec, t: float, tol: float | None = None) -> SpectralField:
    j = w.time_index(t)
    if j == 0:
        return SpectralField.zeros(w.cutoff)
    return SpectralField(w.cutoff, quintic_duhamel_series(w, phases, tol)[j])


def resonant_duhamel(w: SpaceTimeField, phases: RandomPhaseSpec, t: float, tol: float | None = None) -> SpectralField:
    j = w.time_index(t)
    if j == 0:
        return SpectralField.zeros(w.cutoff)
    return SpectralField(w.cutoff, resonant_duhamel_series(w, phases, tol)[j])


def gauged_residual(w: SpaceTimeField, phases: RandomPhaseSpec) -> np.ndarray:
    """i d/dt w - n^4 w - N1^omega - N2^omega at interior samples.

    The derivative is a fourth-order central difference of the interaction
    variable e^{i n^4 t} w, which removes the stiff free rotation.
    """
    if w.times.size < 5:
        raise ValueError("need at least five samples")
    h = w.step
    v = w.interaction()
    dv = (-v[4:] + 8 * v[3:-1] - 8 * v[1:-3] + v[:-4]) / (12 * h)
    gsq = phases.intensities(w.cutoff)
    n1 = gauged_n1_series(w, phases)[2:-2]
    n2 = -(np.abs(w.values[2:-2]) ** 2 - gsq) * w.values[2:-2]
    rot = np.exp(1j * np.outer(w.times[2:-2], quartic(w.cutoff)))
    return 1j * dv - rot * (n1 + n2)


# ---------------------------------------------------------------- time cutoff

_GL_NODES = 600
_TABLE_STEP = 1.0 / 128
_TABLE_END = 400.0


def eta(t):
    """Even cutoff: 1 on [-1, 1], 0 outside [-2, 2], smooth in between."""
    return smooth_step(2.0 - np.abs(np.asarray(t, dtype=float)))


@lru_cache(maxsize=1)
def _transition_nodes():
    x, wts = np.polynomial.legendre.leggauss(_GL_NODES)
    t = 1.5 + 0.5 * x
    return t, 0.5 * wts * eta(t)


def eta_hat(sigma) -> np.ndarray:
    """Fourier transform int eta(t) e^{-i sigma t} dt (Gauss-Legendre on the transition)."""
    s = np.asarray(sigma, dtype=float)
    t, wt = _transition_nodes()
    flat = s.ravel()
    out = np.empty(flat.size)
    for i in range(0, flat.size, 8192):
        c = flat[i:i + 8192]
        out[i:i + 8192] = 2.0 * (np.sinc(c / np.pi) + np.cos(np.outer(c, t)) @ wt)
    return out.reshape(s.shape)


def eta_hat_derivative(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    t, wt = _transition_nodes()
    flat = s.ravel()
    out = np.empty(flat.size)
    for i in range(0, flat.size, 8192):
        c = flat[i:i + 8192]
        small = np.abs(c) < 1e-3
        cs = np.where(small, 1.0, c)
        # d/ds (2 sin s / s), Taylor near 0
        core = np.where(small, -2 * c / 3 + c**3 / 15, 2 * (cs * np.cos(cs) - np.sin(cs)) / cs**2)
        out[i:i + 8192] = core - 2.0 * np.sin(np.outer(c, t)) @ (wt * t)
    return out.reshape(s.shape)


@lru_cache(maxsize=1)
def _eta_hat_table():
    s = np.arange(0.0, _TABLE_END + 2 * _TABLE_STEP, _TABLE_STEP)
    tab = eta_hat(s)
    dtab = eta_hat_derivative(s)
    tab.setflags(write=False)
    dtab.setflags(write=False)
    return s, tab, dtab


def _eta_hat_interp(sigma: np.ndarray) -> np.ndarray:
    # vectorized cubic Hermite on the table (even extension)
    s, tab, dtab = _eta_hat_table()
    a = np.abs(np.asarray(sigma, dtype=float))
    x = a / _TABLE_STEP
    k = np.minimum(x.astype(np.int64), tab.size - 2)
    u = x - k
    u2, u3 = u * u, u * u * u
    D = _TABLE_STEP
    val = ((2 * u3 - 3 * u2 + 1) * tab[k] + (u3 - 2 * u2 + u) * dtab[k] * D
           + (3 * u2 - 2 * u3) * tab[k + 1] + (u3 - u2) * dtab[k + 1] * D)
    return np.where(a <= _TABLE_END, val, 0.0)


@lru_cache(maxsize=8)
def transform_cut(floor: float) -> float:
    """Smallest sigma beyond which |eta_hat| < floor * eta_hat(0) on the table."""
    s, tab, _ = _eta_hat_table()
    above = np.nonzero(np.abs(tab) >= floor * tab[0])[0]
    cut = float(s[above[-1]]) + _TABLE_STEP
    if cut > 0.9 * _TABLE_END:
        raise QuadratureError(f"relative floor {floor:g} is below what the eta_hat table resolves")
    return cut


@dataclass(frozen=True, eq=False)
class EtaCutoff:
    """eta_delta(t) = eta(t / delta) and its transform delta * eta_hat(delta tau)."""

    delta: float
    floor: float = 1e-10

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if not 0 < self.floor < 1:
            raise ValueError("floor must lie in (0, 1)")

    def eta(self, t) -> np.ndarray:
        return eta(np.asarray(t, dtype=float) / self.delta)

    def eta_hat(self, tau) -> np.ndarray:
        return self.delta * eta_hat(self.delta * np.asarray(tau, dtype=float))

    @property
    def support(self) -> float:
        """eta_delta vanishes for |t| >= support."""
        return 2.0 * self.delta

    @cached_property
    def cut(self) -> float:
        """Truncation point in sigma = delta * tau."""
        return transform_cut(self.floor)

    @property
    def tau_halfwidth(self) -> float:
        return self.cut / self.delta

    @property
    def tau_spacing(self) -> float:
        """Reference grid spacing, fine against both eta_hat_delta and <tau>."""
        return min(1.0, 1.0 / self.delta) / 8.0

    @property
    def lag_spacing(self) -> float:
        """Largest tau step at which the band-limited trapezoid rule is exact."""
        return 0.95 * 2 * math.pi / (12 * self.delta)

    def tau_grid(self) -> np.ndarray:
        X = self.tau_halfwidth
        k = math.ceil(X / self.tau_spacing)
        return np.arange(-k, k + 1) * self.tau_spacing

    @cached_property
    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """(tau grid, eta_hat_delta on it), cached."""
        tau = self.tau_grid()
        return tau, self.eta_hat(tau)

    def lowpass(self, power: float):
        return _lowpass_weight(self.delta, float(power), self.cut)


class _LowpassWeight:
    """<x>^power with its frequencies restricted to |xi| <= 8 delta, exact on |xi| <= 4 delta.

    Tabulated by an FFT convolution with the transform of eta(xi / 4 delta) and
    splined; far from the origin the low-pass part equals the weight itself.
    """

    STEP = 1.0 / 32

    def __init__(self, delta: float, power: float, cut: float):
        self.power = power
        q = self.STEP
        Y = cut / (4 * delta)
        self.reach = 3 * Y + 64.0
        ny = math.ceil(Y / q)
        nx = math.ceil(self.reach / q)
        y = np.arange(-ny, ny + 1) * q
        ker = (2 * delta / math.pi) * _eta_hat_interp(4 * delta * y) * q
        x = np.arange(-nx - ny, nx + ny + 1) * q
        vals = fftconvolve((1 + x * x) ** (power / 2), ker, mode="valid")
        self._spline = CubicSpline(np.arange(-nx, nx + 1) * q, vals)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = (1 + x * x) ** (self.power / 2)
        near = np.abs(x) <= self.reach
        out[near] = self._spline(x[near])
        return out


@lru_cache(maxsize=32)
def _lowpass_weight(delta: float, power: float, cut: float) -> _LowpassWeight:
    return _LowpassWeight(delta, power, cut)


# ---------------------------------------------------------------- X^{s,b} norms

def _window_center(w: SpaceTimeField, window: EtaCutoff, center: float | None) -> float:
    t0, t1 = float(w.times[0]), float(w.times[-1])
    c = 0.5 * (t0 + t1) if center is None else float(center)
    slack = 1e-9 * max(1.0, abs(t1))
    if c - window.support < t0 - slack or c + window.support > t1 + slack:
        raise ValueError(f"window [{c - window.support:g}, {c + window.support:g}] is wider "
                         f"than the data interval [{t0:g}, {t1:g}]")
    return c


def _modulation_norm(w: SpaceTimeField, s: float, b: float, window: EtaCutoff,
                     shift: np.ndarray, center: float | None) -> float:
    c = _window_center(w, window, center)
    h = w.step
    f = window.eta(w.times - c)[:, None] * w.interaction()
    keep = np.nonzero(np.any(f != 0, axis=1))[0]
    if keep.size == 0:
        return 0.0
    f = f[keep[0]:keep[-1] + 1]
    # sigma spacing below 2 pi / (12 delta) makes the weighted sum exact
    L = sfft.next_fast_len(max(f.shape[0], math.ceil(2 * math.pi / (h * window.lag_spacing))))
    F = h * sfft.fft(f, n=L, axis=0)
    sigma = 2 * math.pi * sfft.fftfreq(L, d=h)
    dsig = 2 * math.pi / (L * h)
    weight = window.lowpass(2 * b)
    tot = 0.0
    ns = modes(w.cutoff)
    js = japanese(ns) ** (2 * s)
    for k in range(ns.size):
        col = np.abs(F[:, k]) ** 2
        if not np.any(col):
            continue
        tot += js[k] * float(np.sum(col * weight(sigma + shift[k])))
    return math.sqrt(max(tot, 0.0) * dsig / (2 * math.pi))


def xsb_norm(w: SpaceTimeField, s: float, b: float, window: EtaCutoff, center: float | None = None) -> float:
    """||<n>^s <tau + n^4>^b (eta_delta w)^(n, tau)|| with the (2 pi)^{-1} d tau measure.

    The window is centred at ``center`` (default: middle of the data).
    """
    return _modulation_norm(w, s, b, window, np.zeros(2 * w.cutoff + 1), center)


def random_xsb_norm(w: SpaceTimeField, s: float, b: float, phases: RandomPhaseSpec, window: EtaCutoff,
                    sign: int | None = None, center: float | None = None) -> float:
    """As ``xsb_norm`` with modulation <tau + n^4 +- |g_n^N|^2>."""
    sg = phases.sign if sign is None else sign
    if sg not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return _modulation_norm(w, s, b, window, sg * phases.intensities(w.cutoff), center)


def linear_xsb_constant(window: EtaCutoff, b: float) -> float:
    """((2 pi)^{-1} int |eta_hat_delta(sigma)|^2 <sigma>^{2b} d sigma)^{1/2}.

    For a windowed free evolution the X^{s,b} norm is ||f||_{H^s} times this.
    Evaluated on the fine reference grid, independently of the band-limited path.
    """
    tau, e = window.samples
    val = np.sum(e**2 * (1 + tau**2) ** b) * window.tau_spacing
    return math.sqrt(val / (2 * math.pi))


def lebesgue4_norm(w: SpaceTimeField, window: EtaCutoff, center: float | None = None) -> float:
    """||eta_delta w||_{L^4(T x R)} with the normalized measure in x.

    Spatial means are exact (grid >= 4N+1); the time integral is the trapezoid
    rule on the sampling grid.
    """
    c = _window_center(w, window, center)
    M = max(minimal_grid(w.cutoff), 1)
    x = np.zeros((w.times.size, M), dtype=np.complex128)
    N = w.cutoff
    x[:, :N + 1] = w.values[:, N:]
    if N:
        x[:, M - N:] = w.values[:, :N]
    u = sfft.ifft(x, axis=1, norm="forward")
    quart = np.mean(np.abs(u) ** 4, axis=1)
    return float((np.sum(window.eta(w.times - c) ** 4 * quart) * w.step) ** 0.25)


def strichartz_grid(N: int, window: EtaCutoff, center: float = 0.0, oversample: float = 1.25) -> np.ndarray:
    """Uniform times on the window support fine enough for exact L^4 quadrature of free flows."""
    from .spectral import max_phase
    band = max_phase(N) + 1.5 * window.cut / window.delta
    h = 2 * math.pi / (oversample * band)
    k = math.ceil(window.support / h)
    return center + np.arange(-k, k + 1) * (window.support / k)


def strichartz_ratio(w: SpaceTimeField, window: EtaCutoff, center: float | None = None) -> float:
    """||eta_delta w||_{L^4} / ||w||_{X^{0, 5/16}} (windowed)."""
    den = xsb_norm(w, 0.0, 5.0 / 16.0, window, center)
    if den == 0:
        raise ZeroDivisionError("X^{0,5/16} norm vanishes")
    return lebesgue4_norm(w, window, center) / den


def free_lebesgue4_exact(f: SpectralField, window: EtaCutoff) -> float:
    """L^4 norm of eta_delta S(t) f by the quadruple sum of transforms of eta_delta^4."""
    N = f.cutoff
    c = f.coeffs
    r = modes(N)
    a, b, d = np.meshgrid(r, r, r, indexing="ij")
    e = a - b + d
    ok = np.abs(e) <= N
    a, b, d, e = a[ok], b[ok], d[ok], e[ok]
    phi = (a.astype(float) ** 4 - b.astype(float) ** 4 + d.astype(float) ** 4 - e.astype(float) ** 4)
    coef = c[a + N] * np.conj(c[b + N]) * c[d + N] * np.conj(c[e + N])
    # int eta_delta(t)^4 e^{-i t phi} dt by Gauss-Legendre on [-2 delta, 2 delta]
    x, wt = np.polynomial.legendre.leggauss(400)
    tot = 0.0
    for lo, hi in ((-2, -1), (-1, 1), (1, 2)):
        t = window.delta * (0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        q = 0.5 * (hi - lo) * window.delta * wt * window.eta(t) ** 4
        for i in range(0, phi.size, 4096):
            tot += float(np.real(np.sum(coef[i:i + 4096] * (np.exp(-1j * np.outer(phi[i:i + 4096], t)) @ q))))
    return max(tot, 0.0) ** 0.25


# ---------------------------------------------------------------- random functionals

@dataclass(frozen=True)
class FunctionalSpec:
    """Parameters of the random functionals S_j.

    ``box`` bounds every frequency; ``phase_cutoff`` is N in g^N (None: box);
    ``projections`` are the N_j of pi_{N_j}^perp (-1 keeps every mode).
    """

    s: float = -0.05
    b: float = 0.45
    delta: float = 0.2
    box: int = 16
    phase_cutoff: int | None = None
    projections: tuple[int, ...] = (-1, -1, -1)
    floor: float = 1e-10

    def __post_init__(self):
        if self.box < 0 or self.box > 24:
            raise ValueError("box must lie in [0, 24]")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if len(self.projections) != 3 or any(p < -1 for p in self.projections):
            raise ValueError("projections must be three integers >= -1")


def _grouping(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort(keys[::-1])
    sk = keys[:, order]
    change = np.nonzero(np.any(np.diff(sk, axis=1) != 0, axis=0))[0] + 1
    starts = np.concatenate([[0], change, [order.size]]).astype(np.int64)
    return order, starts


@lru_cache(maxsize=64)
def _functional_layout(j: int, box: int):
    tab = gamma_table(box)
    if j == 1:
        keys = np.stack([tab.n, tab.n2, tab.n3])
    elif j == 2:
        keys = np.stack([tab.n, tab.n3])
    elif j == 3:
        keys = np.stack([tab.n])
    else:
        raise ValueError("j must be 1, 2 or 3")
    order, starts = _grouping(keys)
    return order, starts


def functional_terms(j: int, box: int) -> list[tuple[tuple[int, ...], list[tuple[int, int, int]]]]:
    """Outer indices of S_j with the (n1, n2, n3) tuples summed inside each."""
    tab = gamma_table(box)
    order, starts = _functional_layout(j, box)
    out = []
    for g in range(starts.size - 1):
        idx = order[starts[g]:starts[g + 1]]
        k = idx[0]
        outer = {1: (tab.n[k], tab.n2[k], tab.n3[k]), 2: (tab.n[k], tab.n3[k]), 3: (tab.n[k],)}[j]
        out.append((tuple(int(v) for v in outer),
                    [(int(tab.n1[i]), int(tab.n2[i]), int(tab.n3[i])) for i in idx]))
    return out


def _functional_pieces(j: int, spec: FunctionalSpec, ensemble: GaussianEnsemble):
    box = spec.box
    if ensemble.cutoff < box:
        raise ValueError(f"ensemble covers |n| <= {ensemble.cutoff}, box needs {box}")
    tab = gamma_table(box)
    ns = modes(box)
    g = ensemble.draws[ns + ensemble.cutoff]
    Nph = box if spec.phase_cutoff is None else spec.phase_cutoff
    gsq = np.where(np.abs(ns) <= Nph, g.real**2 + g.imag**2, 0.0)
    f = [np.where(np.abs(ns) > Nj, g, 0) for Nj in spec.projections]
    i1, i2, i3, io = tab.index(tab.n1), tab.index(tab.n2), tab.index(tab.n3), tab.index(tab.n)
    jb = japanese(ns) ** (-spec.s)
    if j == 1:
        coef = f[0][i1]
        shift = tab.phi - gsq[i1]
        weight = jb[i2] * jb[i3] * jb[io] ** 2
    elif j == 2:
        coef = f[0][i1] * np.conj(f[1][i2])
        shift = tab.phi - gsq[i1] + gsq[i2]
        weight = jb[i3] * jb[io] ** 2
    else:
        coef = f[0][i1] * np.conj(f[1][i2]) * f[2][i3]
        shift = tab.phi - gsq[i1] + gsq[i2] - gsq[i3]
        weight = jb[io] ** 2
    order, starts = _functional_layout(j, box)
    coef = coef[order]
    return shift[order], coef, weight[order][starts[:-1]], starts


def s_functional(j: int, spec: FunctionalSpec, ensemble: GaussianEnsemble, method: str = "bandlimited") -> float:
    """S_j^{s,b,delta} evaluated on the white noise draws of ``ensemble``.

    ``bandlimited`` is the production path; ``grid`` is the slow reference
    (uniform tau grid of spacing ``EtaCutoff.tau_spacing``, exact weight).
    """
    if j not in (1, 2, 3):
        raise ValueError("j must be 1, 2 or 3")
    window = EtaCutoff(spec.delta, spec.floor)
    a, coef, weight, starts = _functional_pieces(j, spec, ensemble)
    if starts[-1] == 0:
        return 0.0
    if method == "bandlimited":
        vals = _group_norms(a, coef, starts, window, spec.b)
    elif method == "grid":
        vals = _group_norms_grid(a, coef, starts, window, spec.b)
    else:
        raise ValueError(f"unknown method {method!r}")
    return math.sqrt(max(float(np.sum(weight**2 * vals)), 0.0))


def _group_norms(a, coef, starts, window: EtaCutoff, b: float) -> np.ndarray:
    s, tab, dtab = _eta_hat_table()
    delta = window.delta
    m = int(window.lag_spacing * delta / _TABLE_STEP)
    if m < 1:
        raise QuadratureError("delta too large for the eta_hat table step")
    h = m * _TABLE_STEP / delta
    imid = int(math.ceil((float(np.max(np.abs(a))) + window.tau_halfwidth) / h)) + 2
    wB = window.lowpass(-2 * b)(np.arange(-imid, imid + 1) * h)
    out = np.empty(starts.size - 1)
    _kernels.grouped_window_norms(np.ascontiguousarray(a, dtype=float),
                                  np.ascontiguousarray(coef.real), np.ascontiguousarray(coef.imag),
                                  starts, delta, m, wB, tab, dtab * _TABLE_STEP, _TABLE_STEP,
                                  window.cut, out)
    return out


def _group_norms_grid(a, coef, starts, window: EtaCutoff, b: float) -> np.ndarray:
    hf = window.tau_spacing
    X = window.tau_halfwidth
    out = np.empty(starts.size - 1)
    for g in range(starts.size - 1):
        sl = slice(starts[g], starts[g + 1])
        ag, cg = a[sl], coef[sl]
        lo, hi = np.min(-ag) - X, np.max(-ag) + X
        tau = np.arange(math.floor(lo / hf), math.ceil(hi / hf) + 1) * hf
        F = np.zeros(tau.size, dtype=np.complex128)
        for at, ct in zip(ag, cg):
            if ct == 0:
                continue
            m = np.abs(tau + at) <= X
            F[m] += ct * window.eta_hat(tau[m] + at)
        out[g] = np.sum(np.abs(F) ** 2 * (1 + tau**2) ** (-b)) * hf
    return out


# ---------------------------------------------------------------- second moments

@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo E|Sigma_n|^2 with its standard error, the exact pairing value and a bound."""

    mc: float
    stderr: float
    exact: float
    bound: float


def _tuple_factors(tuples, powers) -> list[dict]:
    # per tuple: mode -> [power of g, power of conj g]
    out = []
    for t in tuples:
        d: dict[int, list[int]] = {}
        for j, k in powers.items():
            m = t[j - 1]
            e = d.setdefault(m, [0, 0])
            e[0] += k
            e[1] += k
            if j == 2:
                e[1] += 1
            else:
                e[0] += 1
        out.append(d)
    return out


def pairing_gram(tuples, powers: dict[int, int]) -> np.ndarray:
    """G[t, t'] = E[X_t conj(X_t')] for X_t = prod_{j in A} |g_{n_j}|^{2 k_j} g*_{n_j}.

    Exact, from E[g^p conj(g)^q] = delta_{pq} p! and independence across modes.
    """
    fac = _tuple_factors(tuples, powers)
    T = len(tuples)
    G = np.zeros((T, T))
    for a in range(T):
        for b in range(a, T):
            val = 1.0
            modes_ab = set(fac[a]) | set(fac[b])
            for m in modes_ab:
                pa = fac[a].get(m, [0, 0])
                pb = fac[b].get(m, [0, 0])
                p = pa[0] + pb[1]
                q = pa[1] + pb[0]
                if p != q:
                    val = 0.0
                    break
                val *= math.factorial(p)
            G[a, b] = G[b, a] = val
    return G


def multilinear_second_moment(coeffs: dict, powers: dict[int, int], samples: int,
                              seed: int = 0) -> MomentEstimate:
    """Second moment of Sigma_n = (prod k_j!)^{-1} sum c_t prod_{j in A} |g_{n_j}|^{2k_j} g*_{n_j}.

    ``coeffs`` maps (n1, n2, n3) in Gamma(n) to c; ``powers`` maps each j in
    A to k_j.  The bound is the Schur test on the exact pairing Gram matrix,
    max_t sum_t' |G[t, t']| / (prod k_j!)^2 * sum |c|^2.
    """
    if not powers or not set(powers) <= {1, 2, 3}:
        raise ValueError("powers must map a non-empty subset of {1, 2, 3} to k_j")
    if any(k < 0 or k > 3 for k in powers.values()):
        raise ValueError("k_j must lie in [0, 3]")
    if samples < 2:
        raise ValueError("need at least two samples")
    tuples = [tuple(int(v) for v in t) for t in coeffs]
    outs = {t[0] - t[1] + t[2] for t in tuples}
    if len(outs) > 1:
        raise ValueError("all tuples must lie on one hyperplane Gamma(n)")
    for t in tuples:
        n = t[0] - t[1] + t[2]
        if t[0] == n or t[2] == n:
            raise ValueError(f"{t} is not in Gamma({n})")
    c = np.array(list(coeffs.values()), dtype=np.complex128)
    norm = math.prod(math.factorial(k) for k in powers.values())
    if not tuples or not np.any(c):
        return MomentEstimate(0.0, 0.0, 0.0, 0.0)
    G = pairing_gram(tuples, powers)
    exact = float(np.real(np.conj(c) @ G @ c)) / norm**2
    bound = float(np.max(np.sum(np.abs(G), axis=1))) * float(np.sum(np.abs(c) ** 2)) / norm**2

    used = sorted({t[j - 1] for t in tuples for j in powers})
    pos = {m: i for i, m in enumerate(used)}
    vals = np.empty(samples)
    for r in range(samples):
        g = gaussian_modes(derive_trajectory_seed(seed, r), used)
        acc = 0j
        for t, ct in zip(tuples, c):
            x = ct
            for j, k in powers.items():
                z = g[pos[t[j - 1]]]
                x *= abs(z) ** (2 * k) * (np.conj(z) if j == 2 else z)
            acc += x
        vals[r] = abs(acc / norm) ** 2
    return MomentEstimate(float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples)), exact, bound)
