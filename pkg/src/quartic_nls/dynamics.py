"""Time evolution: linear and resonant flows, truncated nonlinear flows, gauges.

Truncated flows are ``i u_t = u_xxxx + pi_N(nonlinearity)`` on |n| <= N,
integrated in the interaction picture (see ``_engine``).  Variants:

``original``      |u|^2 u
``renormalized``  (|u|^2 - 2 mass) u
``gauged``        the renormalized flow seen through the random gauge
                  w_n = exp(-i t |g_n|^2) u_n, evolved in the w variables
``resonant``      only the diagonal part -|u_n|^2 u_n
``nonresonant``   renormalized minus the diagonal part
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp

from . import _engine
from .randomness import GaussianEnsemble
from .spectral import SpectralField, max_phase, minimal_grid, modes

VARIANTS = tuple(_engine.KINDS)


class StepSizeError(RuntimeError):
    """The step-halving check rejected the step, or the step budget is exceeded."""


class StepBudgetError(StepSizeError):
    """Reaching the horizon at the chosen step would exceed the step budget."""


class NonFiniteError(RuntimeError):
    """A trajectory produced NaN or infinity."""


def quartic(N: int) -> np.ndarray:
    return modes(N).astype(float) ** 4


# ---------------------------------------------------------------- closed forms

def linear_propagate(f: SpectralField, t: float) -> SpectralField:
    """c_n -> exp(-i n^4 t) c_n."""
    return SpectralField(f.cutoff, f.coeffs * np.exp(-1j * quartic(f.cutoff) * t))


def _initial_coeffs(f0) -> SpectralField:
    return f0.field() if isinstance(f0, GaussianEnsemble) else f0


def resonant_flow_exact(f0, t: float) -> SpectralField:
    """Solution of the diagonal flow i z_n' = n^4 z_n - |z_n|^2 z_n.

    ``f0`` may be a field or a GaussianEnsemble (whose decay exponent is then
    already part of the initial coefficients).
    """
    f0 = _initial_coeffs(f0)
    c = f0.coeffs
    rot = np.exp(1j * t * (c.real**2 + c.imag**2) - 1j * quartic(f0.cutoff) * t)
    return SpectralField(f0.cutoff, rot * c)


def resonant_series(f0, t: float, K: int) -> SpectralField:
    """Partial sum sum_{k<=K} (it)^k/k! |c|^{2k} c, then the linear rotation."""
    if K < 0:
        raise ValueError("series order must be non-negative")
    f0 = _initial_coeffs(f0)
    c = f0.coeffs
    x = 1j * t * (c.real**2 + c.imag**2)
    term = np.ones_like(c)
    total = np.ones_like(c)
    for k in range(1, K + 1):
        term = term * x / k
        total = total + term
    return SpectralField(f0.cutoff, np.exp(-1j * quartic(f0.cutoff) * t) * total * c)


def resonant_ode_oracle(f0, t: float, rtol: float = 1e-13, atol: float = 1e-15) -> SpectralField:
    """Integrate the diagonal mode ODE numerically (DOP853) in the rotating frame."""
    f0 = _initial_coeffs(f0)
    c0 = f0.coeffs
    K = c0.size

    def rhs(_, y):
        z = y[:K] + 1j * y[K:]
        dz = 1j * (z.real**2 + z.imag**2) * z
        return np.concatenate([dz.real, dz.imag])

    sol = solve_ivp(rhs, (0.0, t), np.concatenate([c0.real, c0.imag]), method="DOP853", rtol=rtol, atol=atol)
    z = sol.y[:K, -1] + 1j * sol.y[K:, -1]
    return linear_propagate(SpectralField(f0.cutoff, z), t)


# ---------------------------------------------------------------- flow specs

@dataclass(frozen=True)
class FlowSpec:
    """Parameters of one truncated flow run.

    ``dt=None`` picks ``min(1e-2, 0.5/(1+mass), phase_resolution/max|Phi|)``
    (``0.1 phase_resolution/max|c_n|^2`` in place of the last term for the
    resonant flow).
    ``halving`` compares against a dt/2 rerun: ``full`` over the whole
    horizon, ``probe`` over its first eighth with linear extrapolation, or
    ``off``.
    """

    variant: str
    cutoff: int
    t_end: float
    dt: float | None = None
    sample_stride: int | None = None
    phase_resolution: float = 0.35
    halving: str = "probe"
    halving_rtol: float = 1e-6
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")
        if not self.t_end >= 0:
            raise ValueError("t_end must be non-negative")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.halving not in ("probe", "full", "off"):
            raise ValueError(f"unknown halving mode {self.halving!r}")
        if self.sample_stride is not None and self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")


def default_dt(variant: str, N: int, mass: float, phase_resolution: float = 0.35, peak: float = 0.0) -> float:
    """Step bound; ``peak`` is max |c_n|^2, the rotation rate of the resonant flow."""
    dt = min(1e-2, 0.5 / (1.0 + mass))
    if variant == "resonant":
        if peak > 0:
            dt = min(dt, 0.1 * phase_resolution / peak)
    elif N > 0:
        dt = min(dt, phase_resolution / max_phase(N))
    return dt


def plan_steps(t_end: float, dt_max: float) -> tuple[int, float]:
    """Smallest step count with step <= dt_max that lands exactly on t_end."""
    if t_end == 0:
        return 0, dt_max
    steps = max(1, math.ceil(t_end / dt_max - 1e-9))
    return steps, t_end / steps


# ---------------------------------------------------------------- batch integration

@dataclass
class BatchRun:
    """Result of :func:`integrate_batch`: states[b, j] is trajectory b at times[j]."""

    times: np.ndarray
    states: np.ndarray
    dt: float
    steps: int
    failed: np.ndarray
    halving_estimate: float


BLOCK = 64  # rows per compiled batch


def _kernel_run(U, omega, gsq, kind, grid, t0, dt, steps, sample_at):
    B, K = U.shape
    out = np.zeros((B, len(sample_at), K), dtype=np.complex128)
    bad = np.zeros(B, dtype=np.bool_)
    sample_at = np.asarray(sample_at, dtype=np.int64)
    for lo in range(0, B, BLOCK):
        rows = slice(lo, min(B, lo + BLOCK))
        V = np.ascontiguousarray(U[rows])
        o = np.zeros((V.shape[0], len(sample_at), K), dtype=np.complex128)
        _engine.lawson_rk4(V, omega, np.ascontiguousarray(gsq[rows]), kind, grid, float(t0), float(dt),
                           int(steps), sample_at, o, bad[rows])
        U[rows] = V
        out[rows] = o
    return out, bad


def _advance(U, omega, gsq, kind, grid, t0, dt, steps):
    V = np.array(U, dtype=np.complex128, order="C")
    _kernel_run(V, omega, gsq, kind, grid, t0, dt, steps, np.array([steps]))
    return V


def integrate_batch(U0, variant: str, times, dt_max: float, gsq=None, *, halving: str = "probe",
                    halving_rtol: float = 1e-6, check: int = 1, max_steps: int = 50_000_000) -> BatchRun:
    """Integrate rows of ``U0`` from t=0 and record them at ``times``.

    One global step ``dt <= dt_max`` is chosen so that every requested time
    is a whole number of steps.  The halving check runs on the first
    ``check`` rows; failure raises :class:`StepSizeError`.
    """
    U0 = np.atleast_2d(np.asarray(U0, dtype=np.complex128))
    B, K = U0.shape
    N = (K - 1) // 2
    kind = _engine.KINDS[variant]
    times = np.asarray(sorted(set(float(t) for t in times)), dtype=float)
    if times.size == 0 or times[0] < 0:
        raise ValueError("need non-negative sample times")
    t_end = float(times[-1])
    omega = quartic(N)
    if gsq is None:
        gsq = np.zeros((B, K))
    gsq = np.ascontiguousarray(np.broadcast_to(np.asarray(gsq, dtype=float), (B, K)))
    grid = minimal_grid(N)

    # a common step dividing every sample time
    steps, dt = plan_steps(t_end, dt_max)
    if steps > max_steps:
        raise StepBudgetError(
            f"{steps} steps of {dt:.3e} needed to reach t={t_end} at cutoff {N}; budget is {max_steps}")
    if steps:
        ratio = times / dt
        while np.max(np.abs(ratio - np.round(ratio))) > 1e-6:
            steps += 1
            dt = t_end / steps
            ratio = times / dt
        sample_at = np.round(ratio).astype(np.int64)
    else:
        sample_at = np.zeros(times.size, dtype=np.int64)

    U = np.array(U0, order="C")
    states, bad = _kernel_run(U, omega, gsq, kind, grid, 0.0, dt, steps, sample_at)

    estimate = 0.0
    if halving != "off" and steps and bad[:max(0, check)].any():
        raise StepSizeError(f"trajectory at cutoff {N} became non-finite with dt={dt:.3e}; reduce the step")
    rows = np.flatnonzero(~bad)[:max(0, check)]
    if halving != "off" and steps and rows.size:
        estimate = _halving_estimate(halving, U0[rows], states[rows], sample_at, omega, gsq[rows],
                                     kind, grid, dt, steps)
        if not estimate <= halving_rtol:
            raise StepSizeError(
                f"step-halving check failed at cutoff {N}: estimated relative error {estimate:.3e} "
                f"exceeds {halving_rtol:.1e} with dt={dt:.3e}")
    return BatchRun(times, states, dt, steps, bad, estimate)


PROBE_FRACTION = 0.125


def _halving_estimate(mode, U0, states, sample_at, omega, gsq, kind, grid, dt, steps) -> float:
    """Relative terminal difference between the dt run and a dt/2 rerun.

    ``probe`` reruns only the first eighth of the horizon and scales the
    difference up linearly in time.
    """
    U0 = np.array(U0, order="C")
    if mode == "full":
        half, bad = _kernel_run(U0, omega, gsq, kind, grid, 0.0, dt / 2, 2 * steps, 2 * sample_at)
        ref = states
        scale = 1.0
    else:
        p = min(steps, max(1, math.ceil(steps * PROBE_FRACTION)))
        ref, bad0 = _kernel_run(U0.copy(), omega, gsq, kind, grid, 0.0, dt, p, np.array([p]))
        half, bad = _kernel_run(U0.copy(), omega, gsq, kind, grid, 0.0, dt / 2, 2 * p, np.array([2 * p]))
        bad = bad | bad0
        scale = steps / p
    if bad.any() or not np.all(np.isfinite(half)):
        return math.inf
    num = np.linalg.norm(half - ref, axis=-1)
    den = np.maximum(np.linalg.norm(half, axis=-1), 1e-300)
    return float(np.max(num / den)) * scale


# ---------------------------------------------------------------- trajectories

@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    spec: FlowSpec
    times: np.ndarray
    states: np.ndarray
    ensemble: GaussianEnsemble | None = None
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        s = np.asarray(self.states, dtype=np.complex128)
        if s.shape != (t.size, 2 * self.spec.cutoff + 1):
            raise ValueError("states do not match times and cutoff")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        t.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def cutoff(self) -> int:
        return self.spec.cutoff

    def __len__(self) -> int:
        return self.times.size

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.cutoff, self.states[i])

    def final(self) -> SpectralField:
        return self.field(-1)

    def masses(self) -> np.ndarray:
        return np.sum(self.states.real**2 + self.states.imag**2, axis=-1)

    def with_states(self, states, **diag) -> "TrajectoryRecord":
        d = dict(self.diagnostics)
        d.update(diag)
        return TrajectoryRecord(self.spec, self.times, states, self.ensemble, self.seed, d)

    # -- dump format: one JSON header line, then CSV rows "t,re_-N,im_-N,...,re_N,im_N"
    def dumps(self, meta: dict | None = None) -> str:
        header = {
            "spec": asdict(self.spec),
            "seed": self.seed,
            "ensemble": None if self.ensemble is None else {
                "seed": self.ensemble.seed, "cutoff": self.ensemble.cutoff, "alpha": self.ensemble.alpha,
                "draws": [[float(z.real), float(z.imag)] for z in self.ensemble.draws],
            },
            "diagnostics": _jsonable(self.diagnostics),
        }
        if meta:
            header["meta"] = _jsonable(meta)
        lines = ["# " + json.dumps(header, sort_keys=True)]
        cols = ["t"] + [f"{p}_{n}" for n in modes(self.cutoff) for p in ("re", "im")]
        lines.append(",".join(cols))
        for t, row in zip(self.times, self.states):
            inter = np.empty(2 * row.size)
            inter[0::2] = row.real
            inter[1::2] = row.imag
            lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in inter]))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TrajectoryRecord":
        lines = text.splitlines()
        header = json.loads(lines[0][2:])
        spec = FlowSpec(**header["spec"])
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:] if ln.strip()])
        rows = rows.reshape(-1, 1 + 2 * (2 * spec.cutoff + 1))
        states = rows[:, 1::2] + 1j * rows[:, 2::2]
        ens = header.get("ensemble")
        ensemble = None
        if ens is not None:
            draws = np.array([complex(a, b) for a, b in ens["draws"]])
            ensemble = GaussianEnsemble(ens["seed"], ens["cutoff"], ens["alpha"], draws)
        return cls(spec, rows[:, 0], states, ensemble, header.get("seed"), header.get("diagnostics") or {})


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def _phase_intensities(ensemble: GaussianEnsemble | None, N: int, phase_cutoff: int | None) -> np.ndarray:
    """|g_n^{phase_cutoff}|^2 on modes |n| <= N."""
    ns = modes(N)
    if ensemble is None:
        raise ValueError("this operation needs a GaussianEnsemble")
    cover = N if phase_cutoff is None else min(N, phase_cutoff)
    if ensemble.cutoff < cover:
        raise ValueError(f"ensemble covers |n| <= {ensemble.cutoff} but modes up to {cover} need phases")
    g = np.zeros(ns.size, dtype=np.complex128)
    inside = np.abs(ns) <= cover
    g[inside] = ensemble.draws[ns[inside] + ensemble.cutoff]
    return g.real**2 + g.imag**2


def evolve_truncated(f0: SpectralField, spec: FlowSpec, ensemble: GaussianEnsemble | None = None,
                     seed: int | None = None) -> TrajectoryRecord:
    """Run one truncated flow; samples every ``sample_stride`` steps (default: endpoints only)."""
    if f0.cutoff != spec.cutoff:
        raise ValueError(f"initial cutoff {f0.cutoff} differs from flow cutoff {spec.cutoff}")
    N = spec.cutoff
    gsq = None
    if spec.variant == "gauged":
        gsq = _phase_intensities(ensemble, N, N)[None, :]
    dt = spec.dt
    if dt is None:
        peak = float(np.max(np.abs(f0.coeffs) ** 2))
        dt = default_dt(spec.variant, N, f0.mass(), spec.phase_resolution, peak)
    steps, dt = plan_steps(spec.t_end, dt)
    stride = spec.sample_stride or max(steps, 1)
    times = [k * dt for k in range(0, steps + 1, stride)]
    if steps and times[-1] != spec.t_end:
        if steps % stride:
            times.append(spec.t_end)
        else:
            times[-1] = spec.t_end
    run = integrate_batch(f0.coeffs[None, :], spec.variant, times, dt * (1 + 1e-12), gsq,
                          halving=spec.halving, halving_rtol=spec.halving_rtol, check=1,
                          max_steps=spec.max_steps)
    if run.failed[0]:
        raise NonFiniteError(f"non-finite values in the {spec.variant} flow at cutoff {N}")
    m = np.sum(np.abs(run.states[0]) ** 2, axis=-1)
    diag = {
        "dt": run.dt,
        "steps": run.steps,
        "halving_mode": spec.halving,
        "halving_estimate": run.halving_estimate,
        "mass_drift": float(np.max(np.abs(m - m[0])) / m[0]) if m[0] > 0 else 0.0,
    }
    return TrajectoryRecord(replace(spec, dt=run.dt), run.times, run.states[0], ensemble, seed, diag)


def evolve_extended(f0: SpectralField, inner: int, spec: FlowSpec,
                    ensemble: GaussianEnsemble | None = None) -> TrajectoryRecord:
    """Nonlinear truncated flow on |n| <= inner, free linear flow above."""
    Nb = f0.cutoff
    if not 0 <= inner <= Nb:
        raise ValueError("need 0 <= inner <= cutoff of the data")
    low = evolve_truncated(f0.resized(inner), replace(spec, cutoff=inner), ensemble)
    ns = modes(Nb)
    high = np.abs(ns) > inner
    states = np.zeros((len(low), 2 * Nb + 1), dtype=np.complex128)
    states[:, Nb - inner:Nb + inner + 1] = low.states
    phase = np.exp(-1j * np.outer(low.times, ns.astype(float) ** 4))
    states[:, high] = (phase * f0.coeffs)[:, high]
    diag = dict(low.diagnostics, inner=inner)
    return TrajectoryRecord(replace(low.spec, cutoff=Nb), low.times, states, ensemble, low.seed, diag)


# ---------------------------------------------------------------- gauges

def gauge_deterministic(u: TrajectoryRecord, direction: str = "forward") -> TrajectoryRecord:
    """Multiply each sample by exp(+-2 i t mass(u(t)))."""
    sign = _direction(direction)
    factor = np.exp(sign * 2j * u.times * u.masses())
    return u.with_states(u.states * factor[:, None], gauge=f"deterministic-{direction}")


def gauge_random(u: TrajectoryRecord, e: GaussianEnsemble, cutoff_for_phases: int | None = None,
                 direction: str = "forward") -> TrajectoryRecord:
    """Multiply mode n at time t by exp(-+ i t |g_n^N|^2); ``None`` means no phase truncation."""
    sign = _direction(direction)
    gsq = _phase_intensities(e, u.cutoff, cutoff_for_phases)
    factor = np.exp(-sign * 1j * np.outer(u.times, gsq))
    return TrajectoryRecord(u.spec, u.times, u.states * factor, e, u.seed,
                            dict(u.diagnostics, gauge=f"random-{direction}"))


def random_gauge_coeffs(c: np.ndarray, t, gsq: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Array form of the random gauge; ``t`` broadcasts against the mode axis."""
    sign = _direction(direction)
    return c * np.exp(-sign * 1j * np.asarray(t, dtype=float)[..., None] * gsq)


def _direction(direction: str) -> int:
    if direction == "forward":
        return 1
    if direction == "inverse":
        return -1
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
