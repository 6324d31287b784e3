"""Monte Carlo studies over ensembles of white noise data.

Each study takes a :class:`StudySpec`, draws trajectory ``j`` from the seed
``derive_trajectory_seed(spec.seed, j)`` and returns an
:class:`ExperimentReport`.  Rows are integrated in fixed blocks whose
composition depends only on the spec, so reports are bit-for-bit identical
for any thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import special, stats
from scipy.fft import ifft, next_fast_len

from .dynamics import (BLOCK, FlowSpec, StepBudgetError, StepSizeError, default_dt, evolve_truncated,
                       integrate_batch, plan_steps, quartic)
from .functionals import (FunctionalSpec, RandomPhaseSpec, SpaceTimeField, cancellation_violation,
                          quintic_duhamel_series, resonant_duhamel_series, s_functional)
from .randomness import (GaussianEnsemble, MollifierSpec, derive_trajectory_seed, gaussian_modes,
                         sample_batch)
from .spectral import japanese, modes

KINDS = ("invariance", "convergence", "residual", "z1-scaling", "cancellation", "functional-tails")


# ---------------------------------------------------------------- statistics

@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    stderr: float | None = None


TESTS = ("ks-exp1", "phase-uniform", "slope-fit", "correlation")


def _nondegenerate(x: np.ndarray, what: str):
    if x.size < 2:
        raise ValueError(f"{what}: need at least two samples")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what}: samples must be finite")
    if np.all(x == x.flat[0]):
        raise ValueError(f"{what}: samples are constant")


def stats_kit(samples, test: str, other=None) -> TestResult:
    """One-sample and two-sample tests used by the studies.

    ``ks-exp1``        KS of ``samples`` against Exp(1)
    ``phase-uniform``  KS of angles (radians, any branch) against uniform
    ``slope-fit``      least squares of ``other`` on ``samples``; statistic is the slope
    ``correlation``    Pearson correlation of ``samples`` and ``other``; complex
                       inputs give |r| with p = (1 - |r|^2)^(M-1)
    """
    x = np.asarray(samples)
    if test == "ks-exp1":
        x = np.asarray(x, dtype=float).ravel()
        _nondegenerate(x, test)
        r = stats.kstest(x, "expon")
        return TestResult(float(r.statistic), float(r.pvalue))
    if test == "phase-uniform":
        x = np.asarray(x, dtype=float).ravel()
        _nondegenerate(x, test)
        u = np.mod(x, 2 * np.pi) / (2 * np.pi)
        r = stats.kstest(u, "uniform")
        return TestResult(float(r.statistic), float(r.pvalue))
    if test not in ("slope-fit", "correlation"):
        raise ValueError(f"unknown test {test!r}; expected one of {TESTS}")
    if other is None:
        raise ValueError(f"{test} needs a second sample")
    y = np.asarray(other)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"{test}: samples must be 1-d and of equal length")
    if test == "slope-fit":
        x = x.astype(float)
        y = y.astype(float)
        _nondegenerate(x, test)
        if x.size == 2:
            slope = float((y[1] - y[0]) / (x[1] - x[0]))
            return TestResult(slope, math.nan, math.nan)
        r = stats.linregress(x, y)
        return TestResult(float(r.slope), float(r.pvalue), float(r.stderr))
    _nondegenerate(x, test)
    _nondegenerate(y, test)
    if np.iscomplexobj(x) or np.iscomplexobj(y):
        xc = x - x.mean()
        yc = y - y.mean()
        r = abs(np.vdot(yc, xc)) / math.sqrt(np.vdot(xc, xc).real * np.vdot(yc, yc).real)
        return TestResult(float(r), float((1 - min(r * r, 1.0)) ** (x.size - 1)))
    r = stats.pearsonr(x.astype(float), y.astype(float))
    return TestResult(float(r.statistic), float(r.pvalue))


def benjamini_hochberg(p_values, level: float) -> np.ndarray:
    """Rejection mask of the step-up procedure at false discovery rate ``level``."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    order = np.argsort(p, kind="stable")
    passed = p[order] <= level * np.arange(1, m + 1) / m
    reject = np.zeros(m, dtype=bool)
    if passed.any():
        k = np.max(np.nonzero(passed)[0])
        reject[order[:k + 1]] = True
    return reject


def max_complex_correlation(Z: np.ndarray) -> float:
    """Largest |Pearson correlation| between distinct columns of complex samples Z[sample, mode]."""
    Zc = Z - Z.mean(axis=0)
    sd = np.sqrt(np.sum(np.abs(Zc) ** 2, axis=0))
    if np.any(sd == 0):
        raise ValueError("correlation: a mode is constant across samples")
    C = np.abs(Zc.conj().T @ Zc) / np.outer(sd, sd)
    np.fill_diagonal(C, 0.0)
    return float(C.max()) if C.size > 1 else 0.0


def _quartiles(x) -> dict:
    q = np.quantile(np.asarray(x, dtype=float), [0.25, 0.5, 0.75])
    return {"q25": float(q[0]), "median": float(q[1]), "q75": float(q[2])}


# ---------------------------------------------------------------- specs and reports

@dataclass(frozen=True)
class StudySpec:
    """Parameters of one study; see :func:`default_spec` for per-kind defaults.

    ``cutoffs`` means: invariance and cancellation cutoffs N; the residual
    ladder; the simulation cutoff N_sim (first entry) for convergence; the
    dyadic block ladder for z1-scaling.  ``ladder`` holds mollification
    scales.  ``phase_resolution`` is the integrator step in units of
    1/max|Phi|; it is halved (at most four times) when the step-halving check
    fails.
    """

    kind: str
    cutoffs: tuple[int, ...] = (16,)
    times: tuple[float, ...] = (0.5,)
    samples: int = 100
    seed: int = 0
    fdr: float = 0.01
    correlation_factor: float = 4.0
    delta: float = 0.05
    sobolev: float = -0.6
    ladder: tuple[int, ...] = (4, 8, 16, 32, 64)
    alphas: tuple[float, ...] = (0.0, 0.25)
    epsilon: float = 0.1
    slope_window: float = 0.1
    box: int = 16
    s: float = -0.05
    b: float = 0.45
    tolerance: float = 1e-5
    bounded_ratio: float = 1.5
    phase_resolution: float = 5.0
    halving_rtol: float = 1e-4
    max_steps: int = 2_000_000
    control: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown study kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "cutoffs", tuple(int(n) for n in self.cutoffs))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "ladder", tuple(int(m) for m in self.ladder))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.samples < 2:
            raise ValueError("a study needs at least two samples")
        for name in ("fdr", "correlation_factor", "delta", "tolerance", "bounded_ratio", "slope_window",
                     "epsilon", "phase_resolution", "halving_rtol", "max_steps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"threshold {name} must be positive")
        if not self.fdr < 1:
            raise ValueError("fdr must be below 1")
        if any(n < 0 for n in self.cutoffs) or any(m < 1 for m in self.ladder):
            raise ValueError("cutoffs must be >= 0 and ladder scales >= 1")
        if any(t < 0 for t in self.times):
            raise ValueError("times must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def default_spec(kind: str, **overrides) -> StudySpec:
    """The reference configuration of each study kind."""
    base = {
        "invariance": dict(cutoffs=(16,), times=(0.25, 0.5, 1.0), samples=2000, halving_rtol=1e-3),
        "convergence": dict(cutoffs=(256,), times=(0.05,), samples=100, ladder=(4, 8, 16, 32, 64)),
        "residual": dict(cutoffs=(8, 16, 32, 64), times=(), samples=200, delta=0.05, phase_resolution=10.0),
        "z1-scaling": dict(cutoffs=tuple(2**k for k in range(2, 11)), times=(), samples=500, delta=0.1),
        "cancellation": dict(cutoffs=(12,), times=(0.2,), samples=50, phase_resolution=0.35,
                             halving_rtol=1e-6, max_steps=50_000_000),
        "functional-tails": dict(cutoffs=(), times=(), samples=200, delta=0.2, box=16),
    }
    if kind not in base:
        raise ValueError(f"unknown study kind {kind!r}; expected one of {KINDS}")
    return StudySpec(kind=kind, **{**base[kind], **overrides})


def spec_fields() -> dict[str, type]:
    return {f.name: f.type for f in fields(StudySpec)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


@dataclass
class ExperimentReport:
    """Outcome of one study.

    ``verdicts`` maps a name to ``{"passed", "value", "threshold", "rule"}``
    so every verdict is traceable to a recorded statistic; ``cells`` are the
    raw rows written to CSV.
    """

    spec: dict
    statistics: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)
    failures: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.verdicts) and all(v["passed"] for v in self.verdicts.values())

    def verdict(self, name: str, passed: bool, value, threshold, rule: str):
        self.verdicts[name] = {"passed": bool(passed), "value": value, "threshold": threshold, "rule": rule}

    def to_dict(self) -> dict:
        return _clean({"spec": self.spec, "statistics": self.statistics, "verdicts": self.verdicts,
                       "failures": self.failures, "passed": self.passed})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        cols: list[str] = []
        for row in self.cells:
            for k in row:
                if k not in cols:
                    cols.append(k)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in self.cells:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in _clean(row).items()})
        return buf.getvalue()

    def write(self, out_dir, extra: dict | None = None) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = self.to_dict()
        if extra:
            payload.update(_clean(extra))
        paths = {"report": out / "report.json", "cells": out / "cells.csv"}
        paths["report"].write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        paths["cells"].write_text(self.to_csv())
        return paths


# ---------------------------------------------------------------- ensemble integration

def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class EnsembleRun:
    times: np.ndarray
    states: np.ndarray
    failed: np.ndarray
    resolutions: list


def evolve_ensemble(U0, variant: str, times, spec: StudySpec, gsq=None, threads: int = 1) -> EnsembleRun:
    """Integrate every row of ``U0`` in blocks of :data:`dynamics.BLOCK` rows.

    Each block picks its step from its largest mass and the phase
    resolution, and halves the resolution while its step-halving check
    fails.  Budget overruns raise :class:`StepBudgetError` immediately.
    """
    U0 = np.atleast_2d(np.asarray(U0, dtype=np.complex128))
    B, K = U0.shape
    N = (K - 1) // 2
    if gsq is None:
        gsq = np.zeros((B, K))
    gsq = np.broadcast_to(np.asarray(gsq, dtype=float), (B, K))
    t_end = max(times)

    def run(lo):
        rows = slice(lo, min(B, lo + BLOCK))
        mass = float(np.max(np.sum(np.abs(U0[rows]) ** 2, axis=1)))
        theta = spec.phase_resolution
        for _ in range(5):
            dt = default_dt(variant, N, mass, theta)
            steps, _ = plan_steps(t_end, dt)
            if steps > spec.max_steps:
                raise StepBudgetError(
                    f"{variant} flow at cutoff {N} to t={t_end} needs {steps} steps of {dt:.3e} "
                    f"(phase resolution {theta}); the study budget is {spec.max_steps}")
            try:
                r = integrate_batch(U0[rows], variant, times, dt, gsq[rows], halving="probe",
                                    halving_rtol=spec.halving_rtol, check=1, max_steps=spec.max_steps)
                return r, theta
            except StepBudgetError:
                raise
            except StepSizeError as err:
                last = err
                theta /= 2
        raise last

    results = _map(run, range(0, B, BLOCK), threads)
    states = np.concatenate([r.states for r, _ in results])
    failed = np.concatenate([r.failed | ~np.all(np.isfinite(r.states), axis=(1, 2)) for r, _ in results])
    return EnsembleRun(results[0][0].times, states, failed, [th for _, th in results])


def _draws(seed: int, samples: int, N: int) -> np.ndarray:
    return sample_batch(seed, samples, N)


def _sobolev(c: np.ndarray, N: int, s: float) -> np.ndarray:
    return np.sqrt(np.sum(japanese(modes(N)) ** (2 * s) * np.abs(c) ** 2, axis=-1))


# ---------------------------------------------------------------- invariance

CONTROL_AMPLITUDE = 4.0
CONTROL_DECAY = 1.0


def _mode_tests(I: np.ndarray, Z: np.ndarray, level: float):
    ks = [stats_kit(I[:, k], "ks-exp1") for k in range(I.shape[1])]
    ph = [stats_kit(np.angle(Z[:, k]), "phase-uniform") for k in range(Z.shape[1])]
    rk = benjamini_hochberg([r.p_value for r in ks], level)
    rp = benjamini_hochberg([r.p_value for r in ph], level)
    return ks, ph, rk, rp


def run_invariance(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    """Per-mode tests that |u_n(t)|^2 ~ Exp(1) with uniform phases under the renormalized flow.

    With ``spec.control`` the same tests run on coloured, amplified data
    A g_n / <n> rescaled mode-wise, whose law is not invariant; the control
    passes when it is rejected.
    """
    if spec.kind != "invariance":
        raise ValueError("spec.kind must be 'invariance'")
    rep = ExperimentReport(spec.to_dict())
    M = spec.samples
    thr = spec.correlation_factor / math.sqrt(M)
    times = sorted({0.0, *spec.times})
    for N in spec.cutoffs:
        U0 = _draws(spec.seed, M, N)
        run = evolve_ensemble(U0, "renormalized", times, spec, threads=threads)
        ok = ~run.failed
        rep.failures += int(run.failed.sum())
        rep.statistics[f"N={N}"] = {"failed_trajectories": int(run.failed.sum()),
                                    "phase_resolutions": run.resolutions}
        for j, t in enumerate(run.times):
            Z = run.states[ok, j, :]
            I = np.abs(Z) ** 2
            ks, ph, rk, rp = _mode_tests(I, Z, spec.fdr)
            corr = max_complex_correlation(Z)
            key = f"N={N},t={t:g}"
            for k, n in enumerate(modes(N)):
                rep.cells.append({"study": "invariance", "N": N, "t": float(t), "n": int(n),
                                  "ks_stat": ks[k].statistic, "ks_p": ks[k].p_value, "ks_reject": bool(rk[k]),
                                  "phase_stat": ph[k].statistic, "phase_p": ph[k].p_value,
                                  "phase_reject": bool(rp[k]), **_quartiles(I[:, k])})
            rep.statistics[key] = {"ks_rejections": int(rk.sum()), "phase_rejections": int(rp.sum()),
                                   "max_correlation": corr, "min_ks_p": min(r.p_value for r in ks),
                                   "min_phase_p": min(r.p_value for r in ph)}
            rule = f"Benjamini-Hochberg rejections at FDR {spec.fdr} across {2 * N + 1} modes"
            rep.verdict(f"{key}:ks", rk.sum() == 0, int(rk.sum()), 0, "KS vs Exp(1): " + rule)
            rep.verdict(f"{key}:phase", rp.sum() == 0, int(rp.sum()), 0, "phase uniformity: " + rule)
            rep.verdict(f"{key}:correlation", corr < thr, corr, thr,
                        "max |complex correlation| between distinct modes < factor/sqrt(M)")
        rep.verdict(f"N={N}:integrator", run.failed.sum() == 0, int(run.failed.sum()), 0,
                    "trajectories with non-finite values")
        if spec.control:
            weight = CONTROL_AMPLITUDE / japanese(modes(N)) ** CONTROL_DECAY
            crun = evolve_ensemble(U0 * weight, "renormalized", times, spec, threads=threads)
            last = crun.states[~crun.failed, -1, :] / weight
            _, _, rk, _ = _mode_tests(np.abs(last) ** 2, last, spec.fdr)
            rep.statistics[f"N={N}:control"] = {"ks_rejections": int(rk.sum()), "t": float(times[-1]),
                                                "amplitude": CONTROL_AMPLITUDE, "decay": CONTROL_DECAY}
            rep.verdict(f"N={N}:control_detected", times[-1] > 0 and rk.sum() > 0, int(rk.sum()), 1,
                        "coloured non-invariant control must be rejected in at least one mode")
    return rep


# ---------------------------------------------------------------- convergence

def mollifier_distances(g: np.ndarray, N: int, ladder, s: float, kind: str = "smooth") -> np.ndarray:
    """t = 0 rung distances ||(theta(n/m) - theta(n/2m)) g_n||_{H^s}, shape (samples, len(ladder))."""
    g = np.atleast_2d(g)
    ns = modes(N)
    out = [_sobolev((MollifierSpec(kind, m).symbol(ns) - MollifierSpec(kind, 2 * m).symbol(ns)) * g, N, s)
           for m in ladder]
    return np.stack(out, axis=1)


def sobolev_tail(N: int, s: float) -> float:
    """E||pi_N^perp g||_{H^s}^2 = sum_{|n| > N} <n>^{2s} for s < -1/2."""
    if not s < -0.5:
        return math.inf
    n = np.arange(N + 1, N + 200_001, dtype=float)
    head = 2 * float(np.sum((1 + n * n) ** s))
    # remainder beyond the explicit sum, with <n> ~ n
    return head + 2 * float(special.zeta(-2 * s, N + 200_001))


def run_convergence(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    """Cauchy test of gauged mollified solutions along a dyadic ladder of scales.

    Every rung solves the original flow from theta(n/m) g_n at cutoff N_sim;
    the gauged solution is exp(2 i t mass) u.  Distances use H^s with
    s = ``spec.sobolev``.  The ungauged solutions are the control.
    """
    if spec.kind != "convergence":
        raise ValueError("spec.kind must be 'convergence'")
    if len(spec.ladder) < 2:
        raise ValueError("the ladder needs at least two rungs")
    N = spec.cutoffs[0]
    t = spec.times[0] if spec.times else 0.05
    top = 2 * spec.ladder[-1]
    if top > N:
        raise ValueError(f"ladder top 2*{spec.ladder[-1]} exceeds the simulation cutoff {N}")
    rep = ExperimentReport(spec.to_dict())
    M = spec.samples
    g = _draws(spec.seed, M, N)
    ns = modes(N)
    rep.statistics["tail_sobolev_norm"] = math.sqrt(sobolev_tail(N, spec.sobolev))
    scales = list(spec.ladder) + [top]

    def evolve(kind, m):
        U0 = g * MollifierSpec(kind, m).symbol(ns)
        if t == 0:
            return U0, np.zeros(M, dtype=bool)
        run = evolve_ensemble(U0, "original", [t], spec, threads=threads)
        return run.states[:, -1, :], run.failed

    sol = {}
    failed = np.zeros(M, dtype=bool)
    for kind in ("smooth", "sharp"):
        for m in (scales if kind == "smooth" else [top]):
            u, bad = evolve(kind, m)
            failed |= bad
            mass = np.sum(np.abs(u) ** 2, axis=1, keepdims=True)
            sol[kind, m] = (u, u * np.exp(2j * t * mass))
    rep.failures = int(failed.sum())
    ok = ~failed
    gauged = np.stack([_sobolev(sol["smooth", m][1] - sol["smooth", 2 * m][1], N, spec.sobolev)
                       for m in spec.ladder], axis=1)[ok]
    plain = np.stack([_sobolev(sol["smooth", m][0] - sol["smooth", 2 * m][0], N, spec.sobolev)
                      for m in spec.ladder], axis=1)[ok]
    cross = _sobolev(sol["smooth", top][1] - sol["sharp", top][1], N, spec.sobolev)[ok]
    med_g = np.median(gauged, axis=0)
    med_p = np.median(plain, axis=0)
    for i, m in enumerate(spec.ladder):
        rep.cells.append({"study": "convergence", "m": m, "t": t, **{f"gauged_{k}": v for k, v in
                                                                     _quartiles(gauged[:, i]).items()},
                          **{f"ungauged_{k}": v for k, v in _quartiles(plain[:, i]).items()}})
    if t == 0:
        rep.statistics["closed_form_max_error"] = float(np.max(np.abs(
            gauged - mollifier_distances(g, N, spec.ladder, spec.sobolev)[ok]))) if ok.any() else 0.0
    rep.statistics.update({"t": t, "median_gauged": med_g, "median_ungauged": med_p,
                           "median_cross_kernel": float(np.median(cross)),
                           "gauged_slope": stats_kit(np.log(spec.ladder), "slope-fit", np.log(med_g)).statistic
                           if np.all(med_g > 0) else math.nan})
    rep.verdict("gauged_decreasing", bool(np.all(np.diff(med_g) < 0)), med_g, "strictly decreasing",
                "median gauged rung distance strictly decreasing in m")
    if t > 0:
        rep.verdict("ungauged_not_decreasing", not bool(np.all(np.diff(med_p) < 0)), med_p,
                    "not strictly decreasing", "ungauged control must fail to be Cauchy")
    else:
        err = rep.statistics["closed_form_max_error"]
        rep.verdict("closed_form", err < 1e-12, err, 1e-12, "t = 0 rung distances vs mollifier tails")
    rep.verdict("kernel_independence", float(np.median(cross)) <= float(med_g[-1]), float(np.median(cross)),
                float(med_g[-1]), "median smooth-vs-sharp distance at the top scale <= terminal rung distance")
    rep.verdict("integrator", failed.sum() == 0, int(failed.sum()), 0, "trajectories with non-finite values")
    return rep


# ---------------------------------------------------------------- residual

def residual_grid(spec: StudySpec) -> list[float]:
    if spec.times:
        return sorted({0.0, *spec.times})
    return [spec.delta * k / 10 for k in range(11)]


def run_residual(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    """v^N = J_N(u^N) - S(t) u_0 along a cutoff ladder of gauged flows.

    Reports sup_t ||v^N||, the mass growth of u^N, the Cauchy differences
    sup_t ||v^{N'} - v^N|| between consecutive cutoffs, and ||u^N - z^N||
    after ungauging (equal to ||v^N|| since the gauge is unitary).
    """
    if spec.kind != "residual":
        raise ValueError("spec.kind must be 'residual'")
    ladder = sorted(spec.cutoffs)
    if len(ladder) < 2:
        raise ValueError("the residual ladder needs at least two cutoffs")
    rep = ExperimentReport(spec.to_dict())
    M = spec.samples
    times = residual_grid(spec)
    V = {}
    failed = np.zeros(M, dtype=bool)
    for N in ladder:
        g = _draws(spec.seed, M, N)
        gsq = np.abs(g) ** 2
        run = evolve_ensemble(g, "gauged", times, spec, gsq, threads=threads)
        failed |= run.failed
        rot = np.exp(-1j * np.outer(run.times, quartic(N)))
        v = run.states - rot[None] * g[:, None, :]
        V[N] = v
        u = run.states * np.exp(1j * run.times[None, :, None] * gsq[:, None, :])
        z = rot[None] * np.exp(1j * run.times[None, :, None] * gsq[:, None, :]) * g[:, None, :]
        rep.statistics[f"N={N}"] = {
            "sup_v": np.max(np.linalg.norm(v, axis=-1), axis=1),
            "mass": np.sum(gsq, axis=1),
            "sup_u_minus_z": np.max(np.linalg.norm(u - z, axis=-1), axis=1),
            "phase_resolutions": run.resolutions,
        }
    rep.failures = int(failed.sum())
    ok = ~failed
    sup_med, mass_med = [], []
    for N in ladder:
        st = rep.statistics[f"N={N}"]
        sv, ms, uz = st.pop("sup_v")[ok], st.pop("mass")[ok], st.pop("sup_u_minus_z")[ok]
        st.update({"sup_v": _quartiles(sv), "mass": _quartiles(ms), "sup_u_minus_z": _quartiles(uz),
                   "ungauge_consistency": float(np.max(np.abs(uz - sv))) if sv.size else 0.0})
        sup_med.append(st["sup_v"]["median"])
        mass_med.append(st["mass"]["median"])
        rep.cells.append({"study": "residual", "N": N, "delta": spec.delta, "quantity": "sup_v", **st["sup_v"]})
        rep.cells.append({"study": "residual", "N": N, "delta": spec.delta, "quantity": "mass", **st["mass"]})
    diffs = []
    for a, b in zip(ladder, ladder[1:]):
        va = V[a][ok]
        vb = V[b][ok].copy()
        vb[:, :, b - a:b + a + 1] -= va
        d = np.max(np.linalg.norm(vb, axis=-1), axis=1)
        q = _quartiles(d)
        diffs.append(q["median"])
        rep.cells.append({"study": "residual", "N": b, "delta": spec.delta, "quantity": f"sup_v{b}-v{a}", **q})
    ratio = max(sup_med) / min(sup_med) if min(sup_med) > 0 else math.inf
    mass_ratio = [m / (2 * N + 1) for m, N in zip(mass_med, ladder)]
    rep.statistics.update({"median_sup_v": sup_med, "median_mass": mass_med, "median_differences": diffs})
    rep.verdict("residual_bounded", ratio < spec.bounded_ratio, ratio, spec.bounded_ratio,
                "max/min of median sup_t ||v^N|| across the ladder")
    rep.verdict("mass_growth", all(0.8 < r < 1.2 for r in mass_ratio), mass_ratio, [0.8, 1.2],
                "median ||u^N(0)||^2 / (2N+1) for every N")
    rep.verdict("cauchy_decreasing", bool(np.all(np.diff(diffs) < 0)), diffs, "strictly decreasing",
                "median sup_t ||v^{2N} - v^N|| strictly decreasing along the ladder")
    rep.verdict("integrator", failed.sum() == 0, int(failed.sum()), 0, "trajectories with non-finite values")
    return rep


# ---------------------------------------------------------------- resonant Strichartz scaling

Z1_TIME_NODES = 64


def dyadic_block(N: int) -> np.ndarray:
    """Modes of the block P_N: |n| <= 1 for N = 1, N <= |n| < 2N otherwise."""
    if N < 1 or N & (N - 1):
        raise ValueError("block index must be a power of two")
    if N == 1:
        return np.array([-1, 0, 1])
    pos = np.arange(N, 2 * N)
    return np.concatenate([-pos[::-1], pos])


def resonant_block_norm(ns: np.ndarray, c: np.ndarray, delta: float, nodes: int = Z1_TIME_NODES) -> np.ndarray:
    """||z||_{L^4([-delta, delta] x T)} for the resonant flow from coefficients c on modes ns.

    z_n(t) = exp(i t |c_n|^2 - i n^4 t) c_n.  The spatial integral is exact
    (grid longer than the frequency span of |z|^4); time uses the midpoint rule.
    ``c`` may carry a leading sample axis.
    """
    c = np.atleast_2d(c)
    span = int(ns.max() - ns.min())
    # |z|^4 has frequencies in [-2 span, 2 span]: a longer grid averages it exactly
    L = next_fast_len(2 * span + 1)
    tq = delta * (2 * (np.arange(nodes) + 0.5) / nodes - 1)
    om = ns.astype(float) ** 4
    idx = (ns - ns.min()) % L
    total = np.zeros(c.shape[0])
    for t in tq:
        zt = c * np.exp(1j * t * (np.abs(c) ** 2 - om))
        F = np.zeros((c.shape[0], L), dtype=np.complex128)
        F[:, idx] = zt
        x = ifft(F, axis=1) * L
        total += np.mean(np.abs(x) ** 4, axis=1)
    return (2 * delta * total / nodes) ** 0.25


def run_z1_scaling(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    """Fit log median ||P_N z||_{L^4} against log N for data g_n / <n>^alpha."""
    if spec.kind != "z1-scaling":
        raise ValueError("spec.kind must be 'z1-scaling'")
    ladder = sorted(set(spec.cutoffs))
    if len(ladder) < 2:
        raise ValueError("degenerate ladder: need at least two dyadic blocks to fit a slope")
    rep = ExperimentReport(spec.to_dict())
    M = spec.samples
    blocks = {N: dyadic_block(N) for N in ladder}

    def sample(j):
        seed = derive_trajectory_seed(spec.seed, j)
        return {N: gaussian_modes(seed, ns) for N, ns in blocks.items()}

    draws = _map(sample, range(M), threads)
    for alpha in spec.alphas:
        meds = []
        freqs = []
        for N, ns in blocks.items():
            c = np.stack([d[N] for d in draws]) / japanese(ns) ** alpha
            norms = resonant_block_norm(ns, c, spec.delta)
            if not np.all(norms > 0):
                raise ValueError(f"degenerate block {N}: zero norm")
            thr = N ** (0.5 - alpha + spec.epsilon)
            freq = float(np.mean(norms > thr))
            q = _quartiles(norms)
            meds.append(q["median"])
            freqs.append(freq)
            rep.cells.append({"study": "z1-scaling", "alpha": alpha, "N": N, "threshold": thr,
                              "exceedance": freq, **q})
        fit = stats_kit(np.log(ladder), "slope-fit", np.log(meds))
        target = 0.5 - alpha
        key = f"alpha={alpha:g}"
        rep.statistics[key] = {"slope": fit.statistic, "slope_stderr": fit.stderr, "target": target,
                               "medians": meds, "exceedance": freqs}
        rep.verdict(f"{key}:slope", abs(fit.statistic - target) <= spec.slope_window, fit.statistic,
                    [target - spec.slope_window, target + spec.slope_window],
                    "least-squares slope of log median L^4 norm vs log N")
        decays = bool(np.all(np.diff(freqs) <= 0) and freqs[-1] < freqs[0])
        rep.verdict(f"{key}:exceedance", decays, freqs, "non-increasing, last < first",
                    f"frequency of ||P_N z|| > N^(1/2-alpha+{spec.epsilon:g})")
    return rep


# ---------------------------------------------------------------- cancellation

COARSENINGS = (1, 2, 4, 8)


def run_cancellation(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    """Energy-increment identity and iterated Duhamel identity along gauged trajectories.

    Every sample is one gauged flow sampled at every integrator step.  The
    first sample is also coarsened by 2, 4 and 8 to measure the quadrature
    order.
    """
    if spec.kind != "cancellation":
        raise ValueError("spec.kind must be 'cancellation'")
    rep = ExperimentReport(spec.to_dict())
    t_end = max(spec.times) if spec.times else 0.2
    for N in spec.cutoffs:
        flow = FlowSpec("gauged", N, t_end, sample_stride=1, phase_resolution=spec.phase_resolution,
                        halving="probe", halving_rtol=spec.halving_rtol, max_steps=spec.max_steps)

        def one(j):
            e = GaussianEnsemble(derive_trajectory_seed(spec.seed, j), N)
            rec = evolve_truncated(e.field(), flow, e)
            w = SpaceTimeField.from_record(rec)
            ph = RandomPhaseSpec(e, N)
            viol = float(np.max(np.abs(cancellation_violation(w, ph))))
            gap = float(np.max(np.linalg.norm(quintic_duhamel_series(w, ph) - resonant_duhamel_series(w, ph),
                                              axis=-1)))
            coarse = []
            if j == 0:
                for k in COARSENINGS:
                    wk = SpaceTimeField(N, w.times[::k], w.values[::k])
                    coarse.append(float(np.max(np.abs(cancellation_violation(wk, ph)))))
            return viol, gap, coarse, rec.diagnostics["dt"], len(rec)

        out = _map(one, range(spec.samples), threads)
        viol = np.array([o[0] for o in out])
        gaps = np.array([o[1] for o in out])
        coarse = out[0][2]
        order = stats_kit(np.log(COARSENINGS), "slope-fit", np.log(coarse)).statistic
        for j, o in enumerate(out):
            rep.cells.append({"study": "cancellation", "N": N, "sample": j, "violation": o[0],
                              "duhamel_gap": o[1], "dt": o[3], "time_samples": o[4]})
        key = f"N={N}"
        rep.statistics[key] = {"max_violation": float(viol.max()), "violation": _quartiles(viol),
                               "max_duhamel_gap": float(gaps.max()), "duhamel_gap": _quartiles(gaps),
                               "coarsening": list(COARSENINGS), "coarse_violation": coarse,
                               "fitted_order": order, "t_end": t_end}
        rep.verdict(f"{key}:identity", viol.max() < spec.tolerance, float(viol.max()), spec.tolerance,
                    "max | |w_n(t)|^2 - |g_n|^2 - E_n(t) | over modes, times, samples")
        rep.verdict(f"{key}:duhamel", gaps.max() < spec.tolerance, float(gaps.max()), spec.tolerance,
                    "max_t || I2-tilde - I2 ||_{L^2} over samples")
        rep.verdict(f"{key}:simpson_order", 3.0 <= order <= 5.0, order, [3.0, 5.0],
                    "log-log slope of violation vs time-grid coarsening factor")
    return rep


# ---------------------------------------------------------------- functional tails

def run_functional_tails(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    """Two-scale comparison S_j(delta) / S_j(delta/2) over white noise samples."""
    if spec.kind != "functional-tails":
        raise ValueError("spec.kind must be 'functional-tails'")
    rep = ExperimentReport(spec.to_dict())
    fine = FunctionalSpec(s=spec.s, b=spec.b, delta=spec.delta, box=spec.box)
    half = replace(fine, delta=spec.delta / 2)

    def one(r):
        e = GaussianEnsemble(derive_trajectory_seed(spec.seed, r), spec.box)
        return [(s_functional(j, fine, e), s_functional(j, half, e)) for j in (1, 2, 3)]

    out = _map(one, range(spec.samples), threads)
    for j in (1, 2, 3):
        a = np.array([o[j - 1][0] for o in out])
        b = np.array([o[j - 1][1] for o in out])
        ratio = a / b
        for r in range(spec.samples):
            rep.cells.append({"study": "functional-tails", "j": j, "sample": r, "S_delta": a[r],
                              "S_half": b[r], "ratio": ratio[r]})
        q = _quartiles(ratio)
        rep.statistics[f"S{j}"] = {"ratio": q, "S_delta": _quartiles(a), "S_half": _quartiles(b)}
        rep.verdict(f"S{j}:two_scale", q["median"] > 1, q["median"], 1.0,
                    f"median S_{j}(delta)/S_{j}(delta/2) over samples")
    return rep


RUNNERS = {
    "invariance": run_invariance,
    "convergence": run_convergence,
    "residual": run_residual,
    "z1-scaling": run_z1_scaling,
    "cancellation": run_cancellation,
    "functional-tails": run_functional_tails,
}


def run_study(spec: StudySpec, threads: int = 1) -> ExperimentReport:
    return RUNNERS[spec.kind](spec, threads)
