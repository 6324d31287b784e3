"""Acceptance criteria at their stated scales and tolerances.

Every criterion prints one ``PASS`` or ``FAIL`` line; the lines are repeated in
the pytest terminal summary.  Run directly (``python tests/test_acceptance.py``)
to get only the fourteen lines.
"""
import json
import math
import subprocess
import sys
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from quartic_nls.dynamics import (FlowSpec, StepBudgetError, evolve_truncated, gauge_deterministic,
                                  resonant_flow_exact, resonant_ode_oracle)
from quartic_nls.experiments import default_spec, run_study
from quartic_nls.functionals import (RandomPhaseSpec, SpaceTimeField, multilinear_second_moment,
                                     quintic_duhamel_series, resonant_duhamel_series)
from quartic_nls.randomness import GaussianEnsemble, derive_trajectory_seed
from quartic_nls.spectral import SpectralField, cubic_product, cubic_product_direct, gamma_enumerate, phase_mismatches

pytestmark = pytest.mark.slow

RESULTS: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"AC{number:02d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return passed


def l2(x, axis=-1):
    return np.sqrt(np.sum(np.abs(x) ** 2, axis=axis))


def failed_verdicts(rep) -> str:
    bad = [f"{k}={v['value']}" for k, v in rep.verdicts.items() if not v["passed"]]
    return "; ".join(bad) if bad else "all verdicts pass"


# ---------------------------------------------------------------- 1-5: exact checks

def test_ac01_phase_factorization():
    t0 = time.perf_counter()
    bad, total = phase_mismatches(50)
    secs = time.perf_counter() - t0
    ok = bad == 0 and total == 101**3 and secs < 5
    assert report(1, "phase factorization |n_i| <= 50", ok,
                  f"{bad} mismatches over {total} tuples in {secs:.2f} s (limit 5 s)")


def test_ac02_dealiasing():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        N = int(rng.integers(0, 33))
        f1, f2, f3 = (SpectralField(N, rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1))
                      for _ in range(3))
        ref = cubic_product_direct(f1, f2, f3).coeffs
        got = cubic_product(f1, f2, f3).coeffs
        worst = max(worst, float(np.max(np.abs(got - ref)) / np.max(np.abs(ref))))
    secs = time.perf_counter() - t0
    assert report(2, "dealiased cubic product vs triple sum", worst < 1e-12 and secs < 30,
                  f"max relative error {worst:.2e} (limit 1e-12), {secs:.1f} s (limit 30 s)")


def test_ac03_resonant_closed_form():
    e = GaussianEnsemble(3, 16)
    err = float(np.max(np.abs(resonant_flow_exact(e, 1.0).coeffs - resonant_ode_oracle(e, 1.0).coeffs)))
    assert report(3, "resonant closed form vs ODE oracle, N=16, t=1", err < 1e-9,
                  f"max mode error {err:.2e} (limit 1e-9)")


def test_ac04_gauge_equivalence():
    # smooth data: exponentially decaying coefficients
    rng = np.random.default_rng(4)
    n = np.arange(-16, 17)
    c = 0.5 * (rng.standard_normal(33) + 1j * rng.standard_normal(33)) * np.exp(-0.3 * np.abs(n))
    f = SpectralField(16, c)
    spec = FlowSpec("original", 16, 1.0, sample_stride=25)
    u1 = evolve_truncated(f, spec)
    u2 = evolve_truncated(f, replace(spec, variant="renormalized"))
    gap = float(np.max(l2(gauge_deterministic(u1).states - u2.states)))
    assert report(4, "deterministic gauge maps the cubic flow to the renormalized flow, N=16, t<=1",
                  gap < 1e-6, f"sup_t L2 gap {gap:.2e} over {len(u1)} samples (limit 1e-6)")


def test_ac05_mass_conservation():
    e = GaussianEnsemble(5, 32)
    drifts = {}
    for variant in ("original", "renormalized", "resonant", "gauged", "nonresonant"):
        rec = evolve_truncated(e.field(), FlowSpec(variant, 32, 1.0, sample_stride=20_000), e)
        m = rec.masses()
        drifts[variant] = float(np.max(np.abs(m - m[0])) / m[0])
    worst = max(drifts.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in drifts.items())
    assert report(5, "mass drift over [0, 1] at N=32", worst < 1e-8, f"{detail} (limit 1e-8)")


# ---------------------------------------------------------------- 6-7: gauged identities

@lru_cache(maxsize=1)
def cancellation_report():
    return run_study(default_spec("cancellation"))


def test_ac06_cancellation_identity():
    rep = cancellation_report()
    st = rep.statistics["N=12"]
    ok = rep.verdicts["N=12:identity"]["passed"] and rep.verdicts["N=12:simpson_order"]["passed"]
    assert report(6, "energy-increment cancellation, N=12, t<=0.2, M=50", ok,
                  f"max violation {st['max_violation']:.2e} (limit 1e-5); coarsening 1,2,4,8 gives "
                  + ", ".join(f"{v:.1e}" for v in st["coarse_violation"])
                  + f", fitted order {st['fitted_order']:.2f} (Simpson: within [3, 5])")


def test_ac07_iterated_duhamel():
    rep = cancellation_report()
    gap = rep.statistics["N=12"]["max_duhamel_gap"]
    # control: the first sample bent into a non-solution
    spec = default_spec("cancellation")
    e = GaussianEnsemble(derive_trajectory_seed(spec.seed, 0), 12)
    rec = evolve_truncated(e.field(), FlowSpec("gauged", 12, 0.2, sample_stride=1), e)
    bend = 1 + 0.3 * np.sin(np.pi * rec.times / 0.2)
    w = SpaceTimeField(12, rec.times, rec.states * bend[:, None])
    ph = RandomPhaseSpec(e, 12)
    control = float(np.max(l2(quintic_duhamel_series(w, ph) - resonant_duhamel_series(w, ph))))
    ok = gap < 1e-5 and control > 1e-2
    assert report(7, "iterated Duhamel identity", ok,
                  f"max gap on trajectories {gap:.2e} (limit 1e-5); perturbed control gap {control:.2e} "
                  "(must exceed 1e-2)")


# ---------------------------------------------------------------- 8-11: ensemble studies

def test_ac08_measure_invariance():
    spec = default_spec("invariance", cutoffs=(16,), times=(0.25, 0.5, 1.0), samples=2000)
    t0 = time.perf_counter()
    rep = run_study(spec)
    secs = time.perf_counter() - t0
    corr = max(v["value"] for k, v in rep.verdicts.items() if k.endswith(":correlation"))
    rej = sum(v["value"] for k, v in rep.verdicts.items() if k.endswith(":ks") or k.endswith(":phase"))
    ok = rep.passed and secs <= 600
    assert report(8, "white noise invariance, N=16, t in {0.25, 0.5, 1}, M=2000", ok,
                  f"{rej} FDR rejections at 1%, max |correlation| {corr:.4f} (limit {4 / math.sqrt(2000):.4f}), "
                  f"{secs:.0f} s (limit 600 s); {failed_verdicts(rep)}")


def test_ac09_residual_structure():
    rep = run_study(default_spec("residual"))
    assert report(9, "residual bounded while mass grows, ladder 8..64, M=200", rep.passed,
                  f"sup-norm ratio {rep.verdicts['residual_bounded']['value']:.3f} (limit 1.5); "
                  f"mass/(2N+1) {np.round(rep.verdicts['mass_growth']['value'], 3).tolist()}; "
                  f"Cauchy differences {np.round(rep.verdicts['cauchy_decreasing']['value'], 4).tolist()}; "
                  f"{failed_verdicts(rep)}")


@pytest.mark.xfail(raises=StepBudgetError, strict=True,
                   reason="N_sim=256 needs ~8.6e7 integrator steps per trajectory and rung; see notes")
def test_ac10_gauged_convergence():
    spec = default_spec("convergence")
    try:
        rep = run_study(spec)
    except StepBudgetError as err:
        report(10, "gauged convergence, N_sim=256, m=4..64, M=100", False, f"not run to completion: {err}")
        raise
    assert report(10, "gauged convergence, N_sim=256, m=4..64, M=100", rep.passed, failed_verdicts(rep))


def test_ac11_resonant_strichartz_scaling():
    rep = run_study(default_spec("z1-scaling"))
    slopes = {k: v["value"] for k, v in rep.verdicts.items() if k.endswith(":slope")}
    detail = ", ".join(f"{k.split(':')[0]} slope {v:.3f}" for k, v in slopes.items())
    assert report(11, "resonant L4 block scaling, N<=1024, M=500", rep.passed,
                  f"{detail} (targets 1/2 - alpha +- 0.1); {failed_verdicts(rep)}")


# ---------------------------------------------------------------- 12-14

def second_moment_cases():
    cases = []
    for t in ((1, 0, 2), (1, 0, 1), (2, -1, 0)):
        for k in np.ndindex(2, 2, 2):
            cases.append(({t: 1.0}, {1: k[0], 2: k[1], 3: k[2]}))
    rng = np.random.default_rng(12)
    for n in (0, 1):
        tuples = [(p.n1, p.n2, p.n3) for p in gamma_enumerate(n, 2)]
        coeffs = {t: complex(rng.standard_normal(), rng.standard_normal()) for t in tuples}
        for powers in ({1: 0, 2: 0, 3: 0}, {1: 1, 3: 0}, {1: 1, 2: 1, 3: 1}):
            cases.append((coeffs, powers))
    return cases


def test_ac12_multilinear_second_moments():
    worst, misses = 0.0, []
    for i, (coeffs, powers) in enumerate(second_moment_cases()):
        r = multilinear_second_moment(coeffs, powers, 20000, seed=100 + i)
        z = abs(r.mc - r.exact) / r.stderr
        worst = max(worst, z)
        if not abs(r.mc - r.exact) <= 3 * r.stderr:
            misses.append(i)
    n = len(second_moment_cases())
    assert report(12, "Monte Carlo second moments vs exact pairings", not misses,
                  f"{n} cases, worst |mc - exact| = {worst:.2f} standard errors (limit 3); misses {misses}")


def test_ac13_functional_two_scale():
    rep = run_study(default_spec("functional-tails"))
    med = {k: v["value"] for k, v in rep.verdicts.items()}
    detail = ", ".join(f"{k.split(':')[0]} {v:.3f}" for k, v in med.items())
    assert report(13, "S_j(delta)/S_j(delta/2) medians, delta=0.2, box 16, M=200", rep.passed,
                  f"{detail} (each must exceed 1)")


REPRO = {
    "invariance": ["--N", "6", "--t", "0.1", "--samples", "80", "--control", "true"],
    "convergence": ["--N", "16", "--t", "0.02", "--ladder", "2,4", "--samples", "4"],
    "residual": ["--N", "4,8", "--samples", "6"],
    "z1-scaling": ["--N", "4,8,16,32", "--samples", "30"],
    "cancellation": ["--N", "6", "--t", "0.05", "--samples", "2"],
    "functional-tails": ["--box", "3", "--samples", "5"],
}


def test_ac14_reproducibility(tmp_path):
    same = []
    for kind, extra in REPRO.items():
        outs = []
        for run, threads in (("a", "1"), ("b", "2")):
            out = tmp_path / kind / run
            cmd = [sys.executable, "-m", "quartic_nls.cli", "study", "--kind", kind, "--seed", "11",
                   "--threads", threads, "--out", str(out)] + extra
            proc = subprocess.run(cmd, capture_output=True, text=True)
            assert proc.returncode in (0, 1), proc.stderr
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same.append(outs[0] == outs[1] and set(outs[0]) == {"report.json", "cells.csv"})
    config = json.loads((tmp_path / "z1-scaling" / "a" / "report.json").read_text())["config"]
    ok = all(same) and "threads" not in json.dumps(config)
    assert report(14, "study reruns are byte-identical", ok,
                  f"{sum(same)}/{len(same)} study kinds identical across reruns (threads 1 vs 2)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
