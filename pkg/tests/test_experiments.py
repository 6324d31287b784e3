import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quartic_nls.dynamics import StepBudgetError
from quartic_nls.experiments import (ExperimentReport, StudySpec, benjamini_hochberg, default_spec, dyadic_block,
                                     evolve_ensemble, max_complex_correlation, mollifier_distances,
                                     resonant_block_norm, run_study, stats_kit)
from quartic_nls.randomness import sample_batch


# ---------------------------------------------------------------- stats kit

def test_constant_samples_rejected():
    for test in ("ks-exp1", "phase-uniform"):
        with pytest.raises(ValueError):
            stats_kit(np.ones(10), test)
    with pytest.raises(ValueError):
        stats_kit(np.ones(10), "slope-fit", np.arange(10.0))
    with pytest.raises(ValueError):
        stats_kit([1.0], "ks-exp1")
    with pytest.raises(ValueError):
        stats_kit([1.0, math.nan], "ks-exp1")
    with pytest.raises(ValueError):
        stats_kit(np.arange(3.0), "anova")
    with pytest.raises(ValueError):
        stats_kit(np.arange(3.0), "correlation")


def test_slope_fit_exact_line():
    x = np.log(np.array([4.0, 8, 16, 32]))
    r = stats_kit(x, "slope-fit", 0.25 * x + 1)
    assert r.statistic == pytest.approx(0.25, abs=1e-12)
    two = stats_kit(x[:2], "slope-fit", 3 * x[:2])
    assert two.statistic == pytest.approx(3.0) and math.isnan(two.p_value)


def test_ks_and_phase_tests_on_exact_samples():
    rng = np.random.default_rng(0)
    assert stats_kit(rng.exponential(size=5000), "ks-exp1").p_value > 1e-3
    assert stats_kit(rng.exponential(2.0, size=5000), "ks-exp1").p_value < 1e-10
    # branch of the angle does not matter
    a = rng.uniform(-np.pi, np.pi, 5000)
    assert stats_kit(a, "phase-uniform").p_value == pytest.approx(stats_kit(a + 2 * np.pi, "phase-uniform").p_value)
    assert stats_kit(rng.uniform(0, 1, 5000), "phase-uniform").p_value < 1e-10


def test_correlation_real_and_complex():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(400)
    assert stats_kit(x, "correlation", 2 * x + 1).statistic == pytest.approx(1.0)
    z = rng.standard_normal(400) + 1j * rng.standard_normal(400)
    assert stats_kit(z, "correlation", 1j * z).statistic == pytest.approx(1.0)
    w = rng.standard_normal(400) + 1j * rng.standard_normal(400)
    r = stats_kit(z, "correlation", w)
    assert r.statistic < 4 / math.sqrt(400) and 0 < r.p_value <= 1


def test_benjamini_hochberg_examples():
    p = [0.01, 0.03, 0.02, 0.2]
    # sorted thresholds at 5%: 0.0125, 0.025, 0.0375, 0.05
    assert benjamini_hochberg(p, 0.05).tolist() == [True, True, True, False]
    assert benjamini_hochberg([0.01, 0.04, 0.03, 0.2], 0.05).tolist() == [True, False, False, False]
    assert benjamini_hochberg(p, 0.01).tolist() == [False, False, False, False]
    assert benjamini_hochberg([], 0.05).size == 0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.001, 0.5))
def test_benjamini_hochberg_properties(p, level):
    rej = benjamini_hochberg(p, level)
    p = np.asarray(p)
    # rejections form a lower set in p and include every Bonferroni rejection
    if rej.any():
        assert np.max(p[rej]) <= np.min(p[~rej], initial=np.inf)
    assert np.all(rej[p <= level / p.size])


def test_max_complex_correlation():
    g = sample_batch(5, 4000, 3)
    assert max_complex_correlation(g) < 4 / math.sqrt(4000)
    g[:, 1] = g[:, 0]
    assert max_complex_correlation(g) == pytest.approx(1.0)


# ---------------------------------------------------------------- specs and reports

def test_spec_validation():
    with pytest.raises(ValueError):
        StudySpec(kind="nonsense")
    with pytest.raises(ValueError):
        StudySpec(kind="invariance", samples=1)
    with pytest.raises(ValueError):
        StudySpec(kind="invariance", fdr=0.0)
    with pytest.raises(ValueError):
        StudySpec(kind="invariance", times=(-1.0,))
    with pytest.raises(ValueError):
        default_spec("nonsense")
    s = default_spec("invariance", samples=10)
    assert s.cutoffs == (16,) and s.times == (0.25, 0.5, 1.0) and s.samples == 10
    assert json.loads(json.dumps(s.to_dict()))["times"] == [0.25, 0.5, 1.0]


def test_report_serialization(tmp_path):
    r = ExperimentReport(spec={"kind": "x"})
    assert not r.passed  # no verdicts yet
    r.verdict("a", True, np.float64(0.5), 1.0, "value < threshold")
    r.cells.append({"N": 4, "value": 0.1})
    r.cells.append({"N": 8, "value": 0.2, "extra": "y"})
    assert r.passed
    paths = r.write(tmp_path, extra={"note": 1})
    data = json.loads(paths["report"].read_text())
    assert data["note"] == 1 and data["verdicts"]["a"]["value"] == 0.5
    assert paths["cells"].read_text().splitlines()[0] == "N,value,extra"
    r.verdict("b", False, 2.0, 1.0, "value < threshold")
    assert not r.passed


# ---------------------------------------------------------------- building blocks

def test_dyadic_block_and_resonant_norm():
    assert dyadic_block(1).tolist() == [-1, 0, 1]
    assert sorted(np.abs(dyadic_block(8)).tolist()) == sorted(2 * list(range(8, 16)))
    ns = dyadic_block(4)
    # a single mode has |z(t, x)| = |c| for every t, x
    c = np.zeros((1, ns.size), dtype=complex)
    c[0, 2] = 2.0
    val = resonant_block_norm(ns, c, 0.1)
    assert val[0] == pytest.approx((2 * 0.1 * 16) ** 0.25, rel=1e-12)


def test_mollifier_distances_shape_and_decay():
    g = sample_batch(3, 200, 128)
    d = mollifier_distances(g, 128, (8, 16, 32, 64), -0.6)
    assert d.shape == (200, 4)
    assert np.all(np.diff(np.median(d, axis=0)) < 0)
    with pytest.raises(ValueError):
        mollifier_distances(g, 128, (4,), -0.6, kind="gauss")


def test_ensemble_independent_of_threads():
    spec = default_spec("invariance", samples=70, phase_resolution=2.0, halving_rtol=1e-6)
    U0 = sample_batch(1, 70, 4)
    a = evolve_ensemble(U0, "renormalized", (0.05, 0.1), spec, threads=1)
    b = evolve_ensemble(U0, "renormalized", (0.05, 0.1), spec, threads=2)
    assert a.states.shape == (70, 2, 9) and not a.failed.any()
    assert np.array_equal(a.states, b.states)
    m = np.sum(np.abs(a.states) ** 2, axis=-1)
    assert np.allclose(m[:, 1], np.sum(np.abs(U0) ** 2, axis=-1), rtol=1e-5)


# ---------------------------------------------------------------- small studies

SMALL = {
    "invariance": dict(cutoffs=(6,), times=(0.1,), samples=200, control=True),
    "residual": dict(cutoffs=(4, 8), samples=20),
    "z1-scaling": dict(cutoffs=(4, 8, 16, 32, 64), samples=50),
    "cancellation": dict(cutoffs=(6,), times=(0.05,), samples=3),
    "functional-tails": dict(box=4, samples=20),
    "convergence": dict(cutoffs=(32,), ladder=(2, 4, 8), samples=30),
}


@pytest.mark.parametrize("kind", sorted(SMALL))
def test_small_study_runs_and_passes(kind):
    spec = default_spec(kind, **SMALL[kind])
    rep = run_study(spec)
    assert rep.verdicts, kind
    failed = {k: v for k, v in rep.verdicts.items() if not v["passed"]}
    assert not failed, failed
    for v in rep.verdicts.values():
        assert set(v) == {"passed", "value", "threshold", "rule"}
    assert rep.cells
    if spec.control:
        # the coloured non-invariant data must be flagged
        assert any(k.endswith("control_detected") for k in rep.verdicts)


def test_study_reports_are_reproducible():
    spec = default_spec("functional-tails", box=3, samples=6)
    a, b = run_study(spec), run_study(spec, threads=3)
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()


def test_convergence_budget_enforced():
    spec = default_spec("convergence", samples=2)
    with pytest.raises(StepBudgetError):
        run_study(spec)
