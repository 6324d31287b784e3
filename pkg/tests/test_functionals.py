import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quartic_nls.dynamics import FlowSpec, evolve_truncated
from quartic_nls.functionals import (EtaCutoff, FunctionalSpec, QuadratureError, RandomPhaseSpec, SpaceTimeField,
                                     cancellation_violation, energy_density, energy_increment,
                                     energy_increments, free_lebesgue4_exact, functional_terms, gauged_n1_series,
                                     gauged_nonlin, gauged_residual, lebesgue4_norm, linear_xsb_constant,
                                     multilinear_second_moment, nonlin_split, pairing_gram, quintic_duhamel,
                                     quintic_duhamel_series, random_xsb_norm, resonant_duhamel,
                                     resonant_duhamel_series, s_functional, strichartz_grid, strichartz_ratio,
                                     xsb_norm)
from quartic_nls.randomness import GaussianEnsemble, sample_data
from quartic_nls.spectral import NormSpec, SpectralField, norm, renormalized_nonlinearity


@pytest.fixture(scope="module")
def gauged_path():
    e = GaussianEnsemble(21, 8)
    rec = evolve_truncated(e.field(), FlowSpec("gauged", 8, 0.1, sample_stride=1), e)
    return SpaceTimeField.from_record(rec), RandomPhaseSpec(e)


# ---------------------------------------------------------------- nonlinearities

@given(st.integers(0, 12), st.integers(0, 2**32 - 1))
def test_split_sums_to_renormalized(N, seed):
    u = sample_data(seed, N)
    a, b = nonlin_split(u)
    ref = renormalized_nonlinearity(u).coeffs
    assert np.max(np.abs(a.coeffs + b.coeffs - ref), initial=0) < 1e-12 * max(1.0, np.max(np.abs(ref)))


@settings(deadline=None)
@given(st.integers(0, 12), st.integers(0, 2**32 - 1), st.floats(-2, 2))
def test_gauged_nonlin_methods_agree(N, seed, t):
    e = GaussianEnsemble(seed, N)
    w = sample_data(seed + 1, N)
    ph = RandomPhaseSpec(e)
    x1, x2 = gauged_nonlin(w, t, ph)
    y1, y2 = gauged_nonlin(w, t, ph, "fft")
    scale = max(1.0, np.max(np.abs(x1.coeffs)))
    assert np.max(np.abs(x1.coeffs - y1.coeffs)) < 1e-11 * scale
    assert np.array_equal(x2.coeffs, y2.coeffs)


def test_gauged_nonlin_without_phases_is_split():
    w = sample_data(4, 6)
    x1, _ = gauged_nonlin(w, 0.7, RandomPhaseSpec.zero(6))
    a, _ = nonlin_split(w)
    assert np.max(np.abs(x1.coeffs - a.coeffs)) < 1e-13
    with pytest.raises(ValueError):
        gauged_nonlin(w, 0.0, RandomPhaseSpec.zero(6), "direct")


def test_psi_value():
    e = GaussianEnsemble.injected([1.0, 2.0, 3.0, 4.0, 5.0])
    ph = RandomPhaseSpec(e)
    # n1=1, n2=0, n3=-2 -> n=-1: 16 - 9 + 1 - 4
    assert ph.psi(1, 0, -2) == pytest.approx(4.0)
    assert RandomPhaseSpec(e, cutoff=0).psi(1, 0, -2) == pytest.approx(-9.0)
    with pytest.raises(ValueError):
        RandomPhaseSpec(e, sign=0)


# ---------------------------------------------------------------- energy and Duhamel identities

@given(st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_energy_density_sums_to_zero(N, seed):
    # the non-resonant interaction exchanges mass between modes without creating it
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((3, 2 * N + 1)) + 1j * rng.standard_normal((3, 2 * N + 1))
    w = SpaceTimeField(N, [0.0, 0.1, 0.2], v)
    d = energy_density(w, RandomPhaseSpec(GaussianEnsemble(seed, N)))
    assert np.max(np.abs(d.sum(axis=1))) < 1e-12 * max(1.0, np.max(np.abs(d)))


def test_cancellation_along_trajectory(gauged_path):
    w, ph = gauged_path
    viol = cancellation_violation(w, ph)
    assert np.max(np.abs(viol)) < 1e-5
    j = w.times.size // 2
    E = energy_increments(w, ph)
    assert energy_increment(w, 3, w.times[j], ph) == E[j, 11]
    assert energy_increment(w, 3, 0.0, ph) == 0.0
    with pytest.raises(ValueError):
        energy_increment(w, 9, 0.0, ph)


def test_cancellation_order_under_coarsening(gauged_path):
    w, ph = gauged_path
    errs = []
    for k in (1, 2, 4):
        sub = SpaceTimeField(w.cutoff, w.times[::k], w.values[::k])
        errs.append(np.max(np.abs(cancellation_violation(sub, ph)[-1])))
    order = np.polyfit(np.log([1, 2, 4]), np.log(errs), 1)[0]
    assert 3 <= order <= 5


def test_duhamel_identity_and_control(gauged_path):
    w, ph = gauged_path
    gap = np.sqrt(np.sum(np.abs(quintic_duhamel_series(w, ph) - resonant_duhamel_series(w, ph)) ** 2, axis=1))
    assert np.max(gap) < 1e-5
    t = w.times[-1]
    a = quintic_duhamel(w, ph, t).coeffs - resonant_duhamel(w, ph, t).coeffs
    assert np.sqrt(np.sum(np.abs(a) ** 2)) == pytest.approx(gap[-1])
    assert np.all(quintic_duhamel(w, ph, 0.0).coeffs == 0)
    # a perturbed non-solution breaks the identity
    bent = SpaceTimeField(w.cutoff, w.times, w.values * (1 + 0.3 * np.sin(np.pi * w.times / 0.2))[:, None])
    gap = np.sqrt(np.sum(np.abs(quintic_duhamel_series(bent, ph) - resonant_duhamel_series(bent, ph)) ** 2, axis=1))
    assert np.max(gap) > 1e-2


def test_residual_small_on_solution(gauged_path):
    w, ph = gauged_path
    r = np.max(np.abs(gauged_residual(w, ph)))
    assert r < 1e-3 * np.max(np.abs(gauged_n1_series(w, ph)))
    bent = SpaceTimeField(w.cutoff, w.times, w.values * (1 + 0.3 * np.sin(np.pi * w.times / 0.2))[:, None])
    assert np.max(np.abs(gauged_residual(bent, ph))) > 100 * r


def test_quadrature_checks(gauged_path):
    w, ph = gauged_path
    with pytest.raises(QuadratureError):
        energy_increments(w, ph, tol=1e-30)
    short = SpaceTimeField(w.cutoff, w.times[:2], w.values[:2])
    with pytest.raises(QuadratureError):
        energy_increments(short, ph)
    late = SpaceTimeField(w.cutoff, w.times[1:], w.values[1:])
    with pytest.raises(ValueError):
        energy_increments(late, ph)


def test_spacetime_validation():
    with pytest.raises(ValueError):
        SpaceTimeField(1, [0.0, 0.1, 0.3], np.zeros((3, 3)))
    with pytest.raises(ValueError):
        SpaceTimeField(1, [0.0, 0.1], np.zeros((2, 2)))
    w = SpaceTimeField(1, [0.0, 0.1, 0.2], np.zeros((3, 3)))
    assert w.time_index(0.2) == 2
    with pytest.raises(ValueError):
        w.time_index(0.15)


# ---------------------------------------------------------------- time cutoff

def test_eta_cutoff_shape():
    win = EtaCutoff(0.1)
    t = np.linspace(-0.3, 0.3, 601)
    e = win.eta(t)
    assert np.all(e[np.abs(t) <= 0.1] == 1) and np.all(e[np.abs(t) >= 0.2] == 0)
    assert win.eta_hat(0.0) == pytest.approx(0.3, rel=1e-12)
    with pytest.raises(ValueError):
        EtaCutoff(0.0)


def test_eta_hat_matches_direct_transform():
    win = EtaCutoff(0.5)
    t = np.linspace(-1, 1, 200001)
    for tau in (0.0, 1.3, 7.0):
        direct = np.trapezoid(win.eta(t) * np.cos(tau * t), t)
        assert win.eta_hat(tau) == pytest.approx(direct, abs=1e-9)


# ---------------------------------------------------------------- X^{s,b} and L^4

@pytest.mark.parametrize("delta", [0.5, 0.1, 0.01])
@pytest.mark.parametrize("b", [0.0, 5 / 16, 0.45])
def test_xsb_of_free_flow_has_closed_form(delta, b):
    win = EtaCutoff(delta)
    f = sample_data(3, 6)
    w = SpaceTimeField.linear(f, np.linspace(-2 * delta, 2 * delta, 4001))
    ref = norm(f, NormSpec(0.5)) * linear_xsb_constant(win, b)
    assert xsb_norm(w, 0.5, b, win, center=0.0) == pytest.approx(ref, rel=1e-8)


def test_xsb_monotone_and_random_variant():
    win = EtaCutoff(0.1)
    rng = np.random.default_rng(0)
    times = np.linspace(0, 0.4, 801)
    v = rng.standard_normal((801, 9)) * 0.1 + np.exp(-1j * np.outer(times, np.arange(-4, 5) ** 4.0))
    w = SpaceTimeField(4, times, v)
    bs = [xsb_norm(w, 0.0, b, win) for b in (0.0, 0.2, 0.45)]
    ss = [xsb_norm(w, s, 0.3, win) for s in (-0.5, 0.0, 0.5)]
    assert bs == sorted(bs) and ss == sorted(ss)
    zero = RandomPhaseSpec.zero(4)
    assert random_xsb_norm(w, 0.0, 0.3, zero, win) == pytest.approx(xsb_norm(w, 0.0, 0.3, win), rel=1e-12)
    with pytest.raises(ValueError):
        xsb_norm(w, 0.0, 0.3, EtaCutoff(0.2))  # window wider than the data


def test_random_xsb_equals_shifted_free_flow():
    # e^{-i t (n^4 + g)} f has its modulation centred where the random weight is flat
    e = GaussianEnsemble(5, 4)
    ph = RandomPhaseSpec(e)
    win = EtaCutoff(0.1)
    f = sample_data(6, 4)
    times = np.linspace(-0.2, 0.2, 2001)
    gsq = e.intensities()
    v = np.exp(-1j * np.outer(times, np.arange(-4, 5) ** 4.0 + gsq)) * f.coeffs
    w = SpaceTimeField(4, times, v)
    ref = norm(f) * linear_xsb_constant(win, 0.4)
    assert random_xsb_norm(w, 0.0, 0.4, ph, win, center=0.0) == pytest.approx(ref, rel=1e-8)
    assert random_xsb_norm(w, 0.0, 0.4, ph, win, sign=-1, center=0.0) > ref * (1 + 1e-3)


def test_lebesgue4_matches_quadruple_sum():
    win = EtaCutoff(0.01)
    f = sample_data(5, 8)
    w = SpaceTimeField.linear(f, strichartz_grid(8, win))
    assert lebesgue4_norm(w, win, 0.0) == pytest.approx(free_lebesgue4_exact(f, win), rel=1e-12)
    assert 0 < strichartz_ratio(w, win, 0.0) < 10


def test_strichartz_zero_denominator():
    win = EtaCutoff(0.01)
    w = SpaceTimeField.linear(SpectralField.zeros(3), strichartz_grid(3, win))
    with pytest.raises(ZeroDivisionError):
        strichartz_ratio(w, win, 0.0)


# ---------------------------------------------------------------- S functionals

@pytest.mark.parametrize("j", [1, 2, 3])
def test_s_functional_bandlimited_matches_grid(j):
    spec = FunctionalSpec(delta=0.2, box=2)
    e = GaussianEnsemble(13, 2)
    a = s_functional(j, spec, e)
    b = s_functional(j, spec, e, method="grid")
    assert a > 0 and a == pytest.approx(b, rel=1e-9)


@pytest.mark.parametrize("j", [1, 2, 3])
def test_s_functional_vanishes_when_projected_away(j):
    e = GaussianEnsemble(13, 4)
    spec = FunctionalSpec(box=4, projections=(4, 4, 4))
    assert s_functional(j, spec, e) == 0.0


def test_s1_monotone_in_projection():
    e = GaussianEnsemble(2, 6)
    vals = [s_functional(1, FunctionalSpec(box=6, projections=(k, -1, -1)), e) for k in (-1, 0, 2, 4, 6)]
    assert all(a >= b for a, b in zip(vals, vals[1:])) and vals[-1] == 0


def test_functional_term_structure():
    # S_1 has one tuple per outer index; S_3 groups all of Gamma(n) under n
    assert all(len(tuples) == 1 for _, tuples in functional_terms(1, 3))
    t3 = functional_terms(3, 3)
    assert sorted(k[0] for k, _ in t3) == list(range(-3, 4))
    for (n,), tuples in t3:
        assert all(a - b + c == n and a != n and c != n for a, b, c in tuples)
    with pytest.raises(ValueError):
        functional_terms(4, 3)


def test_functional_validation():
    with pytest.raises(ValueError):
        FunctionalSpec(box=25)
    with pytest.raises(ValueError):
        FunctionalSpec(projections=(0, 0))
    with pytest.raises(ValueError):
        s_functional(1, FunctionalSpec(box=8), GaussianEnsemble(1, 4))
    with pytest.raises(ValueError):
        s_functional(0, FunctionalSpec(box=2), GaussianEnsemble(1, 2))


# ---------------------------------------------------------------- second moments

CASES = [
    ({(1, 0, 1): 1.0}, {1: 0, 2: 0, 3: 0}),
    ({(1, 0, 2): 1.0}, {1: 0, 2: 0, 3: 0}),
    ({(1, 0, 2): 1.0}, {1: 0, 2: 1, 3: 0}),
    ({(1, 0, 2): 1.0, (2, 0, 1): 0.5, (0, -2, 1): 1j}, {1: 1, 2: 0, 3: 0}),
    ({(1, 0, 2): 1.0, (2, 0, 1): -1.0}, {1: 0, 2: 0, 3: 0}),
]


@pytest.mark.parametrize("coeffs,powers", CASES)
def test_second_moment_matches_pairings(coeffs, powers):
    r = multilinear_second_moment(coeffs, powers, 20000, seed=3)
    assert abs(r.mc - r.exact) <= 3 * r.stderr + 1e-12
    assert r.exact <= r.bound * (1 + 1e-12)


def test_pairing_values():
    # E|g_1 conj(g_0) g_2|^2 = 1, E| |g|^2 g |^2 = 3! = 6
    assert pairing_gram([(1, 0, 2)], {1: 0, 2: 0, 3: 0})[0, 0] == 1
    assert pairing_gram([(1, 0, 2)], {1: 1})[0, 0] == 6
    # g_1 conj(g_0) g_1 has E|.|^2 = E|g_1|^4 = 2
    assert pairing_gram([(1, 0, 1)], {1: 0, 2: 0, 3: 0})[0, 0] == 2
    G = pairing_gram([(1, 0, 2), (2, 0, 1)], {1: 0, 2: 0, 3: 0})
    assert np.array_equal(G, np.ones((2, 2)))


def test_second_moment_validation():
    with pytest.raises(ValueError):
        multilinear_second_moment({(1, 0, 2): 1.0}, {}, 10)
    with pytest.raises(ValueError):
        multilinear_second_moment({(0, 0, 2): 1.0}, {1: 0}, 10)
    with pytest.raises(ValueError):
        multilinear_second_moment({(1, 0, 2): 1.0, (2, 0, 2): 1.0}, {1: 0}, 10)
    r = multilinear_second_moment({(1, 0, 2): 0.0}, {1: 0}, 10)
    assert (r.mc, r.exact) == (0.0, 0.0)
    assert math.isfinite(multilinear_second_moment({(1, 0, 2): 1.0}, {1: 0}, 2).stderr)
