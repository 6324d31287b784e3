# coding: utf-8

# # Truncated flows and the two gauges
#
# The resonant flow only rotates each mode, at the speed |c_n|^2, so it has
# a closed form.  We check it against a generic ODE solver before
# trusting it anywhere else.

import numpy as np

from quartic_nls import (FlowSpec, GaussianEnsemble, evolve_truncated, gauge_deterministic, gauge_random,
                         resonant_flow_exact, resonant_ode_oracle, sample_data)

g = sample_data(2, 16)
exact = resonant_flow_exact(g, 1.0)
ode = resonant_ode_oracle(g, 1.0)
print("closed form vs ODE:", np.max(np.abs(exact.coeffs - ode.coeffs)))

# The full flow needs a step below 1 / max|Phi|.  The integrator picks it
# and reruns part of the horizon at half the step.  If the two runs disagree,
# it raises instead of returning a wrong answer.

N, t = 6, 0.1
g = sample_data(4, N)
orig = evolve_truncated(g, FlowSpec("original", N, t, sample_stride=200))
renorm = evolve_truncated(g, FlowSpec("renormalized", N, t, sample_stride=200))
print(orig.diagnostics["steps"], "steps, halving estimate", orig.diagnostics["halving_estimate"])
print("mass drift:", np.ptp(orig.masses()))

# Mass is conserved, so renormalizing only multiplies the solution by a
# time-dependent unimodular factor.

back = gauge_deterministic(orig, "forward")
print("deterministic gauge gap:", np.max(np.abs(back.states - renorm.states)))

# The random gauge removes the resonant rotation driven by |g_n|^2.  This
# gives the same trajectory as integrating the gauged equation directly.

e = GaussianEnsemble(4, N)
gauged = evolve_truncated(g, FlowSpec("gauged", N, t, sample_stride=200), e)
w = gauge_random(renorm, e)
print("random gauge gap:", np.max(np.abs(w.states - gauged.states)))

# Records round-trip through plain text.

text = gauged.dumps()
print(len(text.splitlines()), "lines;", type(gauged).loads(text).states.shape)
