# coding: utf-8

# # Energy cancellation, Duhamel terms and random functionals

import numpy as np

from quartic_nls import (EtaCutoff, FlowSpec, FunctionalSpec, GaussianEnsemble, RandomPhaseSpec, SpaceTimeField,
                         evolve_truncated, multilinear_second_moment, quintic_duhamel, resonant_duhamel,
                         s_functional, xsb_norm)
from quartic_nls.functionals import cancellation_violation

N, t = 6, 0.05
e = GaussianEnsemble(9, N)
rec = evolve_truncated(e.field(), FlowSpec("gauged", N, t, sample_stride=1), e)
w = SpaceTimeField.from_record(rec)
phases = RandomPhaseSpec(e)

# The energy of each gauged mode drifts from |g_n|^2 only through the
# non-resonant part.  Its time integral accounts for the whole drift, up to
# quadrature error.

print("cancellation:", np.max(np.abs(cancellation_violation(w, phases))))

# Along a gauged solution the quintic Duhamel term equals the resonant one.

a, b = quintic_duhamel(w, phases, t), resonant_duhamel(w, phases, t)
print("Duhamel gap:", np.max(np.abs(a.coeffs - b.coeffs)))

# X^{s,b} norms are computed in time frequency with a smooth window.

window = EtaCutoff(0.01)
print("X^{0,0.45}:", xsb_norm(w, 0.0, 0.45, window))

# The random functionals S_j on a small box, then a Monte Carlo second
# moment next to its exact pairing value.

spec = FunctionalSpec(box=3)
print([round(s_functional(j, spec, GaussianEnsemble(1, 3)), 4) for j in (1, 2, 3)])
est = multilinear_second_moment({(2, 1, 0): 1.0, (3, 1, -1): 0.5}, {1: 1, 3: 0}, samples=20000, seed=1)
print(f"MC {est.mc:.3f} +- {est.stderr:.3f}, exact {est.exact:.3f}, bound {est.bound:.3f}")
