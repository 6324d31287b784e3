# coding: utf-8

# # Resonance phases and cubic products
#
# The quartic dispersion n^4 turns every three-wave interaction
# (n1, n2, n3) -> n = n1 - n2 + n3 into a phase Phi.  It factors, which is
# what makes the non-resonant set so thin.


import numpy as np

from quartic_nls import (NormSpec, SpectralField, cubic_product, cubic_product_direct, gamma_enumerate, norm,
                         phase_factorized, phase_phi, project)
from quartic_nls.spectral import max_phase, phase_mismatches

# Direct definition and factored form agree, in exact integers.

for t in [(1, 1, 1), (2, 1, 0), (3, 2, 3), (40, -7, 13)]:
    print(t, phase_phi(*t), phase_factorized(*t))

bad, total = phase_mismatches(50)
print(f"box 50: {bad} mismatches out of {total} tuples")

# Gamma(n) drops the trivial pairings n1 = n or n3 = n.  Every tuple left has
# a non-zero phase, and its size is at least |n1 - n| |n3 - n| times n^2.

tuples = list(gamma_enumerate(3, 6))
phis = np.array([t.phi for t in tuples])
print(len(tuples), "tuples in Gamma(3) inside the box 6; min |Phi| =", np.min(np.abs(phis)))
print("max |Phi| at cutoff 32:", max_phase(32))

# The FFT product on a dealiased grid matches the triple sum.

rng = np.random.default_rng(0)
N = 10
f = [SpectralField(N, rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)) for _ in range(3)]
fast = cubic_product(*f)
slow = cubic_product_direct(*f)
print("relative gap:", np.max(np.abs(fast.coeffs - slow.coeffs)) / np.max(np.abs(slow.coeffs)))

# Norms and projections.

u = f[0]
print("H^-1/2:", norm(u, NormSpec(s=-0.5)))
print("FL^{0,4}:", norm(u, NormSpec(p=4), flavor="fourier_lebesgue"))
low, high = project(u, "dirichlet", 4), project(u, "complement", 4)
print("Parseval split holds:", np.isclose(norm(low) ** 2 + norm(high) ** 2, norm(u) ** 2))
