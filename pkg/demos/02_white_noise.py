# coding: utf-8

# # White noise coefficients
#
# Each g_n is a standard complex Gaussian, drawn from a counter-based
# generator keyed on the seed and the mode.  So mode n gets the same value
# no matter how large the cutoff is.

import numpy as np

from quartic_nls import (GaussianEnsemble, MollifierSpec, derive_trajectory_seed, mollify, norm, sample_data,
                         tail_statistic)
from quartic_nls.spectral import NormSpec
from quartic_nls.randomness import sample_batch

small, large = sample_data(11, 4), sample_data(11, 64)
print("low modes shared:", np.array_equal(small.coeffs, large.resized(4).coeffs))

# E|g_n|^2 = 1, and the phase is uniform.

G = sample_batch(3, 20000, 2)
print("E|g|^2 per mode:", np.round(np.mean(np.abs(G) ** 2, axis=0), 3))
print("E g^2 per mode:", np.round(np.abs(np.mean(G ** 2, axis=0)), 3))

# Trajectory seeds are mixed, not offset.

print([derive_trajectory_seed(7, i) for i in range(3)])

# White noise sits in H^s only for s < -1/2.  The squared norm grows like
# log N at s = -1/2 and converges, slowly, below that.

for N in (16, 64, 256, 1024):
    g = sample_data(5, N)
    print(N, round(norm(g, NormSpec(s=-0.5)) ** 2, 2), round(norm(g, NormSpec(s=-0.6)) ** 2, 2))

# A smooth mollifier removes the high modes gently.  max |g_n| / <n>^eps
# is finite for each draw.

g = sample_data(5, 256)
for scale in (16, 64):
    print(scale, norm(g, NormSpec(s=-0.6)) - norm(mollify(g, MollifierSpec("smooth", scale)), NormSpec(s=-0.6)))
print("tail statistic:", tail_statistic(GaussianEnsemble(5, 256), 0.1))
