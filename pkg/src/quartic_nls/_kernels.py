"""Compiled loops for hyperplane sums and windowed tau-integrals."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def gamma_products(U, i1, i2, i3, io, out):
    """out[t, io[k]] += U[t, i1[k]] conj(U[t, i2[k]]) U[t, i3[k]] over all tuples k."""
    T = U.shape[0]
    for t in range(T):
        for j in range(out.shape[1]):
            out[t, j] = 0.0
        for k in range(i1.shape[0]):
            out[t, io[k]] += U[t, i1[k]] * np.conj(U[t, i2[k]]) * U[t, i3[k]]


@numba.njit(cache=True, nogil=True)
def grouped_window_norms(a, cr, ci, starts, delta, m, wB, tab, dtab, D, cut, out):
    """out[g] = h sum_i |sum_{t in g} c_t eta_hat_delta(tau_i + a_t)|^2 wB[i + imid].

    tau_i = i h with h = m D / delta, so successive samples of eta_hat move by
    exactly m table cells and the interpolation weights are fixed per tuple.
    Group g holds tuples starts[g]:starts[g+1]; wB covers |i| <= imid.
    ``dtab`` holds table derivatives premultiplied by the step D.
    """
    h = m * D / delta
    X = cut / delta
    imid = (wB.shape[0] - 1) // 2
    G = starts.shape[0] - 1
    width = 0
    for g in range(G):
        lo = 1e300
        hi = -1e300
        for t in range(starts[g], starts[g + 1]):
            lo = min(lo, -a[t])
            hi = max(hi, -a[t])
        if starts[g + 1] > starts[g]:
            width = max(width, int((hi - lo + 2 * X) / h) + 3)
    Fr = np.zeros(width)
    Fi = np.zeros(width)
    kmax = tab.shape[0] - 2
    for g in range(G):
        s0 = starts[g]
        s1 = starts[g + 1]
        out[g] = 0.0
        if s1 == s0:
            continue
        lo = 1e300
        hi = -1e300
        for t in range(s0, s1):
            lo = min(lo, -a[t])
            hi = max(hi, -a[t])
        i0 = int(np.floor((lo - X) / h))
        i1 = int(np.ceil((hi + X) / h))
        n = i1 - i0 + 1
        for t in range(s0, s1):
            if cr[t] == 0.0 and ci[t] == 0.0:
                continue
            # sigma_i / D = (i0 + i) m + base
            base = delta * a[t] / D
            kb = np.floor(base)
            u = base - kb
            kb_i = int(kb)
            u2 = u * u
            u3 = u2 * u
            p00 = 2 * u3 - 3 * u2 + 1
            p10 = u3 - 2 * u2 + u
            p01 = 3 * u2 - 2 * u3
            p11 = u3 - u2
            v = 1.0 - u
            v2 = v * v
            v3 = v2 * v
            q00 = 2 * v3 - 3 * v2 + 1
            q10 = v3 - 2 * v2 + v
            q01 = 3 * v2 - 2 * v3
            q11 = v3 - v2
            j0 = max(int(np.ceil((-a[t] - X) / h)) - i0, 0)
            j1 = min(int(np.floor((-a[t] + X) / h)) - i0, n - 1)
            for i in range(j0, j1 + 1):
                K = (i0 + i) * m + kb_i
                if K >= 0:
                    k = K
                    if k > kmax:
                        continue
                    e = p00 * tab[k] + p10 * dtab[k] + p01 * tab[k + 1] + p11 * dtab[k + 1]
                else:
                    k = -K - 1
                    if k > kmax:
                        continue
                    e = q00 * tab[k] + q10 * dtab[k] + q01 * tab[k + 1] + q11 * dtab[k + 1]
                Fr[i] += cr[t] * e
                Fi[i] += ci[t] * e
        tot = 0.0
        for i in range(n):
            mm = Fr[i] * Fr[i] + Fi[i] * Fi[i]
            Fr[i] = 0.0
            Fi[i] = 0.0
            tot += mm * wB[i0 + i + imid]
        out[g] = tot * h * delta * delta
