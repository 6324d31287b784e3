"""Integrating-factor RK4 kernels.

The stiff linear part ``-i omega_n u_n`` is integrated exactly; RK4 acts on
the interaction variable ``e^{i omega t} u``.  Written back in ``u`` this is
the Lawson form

    k1 = F(t, u)
    k2 = F(t + h/2, E (u + h/2 k1))
    k3 = F(t + h/2, E u + h/2 k2)
    k4 = F(t + h,   E^2 u + h E k3)
    u' = E^2 u + h/6 (E^2 k1 + 2 E (k2 + k3) + k4),      E = e^{-i omega h/2}

which needs no exponentials inside the stage loop.
"""
from __future__ import annotations

import numba
import numpy as np
import rocket_fft  # noqa: F401  (registers numpy.fft for numba)

from .spectral import cubic_coeffs

ORIGINAL = 0
RENORMALIZED = 1
RESONANT = 2
GAUGED = 3
NONRESONANT = 4

KINDS = {
    "original": ORIGINAL,
    "renormalized": RENORMALIZED,
    "resonant": RESONANT,
    "gauged": GAUGED,
    "nonresonant": NONRESONANT,
}


@numba.njit(cache=True, nogil=True)
def _cubic(U, N, M, F, out):
    # out[b] <- pi_N(|u_b|^2 u_b) using a length-M grid (M >= 4N+1)
    B = U.shape[0]
    for b in range(B):
        for i in range(M):
            F[b, i] = 0.0
        for j in range(N + 1):
            F[b, j] = U[b, N + j]
        for j in range(N):
            F[b, M - N + j] = U[b, j]
    x = np.fft.ifft(F, axis=1)
    for b in range(B):
        for i in range(M):
            a = x[b, i]
            x[b, i] = (a.real * a.real + a.imag * a.imag) * a
    p = np.fft.fft(x, axis=1)
    s = float(M) * float(M)
    for b in range(B):
        for j in range(N + 1):
            out[b, N + j] = p[b, j] * s
        for j in range(N):
            out[b, j] = p[b, M - N + j] * s


@numba.njit(cache=True, nogil=True)
def _rhs(kind, U, P, gsq, N, M, F, tmp, out):
    # P[b, j] = exp(i t gsq[b, j]) at the stage time (gauged kind only)
    B = U.shape[0]
    K = 2 * N + 1
    if kind == RESONANT:
        for b in range(B):
            for j in range(K):
                a = U[b, j]
                out[b, j] = 1j * (a.real * a.real + a.imag * a.imag) * a
        return
    if kind == GAUGED:
        for b in range(B):
            for j in range(K):
                tmp[b, j] = U[b, j] * P[b, j]
        _cubic(tmp, N, M, F, out)
    else:
        _cubic(U, N, M, F, out)
    for b in range(B):
        mass = 0.0
        for j in range(K):
            mass += U[b, j].real ** 2 + U[b, j].imag ** 2
        if kind == GAUGED:
            for j in range(K):
                out[b, j] = -1j * (out[b, j] * np.conj(P[b, j]) + (gsq[b, j] - 2.0 * mass) * U[b, j])
        elif kind == ORIGINAL:
            for j in range(K):
                out[b, j] = -1j * out[b, j]
        elif kind == RENORMALIZED:
            for j in range(K):
                out[b, j] = -1j * (out[b, j] - 2.0 * mass * U[b, j])
        else:
            for j in range(K):
                a = U[b, j]
                out[b, j] = -1j * (out[b, j] - 2.0 * mass * a + (a.real * a.real + a.imag * a.imag) * a)


@numba.njit(cache=True, nogil=True)
def lawson_rk4(U, omega, gsq, kind, M, t0, dt, steps, sample_at, out, bad):
    """Advance every row of U by ``steps`` steps, recording rows at ``sample_at``.

    Rows move in lockstep so each stage does one batched transform.
    ``sample_at`` holds sorted step counts in [0, steps]; ``bad[b]`` is set
    when trajectory b stops producing finite values.
    """
    B = U.shape[0]
    K = U.shape[1]
    N = (K - 1) // 2
    E = np.exp(-0.5j * dt * omega)
    E2 = E * E
    F = np.empty((B, M), np.complex128)
    k1 = np.empty((B, K), np.complex128)
    k2 = np.empty((B, K), np.complex128)
    k3 = np.empty((B, K), np.complex128)
    k4 = np.empty((B, K), np.complex128)
    w = np.empty((B, K), np.complex128)
    tmp = np.empty((B, K), np.complex128)
    S = sample_at.shape[0]
    h = dt
    # gauge phases at t, t + h/2, t + h, advanced by R and refreshed every 256 steps
    P0 = np.ones((B, K), np.complex128)
    P1 = np.ones((B, K), np.complex128)
    P2 = np.ones((B, K), np.complex128)
    R = np.exp(0.5j * h * gsq)
    gauged = kind == GAUGED
    si = 0
    while si < S and sample_at[si] == 0:
        out[:, si, :] = U
        si += 1
    for s in range(steps):
        t = t0 + s * h
        if gauged:
            if s % 256 == 0:
                for b in range(B):
                    for j in range(K):
                        P0[b, j] = np.exp(1j * t * gsq[b, j])
            else:
                P0[:, :] = P2
            for b in range(B):
                for j in range(K):
                    P1[b, j] = P0[b, j] * R[b, j]
                    P2[b, j] = P1[b, j] * R[b, j]
        _rhs(kind, U, P0, gsq, N, M, F, tmp, k1)
        for b in range(B):
            for j in range(K):
                w[b, j] = E[j] * (U[b, j] + 0.5 * h * k1[b, j])
        _rhs(kind, w, P1, gsq, N, M, F, tmp, k2)
        for b in range(B):
            for j in range(K):
                w[b, j] = E[j] * U[b, j] + 0.5 * h * k2[b, j]
        _rhs(kind, w, P1, gsq, N, M, F, tmp, k3)
        for b in range(B):
            for j in range(K):
                w[b, j] = E2[j] * U[b, j] + h * E[j] * k3[b, j]
        _rhs(kind, w, P2, gsq, N, M, F, tmp, k4)
        for b in range(B):
            for j in range(K):
                U[b, j] = E2[j] * U[b, j] + h / 6.0 * (E2[j] * k1[b, j] + 2.0 * E[j] * (k2[b, j] + k3[b, j])
                                                      + k4[b, j])
        while si < S and sample_at[si] == s + 1:
            for b in range(B):
                for j in range(K):
                    if not np.isfinite(U[b, j].real) or not np.isfinite(U[b, j].imag):
                        bad[b] = True
            out[:, si, :] = U
            si += 1


# ---------------------------------------------------------------- numpy reference

def rhs_numpy(kind: int, t: float, u: np.ndarray, gsq: np.ndarray, grid: int) -> np.ndarray:
    """Batched right-hand side, plain numpy (used to cross-check the kernel)."""
    mass = np.sum(u.real**2 + u.imag**2, axis=-1, keepdims=True)
    if kind == RESONANT:
        return 1j * np.abs(u) ** 2 * u
    if kind == GAUGED:
        ph = np.exp(1j * t * gsq)
        c = cubic_coeffs(u * ph, u * ph, u * ph, grid) / ph
        return -1j * (c + (gsq - 2 * mass) * u)
    c = cubic_coeffs(u, u, u, grid)
    if kind == ORIGINAL:
        return -1j * c
    if kind == RENORMALIZED:
        return -1j * (c - 2 * mass * u)
    return -1j * (c - 2 * mass * u + np.abs(u) ** 2 * u)


def lawson_rk4_numpy(U, omega, gsq, kind, grid, t0, dt, steps):
    u = np.array(U, dtype=np.complex128)
    E = np.exp(-0.5j * dt * omega)
    E2 = E * E
    h = dt
    for s in range(steps):
        t = t0 + s * h
        k1 = rhs_numpy(kind, t, u, gsq, grid)
        k2 = rhs_numpy(kind, t + h / 2, E * (u + h / 2 * k1), gsq, grid)
        k3 = rhs_numpy(kind, t + h / 2, E * u + h / 2 * k2, gsq, grid)
        k4 = rhs_numpy(kind, t + h, E2 * u + h * E * k3, gsq, grid)
        u = E2 * u + h / 6 * (E2 * k1 + 2 * E * (k2 + k3) + k4)
    return u
