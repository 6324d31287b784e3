"""Fourier-side fields on the circle.

A field of cutoff ``N`` is stored as the ``2N+1`` complex coefficients of
``e^{inx}`` for ``n = -N..N`` (array index ``n + N``).  The spatial measure is
normalized, ``dx/2pi``, so the exponentials are orthonormal and

    mass(f) = sum_n |c_n|^2 = ||f||_{L^2}^2

with no factors of ``2pi`` anywhere.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np
import scipy.fft

PHASE_LIMIT = 10**5
# int64 holds n^4 sums exactly while every |n_i| stays below this
_INT64_SAFE = 40_000


class PhaseOverflowError(ValueError):
    """Integer frequencies outside the exactly supported range."""


def japanese(n):
    """<n> = sqrt(1 + n^2)."""
    n = np.asarray(n, dtype=float)
    return np.sqrt(1.0 + n * n)


def modes(N: int) -> np.ndarray:
    return np.arange(-N, N + 1)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Trigonometric polynomial with complex coefficients on ``|n| <= cutoff``."""

    cutoff: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        N = int(self.cutoff)
        if N < 0:
            raise ValueError(f"cutoff must be non-negative, got {N}")
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * N + 1,):
            raise ValueError(f"expected {2 * N + 1} coefficients for cutoff {N}, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "cutoff", N)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, N: int) -> "SpectralField":
        return cls(N, np.zeros(2 * N + 1, dtype=np.complex128))

    @classmethod
    def from_modes(cls, N: int, values: dict) -> "SpectralField":
        c = np.zeros(2 * N + 1, dtype=np.complex128)
        for n, v in values.items():
            if abs(n) > N:
                raise ValueError(f"mode {n} outside cutoff {N}")
            c[n + N] = v
        return cls(N, c)

    @property
    def modes(self) -> np.ndarray:
        return modes(self.cutoff)

    def __getitem__(self, n: int) -> complex:
        if abs(n) > self.cutoff:
            return 0j
        return complex(self.coeffs[n + self.cutoff])

    def mass(self) -> float:
        return float(np.sum(self.coeffs.real**2 + self.coeffs.imag**2))

    def resized(self, N: int) -> "SpectralField":
        """Zero-pad or truncate to cutoff ``N``."""
        return SpectralField(N, resize_coeffs(self.coeffs, N))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _same_cutoff(self, other)
        return SpectralField(self.cutoff, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _same_cutoff(self, other)
        return SpectralField(self.cutoff, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralField":
        return SpectralField(self.cutoff, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.cutoff, -self.coeffs)

    def allclose(self, other: "SpectralField", atol: float = 1e-12) -> bool:
        return self.cutoff == other.cutoff and bool(np.allclose(self.coeffs, other.coeffs, rtol=0, atol=atol))

    def to_physical(self, grid: int | None = None) -> np.ndarray:
        """Values at ``x_j = 2 pi j / grid``."""
        M = grid if grid is not None else 2 * (2 * self.cutoff + 1)
        return scipy.fft.ifft(_embed(self.coeffs[None, :], self.cutoff, M), norm="forward")[0]


def _same_cutoff(a: SpectralField, b: SpectralField):
    if a.cutoff != b.cutoff:
        raise ValueError(f"cutoff mismatch: {a.cutoff} vs {b.cutoff}")


def resize_coeffs(c: np.ndarray, N: int) -> np.ndarray:
    """Zero-pad or truncate coefficient arrays along the last axis."""
    old = (c.shape[-1] - 1) // 2
    out = np.zeros(c.shape[:-1] + (2 * N + 1,), dtype=np.complex128)
    k = min(old, N)
    out[..., N - k:N + k + 1] = c[..., old - k:old + k + 1]
    return out


# ---------------------------------------------------------------- phases

@dataclass(frozen=True)
class PhaseTuple:
    n1: int
    n2: int
    n3: int
    n: int
    phi: int

    @classmethod
    def of(cls, n1: int, n2: int, n3: int) -> "PhaseTuple":
        return cls(n1, n2, n3, n1 - n2 + n3, phase_phi(n1, n2, n3))

    @property
    def in_gamma(self) -> bool:
        return self.n1 != self.n and self.n3 != self.n


def _check_phase_range(*ns: int):
    for v in ns:
        if abs(v) > PHASE_LIMIT:
            raise PhaseOverflowError(f"|{v}| exceeds the supported frequency range {PHASE_LIMIT}")


def phase_phi(n1: int, n2: int, n3: int) -> int:
    """n1^4 - n2^4 + n3^4 - n^4 with n = n1 - n2 + n3, in exact integer arithmetic."""
    n1, n2, n3 = int(n1), int(n2), int(n3)
    n = n1 - n2 + n3
    _check_phase_range(n1, n2, n3, n)
    return n1**4 - n2**4 + n3**4 - n**4


def phase_factorized(n1: int, n2: int, n3: int) -> int:
    """The same phase through its product form."""
    n1, n2, n3 = int(n1), int(n2), int(n3)
    n = n1 - n2 + n3
    _check_phase_range(n1, n2, n3, n)
    return (n1 - n2) * (n1 - n) * (n1 * n1 + n2 * n2 + n3 * n3 + n * n + 2 * (n1 + n3) ** 2)


def _phase_arrays(n1, n2, n3):
    n1 = np.asarray(n1, dtype=np.int64)
    n2 = np.asarray(n2, dtype=np.int64)
    n3 = np.asarray(n3, dtype=np.int64)
    n = n1 - n2 + n3
    top = max((int(np.max(np.abs(a))) if a.size else 0) for a in (n1, n2, n3, n))
    if top > PHASE_LIMIT:
        raise PhaseOverflowError(f"frequency {top} exceeds the supported range {PHASE_LIMIT}")
    if top > _INT64_SAFE:
        # Python integers are unbounded; slow but exact
        n1, n2, n3, n = (a.astype(object) for a in (n1, n2, n3, n))
    return n1, n2, n3, n


def phase_phi_array(n1, n2, n3) -> np.ndarray:
    """Vectorized :func:`phase_phi`."""
    n1, n2, n3, n = _phase_arrays(n1, n2, n3)
    return n1**4 - n2**4 + n3**4 - n**4


def phase_factorized_array(n1, n2, n3) -> np.ndarray:
    n1, n2, n3, n = _phase_arrays(n1, n2, n3)
    return (n1 - n2) * (n1 - n) * (n1 * n1 + n2 * n2 + n3 * n3 + n * n + 2 * (n1 + n3) ** 2)


def gamma_arrays(n: int, box: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(n1, n2, n3) arrays of the hyperplane n = n1 - n2 + n3 with n1, n3 != n, all |n_i| <= box."""
    r = np.arange(-box, box + 1, dtype=np.int64)
    a, c = np.meshgrid(r, r, indexing="ij")
    b = a + c - n
    keep = (np.abs(b) <= box) & (a != n) & (c != n)
    return a[keep], b[keep], c[keep]


def gamma_enumerate(n: int, box: int) -> Iterator[PhaseTuple]:
    """Yield the tuples of the hyperplane Gamma(n) inside the box, ordered by (n1, n3)."""
    if box < 0:
        raise ValueError("box must be non-negative")
    n1, n2, n3 = gamma_arrays(n, box)
    phi = phase_phi_array(n1, n2, n3)
    for a, b, c, p in zip(n1.tolist(), n2.tolist(), n3.tolist(), phi.tolist()):
        yield PhaseTuple(a, b, c, n, p)


@lru_cache(maxsize=None)
def max_phase(N: int) -> int:
    """Largest |Phi| over tuples with all four frequencies in [-N, N]."""
    best = 0
    for n in range(-N, N + 1):
        a, b, c = gamma_arrays(n, N)
        if a.size:
            best = max(best, int(np.max(np.abs(phase_phi_array(a, b, c)))))
    return best


def phase_mismatches(box: int) -> tuple[int, int]:
    """Compare both phase formulas over every triple with |n_i| <= box.

    Returns (mismatches, tuples checked).
    """
    r = np.arange(-box, box + 1, dtype=np.int64)
    total = 0
    bad = 0
    # one n1 slice at a time keeps memory flat for large boxes
    b, c = np.meshgrid(r, r, indexing="ij")
    for a in r:
        aa = np.full_like(b, a)
        bad += int(np.count_nonzero(phase_phi_array(aa, b, c) != phase_factorized_array(aa, b, c)))
        total += b.size
    return bad, total


# ---------------------------------------------------------------- projections

def project(f: SpectralField, kind: str, N: int) -> SpectralField:
    """Fourier projections.

    ``dirichlet``  keeps |n| <= N (N = -1 gives the zero field),
    ``complement`` keeps |n| > N (N = -1 gives the identity),
    ``dyadic``     keeps the block labelled by the power of two N:
                   |n| <= 1 for N = 1, N <= |n| < 2N otherwise.
    """
    n = np.abs(f.modes)
    if kind == "dirichlet":
        if N < -1:
            raise ValueError("projection cutoff must be >= -1")
        mask = n <= N
    elif kind == "complement":
        if N < -1:
            raise ValueError("projection cutoff must be >= -1")
        mask = n > N
    elif kind == "dyadic":
        mask = dyadic_mask(f.modes, N)
    else:
        raise ValueError(f"unknown projection kind {kind!r}")
    return SpectralField(f.cutoff, np.where(mask, f.coeffs, 0))


def dyadic_mask(ns: np.ndarray, N: int) -> np.ndarray:
    if N < 1 or N & (N - 1):
        raise ValueError(f"dyadic block label must be a power of two, got {N}")
    a = np.abs(np.asarray(ns))
    if N == 1:
        return a <= 1
    return (a >= N) & (a < 2 * N)


def dyadic_blocks(cutoff: int) -> list[int]:
    """Block labels 1, 2, 4, ... whose blocks meet [-cutoff, cutoff]."""
    out = [1]
    while 2 * out[-1] <= cutoff:
        out.append(2 * out[-1])
    return out


# ---------------------------------------------------------------- norms

@dataclass(frozen=True)
class NormSpec:
    s: float = 0.0
    p: float = 2.0

    def __post_init__(self):
        if not (self.p >= 1):
            raise ValueError(f"Lebesgue exponent must be >= 1, got {self.p}")


def norm(f: SpectralField, spec: NormSpec = NormSpec(), flavor: str = "sobolev", grid: int | None = None) -> float:
    """H^s, Fourier-Lebesgue FL^{s,p} or physical L^p norm."""
    c = f.coeffs
    if flavor == "sobolev":
        w = japanese(f.modes) ** (2 * spec.s)
        return math.sqrt(float(np.sum(w * (c.real**2 + c.imag**2))))
    if flavor == "fourier_lebesgue":
        a = japanese(f.modes) ** spec.s * np.abs(c)
        return float(np.max(a)) if math.isinf(spec.p) else float(np.sum(a**spec.p) ** (1 / spec.p))
    if flavor == "physical":
        M = 2 * (2 * f.cutoff + 1) if grid is None else grid
        if M < 2 * (2 * f.cutoff + 1):
            raise ValueError(f"physical grid needs at least {2 * (2 * f.cutoff + 1)} points, got {M}")
        u = np.abs(f.to_physical(M))
        return float(np.max(u)) if math.isinf(spec.p) else float(np.mean(u**spec.p) ** (1 / spec.p))
    raise ValueError(f"unknown norm flavor {flavor!r}")


# ---------------------------------------------------------------- products

def product_grid(N: int) -> int:
    """Power of two >= 6N + 2, alias-free for cubic products of degree-N inputs."""
    return 1 << max(1, math.ceil(math.log2(6 * N + 2)))


def minimal_grid(N: int) -> int:
    """Smallest FFT-friendly size >= 4N + 1.

    Aliases of the degree-3N product land at |n| >= M - 3N > N, so the
    truncated output is still exact.
    """
    return scipy.fft.next_fast_len(4 * N + 1)


def _embed(c: np.ndarray, N: int, M: int) -> np.ndarray:
    F = np.zeros(c.shape[:-1] + (M,), dtype=np.complex128)
    F[..., :N + 1] = c[..., N:]
    if N:
        F[..., M - N:] = c[..., :N]
    return F


def _extract(F: np.ndarray, N: int) -> np.ndarray:
    M = F.shape[-1]
    if N == 0:
        return F[..., :1].copy()
    return np.concatenate([F[..., M - N:], F[..., :N + 1]], axis=-1)


def cubic_coeffs(c1: np.ndarray, c2: np.ndarray, c3: np.ndarray, grid: int | None = None) -> np.ndarray:
    """Coefficients of f1 * conj(f2) * f3 on |n| <= N (batched along leading axes)."""
    N = (c1.shape[-1] - 1) // 2
    M = minimal_grid(N) if grid is None else grid
    if M < 4 * N + 1:
        raise ValueError(f"grid {M} aliases a cutoff-{N} cubic product")
    u1 = scipy.fft.ifft(_embed(c1, N, M), axis=-1, norm="forward")
    if c2 is c1 and c3 is c1:
        prod = (u1.real**2 + u1.imag**2) * u1
    else:
        u2 = scipy.fft.ifft(_embed(c2, N, M), axis=-1, norm="forward")
        u3 = scipy.fft.ifft(_embed(c3, N, M), axis=-1, norm="forward")
        prod = u1 * np.conj(u2) * u3
    return _extract(scipy.fft.fft(prod, axis=-1, norm="forward"), N)


def cubic_product(f1: SpectralField, f2: SpectralField, f3: SpectralField, grid: int | None = None) -> SpectralField:
    """pi_N(f1 conj(f2) f3) by FFT on a dealiased grid (default: power of two >= 6N+2)."""
    _same_cutoff(f1, f2)
    _same_cutoff(f1, f3)
    N = f1.cutoff
    M = product_grid(N) if grid is None else grid
    return SpectralField(N, cubic_coeffs(f1.coeffs, f2.coeffs, f3.coeffs, M))


def cubic_product_direct(f1: SpectralField, f2: SpectralField, f3: SpectralField) -> SpectralField:
    """Triple-sum oracle: sum over n1 - n2 + n3 = n of c1(n1) conj(c2(n2)) c3(n3)."""
    _same_cutoff(f1, f2)
    _same_cutoff(f1, f3)
    N = f1.cutoff
    r = modes(N)
    a, c = np.meshgrid(r, r, indexing="ij")
    outer = np.multiply.outer(f1.coeffs, f3.coeffs)
    c2 = np.conj(f2.coeffs)
    out = np.zeros(2 * N + 1, dtype=np.complex128)
    for j, n in enumerate(r):
        b = a + c - n
        ok = np.abs(b) <= N
        out[j] = np.sum(outer[ok] * c2[b[ok] + N])
    return SpectralField(N, out)


def renormalized_coeffs(c: np.ndarray, grid: int | None = None) -> np.ndarray:
    """(|u|^2 - 2 mass(u)) u, batched."""
    mass = np.sum(c.real**2 + c.imag**2, axis=-1, keepdims=True)
    return cubic_coeffs(c, c, c, grid) - 2 * mass * c


def renormalized_nonlinearity(u: SpectralField) -> SpectralField:
    return SpectralField(u.cutoff, renormalized_coeffs(u.coeffs))
