"""Seeded Gaussian data, mollifiers and tail diagnostics.

Every Gaussian ``g_n`` is addressed by ``(seed, n)``: a Philox stream keyed by
the seed whose counter encodes the mode.  Low modes therefore agree across
cutoffs, which is what makes ``g_n^N = 1_{|n|<=N} g_n`` hold sample by sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralField, japanese, modes

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    # splitmix64 finalizer, a bijection on 64-bit words
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return z ^ (z >> 31)


def derive_trajectory_seed(master_seed: int, index: int) -> int:
    """Seed of trajectory ``index`` under ``master_seed``.

    For a fixed master the map is injective over all 2^64 indices.
    """
    if index < 0:
        raise ValueError("trajectory index must be non-negative")
    base = _mix64(int(master_seed) & _MASK64)
    return _mix64((base + (int(index) + 1) * _GOLDEN) & _MASK64)


def _mode_generator(seed: int, n: int) -> np.random.Generator:
    seed = int(seed) & _MASK64
    key = np.array([seed, _GOLDEN], dtype=np.uint64)
    # mode in the third counter word: per-mode streams never overlap
    counter = np.array([0, 0, int(n) & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def gaussian_modes(seed: int, ns) -> np.ndarray:
    """Standard complex Gaussians g_n (E|g|^2 = 1) for the given modes."""
    ns = np.asarray(ns, dtype=np.int64).ravel()
    out = np.empty(ns.size, dtype=np.complex128)
    for j, n in enumerate(ns.tolist()):
        x, y = _mode_generator(seed, n).standard_normal(2)
        out[j] = complex(x, y)
    return out * np.sqrt(0.5)


@dataclass(frozen=True, eq=False)
class GaussianEnsemble:
    """One draw {g_n : |n| <= cutoff} together with its seed and decay exponent."""

    seed: int
    cutoff: int
    alpha: float = 0.0
    draws: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.cutoff < 0:
            raise ValueError("cutoff must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        g = self.draws
        if g is None:
            g = gaussian_modes(self.seed, modes(self.cutoff))
        g = np.array(g, dtype=np.complex128)
        if g.shape != (2 * self.cutoff + 1,):
            raise ValueError(f"expected {2 * self.cutoff + 1} draws, got {g.shape}")
        g.setflags(write=False)
        object.__setattr__(self, "draws", g)

    @classmethod
    def injected(cls, draws, alpha: float = 0.0, seed: int = -1) -> "GaussianEnsemble":
        """Wrap explicit values (for degenerate or hand-built ensembles)."""
        draws = np.asarray(draws, dtype=np.complex128)
        return cls(seed=seed, cutoff=(draws.size - 1) // 2, alpha=alpha, draws=draws)

    def truncated(self, N: int) -> "GaussianEnsemble":
        """g^N: draws on |n| <= N, zero above (cutoff is kept)."""
        g = np.where(np.abs(modes(self.cutoff)) <= N, self.draws, 0)
        return GaussianEnsemble(self.seed, self.cutoff, self.alpha, g)

    def intensities(self, N: int | None = None) -> np.ndarray:
        """|g_n^N|^2 on the ensemble modes."""
        g = self.draws if N is None else self.truncated(N).draws
        return g.real**2 + g.imag**2

    def field(self) -> SpectralField:
        return SpectralField(self.cutoff, self.draws / japanese(modes(self.cutoff)) ** self.alpha)


def sample_data(seed: int, N: int, alpha: float = 0.0) -> SpectralField:
    """Coefficients g_n / <n>^alpha on |n| <= N."""
    if N < 0 or alpha < 0:
        raise ValueError("need N >= 0 and alpha >= 0")
    return GaussianEnsemble(seed, N, alpha).field()


def sample_batch(master_seed: int, count: int, N: int, start: int = 0) -> np.ndarray:
    """Draws g_n for trajectories start..start+count-1, shape (count, 2N+1)."""
    ns = modes(N)
    return np.stack([
        gaussian_modes(derive_trajectory_seed(master_seed, j), ns) for j in range(start, start + count)
    ]) if count else np.zeros((0, 2 * N + 1), dtype=np.complex128)


# ---------------------------------------------------------------- mollifiers

PLATEAU = 0.5


def smooth_step(y):
    """C-infinity step: 0 for y <= 0, 1 for y >= 1."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        fc = np.where(y < 1, np.exp(-1.0 / np.where(y < 1, 1.0 - y, 1.0)), 0.0)
    return f / (f + fc)


def bump(x):
    """Even bump: 1 on |x| <= 1/2, 0 on |x| >= 1, smooth in between."""
    a = np.abs(np.asarray(x, dtype=float))
    return smooth_step((1.0 - a) / (1.0 - PLATEAU))


@dataclass(frozen=True)
class MollifierSpec:
    kind: str
    scale: int

    def __post_init__(self):
        if self.kind not in ("smooth", "sharp"):
            raise ValueError(f"unknown mollifier kind {self.kind!r}")
        if self.scale < 1:
            raise ValueError("mollifier scale must be >= 1")

    def symbol(self, ns) -> np.ndarray:
        x = np.asarray(ns, dtype=float) / self.scale
        if self.kind == "sharp":
            return (np.abs(x) <= 1).astype(float)
        return bump(x)


def mollify(f: SpectralField, spec: MollifierSpec) -> SpectralField:
    return SpectralField(f.cutoff, f.coeffs * spec.symbol(f.modes))


def tail_statistic(e: GaussianEnsemble, eps: float) -> float:
    """max_{|n|<=N} |g_n| / <n>^eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    return float(np.max(np.abs(e.draws) / japanese(modes(e.cutoff)) ** eps))
