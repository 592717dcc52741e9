"""Real Gaussian elliptic ensemble: sampling and spectral statistics.

A matrix from GEE(n, tau) has centred Gaussian entries with
E[A_ij A_kl] = (delta_ik delta_jl + tau delta_il delta_jk) / n, i.e. the
pairs (A_ij, A_ji) are correlated with coefficient tau and the diagonal has
variance (1 + tau) / n.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "stream",
    "GeeMatrix",
    "CorrelatedPair",
    "EmpiricalMeasure",
    "sample_gee",
    "sample_gee_batch",
    "sample_correlated_pair",
    "singular_spectrum",
    "log_det_abs",
    "regularized_log_statistic",
    "eigen_spectrum",
    "real_eigenvalues",
    "ellipse_coverage",
]


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic generator for the substream addressed by (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass
class GeeMatrix:
    n: int
    tau: float
    entries: np.ndarray


@dataclass
class CorrelatedPair:
    r: float
    p: int
    shared: GeeMatrix
    a1: GeeMatrix
    a2: GeeMatrix
    pair: tuple


@dataclass
class EmpiricalMeasure:
    atoms: np.ndarray

    @property
    def weight(self) -> float:
        return 1.0 / len(self.atoms)

    def integrate(self, f) -> float:
        return float(np.mean(f(self.atoms)))


def _check_tau(tau):
    if not -1.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")


def sample_gee_batch(n: int, tau: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Stack of ``size`` independent GEE(n, tau) matrices, shape (size, n, n).

    Built as sqrt((1+tau)/2) S + sqrt((1-tau)/2) K with S a GOE-type
    symmetric matrix and K antisymmetric, which gives the elliptic
    covariance exactly, including the degenerate cases tau = +-1.
    """
    _check_tau(tau)
    if n < 1:
        raise ValueError("n must be positive")
    x = rng.standard_normal((size, n, n))
    y = rng.standard_normal((size, n, n))
    sym = (x + np.swapaxes(x, 1, 2)) / np.sqrt(2.0)
    anti = (y - np.swapaxes(y, 1, 2)) / np.sqrt(2.0)
    a = np.sqrt((1.0 + tau) / 2.0)
    b = np.sqrt((1.0 - tau) / 2.0)
    out = a * sym
    if b > 0:
        out += b * anti
    return out / np.sqrt(n)


def sample_gee(n: int, tau: float, rng: np.random.Generator) -> GeeMatrix:
    return GeeMatrix(n, float(tau), sample_gee_batch(n, tau, 1, rng)[0])


def pair_weights(p: int, r: float):
    """Own/shared weights and the sign carried by each member of the pair."""
    w = abs(r) ** (p - 2)
    sgn = 1.0 if r >= 0 else -1.0
    s1 = sgn**p
    s2 = sgn ** (2 * p)
    return np.sqrt(1.0 - w), np.sqrt(w), (s1, s2)


def sample_correlated_pair(n: int, tau: float, p: int, r: float, rng: np.random.Generator) -> CorrelatedPair:
    """Two GEE(n, tau) matrices whose entries correlate with coefficient r^(p-2)."""
    if abs(r) >= 1:
        raise ValueError("correlated pair needs |r| < 1")
    if p < 3:
        raise ValueError("p must be >= 3")
    mats = sample_gee_batch(n, tau, 3, rng)
    own, shared, (s1, s2) = pair_weights(p, r)
    m1 = own * mats[1] + s1 * shared * mats[0]
    m2 = own * mats[2] + s2 * shared * mats[0]
    return CorrelatedPair(
        float(r), int(p),
        GeeMatrix(n, tau, mats[0]), GeeMatrix(n, tau, mats[1]), GeeMatrix(n, tau, mats[2]),
        (m1, m2),
    )


def _shift(a, z):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("expected a square matrix")
    return a - z * np.eye(a.shape[-1])


def singular_spectrum(a, z: float = 0.0) -> EmpiricalMeasure:
    """Singular values of A - zI in ascending order."""
    s = np.linalg.svd(_shift(a, z), compute_uv=False)
    return EmpiricalMeasure(np.sort(s))


def log_det_abs(a, z: float = 0.0):
    """log|det(A - zI)|; -inf when the shifted matrix is singular.

    Works on a single matrix or a stack.
    """
    sign, logabs = np.linalg.slogdet(_shift(a, z))
    return np.where(sign == 0, -np.inf, logabs)[()]


def regularized_log_statistic(a, z: float, eps: float) -> float:
    """(1/n) sum_i log max(s_i(A - zI), eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    s = singular_spectrum(a, z).atoms
    return float(np.mean(np.log(np.maximum(s, eps))))


def eigen_spectrum(a) -> np.ndarray:
    """All eigenvalues of a real square matrix; real ones have zero imaginary part."""
    a = np.asarray(a, dtype=float)
    ev = np.linalg.eigvals(a)
    s1 = np.linalg.norm(a, 2) if a.size else 0.0
    thresh = 1e-8 * max(1.0, s1)
    real = np.abs(ev.imag) <= thresh
    ev = np.where(real, ev.real + 0j, ev)
    return ev[np.lexsort((ev.imag, ev.real))]


def real_eigenvalues(stack: np.ndarray) -> list:
    """Real eigenvalues of each matrix in a stack, as a list of arrays."""
    ev = np.linalg.eigvals(stack)
    s1 = np.abs(ev).max(axis=-1, keepdims=True)
    real = np.abs(ev.imag) <= 1e-8 * np.maximum(1.0, s1)
    return [np.sort(e.real[m]) for e, m in zip(ev, real)]


def ellipse_coverage(atoms, tau: float, margin: float = 0.0) -> float:
    """Fraction of atoms inside the ellipse with semi-axes 1+tau+margin, 1-tau+margin."""
    if margin < 0:
        raise ValueError("margin must be non-negative")
    z = np.asarray(atoms, dtype=complex)
    if z.size == 0:
        return 1.0
    ax, ay = 1.0 + tau + margin, 1.0 - tau + margin
    if ay == 0:
        inside = (np.abs(z.imag) == 0) & (np.abs(z.real) <= ax)
    else:
        inside = (z.real / ax) ** 2 + (z.imag / ay) ** 2 <= 1.0
    return float(np.mean(inside))
