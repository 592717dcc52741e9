"""Closed-form complexity functions, covariance scalars and thresholds.

Everything here is deterministic and vectorised over the real argument(s)
where that is natural.  The model is indexed by ``(p, tau)`` with
``alpha = 1 + (p - 1) * tau``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "ModelParams",
    "Thresholds",
    "SigmaUMatrix",
    "log_potential",
    "scaled_log_potential",
    "annealed_complexity",
    "thresholds",
    "overlap_entropy",
    "sigma_u",
    "two_point_complexity",
    "g_factor",
    "q_function",
]


@dataclass(frozen=True)
class ModelParams:
    """Spin degree ``p`` and asymmetry ``tau``; ``alpha`` is derived."""

    p: int
    tau: float

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 3:
            raise ValueError(f"p must be an integer >= 3, got {self.p}")
        if not (-1.0 / (self.p - 1) < self.tau < 1.0):
            raise ValueError(
                f"tau must lie in (-1/(p-1), 1), got tau={self.tau} for p={self.p}"
            )
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def alpha(self) -> float:
        return 1.0 + (self.p - 1) * self.tau

    @property
    def p_alpha(self) -> float:
        # variance of the radial multiplier at a single point
        return self.p * self.alpha


@dataclass(frozen=True)
class Thresholds:
    e_inf: float
    e_zero: float
    tau_p: float
    theta: float
    u_th: float


@dataclass(frozen=True)
class SigmaUMatrix:
    """Inverse covariance of the rescaled multiplier pair at overlap r."""

    k1: float
    k2: float
    b: float
    matrix_inverse: np.ndarray

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.matrix_inverse)


def _rate_outside(tau, a):
    # a = |u| >= 1 + tau
    if tau == 0.0:
        return -np.log(a) + 0.5 * a**2 - 0.5
    root = np.sqrt(a**2 - 4.0 * tau)
    return (
        a**2 / (2.0 * (1.0 + tau))
        - a * (a - root) / (4.0 * tau)
        - np.log((a + root) / 2.0)
    )


def log_potential(tau: float, u):
    """Logarithmic potential of the uniform law on the ellipse E_tau.

    phi_tau(u) = u^2 / (2(1+tau)) - 1/2 - I_tau(u) 1{|u| >= 1+tau}.

    Args:
        tau: asymmetry in [0, 1]; tau = 1 gives the semicircle potential.
        u: real scalar or array.

    Returns:
        phi_tau(u), same shape as ``u``.
    """
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"log_potential needs tau in [0, 1], got {tau}")
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    out = a**2 / (2.0 * (1.0 + tau)) - 0.5
    edge = a >= 1.0 + tau
    if np.any(edge):
        out = np.where(edge, out - _rate_outside(tau, np.where(edge, a, 2.0 + 2 * tau)), out)
    return out[()] if out.ndim == 0 else out


def scaled_log_potential(params: ModelParams, u):
    """phi_{tau,p}(u) = phi_tau(u / sqrt(p(p-1)))."""
    return log_potential(params.tau, np.asarray(u, dtype=float) / np.sqrt(params.p * (params.p - 1)))


def _require_nonneg_tau(params):
    if params.tau < 0:
        raise ValueError("complexity functions are only defined here for tau >= 0")


def annealed_complexity(params: ModelParams, u):
    """Sigma(u) = 1/2 + log(p-1)/2 - u^2/(2 p alpha) + phi_{tau,p}(u)."""
    _require_nonneg_tau(params)
    u = np.asarray(u, dtype=float)
    p = params.p
    return 0.5 + 0.5 * np.log(p - 1) - u**2 / (2.0 * params.p_alpha) + scaled_log_potential(params, u)


def critical_tau(p: int) -> float:
    """Asymmetry at which the stability edge and the zero of Sigma coincide."""
    lg = np.log(p - 1)
    return ((p - 2) - lg) / ((p - 1) * lg - (p - 2))


def thresholds(params: ModelParams, tol: float = 1e-12) -> Thresholds:
    """Stability edge, zero of Sigma, critical tau, stable rate and u_th.

    The stability edge is the image of the bulk edge 1 + tau under the
    rescaling u -> u / sqrt(p(p-1)), i.e. e_inf = sqrt(p(p-1)) (1 + tau).
    """
    _require_nonneg_tau(params)
    p, tau, alpha = params.p, params.tau, params.alpha
    e_inf = np.sqrt(p * (p - 1)) * (1.0 + tau)
    theta = 0.5 * np.log(p - 1) - (p - 2) * (1.0 + tau) / (2.0 * alpha)
    u_th = np.sqrt((1.0 + tau) * np.log(p - 1) * (p - 1) * p * alpha / (p - 2))

    hi = 10.0 * max(e_inf, np.sqrt(params.p_alpha))
    f = lambda v: float(annealed_complexity(params, -v))
    if f(0.0) <= 0 or f(hi) >= 0:
        raise RuntimeError("could not bracket the zero of the annealed complexity")
    e_zero = _bisect(f, 0.0, hi, tol)
    return Thresholds(float(e_inf), float(e_zero), float(critical_tau(p)), float(theta), float(u_th))


def _bisect(f, lo, hi, tol):
    # f(lo) > 0 > f(hi); plain bisection, Sigma is monotone on the bracket
    flo = f(lo)
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def overlap_entropy(p: int, r):
    """h(r) = log((1 - r^2) / (1 - r^(2p-2))) / 2, with h(+-1) = -log(p-1)/2."""
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1):
        raise ValueError("overlap must satisfy |r| <= 1")
    ends = np.abs(r) == 1.0
    rr = np.where(ends, 0.0, r)
    out = 0.5 * (np.log1p(-rr**2) - np.log1p(-rr ** (2 * p - 2)))
    out = np.where(ends, -0.5 * np.log(p - 1), out)
    return out[()] if out.ndim == 0 else out


def _sigma_u_parts(p, tau, r):
    r2 = r * r
    rq = r ** (2 * p - 2)
    b = (1 - rq) ** 2 - (p - 1) ** 2 * tau**2 * r ** (2 * (p - 2)) * (1 - r2) ** 2
    k1 = b + rq * (1 - rq + tau * (p - 1) * (1 - r2))
    k2 = -(r**p) * (1 - rq) - tau * (p - 1) * r ** (3 * p - 4) * (1 - r2)
    return k1, k2, b


def sigma_u(params: ModelParams, r: float) -> SigmaUMatrix:
    """Closed-form inverse covariance of the multiplier pair given G = 0 at both points."""
    r = float(r)
    if abs(r) >= 1:
        raise ValueError("sigma_u is singular for |r| >= 1")
    k1, k2, b = _sigma_u_parts(params.p, params.tau, r)
    inv = np.array([[k1, k2], [k2, k1]]) / (params.p_alpha * b)
    return SigmaUMatrix(float(k1), float(k2), float(b), inv)


def two_point_complexity(params: ModelParams, r, u1, u2):
    """Sigma_2(r, u1, u2) for |r| < 1 (vectorised over r, u1, u2)."""
    _require_nonneg_tau(params)
    r, u1, u2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, u1, u2)))
    if np.any(np.abs(r) >= 1):
        raise ValueError("two_point_complexity needs |r| < 1")
    p = params.p
    k1, k2, b = _sigma_u_parts(p, params.tau, r)
    quad = (k1 * (u1**2 + u2**2) + 2 * k2 * u1 * u2) / (params.p_alpha * b)
    out = (
        1.0
        + np.log(p - 1)
        + overlap_entropy(p, r)
        - 0.5 * quad
        + scaled_log_potential(params, u1)
        + scaled_log_potential(params, u2)
    )
    return out[()] if out.ndim == 0 else out


def g_factor(params: ModelParams, r):
    """Coefficient of u^2/(p alpha) in the diagonal two-point exponent."""
    p, tau = params.p, params.tau
    r = np.asarray(r, dtype=float)
    if np.any(np.abs(r) > 1):
        raise ValueError("g_factor needs |r| <= 1")
    one = r == 1.0
    minus = r == -1.0
    safe = np.where(one | minus, 0.5, r)
    num = safe**p * (1 - safe ** (p - 2))
    den = 1 - safe ** (2 * p - 2) + (p - 1) * tau * safe ** (p - 2) * (1 - safe**2)
    out = num / den
    lim = (p - 2) / (2.0 * (p - 1) * (1 + tau))
    out = np.where(one, lim, out)
    out = np.where(minus, lim if p % 2 == 0 else -np.inf, out)
    return out[()] if out.ndim == 0 else out


def q_function(params: ModelParams, r, u):
    """Q(r, u) = h(r) + u^2 g(r) / (p alpha)."""
    u = np.asarray(u, dtype=float)
    return overlap_entropy(params.p, r) + u**2 * g_factor(params, r) / params.p_alpha
