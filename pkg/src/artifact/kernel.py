"""Pfaffian kernel for the real eigenvalues of GEE(n, tau), 0 < tau < 1.

Conventions
-----------
``kernel_s(n, tau, x, y)`` takes *unscaled* arguments (the bulk is
(-1-tau, 1+tau)) and internally works with the scaled variables
X = sqrt(n) x, Y = sqrt(n) y of the n-independent weight
exp(-X^2 / (2(1+tau))).  The D entry is the derivative in the scaled first
argument and the I entry integrates S in the scaled second argument, so
that K_n(x, y) is directly comparable with the limiting kernel evaluated at
(sqrt(n) x, sqrt(n) y), and

    rho^l_n(x_1..x_l) = n^(l/2) pf[K_n(x_i, x_j)].

Hermite functions are handled through w_k(X) = exp(-X^2/(2(1+tau))) C_k(X)
/ sqrt(k!), produced by a rescaled three-term recurrence.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import itertools
import math
import warnings

import numpy as np
from scipy.integrate import quad
from scipy.special import erf, gammaln, logsumexp

__all__ = [
    "ScaledHermite",
    "KernelBlock",
    "CorrelationValue",
    "hermite_c",
    "weighted_hermite_table",
    "mehler_sum",
    "mehler_closed_form",
    "phi_big",
    "kernel_s",
    "kernel_block",
    "kernel_asymptotic",
    "kernel_residual",
    "pfaffian",
    "real_correlation",
    "ensemble_constants",
    "moment_via_kernel",
]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass(frozen=True)
class ScaledHermite:
    """C_k(x) exp(-x^2/(2(1+tau))) / sqrt(k!) as (sign, log|.|)."""

    k: int
    sign: float
    log_mag: float

    @property
    def value(self) -> float:
        return self.sign * math.exp(self.log_mag) if self.sign else 0.0


@dataclass(frozen=True)
class KernelBlock:
    s: float
    d: float
    i_entry: float
    s_swapped: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[-self.i_entry, self.s], [-self.s_swapped, self.d]])


@dataclass(frozen=True)
class CorrelationValue:
    ell: int
    points: tuple
    sign: float
    log_mag: float

    @property
    def value(self) -> float:
        return self.sign * math.exp(self.log_mag) if self.sign else 0.0


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"kernel needs 0 < tau < 1, got {tau}")


# ---------------------------------------------------------------- Hermite

def weighted_hermite_table(kmax: int, tau: float, x):
    """Signs and log-magnitudes of w_k(x) for k = 0..kmax.

    Uses c_{k+1} = (x c_k - tau sqrt(k) c_{k-1}) / sqrt(k+1) with
    c_k = C_k / sqrt(k!), started from the Gaussian weight and rescaled
    whenever the running values leave [1e-150, 1e150].

    Returns:
        (sign, logmag) arrays of shape (kmax + 1,) + x.shape.
    """
    x = np.asarray(x, dtype=float)
    shape = (kmax + 1,) + x.shape
    sign = np.empty(shape)
    logm = np.empty(shape)
    prev = np.zeros_like(x)
    cur = np.ones_like(x)
    scale = -x**2 / (2.0 * (1.0 + tau))
    for k in range(kmax + 1):
        sign[k] = np.sign(cur)
        with np.errstate(divide="ignore"):
            logm[k] = np.log(np.abs(cur)) + scale
        if k == kmax:
            break
        nxt = (x * cur - tau * math.sqrt(k) * prev) / math.sqrt(k + 1)
        prev, cur = cur, nxt
        big = np.maximum(np.abs(prev), np.abs(cur))
        fix = (big > 1e150) | ((big < 1e-150) & (big > 0))
        if np.any(fix):
            f = np.where(fix, big, 1.0)
            prev = prev / f
            cur = cur / f
            scale = scale + np.log(f)
    return sign, logm


def hermite_c(k: int, tau: float, x: float) -> ScaledHermite:
    """Weighted, normalised C_k(x) = (tau/2)^(k/2) H_k(x / sqrt(2 tau))."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if not 0.0 <= tau < 1.0:
        raise ValueError("hermite_c needs 0 <= tau < 1")
    s, l = weighted_hermite_table(k, tau, float(x))
    return ScaledHermite(k, float(s[k]), float(l[k]))


def _w(kmax, tau, x):
    s, l = weighted_hermite_table(kmax, tau, x)
    return s * np.exp(l)


def mehler_sum(rho: float, x: float, y: float, kmax: int) -> float:
    """sum_{k<=kmax} rho^k H_k(x) H_k(y) / (2^k k!), summed in log space."""
    if abs(rho) >= 1:
        warnings.warn("Mehler series diverges for |rho| >= 1", RuntimeWarning)
    # H_k(x)/sqrt(2^k k!) via its own normalised recurrence
    signs = np.empty(kmax + 1)
    logs = np.empty(kmax + 1)
    hx = _normalised_hermite(kmax, x)
    hy = _normalised_hermite(kmax, y)
    for k in range(kmax + 1):
        sx, lx = hx[k]
        sy, ly = hy[k]
        sr = 1.0 if (rho >= 0 or k % 2 == 0) else -1.0
        lr = k * math.log(abs(rho)) if rho != 0 else (0.0 if k == 0 else -np.inf)
        signs[k] = sx * sy * sr
        logs[k] = lx + ly + lr
    mask = signs != 0
    if not mask.any():
        return 0.0
    val, sg = logsumexp(logs[mask], b=signs[mask], return_sign=True)
    return float(sg * math.exp(val))


def _normalised_hermite(kmax, x):
    # h_k = H_k / sqrt(2^k k!):  h_{k+1} = (sqrt(2) x h_k - sqrt(k) h_{k-1}) / sqrt(k+1)
    out = []
    prev, cur, scale = 0.0, 1.0, 0.0
    for k in range(kmax + 1):
        out.append((math.copysign(1.0, cur) if cur != 0 else 0.0,
                    (math.log(abs(cur)) + scale) if cur != 0 else -np.inf))
        nxt = (math.sqrt(2.0) * x * cur - math.sqrt(k) * prev) / math.sqrt(k + 1)
        prev, cur = cur, nxt
        big = max(abs(prev), abs(cur))
        if big > 1e150 or 0 < big < 1e-150:
            prev /= big
            cur /= big
            scale += math.log(big)
    return out


def mehler_closed_form(rho: float, x: float, y: float) -> float:
    return math.exp(-(rho**2 * (x * x + y * y) - 2 * rho * x * y) / (1 - rho**2)) / math.sqrt(1 - rho**2)


# ---------------------------------------------------------------- Phi_m

def _log_phi_const(m, tau):
    # log of sqrt(2 pi (1+tau)) m! / (2^{m/2} (m/2)!) / sqrt(m!)
    return (0.5 * math.log(2 * math.pi * (1 + tau)) + 0.5 * gammaln(m + 1)
            - 0.5 * m * math.log(2.0) - gammaln(m / 2 + 1))


@lru_cache(maxsize=256)
def _tail_cutoff(m, tau):
    # point beyond which w_m is negligible relative to its maximum
    grid = np.linspace(0.0, 4.0 * math.sqrt((1 + tau) * (m + 1)) + 40.0, 4001)
    s, l = weighted_hermite_table(m, tau, grid)
    lm = l[m]
    top = lm.max()
    ok = np.nonzero(lm > top - math.log(1e18))[0]
    return float(grid[ok[-1]] + 1.0)


def _tail_integral(m, tau, a):
    # int_a^inf w_m(t) dt for a >= 0
    cut = _tail_cutoff(m, tau)
    if a >= cut:
        return 0.0
    f = lambda t: float(_w(m, tau, t)[m])
    # subdivide so each panel holds a few oscillations
    pts = np.linspace(a, cut, max(2, int(math.ceil((cut - a) / 2.0)) + 1))
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = quad(f, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=200)
        total += val
    return total


def phi_tilde(m: int, tau: float, x: float) -> float:
    """Phi_m(x) / sqrt(m!) = int sign(x - t) w_m(t) dt for even m."""
    if m % 2:
        raise ValueError("Phi_m is only defined here for even m")
    c = math.exp(_log_phi_const(m, tau))
    if x >= 0:
        return c - 2.0 * _tail_integral(m, tau, x)
    return 2.0 * _tail_integral(m, tau, -x) - c


def phi_big(n: int, tau: float, x: float) -> float:
    """Phi_n(x) = sqrt(2 pi (1+tau)) n!/(2^{n/2}(n/2)!) - 2 int_x^inf e^{-t^2/(2(1+tau))} C_n(t) dt."""
    if n < 0 or n % 2:
        raise ValueError("phi_big needs an even n >= 0")
    if not 0.0 <= tau < 1.0:
        raise ValueError("phi_big needs 0 <= tau < 1")
    return phi_tilde(n, tau, float(x)) * math.exp(0.5 * gammaln(n + 1))


# ---------------------------------------------------------------- S, D, I

def _terms(n, tau, X, Y):
    """(coefficient, sign, log) triples for S(X, Y) and for D = d/dX S."""
    sX, lX = weighted_hermite_table(n, tau, X)
    sY, lY = weighted_hermite_table(n, tau, Y)
    wX = sX * np.exp(lX)
    c0 = 1.0 / (2.0 * math.sqrt(2 * math.pi) * (1.0 + tau))
    s_terms, d_terms = [], []

    def add(store, coef_log, sgn, log_mag):
        if sgn != 0 and np.isfinite(log_mag):
            store.append((sgn, coef_log + log_mag))

    def dw(k):
        # d/dX w_k(X) = -X w_k/(1+tau) + sqrt(k) w_{k-1}
        v = -X * wX[k] / (1.0 + tau)
        if k > 0:
            v += math.sqrt(k) * wX[k - 1]
        return v

    def hermite_sum(top):
        for k in range(top + 1):
            add(s_terms, -_LOG_SQRT_2PI, sX[k] * sY[k], lX[k] + lY[k])
            dv = dw(k)
            if dv != 0:
                add(d_terms, -_LOG_SQRT_2PI, sY[k] * np.sign(dv), lY[k] + math.log(abs(dv)))

    def phi_term(ky, m, coef):
        # coef * w_ky(Y) * Phi~_m(X); derivative uses Phi~_m' = 2 w_m
        ph = phi_tilde(m, tau, X)
        if ph != 0:
            add(s_terms, math.log(abs(coef)), np.sign(coef) * sY[ky] * np.sign(ph), lY[ky] + math.log(abs(ph)))
        add(d_terms, math.log(abs(2 * coef)), np.sign(coef) * sY[ky] * sX[m], lY[ky] + lX[m])

    if n % 2 == 0:
        hermite_sum(n - 2)
        phi_term(n - 1, n - 2, c0 * math.sqrt(n - 1))
    else:
        # I: even structure with n -> n - 1
        hermite_sum(n - 3)
        if n >= 3:
            phi_term(n - 2, n - 3, c0 * math.sqrt(n - 2))
        # II, first part
        phi_term(n - 2, n - 1, -c0 * math.sqrt(n - 1))
        # II, second part
        h = (n - 1) // 2
        # coefficient -2^h h! / (sqrt(2 pi) (n-1)! 2^j j!) on C_{n-1}(Y) C_{2j}(X)
        base = gammaln(h + 1) + h * math.log(2.0) - _LOG_SQRT_2PI - 0.5 * gammaln(n)
        for j in range(h):
            lc = base + 0.5 * gammaln(2 * j + 1) - gammaln(j + 1) - j * math.log(2.0)
            add(s_terms, lc, -sY[n - 1] * sX[2 * j], lY[n - 1] + lX[2 * j])
            dv = dw(2 * j)
            if dv != 0:
                add(d_terms, lc, -sY[n - 1] * np.sign(dv), lY[n - 1] + math.log(abs(dv)))
        # III: w_{n-1}(Y) over its total mass, depends on Y only
        l3 = -_log_phi_const(n - 1, tau)
        add(s_terms, l3, sY[n - 1], lY[n - 1])
    return s_terms, d_terms


def _signed_sum(terms):
    if not terms:
        return 0.0
    sg = np.array([t[0] for t in terms], dtype=float)
    lg = np.array([t[1] for t in terms], dtype=float)
    val, s = logsumexp(lg, b=sg, return_sign=True)
    return float(s * math.exp(val)) if np.isfinite(val) else 0.0


def _check_n(n):
    if int(n) != n or n < 2:
        raise ValueError(f"kernel needs an integer n >= 2, got {n}")


def _s_scaled(n, tau, X, Y):
    return _signed_sum(_terms(n, tau, X, Y)[0])


def kernel_s(n: int, tau: float, x: float, y: float) -> float:
    """S_n(x, y) at unscaled arguments."""
    _check_n(n)
    _check_tau(tau)
    r = math.sqrt(n)
    return _s_scaled(n, tau, r * float(x), r * float(y))


def _i_scaled(n, tau, X, Y):
    if X == Y:
        return 0.0
    f = lambda z: _s_scaled(n, tau, X, z)
    lo, hi = min(X, Y), max(X, Y)
    pts = np.linspace(lo, hi, max(2, int(math.ceil((hi - lo) / 2.0)) + 1))
    total = sum(quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0] for a, b in zip(pts[:-1], pts[1:]))
    integral = total if Y > X else -total
    return 0.5 * math.copysign(1.0, Y - X) - integral


def kernel_block(n: int, tau: float, x: float, y: float) -> KernelBlock:
    """Entries of the 2x2 kernel K_n(x, y) = [[-I, S(x,y)], [-S(y,x), D]]."""
    _check_n(n)
    _check_tau(tau)
    r = math.sqrt(n)
    X, Y = r * float(x), r * float(y)
    st, dt = _terms(n, tau, X, Y)
    return KernelBlock(
        s=_signed_sum(st),
        d=_signed_sum(dt),
        i_entry=_i_scaled(n, tau, X, Y),
        s_swapped=_s_scaled(n, tau, Y, X),
    )


def kernel_asymptotic(tau: float, xi: float, eta: float) -> KernelBlock:
    """Limiting bulk kernel in scaled variables."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("kernel_asymptotic needs 0 <= tau < 1")
    v = 1.0 - tau**2
    # prefactor fixed by the Mehler limit of the finite-n sum at rho = tau
    s = math.exp(-((xi - eta) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
    d = -(xi - eta) / v * s
    # int_xi^eta S(xi, z) dz = erf((eta - xi)/sqrt(2v)) / 2
    i_entry = 0.5 * np.sign(eta - xi) - 0.5 * erf((eta - xi) / math.sqrt(2 * v))
    return KernelBlock(s=s, d=d, i_entry=float(i_entry), s_swapped=s)


def kernel_residual(n: int, tau: float, x: float, y: float) -> float:
    """Frobenius norm of K_n(x, y) - K(sqrt(n) x, sqrt(n) y)."""
    kb = kernel_block(n, tau, x, y)
    ka = kernel_asymptotic(tau, math.sqrt(n) * x, math.sqrt(n) * y)
    return float(np.linalg.norm(kb.matrix - ka.matrix))


# ---------------------------------------------------------------- Pfaffian

def _pf_cofactor(a):
    m = a.shape[0]
    if m == 0:
        return 1.0
    total = 0.0
    rest = list(range(1, m))
    for pos, j in enumerate(rest):
        if a[0, j] == 0:
            continue
        keep = [k for k in rest if k != j]
        total += (-1) ** pos * a[0, j] * _pf_cofactor(a[np.ix_(keep, keep)])
    return total


def _pf_elimination(a):
    # Parlett-Reid style skew elimination with pivoting; returns (sign, log|pf|)
    a = a.copy()
    m = a.shape[0]
    sign, logm = 1.0, 0.0
    for k in range(0, m - 1, 2):
        piv = k + 1 + int(np.argmax(np.abs(a[k, k + 1:])))
        if piv != k + 1:
            a[[k + 1, piv], :] = a[[piv, k + 1], :]
            a[:, [k + 1, piv]] = a[:, [piv, k + 1]]
            sign = -sign
        head = a[k, k + 1]
        if head == 0:
            return 0.0, -np.inf
        sign *= np.sign(head)
        logm += math.log(abs(head))
        if k + 2 < m:
            tau = a[k, k + 2:] / head
            # eliminate the coupling of rows/cols k+2.. with k
            a[k + 2:, k + 2:] += np.outer(a[k + 1, k + 2:], tau) - np.outer(tau, a[k + 1, k + 2:])
    return sign, logm


def pfaffian(m, method: str = "auto"):
    """Pfaffian of an antisymmetric matrix as (sign, log|pf|).

    ``method`` is "cofactor" (first-row expansion, fine up to 12x12),
    "elimination" (skew Gaussian elimination) or "auto".
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("pfaffian needs a square matrix")
    if a.shape[0] % 2:
        raise ValueError("pfaffian of an odd-dimensional matrix is zero by convention; rejected")
    if not np.allclose(a, -a.T, atol=1e-9 * max(1.0, np.abs(a).max(initial=0.0))):
        raise ValueError("matrix is not antisymmetric")
    a = 0.5 * (a - a.T)
    if method == "auto":
        method = "cofactor" if a.shape[0] <= 12 else "elimination"
    if method == "cofactor":
        v = _pf_cofactor(a)
        return (float(np.sign(v)), math.log(abs(v)) if v != 0 else -np.inf)
    if method == "elimination":
        return _pf_elimination(a)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------- correlations

def _kernel_matrix(n, tau, points):
    ell = len(points)
    big = np.zeros((2 * ell, 2 * ell))
    for i in range(ell):
        # diagonal blocks: I(x,x) = D(x,x) = 0
        sxx = kernel_s(n, tau, points[i], points[i])
        big[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[0.0, sxx], [-sxx, 0.0]]
        for j in range(i + 1, ell):
            blk = kernel_block(n, tau, points[i], points[j]).matrix
            big[2 * i:2 * i + 2, 2 * j:2 * j + 2] = blk
            big[2 * j:2 * j + 2, 2 * i:2 * i + 2] = -blk.T
    return big


def real_correlation(n: int, tau: float, points) -> CorrelationValue:
    """rho^l_n(x_1..x_l) = n^(l/2) pf[K_n(x_i, x_j)] for distinct points."""
    pts = tuple(float(v) for v in np.atleast_1d(points))
    ell = len(pts)
    if ell < 1 or ell > 6:
        raise ValueError("real_correlation supports 1 <= l <= 6 points")
    if ell > n:
        raise ValueError("need at most n points")
    if len(set(pts)) != ell:
        raise ValueError("points must be distinct")
    sg, lg = pfaffian(_kernel_matrix(n, tau, pts))
    return CorrelationValue(ell, pts, sg, lg + 0.5 * ell * math.log(n))


def _log_k(n, tau):
    return (-n * (n + 1) / 4 * math.log(n) + n / 2 * math.log1p(tau)
            + n * (n + 1) / 4 * math.log(2.0) + sum(gammaln(l / 2) for l in range(1, n + 1)))


def ensemble_constants(n: int, ell: int, tau: float) -> dict:
    """log K_n(tau) and log D_{n, ell}(tau)."""
    if n < 1 or ell < 1:
        raise ValueError("need n >= 1 and ell >= 1")
    lk = _log_k(n, tau)
    ld = (_log_k(n + ell, tau) - lk
          + (n / 2 + (n + ell) * (n + ell - 1) / 4) * math.log((n + ell) / n))
    return {"log_k": float(lk), "log_d": float(ld)}


def moment_via_kernel(n: int, tau: float, mus):
    """E[prod_i |det(A_n - mu_i)|] from the correlation function of GEE(n + l).

    Returns (sign, log value); the sign is +1 unless the correlation
    evaluates to zero.
    """
    mus = [float(v) for v in np.atleast_1d(mus)]
    ell = len(mus)
    if ell < 1 or ell > 4:
        raise ValueError("moment_via_kernel supports 1 <= l <= 4")
    if len(set(mus)) != ell:
        raise ValueError("coincident points are not supported")
    mus = sorted(mus, reverse=True)
    _check_tau(tau)
    ld = ensemble_constants(n, ell, tau)["log_d"]
    gauss = n / (2 * (1 + tau)) * sum(m * m for m in mus)
    log_vdm = sum(math.log(abs(a - b)) for a, b in itertools.combinations(mus, 2))
    scale = math.sqrt(n / (n + ell))
    corr = real_correlation(n + ell, tau, [scale * m for m in mus])
    return corr.sign, ld + gauss - log_vdm + corr.log_mag
