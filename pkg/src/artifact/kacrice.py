"""Random non-gradient vector field on the sphere and its Kac-Rice ingredients.

The field on the sphere of radius sqrt(n) is

    f(x) = c_s grad H(x) + (c_a / n) sum_j x_j A_ij(x),

with H a spherical p-spin Hamiltonian and A an antisymmetric matrix of
independent (p-2)-spin models.  Its tangential part is F = -lambda x + f.

Two independent routes give the conditional covariances used by the
second-moment computation:

* route A assembles them from closed-form covariance tables
  (``sigma_z``, ``sigma_s_and_mean``);
* route B builds the joint Gaussian vector of field values and
  derivatives from the raw covariance kernel and conditions it with a
  generic Schur complement (``functional_covariance``, ``schur_oracle``).
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import gammaln

from .complexity import ModelParams, sigma_u
from .kernel import moment_via_kernel

__all__ = [
    "SphericalPSpinField",
    "CovarianceSpec",
    "sample_field",
    "eval_field",
    "covariance_oracle",
    "functional_covariance",
    "schur_oracle",
    "sigma_z",
    "sigma_s_and_mean",
    "sigma_edge_variances",
    "count_equilibria_circle",
    "log_sphere_volume",
    "expected_crit_first_moment",
    "second_moment_prefactor",
    "second_moment_integrand",
]


# ---------------------------------------------------------------- field

@dataclass
class SphericalPSpinField:
    p: int
    n: int
    tau: float
    h_coeffs: np.ndarray  # symmetrised order-p tensor, already scaled
    a_coeffs: np.ndarray  # shape (n, n) + (n,)*(p-2), antisymmetric in the first two axes
    c_s: float
    c_a: float


@dataclass(frozen=True)
class CovarianceSpec:
    """Overlap functions of the unit-sphere field covariance."""

    p: int
    tau: float

    def phi1(self, s, d: int = 0):
        p = self.p
        c = math.prod(range(p - d, p)) * p if d else p
        return c * s ** (p - 1 - d) if p - 1 - d >= 0 else 0.0 * s

    def phi2(self, s, d: int = 0):
        p = self.p
        m = p - 2
        c = self.tau * p * (p - 1) * (math.prod(range(m - d + 1, m + 1)) if d else 1)
        return c * s ** (m - d) if m - d >= 0 else 0.0 * s

    def phi3(self, s):
        return self.phi1(s) + s * self.phi2(s)


def _symmetrise(t):
    p = t.ndim
    out = np.zeros_like(t)
    import itertools
    perms = list(itertools.permutations(range(p)))
    for perm in perms:
        out += np.transpose(t, perm)
    return out / len(perms)


def sample_field(p: int, tau: float, n: int, rng: np.random.Generator) -> SphericalPSpinField:
    """Draw the coefficient tensors with the l-spin scaling n^(-(l-1)/2)."""
    if p < 3:
        raise ValueError("p must be >= 3")
    if n < 2:
        raise ValueError("n must be >= 2")
    params = ModelParams(p, tau)
    h = rng.standard_normal((n,) * p) * n ** (-(p - 1) / 2)
    h = _symmetrise(h)
    raw = rng.standard_normal((n, n) + (n,) * (p - 2)) * n ** (-(p - 3) / 2)
    upper = np.triu(np.ones((n, n)), 1).reshape((n, n) + (1,) * (p - 2))
    raw = raw * upper
    a = raw - np.swapaxes(raw, 0, 1)
    c_s = math.sqrt(params.alpha / p)
    c_a = math.sqrt((p - 1) * (1 - tau))
    return SphericalPSpinField(p, n, float(tau), h, a, c_s, c_a)


def _contract(t, x, times):
    for _ in range(times):
        t = t @ x
    return t


def _hamiltonian_and_grad(field, x):
    g = field.p * _contract(field.h_coeffs, x, field.p - 1)
    return float(g @ x) / field.p, g


def eval_field(field: SphericalPSpinField, x) -> dict:
    """f, lambda = (x, f)_n and the tangential field F = f - lambda x."""
    x = np.asarray(x, dtype=float)
    n = field.n
    if x.shape != (n,):
        raise ValueError(f"expected a vector of length {n}")
    if abs(x @ x - n) > 1e-9 * n:
        raise ValueError("point is not on the sphere of radius sqrt(n)")
    h, grad = _hamiltonian_and_grad(field, x)
    amat = _contract(field.a_coeffs, x, field.p - 2)  # (n, n)
    f = field.c_s * grad + field.c_a * (amat @ x) / n
    lam = float(x @ f) / n
    return {"f": f, "lambda": lam, "F": f - lam * x, "H": h, "A": amat}


def covariance_oracle(p: int, tau: float, n: int, x, y) -> np.ndarray:
    """E[f_k(x) f_l(y)] = delta_kl p R^(p-1) + tau p (p-1) R^(p-2) y_k x_l / n, R = (x, y)_n."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = float(x @ y) / n
    return p * r ** (p - 1) * np.eye(n) + tau * p * (p - 1) * r ** (p - 2) * np.outer(y, x) / n


# ---------------------------------------------------------------- route B

def functional_covariance(params: ModelParams, f, g) -> float:
    """Covariance of two linear functionals of the unit-sphere field.

    A functional is ("val", x, a, None) for a . g(x) or ("der", x, a, v) for
    a . (D_v g)(x); the field kernel is delta_ij Phi1(x.y) + y_i x_j Phi2(x.y).
    """
    spec = CovarianceSpec(params.p, params.tau)
    k1, x, a, v = f
    k2, y, b, w = g
    s = float(x @ y)
    p1 = [spec.phi1(s, d) for d in range(3)]
    p2 = [spec.phi2(s, d) for d in range(3)]
    ab, ya, xb = a @ b, y @ a, x @ b
    if k1 == "val" and k2 == "val":
        return ab * p1[0] + ya * xb * p2[0]
    if k1 == "der" and k2 == "val":
        return ab * (y @ v) * p1[1] + ya * (b @ v) * p2[0] + ya * xb * (y @ v) * p2[1]
    if k1 == "val" and k2 == "der":
        return ab * (x @ w) * p1[1] + (a @ w) * xb * p2[0] + ya * xb * (x @ w) * p2[1]
    xw, yv, vw = x @ w, y @ v, v @ w
    return (ab * (p1[2] * xw * yv + p1[1] * vw)
            + (b @ v) * ((a @ w) * p2[0] + ya * xw * p2[1])
            + (a @ w) * xb * yv * p2[1]
            + ya * xb * vw * p2[1]
            + ya * xb * yv * xw * p2[2])


def _frames(r, dim=5):
    rs = math.sqrt(1 - r * r)
    e = np.eye(dim)
    n0 = e[dim - 1]
    nr = rs * e[dim - 2] + r * e[dim - 1]
    last0 = e[dim - 2]
    lastr = r * e[dim - 2] - rs * e[dim - 1]
    return n0, nr, last0, lastr, e


def schur_oracle(params: ModelParams, r: float) -> dict:
    """Conditional covariances by direct conditioning of the joint Gaussian vector.

    Point 1 is the north pole n, point 2 is n(r).  Returns Sigma_U (covariance
    of the radial values given G = 0), Sigma_Z, Sigma_S and the regression
    coefficients m of the corner entries on the radial values, in the same
    units as ``sigma_z`` and ``sigma_s_and_mean``.
    """
    if abs(r) >= 1:
        raise ValueError("need |r| < 1")
    p = params.p
    q = p * (p - 1)
    n0, nr, l0, lr, e = _frames(r)
    ei = e[0]

    def cmat(fs):
        return np.array([[functional_covariance(params, f, g) for g in fs] for f in fs])

    def condition(top, given):
        m = cmat(top + given)
        k = len(top)
        coef = m[:k, k:] @ np.linalg.inv(m[k:, k:])
        return m[:k, :k] - coef @ m[k:, :k], coef

    gvals = [("val", n0, l0, None), ("val", nr, lr, None)]
    zeta = [("val", n0, n0, None), ("val", nr, nr, None)]
    su, _ = condition(zeta, gvals)

    # (E_iG_{N-1}, E_{N-1}G_i) at n, then at n(r); E_iG_j = der(x, e_j, e_i)
    edges = [("der", n0, l0, ei), ("der", n0, ei, l0), ("der", nr, lr, ei), ("der", nr, ei, lr)]
    gi = [("val", n0, ei, None), ("val", nr, ei, None)]
    sz, _ = condition(edges, gi)

    corner = [("der", n0, l0, l0), ("der", nr, lr, lr)]
    ss, coef = condition(corner, zeta + gvals)
    return {"sigma_u": su,
            "sigma_z": sz / q,
            "sigma_s": ss / q,
            "mean": coef[:, :2]}


# ---------------------------------------------------------------- route A

def _edge_table(p, tau, r):
    # cross covariances of (E_{N-1}G_i, E_iG_{N-1}, G_i) at n(r) (rows) and n (cols)
    rs = math.sqrt(1 - r * r)
    q = p * (p - 1)
    c = r ** (p - 3) if p > 3 else 1.0
    head = r * r - (p - 2) * rs**2
    return q * np.array([
        [c * head, tau * c * head, -(r ** (p - 2)) * rs],
        [tau * c * head, c * (r * r - tau * (p - 2) * rs**2), -tau * r ** (p - 2) * rs],
        [r ** (p - 2) * rs, tau * r ** (p - 2) * rs, r ** (p - 1) / (p - 1)],
    ])


def sigma_z(params: ModelParams, r: float) -> np.ndarray:
    """Covariance of (E_iG_{N-1}(n), E_{N-1}G_i(n), E_iG_{N-1}(n(r)), E_{N-1}G_i(n(r))) given G_i = 0, over p(p-1)."""
    if abs(r) >= 1:
        raise ValueError("sigma_z needs |r| < 1")
    p, tau = params.p, params.tau
    q = p * (p - 1)
    t = _edge_table(p, tau, r)
    same = q * np.array([[1.0, tau], [tau, 1.0]])
    cross = t[:2, :2]  # cov(Z at n(r), Z at n)
    sa = np.block([[same, cross.T], [cross, same]])
    sb = np.zeros((4, 2))  # columns: G_i(n), G_i(n(r))
    sb[:2, 1] = t[2, :2]
    sb[2:, 0] = t[:2, 2]
    cg = p * np.array([[1.0, r ** (p - 1)], [r ** (p - 1), 1.0]])
    out = (sa - sb @ np.linalg.solve(cg, sb.T)) / q
    # table order is (E_{N-1}G_i, E_iG_{N-1}); swap within each point
    perm = [1, 0, 3, 2]
    out = out[np.ix_(perm, perm)]
    return 0.5 * (out + out.T)


def _corner_table(p, tau, r):
    # cross covariances of (zeta, G_{N-1}, E_{N-1}G_{N-1}) at n(r) (rows) and n (cols)
    rs = math.sqrt(1 - r * r)
    al = 1 + (p - 1) * tau
    q = p * (p - 1)
    pw = lambda k: r**k if k >= 0 else (r**k if r != 0 else 0.0)
    a1 = p * rs * pw(p - 3) * (p * al * r * r - (p - 1) * (p - 2) * tau)
    a2 = (pw(p - 4) * rs**4 * q * (p - 2) * (p - 3) * tau
          - pw(p - 2) * rs**2 * q * (p + 5 * p * tau - 8 * tau)
          + r**p * p * (p + 2 * (p - 1) * tau))
    return np.array([
        [p * r**p * al, p * rs * r ** (p - 1) * al, -p * pw(p - 2) * (1 - p * rs**2) * al],
        [-p * rs * r ** (p - 1) * al, p * pw(p - 2) * (r * r - rs**2 * (p - 1) * tau), a1],
        [-p * pw(p - 2) * (1 - p * rs**2) * al, -a1, a2],
    ])


def sigma_s_and_mean(params: ModelParams, r: float) -> dict:
    """Corner covariance Sigma_S (over p(p-1)) and regression coefficients m.

    The corner entry at point k is E_{N-1}G_{N-1} + zeta; given G = 0 its
    conditional mean is sum_l m[k, l] zeta_l, and in the rescaled Jacobian
    this becomes sum_l m[k, l] u_hat_l.
    """
    if abs(r) >= 1:
        raise ValueError("sigma_s_and_mean needs |r| < 1")
    p, tau = params.p, params.tau
    q = p * (p - 1)
    al = params.alpha
    cross = _corner_table(p, tau, r)  # rows n(r), cols n
    same = np.array([[p * al, 0, -p * al], [0, p, 0], [-p * al, 0, q * (1 + tau) + p * al]])
    full = np.block([[same, cross.T], [cross, same]])  # (zeta, G, EG) at n then n(r)
    lin = np.zeros((6, 6))
    lin[0, [0, 2]] = 1  # corner at n
    lin[1, [3, 5]] = 1  # corner at n(r)
    lin[2, 0] = 1
    lin[3, 3] = 1
    lin[4, 1] = 1
    lin[5, 4] = 1
    g = lin @ full @ lin.T
    coef = g[:2, 2:] @ np.linalg.inv(g[2:, 2:])
    ss = (g[:2, :2] - coef @ g[2:, :2]) / q
    return {"sigma_s": 0.5 * (ss + ss.T), "mean": coef[:, :2]}


def sigma_edge_variances(params: ModelParams, r: float) -> dict:
    """Conditional variances of single Jacobian entries at the pole.

    ``sigma1`` is Var(E_{N-1}G_i | G = 0) = p(p-1) [Sigma_Z]_22 and ``sigma2``
    is p(p-1) [Sigma_S]_11 (corner given G = 0 and the radial values).
    ``sigma2_given_g`` is Var(E_{N-1}G_{N-1} | G = 0) without conditioning on
    the radial values, which is what the a_1 closed form computes.
    """
    p, tau = params.p, params.tau
    q = p * (p - 1)
    a1 = _corner_table(p, tau, r)[1, 2]
    c = p * r**p - tau * p * (p - 1) * r ** (p - 2) * (1 - r * r)
    return {"sigma1": float(q * sigma_z(params, r)[1, 1]),
            "sigma2": float(q * sigma_s_and_mean(params, r)["sigma_s"][0, 0]),
            "sigma2_given_g": float(p * (p + 2 * tau * (p - 1)) - p * a1**2 / (p * p - c * c))}


def sigma1_closed_form(params: ModelParams, r: float) -> float:
    p = params.p
    return p * (p - 1) * (1 - (p - 1) * r ** (2 * (p - 2)) * (1 - r * r) / (1 - r ** (2 * p - 2)))


# ---------------------------------------------------------------- N = 2 counting

def _tangential(field, theta):
    x = math.sqrt(2.0) * np.array([math.cos(theta), math.sin(theta)])
    t = np.array([-math.sin(theta), math.cos(theta)])
    return float(eval_field(field, x)["F"] @ t)


def count_equilibria_circle(field: SphericalPSpinField, grid: int = 4096, return_info: bool = False):
    """Zeros of the tangential component on the circle of radius sqrt(2).

    Sign changes on a uniform grid are refined by bracketing to 1e-12.
    A grid value that is exactly zero without a sign change marks a
    degenerate sample; the count is then returned as None.
    """
    if field.n != 2:
        raise ValueError("circle counting needs n = 2")
    th = np.linspace(0.0, 2 * math.pi, grid, endpoint=False)
    vals = _tangential_grid(field, th)
    nxt = np.roll(vals, -1)
    roots = []
    degenerate = False
    for i in np.nonzero(vals == 0)[0]:
        if np.sign(vals[i - 1]) == np.sign(vals[(i + 1) % grid]):
            degenerate = True
    for i in np.nonzero(vals * nxt < 0)[0]:
        a = th[i]
        b = th[i + 1] if i + 1 < grid else 2 * math.pi
        roots.append(brentq(lambda t: _tangential(field, t), a, b, xtol=1e-12))
    count = None if degenerate else len(roots) + int(np.sum(vals == 0))
    if return_info:
        return count, np.array(roots)
    return count


def _batch_contract(t, xs, times):
    # contract the trailing axis of t with each row of xs, `times` times
    out = np.tensordot(xs, t, axes=([1], [t.ndim - 1]))
    for _ in range(times - 1):
        out = np.einsum("k...i,ki->k...", out, xs)
    return out


def _tangential_grid(field, th):
    xs = math.sqrt(2.0) * np.stack([np.cos(th), np.sin(th)], axis=1)
    ts = np.stack([-np.sin(th), np.cos(th)], axis=1)
    grad = field.p * _batch_contract(field.h_coeffs, xs, field.p - 1)
    amat = _batch_contract(field.a_coeffs, xs, field.p - 2)
    f = field.c_s * grad + field.c_a * np.einsum("kij,kj->ki", amat, xs) / 2.0
    return np.einsum("ki,ki->k", f, ts)


# ---------------------------------------------------------------- Kac-Rice formulas

def log_sphere_volume(d: int) -> float:
    """log of the surface area of the unit sphere S^{d} in R^{d+1}."""
    return math.log(2.0) + (d + 1) / 2 * math.log(math.pi) - gammaln((d + 1) / 2)


def _log_cbar(n, p):
    return log_sphere_volume(n - 1) + (n - 1) / 2 * math.log((n - 1) * (p - 1) / (2 * math.pi))


def _inner_moment(n, tau, xhat):
    # E|det(A_{n-1} - xhat)| for A_{n-1} ~ GEE(n-1, tau)
    m = n - 1
    if m == 1:
        s = math.sqrt(1 + tau)
        return s * math.sqrt(2 / math.pi) * math.exp(-xhat**2 / (2 * s * s)) + xhat * math.erf(xhat / (s * math.sqrt(2)))
    sign, logv = moment_via_kernel(m, tau, [xhat])
    return sign * math.exp(logv)


def expected_crit_first_moment(params: ModelParams, n: int, intervals=((-math.inf, math.inf),)) -> float:
    """Expected number of equilibria with radial value in a union of intervals.

    C_bar_n * int_B E|det(A_{n-1} - x_hat)| N(x; 0, p alpha / n) dx with
    x_hat = sqrt(n / ((n-1) p (p-1))) x.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if params.tau <= 0:
        raise ValueError("the kernel route needs tau > 0")
    if n - 1 > 9:
        raise ValueError("kernel route limited to n - 1 <= 9")
    p = params.p
    var = params.p_alpha / n
    scale = math.sqrt(n / ((n - 1) * p * (p - 1)))

    def integrand(x):
        dens = math.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)
        if dens == 0.0:
            return 0.0
        return _inner_moment(n, params.tau, scale * x) * dens

    sd = math.sqrt(var)
    total = 0.0
    for lo, hi in intervals:
        lo, hi = max(lo, -12 * sd), min(hi, 12 * sd)
        if hi <= lo:
            continue
        cuts = np.linspace(lo, hi, 9)
        for a, b in zip(cuts[:-1], cuts[1:]):
            val, err = quad(integrand, a, b, epsabs=1e-12, epsrel=1e-9, limit=100)
            total += val
    return math.exp(_log_cbar(n, p)) * total


def g_two_point(params: ModelParams, r: float) -> float:
    """(1 - r^2)^(-1/2) (1 - (r^p - tau (p-1) r^(p-2) (1 - r^2))^2)^(-1/2)."""
    p, tau = params.p, params.tau
    c = r**p - tau * (p - 1) * r ** (p - 2) * (1 - r * r)
    return 1.0 / math.sqrt((1 - r * r) * (1 - c * c))


def second_moment_prefactor(params: ModelParams, n: int, r: float) -> float:
    """log of C_n ((1 - r^2)/(1 - r^(2p-2)))^((n-2)/2) G(r)."""
    p = params.p
    log_cn = (log_sphere_volume(n - 1) + log_sphere_volume(n - 2)
              + (n - 1) * math.log((n - 1) * (p - 1) / (2 * math.pi)))
    ratio = (1 - r * r) / (1 - r ** (2 * p - 2)) if r != 0 else 1.0
    return log_cn + (n - 2) / 2 * math.log(ratio) + math.log(g_two_point(params, r))


def second_moment_integrand(params: ModelParams, n: int, r: float, intervals=((-math.inf, math.inf),),
                            samples: int = 20000, seed: int = 0):
    """MC value of the two-point Kac-Rice integrand at overlap r.

    The radial pair (U1, U2) is drawn from N(0, Sigma_U(r) / n), the
    conditional Jacobians from ``conditional_pair_sample``.

    Returns:
        (value, stderr).
    """
    from .montecarlo import conditional_pair_batch
    from .ensemble import stream

    if abs(r) >= 1:
        raise ValueError("need |r| < 1")
    if n > 20 or n < 3:
        raise ValueError("second_moment_integrand needs 3 <= n <= 20")
    cov = sigma_u(params, r).covariance / n
    rng = stream(seed, 0)
    u = rng.multivariate_normal(np.zeros(2), cov, size=samples, method="eigh")
    m1, m2 = conditional_pair_batch(params, n, r, u[:, 0], u[:, 1], stream(seed, 1))
    _, l1 = np.linalg.slogdet(m1)
    _, l2 = np.linalg.slogdet(m2)
    ind = np.ones(samples, dtype=bool)
    for k in range(2):
        inside = np.zeros(samples, dtype=bool)
        for lo, hi in intervals:
            inside |= (u[:, k] > lo) & (u[:, k] < hi)
        ind &= inside
    vals = np.where(ind, np.exp(l1 + l2), 0.0)
    pref = math.exp(second_moment_prefactor(params, n, r))
    return pref * float(vals.mean()), pref * float(vals.std(ddof=1) / math.sqrt(samples))
