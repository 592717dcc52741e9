"""Seeded Monte Carlo estimators for determinant moments and conditional Jacobians.

Samples are generated in fixed-size blocks; block b of a run with seed s
uses the substream ``stream(s, tag, b)``.  Blocks may run on several
threads but are merged in block order, so results do not depend on the
thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp

from .complexity import ModelParams
from .ensemble import log_det_abs, pair_weights, real_eigenvalues, sample_gee_batch, stream
from .kacrice import sigma_s_and_mean, sigma_z
from .kernel import real_correlation

__all__ = [
    "BLOCK",
    "McEstimate",
    "ConditionalJacobianPair",
    "RealDensity",
    "default_threads",
    "estimate_abs_det_moment",
    "estimate_abs_det_product",
    "moment_ratio_scan",
    "real_eigenvalue_density",
    "conditional_pair_sample",
    "conditional_pair_batch",
    "delta_ratio_estimate",
    "perturbation_decomposition",
    "covariance_audit",
]

BLOCK = 1000
THREADS_ENV = "ARTIFACT_THREADS"

# substream tags
_TAG_DET = 1
_TAG_RATIO = 2
_TAG_DENSITY = 3
_TAG_DELTA = 4


@dataclass
class McEstimate:
    """log of a Monte Carlo mean with a delta-method standard error."""

    log_mean: float
    stderr_of_log: float
    samples: int
    seed: int
    singular: int = 0

    @property
    def mean(self) -> float:
        return math.exp(self.log_mean)


@dataclass
class ConditionalJacobianPair:
    r: float
    u1: float
    u2: float
    m1: np.ndarray
    m2: np.ndarray


@dataclass
class RealDensity:
    edges: np.ndarray
    density: np.ndarray
    stderr: np.ndarray
    kernel: np.ndarray
    mean_count: float
    mean_count_stderr: float
    kernel_count: float
    parity_ok: bool
    counts: np.ndarray = field(repr=False)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _run_blocks(fn, seed, tag, samples, threads=None):
    """Apply fn(rng, size) to each block and concatenate along axis 0 in block order."""
    sizes = [min(BLOCK, samples - s) for s in range(0, samples, BLOCK)]
    jobs = [(stream(seed, tag, b), size) for b, size in enumerate(sizes)]
    threads = threads or default_threads()
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda j: fn(*j), jobs))
    else:
        parts = [fn(*j) for j in jobs]
    return np.concatenate(parts, axis=0)


def _log_mean(logs):
    """log of mean(exp(logs)) and the delta-method stderr of that log."""
    logs = np.asarray(logs, dtype=float)
    n = logs.size
    top = np.max(logs)
    if not np.isfinite(top):
        raise FloatingPointError("all samples are singular")
    lm = float(logsumexp(logs) - math.log(n))
    w = np.exp(logs - top)
    se = float(np.std(w, ddof=1) / (math.sqrt(n) * np.mean(w)))
    return lm, se


def estimate_abs_det_moment(n: int, tau: float, x: float, ell: int, samples: int, seed: int,
                            threads: int | None = None) -> McEstimate:
    """Estimate log E|det(A - x I)|^ell for A ~ GEE(n, tau)."""
    if ell < 0:
        raise ValueError("ell must be >= 0")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if ell == 0:
        return McEstimate(0.0, 0.0, samples, seed)
    logs = _run_blocks(lambda rng, m: log_det_abs(sample_gee_batch(n, tau, m, rng), x),
                       seed, _TAG_DET, samples, threads)
    lm, se = _log_mean(ell * logs)
    return McEstimate(lm, se, samples, seed, int(np.sum(~np.isfinite(logs))))


def estimate_abs_det_product(n: int, tau: float, mus, samples: int, seed: int,
                             threads: int | None = None) -> McEstimate:
    """Estimate log E[prod_i |det(A - mu_i I)|] for A ~ GEE(n, tau)."""
    mus = [float(m) for m in np.atleast_1d(mus)]
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if not mus:
        return McEstimate(0.0, 0.0, samples, seed)

    def block(rng, m):
        a = sample_gee_batch(n, tau, m, rng)
        return sum(log_det_abs(a, mu) for mu in mus)

    logs = _run_blocks(block, seed, _TAG_DET * 100 + len(mus), samples, threads)
    lm, se = _log_mean(logs)
    return McEstimate(lm, se, samples, seed, int(np.sum(~np.isfinite(logs))))


def moment_ratio_scan(n_list, tau: float, x: float, ell: int, samples: int, seed: int,
                      threads: int | None = None) -> dict:
    """log E|det|^ell - ell log E|det| per n, from one shared sample per n.

    Returns a dict with per-n rows (n, log_ratio, stderr) and the least
    squares slope of log_ratio against log n.
    """
    if abs(abs(x) - (1 + tau)) < 1e-12:
        raise ValueError("x must not sit on the bulk edge")
    rows = []
    for n in n_list:
        logs = _run_blocks(lambda rng, m, n=n: log_det_abs(sample_gee_batch(n, tau, m, rng), x),
                           seed, _TAG_RATIO * 1000 + int(n), samples, threads)
        top = logs.max()
        a = np.exp(ell * (logs - top))
        b = np.exp(logs - top)
        ma, mb = a.mean(), b.mean()
        log_ratio = math.log(ma) - ell * math.log(mb)
        # delta method for log(mean a) - ell log(mean b) with shared samples
        cov = np.cov(np.vstack([a, b]))
        grad = np.array([1 / ma, -ell / mb])
        se = math.sqrt(max(grad @ cov @ grad, 0.0) / len(logs))
        rows.append({"n": int(n), "log_ratio": float(log_ratio), "stderr": float(se)})
    ln = np.log([r["n"] for r in rows])
    lr = np.array([r["log_ratio"] for r in rows])
    slope = float(np.polyfit(ln, lr, 1)[0]) if len(rows) > 1 else float("nan")
    return {"rows": rows, "slope": slope}


def _rho1(n, tau, x):
    return real_correlation(n, tau, [x]).value


def real_eigenvalue_density(n: int, tau: float, bins, samples: int, seed: int,
                            threads: int | None = None) -> RealDensity:
    """Histogram of real eigenvalues with the kernel prediction per bin."""
    if n > 60:
        raise ValueError("real_eigenvalue_density is limited to n <= 60")
    edges = np.asarray(bins, dtype=float)
    width = np.diff(edges)

    def block(rng, m):
        reals = real_eigenvalues(sample_gee_batch(n, tau, m, rng))
        h = np.stack([np.histogram(e, bins=edges)[0] for e in reals])
        c = np.array([len(e) for e in reals])
        return np.column_stack([h, c])

    data = _run_blocks(block, seed, _TAG_DENSITY, samples, threads)
    hist, counts = data[:, :-1], data[:, -1]
    density = hist.mean(axis=0) / width
    stderr = hist.std(axis=0, ddof=1) / math.sqrt(samples) / width
    kern = np.array([quad(lambda t: _rho1(n, tau, t), a, b, epsabs=1e-10, limit=100)[0]
                     for a, b in zip(edges[:-1], edges[1:])]) / width
    lim = (1 + tau) + 8.0 / math.sqrt(n) + 1.0
    cuts = np.linspace(-lim, lim, 17)
    kcount = sum(quad(lambda t: _rho1(n, tau, t), a, b, epsabs=1e-10, limit=100)[0]
                 for a, b in zip(cuts[:-1], cuts[1:]))
    return RealDensity(edges, density, stderr, kern, float(counts.mean()),
                       float(counts.std(ddof=1) / math.sqrt(samples)), float(kcount),
                       bool(np.all(counts % 2 == n % 2)), counts)


# ---------------------------------------------------------------- conditional Jacobians

def _psd_factor(cov, name):
    """Symmetric square root; rejects eigenvalues below -1e-10."""
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -1e-10:
        raise ValueError(f"{name} is not positive semi-definite (min eigenvalue {w.min():.3e})")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _u_hat(params, n, u):
    return math.sqrt(n / ((n - 1) * params.p * (params.p - 1))) * np.asarray(u, dtype=float)


def _check_pair_args(params, n, r):
    if abs(r) >= 1:
        raise ValueError("need |r| < 1")
    if n < 3:
        raise ValueError("need n >= 3")


def conditional_pair_batch(params: ModelParams, n: int, r: float, u1, u2, rng):
    """Stacks of conditional Jacobians (M1, M2), one pair per entry of u1/u2.

    Each M^k is (n-1) x (n-1): a correlated GEE(n-2) pair scaled by
    sqrt((n-2)/(n-1)) in the top-left block, edge entries with covariance
    Sigma_Z / (n-1), corners with mean m u_hat and covariance
    Sigma_S / (n-1), minus u_hat_k on the diagonal.
    """
    _check_pair_args(params, n, r)
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    u2 = np.atleast_1d(np.asarray(u2, dtype=float))
    u1, u2 = np.broadcast_arrays(u1, u2)
    size = u1.size
    d = n - 1
    p, tau = params.p, params.tau
    lz = _psd_factor(sigma_z(params, r), "Sigma_Z")
    sm = sigma_s_and_mean(params, r)
    ls = _psd_factor(sm["sigma_s"], "Sigma_S")

    mats = sample_gee_batch(n - 2, tau, 3 * size, rng).reshape(3, size, n - 2, n - 2)
    own, shared, (s1, s2) = pair_weights(p, r)
    scale = math.sqrt((n - 2) / (n - 1))
    m1 = np.zeros((size, d, d))
    m2 = np.zeros((size, d, d))
    m1[:, :-1, :-1] = scale * (own * mats[1] + s1 * shared * mats[0])
    m2[:, :-1, :-1] = scale * (own * mats[2] + s2 * shared * mats[0])

    z = rng.standard_normal((size, n - 2, 4)) @ lz.T / math.sqrt(d)
    m1[:, :-1, -1] = z[..., 0]
    m1[:, -1, :-1] = z[..., 1]
    m2[:, :-1, -1] = z[..., 2]
    m2[:, -1, :-1] = z[..., 3]

    uh = np.stack([_u_hat(params, n, u1), _u_hat(params, n, u2)], axis=1)  # (size, 2)
    corner = uh @ sm["mean"].T + rng.standard_normal((size, 2)) @ ls.T / math.sqrt(d)
    m1[:, -1, -1] = corner[:, 0]
    m2[:, -1, -1] = corner[:, 1]
    eye = np.eye(d)
    m1 -= uh[:, 0, None, None] * eye
    m2 -= uh[:, 1, None, None] * eye
    return m1, m2


def conditional_pair_sample(params: ModelParams, n: int, r: float, u1: float, u2: float,
                            rng) -> ConditionalJacobianPair:
    m1, m2 = conditional_pair_batch(params, n, r, u1, u2, rng)
    return ConditionalJacobianPair(float(r), float(u1), float(u2), m1[0], m2[0])


def delta_ratio_estimate(params: ModelParams, n: int, r: float, u1: float, u2: float,
                         samples: int, seed: int, threads: int | None = None) -> McEstimate:
    """log of E[|det M1||det M2|] / (E|det(A - u_hat_1)| E|det(A - u_hat_2)|), A ~ GEE(n-1)."""
    _check_pair_args(params, n, r)

    def block(rng, m):
        a, b = conditional_pair_batch(params, n, r, np.full(m, u1), np.full(m, u2), rng)
        return log_det_abs(a) + log_det_abs(b)

    num = _log_mean(_run_blocks(block, seed, _TAG_DELTA, samples, threads))
    uh = _u_hat(params, n, [u1, u2])
    dens = [estimate_abs_det_moment(n - 1, params.tau, float(uh[k]), 1, samples,
                                    int(np.random.SeedSequence([seed, _TAG_DELTA, k]).generate_state(1)[0]),
                                    threads)
            for k in range(2)]
    lm = num[0] - dens[0].log_mean - dens[1].log_mean
    se = math.sqrt(num[1] ** 2 + dens[0].stderr_of_log ** 2 + dens[1].stderr_of_log ** 2)
    return McEstimate(lm, se, samples, seed)


# ---------------------------------------------------------------- perturbation split

def _lower(m):
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() < -1e-10:
        raise np.linalg.LinAlgError("not positive semi-definite")
    # Cholesky of a PSD matrix, tolerant of zero eigenvalues
    try:
        return np.linalg.cholesky(m + 1e-300 * np.eye(len(m)))
    except np.linalg.LinAlgError:
        q, rr = np.linalg.qr((v * np.sqrt(np.clip(w, 0, None))).T)
        return rr.T * np.sign(np.diag(rr))[None, :]


def _edge_maps(sz, tau):
    """(P1, Q1, P2, Q2) acting on whitened shared/own pairs with Z^k = P_k xi + Q_k eta_k."""
    t = np.array([[1.0, tau], [tau, 1.0]])
    lt = np.linalg.cholesky(t)
    s11, s12, s22 = sz[:2, :2], sz[:2, 2:], sz[2:, 2:]
    w = np.linalg.solve(lt, np.linalg.solve(lt, s12.T).T)  # L^-1 S12 L^-T
    uu, dd, vt = np.linalg.svd(w)
    p1 = lt @ uu * np.sqrt(dd)
    p2 = lt @ vt.T * np.sqrt(dd)
    try:
        return p1, _lower(s11 - p1 @ p1.T), p2, _lower(s22 - p2 @ p2.T)
    except np.linalg.LinAlgError:
        # fall back on sequential conditioning: Z^1 own, Z^2 regressed on Z^1
        l1 = _lower(s11)
        reg = np.linalg.solve(s11, s12).T
        return np.zeros((2, 2)), l1, reg @ l1, _lower(s22 - reg @ s12)


def perturbation_decomposition(params: ModelParams, n: int, r: float, u1: float, u2: float, rng):
    """Correlated GEE(n-1) pair (A1, A2) and rank-two corrections (E1, E2).

    A^k + E^k - u_hat_k I has the law of the conditional Jacobian M^k; E^k is
    supported on the last row and column and is built from the same
    Gaussian entries as A^k so that it vanishes when the conditional
    covariances coincide with the GEE ones.
    """
    _check_pair_args(params, n, r)
    p, tau = params.p, params.tau
    d = n - 1
    g = sample_gee_batch(d, tau, 3, rng)  # shared, own 1, own 2
    own, shared, (s1, s2) = pair_weights(p, r)
    a1 = own * g[1] + s1 * shared * g[0]
    a2 = own * g[2] + s2 * shared * g[0]

    lt = np.linalg.cholesky(np.array([[1.0, tau], [tau, 1.0]]))
    white = [np.linalg.solve(lt, np.stack([m[:-1, -1], m[-1, :-1]])) for m in g]  # (2, d-1)
    p1, q1, p2, q2 = _edge_maps(sigma_z(params, r), tau)
    z1 = p1 @ white[0] + q1 @ white[1]
    z2 = p2 @ white[0] + q2 @ white[2]

    sm = sigma_s_and_mean(params, r)
    ss = sm["sigma_s"]
    c = ss[0, 1]
    sc = math.sqrt(1 + tau)
    cs = [1.0 if c >= 0 else -1.0, 1.0]
    uh = _u_hat(params, n, [u1, u2])
    mean = sm["mean"] @ uh
    corners = [mean[k] + cs[k] * math.sqrt(abs(c)) * g[0][-1, -1] / sc
               + math.sqrt(max(ss[k, k] - abs(c), 0.0)) * g[k + 1][-1, -1] / sc for k in range(2)]

    out = []
    for k, (a, z) in enumerate(((a1, z1), (a2, z2))):
        target = a.copy()
        target[:-1, -1] = z[0]
        target[-1, :-1] = z[1]
        target[-1, -1] = corners[k]
        out.append(target - a)
    return a1, a2, out[0], out[1]


# ---------------------------------------------------------------- audits

def _cov_rows(name, data, target, scale=1.0):
    """Entrywise empirical covariance of the columns of data against target."""
    x = data - data.mean(axis=0)
    s = len(x)
    rows = []
    for i in range(target.shape[0]):
        for j in range(i, target.shape[1]):
            prod = x[:, i] * x[:, j] * scale
            emp = float(prod.sum() / (s - 1))
            se = float(prod.std(ddof=1) / math.sqrt(s))
            rows.append((name, i, j, float(target[i, j]), emp, se, (emp - target[i, j]) / se if se > 0 else 0.0))
    return rows


def covariance_audit(p: int, tau: float, r: float, samples: int, seed: int, n_field: int = 3,
                     n_jac: int = 30, u=(0.5, -0.3)):
    """Monte Carlo audit of the field covariance and the conditional Jacobian laws.

    Returns:
        (rows, summary) where each row is (quantity, i, j, analytic,
        empirical, stderr, z) and the summary holds the largest |z| and
        the deviation of the closed-form Sigma_U from the Schur oracle.
    """
    from .complexity import sigma_u
    from .kacrice import covariance_oracle, eval_field, sample_field, schur_oracle

    params = ModelParams(p, tau)
    rng = stream(seed, 90)
    x = rng.standard_normal(n_field)
    y = x + 0.8 * rng.standard_normal(n_field)
    x *= math.sqrt(n_field) / np.linalg.norm(x)
    y *= math.sqrt(n_field) / np.linalg.norm(y)

    def field_block(g, m):
        out = np.empty((m, 2 * n_field))
        for k in range(m):
            fld = sample_field(p, tau, n_field, g)
            out[k, :n_field] = eval_field(fld, x)["f"]
            out[k, n_field:] = eval_field(fld, y)["f"]
        return out

    fv = _run_blocks(field_block, seed, 91, samples)
    # centred by the known zero mean
    target = covariance_oracle(p, tau, n_field, x, y)
    rows = []
    for k in range(n_field):
        for l in range(n_field):
            prod = fv[:, k] * fv[:, n_field + l]
            emp, se = float(prod.mean()), float(prod.std(ddof=1) / math.sqrt(samples))
            rows.append(("field", k, l, float(target[k, l]), emp, se, (emp - target[k, l]) / se))

    def jac_block(g, m):
        a, b = conditional_pair_batch(params, n_jac, r, np.full(m, u[0]), np.full(m, u[1]), g)
        return np.column_stack([a[:, 0, -1], a[:, -1, 0], b[:, 0, -1], b[:, -1, 0], a[:, -1, -1], b[:, -1, -1]])

    jv = _run_blocks(jac_block, seed, 92, samples)
    d = n_jac - 1
    rows += _cov_rows("sigma_z", jv[:, :4], sigma_z(params, r), scale=d)
    sm = sigma_s_and_mean(params, r)
    rows += _cov_rows("sigma_s", jv[:, 4:], sm["sigma_s"], scale=d)
    # the corner entry of M^k carries the -u_hat_k diagonal shift
    uh = _u_hat(params, n_jac, u)
    mean = sm["mean"] @ uh - uh
    for k in range(2):
        emp = float(jv[:, 4 + k].mean())
        se = float(jv[:, 4 + k].std(ddof=1) / math.sqrt(samples))
        rows.append(("corner_mean", k, k, float(mean[k]), emp, se, (emp - mean[k]) / se))

    grng = stream(seed, 93)
    worst = 0.0
    for _ in range(10):
        pp = int(grng.integers(3, 8))
        tt = float(grng.uniform(0.0, 0.9))
        rr = float(grng.uniform(-0.9, 0.9))
        mp = ModelParams(pp, tt)
        direct = schur_oracle(mp, rr)["sigma_u"]
        worst = max(worst, float(np.abs(sigma_u(mp, rr).covariance - direct).max() / np.abs(direct).max()))
    summary = {"max_abs_z": float(max(abs(row[-1]) for row in rows)), "sigma_u_max_rel_dev": worst}
    return rows, summary
