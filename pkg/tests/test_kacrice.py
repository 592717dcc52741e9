import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.complexity import ModelParams, sigma_u
from artifact.ensemble import stream
from artifact.kacrice import (
    count_equilibria_circle,
    covariance_oracle,
    eval_field,
    expected_crit_first_moment,
    g_two_point,
    sample_field,
    schur_oracle,
    second_moment_integrand,
    sigma1_closed_form,
    sigma_edge_variances,
    sigma_s_and_mean,
    sigma_z,
)
from oracles import annealed_first_moment_n2


def _sphere_point(rng, n):
    x = rng.standard_normal(n)
    return x * math.sqrt(n) / np.linalg.norm(x)


def test_field_antisymmetry_and_shapes():
    f = sample_field(3, 0.5, 2, stream(1))
    assert np.array_equal(f.a_coeffs, -np.swapaxes(f.a_coeffs, 0, 1))
    # a symmetric cubic in two variables has four free coefficients
    idx = {tuple(sorted(i)) for i in np.ndindex(*f.h_coeffs.shape)}
    assert len(idx) == 4
    with pytest.raises(ValueError):
        sample_field(2, 0.5, 3, stream(1))


def test_tangency_and_lambda():
    rng = stream(2)
    for _ in range(100):
        p = int(rng.integers(3, 6))
        n = int(rng.integers(2, 5))
        f = sample_field(p, 0.4, n, rng)
        x = _sphere_point(rng, n)
        out = eval_field(f, x)
        assert abs(out["F"] @ x) / n < 1e-10
        assert out["lambda"] == pytest.approx(out["f"] @ x / n, abs=1e-12)
        # the antisymmetric part is tangent, so lambda sees only the gradient
        assert out["lambda"] * n / p == pytest.approx(f.c_s * out["H"], abs=1e-9)
        assert np.allclose(out["A"], -out["A"].T)


def test_gradient_only_at_tau_one():
    f = sample_field(3, 1.0 - 1e-16, 3, stream(3))
    assert f.c_a == pytest.approx(0.0, abs=1e-7)


def test_off_sphere_rejected():
    f = sample_field(3, 0.5, 3, stream(4))
    with pytest.raises(ValueError):
        eval_field(f, 2 * np.ones(3))


def test_hamiltonian_variance():
    rng = stream(5)
    n = 3
    x = _sphere_point(rng, n)
    hs = np.array([eval_field(sample_field(3, 0.5, n, rng), x)["H"] for _ in range(20000)])
    se = n * math.sqrt(2 / len(hs))
    assert abs(np.mean(hs**2) - n) < 4 * se


def test_covariance_oracle_examples():
    p, tau, n = 4, 0.5, 3
    x = math.sqrt(n) * np.eye(n)[-1]
    m = covariance_oracle(p, tau, n, x, x)
    want = p * np.eye(n)
    want[-1, -1] += tau * p * (p - 1)
    assert np.allclose(m, want)
    y = math.sqrt(n) * np.eye(n)[0]
    assert np.allclose(covariance_oracle(p, tau, n, x, y), 0.0)


def test_covariance_oracle_against_samples():
    p, tau, n = 3, 0.5, 3
    rng = stream(6)
    x = _sphere_point(rng, n)
    y = _sphere_point(rng, n)
    m = 30000
    fx = np.empty((m, n))
    fy = np.empty((m, n))
    for k in range(m):
        f = sample_field(p, tau, n, rng)
        fx[k] = eval_field(f, x)["f"]
        fy[k] = eval_field(f, y)["f"]
    emp = fx.T @ fy / m
    prod = fx[:, :, None] * fy[:, None, :]
    se = prod.std(axis=0) / math.sqrt(m)
    z = (emp - covariance_oracle(p, tau, n, x, y)) / se
    assert np.max(np.abs(z)) < 4


@pytest.mark.parametrize("p,tau", [(3, 0.5), (4, 0.2), (5, 0.7), (6, 0.5)])
def test_tables_match_schur_oracle(p, tau):
    params = ModelParams(p, tau)
    rng = np.random.default_rng(p)
    for r in rng.uniform(-0.9, 0.9, 5):
        ref = schur_oracle(params, r)
        sm = sigma_s_and_mean(params, r)
        assert np.allclose(sigma_z(params, r), ref["sigma_z"], atol=1e-9)
        assert np.allclose(sm["sigma_s"], ref["sigma_s"], atol=1e-9)
        assert np.allclose(sm["mean"], ref["mean"], atol=1e-9)
        assert np.allclose(sigma_u(params, r).covariance, ref["sigma_u"], atol=1e-9)


@given(p=st.integers(3, 7), tau=st.floats(0.0, 0.95), r=st.floats(-0.9, 0.9))
@settings(max_examples=60, deadline=None)
def test_conditional_covariances_psd(p, tau, r):
    params = ModelParams(p, tau)
    sz = sigma_z(params, r)
    assert np.allclose(sz, sz.T)
    assert np.linalg.eigvalsh(sz).min() > -1e-12
    assert sz[0, 0] == pytest.approx(sz[2, 2], abs=1e-12)
    ss = sigma_s_and_mean(params, r)["sigma_s"]
    assert np.linalg.eigvalsh(ss).min() > -1e-12
    assert ss[0, 0] > 0 and ss[1, 1] > 0


def test_sigma1_closed_form_and_limits():
    params = ModelParams(4, 0.5)
    for r in np.linspace(-0.9, 0.9, 13):
        v = sigma_edge_variances(params, r)
        assert v["sigma1"] == pytest.approx(sigma1_closed_form(params, r), abs=1e-10)
        assert v["sigma1"] > 0 and v["sigma2"] > 0
    assert sigma_edge_variances(params, 0.0)["sigma1"] == pytest.approx(12.0)
    assert sigma1_closed_form(params, 0.9999) < 1e-2
    assert g_two_point(params, 0.0) == 1.0


def test_first_moment_n2_closed_form():
    params = ModelParams(3, 0.5)
    val = expected_crit_first_moment(params, 2)
    assert val == pytest.approx(2 * math.sqrt(5), rel=1e-9)
    assert val == pytest.approx(annealed_first_moment_n2(3, 0.5), rel=1e-9)
    assert expected_crit_first_moment(params, 2, intervals=()) == 0.0
    # splitting the line changes nothing
    split = expected_crit_first_moment(params, 2, intervals=((-math.inf, 0.0), (0.0, math.inf)))
    assert split == pytest.approx(val, rel=1e-9)


def test_first_moment_n6_growth():
    params = ModelParams(3, 0.5)
    val = expected_crit_first_moment(params, 6)
    assert abs(math.log(val) / 6 - 0.5 * math.log(2)) < 0.35


def test_circle_count_parity_and_grid_stability():
    rng = stream(7)
    for _ in range(500):
        f = sample_field(3, 0.5, 2, rng)
        c = count_equilibria_circle(f)
        if c is None:
            continue
        assert c % 2 == 0 and c >= 2
        assert count_equilibria_circle(f, grid=8192) == c


def test_circle_roots_are_zeros():
    f = sample_field(4, 0.3, 2, stream(8))
    count, roots = count_equilibria_circle(f, return_info=True)
    assert count == len(roots)
    for t in roots:
        x = math.sqrt(2) * np.array([math.cos(t), math.sin(t)])
        assert np.linalg.norm(eval_field(f, x)["F"]) < 1e-9
    with pytest.raises(ValueError):
        count_equilibria_circle(sample_field(3, 0.5, 3, stream(8)))


def test_second_moment_factorizes_at_zero_overlap():
    params = ModelParams(5, 0.5)
    n = 10
    val, se = second_moment_integrand(params, n, 0.0, samples=40000, seed=1)
    first = expected_crit_first_moment(params, n)
    # the r = 0 integrand carries vol(S^{n-2}) / vol(S^{n-1}) relative to first^2
    from artifact.kacrice import log_sphere_volume
    ratio = math.exp(log_sphere_volume(n - 2) - log_sphere_volume(n - 1))
    assert abs(val / first**2 - ratio) < 3 * se / first**2


def test_second_moment_even_p_symmetry():
    params = ModelParams(4, 0.5)
    a, sa = second_moment_integrand(params, 8, 0.5, samples=20000, seed=2)
    b, sb = second_moment_integrand(params, 8, -0.5, samples=20000, seed=3)
    assert abs(a - b) < 3 * math.hypot(sa, sb)
