import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.ensemble import (
    ellipse_coverage,
    eigen_spectrum,
    log_det_abs,
    real_eigenvalues,
    regularized_log_statistic,
    sample_correlated_pair,
    sample_gee_batch,
    singular_spectrum,
    stream,
)


def test_stream_is_deterministic_and_keyed():
    a = stream(3, 1, 2).standard_normal(5)
    b = stream(3, 1, 2).standard_normal(5)
    c = stream(3, 2, 1).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gee_second_moments():
    n, tau = 5, 0.4
    a = sample_gee_batch(n, tau, 40000, stream(0))
    se = math.sqrt(2) / n / math.sqrt(40000) * 1.5
    assert np.mean(a[:, 0, 0] ** 2) == pytest.approx((1 + tau) / n, abs=5 * se)
    assert np.mean(a[:, 0, 1] ** 2) == pytest.approx(1 / n, abs=5 * se)
    assert np.mean(a[:, 0, 1] * a[:, 1, 0]) == pytest.approx(tau / n, abs=5 * se)
    assert abs(np.mean(a[:, 0, 1] * a[:, 2, 1])) < 5 * se


def test_gee_extremes():
    a = sample_gee_batch(4, 1.0, 3, stream(1))
    assert np.allclose(a, np.swapaxes(a, 1, 2))
    b = sample_gee_batch(4, -1.0, 3, stream(1))
    assert np.allclose(b, -np.swapaxes(b, 1, 2))
    with pytest.raises(ValueError):
        sample_gee_batch(4, 1.2, 1, stream(1))


def test_log_det_abs_and_singular_case():
    m = np.diag([2.0, -3.0, 0.5])
    assert log_det_abs(m) == pytest.approx(math.log(3.0))
    assert log_det_abs(m, 2.0) == -np.inf
    stack = sample_gee_batch(3, 0.2, 4, stream(2))
    assert log_det_abs(stack).shape == (4,)


def test_singular_spectrum_sorted_and_regularized():
    m = sample_gee_batch(6, 0.5, 1, stream(3))[0]
    s = singular_spectrum(m, 0.3).atoms
    assert np.all(np.diff(s) >= 0)
    assert regularized_log_statistic(m, 0.3, 1e-300) == pytest.approx(log_det_abs(m, 0.3) / 6)
    with pytest.raises(ValueError):
        regularized_log_statistic(m, 0.3, 0.0)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 9))
@settings(max_examples=40, deadline=None)
def test_real_eigenvalue_parity(seed, n):
    a = sample_gee_batch(n, 0.5, 5, stream(seed))
    for e in real_eigenvalues(a):
        assert len(e) % 2 == n % 2


def test_eigen_spectrum_real_flags():
    m = np.array([[0.0, -1.0], [1.0, 0.0]])
    ev = eigen_spectrum(m)
    assert np.allclose(sorted(ev.imag), [-1, 1])
    ev = eigen_spectrum(np.diag([3.0, -1.0]))
    assert np.all(ev.imag == 0)


def test_ellipse_coverage_large_n():
    n, tau = 300, 0.5
    m = sample_gee_batch(n, tau, 1, stream(4))[0]
    assert ellipse_coverage(np.linalg.eigvals(m), tau, margin=0.1) > 0.99
    with pytest.raises(ValueError):
        ellipse_coverage([0j], tau, margin=-1)


def test_correlated_pair_correlation_and_coupling():
    p, r, n = 4, 0.7, 3
    rng = stream(5)
    x, y = [], []
    for _ in range(4000):
        pair = sample_correlated_pair(n, 0.3, p, r, rng)
        x.append(pair.pair[0][0, 1])
        y.append(pair.pair[1][0, 1])
    c = np.corrcoef(x, y)[0, 1]
    assert c == pytest.approx(r ** (p - 2), abs=0.05)

    # near r = 1 the two determinants move together; u sits outside the bulk
    # edge 1 + tau, where log|det| is not dominated by the smallest singular value
    rng = stream(6)
    la, lb = [], []
    for _ in range(500):
        pair = sample_correlated_pair(10, 0.5, 3, 0.99, rng)
        la.append(log_det_abs(pair.pair[0], 2.0))
        lb.append(log_det_abs(pair.pair[1], 2.0))
    assert np.corrcoef(la, lb)[0, 1] > 0.9


def test_correlated_pair_sign_for_negative_overlap():
    rng = stream(8)
    pair = sample_correlated_pair(3, 0.2, 3, -0.5, rng)
    own, shared = math.sqrt(0.5), math.sqrt(0.5)
    assert np.allclose(pair.pair[0], own * pair.a1.entries - shared * pair.shared.entries)
    assert np.allclose(pair.pair[1], own * pair.a2.entries + shared * pair.shared.entries)
    with pytest.raises(ValueError):
        sample_correlated_pair(3, 0.2, 3, 1.0, rng)
