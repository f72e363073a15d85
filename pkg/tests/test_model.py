import numpy as np
import pytest

from ksdtest.model import GaussianFamily, GaussianTheta


def random_theta(rng, d):
    A = rng.normal(size=(d, d)) * 0.4
    chol = np.tril(A)
    chol[np.diag_indices(d)] = rng.uniform(0.5, 1.5, size=d)
    return GaussianTheta(mu=rng.normal(size=d), chol=chol)


def test_theta_validation():
    with pytest.raises(ValueError, match="degenerate"):
        GaussianTheta(mu=[0.0], chol=[[0.0]])
    with pytest.raises(ValueError, match="lower"):
        GaussianTheta(mu=[0, 0], chol=[[1, 1], [0, 1]])
    with pytest.raises(ValueError):
        GaussianTheta(mu=[np.nan], chol=[[1.0]])


def test_vector_round_trip():
    rng = np.random.default_rng(0)
    t = random_theta(rng, 3)
    assert GaussianTheta.from_vector(t.to_vector(), 3) == t
    assert GaussianFamily(3).p == 3 + 6


def test_score_examples():
    fam1 = GaussianFamily(1)
    std = GaussianTheta.standard(1)
    np.testing.assert_array_equal(fam1.score(std, [0.0]), [0.0])
    assert fam1.score(std, [2.0])[0] == -2.0
    fam2 = GaussianFamily(2)
    t = GaussianTheta(mu=[0, 0], chol=np.diag([2.0, 1.0]))
    np.testing.assert_allclose(fam2.score(t, [2.0, 3.0]), [-0.5, -3.0])


def test_score_at_mean_is_zero_and_rejects_nonfinite():
    rng = np.random.default_rng(1)
    t = random_theta(rng, 3)
    fam = GaussianFamily(3)
    np.testing.assert_allclose(fam.score(t, t.mu), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        fam.score(t, [np.inf, 0, 0])


def test_score_is_antisymmetric_about_mean():
    rng = np.random.default_rng(2)
    fam = GaussianFamily(2)
    for _ in range(50):
        t = random_theta(rng, 2)
        x = rng.normal(size=2) * 3
        np.testing.assert_allclose(fam.score(t, x) + fam.score(t, 2 * t.mu - x), 0.0, atol=1e-12)


def test_grad_theta_score_standard_normal_mu():
    fam = GaussianFamily(1)
    J = fam.grad_theta_score(GaussianTheta.standard(1), [0.7])
    assert J.shape == (2, 1)
    assert J[0, 0] == 1.0


def test_grad_theta_score_at_mean():
    rng = np.random.default_rng(3)
    fam = GaussianFamily(3)
    t = random_theta(rng, 3)
    J = fam.grad_theta_score(t, t.mu)
    np.testing.assert_allclose(J[:3], np.linalg.inv(t.cov), rtol=1e-10)
    np.testing.assert_allclose(J[3:], 0.0, atol=1e-14)


def fd_grad_score(fam, t, x, h=1e-6):
    v = t.to_vector()
    rows = []
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = h
        rows.append((fam.score(fam.from_vector(v + e), x) - fam.score(fam.from_vector(v - e), x)) / (2 * h))
    return np.array(rows)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_grad_theta_score_matches_finite_differences(d):
    rng = np.random.default_rng(10 + d)
    fam = GaussianFamily(d)
    for _ in range(40):
        t = random_theta(rng, d)
        x = rng.normal(size=d) * 2
        J = fam.grad_theta_score(t, x)
        fd = fd_grad_score(fam, t, x)
        big = np.abs(J) > 1e-8
        np.testing.assert_allclose(J[big], fd[big], rtol=1e-6)
        np.testing.assert_allclose(J[~big], fd[~big], atol=1e-8)


def test_score_pullback_matches_per_point_contraction():
    rng = np.random.default_rng(4)
    fam = GaussianFamily(3)
    t = random_theta(rng, 3)
    X = rng.normal(size=(9, 3))
    V = rng.normal(size=(9, 3))
    expected = sum(fam.grad_theta_score(t, X[i]) @ V[i] for i in range(9))
    np.testing.assert_allclose(fam.score_pullback(t, X, V), expected, rtol=1e-12, atol=1e-12)


def test_second_derivative_fd_is_symmetric():
    rng = np.random.default_rng(5)
    fam = GaussianFamily(2)
    t = random_theta(rng, 2)
    D2 = fam.theta_derivative_fd(t, rng.normal(size=2))
    assert D2.shape == (5, 5, 2)
    np.testing.assert_allclose(D2, D2.transpose(1, 0, 2), atol=1e-6)
    # the score is linear in mu
    np.testing.assert_allclose(D2[:2, :2], 0.0, atol=1e-8)


def test_sample_determinism_and_moments():
    fam = GaussianFamily(1)
    std = GaussianTheta.standard(1)
    a = fam.sample(std, 50, np.random.default_rng(9))
    b = fam.sample(std, 50, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)
    X = fam.sample(std, 10_000, np.random.default_rng(10))
    assert abs(X.mean()) < 0.05
    assert abs(X.var() - 1.0) < 0.08
    fam2 = GaussianFamily(2)
    Y = fam2.sample(GaussianTheta(mu=[5, 5], chol=np.eye(2)), 10_000, np.random.default_rng(11))
    assert np.all(np.abs(Y.mean(axis=0) - 5) < 0.05)
    with pytest.raises(ValueError):
        fam.sample(std, 0, np.random.default_rng(0))
