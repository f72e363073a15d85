import math

import numpy as np
import pytest

from ksdtest import stein
from ksdtest.kernel import KernelConfig
from ksdtest.model import GaussianFamily, GaussianTheta

E = math.exp(-0.5)
STD1 = GaussianTheta.standard(1)
L1 = KernelConfig(1.0, 1)


def random_theta(rng, d):
    chol = np.tril(rng.normal(size=(d, d)) * 0.3)
    chol[np.diag_indices(d)] = rng.uniform(0.6, 1.4, size=d)
    return GaussianTheta(mu=rng.normal(size=d) * 0.5, chol=chol)


def test_h_theta_examples():
    assert stein.h_theta(STD1, [0.0], [0.0], L1) == pytest.approx(1.0)
    assert stein.h_theta(STD1, [1.0], [0.0], L1) == pytest.approx(-E, abs=1e-7)


def test_h_pairs_matches_scalar():
    rng = np.random.default_rng(0)
    cfg = KernelConfig(0.7, 3)
    t = random_theta(rng, 3)
    X, Y = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    got = stein.h_pairs(t, X, Y, cfg)
    want = [stein.h_theta(t, X[i], Y[i], cfg) for i in range(20)]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)


def test_null_mean_zero_monte_carlo():
    rng = np.random.default_rng(1)
    m = 100_000
    h = stein.h_pairs(STD1, rng.normal(size=(m, 1)), rng.normal(size=(m, 1)), L1)
    se = h.std(ddof=1) / math.sqrt(m)
    assert abs(h.mean()) < 3 * se


def test_h_symmetry_exact():
    rng = np.random.default_rng(2)
    for _ in range(200):
        d = int(rng.integers(1, 4))
        cfg = KernelConfig(float(rng.uniform(0.3, 1.5)), d)
        t = random_theta(rng, d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        assert stein.h_theta(t, x, y, cfg) == pytest.approx(stein.h_theta(t, y, x, cfg), rel=1e-14)
        X = rng.normal(size=(6, d))
        H = stein.gram(X, t, cfg).H
        np.testing.assert_array_equal(H, H.T)


def test_grad_theta_h_example_and_symmetry():
    g = stein.grad_theta_h(STD1, [1.0], [0.0], L1)
    assert g[0] == pytest.approx(-E, abs=1e-7)
    rng = np.random.default_rng(3)
    cfg = KernelConfig(0.9, 2)
    t = random_theta(rng, 2)
    x, y = rng.normal(size=2), rng.normal(size=2)
    np.testing.assert_allclose(stein.grad_theta_h(t, x, y, cfg), stein.grad_theta_h(t, y, x, cfg),
                               rtol=1e-13, atol=1e-15)


def fd_grad_h(t, x, y, cfg, step=1e-6):
    fam = GaussianFamily(cfg.d)
    v = t.to_vector()
    out = np.empty(v.size)
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = step
        out[k] = (stein.h_theta(fam.from_vector(v + e), x, y, cfg)
                  - stein.h_theta(fam.from_vector(v - e), x, y, cfg)) / (2 * step)
    return out


def test_grad_theta_h_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(150):
        d = int(rng.integers(1, 4))
        cfg = KernelConfig(float(rng.uniform(0.4, 1.5)), d)
        t = random_theta(rng, d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        g = stein.grad_theta_h(t, x, y, cfg)
        fd = fd_grad_h(t, x, y, cfg)
        scale = max(1.0, np.abs(g).max())
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5 * scale * 1e-2)


def test_hessian_theta_h_symmetric_and_matches_nested_fd():
    rng = np.random.default_rng(5)
    cfg = KernelConfig(1.0, 1)
    fam = GaussianFamily(1)
    for _ in range(10):
        t = random_theta(rng, 1)
        x, y = rng.normal(size=1), rng.normal(size=1)
        Hs = stein.hessian_theta_h(t, x, y, cfg)
        raw = np.stack([
            (stein.grad_theta_h(fam.from_vector(t.to_vector() + e), x, y, cfg)
             - stein.grad_theta_h(fam.from_vector(t.to_vector() - e), x, y, cfg)) / 2e-5
            for e in np.eye(2) * 1e-5
        ], axis=1)
        assert np.max(np.abs(raw - raw.T)) < 1e-4
        # second-order nested FD of h itself
        v, hstep = t.to_vector(), 1e-4
        nested = np.empty((2, 2))
        for a in range(2):
            for b in range(2):
                ea, eb = np.eye(2)[a] * hstep, np.eye(2)[b] * hstep
                f = lambda w: stein.h_theta(fam.from_vector(w), x, y, cfg)
                nested[a, b] = (f(v + ea + eb) - f(v + ea - eb) - f(v - ea + eb) + f(v - ea - eb)) / (4 * hstep**2)
        np.testing.assert_allclose(Hs, nested, rtol=1e-3, atol=1e-4)


def test_hessian_u_statistic_is_psd_at_truth():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(600, 1))
    Hs = stein.hessian_ksd_u(X, STD1, L1)
    assert np.linalg.eigvalsh(Hs).min() > -1e-2


def test_gram_bundle_gradient_tensor():
    rng = np.random.default_rng(7)
    cfg = KernelConfig(0.8, 2)
    t = random_theta(rng, 2)
    X = rng.normal(size=(5, 2))
    b = stein.gram(X, t, cfg, with_grad=True)
    assert b.G.shape == (5, 5, 5)
    np.testing.assert_array_equal(b.G, b.G.transpose(1, 0, 2))
    for i in range(5):
        for j in range(5):
            assert b.H[i, j] == pytest.approx(stein.h_theta(t, X[i], X[j], cfg), rel=1e-11, abs=1e-12)


def test_ksd_u_two_points():
    assert stein.ksd_u([[0.0], [1.0]], STD1, L1) == pytest.approx(-E, abs=1e-12)
    with pytest.raises(ValueError):
        stein.ksd_u([[0.0]], STD1, L1)


def test_ksd_u_null_scaling():
    rng = np.random.default_rng(8)
    n = 2000
    X = rng.normal(size=(n, 1))
    u = stein.ksd_u(X, STD1, L1)
    # spread of the degenerate statistic from an Efron bootstrap of the centred core
    Hc = stein.center_empirical(stein.gram(X, STD1, L1).H)
    diag = np.diag(Hc)
    draws = []
    for b in range(100):
        c = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        draws.append((c @ Hc @ c - c @ diag) / (n * (n - 1)))
    se = np.std(draws, ddof=1)
    assert abs(u) < 3 * se
    assert abs(n * u) < 10


def test_ksd_u_permutation_invariant_bit_exact():
    rng = np.random.default_rng(9)
    cfg = KernelConfig(0.5, 2)
    t = random_theta(rng, 2)
    X = rng.normal(size=(80, 2))
    perm = rng.permutation(80)
    assert stein.ksd_u(X, t, cfg) == stein.ksd_u(X[perm], t, cfg)
    assert stein.ksd_v(X, t, cfg) == stein.ksd_v(X[perm], t, cfg)
    np.testing.assert_array_equal(stein.grad_ksd_u(X, t, cfg), stein.grad_ksd_u(X[perm], t, cfg))


def test_ksd_v_properties():
    rng = np.random.default_rng(10)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        cfg = KernelConfig(float(rng.uniform(0.2, 1.5)), d)
        t = random_theta(rng, d)
        n = int(rng.integers(2, 40))
        X = rng.normal(size=(n, d)) * 2
        v = stein.ksd_v(X, t, cfg)
        assert v >= -1e-12
        H = stein.gram(X, t, cfg).H
        lhs = v - (n - 1) / n * stein.ksd_u(X, t, cfg)
        assert lhs == pytest.approx(np.trace(H) / n**2, rel=1e-12, abs=1e-14)
    x = np.array([[0.3, -1.0]])
    assert stein.ksd_v(x, random_theta(rng, 2), KernelConfig(1.0, 2)) >= 0.0


def test_grad_ksd_u_examples():
    g = stein.grad_ksd_u([[1.0], [0.0]], STD1, L1)
    assert g[0] == pytest.approx(-E, abs=1e-12)
    rng = np.random.default_rng(11)
    cfg = KernelConfig(0.8, 2)
    fam = GaussianFamily(2)
    t = random_theta(rng, 2)
    X = rng.normal(size=(30, 2))
    g = stein.grad_ksd_u(X, t, cfg)
    v = t.to_vector()
    fd = np.empty(v.size)
    for k in range(v.size):
        e = np.zeros_like(v)
        e[k] = 1e-6
        fd[k] = (stein.ksd_u(X, fam.from_vector(v + e), cfg) - stein.ksd_u(X, fam.from_vector(v - e), cfg)) / 2e-6
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(
        g, stein.gram(X, t, cfg, with_grad=True).G.sum(axis=(0, 1)) / (30 * 29)
        - np.einsum("iik->k", stein.gram(X, t, cfg, with_grad=True).G) / (30 * 29),
        rtol=1e-10, atol=1e-12,
    )


def test_center_empirical():
    np.testing.assert_allclose(stein.center_empirical(np.full((4, 4), 2.5)), 0.0, atol=1e-15)
    x = np.array([0.0, 1.0])
    M = stein.center_empirical(np.outer(x, x))
    assert M[0, 1] == pytest.approx(-0.25)
    rng = np.random.default_rng(12)
    A = rng.normal(size=(50, 50)) * 10
    M = stein.center_empirical(A)
    assert np.abs(M.sum(axis=0)).max() < 1e-10
    assert np.abs(M.sum(axis=1)).max() < 1e-10
    with pytest.raises(ValueError):
        stein.center_empirical(np.zeros((0, 0)))
    with pytest.raises(ValueError):
        stein.center_empirical(np.zeros((2, 3)))


def test_ksd_u_with_se_tiles_agree():
    rng = np.random.default_rng(13)
    X = rng.normal(size=(300, 1))
    t = GaussianTheta(mu=[0.5], chol=[[1.0]])
    u, se = stein.ksd_u_with_se(X, t, L1)
    assert u == pytest.approx(stein.ksd_u(X, t, L1), rel=1e-10)
    assert se > 0
