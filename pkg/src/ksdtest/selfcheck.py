"""Numerical invariant checks, shared by the CLI ``selfcheck`` and the test suite.

Each check returns ``(passed, detail)`` where ``detail`` is the worst value seen.
"""

from __future__ import annotations

import numpy as np

from . import bootstrap as boot
from .estimation import EstimatorSpec, estimate
from .kernel import KernelConfig
from .model import GaussianFamily, GaussianTheta
from .stein import center_empirical, gram, grad_theta_h, h_theta, ksd_v


def random_theta(rng, d: int) -> GaussianTheta:
    chol = np.tril(rng.normal(size=(d, d)) * 0.3)
    chol[np.diag_indices(d)] = rng.uniform(0.6, 1.4, size=d)
    return GaussianTheta(mu=rng.normal(size=d) * 0.5, chol=chol)


def _random_case(rng, d_max=3):
    d = int(rng.integers(1, d_max + 1))
    return d, KernelConfig(float(rng.uniform(0.3, 1.5)), d), random_theta(rng, d)


def check_grad_fd(rng, trials: int = 1000, step: float = 1e-6, tol: float = 1e-5):
    """Analytic ``grad_theta h`` against central differences; norm-wise relative error."""
    worst = 0.0
    for _ in range(trials):
        d, cfg, t = _random_case(rng)
        fam = GaussianFamily(d)
        x, y = rng.normal(size=d), rng.normal(size=d)
        g = grad_theta_h(t, x, y, cfg, fam)
        v = t.to_vector()
        fd = np.empty_like(g)
        for k in range(v.size):
            e = np.zeros_like(v)
            e[k] = step
            fd[k] = (h_theta(fam.from_vector(v + e), x, y, cfg, fam)
                     - h_theta(fam.from_vector(v - e), x, y, cfg, fam)) / (2 * step)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-3))
    return worst < tol, f"max relative error {worst:.2e} over {trials} inputs"


def check_centering(rng, trials: int = 100, tol: float = 1e-10):
    worst = 0.0
    for _ in range(trials):
        d, cfg, t = _random_case(rng)
        X = rng.normal(size=(int(rng.integers(2, 80)), d)) * 1.5
        Hc = center_empirical(gram(X, t, cfg).H)
        worst = max(worst, np.abs(Hc.sum(axis=0)).max(), np.abs(Hc.sum(axis=1)).max())
    return worst < tol, f"max |row or column sum| {worst:.2e}"


def check_psd(rng, trials: int = 100, tol: float = 1e-8):
    worst = 0.0
    for _ in range(trials):
        d, cfg, t = _random_case(rng)
        X = rng.normal(size=(int(rng.integers(2, 80)), d)) * 1.5
        H = gram(X, t, cfg).H
        worst = min(worst, np.linalg.eigvalsh(H).min() / np.linalg.norm(H, 2))
    return worst >= -tol, f"min eigenvalue / norm {worst:.2e}"


def check_ksd_v(rng, trials: int = 200, tol: float = 1e-12):
    worst = np.inf
    for _ in range(trials):
        d, cfg, t = _random_case(rng)
        X = rng.normal(size=(int(rng.integers(1, 60)), d)) * 2
        worst = min(worst, ksd_v(X, t, cfg))
    return worst >= -tol, f"min ksd_v {worst:.2e}"


def check_ledger(rng, trials: int = 20, tol: float = 1e-10):
    """corrected - naive equals the correction term on random resamples."""
    worst = 0.0
    cfg = KernelConfig(0.5, 2)
    est = EstimatorSpec()
    for _ in range(trials):
        X = rng.normal(size=(40, 2))
        th = estimate(X, cfg, est)
        idx = boot.resample_indices(40, rng)
        diff = boot.corrected_stat(X, th, idx, cfg, est) - boot.naive_stat(X, idx, cfg, est)
        worst = max(worst, abs(diff - boot.correction_term(X, th, idx, cfg, est)))
    return worst < tol, f"max ledger gap {worst:.2e}"


CHECKS = {
    "grad_fd": check_grad_fd,
    "centering": check_centering,
    "psd": check_psd,
    "ksd_v_nonneg": check_ksd_v,
    "ledger": check_ledger,
}


def run_all(seed: int = 0):
    """Yield ``(name, passed, detail)`` per check, each on its own generator."""
    for k, (name, fn) in enumerate(CHECKS.items()):
        passed, detail = fn(boot.substream(seed, k))
        yield name, bool(passed), detail
