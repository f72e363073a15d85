"""The composite KSD goodness-of-fit test, end to end.

Both the observed statistic and the bootstrap draws carry the factor ``n``;
comparing ``n * KSD_U^2`` with n-scaled draws gives the same decision as
comparing the unscaled quantities.

``gamma`` is the test size: the critical value is the ``1 - gamma``
bootstrap quantile.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import bootstrap as boot
from .estimation import EstimatorSpec, estimate
from .kernel import KernelConfig
from .model import GaussianTheta
from .stein import as_sample, ksd_u, ksd_v

SCHEMA_VERSION = 1


@dataclass
class TestResult:
    __test__ = False  # not a pytest class

    statistic: float
    quantile: float
    p_value: float
    reject: bool
    theta_hat: GaussianTheta
    B: int
    gamma: float
    seed: object
    scheme: str
    estimator: str
    bootstrap_rejection_count: int
    n: int
    d: int
    c: float

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta_hat"] = {"mu": self.theta_hat.mu.tolist(), "chol": self.theta_hat.chol.tolist()}
        out["seed"] = self.seed if isinstance(self.seed, int) else list(self.seed)
        return {"schema": SCHEMA_VERSION, **out}


def observed_statistic(sample, theta_hat, cfg: KernelConfig, scheme: str = "corrected") -> float:
    """``n * KSD_U^2`` at ``theta_hat``; the wild scheme uses the V-statistic ``n * KSD_V^2``."""
    X = as_sample(sample, cfg.d, min_rows=2)
    n = X.shape[0]
    if scheme == "wild":
        return n * ksd_v(X, theta_hat, cfg)
    return n * ksd_u(X, theta_hat, cfg)


def p_value(values, statistic: float) -> float:
    """``(1 + #{b : T_b >= statistic}) / (B + 1)``."""
    values = np.asarray(values, dtype=float)
    return (1.0 + np.count_nonzero(values >= statistic)) / (values.shape[0] + 1.0)


def p_value_threshold(B: int, gamma: float) -> float:
    """``(1 + B - k) / (B + 1)`` with ``k = ceil((1 - gamma) B)``, which is ``(1 + floor(gamma B)) / (B + 1)``.

    ``reject`` holds exactly when ``p_value <= p_value_threshold(B, gamma)``:
    the statistic beats the k-th order statistic iff at most ``B - k``
    draws reach it.
    """
    k = math.ceil(round((1.0 - gamma) * B, 9))
    k = min(max(k, 1), B)
    return (1.0 + B - k) / (B + 1.0)


def run_test(sample, cfg: KernelConfig, est: EstimatorSpec | None = None, B: int = 200,
             gamma: float = 0.05, seed=0, scheme: str = "corrected",
             grad_at: str = "bootstrap") -> TestResult:
    """Estimate, compute the observed statistic, bootstrap, decide.

    Rejects when the statistic strictly exceeds the bootstrap quantile.
    Estimation failure on the original sample raises ``EstimationError``.
    """
    est = est or EstimatorSpec()
    X = as_sample(sample, cfg.d, min_rows=2)
    if B < 1:
        raise ValueError(f"B must be at least 1, got {B}")
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    theta_hat = estimate(X, cfg, est)
    stat = observed_statistic(X, theta_hat, cfg, scheme)
    draws = boot.draw_all(X, theta_hat, scheme, B, cfg, est, seed=seed, grad_at=grad_at)
    q = boot.quantile(draws, gamma)
    return TestResult(
        statistic=float(stat),
        quantile=q,
        p_value=p_value(draws.values, stat),
        reject=bool(stat > q),
        theta_hat=theta_hat,
        B=B,
        gamma=gamma,
        seed=seed,
        scheme=scheme,
        estimator=est.kind,
        bootstrap_rejection_count=draws.rejections,
        n=X.shape[0],
        d=cfg.d,
        c=cfg.c,
    )
