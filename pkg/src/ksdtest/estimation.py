"""Estimators ``theta_hat = psi(Q_n)`` for the Gaussian family.

Both estimators depend on the sample only through its empirical measure:
rows are put in canonical order before any floating-point reduction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .kernel import KernelConfig
from .model import EPS_PD, GaussianFamily, GaussianTheta
from .stein import as_sample, canonical_order, grad_ksd_u, ksd_u, stein_gram
from .kernel import pairwise_terms


class EstimationError(ValueError):
    """The estimator is undefined on this sample (e.g. singular covariance)."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to use and, for ``min_ksd``, the optimizer settings.

    ``bounds`` overrides the data-driven default box as a sequence of
    ``(low, high)`` pairs over the flat parameter vector.
    """

    kind: str = "moment"
    max_iter: int = 4000
    xatol: float = 1e-7
    fatol: float = 1e-12
    gtol: float = 1e-3
    bounds: tuple | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("moment", "min_ksd"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if min(self.xatol, self.fatol, self.gtol) <= 0 or self.max_iter < 1:
            raise ValueError("tolerances and max_iter must be positive")


def moment_estimator(sample) -> GaussianTheta:
    """Sample mean and Cholesky factor of the plug-in covariance (denominator n)."""
    X = canonical_order(as_sample(sample, min_rows=2))
    n, d = X.shape
    mu = X.mean(axis=0)
    R = X - mu
    cov = (R.T @ R) / n
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov)[0] <= EPS_PD:
        raise EstimationError("empirical covariance is singular")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("empirical covariance is not positive definite") from exc
    if np.any(np.diag(chol) <= EPS_PD):
        raise EstimationError("empirical covariance is singular")
    return GaussianTheta(mu=mu, chol=chol)


@dataclass
class MinKSDFit:
    theta: GaussianTheta
    objective: float
    start_objective: float
    grad_norm: float
    n_iter: int
    converged: bool
    message: str


def default_bounds(X: np.ndarray) -> list[tuple[float, float]]:
    """Box over ``(mu, L[tril])`` scaled to the data."""
    d = X.shape[1]
    rms = np.sqrt(np.mean(X * X, axis=0))
    sd = X.std(axis=0)
    bounds = [(-10.0 * r, 10.0 * r) for r in rms]
    big = 10.0 * float(sd.max())
    for a, b in zip(*np.tril_indices(d)):
        if a == b:
            bounds.append((1e-3, max(10.0 * float(sd[a]), 2e-3)))
        else:
            bounds.append((-big, big))
    return bounds


def min_ksd_fit(sample, cfg: KernelConfig, spec: EstimatorSpec | None = None) -> MinKSDFit:
    """Nelder-Mead minimisation of ``theta -> ksd_u(sample, theta)``.

    Starts from the moment estimate with a simplex of edge
    ``0.1 * (1 + |coordinate|)`` along each axis.
    """
    spec = spec or EstimatorSpec(kind="min_ksd")
    X = canonical_order(as_sample(sample, cfg.d, min_rows=2))
    fam = GaussianFamily(cfg.d)
    start = moment_estimator(X)
    x0 = start.to_vector()
    bounds = list(spec.bounds) if spec.bounds is not None else default_bounds(X)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    if not np.all((lo <= x0) & (x0 <= hi)):
        raise EstimationError("moment estimate lies outside the parameter box")

    terms = pairwise_terms(X, cfg)
    n = X.shape[0]
    diag_free = ~np.eye(n, dtype=bool)

    def objective(v):
        try:
            theta = fam.from_vector(v)
        except ValueError:
            return np.inf
        H = stein_gram(terms, fam.score_batch(theta, X))
        return float(np.sum(H[diag_free])) / (n * (n - 1))

    p = x0.shape[0]
    simplex = np.tile(x0, (p + 1, 1))
    for k in range(p):
        simplex[k + 1, k] += 0.1 * (1.0 + abs(x0[k]))
    simplex = np.clip(simplex, lo, hi)

    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        bounds=bounds,
        options={
            "initial_simplex": simplex,
            "maxiter": spec.max_iter,
            "maxfev": 2 * spec.max_iter,
            "xatol": spec.xatol,
            "fatol": spec.fatol,
        },
    )
    f0 = objective(x0)
    best = res.x if res.fun <= f0 else x0
    theta = fam.from_vector(best)
    g = grad_ksd_u(X, theta, cfg, fam)
    return MinKSDFit(
        theta=theta,
        objective=ksd_u(X, theta, cfg, fam),
        start_objective=ksd_u(X, start, cfg, fam),
        grad_norm=float(np.max(np.abs(g))),
        n_iter=int(res.nit),
        converged=bool(res.success),
        message=str(res.message),
    )


def min_ksd_estimator(sample, cfg: KernelConfig, spec: EstimatorSpec | None = None) -> GaussianTheta:
    """Minimum-KSD estimate; warns (does not raise) if the simplex did not converge."""
    fit = min_ksd_fit(sample, cfg, spec)
    if not fit.converged:
        warnings.warn(f"min-KSD optimizer did not converge: {fit.message}", ConvergenceWarning)
    return fit.theta


def estimate(sample, cfg: KernelConfig, spec: EstimatorSpec) -> GaussianTheta:
    """Apply the estimator named by ``spec`` to a sample."""
    if spec.kind == "moment":
        return moment_estimator(sample)
    return min_ksd_estimator(sample, cfg, spec)
