"""Parametric model families.

Only the d-variate Gaussian with unknown mean and covariance ships. The
covariance is parameterised by its lower Cholesky factor ``L`` (positive
diagonal), and the flat parameter vector is ``(mu, L[tril])`` with the
lower-triangular entries taken in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

EPS_PD = 1e-10


class ModelFamily(Protocol):
    """What the Stein machinery needs from a model family.

    ``score`` must be continuously differentiable in ``x`` and ``theta``;
    this is a documented contract and is not checked.
    """

    d: int
    p: int

    def score(self, theta, x) -> np.ndarray: ...

    def score_batch(self, theta, X) -> np.ndarray: ...

    def grad_theta_score(self, theta, x) -> np.ndarray: ...

    def score_pullback(self, theta, X, V) -> np.ndarray: ...

    def sample(self, theta, n, rng) -> np.ndarray: ...

    def to_vector(self, theta) -> np.ndarray: ...

    def from_vector(self, vec) -> object: ...


@dataclass(frozen=True, eq=False)
class GaussianTheta:
    """Mean vector and lower Cholesky factor of the covariance."""

    mu: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        chol = np.array(self.chol, dtype=float)
        d = mu.shape[0]
        if chol.shape != (d, d):
            raise ValueError(f"chol must be ({d}, {d}), got {chol.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(chol))):
            raise ValueError("theta has non-finite entries")
        if np.any(np.triu(chol, 1) != 0.0):
            raise ValueError("chol must be lower triangular")
        if np.any(np.diag(chol) <= EPS_PD):
            raise ValueError(
                f"degenerate covariance: Cholesky diagonal {np.diag(chol)} not above {EPS_PD}"
            )
        mu.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "chol", chol)

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    @property
    def cov(self) -> np.ndarray:
        return self.chol @ self.chol.T

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu, self.chol[np.tril_indices(self.d)]])

    @classmethod
    def from_vector(cls, vec, d: int) -> "GaussianTheta":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (d + d * (d + 1) // 2,):
            raise ValueError(f"parameter vector of length {vec.shape} does not fit d={d}")
        chol = np.zeros((d, d))
        chol[np.tril_indices(d)] = vec[d:]
        return cls(mu=vec[:d], chol=chol)

    @classmethod
    def standard(cls, d: int) -> "GaussianTheta":
        return cls(mu=np.zeros(d), chol=np.eye(d))

    def __eq__(self, other):
        if not isinstance(other, GaussianTheta):
            return NotImplemented
        return np.array_equal(self.mu, other.mu) and np.array_equal(self.chol, other.chol)

    def __repr__(self):
        return f"GaussianTheta(mu={self.mu.tolist()}, chol={self.chol.tolist()})"


class GaussianFamily:
    """``N(mu, L L^T)`` with score ``s(x) = -Sigma^{-1} (x - mu)``."""

    def __init__(self, d: int):
        self.d = int(d)
        self.p = self.d + self.d * (self.d + 1) // 2
        self._tril = np.tril_indices(self.d)

    def __repr__(self):
        return f"GaussianFamily(d={self.d})"

    def to_vector(self, theta: GaussianTheta) -> np.ndarray:
        return theta.to_vector()

    def from_vector(self, vec) -> GaussianTheta:
        return GaussianTheta.from_vector(vec, self.d)

    def _check(self, theta: GaussianTheta, X: np.ndarray) -> np.ndarray:
        if theta.d != self.d:
            raise ValueError(f"theta has d={theta.d}, family has d={self.d}")
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise ValueError(f"points have dimension {X.shape[-1]}, expected {self.d}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite input")
        return X

    def _solve(self, theta: GaussianTheta, R: np.ndarray) -> np.ndarray:
        # rows of R -> rows of Sigma^{-1} R via two triangular solves
        return cho_solve((theta.chol, True), R.T, check_finite=False).T

    def score(self, theta: GaussianTheta, x) -> np.ndarray:
        x = self._check(theta, x).reshape(self.d)
        return -self._solve(theta, (x - theta.mu)[None, :])[0]

    def score_batch(self, theta: GaussianTheta, X) -> np.ndarray:
        """Scores for every row of an (n, d) array."""
        X = self._check(theta, X)
        return -self._solve(theta, X - theta.mu)

    def grad_theta_score(self, theta: GaussianTheta, x) -> np.ndarray:
        """p x d matrix; row ``k`` is ``d s(x) / d theta_k``.

        ``ds/dmu_j = P e_j`` and, with ``u = P (x - mu)``,
        ``ds/dL_ab = P (e_a (L^T u)_b + L e_b u_a)``, where ``P = Sigma^{-1}``.
        """
        x = self._check(theta, x).reshape(self.d)
        d, L = self.d, theta.chol
        P = cho_solve((L, True), np.eye(d), check_finite=False)
        u = P @ (x - theta.mu)
        Ltu = L.T @ u
        out = np.empty((self.p, d))
        out[:d] = P  # P is symmetric, so row j is P e_j
        for k, (a, b) in enumerate(zip(*self._tril)):
            v = L[:, b] * u[a]
            v[a] += Ltu[b]
            out[d + k] = P @ v
        return out

    def score_pullback(self, theta: GaussianTheta, X, V) -> np.ndarray:
        """``sum_i (d s(X_i) / d theta)^T V_i`` as a p-vector.

        Equivalent to contracting ``grad_theta_score`` at every row with the
        matching row of ``V``, without forming the n x p x d tensor.
        """
        X = self._check(theta, X)
        V = np.asarray(V, dtype=float)
        L = theta.chol
        U = self._solve(theta, X - theta.mu)
        W = self._solve(theta, V)
        mu_part = W.sum(axis=0)
        M = (W.T @ U + U.T @ W) @ L
        return np.concatenate([mu_part, M[self._tril]])

    def sample(self, theta: GaussianTheta, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` draws ``mu + L z`` with ``z`` standard normal."""
        if n < 1:
            raise ValueError(f"n must be at least 1, got {n}")
        Z = rng.standard_normal((n, self.d))
        return theta.mu + Z @ theta.chol.T

    def theta_derivative_fd(self, theta: GaussianTheta, x, order: int = 2, step: float = 1e-4):
        """Higher theta-derivatives of the score by nested central differences.

        Diagnostics only. ``order=2`` returns a p x p x d array,
        ``order=3`` a p x p x p x d array.
        """
        if order not in (2, 3):
            raise ValueError("order must be 2 or 3")
        vec = theta.to_vector()

        def inner(v):
            t = self.from_vector(v)
            if order == 2:
                return self.grad_theta_score(t, x)
            return self.theta_derivative_fd(t, x, order=2, step=step)

        parts = []
        for k in range(self.p):
            e = np.zeros(self.p)
            e[k] = step
            parts.append((inner(vec + e) - inner(vec - e)) / (2 * step))
        return np.stack(parts)


def family_for(theta) -> GaussianFamily:
    if isinstance(theta, GaussianTheta):
        return GaussianFamily(theta.d)
    raise TypeError(f"no model family registered for {type(theta).__name__}")
