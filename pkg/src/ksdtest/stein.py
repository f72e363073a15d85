"""Stein kernel, its parameter gradient, and KSD U/V-statistics.

For a model with score ``s`` and the Gaussian kernel ``k``,

    h(x, x') = s(x)^T s(x') k + s(x)^T grad_{x'} k + grad_x k^T s(x') + tr_k(x, x')

which for the Gaussian kernel collapses to

    k(x, x') * [s(x)^T s(x') + (s(x) - s(x'))^T (x - x') / ell^2] + tr_k(x, x').
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel as kern
from .kernel import KernelConfig, PairwiseTerms, pairwise_terms
from .model import family_for

# row-block size for statistics on samples too large for a full Gram
_TILE = 1024
_FULL_GRAM_MAX_N = 2048


def as_sample(data, d: int | None = None, min_rows: int = 1) -> np.ndarray:
    """Validate an (n, d) array of observations and return it as float."""
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d in (None, 1) else X.reshape(-1, d)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError(f"sample must be an (n, d) array, got shape {X.shape}")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"sample has d={X.shape[1]}, expected {d}")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ValueError(f"non-finite entry at row {bad[0]}, column {bad[1]}")
    return X


def canonical_order(X: np.ndarray) -> np.ndarray:
    """Rows of ``X`` sorted lexicographically.

    Statistics are evaluated on this ordering so that they are functions of
    the empirical measure alone, bit-exactly.
    """
    return X[np.lexsort(X.T[::-1])]


@dataclass
class GramBundle:
    """Stein Gram ``H[i, j] = h(X_i, X_j)`` and optionally ``G[i, j] = grad_theta h``."""

    H: np.ndarray
    G: np.ndarray | None = None


def h_theta(theta, x, xprime, cfg: KernelConfig, model=None) -> float:
    """Stein kernel value for a single pair of points."""
    model = model or family_for(theta)
    s, sp = model.score(theta, x), model.score(theta, xprime)
    k = kern.evaluate(x, xprime, cfg)
    return float(
        k * (s @ sp)
        + s @ kern.grad_xprime(x, xprime, cfg)
        + kern.grad_x(x, xprime, cfg) @ sp
        + kern.cross_trace(x, xprime, cfg)
    )


def grad_theta_h(theta, x, xprime, cfg: KernelConfig, model=None) -> np.ndarray:
    """Gradient of ``h`` in the flat parameter vector, single pair.

    Only the scores depend on theta, so the product rule gives four terms.
    """
    model = model or family_for(theta)
    s, sp = model.score(theta, x), model.score(theta, xprime)
    J, Jp = model.grad_theta_score(theta, x), model.grad_theta_score(theta, xprime)
    k = kern.evaluate(x, xprime, cfg)
    gx = kern.grad_x(x, xprime, cfg)
    gxp = kern.grad_xprime(x, xprime, cfg)
    return k * (J @ sp) + k * (Jp @ s) + J @ gxp + Jp @ gx


def hessian_theta_h(theta, x, xprime, cfg: KernelConfig, model=None, step: float = 1e-5):
    """Parameter Hessian of ``h`` by central differences of ``grad_theta_h``.

    Diagnostics only; the result is symmetrised.
    """
    model = model or family_for(theta)
    vec = model.to_vector(theta)
    cols = []
    for k in range(model.p):
        e = np.zeros(model.p)
        e[k] = step
        gp = grad_theta_h(model.from_vector(vec + e), x, xprime, cfg, model)
        gm = grad_theta_h(model.from_vector(vec - e), x, xprime, cfg, model)
        cols.append((gp - gm) / (2 * step))
    Hs = np.stack(cols, axis=1)
    return 0.5 * (Hs + Hs.T)


def h_pairs(theta, X, Y, cfg: KernelConfig, model=None) -> np.ndarray:
    """Row-wise ``h(X_i, Y_i)`` for two (m, d) arrays of points."""
    model = model or family_for(theta)
    X = as_sample(X, cfg.d)
    Y = as_sample(Y, cfg.d)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    S, Sp = model.score_batch(theta, X), model.score_batch(theta, Y)
    D = X - Y
    l2 = cfg.ell**2
    r2 = np.zeros(X.shape[0])
    for k in range(cfg.d):
        r2 += D[:, k] * D[:, k]
    K = np.exp(-r2 / (2 * l2))
    inner = np.sum(S * Sp, axis=1) + np.sum((S - Sp) * D, axis=1) / l2
    return K * inner + K * (cfg.d / l2 - r2 / (l2 * l2))


def stein_gram(terms: PairwiseTerms, S: np.ndarray) -> np.ndarray:
    """Full Stein Gram matrix from precomputed kernel terms and scores ``S`` (n x d)."""
    X, K = terms.X, terms.K
    a = np.einsum("ij,ij->i", S, X)
    SX = S @ X.T
    inner = S @ S.T + (a[:, None] + a[None, :] - SX - SX.T) / terms.ell**2
    H = K * inner + terms.C
    # exact symmetry regardless of BLAS blocking
    return 0.5 * (H + H.T)


def weighted_grad(terms: PairwiseTerms, S: np.ndarray, A: np.ndarray, model, theta) -> np.ndarray:
    """``sum_{i,j} A[i, j] grad_theta h(X_i, X_j)`` for symmetric pair weights ``A``.

    ``A`` already includes the kernel factor (``A = weights * K``).
    """
    X = terms.X
    AS = A @ S
    AX = A @ X
    rs = A.sum(axis=1)
    V = AS + (rs[:, None] * X - AX) / terms.ell**2
    return 2.0 * model.score_pullback(theta, X, V)


def gram(sample, theta, cfg: KernelConfig, with_grad: bool = False, model=None) -> GramBundle:
    """Materialise the Stein Gram (diagonal included) for a sample."""
    model = model or family_for(theta)
    X = as_sample(sample, cfg.d)
    terms = pairwise_terms(X, cfg)
    S = model.score_batch(theta, X)
    H = stein_gram(terms, S)
    G = None
    if with_grad:
        n = X.shape[0]
        G = np.empty((n, n, model.p))
        for i in range(n):
            for j in range(i, n):
                G[i, j] = G[j, i] = grad_theta_h(theta, X[i], X[j], cfg, model)
    return GramBundle(H=H, G=G)


def _long_sum(M: np.ndarray) -> float:
    return float(np.sum(M, dtype=np.longdouble))


def _tiles(X: np.ndarray, cfg: KernelConfig, theta, model):
    """Yield (row slice, H block) for the Stein Gram in row tiles."""
    n = X.shape[0]
    S = model.score_batch(theta, X)
    l2 = cfg.ell**2
    a = np.einsum("ij,ij->i", S, X)
    for start in range(0, n, _TILE):
        sl = slice(start, min(start + _TILE, n))
        r2 = np.zeros((sl.stop - start, n))
        for k in range(cfg.d):
            diff = X[sl, None, k] - X[None, :, k]
            r2 += diff * diff
        K = np.exp(-r2 / (2 * l2))
        inner = S[sl] @ S.T + (a[sl, None] + a[None, :] - S[sl] @ X.T - X[sl] @ S.T) / l2
        yield sl, K * inner + K * (cfg.d / l2 - r2 / (l2 * l2))


def _offdiag_sum_and_diag(X, theta, cfg, model):
    if X.shape[0] <= _FULL_GRAM_MAX_N:
        H = stein_gram(pairwise_terms(X, cfg), model.score_batch(theta, X))
        diag = np.diag(H).copy()
        return _long_sum(H) - _long_sum(diag), diag
    total = np.longdouble(0.0)
    diag = np.empty(X.shape[0])
    for sl, block in _tiles(X, cfg, theta, model):
        total += np.sum(block, dtype=np.longdouble)
        diag[sl] = block[np.arange(block.shape[0]), np.arange(sl.start, sl.stop)]
    return float(total) - _long_sum(diag), diag


def ksd_u(sample, theta, cfg: KernelConfig, model=None) -> float:
    """U-statistic ``1/(n(n-1)) sum_{i != j} h(X_i, X_j)``."""
    model = model or family_for(theta)
    X = canonical_order(as_sample(sample, cfg.d, min_rows=2))
    n = X.shape[0]
    off, _ = _offdiag_sum_and_diag(X, theta, cfg, model)
    return off / (n * (n - 1))


def ksd_v(sample, theta, cfg: KernelConfig, model=None) -> float:
    """V-statistic ``1/n^2 sum_{i,j} h(X_i, X_j)``; non-negative up to rounding."""
    model = model or family_for(theta)
    X = canonical_order(as_sample(sample, cfg.d, min_rows=1))
    n = X.shape[0]
    off, diag = _offdiag_sum_and_diag(X, theta, cfg, model)
    return (off + _long_sum(diag)) / (n * n)


def ksd_u_with_se(sample, theta, cfg: KernelConfig, model=None) -> tuple[float, float]:
    """U-statistic and its first-order (non-degenerate) standard error.

    The SE is ``2 * sd_i(mean_{j != i} h(X_i, X_j)) / sqrt(n)``, appropriate
    when the model is misspecified. Works in row tiles for large ``n``.
    """
    model = model or family_for(theta)
    X = as_sample(sample, cfg.d, min_rows=3)
    n = X.shape[0]
    row = np.empty(n)
    for sl, block in _tiles(X, cfg, theta, model):
        diag = block[np.arange(block.shape[0]), np.arange(sl.start, sl.stop)]
        row[sl] = (block.sum(axis=1) - diag) / (n - 1)
    return float(row.mean()), float(2.0 * row.std(ddof=1) / np.sqrt(n))


def grad_ksd_u(sample, theta, cfg: KernelConfig, model=None) -> np.ndarray:
    """Off-diagonal average of ``grad_theta h`` over the sample."""
    model = model or family_for(theta)
    X = canonical_order(as_sample(sample, cfg.d, min_rows=2))
    n = X.shape[0]
    terms = pairwise_terms(X, cfg)
    S = model.score_batch(theta, X)
    A = terms.K.copy()
    np.fill_diagonal(A, 0.0)
    return weighted_grad(terms, S, A, model, theta) / (n * (n - 1))


def hessian_ksd_u(sample, theta, cfg: KernelConfig, model=None, step: float = 1e-5):
    """U-statistic average of the parameter Hessian of ``h`` (diagnostic).

    Central differences of ``grad_ksd_u``, symmetrised. Estimates the
    Hessian of the population KSD^2 at ``theta``.
    """
    model = model or family_for(theta)
    vec = model.to_vector(theta)
    cols = []
    for k in range(model.p):
        e = np.zeros(model.p)
        e[k] = step
        gp = grad_ksd_u(sample, model.from_vector(vec + e), cfg, model)
        gm = grad_ksd_u(sample, model.from_vector(vec - e), cfg, model)
        cols.append((gp - gm) / (2 * step))
    Hs = np.stack(cols, axis=1)
    return 0.5 * (Hs + Hs.T)


def center_empirical(H) -> np.ndarray:
    """Two-way empirical centering ``H - rowmean - colmean + grandmean``.

    Means run over all ``n`` indices, diagonal included, so every row and
    column of the result averages to zero.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"core matrix must be square, got shape {H.shape}")
    if H.size == 0:
        raise ValueError("core matrix is empty")
    r = H.mean(axis=1, keepdims=True)
    c = H.mean(axis=0, keepdims=True)
    return H - r - c + H.mean()
