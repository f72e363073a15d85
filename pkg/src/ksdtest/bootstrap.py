"""Efron bootstrap for the composite KSD statistic.

Three schemes share one interface:

``corrected``
    ``n U*_n h_{theta*, n} + n (theta* - theta_hat)^T (U*_n grad h_{theta*} - U_n grad h_{theta_hat})``,
    valid under parameter estimation.
``naive``
    The first term only; its limit ignores the estimation noise.
``wild``
    Rademacher-weighted V-statistic at ``theta_hat``; also ignores it.

``U*_n`` averages over ordered position pairs ``a != b`` of the bootstrap
index vector, and ``h_{theta, n}`` is ``h_theta`` centred with respect to
the empirical measure of the *original* sample, so it is an index lookup
into the centred original-sample Gram.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import EstimationError, EstimatorSpec, estimate
from .kernel import KernelConfig, pairwise_terms
from .model import family_for
from .stein import as_sample, center_empirical, stein_gram, weighted_grad

SCHEMES = ("corrected", "naive", "wild")
MAX_RETRIES = 10


class BootstrapError(RuntimeError):
    """Too many bootstrap draws failed in a row."""


def substream(seed, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under a master seed.

    ``seed`` is an int or a sequence ``(master, k1, k2, ...)``; the key is
    appended to the spawn key, so streams never depend on execution order.
    """
    if isinstance(seed, (int, np.integer)):
        entropy, prefix = int(seed), ()
    else:
        entropy, *rest = [int(s) for s in seed]
        prefix = tuple(rest)
    ss = np.random.SeedSequence(entropy, spawn_key=prefix + tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def resample_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. uniform draws from ``{0, ..., n-1}``."""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    return rng.integers(0, n, size=n)


@dataclass
class BootstrapDraws:
    values: np.ndarray
    scheme: str
    seed: object
    B: int
    rejections: int = 0


class _Context:
    """Per-sample quantities reused across bootstrap draws."""

    def __init__(self, X, theta_hat, cfg, est, model=None):
        # work in canonical row order; index and sign vectors address input rows
        self.X_in = X
        self.order = np.lexsort(X.T[::-1])
        X = X[self.order]
        self.X = X
        self.n = X.shape[0]
        self.cfg = cfg
        self.est = est
        self.theta_hat = theta_hat
        self.model = model or family_for(theta_hat)
        self.terms = pairwise_terms(X, cfg)
        self.vec_hat = self.model.to_vector(theta_hat)
        S = self.model.score_batch(theta_hat, X)
        self._H_hat = None
        self._S_hat = S
        self._grad_hat = None
        self.KX = self.terms.K @ X
        self.K1 = self.terms.K.sum(axis=1)
        self.C1 = self.terms.C.sum(axis=1)

    @property
    def H_hat(self):
        if self._H_hat is None:
            self._H_hat = stein_gram(self.terms, self._S_hat)
        return self._H_hat

    @property
    def grad_hat(self):
        # U_n grad h at theta_hat over the original sample
        if self._grad_hat is None:
            A = self.terms.K.copy()
            np.fill_diagonal(A, 0.0)
            n = self.n
            self._grad_hat = weighted_grad(self.terms, self._S_hat, A, self.model, self.theta_hat) / (
                n * (n - 1)
            )
        return self._grad_hat

    def counts(self, idx):
        return np.bincount(idx, minlength=self.n).astype(float)[self.order]

    def boot_pair_weights(self, c):
        # number of bootstrap position pairs (a != b) landing on (i, j)
        W = np.outer(c, c)
        W[np.diag_indices(self.n)] -= c
        return W

    def parts(self, idx, grad_at="bootstrap"):
        """(n * U*_n h_{theta*, n}, correction term, theta*) for one index vector."""
        n = self.n
        theta_star = estimate(self.X_in[idx], self.cfg, self.est)
        S_star = self.model.score_batch(theta_star, self.X)
        Hc = center_empirical(stein_gram(self.terms, S_star))
        c = self.counts(idx)
        ustar = (c @ Hc @ c - c @ np.diag(Hc)) / (n * (n - 1))
        delta = self.model.to_vector(theta_star) - self.vec_hat
        _check_grad_at(grad_at)
        A = self.boot_pair_weights(c) * self.terms.K
        g_star = 0.0
        for S_g, theta_g, w in self._grad_points(grad_at, S_star, theta_star):
            g_star = g_star + w * weighted_grad(self.terms, S_g, A, self.model, theta_g) / (n * (n - 1))
        correction = n * float(delta @ (g_star - self.grad_hat))
        return n * ustar, correction, theta_star

    def _grad_points(self, grad_at, S_star, theta_star):
        # (scores, theta, weight) at which U*_n grad h is averaged
        if grad_at == "bootstrap":
            return [(S_star, theta_star, 1.0)]
        if grad_at == "theta_hat":
            return [(self._S_hat, self.theta_hat, 1.0)]
        return [(S_star, theta_star, 0.5), (self._S_hat, self.theta_hat, 0.5)]

    def parts_fast(self, idx, grad_at="bootstrap"):
        """Same as ``parts`` without materialising any n x n matrix.

        Every quantity is a product of ``K`` with an n x O(d) block.
        """
        n, X, K, l2 = self.n, self.X, self.terms.K, self.terms.ell**2
        theta_star = estimate(self.X_in[idx], self.cfg, self.est)
        S = self.model.score_batch(theta_star, X)
        a = np.einsum("ij,ij->i", S, X)
        c = self.counts(idx)
        d = X.shape[1]
        cS, cX, ca = c[:, None] * S, c[:, None] * X, c * a
        blocks = [S, cS, cX, a[:, None], ca[:, None], c[:, None]]
        _check_grad_at(grad_at)
        if grad_at != "bootstrap":
            blocks.append(c[:, None] * self._S_hat)
        KM = K @ np.hstack(blocks)
        KS, KcS, KcX = KM[:, :d], KM[:, d:2 * d], KM[:, 2 * d:3 * d]
        Ka, Kca, Kc = KM[:, 3 * d], KM[:, 3 * d + 1], KM[:, 3 * d + 2]

        def H_times(KuS, KuX, Ku, Kau, Cu):
            return (np.einsum("ij,ij->i", S, KuS)
                    + (a * Ku + Kau - np.einsum("ij,ij->i", S, KuX) - np.einsum("ij,ij->i", X, KuS)) / l2
                    + Cu)

        H1 = H_times(KS, self.KX, self.K1, Ka, self.C1)
        Hc_vec = H_times(KcS, KcX, Kc, Kca, self.terms.C @ c)
        r = H1 / n
        g = r.mean()
        diagH = np.einsum("ij,ij->i", S, S) + d / l2
        quad = c @ Hc_vec - 2.0 * n * (c @ r) + g * n * n
        diag_part = c @ diagH - 2.0 * (c @ r) + n * g
        ustar = (quad - diag_part) / (n * (n - 1))

        AX = c[:, None] * KcX - cX
        rs = c * Kc - c
        g_star = 0.0
        for S_g, theta_g, w in self._grad_points(grad_at, S, theta_star):
            KcSg = KcS if S_g is S else KM[:, 3 * d + 3:]
            V = c[:, None] * KcSg - c[:, None] * S_g + (rs[:, None] * X - AX) / l2
            g_star = g_star + w * 2.0 * self.model.score_pullback(theta_g, X, V) / (n * (n - 1))
        delta = self.model.to_vector(theta_star) - self.vec_hat
        correction = n * float(delta @ (g_star - self.grad_hat))
        return n * ustar, correction, theta_star

    def wild(self, w):
        w = w[self.order]
        return float(w @ self.H_hat @ w) / self.n


GRAD_AT = ("bootstrap", "theta_hat", "midpoint")


def _check_grad_at(grad_at):
    if grad_at not in GRAD_AT:
        raise ValueError(f"grad_at must be one of {GRAD_AT}, got {grad_at!r}")


def _context(sample, theta_hat, cfg, est):
    X = as_sample(sample, cfg.d, min_rows=2)
    return _Context(X, theta_hat, cfg, est or EstimatorSpec())


def _check_idx(idx, n):
    idx = np.asarray(idx)
    if idx.shape != (n,) or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"bootstrap index vector must be {n} integers")
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError("bootstrap index out of range")
    return idx


def correction_term(sample, theta_hat, boot_idx, cfg: KernelConfig, est: EstimatorSpec | None = None,
                    grad_at: str = "bootstrap") -> float:
    """``n (theta* - theta_hat)^T (U*_n grad h_{theta*} - U_n grad h_{theta_hat})``."""
    ctx = _context(sample, theta_hat, cfg, est)
    return ctx.parts(_check_idx(boot_idx, ctx.n), grad_at)[1]


def corrected_stat(sample, theta_hat, boot_idx, cfg: KernelConfig, est: EstimatorSpec | None = None,
                   grad_at: str = "bootstrap") -> float:
    """Corrected bootstrap statistic for one resample (n-scaled).

    ``theta_hat`` must be the estimate produced by ``est`` on ``sample``.
    ``grad_at`` picks where ``U*_n grad h`` is evaluated: ``"bootstrap"``
    (``theta*``, the default), ``"theta_hat"``, or ``"midpoint"`` (the mean
    of the two). Through the parameter Hessian these weight the quadratic
    term ``n d^T H d`` (``d = theta* - theta_hat``) by 1, 0 and 1/2. A
    second-order Taylor expansion of the observed statistic carries the
    factor 1/2, so ``"midpoint"`` is the variant that mimics it; the other
    two are kept for sensitivity checks.
    """
    ctx = _context(sample, theta_hat, cfg, est)
    first, corr, _ = ctx.parts(_check_idx(boot_idx, ctx.n), grad_at)
    return first + corr


def naive_stat(sample, boot_idx, cfg: KernelConfig, est: EstimatorSpec | None = None) -> float:
    """``n U*_n h_{theta*, n}`` with no correction term."""
    est = est or EstimatorSpec()
    X = as_sample(sample, cfg.d, min_rows=2)
    ctx = _Context(X, estimate(X, cfg, est), cfg, est)
    return ctx.parts(_check_idx(boot_idx, ctx.n))[0]


def wild_stat(sample, theta_hat, rademacher, cfg: KernelConfig) -> float:
    """``n^-1 sum_{i != j} W_i W_j h(X_i, X_j) + n^-1 sum_i h(X_i, X_i)`` at ``theta_hat``."""
    X = as_sample(sample, cfg.d, min_rows=2)
    w = np.asarray(rademacher, dtype=float)
    if w.shape != (X.shape[0],) or not np.all(np.abs(w) == 1.0):
        raise ValueError("rademacher must be a length-n vector of +1/-1")
    return _Context(X, theta_hat, cfg, EstimatorSpec()).wild(w)


def _one_draw(ctx: _Context, scheme, rng_for_attempt, grad_at):
    """Returns (value, number of rejected attempts)."""
    if scheme == "wild":
        rng = rng_for_attempt(0)
        w = rng.choice(np.array([-1.0, 1.0]), size=ctx.n)
        return ctx.wild(w), 0
    for attempt in range(MAX_RETRIES + 1):
        idx = resample_indices(ctx.n, rng_for_attempt(attempt))
        try:
            first, corr, _ = ctx.parts_fast(idx, grad_at)
        except EstimationError:
            continue
        return (first + corr if scheme == "corrected" else first), attempt
    raise BootstrapError(f"bootstrap estimation failed {MAX_RETRIES + 1} times in a row")


def draw_all(sample, theta_hat, scheme: str, B: int, cfg: KernelConfig,
             est: EstimatorSpec | None = None, seed=0, grad_at: str = "bootstrap") -> BootstrapDraws:
    """``B`` bootstrap statistics, draw ``b`` (1-based) on substream ``b``.

    A draw whose resample breaks the estimator is redrawn on the attempt
    substream ``(b, attempt)``; more than ``MAX_RETRIES`` failures abort.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if B < 1:
        raise ValueError(f"B must be at least 1, got {B}")
    ctx = _context(sample, theta_hat, cfg, est)
    values = np.empty(B)
    rejected = 0
    for b in range(1, B + 1):
        def rng_for_attempt(attempt, b=b):
            return substream(seed, b) if attempt == 0 else substream(seed, b, attempt)

        values[b - 1], r = _one_draw(ctx, scheme, rng_for_attempt, grad_at)
        rejected += r
    if not np.all(np.isfinite(values)):
        raise BootstrapError("non-finite bootstrap statistic")
    return BootstrapDraws(values=values, scheme=scheme, seed=seed, B=B, rejections=rejected)


def quantile(draws, gamma: float) -> float:
    """The ``ceil((1 - gamma) B)``-th order statistic (1-indexed) of the draws."""
    if not (0.0 < gamma < 1.0):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    values = draws.values if isinstance(draws, BootstrapDraws) else np.asarray(draws, dtype=float)
    B = values.shape[0]
    # round away representation noise such as 0.95 * 200 = 190.00000000000003
    k = math.ceil(round((1.0 - gamma) * B, 9))
    k = min(max(k, 1), B)
    return float(np.sort(values)[k - 1])
