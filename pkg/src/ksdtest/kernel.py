"""Gaussian kernel and the spatial derivatives used by the Stein kernel.

The kernel is ``k(x, y) = exp(-||x - y||^2 / (2 ell^2))`` with bandwidth
``ell = c * sqrt(d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth specification ``ell(d) = c * sqrt(d)``.

    Parameters
    ----------
    c : float
        Positive bandwidth constant.
    d : int
        Data dimension.
    """

    c: float
    d: int

    def __post_init__(self):
        if not (isinstance(self.d, (int, np.integer)) and self.d >= 1):
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError(f"c must be a positive finite number, got {self.c!r}")

    @property
    def ell(self) -> float:
        return self.c * math.sqrt(self.d)

    @classmethod
    def from_bandwidth(cls, ell: float, d: int) -> "KernelConfig":
        """Build a config whose derived bandwidth is ``ell``."""
        return cls(c=ell / math.sqrt(d), d=d)


def _pair(x, y, cfg: KernelConfig):
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] != cfg.d or y.shape[0] != cfg.d:
        raise ValueError(
            f"dimension mismatch: got {x.shape[0]} and {y.shape[0]}, kernel has d={cfg.d}"
        )
    return x, y


def _sqdist(x: np.ndarray, y: np.ndarray) -> float:
    # fixed left-to-right order keeps eval(x, y) == eval(y, x) bit-exactly
    acc = 0.0
    for a, b in zip(x.tolist(), y.tolist()):
        acc += (a - b) * (a - b)
    return acc


def evaluate(x, y, cfg: KernelConfig) -> float:
    """Kernel value ``k(x, y)``."""
    x, y = _pair(x, y, cfg)
    return math.exp(-_sqdist(x, y) / (2.0 * cfg.ell**2))


def grad_x(x, y, cfg: KernelConfig) -> np.ndarray:
    """Gradient of ``k`` in its first argument: ``-(x - y) / ell^2 * k(x, y)``."""
    x, y = _pair(x, y, cfg)
    return -(x - y) / cfg.ell**2 * evaluate(x, y, cfg)


def grad_xprime(x, y, cfg: KernelConfig) -> np.ndarray:
    """Gradient of ``k`` in its second argument."""
    x, y = _pair(x, y, cfg)
    return (x - y) / cfg.ell**2 * evaluate(x, y, cfg)


def cross_trace(x, y, cfg: KernelConfig) -> float:
    """``sum_i d^2 k / (dx_i dy_i)`` = ``k * (d / ell^2 - ||x - y||^2 / ell^4)``."""
    x, y = _pair(x, y, cfg)
    l2 = cfg.ell**2
    r2 = _sqdist(x, y)
    return math.exp(-r2 / (2.0 * l2)) * (cfg.d / l2 - r2 / l2**2)


@dataclass(frozen=True)
class PairwiseTerms:
    """Parameter-free pieces of the Stein Gram matrix for one sample.

    ``K`` is the kernel matrix and ``C`` the cross-trace matrix; both are
    exactly symmetric.
    """

    X: np.ndarray
    K: np.ndarray
    C: np.ndarray
    ell: float


def pairwise_terms(X: np.ndarray, cfg: KernelConfig) -> PairwiseTerms:
    """Kernel and cross-trace matrices for all row pairs of ``X`` (n x d)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != cfg.d:
        raise ValueError(f"expected an (n, {cfg.d}) array, got shape {X.shape}")
    n = X.shape[0]
    r2 = np.zeros((n, n))
    for k in range(cfg.d):
        diff = X[:, None, k] - X[None, :, k]
        r2 += diff * diff
    l2 = cfg.ell**2
    K = np.exp(-r2 / (2.0 * l2))
    C = K * (cfg.d / l2 - r2 / (l2 * l2))
    return PairwiseTerms(X=X, K=K, C=C, ell=cfg.ell)
