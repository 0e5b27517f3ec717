"""Scalar RBF / Mahalanobis kernels, the operator-valued kernel, and Gram solves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from . import _accel

DEFAULT_EPS0 = 1e-2


class SingularGramError(np.linalg.LinAlgError):
    """Raised when a Gram matrix cannot be factorized even after maximal jitter."""


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def _check_pair(s, s2):
    s, s2 = _vec(s), _vec(s2)
    if s.shape != s2.shape:
        raise ValueError(f"dimension mismatch: {s.shape} vs {s2.shape}")
    return s, s2


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Mahalanobis-gated operator-valued kernel ``K(s, s') = kappa_W(s, s') * output_cov``.

    ``lengthscale`` is the plain RBF lengthscale ``l``; the ungated kernel uses
    ``W = 1/l^2`` in every coordinate.
    """

    lengthscale: float
    mahalanobis_weights: np.ndarray
    output_cov: np.ndarray
    eps0: float = DEFAULT_EPS0

    def __post_init__(self):
        W = _vec(self.mahalanobis_weights).copy()
        S = np.atleast_2d(np.asarray(self.output_cov, dtype=float)).copy()
        object.__setattr__(self, "mahalanobis_weights", W)
        object.__setattr__(self, "output_cov", S)
        W.flags.writeable = False
        S.flags.writeable = False
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        if np.any(W < self.eps0 * (1 - 1e-12)):
            raise ValueError(f"mahalanobis weights must be >= eps0={self.eps0}")
        if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("output_cov must be a symmetric square matrix")
        if np.linalg.eigvalsh(S).min() < -1e-12:
            raise ValueError("output_cov must be positive semidefinite")

    @classmethod
    def rbf(cls, dim: int, lengthscale: float, action_dim: int = 1,
            output_scale: float = 1.0, eps0: float = DEFAULT_EPS0) -> "KernelSpec":
        W = np.full(dim, 1.0 / lengthscale**2)
        return cls(lengthscale, W, output_scale * np.eye(action_dim), min(eps0, W.min()))

    def with_weights(self, W) -> "KernelSpec":
        return KernelSpec(self.lengthscale, W, self.output_cov, self.eps0)

    @property
    def state_dim(self) -> int:
        return self.mahalanobis_weights.shape[0]

    @property
    def action_dim(self) -> int:
        return self.output_cov.shape[0]

    def scalar(self, X, Y) -> np.ndarray:
        """Scalar Mahalanobis kernel matrix between row sets ``X`` and ``Y``."""
        return _accel.cross_kernel(np.atleast_2d(X), np.atleast_2d(Y), self.mahalanobis_weights)


def rbf_eval(s, s2, lengthscale: float) -> float:
    s, s2 = _check_pair(s, s2)
    if not lengthscale > 0:
        raise ValueError("lengthscale must be positive")
    d2 = float(np.dot(s - s2, s - s2))
    return float(np.exp(-d2 / (2.0 * lengthscale**2)))


def mahalanobis_eval(s, s2, W) -> float:
    s, s2 = _check_pair(s, s2)
    W = _vec(W)
    if W.shape != s.shape:
        raise ValueError("weight vector has wrong dimension")
    if np.any(W <= 0):
        raise ValueError("Mahalanobis weights must be strictly positive")
    diff = s - s2
    return float(np.exp(-0.5 * np.dot(diff * W, diff)))


def ovk_eval(s, s2, spec: KernelSpec) -> np.ndarray:
    return mahalanobis_eval(s, s2, spec.mahalanobis_weights) * spec.output_cov


def product_kernel_eval(s, s2, coalition, lengthscale: float) -> float:
    s, s2 = _check_pair(s, s2)
    idx = np.asarray(sorted(coalition), dtype=int)
    if idx.size == 0:
        return 1.0
    if idx.min() < 0 or idx.max() >= s.shape[0]:
        raise ValueError(f"coalition index out of range for dimension {s.shape[0]}")
    diff = s[idx] - s2[idx]
    return float(np.prod(np.exp(-diff * diff / (2.0 * lengthscale**2))))


# ---------------------------------------------------------------------------
# Gram factorization

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass
class GramFactor:
    """Cholesky factor of ``G + jitter * I`` with the jitter actually used."""

    chol: tuple
    jitter: float
    size: int = field(default=0)

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros_like(rhs)
        return sla.cho_solve(self.chol, rhs, check_finite=False)


def factor_gram(G) -> GramFactor:
    """Factorize a symmetric Gram matrix, adding diagonal jitter only on failure.

    A plain factorization is tried first; jitter then starts at
    ``1e-10 * trace(G)/q`` and escalates x10 up to ``1e-4 * trace(G)/q``.
    """
    G = np.asarray(G, dtype=float)
    q = G.shape[0]
    if q == 0:
        return GramFactor((np.zeros((0, 0)), True), 0.0, 0)
    if not np.allclose(G, G.T, atol=1e-12, rtol=0):
        raise ValueError("Gram matrix is not symmetric")
    base = float(np.trace(G)) / q
    if not base > 0:
        raise SingularGramError("Gram matrix has nonpositive trace")
    rel = 0.0
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * base
        try:
            c = sla.cho_factor(G + jitter * np.eye(q), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            rel = rel * 10.0 if rel else JITTER_START
            continue
        if np.all(np.diag(c[0]) > 0):
            return GramFactor(c, jitter, q)
        rel = rel * 10.0 if rel else JITTER_START
    raise SingularGramError(f"Gram matrix of size {q} not factorizable with jitter up to {JITTER_MAX:g}*tr/q")


def gram_solve(G, rhs) -> np.ndarray:
    """Solve ``(G + jitter I) X = rhs`` with the escalating-jitter policy."""
    return factor_gram(G).solve(rhs)
