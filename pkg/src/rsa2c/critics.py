"""Value critic (scalar RKHS, regularized TD) and compatible advantage critic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .actor import PolicyParams, policy_mean
from .data import as_batch
from .dictionary import SparseDictionary
from .kernels import KernelSpec, factor_gram


class DivergentShrinkageError(ValueError):
    """Ridge shrinkage factor ``1 - alpha*lambda`` would be nonpositive."""


@dataclass
class ValueCritic:
    dict: SparseDictionary
    kernel: KernelSpec
    ridge: float = 1e-3

    def __post_init__(self):
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    @classmethod
    def create(cls, state_dim: int, lengthscale: float, max_size: int, ridge: float = 1e-3,
               residual_threshold: float | None = None) -> "ValueCritic":
        # Plain RBF: the value critic is never attribution-gated.
        kernel = KernelSpec.rbf(state_dim, lengthscale, 1)
        return cls(SparseDictionary(state_dim, 1, max_size, residual_threshold), kernel, ridge)

    @property
    def lengthscale(self) -> float:
        return self.kernel.lengthscale

    @property
    def weights(self) -> np.ndarray:
        return self.dict.coeffs[:, 0]

    def __call__(self, S) -> np.ndarray:
        return self.dict.evaluate(S, self.kernel)[:, 0]

    def copy(self) -> "ValueCritic":
        return ValueCritic(self.dict.copy(), self.kernel, self.ridge)

    def norm(self) -> float:
        return float(np.sqrt(max(self.dict.rkhs_norm_sq(self.kernel), 0.0)))

    def to_dict(self) -> dict:
        return {"dict": self.dict.to_dict(), "lengthscale": self.lengthscale, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, data: dict) -> "ValueCritic":
        d = SparseDictionary.from_dict(data["dict"])
        return cls(d, KernelSpec.rbf(d.state_dim, data["lengthscale"], 1), data["ridge"])


def value_eval(vc: ValueCritic, s):
    s = np.asarray(s, dtype=float)
    out = vc(s)
    return float(out[0]) if s.ndim == 1 else out


def td_errors(vc: ValueCritic, batch, gamma: float) -> np.ndarray:
    """``V(s) - r - gamma V(s')`` per transition (sign of the loss gradient)."""
    b = as_batch(batch)
    return vc(b.states) - b.rewards - gamma * vc(b.next_states)


def td_loss(vc: ValueCritic, batch, gamma: float, targets=None) -> float:
    """Regularized TD loss; pass frozen ``targets`` to get the semi-gradient objective."""
    b = as_batch(batch)
    if targets is None:
        targets = b.rewards + gamma * vc(b.next_states)
    err = vc(b.states) - targets
    return float(0.5 * np.mean(err**2) + 0.5 * vc.ridge * vc.dict.rkhs_norm_sq(vc.kernel))


def td_gradient(vc: ValueCritic, batch, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Data part of the functional TD gradient as atoms ``(centers, coeffs)``.

    The full gradient is this expansion plus ``ridge * w_V``.
    """
    b = as_batch(batch)
    err = td_errors(vc, b, gamma)
    return b.states.copy(), (err / len(b))[:, None]


def td_step(vc: ValueCritic, batch, gamma: float, alpha: float) -> ValueCritic:
    """``w <- (1 - alpha*lambda) w - alpha * (1/n) sum_i e_i psi(s_i)``; mutates ``vc``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if alpha * vc.ridge >= 1.0:
        raise DivergentShrinkageError(f"alpha*lambda = {alpha * vc.ridge:g} >= 1")
    b = as_batch(batch)
    centers, coeffs = td_gradient(vc, b, gamma)
    q = len(vc.dict)
    if vc.ridge > 0 and q:
        vc.dict._coeffs[:q] *= 1.0 - alpha * vc.ridge
    for s, c in zip(centers, coeffs):
        if c[0] != 0.0:  # zero-error samples leave the expansion as is
            vc.dict.insert_or_replace(s, -alpha * c, vc.kernel)
    return vc


# ---------------------------------------------------------------------------
# advantage critic


def _inv_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if vals.min() <= 0:
        raise ValueError("covariance is not positive definite")
    return (vecs / np.sqrt(vals)) @ vecs.T


def compatible_feature(p: PolicyParams, s, a) -> tuple[np.ndarray, np.ndarray]:
    """Atom ``(s, Sigma^{-1/2}(a - h(s)))`` of the compatible feature map."""
    s = np.asarray(s, dtype=float)
    diff = np.asarray(a, dtype=float).reshape(p.action_dim) - policy_mean(p, s)
    return s.copy(), _inv_sqrt(p.cov) @ diff


def compatible_features(p: PolicyParams, S, A) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    A = np.asarray(A, dtype=float).reshape(S.shape[0], p.action_dim)
    return (A - policy_mean(p, S)) @ _inv_sqrt(p.cov).T


def feature_inner(p: PolicyParams, f1, f2) -> float:
    """``<nu(s,a), nu(s',a')>`` for two single-atom features."""
    (s1, u1), (s2, u2) = f1, f2
    k = float(p.kernel.scalar(s1, s2)[0, 0])
    return k * float(u1 @ p.kernel.output_cov @ u2)


@dataclass
class AdvantageCritic:
    """``w_A`` as kernel atoms (centers, coeffs in R^m) under the actor's OVK."""

    centers: np.ndarray
    coeffs: np.ndarray
    ridge: float = 1e-4
    dual: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zero(cls, state_dim: int, action_dim: int, ridge: float = 1e-4) -> "AdvantageCritic":
        return cls(np.zeros((0, state_dim)), np.zeros((0, action_dim)), ridge)

    def evaluate(self, p: PolicyParams, S, A) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        if self.centers.shape[0] == 0:
            return np.zeros(S.shape[0])
        U = compatible_features(p, S, A)
        Kx = p.kernel.scalar(S, self.centers)
        W = Kx @ self.coeffs  # (n, m)
        return np.einsum("na,ab,nb->n", W, p.kernel.output_cov, U)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "coeffs": self.coeffs.tolist(), "ridge": self.ridge}

    @classmethod
    def from_dict(cls, data: dict, state_dim: int, action_dim: int) -> "AdvantageCritic":
        C = np.asarray(data["centers"], dtype=float).reshape(-1, state_dim)
        W = np.asarray(data["coeffs"], dtype=float).reshape(-1, action_dim)
        return cls(C, W, data["ridge"])


def fit_advantage(ac: AdvantageCritic, p: PolicyParams, batch, compress: bool = True) -> AdvantageCritic:
    """Closed-form ridge fit of ``<w_A, nu(s_i, a_i)> ~ target_i``.

    ``batch`` is ``(S, A, targets)``. The solution lives in the span of the
    batch features; with ``compress`` it is projected onto the actor
    dictionary's centers (when that dictionary is nonempty).
    """
    S, A, y = batch
    S = np.atleast_2d(np.asarray(S, dtype=float))
    A = np.asarray(A, dtype=float).reshape(S.shape[0], p.action_dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = S.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    U = compatible_features(p, S, A)
    Kh = p.kernel.scalar(S, S) * (U @ p.kernel.output_cov @ U.T)
    Kh = 0.5 * (Kh + Kh.T)
    if not np.any(y) or (np.trace(Kh) <= 0 and ac.ridge == 0):
        beta = np.zeros(n)
    else:
        beta = _ridge_solve(Kh, ac.ridge, y)
    V = beta[:, None] * U  # atom coefficients at batch states
    out = AdvantageCritic(S.copy(), V, ac.ridge, beta)
    D = p.mean_dict
    if compress and len(D) > 0:
        Kds = p.kernel.scalar(D.centers, S)
        out = AdvantageCritic(D.centers.copy(), D.factor(p.kernel).solve(Kds @ V), ac.ridge, beta)
    return out


def _ridge_solve(K: np.ndarray, ridge: float, y: np.ndarray) -> np.ndarray:
    # a positive ridge already makes the system PD; jitter only as a fallback
    A = K + ridge * np.eye(K.shape[0])
    if ridge > 0:
        try:
            return sla.cho_solve(sla.cho_factor(A, lower=True, check_finite=False), y, check_finite=False)
        except np.linalg.LinAlgError:
            pass
    return factor_gram(A).solve(y)


def advantage_eval(ac: AdvantageCritic, p: PolicyParams, s, a):
    s = np.asarray(s, dtype=float)
    out = ac.evaluate(p, s, a)
    return float(out[0]) if s.ndim == 1 else out
