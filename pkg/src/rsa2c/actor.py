"""Gaussian policy whose mean lives in a vector-valued RKHS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dictionary import SparseDictionary
from .kernels import KernelSpec


@dataclass
class PolicyParams:
    mean_dict: SparseDictionary
    cov: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        _check_spd(self.cov)

    @classmethod
    def initial(cls, kernel: KernelSpec, cov, max_size: int,
                residual_threshold: float | None = None) -> "PolicyParams":
        d = SparseDictionary(kernel.state_dim, kernel.action_dim, max_size, residual_threshold)
        return cls(d, cov, kernel)

    @property
    def action_dim(self) -> int:
        return self.cov.shape[0]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.mean_dict.copy(), self.cov.copy(), self.kernel)

    def to_dict(self) -> dict:
        return {
            "mean_dict": self.mean_dict.to_dict(),
            "cov": self.cov.tolist(),
            "lengthscale": self.kernel.lengthscale,
            "mahalanobis_weights": self.kernel.mahalanobis_weights.tolist(),
            "output_cov": self.kernel.output_cov.tolist(),
            "eps0": self.kernel.eps0,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyParams":
        kernel = KernelSpec(data["lengthscale"], data["mahalanobis_weights"],
                            data["output_cov"], data["eps0"])
        return cls(SparseDictionary.from_dict(data["mean_dict"]), data["cov"], kernel)


def _check_spd(cov: np.ndarray) -> np.ndarray:
    if cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValueError("covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc


def policy_mean(p: PolicyParams, s) -> np.ndarray:
    """``h(s)``; a single state gives an action vector, a batch gives (n, m)."""
    s = np.asarray(s, dtype=float)
    out = p.mean_dict.evaluate(s, p.kernel)
    return out[0] if s.ndim == 1 else out


def sample_action(p: PolicyParams, s, rng: np.random.Generator) -> np.ndarray:
    L = _check_spd(p.cov)
    z = rng.standard_normal(p.action_dim)
    return policy_mean(p, s) + L @ z


def log_prob(p: PolicyParams, s, a) -> float:
    L = _check_spd(p.cov)
    diff = np.asarray(a, dtype=float).reshape(p.action_dim) - policy_mean(p, s)
    y = np.linalg.solve(L, diff)
    m = p.action_dim
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * m * np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * y @ y)


def score_atom(p: PolicyParams, s, a) -> tuple[np.ndarray, np.ndarray]:
    """RKHS gradient of ``log pi(a|s)`` w.r.t. the mean, as one kernel atom."""
    s = np.asarray(s, dtype=float)
    diff = np.asarray(a, dtype=float).reshape(p.action_dim) - policy_mean(p, s)
    return s.copy(), np.linalg.solve(p.cov, diff)


def actor_update(p: PolicyParams, batch, alpha: float) -> PolicyParams:
    """One functional policy-gradient ascent step from ``(s, a, advantage)`` samples.

    Each sample contributes the atom ``alpha/n * A * Sigma^{-1}(a - h(s))`` at
    ``s``; all scores use the mean as it was before the step. Mutates ``p``.
    """
    S, A, adv = _unpack_triples(batch)
    n = S.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(adv)):
        raise ValueError("non-finite advantages")
    H = p.mean_dict.evaluate(S, p.kernel)
    scores = np.linalg.solve(p.cov, (A - H).T).T
    coeffs = (alpha / n) * adv[:, None] * scores
    for s, c in zip(S, coeffs):
        p.mean_dict.insert_or_replace(s, c, p.kernel)
    return p


def anneal_covariance(epoch: int, total_epochs: int, cov_init, cov_final) -> np.ndarray:
    if not 0 <= epoch <= total_epochs:
        raise ValueError("epoch outside [0, total_epochs]")
    cov_init = np.atleast_2d(np.asarray(cov_init, dtype=float))
    cov_final = np.atleast_2d(np.asarray(cov_final, dtype=float))
    frac = epoch / total_epochs if total_epochs > 0 else 1.0
    return cov_init + frac * (cov_final - cov_init)


def _unpack_triples(batch):
    if isinstance(batch, tuple) and len(batch) == 3 and isinstance(batch[0], np.ndarray):
        S, A, adv = batch
    else:
        rows = list(batch)
        if not rows:
            return np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0)
        S = np.array([np.atleast_1d(r[0]) for r in rows], dtype=float)
        A = np.array([np.atleast_1d(r[1]) for r in rows], dtype=float)
        adv = np.array([float(r[2]) for r in rows])
    S = np.atleast_2d(np.asarray(S, dtype=float))
    A = np.asarray(A, dtype=float).reshape(S.shape[0], -1)
    return S, A, np.asarray(adv, dtype=float).reshape(-1)
