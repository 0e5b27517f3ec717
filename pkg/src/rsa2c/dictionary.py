"""Online sparse kernel dictionary maintained by approximate linear dependence.

The same structure backs the actor/advantage expansion (coefficients in R^m
against the operator-valued kernel) and the value critic (scalar
coefficients against a plain RBF).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _accel
from .kernels import GramFactor, KernelSpec, factor_gram

DUPLICATE_TOL = 1e-9
RESIDUAL_SLACK = 1e-10


class InsertResult(NamedTuple):
    action: str  # "appended" | "replaced" | "merged"
    index: int | None


class SparseDictionary:
    """Ordered kernel atoms ``(center, coeff, hist_error)`` with a size cap.

    Mutating methods assume a single writer. The Cholesky factor of the scalar
    Gram is cached per (center set, Mahalanobis weights) and rebuilt lazily.
    """

    def __init__(self, state_dim: int, coeff_dim: int, max_size: int,
                 residual_threshold: float | None = None):
        if max_size < 1:
            raise ValueError("max_size must be >= 1")
        self.state_dim = int(state_dim)
        self.coeff_dim = int(coeff_dim)
        self.max_size = int(max_size)
        self.residual_threshold = residual_threshold
        self._centers = np.zeros((self.max_size, self.state_dim))
        self._coeffs = np.zeros((self.max_size, self.coeff_dim))
        self._hist = np.zeros(self.max_size)
        self._q = 0
        self._version = 0
        self._factor: GramFactor | None = None
        self._factor_key = None

    # -- views ---------------------------------------------------------------
    def __len__(self) -> int:
        return self._q

    @property
    def centers(self) -> np.ndarray:
        return self._centers[: self._q]

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs[: self._q]

    @property
    def hist_error(self) -> np.ndarray:
        return self._hist[: self._q]

    @property
    def is_full(self) -> bool:
        return self._q >= self.max_size

    def copy(self) -> "SparseDictionary":
        out = SparseDictionary(self.state_dim, self.coeff_dim, self.max_size, self.residual_threshold)
        out._centers[:] = self._centers
        out._coeffs[:] = self._coeffs
        out._hist[:] = self._hist
        out._q = self._q
        return out

    # -- kernel algebra --------------------------------------------------------
    def gram(self, spec: KernelSpec) -> np.ndarray:
        C = self.centers
        return spec.scalar(C, C)

    def factor(self, spec: KernelSpec) -> GramFactor:
        key = (self._version, spec.mahalanobis_weights.tobytes())
        if self._factor is None or self._factor_key != key:
            self._factor = factor_gram(self.gram(spec))
            self._factor_key = key
        return self._factor

    def _touch(self):
        self._version += 1
        self._factor = None

    def evaluate(self, S, spec: KernelSpec) -> np.ndarray:
        """Kernel expansion at a batch of states, shape (n, coeff_dim)."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        out = _accel.expansion(S, self.centers, self.coeffs, spec.mahalanobis_weights)
        Sk = _output_cov_for(self, spec)
        return out if _is_identity(Sk) else out @ Sk.T

    def rkhs_norm_sq(self, spec: KernelSpec) -> float:
        C = self.coeffs
        G = self.gram(spec)
        S = _output_cov_for(self, spec)
        return float(np.einsum("ij,ia,ab,jb->", G, C, S, C))

    # -- mutation ---------------------------------------------------------------
    def threshold(self, spec: KernelSpec) -> float:
        if self.residual_threshold is not None:
            return float(self.residual_threshold)
        S = _output_cov_for(self, spec)
        norms = np.sqrt(np.maximum(np.einsum("ia,ab,ib->i", self.coeffs, S, self.coeffs), 0.0))
        return 1e-3 * float(np.median(norms)) if norms.size else 0.0

    def _set(self, j, center, coeff, hist=0.0):
        self._centers[j] = center
        self._coeffs[j] = coeff
        self._hist[j] = hist

    def nearest(self, center) -> tuple[int, float]:
        if self._q == 0:
            return -1, np.inf
        d = np.linalg.norm(self.centers - center, axis=1)
        j = int(np.argmin(d))
        return j, float(d[j])

    def insert_or_replace(self, center, coeff, spec: KernelSpec) -> InsertResult:
        center = np.asarray(center, dtype=float).reshape(self.state_dim)
        coeff = np.asarray(coeff, dtype=float).reshape(self.coeff_dim)
        if not np.all(np.isfinite(coeff)):
            raise ValueError("non-finite coefficient")
        j, dist = self.nearest(center)
        if dist <= DUPLICATE_TOL:
            self._coeffs[j] += coeff
            return InsertResult("merged", j)
        if not self.is_full:
            q = self._q
            self._set(q, center, coeff)
            self._q += 1
            self._touch()
            return InsertResult("appended", q)

        proj, residual = ald_project(self, center, coeff, spec)
        self._accrue(proj, residual)
        if residual > self.threshold(spec):
            jstar = int(np.argmax(self.hist_error))
            old_center = self._centers[jstar].copy()
            old_coeff = self._coeffs[jstar].copy()
            self._set(jstar, center, coeff)
            self._touch()
            back, res_back = ald_project(self, old_center, old_coeff, spec)
            self._coeffs[: self._q] += back
            self._accrue(back, res_back)
            return InsertResult("replaced", jstar)
        self._coeffs[: self._q] += proj
        return InsertResult("merged", None)

    def _accrue(self, proj, residual):
        contrib = np.linalg.norm(proj, axis=1) * residual
        np.maximum(self._hist[: self._q], contrib, out=self._hist[: self._q])

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "coeff_dim": self.coeff_dim,
            "max_size": self.max_size,
            "residual_threshold": self.residual_threshold,
            "centers": self.centers.tolist(),
            "coeffs": self.coeffs.tolist(),
            "hist_error": self.hist_error.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SparseDictionary":
        out = cls(data["state_dim"], data["coeff_dim"], data["max_size"], data.get("residual_threshold"))
        C = np.asarray(data["centers"], dtype=float).reshape(-1, out.state_dim)
        q = C.shape[0]
        out._centers[:q] = C
        out._coeffs[:q] = np.asarray(data["coeffs"], dtype=float).reshape(q, out.coeff_dim)
        out._hist[:q] = np.asarray(data["hist_error"], dtype=float)
        out._q = q
        return out


def _is_identity(S) -> bool:
    return S.shape[0] == S.shape[1] and np.array_equal(S, np.eye(S.shape[0]))


def _output_cov_for(d: SparseDictionary, spec: KernelSpec) -> np.ndarray:
    # Scalar-coefficient dictionaries (value critic) carry no output covariance.
    if spec.action_dim == d.coeff_dim:
        return spec.output_cov
    return np.eye(d.coeff_dim)


def ald_project(d: SparseDictionary, center, coeff, spec: KernelSpec) -> tuple[np.ndarray, float]:
    """Project the atom ``K(., center) coeff`` onto the span of the dictionary.

    Returns the optimal dictionary coefficients (q x m) and the RKHS-norm of the
    projection residual.
    """
    if len(d) == 0:
        raise ValueError("cannot project onto an empty dictionary")
    center = np.asarray(center, dtype=float).reshape(1, d.state_dim)
    coeff = np.asarray(coeff, dtype=float).reshape(d.coeff_dim)
    C = d.centers
    k = spec.scalar(C, center)[:, 0]
    kss = 1.0  # kappa(s, s) for every Mahalanobis RBF
    fac = d.factor(spec)
    b = fac.solve(k)
    # (G + jitter I) b = k, so b^T G b = b^T k - jitter |b|^2
    bGb = float(b @ k) - fac.jitter * float(b @ b)
    S = _output_cov_for(d, spec)
    cSc = float(coeff @ S @ coeff)
    res2 = (bGb - 2.0 * float(k @ b) + kss) * cSc
    if res2 < -RESIDUAL_SLACK:
        res2 = 0.0
    return np.outer(b, coeff), float(np.sqrt(max(res2, 0.0)))


def insert_or_replace(d: SparseDictionary, center, coeff, spec: KernelSpec) -> InsertResult:
    return d.insert_or_replace(center, coeff, spec)


def evaluate_expansion(d: SparseDictionary, s, spec: KernelSpec) -> np.ndarray:
    """Expansion at a single state (vector of length ``coeff_dim``) or a batch."""
    s = np.asarray(s, dtype=float)
    out = d.evaluate(s, spec)
    return out[0] if s.ndim == 1 else out
