"""Hot kernel loops with a numba path and a pure-numpy fallback.

The compiled path is used when numba is importable and the environment
variable ``RSA2C_DISABLE_NUMBA`` is unset (or ``0``). Both paths compute the
same quantities; ``tests/test_accel.py`` checks them against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba
except ImportError:  # pragma: no cover
    numba = None


def _flag_disabled() -> bool:
    return os.environ.get("RSA2C_DISABLE_NUMBA", "0").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = numba is not None and not _flag_disabled()


# ---------------------------------------------------------------------------
# numpy reference implementations

def weighted_sqdist_numpy(X, Y, w):
    """Half weighted squared distances ``0.5 * sum_i w_i (x_i - y_i)^2``."""
    diff = X[:, None, :] - Y[None, :, :]
    return 0.5 * np.einsum("abi,abi,i->ab", diff, diff, w)


def cross_kernel_numpy(X, Y, w):
    return np.exp(-weighted_sqdist_numpy(X, Y, w))


def expansion_numpy(S, centers, coeffs, w):
    if centers.shape[0] == 0:
        return np.zeros((S.shape[0], coeffs.shape[1]))
    return cross_kernel_numpy(S, centers, w) @ coeffs


def dimwise_kernel_numpy(X, Y, inv_two_l2):
    """Per-coordinate RBF factors, shape (len(X), len(Y), d)."""
    diff = X[:, None, :] - Y[None, :, :]
    return np.exp(-inv_two_l2 * diff * diff)


# ---------------------------------------------------------------------------
# numba implementations

if numba is not None:

    @numba.njit(cache=True, fastmath=False)
    def _cross_kernel_nb(X, Y, w):
        n, d = X.shape
        q = Y.shape[0]
        out = np.empty((n, q))
        for a in range(n):
            for b in range(q):
                acc = 0.0
                for i in range(d):
                    t = X[a, i] - Y[b, i]
                    acc += w[i] * t * t
                out[a, b] = np.exp(-0.5 * acc)
        return out

    @numba.njit(cache=True, fastmath=False)
    def _expansion_nb(S, centers, coeffs, w):
        n, d = S.shape
        q, m = coeffs.shape
        out = np.zeros((n, m))
        for a in range(n):
            for b in range(q):
                acc = 0.0
                for i in range(d):
                    t = S[a, i] - centers[b, i]
                    acc += w[i] * t * t
                k = np.exp(-0.5 * acc)
                for c in range(m):
                    out[a, c] += k * coeffs[b, c]
        return out

    @numba.njit(cache=True, fastmath=False)
    def _dimwise_kernel_nb(X, Y, inv_two_l2):
        n, d = X.shape
        q = Y.shape[0]
        out = np.empty((n, q, d))
        for a in range(n):
            for b in range(q):
                for i in range(d):
                    t = X[a, i] - Y[b, i]
                    out[a, b, i] = np.exp(-inv_two_l2 * t * t)
        return out


def _as2d(A):
    return np.ascontiguousarray(A, dtype=np.float64)


def cross_kernel(X, Y, w, *, compiled: bool | None = None):
    """Matrix ``exp(-0.5 (x-y)^T diag(w) (x-y))`` for all row pairs."""
    X, Y, w = _as2d(X), _as2d(Y), _as2d(w)
    if compiled is None:
        compiled = USE_NUMBA
    if compiled and numba is not None:
        return _cross_kernel_nb(X, Y, w)
    return cross_kernel_numpy(X, Y, w)


def expansion(S, centers, coeffs, w, *, compiled: bool | None = None):
    """Evaluate ``sum_j kappa(s, c_j) coeffs_j`` at every row of ``S``."""
    S, centers, coeffs, w = _as2d(S), _as2d(centers), _as2d(coeffs), _as2d(w)
    if compiled is None:
        compiled = USE_NUMBA
    if compiled and numba is not None:
        return _expansion_nb(S, centers, coeffs, w)
    return expansion_numpy(S, centers, coeffs, w)


def dimwise_kernel(X, Y, lengthscale: float, *, compiled: bool | None = None):
    X, Y = _as2d(X), _as2d(Y)
    inv = 1.0 / (2.0 * lengthscale * lengthscale)
    if compiled is None:
        compiled = USE_NUMBA
    if compiled and numba is not None:
        return _dimwise_kernel_nb(X, Y, inv)
    return dimwise_kernel_numpy(X, Y, inv)
