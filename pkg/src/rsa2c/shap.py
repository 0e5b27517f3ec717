"""RKHS-SHAP attribution of the value critic.

Coalition values use the product-kernel factorization of the RBF value
critic: the observed coordinates enter through their per-dimension kernel
factors, the missing ones through an empirical (conditional) mean embedding
over a buffer of visited states.

Conditional embeddings use a centered kernel-ridge estimator (ridge
regression with an intercept), so the weights over buffer points always sum to
one, a degenerate buffer imputes its single state exactly, and very large
ridge recovers the marginal embedding.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg as sla

from . import _accel
from .critics import ValueCritic

Mode = Literal["kme", "cme"]
MAX_EXACT_DIM = 15


class EmptyBufferError(RuntimeError):
    pass


class EmbeddingBuffer:
    """Fixed-capacity ring buffer of on-policy states."""

    def __init__(self, capacity: int, state_dim: int, lengthscale: float):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.state_dim = int(state_dim)
        self.lengthscale = float(lengthscale)
        self._data = np.zeros((self.capacity, self.state_dim))
        self._n = 0
        self._head = 0

    def __len__(self) -> int:
        return self._n

    @property
    def samples(self) -> np.ndarray:
        if self._n < self.capacity:
            return self._data[: self._n]
        return np.roll(self._data, -self._head, axis=0)

    def add(self, states) -> None:
        for s in np.atleast_2d(np.asarray(states, dtype=float)):
            self._data[self._head] = s
            self._head = (self._head + 1) % self.capacity
            self._n = min(self._n + 1, self.capacity)

    @classmethod
    def from_states(cls, states, lengthscale: float, capacity: int | None = None) -> "EmbeddingBuffer":
        states = np.atleast_2d(np.asarray(states, dtype=float))
        buf = cls(capacity or states.shape[0], states.shape[1], lengthscale)
        buf.add(states)
        return buf

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "lengthscale": self.lengthscale,
                "state_dim": self.state_dim, "samples": self.samples.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "EmbeddingBuffer":
        buf = cls(data["capacity"], data["state_dim"], data["lengthscale"])
        if data["samples"]:
            buf.add(data["samples"])
        return buf


@dataclass
class AttributionVector:
    phi: np.ndarray
    mode: str
    base_state: np.ndarray
    stderr: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"phi": self.phi.tolist(), "mode": self.mode, "state": self.base_state.tolist()}


def _mask(C, d: int) -> int:
    m = 0
    for i in C:
        i = int(i)
        if not 0 <= i < d:
            raise ValueError(f"coalition index {i} out of range for dimension {d}")
        m |= 1 << i
    return m


class CoalitionGame:
    """Memoized coalition values ``v_s(C)`` for one (critic, buffer, state).

    Coalitions are bitmasks over state coordinates.
    """

    def __init__(self, vc: ValueCritic, buf: EmbeddingBuffer, s, mode: Mode = "kme",
                 cme_ridge: float = 1e-2):
        if len(buf) == 0:
            raise EmptyBufferError("embedding buffer is empty")
        if mode not in ("kme", "cme"):
            raise ValueError(f"unknown imputation mode {mode!r}")
        if mode == "cme":
            if len(buf) < 2:
                raise ValueError("conditional embedding needs at least two buffer states")
            if not cme_ridge > 0:
                raise ValueError("cme_ridge must be positive")
        self.mode = mode
        self.cme_ridge = float(cme_ridge)
        self.s = np.asarray(s, dtype=float).reshape(-1)
        self.d = self.s.shape[0]
        l = vc.lengthscale
        X = buf.samples
        self.N = X.shape[0]
        C = vc.dict.centers
        self.eta = vc.weights.copy()
        self.Ks = _accel.dimwise_kernel(self.s[None, :], C, l)[0]  # (q, d)
        self.Kx = _accel.dimwise_kernel(X, C, l)  # (N, q, d)
        if mode == "cme":
            self.Gx = _accel.dimwise_kernel(X, X, l)  # (N, N, d)
            self.kxs = _accel.dimwise_kernel(X, self.s[None, :], l)[:, 0, :]  # (N, d)
        self._cache: dict[int, float] = {}

    @property
    def full(self) -> int:
        return (1 << self.d) - 1

    def _dims(self, mask: int) -> tuple[list[int], list[int]]:
        inside = [i for i in range(self.d) if mask >> i & 1]
        outside = [i for i in range(self.d) if not mask >> i & 1]
        return inside, outside

    def buffer_weights(self, mask: int) -> np.ndarray:
        """Weights over buffer states representing the (conditional) embedding."""
        N = self.N
        uniform = np.full(N, 1.0 / N)
        inside, _ = self._dims(mask)
        if self.mode == "kme" or not inside:
            return uniform
        G = np.prod(self.Gx[:, :, inside], axis=2)
        k = np.prod(self.kxs[:, inside], axis=1)
        Gc = G - G.mean(axis=0, keepdims=True)
        Gc = Gc - Gc.mean(axis=1, keepdims=True)
        kc = k - G.mean(axis=1)
        kc = kc - kc.mean()
        beta = sla.solve(Gc + N * self.cme_ridge * np.eye(N), kc, assume_a="sym")
        return uniform + (beta - beta.mean())

    def value(self, mask: int) -> float:
        if mask in self._cache:
            return self._cache[mask]
        if self.eta.size == 0:
            v = 0.0
        else:
            inside, outside = self._dims(mask)
            a = np.prod(self.Ks[:, inside], axis=1) if inside else np.ones(self.eta.size)
            if outside:
                B = np.prod(self.Kx[:, :, outside], axis=2)  # (N, q)
                imputed = self.buffer_weights(mask) @ B
            else:
                imputed = np.ones(self.eta.size)
            v = float(np.sum(self.eta * a * imputed))
        self._cache[mask] = v
        return v

    def __call__(self, C) -> float:
        return self.value(_mask(C, self.d))


def coalition_value_kme(vc: ValueCritic, buf: EmbeddingBuffer, s, C) -> float:
    return CoalitionGame(vc, buf, s, "kme")(C)


def coalition_value_cme(vc: ValueCritic, buf: EmbeddingBuffer, s, C, cme_ridge: float = 1e-2) -> float:
    return CoalitionGame(vc, buf, s, "cme", cme_ridge)(C)


def _shapley_weights(d: int) -> np.ndarray:
    return np.array([math.factorial(k) * math.factorial(d - k - 1) / math.factorial(d) for k in range(d)])


def shapley_exact(vc: ValueCritic, buf: EmbeddingBuffer, s, mode: Mode = "kme",
                  cme_ridge: float = 1e-2, game: CoalitionGame | None = None) -> AttributionVector:
    game = game or CoalitionGame(vc, buf, s, mode, cme_ridge)
    d = game.d
    if d > MAX_EXACT_DIM:
        raise ValueError(f"exact enumeration capped at d={MAX_EXACT_DIM}; use shapley_sampled")
    vals = np.array([game.value(m) for m in range(1 << d)])
    sizes = np.array([bin(m).count("1") for m in range(1 << d)])
    w = _shapley_weights(d)
    phi = np.zeros(d)
    for i in range(d):
        bit = 1 << i
        without = np.array([m for m in range(1 << d) if not m & bit])
        phi[i] = np.sum(w[sizes[without]] * (vals[without | bit] - vals[without]))
    return AttributionVector(phi, game.mode, game.s.copy())


def shapley_sampled(vc: ValueCritic, buf: EmbeddingBuffer, s, mode: Mode = "kme", n_perms: int = 256,
                    rng: np.random.Generator | None = None, cme_ridge: float = 1e-2,
                    game: CoalitionGame | None = None) -> AttributionVector:
    """Permutation-sampling estimate with an additive efficiency correction.

    When ``n_perms`` reaches ``d!`` every permutation is enumerated once.
    """
    if n_perms < 1:
        raise ValueError("n_perms must be >= 1")
    game = game or CoalitionGame(vc, buf, s, mode, cme_ridge)
    d = game.d
    if d <= 12 and n_perms >= math.factorial(d):
        perms = [np.array(p) for p in itertools.permutations(range(d))]
    else:
        rng = rng if rng is not None else np.random.default_rng()
        perms = [rng.permutation(d) for _ in range(n_perms)]
    contrib = np.zeros((len(perms), d))
    for r, perm in enumerate(perms):
        mask, prev = 0, game.value(0)
        for i in perm:
            mask |= 1 << int(i)
            cur = game.value(mask)
            contrib[r, i] = cur - prev
            prev = cur
    phi = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / np.sqrt(len(perms)) if len(perms) > 1 else np.full(d, np.inf)
    gap = game.value(game.full) - game.value(0) - phi.sum()
    phi = phi + gap / d
    return AttributionVector(phi, game.mode, game.s.copy(), se)


def shapley(vc: ValueCritic, buf: EmbeddingBuffer, s, mode: Mode = "kme", cme_ridge: float = 1e-2,
            n_perms: int = 256, rng: np.random.Generator | None = None) -> AttributionVector:
    d = np.asarray(s).reshape(-1).shape[0]
    if d <= MAX_EXACT_DIM:
        return shapley_exact(vc, buf, s, mode, cme_ridge)
    return shapley_sampled(vc, buf, s, mode, n_perms, rng, cme_ridge)


def gate_weights(phi, eps0: float, scale: float = 1.0) -> np.ndarray:
    """Mahalanobis weights from attributions: ``max(scale*|phi|/max|phi|, eps0)``."""
    if not eps0 > 0:
        raise ValueError("eps0 must be positive")
    if isinstance(phi, AttributionVector):
        phi = phi.phi
    mag = np.abs(np.asarray(phi, dtype=float))
    top = mag.max() if mag.size else 0.0
    if not top > 0:
        return np.full(mag.shape, float(eps0))
    return np.maximum(scale * mag / top, eps0)
