"""Built-in environments: pendulum swing-up and a discounted LQR problem.

Environments are stateless objects; the simulator state is an explicit
array so rollouts can be stepped for a whole batch in lockstep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class ConvergenceError(ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# pendulum

PENDULUM_G = 10.0
PENDULUM_M = 1.0
PENDULUM_L = 1.0
PENDULUM_DT = 0.05
MAX_SPEED = 8.0
MAX_TORQUE = 2.0


class PendulumState(NamedTuple):
    theta: float
    theta_dot: float


def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def pendulum_reward(theta, theta_dot, torque):
    return -(theta**2 + 0.1 * theta_dot**2 + 0.001 * torque**2)


def pendulum_dynamics(theta, theta_dot, torque):
    """Vectorized semi-implicit Euler step; returns (theta', theta_dot', reward)."""
    u = np.clip(torque, -MAX_TORQUE, MAX_TORQUE)
    reward = pendulum_reward(theta, theta_dot, u)
    acc = 3.0 * PENDULUM_G / (2.0 * PENDULUM_L) * np.sin(theta) + 3.0 / (PENDULUM_M * PENDULUM_L**2) * u
    new_dot = np.clip(theta_dot + acc * PENDULUM_DT, -MAX_SPEED, MAX_SPEED)
    new_theta = wrap_angle(theta + new_dot * PENDULUM_DT)
    return new_theta, new_dot, reward


def pendulum_step(st: PendulumState, torque: float) -> tuple[PendulumState, float]:
    th, thd, r = pendulum_dynamics(float(st.theta), float(st.theta_dot), float(np.ravel(torque)[0]))
    return PendulumState(float(th), float(thd)), float(r)


def pendulum_observation(st) -> np.ndarray:
    st = np.asarray(st, dtype=float)
    return np.stack([np.cos(st[..., 0]), np.sin(st[..., 0]), st[..., 1]], axis=-1)


class Pendulum:
    name = "pendulum"
    state_dim = 3  # observation (cos, sin, theta_dot)
    action_dim = 1
    horizon = 200

    def reset(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = () if n is None else (n,)
        theta = wrap_angle(rng.uniform(-np.pi, np.pi, size=shape))
        theta_dot = rng.uniform(-1.0, 1.0, size=shape)
        return np.stack([theta, theta_dot], axis=-1)

    def observe(self, x) -> np.ndarray:
        return pendulum_observation(x)

    def step(self, x, a) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        u = np.asarray(a, dtype=float)[..., 0]
        th, thd, r = pendulum_dynamics(x[..., 0], x[..., 1], u)
        return np.stack([th, thd], axis=-1), r


# ---------------------------------------------------------------------------
# LQR


@dataclass
class LqrSystem:
    A: np.ndarray
    B: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    gamma: float
    dt: float = 0.02
    init_std: float = 0.05
    P3: np.ndarray | None = field(default=None, repr=False)

    name = "lqr"
    horizon = 400

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float).reshape(self.A.shape[0], -1)
        self.P1 = np.atleast_2d(np.asarray(self.P1, dtype=float))
        self.P2 = np.atleast_2d(np.asarray(self.P2, dtype=float))
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if np.linalg.eigvalsh(0.5 * (self.P1 + self.P1.T)).min() < -1e-12:
            raise ValueError("P1 must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (self.P2 + self.P2.T)).min() <= 0:
            raise ValueError("P2 must be positive definite")

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def action_dim(self) -> int:
        return self.B.shape[1]

    @property
    def init_cov(self) -> np.ndarray:
        return self.init_std**2 * np.eye(self.state_dim)

    def solution(self) -> np.ndarray:
        if self.P3 is None:
            self.P3 = riccati_solve(self)
        return self.P3

    def gain(self) -> np.ndarray:
        """Optimal feedback ``K*`` with ``a = -K* s``."""
        P = self.solution()
        g = self.gamma
        return g * np.linalg.solve(self.P2 + g * self.B.T @ P @ self.B, self.B.T @ P @ self.A)

    def reset(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        shape = (self.state_dim,) if n is None else (n, self.state_dim)
        return self.init_std * rng.standard_normal(shape)

    def observe(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def cost(self, s, a) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.einsum("...i,ij,...j->...", s, self.P1, s) + np.einsum("...i,ij,...j->...", a, self.P2, a)

    def step(self, x, a) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float).reshape(*x.shape[:-1], self.action_dim)
        return x @ self.A.T + a @ self.B.T, -self.cost(x, a)


def cartpole_matrices(dt: float = 0.02, cart_mass: float = 1.0, pole_mass: float = 0.1,
                      half_length: float = 0.5, g: float = 9.8) -> tuple[np.ndarray, np.ndarray]:
    """Forward-Euler discretization of the cart-pole linearized at the upright.

    State ordering is (x, x_dot, theta, theta_dot); the input is the cart force.
    """
    mt = cart_mass + pole_mass
    den = half_length * (4.0 / 3.0 - pole_mass / mt)
    Ac = np.zeros((4, 4))
    Ac[0, 1] = 1.0
    Ac[2, 3] = 1.0
    Ac[3, 2] = g / den
    Ac[1, 2] = -pole_mass * half_length * g / (mt * den)
    Bc = np.zeros((4, 1))
    Bc[3, 0] = -1.0 / (mt * den)
    Bc[1, 0] = (1.0 + pole_mass * half_length / (mt * den)) / mt
    return np.eye(4) + dt * Ac, dt * Bc


def cartpole_lqr(gamma: float = 0.99, dt: float = 0.02, init_std: float = 0.05) -> LqrSystem:
    A, B = cartpole_matrices(dt)
    return LqrSystem(A, B, np.diag([1.0, 0.1, 10.0, 0.1]), np.array([[0.01]]), gamma, dt, init_std)


def riccati_operator(sys: LqrSystem, P: np.ndarray) -> np.ndarray:
    A, B, g = sys.A, sys.B, sys.gamma
    BtPA = B.T @ P @ A
    out = sys.P1 + g * A.T @ P @ A - g * g * BtPA.T @ np.linalg.solve(sys.P2 + g * B.T @ P @ B, BtPA)
    return 0.5 * (out + out.T)


def riccati_iterates(sys: LqrSystem, tol: float = 1e-12, max_iter: int = 200_000):
    """Yield the fixed-point iterates starting from ``P = 0``."""
    P = np.zeros_like(sys.P1)
    yield P
    for _ in range(max_iter):
        P_next = riccati_operator(sys, P)
        yield P_next
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P_next))):
            return
        P = P_next
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def riccati_solve(sys: LqrSystem, tol: float = 1e-13, max_iter: int = 200_000) -> np.ndarray:
    """Discounted DARE solution by value iteration (relative sup-norm stopping rule)."""
    for P in riccati_iterates(sys, tol, max_iter):
        pass
    return P


def dare_residual(sys: LqrSystem, P: np.ndarray) -> float:
    return float(np.max(np.abs(riccati_operator(sys, P) - P)))


def lqr_step(sys: LqrSystem, s, a) -> tuple[np.ndarray, float]:
    s = np.asarray(s, dtype=float).reshape(sys.state_dim)
    a = np.asarray(a, dtype=float).reshape(sys.action_dim)
    return sys.A @ s + sys.B @ a, float(sys.cost(s, a))


def optimal_return(sys: LqrSystem, s) -> float:
    """Optimal discounted cost ``s^T P3 s``."""
    s = np.asarray(s, dtype=float)
    return float(s @ sys.solution() @ s)


class GapEstimate(NamedTuple):
    gap: float
    stderr: float
    tail_bound: float

    @property
    def tolerance(self) -> float:
        return 2.0 * (self.stderr + self.tail_bound)


def discounted_cost(sys: LqrSystem, policy: Callable[[np.ndarray], np.ndarray], s0: np.ndarray,
                    horizon: int) -> tuple[np.ndarray, float]:
    """Truncated discounted cost of a batch of rollouts and the truncation bound."""
    s = np.array(s0, dtype=float)
    total = np.zeros(s.shape[0])
    disc = 1.0
    max_cost = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(horizon):
            a = np.asarray(policy(s), dtype=float).reshape(s.shape[0], sys.action_dim)
            c = sys.cost(s, a)
            total += disc * c
            max_cost = max(max_cost, float(np.max(c)))
            s = s @ sys.A.T + a @ sys.B.T
            disc *= sys.gamma
            if not np.all(np.isfinite(total)):
                return np.full(s.shape[0], np.inf), np.inf
        # remaining tail: at most gamma^H * max observed per-step cost / (1 - gamma)
        tail = disc * max_cost / (1.0 - sys.gamma)
    return total, tail


def optimality_gap(sys: LqrSystem, policy, n_rollouts: int = 64, horizon: int = 2000,
                   rng: np.random.Generator | None = None, s0=None) -> GapEstimate:
    """Monte Carlo ``E[J^pi(s0)] - E[s0^T P3 s0]`` with paired initial states."""
    if s0 is None:
        rng = rng if rng is not None else np.random.default_rng()
        s0 = sys.reset(rng, n_rollouts)
    s0 = np.atleast_2d(np.asarray(s0, dtype=float))
    J, tail = discounted_cost(sys, policy, s0, horizon)
    if not np.all(np.isfinite(J)):
        return GapEstimate(np.inf, np.inf, np.inf)
    diff = J - np.einsum("ni,ij,nj->n", s0, sys.solution(), s0)
    se = float(diff.std(ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
    return GapEstimate(float(diff.mean()), se, float(tail))


def linear_policy(K) -> Callable[[np.ndarray], np.ndarray]:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return lambda S: -np.atleast_2d(S) @ K.T


# ---------------------------------------------------------------------------
# wrappers


class RestartOutcome(NamedTuple):
    next_state: np.ndarray
    reward: float
    restarted: bool
    successor: np.ndarray  # the unrestarted successor, used for bootstrapping


def restart_step(env, x, a, gamma: float, rng: np.random.Generator) -> RestartOutcome:
    """One transition of the restart kernel ``(1-gamma) rho0 + gamma T``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    succ, r = env.step(x, a)
    if rng.random() >= gamma:
        return RestartOutcome(env.reset(rng), float(r), True, succ)
    return RestartOutcome(succ, float(r), False, succ)


def perturb_observation(s, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    if noise_var < 0:
        raise ValueError("noise_var must be nonnegative")
    s = np.asarray(s, dtype=float)
    if noise_var == 0:
        return s.copy()
    return s + np.sqrt(noise_var) * rng.standard_normal(s.shape)


def make_env(name: str, gamma: float = 0.99):
    if name == "pendulum":
        return Pendulum()
    if name == "lqr":
        return cartpole_lqr(gamma)
    raise ValueError(f"unknown environment {name!r}")
