"""Two-timescale actor-critic training loop with attribution-gated kernels."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import shap as shap_mod
from .actor import PolicyParams, actor_update, anneal_covariance, policy_mean, sample_action
from .config import RunConfig
from .critics import AdvantageCritic, ValueCritic, fit_advantage, td_step
from .data import Batch
from .envs import LqrSystem, make_env, optimality_gap, perturb_observation, restart_step
from .kernels import KernelSpec

STAGES = ("collect", "shap", "critic", "advantage", "actor", "anneal", "evaluate", "gap")


class StageError(RuntimeError):
    """Numeric failure inside one stage of an epoch."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def stepsize(t: int, base: float, exponent: float) -> float:
    """Polynomially decaying stepsize ``base * (t + 1) ** -exponent``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return base * (t + 1.0) ** (-exponent)


@dataclass
class EpochRecord:
    epoch: int
    train_return: float
    steps: int
    eval_mean: float
    eval_std: float
    actor_size: int
    critic_size: int
    phi: tuple[float, ...] | None = None
    anchor: tuple[float, ...] | None = None  # state the attribution was computed at
    gap: float | None = None
    gap_stderr: float | None = None
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class TrainerState:
    epoch: int
    policy: PolicyParams
    critic: ValueCritic
    advantage: AdvantageCritic
    weights: np.ndarray
    buffer: shap_mod.EmbeddingBuffer | None
    env: object
    rollout_rng: np.random.Generator
    eval_rng: np.random.Generator
    shap_rng: np.random.Generator
    gap_states: np.ndarray | None = None

    def checkpoint(self, cfg: RunConfig) -> dict:
        return {
            "epoch": self.epoch,
            "config": cfg.to_dict(),
            "policy": self.policy.to_dict(),
            "critic": self.critic.to_dict(),
            "advantage": self.advantage.to_dict(),
            "weights": self.weights.tolist(),
            "buffer": None if self.buffer is None else self.buffer.to_dict(),
            "rng": {
                "rollout": self.rollout_rng.bit_generator.state,
                "eval": self.eval_rng.bit_generator.state,
                "shap": self.shap_rng.bit_generator.state,
            },
        }


def _generator(state: dict) -> np.random.Generator:
    bg = getattr(np.random, state["bit_generator"])()
    bg.state = state
    return np.random.Generator(bg)


def init_state(cfg: RunConfig) -> TrainerState:
    cfg.validate()
    env = make_env(cfg.env, cfg.gamma)
    roll, ev, sh, gp = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4))
    l = cfg.lengthscale
    kernel = KernelSpec.rbf(env.state_dim, l, env.action_dim, eps0=cfg.kernel.eps0)
    cov = cfg.actor.cov_init * np.eye(env.action_dim)
    policy = PolicyParams.initial(kernel, cov, cfg.actor.dict_size, cfg.kernel.residual_threshold)
    critic = ValueCritic.create(env.state_dim, l, cfg.critic.dict_size, cfg.critic.ridge,
                                cfg.kernel.residual_threshold)
    adv = AdvantageCritic.zero(env.state_dim, env.action_dim, cfg.critic.advantage_ridge)
    buf = None if cfg.shap.mode == "off" else shap_mod.EmbeddingBuffer(cfg.shap.buffer, env.state_dim, l)
    gap_states = env.reset(gp, cfg.gap.rollouts) if isinstance(env, LqrSystem) else None
    return TrainerState(0, policy, critic, adv, kernel.mahalanobis_weights.copy(), buf, env,
                        roll, ev, sh, gap_states)


def restore_state(ckpt: dict) -> tuple[TrainerState, RunConfig]:
    cfg = RunConfig.from_dict(ckpt["config"])
    st = init_state(cfg)
    st.epoch = ckpt["epoch"]
    st.policy = PolicyParams.from_dict(ckpt["policy"])
    st.critic = ValueCritic.from_dict(ckpt["critic"])
    st.advantage = AdvantageCritic.from_dict(ckpt["advantage"], st.env.state_dim, st.env.action_dim)
    st.weights = np.asarray(ckpt["weights"], dtype=float)
    if ckpt.get("buffer") is not None:
        st.buffer = shap_mod.EmbeddingBuffer.from_dict(ckpt["buffer"])
    st.rollout_rng = _generator(ckpt["rng"]["rollout"])
    st.eval_rng = _generator(ckpt["rng"]["eval"])
    st.shap_rng = _generator(ckpt["rng"]["shap"])
    return st, cfg


def _horizon(cfg: RunConfig, env) -> int:
    return cfg.horizon if cfg.horizon is not None else env.horizon


def collect_rollout(st: TrainerState, cfg: RunConfig, rng: np.random.Generator) -> Batch:
    """One episode under the restart kernel, capped at the env horizon.

    The episode ends at the first restart; each stored transition keeps the
    true successor for bootstrapping.
    """
    env = st.env
    x = env.reset(rng)
    obs = perturb_observation(env.observe(x), cfg.noise_var, rng)
    S, A, R, S2 = [], [], [], []
    restarted = []
    for _ in range(_horizon(cfg, env)):
        a = sample_action(st.policy, obs, rng)
        out = restart_step(env, x, a, cfg.gamma, rng)
        nxt = perturb_observation(env.observe(out.successor), cfg.noise_var, rng)
        if not (np.all(np.isfinite(nxt)) and math.isfinite(out.reward)):
            raise FloatingPointError("non-finite state or reward during rollout")
        S.append(obs)
        A.append(a)
        R.append(out.reward)
        S2.append(nxt)
        restarted.append(out.restarted)
        if out.restarted:
            break
        x, obs = out.next_state, nxt
    return Batch(np.array(S), np.array(A), np.array(R), np.array(S2), np.array(restarted))


def evaluate(policy: PolicyParams, env, n_episodes: int, rng: np.random.Generator,
             horizon: int | None = None, noise_var: float = 0.0, initial_states=None) -> tuple[float, float]:
    """Undiscounted return of the policy mean over ``n_episodes`` lockstep episodes."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    horizon = env.horizon if horizon is None else horizon
    X = env.reset(rng, n_episodes) if initial_states is None else np.array(initial_states, dtype=float)
    X = X.reshape(n_episodes, -1)
    ret = np.zeros(n_episodes)
    for _ in range(horizon):
        O = perturb_observation(env.observe(X), noise_var, rng)
        X, r = env.step(X, policy_mean(policy, O))
        ret += r
    return float(ret.mean()), float(ret.std())


def _stage(name: str, fn: Callable, *args):
    try:
        return fn(*args)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def _attribute(st: TrainerState, cfg: RunConfig, batch: Batch):
    st.buffer.add(batch.states)
    if len(st.critic.dict) == 0:
        return None, None
    att = shap_mod.shapley(st.critic, st.buffer, batch.states[0], cfg.shap.mode, cfg.shap.cme_ridge,
                           cfg.shap.n_perms, st.shap_rng)
    if not np.all(np.isfinite(att.phi)):
        raise FloatingPointError("non-finite attribution")
    if not np.any(att.phi):
        return att.phi, None
    scale = cfg.shap.scale if cfg.shap.scale is not None else 1.0 / cfg.lengthscale**2
    return att.phi, shap_mod.gate_weights(att.phi, cfg.kernel.eps0, scale)


def _advantages(st: TrainerState, cfg: RunConfig, batch: Batch) -> np.ndarray:
    vc = st.critic
    delta = batch.rewards + cfg.gamma * vc(batch.next_states) - vc(batch.states)
    if cfg.critic.advantage == "td":
        return delta
    st.advantage = fit_advantage(st.advantage, st.policy, (batch.states, batch.actions, delta))
    adv = st.advantage.evaluate(st.policy, batch.states, batch.actions)
    if not np.all(np.isfinite(adv)):
        raise FloatingPointError("non-finite advantage estimates")
    return adv


def run_epoch(st: TrainerState, cfg: RunConfig, rng: np.random.Generator | None = None) -> tuple[TrainerState, EpochRecord]:
    """Collect, attribute, update critics and actor, anneal, evaluate. Mutates ``st``."""
    t0 = time.perf_counter()
    t = st.epoch
    rng = st.rollout_rng if rng is None else rng
    batch = _stage("collect", collect_rollout, st, cfg, rng)

    phi, new_w = (None, None)
    if cfg.shap.mode != "off":
        phi, new_w = _stage("shap", _attribute, st, cfg, batch)

    a_v = stepsize(t, cfg.critic.base, cfg.critic.exponent)
    _stage("critic", td_step, st.critic, batch, cfg.gamma, a_v)
    adv = _stage("advantage", _advantages, st, cfg, batch)
    a_h = stepsize(t, cfg.actor.base, cfg.actor.exponent)
    _stage("actor", actor_update, st.policy, (batch.states, batch.actions, adv), a_h)

    def anneal():
        m = st.env.action_dim
        st.policy.cov = anneal_covariance(t + 1, cfg.epochs, cfg.actor.cov_init * np.eye(m),
                                          cfg.actor.cov_final * np.eye(m))
        if new_w is not None:
            st.weights = new_w
            st.policy.kernel = st.policy.kernel.with_weights(new_w)

    _stage("anneal", anneal)
    st.epoch = t + 1

    ev_mean, ev_std = _stage("evaluate", evaluate, st.policy, st.env, cfg.eval_episodes, st.eval_rng,
                             _horizon(cfg, st.env), cfg.noise_var)
    gap = gap_se = None
    if isinstance(st.env, LqrSystem) and (t % cfg.gap.every == 0 or st.epoch == cfg.epochs):
        est = _stage("gap", policy_gap, st, cfg)
        gap, gap_se = est.gap, est.stderr
    rec = EpochRecord(
        epoch=st.epoch,
        train_return=float(batch.rewards.sum()),
        steps=len(batch),
        eval_mean=ev_mean,
        eval_std=ev_std,
        actor_size=len(st.policy.mean_dict),
        critic_size=len(st.critic.dict),
        phi=None if phi is None else tuple(float(v) for v in phi),
        anchor=None if phi is None else tuple(float(v) for v in batch.states[0]),
        gap=gap,
        gap_stderr=gap_se,
        wall_time=time.perf_counter() - t0,
    )
    return st, rec


def policy_gap(st: TrainerState, cfg: RunConfig):
    p = st.policy
    return optimality_gap(st.env, lambda S: policy_mean(p, S), cfg.gap.rollouts, cfg.gap.horizon,
                          s0=st.gap_states)


def run_experiment(cfg: RunConfig, on_record: Callable[[EpochRecord], None] | None = None,
                   state: TrainerState | None = None) -> tuple[list[EpochRecord], dict]:
    st = state or init_state(cfg)
    records = []
    while st.epoch < cfg.epochs:
        st, rec = run_epoch(st, cfg)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    return records, st.checkpoint(cfg)


# ---------------------------------------------------------------------------
# aggregation


def final_return(records: list[EpochRecord], last: int = 100) -> float:
    if not records:
        raise ValueError("no records")
    return float(np.mean([r.eval_mean for r in records[-last:]]))


@dataclass
class SeedSummary:
    mean: float
    std: float
    n_seeds: int
    per_seed: tuple[float, ...]


def summarize_seeds(runs: Iterable[list[EpochRecord]], last: int = 100) -> SeedSummary:
    finals = np.array([final_return(r, last) for r in runs])
    std = float(finals.std(ddof=1)) if finals.size > 1 else 0.0
    return SeedSummary(float(finals.mean()), std, int(finals.size), tuple(float(v) for v in finals))


def aggregate_curves(runs: list[list[EpochRecord]], key: str = "eval_mean") -> tuple[np.ndarray, np.ndarray]:
    """Per-epoch mean and std (ddof=0) across seeds."""
    lengths = {len(r) for r in runs}
    if len(lengths) != 1:
        raise ValueError("runs have different lengths")
    M = np.array([[getattr(rec, key) for rec in r] for r in runs], dtype=float)
    return M.mean(axis=0), M.std(axis=0)
