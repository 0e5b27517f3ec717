import math
import types

import numpy as np
import pytest

from rsa2c import trainer
from rsa2c.actor import PolicyParams
from rsa2c.config import RunConfig, default_config
from rsa2c.critics import ValueCritic, td_step
from rsa2c.data import Batch
from rsa2c.envs import Pendulum
from rsa2c.kernels import KernelSpec
from rsa2c.trainer import (StageError, aggregate_curves, evaluate, final_return, init_state, restore_state,
                           run_epoch, run_experiment, stepsize, summarize_seeds)


def small(**kw):
    base = {"epochs": 6, "horizon": 20, "eval_episodes": 2, "shap.n_perms": 8, "shap.buffer": 16}
    base.update(kw)
    return RunConfig().with_overrides(base).validate()


def test_stepsize_examples():
    assert stepsize(0, 0.3, 0.75) == 0.3
    assert stepsize(15, 1.0, 0.75) == pytest.approx(1 / 8)
    with pytest.raises(ValueError):
        stepsize(-1, 1.0, 0.5)


def test_timescale_ratio_decreasing():
    ratio = np.array([stepsize(t, 1.0, 0.75) / stepsize(t, 1.0, 0.5) for t in range(1, 10_001)])
    assert np.all(np.diff(ratio) < 0)


def test_zero_reward_shrinks_value_critic(rng):
    # frozen batch: states at the dictionary centers, zero reward
    S = rng.normal(size=(12, 3))
    vc = ValueCritic.create(3, 0.9, 64, ridge=0.1)
    for s in S:
        vc.dict.insert_or_replace(s, [rng.normal()], vc.kernel)
    batch = Batch(S, np.zeros((12, 1)), np.zeros(12), S.copy(), np.zeros(12, bool))
    norms = [vc.norm()]
    for _ in range(100):
        td_step(vc, batch, 0.99, 0.5)
        norms.append(vc.norm())
    assert np.all(np.diff(norms) < 0)
    assert norms[-1] < 0.5 * norms[0]


def test_pendulum_zero_torque_from_bottom_matches_simulation():
    env = Pendulum()
    p = PolicyParams.initial(KernelSpec.rbf(3, 0.9, 1), [[0.3]], 8)
    mean, std = evaluate(p, env, 1, np.random.default_rng(0), initial_states=[[np.pi, 0.0]])
    th, thd, ret = math.pi, 0.0, 0.0
    for _ in range(200):
        ret -= th * th + 0.1 * thd * thd
        thd = max(-8.0, min(8.0, thd + 15.0 * math.sin(th) * 0.05))
        th = math.pi - math.fmod(math.pi - (th + thd * 0.05), 2 * math.pi) if th + thd * 0.05 <= math.pi else \
            math.pi - ((math.pi - (th + thd * 0.05)) % (2 * math.pi))
    assert mean == pytest.approx(ret, rel=1e-12) and std == 0.0
    assert mean == pytest.approx(-200 * math.pi**2, rel=1e-6)


def test_evaluate_std_zero_cases(rng):
    env = Pendulum()
    p = PolicyParams.initial(KernelSpec.rbf(3, 0.9, 1), [[0.3]], 8)
    assert evaluate(p, env, 1, rng)[1] == 0.0
    X = np.tile([[0.5, 0.1]], (4, 1))
    assert evaluate(p, env, 4, rng, initial_states=X)[1] == 0.0
    with pytest.raises(ValueError):
        evaluate(p, env, 0, rng)


@pytest.mark.parametrize("mode", ["kme", "cme", "off"])
def test_determinism(mode):
    cfg = small(**{"shap.mode": mode})
    a, ca = run_experiment(cfg)
    b, cb = run_experiment(cfg)
    assert a == b and ca == cb and len(a) == cfg.epochs


def test_zero_epochs():
    recs, ckpt = run_experiment(small(epochs=0))
    assert recs == [] and ckpt["epoch"] == 0


def test_records_shape_and_dict_caps():
    cfg = small(epochs=8, **{"actor.dict_size": 10, "critic.dict_size": 12})
    recs, _ = run_experiment(cfg)
    assert [r.epoch for r in recs] == list(range(1, 9))
    assert all(r.actor_size <= 10 and r.critic_size <= 12 and r.eval_std >= 0 for r in recs)
    assert all(1 <= r.steps <= 20 for r in recs)


def test_attribution_recorded_only_when_on():
    on, _ = run_experiment(small())
    off, _ = run_experiment(small(**{"shap.mode": "off"}))
    assert all(r.phi is None for r in off)
    assert any(r.phi is not None and len(r.phi) == 3 for r in on)


def test_mode_off_is_independent_of_attribution_module(monkeypatch):
    cfg = small(**{"shap.mode": "off"})
    ref, ref_ckpt = run_experiment(cfg)

    def boom(*a, **k):
        raise AssertionError("attribution code reached")

    stub = types.SimpleNamespace(EmbeddingBuffer=boom, shapley=boom, gate_weights=boom)
    monkeypatch.setattr(trainer, "shap_mod", stub)
    got, got_ckpt = run_experiment(cfg)
    assert got == ref and got_ckpt == ref_ckpt


def test_uniform_weights_match_plain_kernel():
    st = init_state(small(**{"shap.mode": "off"}))
    plain = KernelSpec.rbf(3, small().lengthscale, 1)
    assert np.array_equal(st.policy.kernel.mahalanobis_weights, plain.mahalanobis_weights)


def test_checkpoint_resume_is_seamless():
    cfg = small(epochs=6)
    full, _ = run_experiment(cfg)
    st = init_state(cfg)
    first = [run_epoch(st, cfg)[1] for _ in range(3)]
    st, _ = restore_state(st.checkpoint(cfg))
    rest, _ = run_experiment(cfg, state=st)
    assert first + rest == full


def test_stage_error_names_stage(monkeypatch):
    def bad(*a, **k):
        raise FloatingPointError("nan")

    monkeypatch.setattr(trainer, "actor_update", bad)
    with pytest.raises(StageError) as info:
        run_epoch(init_state(small()), small())
    assert info.value.stage == "actor"


def test_td_advantage_mode_runs():
    recs, _ = run_experiment(small(**{"shap.mode": "off", "critic.advantage": "td"}))
    assert len(recs) == 6


def test_lqr_gap_cadence():
    cfg = default_config("lqr", epochs=12, horizon=20, eval_episodes=2, gap__every=5, gap__rollouts=8,
                         gap__horizon=200, kernel__rbf_variance=0.01, shap__n_perms=8)
    recs, _ = run_experiment(cfg.validate())
    with_gap = [r.epoch for r in recs if r.gap is not None]
    assert with_gap == [1, 6, 11, 12]


def test_noise_changes_trajectories():
    a, _ = run_experiment(small(epochs=2))
    b, _ = run_experiment(small(epochs=2, noise_var=0.01))
    assert a != b


def test_aggregation_matches_recompute():
    runs = [run_experiment(small(seed=s, epochs=5))[0] for s in range(3)]
    finals = [np.mean([r.eval_mean for r in run[-3:]]) for run in runs]
    summ = summarize_seeds(runs, last=3)
    assert summ.mean == pytest.approx(np.mean(finals), abs=1e-12)
    assert summ.std == pytest.approx(np.std(finals, ddof=1), abs=1e-12)
    assert summ.per_seed == tuple(final_return(r, 3) for r in runs)
    mean, std = aggregate_curves(runs)
    M = np.array([[r.eval_mean for r in run] for run in runs])
    assert np.allclose(mean, M.mean(0)) and np.allclose(std, M.std(0))
    with pytest.raises(ValueError):
        aggregate_curves([runs[0], runs[1][:2]])
    with pytest.raises(ValueError):
        final_return([])
