"""Acceptance criteria P1-P5 (exact) and Q1-Q4 (multi-seed, cached).

Each test records one PASS/FAIL line, printed in the terminal summary. Q runs
come from the results cache (``python -m rsa2c.experiments run`` fills it);
with RSA2C_RUN_SLOW=1 missing runs are computed in-process.
"""

import json
import os
import subprocess
import sys
import textwrap
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import projection_lstsq, shapley_by_permutations
from rsa2c import experiments
from rsa2c.actor import PolicyParams, log_prob, score_atom
from rsa2c.config import RunConfig
from rsa2c.critics import ValueCritic, td_loss, td_step, value_eval
from rsa2c.data import Batch
from rsa2c.dictionary import SparseDictionary, ald_project
from rsa2c.envs import LqrSystem, cartpole_lqr, dare_residual, linear_policy, optimality_gap, riccati_solve
from rsa2c.kernels import KernelSpec
from rsa2c.shap import CoalitionGame, EmbeddingBuffer, shapley_exact
from rsa2c.trainer import run_experiment


def record(key, ok, detail):
    ACCEPTANCE[key] = ("PASS" if ok else "FAIL", detail)
    print(f"{key}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{key}: {detail}"


# ---------------------------------------------------------------------------
# P1 Shapley axioms


def _instance(rng, d=4, q=8, n=20, l=0.9):
    vc = ValueCritic.create(d, l, 64)
    for _ in range(q):
        vc.dict.insert_or_replace(rng.normal(size=d), rng.normal(size=1), vc.kernel)
    return vc, EmbeddingBuffer.from_states(rng.normal(size=(n, d)), l), rng.normal(size=d)


def _with_dummy(rng, j):
    vc, buf, s = _instance(rng)
    c = float(rng.normal())
    C = vc.dict.centers.copy()
    C[:, j] = c
    out = ValueCritic.create(4, 0.9, 64)
    for ctr, w in zip(C, vc.weights):
        out.dict.insert_or_replace(ctr, [w], out.kernel)
    X = buf.samples.copy()
    X[:, j] = c
    s = s.copy()
    s[j] = c
    return out, EmbeddingBuffer.from_states(X, 0.9), s


def _symmetric(rng):
    base, w = rng.normal(size=(5, 4)), rng.normal(size=5)
    vc = ValueCritic.create(4, 0.9, 64)
    for c, wi in zip(np.vstack([base, base[:, [1, 0, 2, 3]]]), np.tile(w, 2)):
        vc.dict.insert_or_replace(c, [wi], vc.kernel)
    X = rng.normal(size=(10, 4))
    s = rng.normal(size=4)
    s[1] = s[0]
    return vc, EmbeddingBuffer.from_states(np.vstack([X, X[:, [1, 0, 2, 3]]]), 0.9), s


def _sum_critic(v1, v2):
    out = v1.copy()
    for c, w in zip(v2.dict.centers, v2.weights):
        out.dict.insert_or_replace(c, [w], out.kernel)
    return out


def test_P1_shapley_axioms():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = {"efficiency": 0.0, "dummy": 0.0, "symmetry": 0.0, "linearity": 0.0, "brute": 0.0}
    for _ in range(50):
        for mode in ("kme", "cme"):
            vc, buf, s = _instance(rng)
            game = CoalitionGame(vc, buf, s, mode)
            phi = shapley_exact(vc, buf, s, mode, game=game).phi
            worst["efficiency"] = max(worst["efficiency"], abs(phi.sum() - (game.value(15) - game.value(0))))
            brute = shapley_by_permutations(lambda C: game(sorted(C)), 4)
            worst["brute"] = max(worst["brute"], float(np.max(np.abs(phi - brute))))

            j = int(rng.integers(4))
            dv, db, ds = _with_dummy(rng, j)
            worst["dummy"] = max(worst["dummy"], abs(shapley_exact(dv, db, ds, mode).phi[j]))

            sv, sb, ss = _symmetric(rng)
            sp = shapley_exact(sv, sb, ss, mode).phi
            worst["symmetry"] = max(worst["symmetry"], abs(sp[0] - sp[1]))

            v2 = _instance(rng)[0]
            lhs = shapley_exact(_sum_critic(vc, v2), buf, s, mode).phi
            rhs = phi + shapley_exact(v2, buf, s, mode).phi
            worst["linearity"] = max(worst["linearity"], float(np.max(np.abs(lhs - rhs))))
    elapsed = time.perf_counter() - t0
    ok = (max(worst[k] for k in ("efficiency", "dummy", "symmetry", "linearity")) <= 1e-8
          and worst["brute"] <= 1e-10 and elapsed < 10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s"
    record("P1", ok, detail)


# ---------------------------------------------------------------------------
# P2 ALD oracle


def test_P2_ald_matches_dense_least_squares():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    err = 0.0
    for _ in range(100):
        q = int(rng.integers(1, 21))
        spec = KernelSpec.rbf(3, float(rng.uniform(0.5, 1.5)), 1)
        D = SparseDictionary(3, 1, q)
        for _ in range(q):
            D.insert_or_replace(rng.uniform(-2, 2, 3), rng.normal(size=1), spec)
        s, c = rng.uniform(-2, 2, 3), rng.normal(size=1)
        proj, res = ald_project(D, s, c, spec)
        b, res_o = projection_lstsq(D.centers, s, spec.mahalanobis_weights)
        err = max(err, float(np.max(np.abs(proj[:, 0] - b * c[0]))), abs(res - res_o * abs(c[0])))
    elapsed = time.perf_counter() - t0
    record("P2", err <= 1e-8 and elapsed < 5, f"max deviation {err:.1e}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# P3 gradient checks


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def test_P3_gradient_checks():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    eps = 1e-5
    worst_score = worst_td = 0.0
    for _ in range(20):
        m = int(rng.integers(1, 3))
        A = rng.normal(size=(m, m))
        spec = KernelSpec.rbf(3, 0.9, m)
        p = PolicyParams.initial(spec, A @ A.T + 0.3 * np.eye(m), 64)
        for _ in range(6):
            p.mean_dict.insert_or_replace(rng.normal(size=3), rng.normal(size=m), spec)
        s, a = rng.normal(size=3), rng.normal(size=m)
        center, coeff = score_atom(p, s, a)
        probe, v = rng.normal(size=3), rng.normal(size=m)
        analytic = float(coeff @ spec.output_cov @ v) * float(spec.scalar(center, probe)[0, 0])

        def lp(t):
            q = p.copy()
            q.mean_dict.insert_or_replace(probe, t * v, q.kernel)
            return log_prob(q, s, a)

        fd = (lp(eps) - lp(-eps)) / (2 * eps)
        worst_score = max(worst_score, _rel(fd, analytic))

    for _ in range(20):
        vc = ValueCritic.create(3, 0.9, 64, float(rng.uniform(0, 0.1)))
        for _ in range(8):
            vc.dict.insert_or_replace(rng.normal(size=3), rng.normal(size=1), vc.kernel)
        b = Batch(rng.normal(size=(6, 3)), rng.normal(size=(6, 1)), rng.normal(size=6), rng.normal(size=(6, 3)),
                  np.zeros(6, bool))
        targets = b.rewards + 0.9 * vc(b.next_states)
        probe = rng.normal(size=3)

        def loss(t):
            w = vc.copy()
            w.dict.insert_or_replace(probe, [t], w.kernel)
            return td_loss(w, b, 0.9, targets)

        g_fd = (loss(eps) - loss(-eps)) / (2 * eps)
        new = td_step(vc.copy(), b, 0.9, 0.05)
        g_step = (value_eval(vc, probe) - value_eval(new, probe)) / 0.05
        worst_td = max(worst_td, _rel(g_fd, g_step))
    elapsed = time.perf_counter() - t0
    record("P3", max(worst_score, worst_td) <= 1e-4 and elapsed < 10,
           f"score rel err {worst_score:.1e}, td rel err {worst_td:.1e}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# P4 Riccati


def test_P4_riccati():
    t0 = time.perf_counter()
    p = riccati_solve(LqrSystem([[1.0]], [[1.0]], [[1.0]], [[1.0]], 0.9))[0, 0]
    scalar_err = abs(p - (0.8 + np.sqrt(4.24)) / 1.8)
    sys_ = cartpole_lqr()
    res = dare_residual(sys_, sys_.solution())
    est = optimality_gap(sys_, linear_policy(sys_.gain()), 64, 2000, np.random.default_rng(404))
    elapsed = time.perf_counter() - t0
    ok = scalar_err <= 1e-10 and res <= 1e-10 and abs(est.gap) <= est.tolerance and elapsed < 5
    record("P4", ok, f"scalar err {scalar_err:.1e}, DARE residual {res:.1e}, optimal gap {est.gap:.1e} "
                     f"(tol {est.tolerance:.1e}); {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# P5 gating identity

_P5_CFG = {"epochs": 4, "horizon": 30, "eval_episodes": 2, "shap": {"mode": "off"}}

_STUB_SCRIPT = textwrap.dedent("""
    import json, sys, types

    def _absent(name):
        def f(*a, **k):
            raise RuntimeError("attribution module is stubbed out: " + name)
        return f

    stub = types.ModuleType("rsa2c.shap")
    stub.__getattr__ = lambda name: _absent(name)
    sys.modules["rsa2c.shap"] = stub

    from rsa2c.config import RunConfig
    from rsa2c.trainer import run_experiment
    import dataclasses
    recs, ckpt = run_experiment(RunConfig.from_dict(json.loads(sys.argv[1])))
    print(json.dumps({"records": [dataclasses.asdict(r) | {"wall_time": 0} for r in recs], "checkpoint": ckpt}))
""")


def test_P5_gating_identity():
    import dataclasses
    cfg = RunConfig.from_dict(_P5_CFG)
    recs, ckpt = run_experiment(cfg)
    ref = json.loads(json.dumps({"records": [dataclasses.asdict(r) | {"wall_time": 0} for r in recs],
                                 "checkpoint": ckpt}))
    out = subprocess.run([sys.executable, "-c", _STUB_SCRIPT, json.dumps(_P5_CFG)], capture_output=True, text=True,
                         check=True)
    stubbed = json.loads(out.stdout)
    same = stubbed == ref
    record("P5", same, f"{len(recs)} epochs, records and checkpoint {'identical' if same else 'differ'} "
                       "with the attribution module stubbed out")


# ---------------------------------------------------------------------------
# Q1-Q4


def _protocol(name):
    compute = os.environ.get("RSA2C_RUN_SLOW") == "1"
    res = experiments.evaluate_protocol(name, compute=compute)
    if res is None:
        ACCEPTANCE[name] = ("NOT RUN", "results cache incomplete; run `python -m rsa2c.experiments run`")
        pytest.skip(f"{name}: results cache incomplete")
    record(name, res.passed, res.summary)


@pytest.mark.slow
@pytest.mark.parametrize("name", experiments.PROTOCOLS)
def test_Q(name):
    _protocol(name)
