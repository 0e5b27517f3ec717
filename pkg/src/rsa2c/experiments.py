"""Multi-seed reproduction protocols with an on-disk results cache.

Each protocol is a set of run configurations plus a check over their final
returns. Results are cached per run under a key built from the resolved config
and a hash of the training sources, so a cache never serves stale numbers.

    python -m rsa2c.experiments run [--only Q1,Q4]   # fill the cache
    python -m rsa2c.experiments report               # evaluate from the cache
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from . import io
from .config import RunConfig
from .trainer import EpochRecord, final_return, run_experiment

_TRAINING_SOURCES = ("_accel.py", "kernels.py", "dictionary.py", "actor.py", "critics.py", "data.py",
                     "shap.py", "envs.py", "config.py", "trainer.py")
DEFAULT_CACHE = Path(__file__).resolve().parents[2] / "acceptance_cache"

PENDULUM_SEEDS = tuple(range(5))
LQR_SEEDS = tuple(range(3))


def source_hash() -> str:
    h = hashlib.sha256()
    here = Path(__file__).resolve().parent
    for name in _TRAINING_SOURCES:
        h.update(name.encode())
        h.update((here / name).read_bytes())
    return h.hexdigest()[:16]


def cache_dir() -> Path:
    return Path(os.environ.get("RSA2C_CACHE") or DEFAULT_CACHE)


def run_key(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True) + source_hash()
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


@dataclass
class CachedRun:
    cfg: RunConfig
    records: list[EpochRecord]
    wall_time: float

    @property
    def final(self) -> float:
        return final_return(self.records)


def load_run(cfg: RunConfig, root: Path | None = None) -> CachedRun | None:
    d = (root or cache_dir()) / run_key(cfg)
    meta = d / "meta.json"
    if not meta.is_file():
        return None
    info = json.loads(meta.read_text())
    return CachedRun(cfg, io.read_records(d / io.RECORDS_FILE), info["wall_time"])


def ensure_run(cfg: RunConfig, root: Path | None = None, log: Callable[[str], None] | None = None) -> CachedRun:
    hit = load_run(cfg, root)
    if hit is not None:
        return hit
    d = (root or cache_dir()) / run_key(cfg)
    d.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    records, _ = run_experiment(cfg)
    wall = time.perf_counter() - t0
    io.write_records(d / io.RECORDS_FILE, records)
    io.write_config(d, cfg)
    # meta last: its presence marks a complete entry
    (d / "meta.json").write_text(json.dumps({"wall_time": wall, "source": source_hash()}) + "\n")
    if log:
        log(f"{cfg.env} mode={cfg.shap.mode} noise={cfg.noise_var} seed={cfg.seed}: "
            f"final={final_return(records):.2f} ({wall:.0f}s)")
    return CachedRun(cfg, records, wall)


# ---------------------------------------------------------------------------
# protocol configurations


def pendulum_config(mode: str, seed: int, noise_var: float = 0.0) -> RunConfig:
    return RunConfig().with_overrides({"shap.mode": mode, "seed": seed, "noise_var": noise_var}).validate()


def lqr_config(seed: int, mode: str = "kme") -> RunConfig:
    # state scale is 0.05, so the kernel and the training horizon are sized to it
    return RunConfig().with_overrides({
        "env": "lqr", "epochs": 600, "horizon": 50, "kernel.rbf_variance": 0.04,
        "shap.mode": mode, "seed": seed,
    }).validate()


def protocol_configs(name: str) -> list[RunConfig]:
    if name == "Q1":
        return [pendulum_config(m, s) for m in ("kme", "cme") for s in PENDULUM_SEEDS]
    if name == "Q2":
        return [pendulum_config(m, s) for m in ("kme", "cme", "off") for s in PENDULUM_SEEDS]
    if name == "Q3":
        return [pendulum_config(m, s, 0.01) for m in ("kme", "cme") for s in PENDULUM_SEEDS]
    if name == "Q4":
        return [lqr_config(s) for s in LQR_SEEDS]
    raise KeyError(name)


PROTOCOLS = ("Q1", "Q2", "Q3", "Q4")


# ---------------------------------------------------------------------------
# checks


@dataclass
class CriterionResult:
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        return f"{self.name} {'PASS' if self.passed else 'FAIL'}: {self.summary}"


def mean_ci(x, level: float = 0.95) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    if x.size < 2:
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return m, m - half, m + half


def _finals(runs: list[CachedRun], mode: str) -> np.ndarray:
    return np.array([r.final for r in sorted((r for r in runs if r.cfg.shap.mode == mode), key=lambda r: r.cfg.seed)])


def check_q1(runs: list[CachedRun], threshold: float = -300.0, budget_s: float = 1200.0) -> CriterionResult:
    parts, ok, details = [], True, {}
    for mode in ("kme", "cme"):
        f = _finals(runs, mode)
        m, lo, hi = mean_ci(f)
        ok &= m >= threshold
        details[mode] = f.tolist()
        parts.append(f"{mode} {m:.1f} [95% CI {lo:.1f}, {hi:.1f}]")
    slow = max(r.wall_time for r in runs)
    ok &= slow <= budget_s
    return CriterionResult("Q1", bool(ok), f"{'; '.join(parts)} vs >= {threshold:g}; max {slow:.0f}s/seed", details)


def check_q2(runs: list[CachedRun], min_wins: int = 4) -> CriterionResult:
    base = _finals(runs, "off")
    parts, ok, details = [], True, {"off": base.tolist()}
    for mode in ("kme", "cme"):
        f = _finals(runs, mode)
        wins = int(np.sum(f > base))
        ok &= bool(f.mean() > base.mean()) and wins >= min_wins
        m, lo, hi = mean_ci(f - base)
        details[mode] = f.tolist()
        parts.append(f"{mode}-off {m:.1f} [95% CI {lo:.1f}, {hi:.1f}], wins {wins}/{f.size}")
    return CriterionResult("Q2", bool(ok), f"{'; '.join(parts)}; off mean {base.mean():.1f}", details)


def check_q3(runs: list[CachedRun]) -> CriterionResult:
    fk, fc = _finals(runs, "kme"), _finals(runs, "cme")
    sk, sc = float(fk.std(ddof=1)), float(fc.std(ddof=1))
    return CriterionResult("Q3", sc < sk, f"noise 0.01: std cme {sc:.1f} vs kme {sk:.1f}",
                           {"kme": fk.tolist(), "cme": fc.tolist()})


def gap_series(records: list[EpochRecord]) -> tuple[np.ndarray, np.ndarray]:
    pts = [(r.epoch, r.gap) for r in records if r.gap is not None]
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts], dtype=float)


def best_so_far(gaps) -> np.ndarray:
    return np.minimum.accumulate(np.asarray(gaps, dtype=float))


def check_q4(runs: list[CachedRun], ratio: float = 0.2, budget_s: float = 900.0) -> CriterionResult:
    ratios, ok, details = [], True, {}
    for r in sorted(runs, key=lambda r: r.cfg.seed):
        ep, g = gap_series(r.records)
        T = r.cfg.epochs
        early = g[ep <= 10]
        late = g[ep > T - max(1, T // 10)]
        with np.errstate(invalid="ignore"):
            q = float(np.mean(late) / np.mean(early))  # nan when both diverge
        env = best_so_far(g)
        ok &= bool(q <= ratio) and bool(np.all(np.diff(env) <= 0))
        ratios.append(q)
        details[r.cfg.seed] = {"early": float(np.mean(early)), "late": float(np.mean(late)), "ratio": q}
    slow = max(r.wall_time for r in runs)
    ok &= slow <= budget_s
    text = ", ".join(f"{q:.3g}" for q in ratios)
    return CriterionResult("Q4", bool(ok), f"late/early gap ratio per seed [{text}] vs <= {ratio:g}; "
                           f"max {slow:.0f}s/seed", details)


CHECKS = {"Q1": check_q1, "Q2": check_q2, "Q3": check_q3, "Q4": check_q4}


def cached_runs(name: str, root: Path | None = None) -> list[CachedRun] | None:
    """All runs of a protocol from the cache, or None if any is missing."""
    out = []
    for cfg in protocol_configs(name):
        hit = load_run(cfg, root)
        if hit is None:
            return None
        out.append(hit)
    return out


def evaluate_protocol(name: str, root: Path | None = None, compute: bool = False,
                      log: Callable[[str], None] | None = None) -> CriterionResult | None:
    if compute:
        runs = [ensure_run(c, root, log) for c in protocol_configs(name)]
    else:
        runs = cached_runs(name, root)
        if runs is None:
            return None
    return CHECKS[name](runs)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="python -m rsa2c.experiments")
    p.add_argument("action", choices=("run", "report"))
    p.add_argument("--only", help="comma-separated protocol names")
    p.add_argument("--cache", help="cache directory (default: $RSA2C_CACHE or ./acceptance_cache)")
    args = p.parse_args(argv)
    root = Path(args.cache) if args.cache else None
    names = args.only.split(",") if args.only else PROTOCOLS
    for n in names:
        res = evaluate_protocol(n, root, compute=args.action == "run", log=lambda s: print("  " + s, flush=True))
        print(res.line() if res else f"{n} MISSING: cache incomplete", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
