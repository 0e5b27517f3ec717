"""Command-line front end.

Exit codes: 0 success, 2 usage or invalid config, 3 missing or malformed
data, 4 numeric failure. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config, parse_assignment
from .envs import LqrSystem
from .shap import EmptyBufferError, shapley
from .trainer import (StageError, evaluate, final_return, policy_gap, restore_state, run_experiment,
                      summarize_seeds)

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
SWEEP_AXES = ("noise_var", "shap.mode", "seed")
MODES = ("kme", "cme", "off", "rkhs-ac")


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code, self.kind = code, kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_USAGE, "usage", message)


def _seed_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or flat key=value config file")
    p.add_argument("--env", choices=("pendulum", "lqr"))
    p.add_argument("--epochs", type=int)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", type=_seed_list, help="comma-separated seed list")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--mode", choices=MODES, help="attribution mode; rkhs-ac disables attribution "
                   "and uses TD residuals as advantages")
    p.add_argument("--out", help="output directory (default: $RSA2C_OUT or ./runs)")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsa2c", description="Attribution-gated kernel actor-critic.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _run_options(sub.add_parser("train", help="train one or more seeds"))
    gp = sub.add_parser("gap", help="LQR optimality-gap study (train on lqr, report gap series)")
    _run_options(gp)

    sw = sub.add_parser("sweep", help="cross product of an axis with seeds; one summary row per cell")
    _run_options(sw)
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sw.add_argument("--values", required=True, help="comma-separated axis values")
    sw.add_argument("--last", type=int, default=100, help="final epochs averaged per seed")

    ev = sub.add_parser("eval", help="evaluate a checkpoint's policy mean")
    ev.add_argument("run", help="run directory or checkpoint file")
    ev.add_argument("--episodes", type=int, default=5)
    ev.add_argument("--seed", type=int, default=0)

    sh = sub.add_parser("shap", help="attribution of a checkpoint's value critic")
    sh.add_argument("run", help="run directory or checkpoint file")
    sh.add_argument("--state", help="comma-separated state (default: latest buffer state)")
    sh.add_argument("--mode", choices=("kme", "cme"))
    sh.add_argument("--seed", type=int, default=0)

    ex = sub.add_parser("export", help="consolidated JSON of a run's records and traces")
    ex.add_argument("run", help="run directory")
    ex.add_argument("--out", help="write to this file instead of stdout")
    return p


def resolve_config(args, env_override: str | None = None) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.env:
        cfg.set("env", args.env)
    if env_override:
        cfg.set("env", env_override)
    if args.epochs is not None:
        cfg.set("epochs", args.epochs)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.mode == "rkhs-ac":
        cfg.set("shap.mode", "off")
        cfg.set("critic.advantage", "td")
    elif args.mode:
        cfg.set("shap.mode", args.mode)
    for item in args.overrides:
        cfg.set(*parse_assignment(item))
    return cfg.validate()


def _out_root(args) -> Path:
    return Path(args.out or os.environ.get("RSA2C_OUT") or "runs")


def train_run(cfg: RunConfig, run_dir: Path, quiet: bool = True) -> list:
    """Train one seed, streaming records and traces into ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    io.write_config(run_dir, cfg)
    with io.RecordWriter(run_dir / io.RECORDS_FILE) as w, open(run_dir / io.TRACE_FILE, "w") as tr:
        def emit(rec):
            w.write(rec)
            line = io.trace_line(rec, cfg.shap.mode)
            if line:
                tr.write(line + "\n")
                tr.flush()
            if not quiet and (rec.epoch % 50 == 0 or rec.epoch == cfg.epochs):
                gap = "" if rec.gap is None else f" gap={rec.gap:.4g}"
                print(f"seed={cfg.seed} epoch={rec.epoch} eval={rec.eval_mean:.2f}{gap}", flush=True)

        records, ckpt = run_experiment(cfg, emit)
    io.save_checkpoint(run_dir / io.CHECKPOINT_FILE, ckpt)
    summary = {"seed": cfg.seed, "epochs": len(records)}
    if records:
        summary["final_return"] = final_return(records)
    (run_dir / "summary.json").write_text(json.dumps(summary) + "\n")
    return records


def _seeds(args, cfg: RunConfig) -> list[int]:
    return args.seeds if args.seeds else [cfg.seed]


def cmd_train(args, env_override: str | None = None) -> dict:
    cfg = resolve_config(args, env_override)
    root = _out_root(args)
    seeds = _seeds(args, cfg)
    runs = []
    for s in seeds:
        c = cfg.with_overrides({"seed": s})
        run_dir = root if len(seeds) == 1 else root / f"seed_{s}"
        runs.append(train_run(c, run_dir, args.quiet))
    out = {"out": str(root), "seeds": seeds}
    if all(runs):
        summ = summarize_seeds(runs)
        out.update(final_mean=summ.mean, final_std=summ.std, per_seed=list(summ.per_seed))
    if cfg.env == "lqr":
        out["gap"] = [[r.epoch, r.gap] for r in runs[0] if r.gap is not None] if runs else []
    return out


def cmd_sweep(args) -> dict:
    cfg = resolve_config(args)
    root = _out_root(args)
    raw = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw:
        raise CliError(EXIT_USAGE, "usage", "--values needs at least one value")
    # validate every cell before any compute starts
    cells = []
    for v in raw:
        cell = cfg.with_overrides({args.axis: v}).validate()
        seeds = [cell.seed] if args.axis == "seed" else _seeds(args, cfg)
        cells.append((v, cell, seeds))
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for v, cell, seeds in cells:
        runs, failed = [], 0
        for s in seeds:
            c = cell.with_overrides({"seed": s})
            try:
                runs.append(train_run(c, root / f"{args.axis}={v}" / f"seed_{s}"))
            except StageError as exc:
                failed += 1
                print(json.dumps({"warning": "cell_failed", "value": v, "seed": s, "message": str(exc)}),
                      file=sys.stderr)
        finals = [final_return(r, args.last) for r in runs if r]
        mean = float(np.mean(finals)) if finals else float("nan")
        std = float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0 if finals else float("nan")
        rows.append([args.axis, v, cell.shap.mode, repr(cell.noise_var), len(seeds), failed,
                     repr(mean), repr(std), ";".join(repr(f) for f in finals)])
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(io.SUMMARY_HEADER)
        w.writerows(rows)
    return {"summary": str(root / "summary.csv"), "cells": len(rows)}


def _load_run(path: str):
    st, cfg = restore_state(io.load_checkpoint(path))
    return st, cfg


def cmd_eval(args) -> dict:
    st, cfg = _load_run(args.run)
    if args.episodes < 1:
        raise CliError(EXIT_USAGE, "usage", "--episodes must be >= 1")
    mean, std = evaluate(st.policy, st.env, args.episodes, np.random.default_rng(args.seed),
                         cfg.horizon, cfg.noise_var)
    out = {"mean": mean, "std": std, "episodes": args.episodes}
    if isinstance(st.env, LqrSystem):
        g = policy_gap(st, cfg)
        out.update(gap=g.gap, gap_stderr=g.stderr)
    return out


def cmd_shap(args) -> dict:
    st, cfg = _load_run(args.run)
    mode = args.mode or (cfg.shap.mode if cfg.shap.mode != "off" else "kme")
    buf = st.buffer
    if buf is None or len(buf) == 0:
        raise CliError(EXIT_DATA, "data", "checkpoint has no embedding buffer")
    if args.state:
        try:
            s = np.array([float(x) for x in args.state.split(",")])
        except ValueError:
            raise CliError(EXIT_USAGE, "usage", f"invalid --state {args.state!r}") from None
        if s.shape[0] != st.env.state_dim:
            raise CliError(EXIT_USAGE, "usage", f"--state needs {st.env.state_dim} values")
    else:
        s = buf.samples[-1]
    att = shapley(st.critic, buf, s, mode, cfg.shap.cme_ridge, cfg.shap.n_perms, np.random.default_rng(args.seed))
    return att.to_dict()


def cmd_export(args) -> dict | None:
    doc = io.export_traces(args.run)
    if args.out:
        Path(args.out).write_text(json.dumps(doc) + "\n")
        return {"out": args.out}
    return doc


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            result = cmd_train(args)
        elif args.command == "gap":
            result = cmd_train(args, env_override="lqr")
        elif args.command == "sweep":
            result = cmd_sweep(args)
        elif args.command == "eval":
            result = cmd_eval(args)
        elif args.command == "shap":
            result = cmd_shap(args)
        else:
            result = cmd_export(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, str(exc))
    except ConfigError as exc:
        return _fail(EXIT_USAGE, "config", str(exc))
    except (io.MissingRecordsError, FileNotFoundError, json.JSONDecodeError, EmptyBufferError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except StageError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc), stage=exc.stage)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    print(json.dumps(result))
    return 0


def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "code": code, "message": message.replace("\n", " "), **extra}),
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
