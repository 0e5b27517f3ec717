"""Run-directory artifacts: epoch CSV, attribution traces, checkpoints, exports."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable

from .config import RunConfig, dump_config
from .trainer import EpochRecord

SCHEMA_VERSION = 1
RECORDS_FILE = "records.csv"
TRACE_FILE = "attributions.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
CONFIG_FILE = "config.json"
CONFIG_TEXT_FILE = "config.txt"

CSV_HEADER = tuple(f.name for f in dataclasses.fields(EpochRecord))
SUMMARY_HEADER = ("axis", "value", "mode", "noise_var", "n_seeds", "n_failed", "mean", "std", "per_seed")
_TUPLE_FIELDS = {"phi", "anchor"}
_INT_FIELDS = {"epoch", "steps", "actor_size", "critic_size"}


class MissingRecordsError(FileNotFoundError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, tuple):
        return ";".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    if text == "":
        return None
    if name in _TUPLE_FIELDS:
        return tuple(float(x) for x in text.split(";"))
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def record_row(rec: EpochRecord) -> list[str]:
    return [_fmt(getattr(rec, k)) for k in CSV_HEADER]


class RecordWriter:
    """Appends one CSV row per epoch, flushing so partial runs stay readable."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh)
        self._w.writerow(CSV_HEADER)
        self._fh.flush()

    def write(self, rec: EpochRecord) -> None:
        self._w.writerow(record_row(rec))
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records(path: str | Path, records: Iterable[EpochRecord]) -> None:
    with RecordWriter(path) as w:
        for r in records:
            w.write(r)


def read_records(path: str | Path) -> list[EpochRecord]:
    path = Path(path)
    if not path.is_file():
        raise MissingRecordsError(f"no records at {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise MissingRecordsError(f"{path}: unexpected or missing header")
    return [EpochRecord(**{k: _parse(k, v) for k, v in zip(CSV_HEADER, row)}) for row in rows[1:]]


def trace_line(rec: EpochRecord, mode: str) -> str | None:
    if rec.phi is None:
        return None
    return json.dumps({"epoch": rec.epoch, "state": list(rec.anchor or ()), "phi": list(rec.phi), "mode": mode})


def write_config(run_dir: str | Path, cfg: RunConfig) -> None:
    run_dir = Path(run_dir)
    (run_dir / CONFIG_FILE).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    (run_dir / CONFIG_TEXT_FILE).write_text(dump_config(cfg))


def save_checkpoint(path: str | Path, ckpt: dict) -> None:
    Path(path).write_text(json.dumps(ckpt))


def load_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_FILE
    if not path.is_file():
        raise MissingRecordsError(f"no checkpoint at {path}")
    return json.loads(path.read_text())


def _num(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def export_traces(run_dir: str | Path) -> dict:
    """Consolidated, self-describing JSON document for one run directory."""
    run_dir = Path(run_dir)
    records = read_records(run_dir / RECORDS_FILE)
    if not records:
        raise MissingRecordsError(f"{run_dir}: run has no epoch records")
    cfg_path = run_dir / CONFIG_FILE
    config = json.loads(cfg_path.read_text()) if cfg_path.is_file() else None
    return {
        "schema_version": SCHEMA_VERSION,
        "columns": list(CSV_HEADER),
        "config": config,
        "epochs": [r.epoch for r in records],
        "returns": {"train": [r.train_return for r in records],
                    "eval_mean": [r.eval_mean for r in records],
                    "eval_std": [r.eval_std for r in records]},
        "gaps": [_num(r.gap) for r in records],
        "phi": [None if r.phi is None else list(r.phi) for r in records],
        "records": [{k: (list(v) if isinstance(v, tuple) else _num(v))
                     for k, v in dataclasses.asdict(r).items()} for r in records],
    }


def ingest_export(doc: dict) -> list[EpochRecord]:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {doc.get('schema_version')!r}")
    out = []
    for row in doc["records"]:
        kw = {k: (tuple(v) if k in _TUPLE_FIELDS and v is not None else v) for k, v in row.items()}
        out.append(EpochRecord(**kw))
    return out
