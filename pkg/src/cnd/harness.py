"""Seeded execution of registered experiments with atomic result files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, parse_config
from .errors import ResourceError, SchemaError
from .experiments import REGISTRY, ExperimentOutput

RESOURCE_LIMIT = 10**8


def list_experiments(as_json: bool = False) -> str:
    entries = [e.to_dict() for e in REGISTRY.values()]
    if as_json:
        return json.dumps(entries, indent=2)
    width = max(len(e["name"]) for e in entries)
    return "\n".join(f"{e['name']:<{width}}  {e['description']} [{e['target']}]" for e in entries)


def bundled_config(name: str) -> Path:
    path = resources.files("cnd") / "configs" / f"{name}.json"
    if not path.is_file():
        raise SchemaError(f"no bundled config named {name!r}", "<file>")
    return Path(str(path))


def _clean(obj):
    """JSON-ready copy: numpy scalars unwrapped, Fractions as strings, NaN as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def to_csv(columns: list[str], rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        out = []
        for c in columns:
            v = r.get(c, "")
            if isinstance(v, (float, np.floating)):
                v = repr(float(v))
            out.append(v)
        w.writerow(out)
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunResult:
    experiment: str
    config: dict
    config_hash: str
    metrics: dict
    verdicts: list[dict]
    passed: bool
    wall_clock: float
    version: str = __version__
    files: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "config": self.config,
            "config_hash": self.config_hash,
            "metrics": self.metrics,
            "verdicts": self.verdicts,
            "passed": self.passed,
            "wall_clock_s": self.wall_clock,
            "version": self.version,
            "files": self.files,
        }


def verify_result(record: dict) -> bool:
    """True when the echoed config still hashes to the recorded digest."""
    try:
        cfg = parse_config(record["config"])
    except (SchemaError, KeyError, TypeError):
        return False
    return cfg.digest() == record.get("config_hash")


def check_budget(cfg: ExperimentConfig, allow_large: bool = False) -> None:
    if cfg.experiment == "verify-cnd":
        return
    work = cfg.reps * max(cfg.n_list)
    if work > RESOURCE_LIMIT and not (allow_large or cfg.allow_large):
        raise ResourceError(f"reps x n = {work:.3g} exceeds {RESOURCE_LIMIT:.0e}; set allow_large to override")


def run(
    cfg: ExperimentConfig | dict | str | Path,
    workers: int = 1,
    out_dir: str | Path | None = None,
    write: bool = True,
    allow_large: bool = False,
) -> RunResult:
    """Run one experiment; writes ``<prefix><name>.metrics.json``, ``.csv`` and ``.run.json``.

    The metrics and CSV files depend only on the config, never on the worker
    count or timing; wall-clock time goes to the run record alone.
    """
    if isinstance(cfg, (str, Path)):
        cfg = load_config(cfg)
    elif isinstance(cfg, dict):
        cfg = parse_config(cfg)
    check_budget(cfg, allow_large)
    t0 = time.perf_counter()
    out: ExperimentOutput = REGISTRY[cfg.experiment].runner(cfg, workers)
    elapsed = time.perf_counter() - t0
    verdicts = [v.to_dict() for v in out.verdicts]
    metrics = dict(out.metrics)
    metrics["config_hash"] = cfg.digest()
    metrics["seed"] = cfg.seed
    metrics["verdicts"] = verdicts
    result = RunResult(cfg.experiment, cfg.model_dump(mode="json"), cfg.digest(), _clean(metrics), verdicts,
                       out.passed, elapsed)
    if write:
        base = Path(out_dir if out_dir is not None else cfg.output.dir)
        stem = f"{cfg.output.prefix}{cfg.experiment}"
        files = {
            "metrics": base / f"{stem}.metrics.json",
            "csv": base / f"{stem}.csv",
            "run": base / f"{stem}.run.json",
        }
        result.files = {k: str(p) for k, p in files.items()}
        atomic_write(files["metrics"], dumps(metrics))
        atomic_write(files["csv"], to_csv(out.columns, out.rows))
        atomic_write(files["run"], dumps(result.to_dict()))
    return result
