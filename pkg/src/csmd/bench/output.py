"""Writing and reading experiment outputs: traces, stage logs, aggregates, manifest."""

from __future__ import annotations

import csv
import json
import platform
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..trace import Checkpoint, RunTrace
from .aggregate import AggregateCurve

TRACES = "traces.jsonl"
STAGES = "stages.jsonl"
AGGREGATE = "aggregate.csv"
MANIFEST = "manifest.json"
HEADER = ["algorithm", "oracle_calls", "median_l1", "p10_l1", "p90_l1",
          "median_l2", "p10_l2", "p90_l2"]


def _open(path: Path, mode="w"):
    try:
        return path.open(mode, newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_traces(traces: list[RunTrace], outdir: Path) -> None:
    with _open(outdir / TRACES) as f:
        for t in traces:
            for rec in t.records():
                f.write(json.dumps(rec) + "\n")
    with _open(outdir / STAGES) as f:
        for t in traces:
            for st in t.stages:
                f.write(json.dumps({"algorithm": t.algorithm, "seed": t.seed,
                                    "repetition": t.repetition, **st}) + "\n")


def write_aggregate(curves: list[AggregateCurve], outdir: Path) -> None:
    with _open(outdir / AGGREGATE) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEADER)
        for c in curves:
            for row in c.rows():
                w.writerow([row[0], row[1], *(repr(v) for v in row[2:])])


def write_manifest(outdir: Path, config: dict | None = None, wall_clock: float | None = None,
                   failures: list[dict] | None = None, runs: int = 0) -> None:
    doc = {
        "library": "csmd",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config or {},
        "runs": runs,
        "failed_runs": failures or [],
        "wall_clock_seconds": wall_clock,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with _open(outdir / MANIFEST) as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=str)
        f.write("\n")


def emit_outputs(curves: list[AggregateCurve], traces: list[RunTrace], outdir, *,
                 config: dict | None = None, wall_clock: float | None = None) -> Path:
    """Write traces.jsonl, stages.jsonl, aggregate.csv (when there are curves) and manifest.json."""
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {outdir}: {exc.strerror}") from exc
    if traces:
        write_traces(traces, outdir)
    if curves:
        write_aggregate(curves, outdir)
    failures = [{"algorithm": t.algorithm, "repetition": t.repetition, "error": t.failed}
                for t in traces if t.failed]
    write_manifest(outdir, config, wall_clock, failures, len(traces))
    return outdir


def read_traces(outdir) -> list[RunTrace]:
    """Rebuild traces from traces.jsonl (stage annotations are not reloaded)."""
    path = Path(outdir) / TRACES
    if not path.exists():
        raise FileNotFoundError(f"no {TRACES} in {outdir}")
    fields = set(Checkpoint.__dataclass_fields__)
    traces: dict[tuple, RunTrace] = {}
    with path.open() as f:
        for line in f:
            rec = json.loads(line)
            key = (rec["algorithm"], rec["seed"], rec["repetition"])
            if key not in traces:
                traces[key] = RunTrace(rec["algorithm"], rec["seed"], repetition=rec["repetition"])
            traces[key].checkpoints.append(Checkpoint(**{k: v for k, v in rec.items() if k in fields}))
    return list(traces.values())
