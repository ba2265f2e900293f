"""Checkpoint records shared by CSMD-SR and the baselines."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass(frozen=True)
class Checkpoint:
    oracle_calls: int
    samples: int
    err_l1: float
    err_l2: float
    raw_err_l1: float
    obj_gap: float | None
    stage: int = 0
    phase: str = ""


@dataclass
class RunTrace:
    algorithm: str
    seed: int
    checkpoints: list[Checkpoint] = field(default_factory=list)
    stages: list[dict] = field(default_factory=list)
    repetition: int = 0
    failed: str | None = None

    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    def records(self) -> list[dict]:
        out = []
        for cp in self.checkpoints:
            rec = {"algorithm": self.algorithm, "seed": self.seed, "repetition": self.repetition}
            rec.update(asdict(cp))
            out.append(rec)
        return out


def make_checkpoint(model, x_avg, x_raw, calls, samples, stage=0, phase="") -> Checkpoint:
    d = x_avg - model.x_star
    gap = None
    if model.alpha == 1.0:
        gap = 0.5 * float(model.covariance @ (d * d))
    return Checkpoint(
        oracle_calls=int(calls),
        samples=int(samples),
        err_l1=float(np.abs(d).sum()),
        err_l2=float(np.sqrt(d @ d)),
        raw_err_l1=float(np.abs(x_raw - model.x_star).sum()),
        obj_gap=gap,
        stage=int(stage),
        phase=phase,
    )
