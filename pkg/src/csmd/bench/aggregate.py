"""Median and decile curves over repetitions on a common oracle-call grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..trace import RunTrace


@dataclass
class AggregateCurve:
    algorithm: str
    oracle_calls: np.ndarray
    median_l1: np.ndarray
    p10_l1: np.ndarray
    p90_l1: np.ndarray
    median_l2: np.ndarray
    p10_l2: np.ndarray
    p90_l2: np.ndarray

    def rows(self):
        cols = (self.oracle_calls, self.median_l1, self.p10_l1, self.p90_l1,
                self.median_l2, self.p10_l2, self.p90_l2)
        for vals in zip(*cols):
            yield (self.algorithm, int(vals[0]), *(float(v) for v in vals[1:]))


def common_grid(traces: list[RunTrace], points: int = 50) -> np.ndarray:
    """0 plus ``points`` log-spaced oracle-call counts up to the largest recorded one."""
    calls = np.concatenate([[c.oracle_calls for c in t.checkpoints] for t in traces])
    pos = calls[calls > 0]
    if pos.size == 0:
        return np.zeros(1, dtype=np.int64)
    grid = np.round(np.geomspace(pos.min(), pos.max(), points)).astype(np.int64)
    return np.unique(np.concatenate([[0], grid]))


def resample(trace: RunTrace, grid: np.ndarray, attr: str) -> np.ndarray:
    """Last recorded value at or before each grid point (the first one before the trace starts)."""
    calls = np.array([c.oracle_calls for c in trace.checkpoints])
    vals = np.array([getattr(c, attr) for c in trace.checkpoints], dtype=float)
    idx = np.searchsorted(calls, grid, side="right") - 1
    return vals[np.clip(idx, 0, None)]


def _stats(mat: np.ndarray):
    med = np.median(mat, axis=0)
    lo = np.percentile(mat, 10, axis=0, method="inverted_cdf")
    hi = np.percentile(mat, 90, axis=0, method="inverted_cdf")
    return med, lo, hi


def aggregate(traces: list[RunTrace], points: int = 50) -> list[AggregateCurve]:
    """One curve per algorithm, in order of first appearance; failed runs are left out."""
    if not traces:
        raise ValueError("no traces to aggregate")
    groups: dict[str, list[RunTrace]] = {}
    for t in traces:
        if t.failed is None and t.checkpoints:
            groups.setdefault(t.algorithm, []).append(t)
    curves = []
    for alg, ts in groups.items():
        grid = common_grid(ts, points)
        l1 = np.vstack([resample(t, grid, "err_l1") for t in ts])
        l2 = np.vstack([resample(t, grid, "err_l2") for t in ts])
        curves.append(AggregateCurve(alg, grid, *_stats(l1), *_stats(l2)))
    return curves
