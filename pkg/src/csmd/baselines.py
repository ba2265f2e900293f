"""Reference solvers: vanilla SMD on the l1 ball, p-norm RDA and Euclidean SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import ProxSetup
from .glr import GlrModel, SolverParams
from .stage import BLOCK_ELEMENTS, SampleSource, _Engine
from .trace import RunTrace, make_checkpoint

KINDS = ("vanilla_smd", "rda", "sgd")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    N: int
    R: float | None = None
    gamma0: float | None = None
    lam: float | None = None
    beta0: float | None = None
    averaging: bool | None = None
    checkpoints: int = 50

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline {self.kind!r}")
        if self.N < 1:
            raise ValueError("budget N must be >= 1")
        for name in ("R", "gamma0", "beta0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be nonnegative")

    @property
    def average(self) -> bool:
        # dual averaging reports its (sparse) iterate unless asked otherwise
        return self.averaging if self.averaging is not None else self.kind != "rda"


def checkpoint_grid(N: int, count: int = 50) -> np.ndarray:
    """Iteration counts at which baselines record: log-spaced and linear points, ending at N."""
    geo = np.geomspace(1, N, count)
    lin = np.linspace(0, N, count + 1)
    pts = np.unique(np.concatenate([np.ceil(geo), np.ceil(lin)]).astype(np.int64))
    return pts[(pts >= 1) & (pts <= N)]


def smd_steps(params: SolverParams, R: float, N: int) -> np.ndarray:
    """gamma_i = min(1/(4 nu), (R / sigma*) sqrt((Theta + t) / i)), i = 1..N."""
    i = np.arange(1, N + 1, dtype=float)
    cap = 1.0 / (4.0 * params.nu)
    if params.sigma_star == 0.0:
        return np.full(N, cap)
    return np.minimum(cap, R / params.sigma_star * np.sqrt((params.Theta + params.t) / i))


def rda_lambda(sigma: float, n: int, T: int) -> float:
    return 2.0 * sigma * math.sqrt(2.0 * math.log(n) / T)


def sgd_steps(params: SolverParams, gamma0: float, N: int) -> np.ndarray:
    i = np.arange(1, N + 1, dtype=float)
    return np.minimum(1.0 / (2.0 * params.nu), gamma0 / np.sqrt(i))


def _rows_per_block(n: int) -> int:
    return max(1, BLOCK_ELEMENTS // n)


def run_vanilla_smd(model: GlrModel, setup: ProxSetup, cfg: BaselineConfig, x0, rng, *,
                    params: SolverParams, label: str = "vanilla_smd", seed: int = 0,
                    repetition: int = 0) -> RunTrace:
    """Non-Euclidean SMD on the ball of radius cfg.R around x0 (the kappa = 0 prox)."""
    if cfg.R is None:
        raise ValueError("vanilla SMD needs a radius R")
    source = SampleSource(model, rng)
    eng = _Engine(setup, x0, cfg.R, 0.0, model.alpha)
    steps = smd_steps(params, cfg.R, cfg.N)
    trace = RunTrace(label, seed, repetition=repetition)
    trace.checkpoints.append(make_checkpoint(model, eng.x, eng.x, 0, 0))
    done = 0
    for stop in checkpoint_grid(cfg.N, cfg.checkpoints):
        g = steps[done:stop]
        eng.run(source, 1, g, g, g, avg_after=True)
        done = stop
        x = eng.x
        trace.checkpoints.append(make_checkpoint(model, eng.average() if cfg.average else x, x,
                                                 done, source.fresh))
    return trace


def run_rda(model: GlrModel, setup: ProxSetup, cfg: BaselineConfig, x0, rng, *,
            label: str = "rda", seed: int = 0, repetition: int = 0) -> RunTrace:
    """Dual averaging with the penalty i lam ||z||_1 and regularizer beta0 sqrt(i) theta(z)."""
    lam = cfg.lam if cfg.lam is not None else rda_lambda(model.sigma, model.n, cfg.N)
    beta0 = cfg.beta0 if cfg.beta0 is not None else math.sqrt(setup.Theta)
    source = SampleSource(model, rng)
    x = np.array(x0, dtype=float)
    gsum = np.zeros(model.n)
    xsum = np.zeros(model.n)
    trace = RunTrace(label, seed, repetition=repetition)
    trace.checkpoints.append(make_checkpoint(model, x, x, 0, 0))
    rows = _rows_per_block(model.n)
    done = 0
    for stop in checkpoint_grid(cfg.N, cfg.checkpoints):
        while done < stop:
            k = min(rows, stop - done)
            phi, eta = source.take(k)
            _kernels.rda_block(phi, eta, k, done, gsum, x, xsum, lam, beta0, setup.c, setup.q,
                               float(model.alpha))
            done += k
        out = xsum / done if cfg.average else x
        trace.checkpoints.append(make_checkpoint(model, out, x, done, source.fresh))
    return trace


def run_sgd(model: GlrModel, cfg: BaselineConfig, x0, rng, *, params: SolverParams,
            label: str = "sgd", seed: int = 0, repetition: int = 0) -> RunTrace:
    """Euclidean SGD with gamma_i = min(1/(2 nu), gamma0 / sqrt(i)).

    gamma0 defaults to 1 / trace(Sigma), the largest stable constant step for
    least squares with these regressors.
    """
    gamma0 = cfg.gamma0 if cfg.gamma0 is not None else 1.0 / float(model.covariance.sum())
    steps = sgd_steps(params, gamma0, cfg.N)
    x = np.array(x0, dtype=float)
    limit = 1e6 * (np.linalg.norm(x) + np.linalg.norm(model.x_star) + 1.0)
    source = SampleSource(model, rng)
    xsum = np.zeros(model.n)
    wsum = np.zeros(1)
    trace = RunTrace(label, seed, repetition=repetition)
    trace.checkpoints.append(make_checkpoint(model, x, x, 0, 0))
    rows = _rows_per_block(model.n)
    done = 0
    for stop in checkpoint_grid(cfg.N, cfg.checkpoints):
        while done < stop:
            k = min(rows, stop - done)
            phi, eta = source.take(k)
            _kernels.sgd_block(phi, eta, k, steps[done:done + k], x, xsum, wsum, float(model.alpha))
            done += k
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
            trace.failed = f"diverged after {done} iterations"
            break
        out = xsum / wsum[0] if cfg.average else x
        trace.checkpoints.append(make_checkpoint(model, out, x, done, source.fresh))
    return trace
