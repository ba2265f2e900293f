"""One stage of composite stochastic mirror descent (plain and minibatch)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import (MAX_BISECTION, LocalBall, ProxError, ProxSetup, composite_prox,
                       kink_gradients, prox_tolerance)
from .glr import GlrModel, SolverParams, draw_block
from .trace import Checkpoint, make_checkpoint

# rows of regressors materialized at once
BLOCK_ELEMENTS = 1 << 21


@dataclass
class SamplePool:
    """A fixed set of samples replayed cyclically (data recycling)."""

    phi: np.ndarray
    eta: np.ndarray

    @classmethod
    def draw(cls, model: GlrModel, rng: np.random.Generator, size: int) -> "SamplePool":
        phi, eta = draw_block(model, rng, size)
        return cls(phi, eta)

    def __len__(self):
        return self.eta.shape[0]


class SampleSource:
    """Hands out rows of samples, fresh from ``rng`` or replayed from a pool.

    ``consumed`` counts oracle calls, ``fresh`` counts newly drawn samples.
    """

    def __init__(self, model: GlrModel, rng: np.random.Generator, pool: SamplePool | None = None):
        self.model = model
        self.rng = rng
        self.pool = pool
        self.pos = 0
        self.consumed = 0
        self.fresh = 0

    def use_pool(self, pool: SamplePool | None) -> None:
        self.pool = pool
        self.pos = 0

    def take(self, rows: int):
        self.consumed += rows
        if self.pool is None:
            self.fresh += rows
            return draw_block(self.model, self.rng, rows)
        size = len(self.pool)
        idx = (self.pos + np.arange(rows)) % size
        self.pos = (self.pos + rows) % size
        if idx[0] + rows <= size:
            sl = slice(idx[0], idx[0] + rows)
            return self.pool.phi[sl], self.pool.eta[sl]
        return self.pool.phi[idx], self.pool.eta[idx]


@dataclass
class StageConfig:
    x0: np.ndarray
    R: float
    gamma: float | np.ndarray
    kappa: float
    m: int
    L: int = 1
    recycle_pool: SamplePool | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.m < 1 or self.L < 1:
            raise ValueError("m and L must be >= 1")
        if not self.R > 0:
            raise ValueError("R must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if g.size not in (1, self.m + 1):
            raise ValueError("gamma must be a scalar or hold gamma_0..gamma_m")
        if np.any(g <= 0):
            raise ValueError("step sizes must be positive")

    def step_sizes(self) -> np.ndarray:
        """gamma_0 .. gamma_m."""
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        return np.full(self.m + 1, g[0]) if g.size == 1 else g

    def validate(self, params: SolverParams) -> None:
        limit = 1.0 / (4.0 * params.nu)
        if float(np.max(self.step_sizes())) > limit * (1 + 1e-12):
            raise ValueError(f"step size exceeds 1/(4 nu) = {limit:.3g}")


@dataclass
class StageResult:
    x_hat: np.ndarray
    x_last: np.ndarray
    oracle_calls: int
    trace: list[Checkpoint] = field(default_factory=list)


def csmd_step(setup: ProxSetup, ball: LocalBall, x_prev, grad, gamma_prev: float, kappa: float,
              gamma_cur: float) -> np.ndarray:
    return composite_prox(setup, ball, gamma_prev * np.asarray(grad, dtype=float), x_prev,
                          gamma_cur * kappa)


class _Engine:
    """Compiled-kernel state of one stage: displacement u, dual y, weighted sum of u."""

    def __init__(self, setup: ProxSetup, x0, R, kappa, alpha):
        self.x0 = np.ascontiguousarray(x0, dtype=float)
        ball = LocalBall(self.x0, R)
        self.n = self.x0.shape[0]
        self.gb = kink_gradients(setup, ball)
        self.logw = math.log(ball.weight(setup))
        self.q = setup.q
        self.R = float(R)
        self.tol = prox_tolerance(R)
        self.kappa = float(kappa)
        self.alpha = float(alpha)
        self.u = np.zeros(self.n)
        self.y = np.zeros(self.n)
        self.xsum = np.zeros(self.n)
        self.wsum = 0.0
        self.centered = not np.any(self.x0)

    @property
    def x(self):
        return self.x0 + self.u

    def average(self):
        # averaging displacements keeps x_hat = x0 exact when nothing moves
        return self.x0 + self.xsum / self.wsum if self.wsum > 0 else self.x0.copy()

    def _check(self, status):
        if status != _kernels.OK:
            raise ProxError(f"CSMD step failed (status {status})")

    def run(self, source: SampleSource, L: int, gs, ps, aw, avg_after=False):
        """Iterations with per-iteration gradient steps gs, penalty steps ps, averaging weights aw."""
        k = len(gs)
        if L * self.n <= BLOCK_ELEMENTS:
            per_block = max(1, BLOCK_ELEMENTS // (L * self.n))
            for s in range(0, k, per_block):
                e = min(k, s + per_block)
                phi, eta = source.take((e - s) * L)
                self._check(_kernels.run_block(
                    phi, eta, L, e - s, gs[s:e], ps[s:e], aw[s:e], avg_after, self.kappa,
                    self.x0, self.gb, self.u, self.y, self.xsum, self.logw, self.q, self.R,
                    self.tol, MAX_BISECTION, self.alpha, self.centered))
                self.wsum += float(np.sum(aw[s:e]))
            return
        rows = max(1, BLOCK_ELEMENTS // self.n)
        a_buf, work = np.empty(self.n), _kernels.workspace(self.n)
        for i in range(k):
            x = self.x
            if not avg_after:
                self.xsum += aw[i] * self.u
            grad = np.zeros(self.n)
            left = L
            while left:
                r = min(rows, left)
                phi, eta = source.take(r)
                _kernels.accumulate_gradient(phi, eta, 0, r, x, self.alpha, grad)
                left -= r
            grad /= L
            self._check(_kernels.prox_step(grad, gs[i], ps[i], self.kappa, self.x0, self.gb,
                                           self.u, self.y, self.logw, self.q, self.R, self.tol,
                                           MAX_BISECTION, a_buf, self.centered, work))
            if avg_after:
                self.xsum += aw[i] * self.u
            self.wsum += aw[i]


def checkpoint_every(m: int, count: int = 50) -> int:
    return max(1, math.ceil(m / count))


def run_stage(model: GlrModel, setup: ProxSetup, cfg: StageConfig, rng=None, *,
              source: SampleSource | None = None, checkpoints: int = 50, stage: int = 0,
              phase: str = "", call_offset: int = 0) -> StageResult:
    """Run m iterations of (minibatch) CSMD from cfg.x0 on the ball of radius cfg.R.

    The output averages x_0 .. x_{m-1} with weights gamma_0 .. gamma_{m-1}.
    Either ``rng`` or a prepared ``source`` must be given; ``cfg.recycle_pool``
    switches the source to cyclic replay of that pool.
    """
    if source is None:
        if rng is None:
            raise ValueError("need an rng or a sample source")
        source = SampleSource(model, rng)
    if cfg.recycle_pool is not None:
        source.use_pool(cfg.recycle_pool)
    start = source.consumed
    g = cfg.step_sizes()
    eng = _Engine(setup, cfg.x0, cfg.R, cfg.kappa, model.alpha)

    def mark():
        calls = call_offset + source.consumed - start
        return make_checkpoint(model, eng.average(), eng.x, calls, source.fresh, stage, phase)

    trace = [mark()]
    every = checkpoint_every(cfg.m, checkpoints)
    i = 0
    while i < cfg.m:
        j = min(cfg.m, i + every)
        # iteration it (1-based) uses gamma_{it-1} on the gradient and gamma_it on the penalty
        eng.run(source, cfg.L, g[i:j], g[i + 1:j + 1], g[i:j])
        i = j
        trace.append(mark())
    if cfg.recycle_pool is not None:
        source.use_pool(None)
    return StageResult(eng.average(), eng.x, cfg.m * cfg.L, trace)
