"""CSMD-SR: multistage restarts of CSMD on shrinking balls.

The schedule has a preliminary phase (fixed stage length, radius halved at
every stage) followed by an asymptotic phase that grows either the number of
iterations (``nobatch``) or the minibatch size (``minibatch``) four-fold per
stage. Default constants are the explicit ones from the convergence analysis;
each of them can be overridden through :class:`ScheduleConstants`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .geometry import ProxSetup
from .glr import GlrModel, SolverParams, default_domain_radius, derive_params
from .stage import SamplePool, SampleSource, StageConfig, run_stage
from .trace import RunTrace, make_checkpoint

log = logging.getLogger(__name__)

MODES = ("nobatch", "minibatch")
PRELIMINARY = "preliminary"
ASYMPTOTIC = "asymptotic"


@dataclass(frozen=True)
class ScheduleConstants:
    """Numeric constants of the schedule.

    ``m0``, ``m1`` and ``ell1`` replace the theoretical stage lengths when set
    (the theoretical values are usually far too large to be practical);
    ``m0_scale`` multiplies the theoretical ``m0`` instead, and ``K1`` fixes
    the number of preliminary stages. Penalties are always computed from the
    theoretical lengths.
    """

    c_m0: float = 64.0
    c_m1: float = 81.0
    c_theta: float = 4.0
    c_t: float = 60.0
    c_ell: float = 10.0
    nobatch_offset: int = 4
    c_r0: float = 8.0
    c_k1: float = 32.0
    c_skip: float = 2.0
    c_kappa_nobatch: float = 5.0
    m0: int | None = None
    m0_scale: float | None = None
    m1: int | None = None
    ell1: int | None = None
    r0_rule: str = "lemma"
    K1: int | None = None
    fill_budget: bool = True

    def __post_init__(self):
        if self.r0_rule not in ("lemma", "last"):
            raise ValueError("r0_rule must be 'lemma' or 'last'")
        for name in ("m0", "m1", "ell1"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.K1 is not None and self.K1 < 0:
            raise ValueError("K1 must be >= 0")
        if self.m0_scale is not None and self.m0_scale <= 0:
            raise ValueError("m0_scale must be positive")


@dataclass(frozen=True)
class StageEntry:
    k: int
    phase: str
    kappa: float
    gamma: float
    m: int
    L: int
    radius: float
    truncated: bool = False
    clamped: bool = False

    @property
    def calls(self) -> int:
        return self.m * self.L


@dataclass
class StageSchedule:
    entries: list[StageEntry]
    K1_max: float
    N: int
    mode: str
    m0: int
    m0_theory: int
    skip_preliminary: bool
    r0: float

    @property
    def total_calls(self) -> int:
        return sum(e.calls for e in self.entries)

    def phase(self, name: str) -> list[StageEntry]:
        return [e for e in self.entries if e.phase == name]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["entries"] = [asdict(e) for e in self.entries]
        return d


def _load(params: SolverParams, c: ScheduleConstants) -> float:
    return c.c_theta * params.Theta + c.c_t * params.t


def preliminary_length(params: SolverParams, s: int, c: ScheduleConstants | None = None) -> int:
    c = c or ScheduleConstants()
    return math.ceil(c.c_m0 * params.delta ** 2 * params.rho * params.nu * s * _load(params, c))


def minibatch_length(params: SolverParams, s: int, c: ScheduleConstants | None = None) -> int:
    c = c or ScheduleConstants()
    return math.ceil(c.c_m1 * params.delta ** 2 * params.rho * s * params.nu * _load(params, c))


def nobatch_length(params: SolverParams, s: int, k: int, c: ScheduleConstants | None = None) -> int:
    c = c or ScheduleConstants()
    return math.ceil(4.0 ** (k + c.nobatch_offset) * _load(params, c)
                     * params.delta ** 2 * params.rho * s * params.nu)


def batch_size(params: SolverParams, k: int, c: ScheduleConstants | None = None) -> int:
    c = c or ScheduleConstants()
    return math.ceil(c.c_ell * 4.0 ** (k - 1) * params.Theta)


def preliminary_stage_cap(params: SolverParams, s: int, R0: float,
                          c: ScheduleConstants | None = None) -> float:
    """K1 = ceil(1/2 log2(R0^2 nu / (32 sigma*^2 delta^2 rho s))); infinite without noise."""
    c = c or ScheduleConstants()
    den = c.c_k1 * params.sigma_star ** 2 * params.delta ** 2 * params.rho * s
    if den == 0.0:
        return math.inf
    return max(0, math.ceil(0.5 * math.log2(R0 ** 2 * params.nu / den)))


def skip_threshold(params: SolverParams, s: int, c: ScheduleConstants | None = None) -> float:
    c = c or ScheduleConstants()
    return c.c_skip * params.delta * params.sigma_star * math.sqrt(6.0 * params.rho * s / params.nu)


def lemma_r0(params: SolverParams, s: int, c: ScheduleConstants | None = None) -> float:
    c = c or ScheduleConstants()
    return c.c_r0 * params.delta * params.sigma_star * math.sqrt(2.0 * params.rho * s / params.nu)


def radius_recursion(R: float, a: float) -> float:
    """One step of the analysis recursion R -> R/2 + a/R."""
    return 0.5 * R + a / R


def radius_recursion_fixed_point(a: float) -> float:
    if a < 0:
        raise ValueError("a must be nonnegative")
    return math.sqrt(2.0 * a)


def analysis_radii(params: SolverParams, s: int, R0: float, K: int) -> list[float]:
    """R_0..R_K of the recursion R_{k+1} = R_k/2 + 16 sigma*^2 delta^2 rho s / (nu R_k)."""
    a = 16.0 * params.sigma_star ** 2 * params.delta ** 2 * params.rho * s / params.nu
    out = [float(R0)]
    for _ in range(K):
        out.append(radius_recursion(out[-1], a))
    return out


def build_schedule(params: SolverParams, s: int, R0: float, N: int, mode: str = "nobatch",
                   constants: ScheduleConstants | None = None) -> StageSchedule:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if N < 1:
        raise ValueError("budget N must be >= 1")
    if not R0 > 0:
        raise ValueError("R0 must be positive")
    c = constants or ScheduleConstants()
    nu, rho, delta, sig = params.nu, params.rho, params.delta, params.sigma_star
    load = _load(params, c)
    gamma = 1.0 / (4.0 * nu)

    m0_th = preliminary_length(params, s, c)
    if c.m0 is not None:
        m0 = c.m0
    elif c.m0_scale is not None:
        m0 = max(1, math.ceil(c.m0_scale * m0_th))
    else:
        m0 = m0_th
    kappa_unit = math.sqrt(nu * load / (rho * s * m0_th))

    K1 = preliminary_stage_cap(params, s, R0, c) if c.K1 is None else c.K1
    skip = c.K1 is None and sig > 0 and R0 < skip_threshold(params, s, c)
    entries: list[StageEntry] = []
    left = N

    if not skip:
        R = float(R0)
        k = 1
        while k <= K1 and left >= m0:
            entries.append(StageEntry(k, PRELIMINARY, R * kappa_unit, gamma, m0, 1, R))
            left -= m0
            R /= 2
            k += 1
        if not entries and K1 >= 1:
            # not even one full stage fits: run what the budget allows
            entries.append(StageEntry(1, PRELIMINARY, R * kappa_unit, gamma, N, 1, R, truncated=True))
            left = 0

    prelim = [e for e in entries if e.phase == PRELIMINARY]
    if skip:
        r0 = float(R0)
    elif c.r0_rule == "last" and prelim:
        r0 = prelim[-1].radius / 2
    else:
        r0 = lemma_r0(params, s, c)

    next_stage = None
    if sig == 0.0:
        # without noise the preliminary phase never ends
        if prelim and not prelim[-1].truncated and left > 0:
            last = prelim[-1]
            next_stage = StageEntry(last.k + 1, PRELIMINARY, last.radius / 2 * kappa_unit, gamma,
                                    m0, 1, last.radius / 2)
    elif left > 0 and not (prelim and prelim[-1].truncated):
        if mode == "minibatch":
            m1_th = minibatch_length(params, s, c)
            m1 = c.m1 if c.m1 is not None else (c.m0 if c.m0 is not None else m1_th)
            unit = math.sqrt(nu * load / (rho * s * m1_th))
            k = 1
            while True:
                L = c.ell1 * 4 ** (k - 1) if c.ell1 is not None else batch_size(params, k, c)
                r = r0 / 2 ** (k - 1)
                e = StageEntry(k, ASYMPTOTIC, r * unit, gamma, m1, L, r)
                if e.calls > left:
                    next_stage = e
                    break
                entries.append(e)
                left -= e.calls
                k += 1
        else:
            m1 = c.m1 if c.m1 is not None else c.m0
            k = 1
            while True:
                mk_th = nobatch_length(params, s, k, c)
                mk = m1 * 4 ** (k - 1) if m1 is not None else mk_th
                r = r0 / 2 ** (k - 1)
                g = r / (2.0 * sig) * math.sqrt(load / (2.0 * mk))
                clamped = g > gamma
                if clamped:
                    log.info("asymptotic stage %d: step size %.3g clamped to 1/(4 nu)", k, g)
                    g = gamma
                kap = math.sqrt(c.c_kappa_nobatch * sig * r / (rho * s) * math.sqrt(load / mk_th))
                e = StageEntry(k, ASYMPTOTIC, kap, g, mk, 1, r, clamped=clamped)
                if e.calls > left:
                    next_stage = e
                    break
                entries.append(e)
                left -= e.calls
                k += 1

    if c.fill_budget and next_stage is not None and left >= next_stage.L:
        entries.append(replace(next_stage, m=left // next_stage.L, truncated=True))
    return StageSchedule(entries, K1, N, mode, m0, m0_th, skip, r0)


def default_confidence(model: GlrModel, setup: ProxSetup, N: int, R0: float,
                       x0: np.ndarray | None = None, constants: ScheduleConstants | None = None,
                       domain_radius: float | None = None, max_iter: int = 50) -> float:
    """Fixed point of t = max(1, 4 sqrt(2 + ln m0(t)))."""
    x0 = np.zeros(model.n) if x0 is None else x0
    t = 1.0
    for _ in range(max_iter):
        dr = domain_radius or default_domain_radius(model, x0, R0, N, t)
        params = derive_params(model, setup, t, dr, N)
        new = max(1.0, 4.0 * math.sqrt(2.0 + math.log(preliminary_length(params, model.s, constants))))
        if abs(new - t) <= 1e-9 * new:
            return new
        t = new
    return t


def rsc_diagnostic(model: GlrModel, params: SolverParams, kappa: float, upsilon: float) -> float:
    """Error bound delta [rho s kappa + upsilon / kappa]."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return params.delta * (params.rho * model.s * kappa + upsilon / kappa)


def stage_upsilon(params: SolverParams, entry: StageEntry) -> float:
    """Deviation bound of the penalized objective after one stage."""
    R, m, g = entry.radius, entry.m, entry.gamma
    noise = params.sigma_star ** 2
    if entry.L > 1:
        noise *= 10.0 * params.Theta / entry.L
    return (R * R * (params.Theta + 15.0 * params.t) / (m * g) + entry.kappa * R / m
            + noise * g * (7.0 + 24.0 * params.t / m))


@dataclass
class SrResult:
    x_hat: np.ndarray
    stage_log: list[dict]
    trace: RunTrace
    schedule: StageSchedule
    fresh_samples: int = 0
    oracle_calls: int = 0


def run_csmd_sr(model: GlrModel, setup: ProxSetup, params: SolverParams, R0: float,
                x0: np.ndarray, N: int, mode: str = "nobatch", rng: np.random.Generator | None = None,
                *, constants: ScheduleConstants | None = None, schedule: StageSchedule | None = None,
                recycle: bool = False, checkpoints: int = 50, label: str = "csmd_sr",
                seed: int = 0, repetition: int = 0) -> SrResult:
    """Run the schedule stage by stage, re-centering at each stage's averaged output.

    With ``recycle`` the samples of the first stage are drawn once and replayed
    (cyclically, from the start) by every stage.
    """
    if rng is None:
        raise ValueError("an rng is required")
    if schedule is None:
        schedule = build_schedule(params, model.s, R0, N, mode, constants)
    source = SampleSource(model, rng)
    pool = None
    if recycle and schedule.entries:
        pool = SamplePool.draw(model, rng, schedule.entries[0].calls)
        source.fresh += len(pool)
    x = np.array(x0, dtype=float)
    trace = RunTrace(label, seed, repetition=repetition)
    calls = 0
    for idx, e in enumerate(schedule.entries):
        cfg = StageConfig(x, e.radius, e.gamma, e.kappa, e.m, e.L, recycle_pool=pool)
        cfg.validate(params)
        res = run_stage(model, setup, cfg, source=source, checkpoints=checkpoints, stage=idx + 1,
                        phase=e.phase, call_offset=calls)
        calls += res.oracle_calls
        trace.checkpoints.extend(res.trace if idx == 0 else res.trace[1:])
        x = res.x_hat
        err = float(np.abs(x - model.x_star).sum())
        upsilon = stage_upsilon(params, e)
        trace.stages.append({
            "stage": idx + 1, "phase": e.phase, "k": e.k, "radius": e.radius, "kappa": e.kappa,
            "gamma": e.gamma, "m": e.m, "L": e.L, "truncated": e.truncated, "clamped": e.clamped,
            "err_l1": err, "oracle_calls": calls, "fresh_samples": source.fresh,
            "rsc_bound": rsc_diagnostic(model, params, e.kappa, upsilon) if e.kappa > 0 else None,
        })
    if not trace.checkpoints:
        trace.checkpoints.append(make_checkpoint(model, x, x, 0, 0))
    return SrResult(x, trace.stages, trace, schedule, source.fresh, calls)


def prepare(model: GlrModel, N: int, R0: float, x0: np.ndarray | None = None,
            t: float | None = None, constants: ScheduleConstants | None = None,
            domain_radius: float | None = None,
            smoothness: str | float = "theory",
            minoration: str | float = "theory") -> tuple[ProxSetup, SolverParams]:
    """Prox setup and solver constants for a model, with the default confidence level."""
    setup = ProxSetup.for_dimension(model.n)
    x0 = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)
    if t is None:
        t = default_confidence(model, setup, N, R0, x0, constants, domain_radius)
    dr = domain_radius or default_domain_radius(model, x0, R0, N, t)
    return setup, derive_params(model, setup, t, dr, N, smoothness, minoration)
