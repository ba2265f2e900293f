"""Runs every (algorithm, repetition) pair of an experiment."""

from __future__ import annotations

import logging
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..baselines import BaselineConfig, run_rda, run_sgd, run_vanilla_smd
from ..glr import GlrModel, derive_params, default_domain_radius, make_rng
from ..geometry import ProxSetup
from ..multistage import build_schedule, default_confidence, run_csmd_sr
from ..trace import RunTrace
from .config import AlgorithmSpec, ExperimentConfig

log = logging.getLogger(__name__)

MODEL_STREAM = 0x4D4F44


def derive_seed(*keys: int) -> int:
    """64-bit seed from integer keys, stable across runs and platforms."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0])


def algorithm_key(alg_id: str) -> int:
    return zlib.crc32(alg_id.encode())


def build_model(cfg: ExperimentConfig, sigma: float, rep: int) -> GlrModel:
    # x* depends on the repetition only, so every algorithm and noise level sees the same target
    m = cfg.model
    return GlrModel.random(m.n, m.s, sigma, m.covariance_diagonal(), m.alpha, m.regressor_law,
                           seed=derive_seed(cfg.base_seed, MODEL_STREAM, rep))


def setup_run(cfg: ExperimentConfig, model: GlrModel):
    """Prox setup, start point, initial radius and solver constants of one run."""
    setup = ProxSetup.for_dimension(model.n)
    x0 = np.zeros(model.n)
    if cfg.initial_radius == "auto":
        R0 = float(np.abs(x0 - model.x_star).sum()) * cfg.radius_factor
    else:
        R0 = float(cfg.initial_radius)
    t = default_confidence(model, setup, cfg.budget, R0, x0) if cfg.t == "auto" else float(cfg.t)
    dr = default_domain_radius(model, x0, R0, cfg.budget, t)
    params = derive_params(model, setup, t, dr, cfg.budget, cfg.smoothness, cfg.minoration)
    return setup, x0, R0, params


def run_one(cfg: ExperimentConfig, sigma: float, alg: AlgorithmSpec, rep: int) -> RunTrace:
    label = cfg.label(alg, sigma)
    seed = derive_seed(cfg.base_seed, algorithm_key(label), rep)
    try:
        model = build_model(cfg, sigma, rep)
        setup, x0, R0, params = setup_run(cfg, model)
        rng = make_rng(seed)
        p = alg.params
        common = dict(label=label, seed=seed, repetition=rep)
        if alg.kind == "csmd_sr":
            sched = build_schedule(params, model.s, R0, cfg.budget, p["mode"], alg.schedule_constants())
            res = run_csmd_sr(model, setup, params, R0, x0, cfg.budget, p["mode"], rng,
                              schedule=sched, recycle=p.get("recycle", cfg.recycle),
                              checkpoints=cfg.checkpoints, **common)
            return res.trace
        if alg.kind == "vanilla_smd":
            R = p.get("R", R0 * p.get("radius_factor", 1.0))
            bc = BaselineConfig("vanilla_smd", cfg.budget, R=R, averaging=p.get("averaging"),
                                checkpoints=cfg.checkpoints)
            return run_vanilla_smd(model, setup, bc, x0, rng, params=params, **common)
        if alg.kind == "rda":
            bc = BaselineConfig("rda", cfg.budget, lam=p.get("lam"), beta0=p.get("beta0"),
                                averaging=p.get("averaging"), checkpoints=cfg.checkpoints)
            return run_rda(model, setup, bc, x0, rng, **common)
        bc = BaselineConfig("sgd", cfg.budget, gamma0=p.get("gamma0"), averaging=p.get("averaging"),
                            checkpoints=cfg.checkpoints)
        return run_sgd(model, bc, x0, rng, params=params, **common)
    except Exception as exc:  # a failed run is recorded, the grid goes on
        log.warning("run %s/%d failed: %s", label, rep, exc)
        return RunTrace(label, seed, repetition=rep, failed=f"{type(exc).__name__}: {exc}")


def _run_job(args):
    return run_one(*args)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[RunTrace]:
    """Traces of all runs, ordered as :meth:`ExperimentConfig.runs` regardless of scheduling."""
    jobs = [(cfg, sig, alg, rep) for sig, alg, rep in cfg.runs()]
    if threads <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_run_job, jobs))
