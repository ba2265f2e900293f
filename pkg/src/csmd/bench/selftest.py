"""Quick property checks that run without a test framework."""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..geometry import (LocalBall, ProxSetup, bregman, composite_prox_dual, dgf_gradient,
                        dgf_value, prox_optimality_residual)
from ..glr import GlrModel, SolverParams, draw_block, exact_gradient_linear, make_rng
from ..multistage import ScheduleConstants, build_schedule, radius_recursion_fixed_point


def check_bregman(rng) -> str | None:
    for n in (2, 10, 100):
        setup = ProxSetup.for_dimension(n)
        ball = LocalBall(np.zeros(n), 1.0)
        for _ in range(200):
            x = rng.standard_normal(n)
            z = rng.standard_normal(n)
            x /= max(1.0, np.abs(x).sum())
            z /= max(1.0, np.abs(z).sum())
            if bregman(setup, ball, x, z) < 0.5 * np.abs(x - z).sum() ** 2 - 1e-12:
                return f"strong convexity fails at n={n}"
    return None


def check_dgf_gradient(rng) -> str | None:
    setup = ProxSetup.for_dimension(50)
    # keep coordinates off 0, where central differences are inaccurate
    z = rng.choice([-1.0, 1.0], 50) * rng.uniform(0.05, 3.0, 50)
    h = 1e-6
    fd = np.array([(dgf_value(setup, z + h * e) - dgf_value(setup, z - h * e)) / (2 * h)
                   for e in np.eye(50)])
    err = np.max(np.abs(fd - dgf_gradient(setup, z)))
    return None if err <= 1e-6 * max(1.0, np.abs(fd).max()) else f"gradient mismatch {err:.2e}"


def check_prox(rng) -> str | None:
    for n, R, kappa in itertools.product((2, 20, 500), (0.5, 2.0), (0.0, 0.1, 1.0)):
        setup = ProxSetup.for_dimension(n)
        ball = LocalBall(rng.standard_normal(n), R)
        d = rng.standard_normal(n)
        x = ball.center + 0.9 * R * d / np.abs(d).sum()
        zeta = 3 * rng.standard_normal(n)
        z, y = composite_prox_dual(setup, ball, zeta, x, kappa)
        if np.abs(z - ball.center).sum() > R + 1e-9 * max(1, R):
            return f"prox leaves the ball (n={n})"
        res = prox_optimality_residual(setup, ball, zeta, x, kappa, z, y)
        if res > 1e-6:
            return f"prox optimality residual {res:.2e} (n={n}, R={R}, kappa={kappa})"
    return None


def check_unbiased(rng) -> str | None:
    model = GlrModel.random(10, 3, 0.1, seed=7)
    x = rng.standard_normal(10)
    phi, eta = draw_block(model, rng, 100_000)
    g = phi * (phi @ x - eta)[:, None]
    se = g.std(axis=0) / math.sqrt(len(eta))
    dev = np.abs(g.mean(axis=0) - exact_gradient_linear(model, x)) / se
    return None if dev.max() <= 5 else f"gradient mean off by {dev.max():.1f} standard errors"


def check_schedule(rng) -> str | None:
    p = SolverParams(nu=1.0, sigma_star=0.0, rho=1.0, delta=1.0, r_lower=1.0, r_upper=1.0,
                     nu_bar=1.0, t=10.0, Theta=1.0)
    sched = build_schedule(p, 1, 1.0, 38656, "nobatch", ScheduleConstants(fill_budget=False))
    if sched.m0_theory != 38656:
        return f"m0 = {sched.m0_theory}, expected 38656"
    if radius_recursion_fixed_point(8.0) != 4.0:
        return "radius recursion fixed point"
    return None


CHECKS = {
    "bregman strong convexity": check_bregman,
    "d.g.f. gradient": check_dgf_gradient,
    "composite prox": check_prox,
    "oracle unbiasedness": check_unbiased,
    "schedule arithmetic": check_schedule,
}


def run_selftest(seed: int = 0, out=print) -> bool:
    rng = make_rng(seed, 0x7E57)
    ok = True
    for name, fn in CHECKS.items():
        msg = fn(rng)
        out(f"{'PASS' if msg is None else 'FAIL'}  {name}" + ("" if msg is None else f": {msg}"))
        ok &= msg is None
    return ok
