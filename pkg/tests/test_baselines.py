import math

import numpy as np
import pytest

from csmd import _kernels
from csmd.baselines import (BaselineConfig, checkpoint_grid, rda_lambda, run_rda, run_sgd,
                            run_vanilla_smd, sgd_steps, smd_steps)
from csmd.geometry import LocalBall, ProxSetup, prox_tolerance
from csmd.glr import GlrModel, Sample, SolverParams, draw_block, make_rng, stochastic_gradient
from csmd.multistage import prepare
from csmd.stage import csmd_step

from oracles import brute_force_rda_point


def _params(nu=1.0, sigma_star=0.1, t=5.0, Theta=2.0):
    return SolverParams(nu=nu, sigma_star=sigma_star, rho=1.0, delta=1.0, r_lower=1.0,
                        r_upper=1.0, nu_bar=1.0, t=t, Theta=Theta)


def test_config_validation():
    assert BaselineConfig("rda", 10).average is False
    assert BaselineConfig("sgd", 10).average is True
    assert BaselineConfig("rda", 10, averaging=True).average is True
    for kw in (dict(kind="adam", N=10), dict(kind="sgd", N=0), dict(kind="sgd", N=5, gamma0=0.0),
               dict(kind="rda", N=5, lam=-1.0), dict(kind="vanilla_smd", N=5, R=-2.0)):
        with pytest.raises(ValueError):
            BaselineConfig(**kw)


def test_rda_lambda_example():
    assert rda_lambda(0.1, 100, 10_000) == pytest.approx(0.00607, abs=5e-6)


def test_checkpoint_grid():
    g = checkpoint_grid(10_000)
    assert g[0] == 1 and g[-1] == 10_000
    assert np.all(np.diff(g) > 0)
    assert np.array_equal(checkpoint_grid(3), [1, 2, 3])


def test_step_rules():
    p = _params()
    s = smd_steps(p, 2.0, 1000)
    i = np.arange(1, 1001)
    np.testing.assert_allclose(s, np.minimum(0.25, 20.0 * np.sqrt(7.0 / i)))
    assert np.all(smd_steps(_params(sigma_star=0.0), 2.0, 10) == 0.25)
    np.testing.assert_allclose(sgd_steps(p, 3.0, 100), np.minimum(0.5, 3.0 / np.sqrt(np.arange(1, 101))))


def _rda_point(gsum, i, lam, beta0, setup):
    """The dual averaging point for a frozen gradient sum, via one kernel step with a zero row."""
    n = gsum.shape[0]
    x = np.zeros(n)
    g = gsum.copy()
    _kernels.rda_block(np.zeros((1, n)), np.zeros(1), 1, i - 1, g, x, np.zeros(n), lam, beta0,
                       setup.c, setup.q, 1.0)
    return x


def test_rda_point_matches_oracle():
    setup = ProxSetup.for_dimension(8)
    rng = np.random.default_rng(1)
    for _ in range(10):
        gsum = 5 * rng.standard_normal(8)
        i = int(rng.integers(1, 50))
        lam = float(rng.uniform(0, 0.2))
        beta0 = float(rng.uniform(0.5, 3))
        x = _rda_point(gsum, i, lam, beta0, setup)
        ref = brute_force_rda_point(gsum, i * lam, beta0 * math.sqrt(i), setup)
        np.testing.assert_allclose(x, ref, atol=2e-4)


def test_rda_point_shrinkage():
    setup = ProxSetup.for_dimension(30)
    gsum = np.random.default_rng(2).standard_normal(30)
    assert not np.any(_rda_point(np.zeros(30), 7, 0.0, 1.0, setup))
    assert not np.any(_rda_point(gsum, 7, 1.0, 1.0, setup))
    nnz = [np.count_nonzero(_rda_point(gsum, 7, lam, 1.0, setup))
           for lam in np.linspace(0, 0.4, 41)]
    assert nnz[0] == 30 and nnz[-1] == 0
    assert all(b <= a for a, b in zip(nnz, nnz[1:]))


def test_rda_with_zero_gradients_stays_at_origin():
    model = GlrModel(np.zeros(6), 0.0, 1.0)
    setup = ProxSetup.for_dimension(6)
    tr = run_rda(model, setup, BaselineConfig("rda", 200, lam=0.0), np.zeros(6), make_rng(3))
    assert all(cp.err_l1 == 0.0 and cp.raw_err_l1 == 0.0 for cp in tr.checkpoints)


def test_rda_matches_reference_recursion():
    model = GlrModel.random(7, 2, 0.1, seed=4)
    setup = ProxSetup.for_dimension(7)
    lam, beta0 = 0.01, 1.5
    tr = run_rda(model, setup, BaselineConfig("rda", 40, lam=lam, beta0=beta0, averaging=True),
                 np.zeros(7), make_rng(5))
    rng = make_rng(5)
    phi, eta = draw_block(model, rng, 40)
    x = np.zeros(7)
    gsum = np.zeros(7)
    xsum = np.zeros(7)
    for i in range(1, 41):
        gsum += stochastic_gradient(model, x, Sample(phi[i - 1], eta[i - 1]))
        v = np.maximum(np.abs(gsum) - i * lam, 0.0)
        x = -np.sign(gsum) * (v / (beta0 * math.sqrt(i) * setup.c)) ** setup.q
        xsum += x
    final = tr.final()
    assert final.oracle_calls == 40
    assert final.raw_err_l1 == pytest.approx(np.abs(x - model.x_star).sum(), rel=1e-10)
    assert final.err_l1 == pytest.approx(np.abs(xsum / 40 - model.x_star).sum(), rel=1e-10)


def test_sgd_one_step_example():
    x_star = 0.3
    x = np.array([1.0])
    xsum = np.zeros(1)
    wsum = np.zeros(1)
    # phi = 1 and eta = phi x* give the exact gradient x - x*
    _kernels.sgd_block(np.ones((1, 1)), np.array([x_star]), 1, np.array([0.5]), x, xsum, wsum, 1.0)
    assert x[0] == pytest.approx(x_star + 0.5 * (1 - x_star))
    assert xsum[0] == pytest.approx(0.5 * x[0]) and wsum[0] == 0.5


def test_sgd_zero_gradients_and_accounting():
    model = GlrModel(np.zeros(5), 0.0, 1.0)
    tr = run_sgd(model, BaselineConfig("sgd", 300), np.zeros(5), make_rng(6), params=_params())
    assert tr.failed is None
    assert tr.final().oracle_calls == 300
    assert all(cp.err_l1 == 0.0 for cp in tr.checkpoints)


def test_sgd_divergence_guard():
    model = GlrModel.random(20, 3, 0.1, seed=7)
    tr = run_sgd(model, BaselineConfig("sgd", 2000, gamma0=50.0), np.zeros(20), make_rng(8),
                 params=_params(nu=1e-6))
    assert tr.failed is not None and "diverged" in tr.failed
    assert tr.final().oracle_calls < 2000


def test_vanilla_smd_stationary_and_in_ball():
    model = GlrModel.random(25, 3, 0.0, seed=9)
    setup = ProxSetup.for_dimension(25)
    params = _params(sigma_star=0.0)
    tr = run_vanilla_smd(model, setup, BaselineConfig("vanilla_smd", 500, R=1.0), model.x_star,
                         make_rng(10), params=params)
    assert all(cp.err_l1 == 0.0 and cp.raw_err_l1 == 0.0 for cp in tr.checkpoints)
    # x* = 0 and x0 = 0: the raw error is the l1 norm of the iterate
    noise = GlrModel(np.zeros(25), 3.0, 1.0)
    tr = run_vanilla_smd(noise, setup, BaselineConfig("vanilla_smd", 3000, R=0.3), np.zeros(25),
                         make_rng(11), params=_params(nu=0.1, sigma_star=3.0))
    assert tr.final().oracle_calls == 3000
    assert max(cp.raw_err_l1 for cp in tr.checkpoints) > 0.2
    assert all(cp.raw_err_l1 <= 0.3 + prox_tolerance(0.3) for cp in tr.checkpoints)


def test_vanilla_smd_matches_reference_recursion():
    model = GlrModel.random(9, 2, 0.2, seed=12)
    setup = ProxSetup.for_dimension(9)
    params = _params(nu=2.0, sigma_star=0.5)
    R = 1.5
    tr = run_vanilla_smd(model, setup, BaselineConfig("vanilla_smd", 30, R=R), np.zeros(9),
                         make_rng(13), params=params)
    phi, eta = draw_block(model, make_rng(13), 30)
    steps = smd_steps(params, R, 30)
    ball = LocalBall(np.zeros(9), R)
    x = np.zeros(9)
    xsum = np.zeros(9)
    for i in range(30):
        g = stochastic_gradient(model, x, Sample(phi[i], eta[i]))
        x = csmd_step(setup, ball, x, g, steps[i], 0.0, steps[i])
        xsum += steps[i] * x
    avg = xsum / steps.sum()
    assert tr.final().raw_err_l1 == pytest.approx(np.abs(x - model.x_star).sum(), rel=1e-9)
    assert tr.final().err_l1 == pytest.approx(np.abs(avg - model.x_star).sum(), rel=1e-9)


def test_baselines_consume_budget_on_common_cadence():
    model = GlrModel.random(40, 3, 0.05, seed=14)
    R0 = float(np.abs(model.x_star).sum())
    setup, params = prepare(model, 5000, R0, smoothness="expected")
    N = 5000
    traces = [
        run_vanilla_smd(model, setup, BaselineConfig("vanilla_smd", N, R=R0), np.zeros(40),
                        make_rng(15), params=params),
        run_rda(model, setup, BaselineConfig("rda", N), np.zeros(40), make_rng(15)),
        run_sgd(model, BaselineConfig("sgd", N), np.zeros(40), make_rng(15), params=params),
    ]
    expected = [0, *checkpoint_grid(N)]
    for tr in traces:
        assert tr.failed is None
        assert [cp.oracle_calls for cp in tr.checkpoints] == expected
        assert tr.final().samples == N
        assert tr.final().err_l1 < R0
