import math

import numpy as np
import pytest

from csmd import _kernels


def _pow(v, q, shift):
    n = v.shape[0]
    out = np.empty(n)
    _kernels.pow_shifted(v, q, shift, out, np.empty(n, np.int64), np.empty(n, np.int64))
    return out


@pytest.mark.parametrize("q", [1.0, 2.0, 6.9, 11.5])
def test_pow_shifted_matches_numpy(q):
    rng = np.random.default_rng(int(q * 10))
    v = np.exp(rng.uniform(-40, 40, 5000))
    shift = 1.3
    ref = np.exp(np.minimum(q * (np.log(v) - shift), 700.0))
    got = _pow(v, q, shift)
    live = ref > 1e-300
    np.testing.assert_allclose(got[live], ref[live], rtol=1e-12)
    assert np.all(got[~live] <= 1e-300)


def test_pow_shifted_edge_values():
    v = np.array([0.0, 5e-324, 2.2250738585072014e-308, 1.0, 1e300])
    got = _pow(v, 2.0, 0.0)
    assert got[0] == 0.0 and got[1] == 0.0
    assert got[3] == 1.0
    assert got[4] == pytest.approx(math.exp(700.0), rel=1e-12)


def _random_coords(rng, n, centered):
    a = 3 * rng.standard_normal(n)
    b = np.zeros(n) if centered else rng.standard_normal(n) * (rng.uniform(size=n) < 0.7)
    w = 2.7
    q = 4.6
    # gradient of the local d.g.f. at z = 0, i.e. at u = -b
    gb = w * np.sign(-b) * np.abs(b) ** (1 / q)
    return a, b, gb, math.log(w), q


@pytest.mark.parametrize("centered", [True, False])
def test_norm_at_matches_scalar_reference(centered):
    rng = np.random.default_rng(11)
    n = 400
    work = _kernels.workspace(n)
    for _ in range(50):
        a, b, gb, logw, q = _random_coords(rng, n, centered)
        kappa = float(rng.choice([0.0, 0.1, 1.0]))
        lam = float(rng.choice([0.0, 0.3, 2.0]))
        u = np.empty(n)
        y = np.empty(n)
        h = _kernels._norm_at(a, b, gb, kappa, lam, logw, q, u, y, centered, work)
        ref = np.array([_kernels.coord_argmin(a[i], b[i], gb[i], kappa, lam, logw, q)[:2]
                        for i in range(n)])
        np.testing.assert_allclose(u, ref[:, 0], rtol=1e-11, atol=1e-300)
        np.testing.assert_allclose(y, ref[:, 1], rtol=1e-12)
        assert np.array_equal(u == 0, ref[:, 0] == 0)
        assert h == pytest.approx(np.abs(ref[:, 0]).sum(), rel=1e-11)


def test_coord_argmin_minimizes_scalar_problem():
    rng = np.random.default_rng(12)
    w, q = 2.0, 1.0
    p = 2.0
    for _ in range(200):
        a, b = rng.standard_normal(2)
        kappa, lam = rng.uniform(0, 1, 2)
        gb = w * np.sign(-b) * abs(b) ** (p - 1)
        u, _, _ = _kernels.coord_argmin(a, b, gb, kappa, lam, math.log(w), q)

        def f(t):
            return a * t + kappa * abs(t + b) + lam * abs(t) + w / p * abs(t) ** p

        grid = np.linspace(u - 1, u + 1, 20001)
        assert f(u) <= min(f(t) for t in grid) + 1e-12


def test_prox_solve_reports_non_convergence():
    n = 50
    rng = np.random.default_rng(13)
    a = rng.standard_normal(n) * 10
    b = np.zeros(n)
    u = np.empty(n)
    y = np.empty(n)
    status, _, _ = _kernels.prox_solve(a, b, np.zeros(n), 0.0, 0.0, 1.0, 1e-3, 1e-15, 1, u, y,
                                       True, _kernels.workspace(n))
    assert status == _kernels.NOT_CONVERGED
