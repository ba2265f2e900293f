"""Non-Euclidean l1 proximal setup.

The distance-generating function is ``theta(z) = (c / p) ||z||_p^p`` with
``p = 1 + 1 / ln n`` (``p = 2`` when ``n = 2``), rescaled on a ball of radius
``R`` around ``x0`` as ``R**2 * theta((z - x0) / R)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

TOL_ROOT = 1e-10
MAX_BISECTION = 200


class ProxError(RuntimeError):
    """The dual multiplier search did not converge."""


def prox_tolerance(radius: float) -> float:
    """Constraint-residual tolerance used by every prox call on a ball of this radius."""
    return 1e-9 * max(1.0, radius)


@dataclass(frozen=True)
class ProxSetup:
    n: int
    p: float
    c: float
    Theta: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be positive")
        if not 1.0 < self.p <= 2.0:
            raise ValueError(f"exponent p={self.p} outside (1, 2]")
        if self.c <= 0:
            raise ValueError("scale c must be positive")

    @classmethod
    def for_dimension(cls, n: int) -> "ProxSetup":
        if n < 2:
            raise ValueError("the l1 setup needs n >= 2")
        if n == 2:
            p, c = 2.0, 2.0
        else:
            p = 1.0 + 1.0 / math.log(n)
            c = math.e * math.log(n)
        return cls.with_exponent(n, p, c)

    @classmethod
    def with_exponent(cls, n: int, p: float, c: float) -> "ProxSetup":
        # theta is convex, so its max over the unit l1 ball sits at a vertex: c/p
        return cls(n=n, p=p, c=c, Theta=c / p)

    @property
    def q(self) -> float:
        return 1.0 / (self.p - 1.0)


@dataclass(frozen=True)
class LocalBall:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def weight(self, setup: ProxSetup) -> float:
        """Coefficient w with grad of the local d.g.f. equal to w sign(u)|u|^(p-1)."""
        return setup.c * self.radius ** (2.0 - setup.p)

    def contains(self, z: np.ndarray, tol: float = 0.0) -> bool:
        return float(np.abs(z - self.center).sum()) <= self.radius + tol


def _check(setup: ProxSetup, *vectors: np.ndarray) -> None:
    for v in vectors:
        if np.shape(v) != (setup.n,):
            raise ValueError(f"expected a vector of length {setup.n}, got shape {np.shape(v)}")


def _abs_pow(v: np.ndarray, e: float) -> np.ndarray:
    # |v|^e in log space; exact zeros stay zero
    av = np.abs(v)
    out = np.zeros_like(av, dtype=float)
    nz = av > 0
    out[nz] = np.exp(e * np.log(av[nz]))
    return out


def dgf_value(setup: ProxSetup, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    _check(setup, z)
    return setup.c / setup.p * float(_abs_pow(z, setup.p).sum())


def dgf_gradient(setup: ProxSetup, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    _check(setup, z)
    return setup.c * np.sign(z) * _abs_pow(z, setup.p - 1.0)


def local_dgf(setup: ProxSetup, ball: LocalBall, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=float)
    _check(setup, z, ball.center)
    return ball.radius ** 2 * dgf_value(setup, (z - ball.center) / ball.radius)


def local_dgf_gradient(setup: ProxSetup, ball: LocalBall, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    _check(setup, z, ball.center)
    return ball.radius * dgf_gradient(setup, (z - ball.center) / ball.radius)


def bregman(setup: ProxSetup, ball: LocalBall, x: np.ndarray, z: np.ndarray) -> float:
    """Bregman divergence V(x, z) of the local d.g.f. of ``ball``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    _check(setup, x, z)
    return (local_dgf(setup, ball, z) - local_dgf(setup, ball, x)
            - float(local_dgf_gradient(setup, ball, x) @ (z - x)))


def kink_gradients(setup: ProxSetup, ball: LocalBall) -> np.ndarray:
    """Gradient of the local d.g.f. at z = 0, the second kink of every scalar problem."""
    b = np.asarray(ball.center, dtype=float)
    return ball.weight(setup) * np.sign(-b) * _abs_pow(b, setup.p - 1.0)


def composite_prox(setup: ProxSetup, ball: LocalBall, zeta: np.ndarray, x: np.ndarray,
                   kappa: float) -> np.ndarray:
    """argmin over the ball of <zeta, z> + kappa ||z||_1 + V(x, z).

    Each coordinate is solved in closed form; the l1-ball constraint is handled
    by a one-dimensional search on its Lagrange multiplier.
    """
    z, _ = composite_prox_dual(setup, ball, zeta, x, kappa)
    return z


def composite_prox_dual(setup, ball, zeta, x, kappa):
    """Like :func:`composite_prox` but also returns the local d.g.f. gradient at the output."""
    zeta = np.asarray(zeta, dtype=float)
    x = np.asarray(x, dtype=float)
    center = np.asarray(ball.center, dtype=float)
    _check(setup, zeta, x, center)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if not np.all(np.isfinite(zeta)):
        raise ValueError("zeta must be finite")
    tol = prox_tolerance(ball.radius)
    if not ball.contains(x, tol):
        raise ValueError("x lies outside the ball")
    a = zeta - local_dgf_gradient(setup, ball, x)
    gb = kink_gradients(setup, ball)
    u = np.empty(setup.n)
    y = np.empty(setup.n)
    status, _, _ = _kernels.prox_solve(a, center, gb, float(kappa), math.log(ball.weight(setup)),
                                       setup.q, float(ball.radius), tol, MAX_BISECTION, u, y,
                                       not np.any(center), _kernels.workspace(setup.n))
    if status != _kernels.OK:
        raise ProxError(f"multiplier search failed (status {status})")
    return center + u, y


def prox_optimality_residual(setup, ball, zeta, x, kappa, z, dual=None) -> float:
    """Smallest violation of the first-order condition at z, in the sup norm.

    Searches the ball multiplier on a fine grid and, for each coordinate,
    picks the subgradient of kappa|.| and of lam|. - x0| closest to zero.
    ``dual`` is the local d.g.f. gradient at z when known exactly: for p near 1
    recomputing it from z loses displacements far below the center's rounding
    error.
    """
    center = np.asarray(ball.center, dtype=float)
    y = local_dgf_gradient(setup, ball, z) if dual is None else np.asarray(dual, dtype=float)
    g = np.asarray(zeta, float) - local_dgf_gradient(setup, ball, x) + y
    u = z - center
    tol = prox_tolerance(ball.radius)
    on_boundary = abs(np.abs(u).sum() - ball.radius) <= 10 * tol

    def residual(lam):
        lo = g.copy()
        hi = g.copy()
        for coef, v in ((kappa, z), (lam, u)):
            s = np.sign(v)
            zero = np.abs(v) <= 1e-12
            lo += np.where(zero, -coef, coef * s)
            hi += np.where(zero, coef, coef * s)
        return float(np.max(np.maximum(lo, 0) + np.maximum(-hi, 0)))

    if not on_boundary:
        return residual(0.0)
    lam_hi = float(np.max(np.abs(g))) + kappa + 1.0
    lams = np.linspace(0.0, lam_hi, 2001)
    vals = [residual(l) for l in lams]
    best = int(np.argmin(vals))
    lo_l = lams[max(best - 1, 0)]
    hi_l = lams[min(best + 1, len(lams) - 1)]
    for _ in range(100):
        m1 = lo_l + (hi_l - lo_l) / 3
        m2 = hi_l - (hi_l - lo_l) / 3
        if residual(m1) <= residual(m2):
            hi_l = m2
        else:
            lo_l = m1
    return min(min(vals), residual(0.5 * (lo_l + hi_l)))
