"""Sparse generalized linear regression: instances, sampling and the gradient oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .geometry import ProxSetup

REGRESSOR_LAWS = ("gaussian", "bounded-scaled")


def make_rng(*key: int) -> np.random.Generator:
    """Independent, reproducible generator for an integer key (seed, stream ids...)."""
    return np.random.Generator(np.random.SFC64(np.random.SeedSequence(list(key))))


@dataclass(frozen=True)
class GlrModel:
    x_star: np.ndarray
    sigma: float
    covariance: np.ndarray
    alpha: float = 1.0
    regressor_law: str = "gaussian"
    seed: int = 0
    s: int = field(init=False)

    def __post_init__(self):
        x = np.asarray(self.x_star, dtype=float)
        cov = np.broadcast_to(np.asarray(self.covariance, dtype=float), x.shape).copy()
        object.__setattr__(self, "x_star", x)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "s", int(np.count_nonzero(x)))
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if np.any(cov <= 0):
            raise ValueError("covariance entries must be positive")
        if self.regressor_law not in REGRESSOR_LAWS:
            raise ValueError(f"unknown regressor law {self.regressor_law!r}")

    @property
    def n(self) -> int:
        return self.x_star.shape[0]

    @property
    def kappa_sigma(self) -> float:
        return float(self.covariance.min())

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.x_star)

    @classmethod
    def random(cls, n: int, s: int, sigma: float, covariance=1.0, alpha: float = 1.0,
               regressor_law: str = "gaussian", seed: int = 0) -> "GlrModel":
        """Draw x* with ``s`` standard-normal entries on a uniformly random support."""
        if not 1 <= s <= n:
            raise ValueError(f"sparsity s={s} must lie in [1, n={n}]")
        rng = make_rng(seed, 0x5EED)
        x = np.zeros(n)
        idx = rng.choice(n, size=s, replace=False)
        vals = rng.standard_normal(s)
        vals[vals == 0.0] = 1.0
        x[idx] = vals
        return cls(x, sigma, covariance, alpha, regressor_law, seed)


@dataclass(frozen=True)
class Sample:
    phi: np.ndarray
    eta: float


@dataclass(frozen=True)
class SolverParams:
    nu: float
    sigma_star: float
    rho: float
    delta: float
    r_lower: float
    r_upper: float
    nu_bar: float
    t: float
    Theta: float


def activation(alpha: float, tval):
    """Odd, non-decreasing activation: identity on [-1, 1], |t|^alpha growth outside.

    ``alpha = 0`` uses the limiting log branch ``sign(t) (ln|t| + 1)``.
    """
    t = np.asarray(tval, dtype=float)
    at = np.abs(t)
    out = t.copy()
    outer = at > 1.0
    if alpha != 1.0 and np.any(outer):
        ao = at[outer]
        v = np.log(ao) + 1.0 if alpha == 0.0 else (ao ** alpha - 1.0) / alpha + 1.0
        out[outer] = np.sign(t[outer]) * v
    return float(out) if out.ndim == 0 else out


def activation_moduli(alpha: float, domain_radius: float) -> tuple[float, float]:
    """(strong-monotonicity, Lipschitz) moduli of the activation on [-radius, radius]."""
    if domain_radius <= 0:
        raise ValueError("domain_radius must be positive")
    if domain_radius <= 1.0 or alpha == 1.0:
        return 1.0, 1.0
    if alpha == 0.0:
        return 1.0 / domain_radius, 1.0
    return min(1.0, domain_radius ** (alpha - 1.0)), 1.0


def _response(model: GlrModel, phi: np.ndarray, noise: np.ndarray) -> np.ndarray:
    supp = model.support
    out = np.empty(phi.shape[0])
    _kernels.response(phi, supp, model.x_star[supp], float(model.alpha), float(model.sigma),
                      np.ascontiguousarray(noise), out)
    return out


def draw_block(model: GlrModel, rng: np.random.Generator, rows: int) -> tuple[np.ndarray, np.ndarray]:
    """``rows`` i.i.d. samples; row i uses the same n + 1 normals as the i-th :func:`draw_sample`."""
    z = rng.standard_normal((rows, model.n + 1))
    phi = z[:, :model.n]
    if model.regressor_law == "bounded-scaled":
        np.sign(phi, out=phi)
    if not np.all(model.covariance == 1.0):
        phi *= np.sqrt(model.covariance)
    eta = _response(model, phi, z[:, model.n])
    return phi, eta


def draw_sample(model: GlrModel, rng: np.random.Generator) -> Sample:
    phi, eta = draw_block(model, rng, 1)
    return Sample(phi[0], float(eta[0]))


def stochastic_gradient(model: GlrModel, x: np.ndarray, sample: Sample) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError(f"expected a vector of length {model.n}")
    out = np.zeros(model.n)
    phi = np.ascontiguousarray(sample.phi, dtype=float)[None, :]
    _kernels.accumulate_gradient(phi, np.array([sample.eta]), 0, 1, x, float(model.alpha), out)
    return out


def minibatch_gradient(model: GlrModel, x: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    """Mean of ``L`` stochastic gradients at ``x`` drawn from ``rng``."""
    if L < 1:
        raise ValueError("batch size must be >= 1")
    x = np.asarray(x, dtype=float)
    phi, eta = draw_block(model, rng, L)
    out = np.zeros(model.n)
    _kernels.accumulate_gradient(phi, eta, 0, L, x, float(model.alpha), out)
    return out / L


def exact_gradient_linear(model: GlrModel, x: np.ndarray) -> np.ndarray:
    _require_linear(model)
    return model.covariance * (np.asarray(x, dtype=float) - model.x_star)


def exact_objective_linear(model: GlrModel, x: np.ndarray) -> float:
    """g(x) = 1/2 ||x - x*||_S^2 - 1/2 ||x*||_S^2 for the identity activation."""
    _require_linear(model)
    d = np.asarray(x, dtype=float) - model.x_star
    return 0.5 * float(model.covariance @ d ** 2) - 0.5 * float(model.covariance @ model.x_star ** 2)


def _require_linear(model: GlrModel) -> None:
    if model.alpha != 1.0:
        raise ValueError("closed-form objective exists only for alpha = 1")


def effective_regressor_bound(model: GlrModel, N: int, t: float) -> float:
    """Bound on ||phi||_inf used in place of an almost-sure bound.

    Gaussian regressors: max sqrt(Sigma_jj) * sqrt(ln(N n) + t).
    """
    kappa = math.sqrt(float(model.covariance.max()))
    if model.regressor_law == "bounded-scaled":
        return kappa
    return kappa * math.sqrt(math.log(max(N, 1) * model.n) + t)


def expected_smoothness(model: GlrModel, r_upper: float = 1.0) -> float:
    """Lipschitz constant of grad g from l1 to l_inf: r_upper * max_j Sigma_jj."""
    return r_upper * float(model.covariance.max())


def expected_minoration(model: GlrModel, points: int = 20001) -> float:
    """Curvature of the expected loss at x* in the Sigma-norm.

    The Hessian there is E[r'(phi^T x*) phi phi^T]; treating phi^T x* as
    N(0, v) with v = x*^T Sigma x*, its smallest eigenvalue relative to Sigma
    is min(E[r'], E[r' t^2] / v). Unlike the worst case over the domain this
    ignores how far iterates wander from x*.
    """
    v = float(model.covariance @ (model.x_star ** 2))
    if model.alpha == 1.0 or v == 0.0:
        return 1.0
    sd = math.sqrt(v)
    t = np.linspace(-12.0 * sd, 12.0 * sd, points)
    dens = np.exp(-0.5 * (t / sd) ** 2)
    dens /= np.trapezoid(dens, t)
    at = np.maximum(np.abs(t), 1.0)
    slope = at ** (model.alpha - 1.0) if model.alpha > 0.0 else 1.0 / at
    e1 = float(np.trapezoid(slope * dens, t))
    e2 = float(np.trapezoid(slope * t * t * dens, t)) / v
    return min(1.0, e1, e2)


def _modulus(rule, name, theory, expected):
    if rule == "theory":
        return theory
    if rule == "expected":
        return expected()
    if isinstance(rule, (int, float)) and not isinstance(rule, bool) and rule > 0:
        return float(rule)
    raise ValueError(f"invalid {name} {rule!r}")


def derive_params(model: GlrModel, setup: ProxSetup, t: float, domain_radius: float,
                  N: int, smoothness: str | float = "theory",
                  minoration: str | float = "theory") -> SolverParams:
    """Solver constants of the model.

    ``smoothness`` selects nu: ``"theory"`` uses the regressor bound
    (r_upper * nu_bar^2), ``"expected"`` the smoothness of the expected loss
    (see :func:`expected_smoothness`), and a number is used as is.
    ``minoration`` selects r_lower the same way: the activation's worst slope
    over the domain, :func:`expected_minoration`, or a number.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    nu_bar = effective_regressor_bound(model, N, t)
    r_lower, r_upper = activation_moduli(model.alpha, domain_radius)
    r_lower = _modulus(minoration, "minoration", r_lower, lambda: expected_minoration(model))
    nu = _modulus(smoothness, "smoothness", r_upper * nu_bar ** 2,
                  lambda: expected_smoothness(model, r_upper))
    return SolverParams(
        nu=nu,
        sigma_star=model.sigma * nu_bar,
        rho=1.0 / (model.kappa_sigma * r_lower),
        delta=1.0,
        r_lower=r_lower,
        r_upper=r_upper,
        nu_bar=nu_bar,
        t=t,
        Theta=setup.Theta,
    )


def default_domain_radius(model: GlrModel, x0: np.ndarray, R: float, N: int, t: float) -> float:
    nu_bar = effective_regressor_bound(model, N, t)
    return nu_bar * (float(np.abs(x0).sum()) + R + float(np.abs(model.x_star).sum()))
