"""Experiment configuration files (YAML) and their validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..glr import REGRESSOR_LAWS
from ..multistage import MODES, ScheduleConstants

ALGORITHM_KINDS = ("csmd_sr", "vanilla_smd", "rda", "sgd")

# csmd_sr parameter -> ScheduleConstants field
_CSMD_OVERRIDES = {
    "m0_override": "m0",
    "m1_override": "m1",
    "ell1_override": "ell1",
    "K1_override": "K1",
    "m0_scale": "m0_scale",
    "r0_rule": "r0_rule",
    "fill_budget": "fill_budget",
}
_CONSTANT_NAMES = ("c_m0", "c_m1", "c_theta", "c_t", "c_ell", "nobatch_offset", "c_r0", "c_k1",
                   "c_skip", "c_kappa_nobatch")
_ALGO_PARAMS = {
    "csmd_sr": {"mode", "constants", "recycle", *_CSMD_OVERRIDES},
    "vanilla_smd": {"R", "radius_factor", "averaging"},
    "rda": {"lam", "beta0", "averaging"},
    "sgd": {"gamma0", "averaging"},
}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"invalid '{key}': {message}")


@dataclass(frozen=True)
class ModelSpec:
    n: int
    s: int
    sigmas: tuple[float, ...]
    covariance: object = 1.0
    alpha: float = 1.0
    regressor_law: str = "gaussian"

    def covariance_diagonal(self) -> np.ndarray:
        cov = self.covariance
        if isinstance(cov, dict):
            return np.linspace(cov["min"], cov.get("max", 1.0), self.n)
        return np.broadcast_to(np.asarray(cov, dtype=float), (self.n,)).copy()


@dataclass(frozen=True)
class AlgorithmSpec:
    kind: str
    id: str
    params: dict = field(default_factory=dict)

    def schedule_constants(self) -> ScheduleConstants:
        kw = {field_: self.params[key] for key, field_ in _CSMD_OVERRIDES.items() if key in self.params}
        kw.update(self.params.get("constants", {}))
        return ScheduleConstants(**kw)


@dataclass
class ExperimentConfig:
    name: str
    model: ModelSpec
    algorithms: list[AlgorithmSpec]
    budget: int
    repetitions: int = 20
    base_seed: int = 0
    checkpoints: int = 50
    output: str = "results"
    recycle: bool = False
    initial_radius: object = "auto"
    radius_factor: float = 1.0
    smoothness: object = "theory"
    minoration: object = "theory"
    t: object = "auto"
    raw: dict = field(default_factory=dict, repr=False)

    def runs(self) -> list[tuple[float, AlgorithmSpec, int]]:
        """All (sigma, algorithm, repetition) triples in a fixed order."""
        return [(sig, alg, rep) for sig in self.model.sigmas for alg in self.algorithms
                for rep in range(self.repetitions)]

    def label(self, alg: AlgorithmSpec, sigma: float) -> str:
        return alg.id if len(self.model.sigmas) == 1 else f"{alg.id}@sigma={sigma:g}"


def _need(d: dict, key: str, prefix: str = ""):
    if key not in d:
        raise ConfigError(prefix + key, "missing")
    return d[key]


def _int(v, key, lo=None):
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(key, f"must be >= {lo}")
    return int(v)


def _num(v, key, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(key, "must be positive")
    if nonneg and v < 0:
        raise ConfigError(key, "must be nonnegative")
    return float(v)


def _model(d) -> ModelSpec:
    if not isinstance(d, dict):
        raise ConfigError("model", "expected a mapping")
    n = _int(_need(d, "n", "model."), "n", 2)
    s = _int(_need(d, "s", "model."), "s", 1)
    if s > n:
        raise ConfigError("s", f"sparsity {s} exceeds dimension n={n}")
    sig = _need(d, "sigma", "model.")
    sigmas = tuple(_num(v, "sigma", nonneg=True) for v in (sig if isinstance(sig, list) else [sig]))
    if not sigmas:
        raise ConfigError("sigma", "empty list")
    cov = d.get("covariance", 1.0)
    if isinstance(cov, dict):
        unknown = set(cov) - {"min", "max"}
        if unknown or "min" not in cov:
            raise ConfigError("covariance", "expected {min: value, max: value}")
        lo = _num(cov["min"], "covariance", positive=True)
        hi = _num(cov.get("max", 1.0), "covariance", positive=True)
        if hi < lo:
            raise ConfigError("covariance", "max below min")
        cov = {"min": lo, "max": hi}
    elif isinstance(cov, list):
        if len(cov) != n:
            raise ConfigError("covariance", f"expected {n} entries")
        cov = tuple(_num(v, "covariance", positive=True) for v in cov)
    else:
        cov = _num(cov, "covariance", positive=True)
    alpha = _num(d.get("alpha", 1.0), "alpha")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha", "must lie in [0, 1]")
    law = d.get("regressor_law", "gaussian")
    if law not in REGRESSOR_LAWS:
        raise ConfigError("regressor_law", f"expected one of {REGRESSOR_LAWS}")
    unknown = set(d) - {"n", "s", "sigma", "covariance", "alpha", "regressor_law"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown model key")
    return ModelSpec(n, s, sigmas, cov, alpha, law)


def _algorithm(d, idx) -> AlgorithmSpec:
    if isinstance(d, str):
        d = {"kind": d}
    if not isinstance(d, dict):
        raise ConfigError(f"algorithms[{idx}]", "expected a mapping")
    kind = _need(d, "kind")
    if kind not in ALGORITHM_KINDS:
        raise ConfigError("kind", f"unknown algorithm {kind!r}")
    params = dict(d.get("params") or {})
    unknown = set(params) - _ALGO_PARAMS[kind]
    if unknown:
        raise ConfigError(sorted(unknown)[0], f"unknown parameter for {kind}")
    for key in ("R", "radius_factor", "gamma0", "beta0", "m0_scale"):
        if key in params:
            _num(params[key], key, positive=True)
    if "lam" in params:
        _num(params["lam"], "lam", nonneg=True)
    for key in ("m0_override", "m1_override", "ell1_override"):
        if key in params:
            _int(params[key], key, 1)
    if "K1_override" in params:
        _int(params["K1_override"], "K1_override", 0)
    if kind == "csmd_sr":
        mode = params.setdefault("mode", "nobatch")
        if mode not in MODES:
            raise ConfigError("mode", f"expected one of {MODES}")
        consts = params.get("constants") or {}
        bad = set(consts) - set(_CONSTANT_NAMES)
        if bad:
            raise ConfigError(sorted(bad)[0], "unknown schedule constant")
        for k, v in consts.items():
            _num(v, k, positive=True)
        if params.get("r0_rule", "lemma") not in ("lemma", "last"):
            raise ConfigError("r0_rule", "expected 'lemma' or 'last'")
    spec = AlgorithmSpec(kind, str(d.get("id", kind)), params)
    if kind == "csmd_sr":
        spec.schedule_constants()
    return spec


def parse_config(raw: dict, name: str = "experiment") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    raw = copy.deepcopy(raw)
    known = {"name", "model", "algorithms", "budget", "repetitions", "base_seed", "checkpoints",
             "output", "recycle", "initial_radius", "radius_factor", "smoothness", "minoration", "t"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    model = _model(_need(raw, "model"))
    algs = _need(raw, "algorithms")
    if not isinstance(algs, list) or not algs:
        raise ConfigError("algorithms", "expected a non-empty list")
    algorithms = [_algorithm(a, i) for i, a in enumerate(algs)]
    ids = [a.id for a in algorithms]
    if len(set(ids)) != len(ids):
        raise ConfigError("id", "algorithm ids must be unique")
    budget = _int(_need(raw, "budget"), "budget", 1)
    reps = _int(raw.get("repetitions", 20), "repetitions", 1)
    seed = _int(raw.get("base_seed", 0), "base_seed", 0)
    cps = _int(raw.get("checkpoints", 50), "checkpoints", 1)
    recycle = raw.get("recycle", False)
    if not isinstance(recycle, bool):
        raise ConfigError("recycle", "expected true or false")
    r0 = raw.get("initial_radius", "auto")
    if r0 != "auto":
        r0 = _num(r0, "initial_radius", positive=True)
    factor = _num(raw.get("radius_factor", 1.0), "radius_factor", positive=True)
    moduli = {}
    for key in ("smoothness", "minoration"):
        v = raw.get(key, "theory")
        moduli[key] = v if v in ("theory", "expected") else _num(v, key, positive=True)
    t = raw.get("t", "auto")
    if t != "auto":
        t = _num(t, "t", positive=True)
    return ExperimentConfig(
        name=str(raw.get("name", name)), model=model, algorithms=algorithms, budget=budget,
        repetitions=reps, base_seed=seed, checkpoints=cps, output=str(raw.get("output", "results")),
        recycle=recycle, initial_radius=r0, radius_factor=factor, t=t, raw=raw, **moduli,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValueError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, name=path.stem)
