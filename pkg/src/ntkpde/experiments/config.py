"""Experiment configuration: an INI file with one section per module.

Every key has a default, so an empty file is a valid (default) study.
``ExperimentConfig.load`` re-validates every module-level constraint.

    [problem]      domain, lower, upper, center, radius, operator,
                   operator_c, nu, velocity, solution, amplitude
    [network]      widths, beta, activation, seeds, c_bound, zero_output
    [clipping]     delta, epsilon
    [training]     dt, horizon, integrator, integral_mode, batch, mc_seed, stride
    [kernel]       m_mc, seed, chunk
    [grid]         resolution
    [spectral]     tau, horizon, euler_dt, n_modes, validation_resolution,
                   refine_resolution, refine_m_mc, refine_tau
    [observations] count, placement, points, seed
    [wide_limit]   t_star
    [deviation]    t, widths
    [kernel_check] widths, seeds, m_mc_reference, n_points, n_pairs
    [output]       dir
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from ..domain import DomainSpec
from ..errors import ConfigurationError
from ..network import ClippingSpec, InitDistribution, get_activation
from ..operator import NAMED_OPERATORS, NAMED_SOLUTIONS
from ..training import TrainConfig


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text) -> tuple:
    return tuple(int(round(v)) for v in _floats(text))


def _bool(text) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


@dataclass(frozen=True)
class ExperimentConfig:
    # problem
    domain: str = "interval"
    lower: tuple = (0.0,)
    upper: tuple = (1.0,)
    center: tuple = ()
    radius: float = 1.0
    operator: str = "neg_laplace"
    operator_c: float = 1.0
    nu: float = 1.0
    velocity: tuple = ()
    solution: str = "sine"
    amplitude: float = 1.0
    # network
    widths: tuple = (100, 400, 1600)
    beta: float = 0.6
    activation: str = "tanh"
    seeds: tuple = (0, 1, 2)
    c_bound: float = 1.0
    zero_output: bool = False
    # clipping
    delta: float = 0.05
    epsilon: float = 0.12
    # training
    dt: float = 0.01
    horizon: float = 1.0
    integrator: str = "rk4"
    integral_mode: str = "quadrature"
    batch: int = 1024
    mc_seed: int = 0
    stride: int = 10
    # kernel
    m_mc: int = 100_000
    kernel_seed: int = 0
    chunk: int = 4096
    # grid
    resolution: tuple = (16,)
    # spectral
    tau: float = 1e-10
    spectral_horizon: float = 20_000.0
    euler_dt: float = 0.02
    n_modes: int = 5
    validation_resolution: int = 64
    refine_resolution: tuple = (32,)
    refine_m_mc: int = 400_000
    refine_tau: float = 1e-12
    # observations
    obs_count: int = 3
    obs_placement: str = "equispaced"
    obs_points: tuple = ()
    obs_seed: int = 0
    # study specific
    t_star: float = 1.0
    deviation_t: float = 1.0
    deviation_widths: tuple = (100, 1000, 10_000)
    check_widths: tuple = (1000, 100_000)
    check_seeds: tuple = tuple(range(10))
    check_m_mc: int = 1_000_000
    check_points: int = 5
    check_pairs: int = 20
    out_dir: str = "out"

    def __post_init__(self):
        self.domain_spec()
        if self.operator not in NAMED_OPERATORS:
            raise ConfigurationError(f"unknown operator {self.operator!r}")
        if self.solution not in NAMED_SOLUTIONS and self.solution != "zero":
            raise ConfigurationError(f"unknown solution {self.solution!r}")
        get_activation(self.activation)
        self.clipping()
        self.train_config()
        InitDistribution(c_bound=self.c_bound)
        for name in ("widths", "deviation_widths", "check_widths"):
            ws = getattr(self, name)
            if len(ws) == 0 or any(w < 1 for w in ws) or list(ws) != sorted(set(ws)):
                raise ConfigurationError(f"{name} must be a nonempty increasing list")
        if len(self.seeds) == 0:
            raise ConfigurationError("need at least one seed")
        if self.m_mc < 1 or self.chunk < 1:
            raise ConfigurationError("kernel sample counts must be positive")
        if any(r < 2 for r in self.resolution):
            raise ConfigurationError("grid resolution must be at least 2")
        if not 0 < self.tau < 1:
            raise ConfigurationError("tau must lie in (0, 1)")
        if self.obs_count < 0:
            raise ConfigurationError("observation count must be non-negative")
        if self.obs_placement not in ("equispaced", "random", "explicit"):
            raise ConfigurationError(f"unknown placement {self.obs_placement!r}")

    @property
    def dim(self) -> int:
        return len(self.center) if self.domain == "ball" else len(self.lower)

    def domain_spec(self) -> DomainSpec:
        if self.domain == "ball":
            return DomainSpec.ball(self.center, self.radius)
        if self.domain == "interval":
            return DomainSpec("interval", 1, lower=self.lower, upper=self.upper)
        return DomainSpec.box(self.lower, self.upper)

    def clipping(self) -> ClippingSpec:
        return ClippingSpec(self.beta, self.delta, self.epsilon)

    def train_config(self, horizon: Optional[float] = None) -> TrainConfig:
        return TrainConfig(dt=self.dt, horizon=self.horizon if horizon is None else horizon,
                           integrator=self.integrator, integral_mode=self.integral_mode,
                           batch=self.batch, mc_seed=self.mc_seed, stride=self.stride)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def canonical(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    def quick(self) -> "ExperimentConfig":
        """Reduced sizes for smoke runs."""
        return self.replace(
            widths=tuple(w for w in self.widths if w <= 400) or self.widths[:1],
            m_mc=min(self.m_mc, 10_000), refine_m_mc=min(self.refine_m_mc, 40_000),
            spectral_horizon=min(self.spectral_horizon, 2_000.0),
            deviation_widths=tuple(w for w in self.deviation_widths if w <= 1000)
            or self.deviation_widths[:1],
            check_widths=(100, 10_000),
            check_seeds=self.check_seeds[:3], check_m_mc=min(self.check_m_mc, 50_000))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        n = len(self.seeds)
        return self.replace(seeds=tuple(range(seed, seed + n)), kernel_seed=seed,
                            mc_seed=seed, obs_seed=seed,
                            check_seeds=tuple(range(seed, seed + len(self.check_seeds))))

    # -- loading -------------------------------------------------------------

    _KEYS = {
        "problem": {"domain": str, "lower": _floats, "upper": _floats, "center": _floats,
                    "radius": float, "operator": str, "operator_c": float, "nu": float,
                    "velocity": _floats, "solution": str, "amplitude": float},
        "network": {"widths": _ints, "beta": float, "activation": str, "seeds": _ints,
                    "c_bound": float, "zero_output": _bool},
        "clipping": {"delta": float, "epsilon": float},
        "training": {"dt": float, "horizon": float, "integrator": str, "integral_mode": str,
                     "batch": int, "mc_seed": int, "stride": int},
        "kernel": {"m_mc": int, "seed": ("kernel_seed", int), "chunk": int},
        "grid": {"resolution": _ints},
        "spectral": {"tau": float, "horizon": ("spectral_horizon", float), "euler_dt": float,
                     "n_modes": int, "validation_resolution": int,
                     "refine_resolution": _ints, "refine_m_mc": int, "refine_tau": float},
        "observations": {"count": ("obs_count", int), "placement": ("obs_placement", str),
                         "points": ("obs_points", _floats), "seed": ("obs_seed", int)},
        "wide_limit": {"t_star": float},
        "deviation": {"t": ("deviation_t", float), "widths": ("deviation_widths", _ints)},
        "kernel_check": {"widths": ("check_widths", _ints), "seeds": ("check_seeds", _ints),
                         "m_mc_reference": ("check_m_mc", int),
                         "n_points": ("check_points", int), "n_pairs": ("check_pairs", int)},
        "output": {"dir": ("out_dir", str)},
    }

    @classmethod
    def from_parser(cls, parser: configparser.ConfigParser) -> "ExperimentConfig":
        values = {}
        for section in parser.sections():
            if section not in cls._KEYS:
                raise ConfigurationError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cls._KEYS[section]:
                    raise ConfigurationError(f"unknown key {key!r} in [{section}]")
                spec = cls._KEYS[section][key]
                name, conv = spec if isinstance(spec, tuple) else (key, spec)
                # ints written as 1e5 are common in this domain
                if conv is int:
                    conv = lambda s: int(round(float(s)))
                try:
                    values[name] = conv(raw)
                except ValueError as exc:
                    raise ConfigurationError(f"bad value for {section}.{key}: {raw!r}") from exc
        return cls(**values)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string(text)
        return cls.from_parser(parser)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())
