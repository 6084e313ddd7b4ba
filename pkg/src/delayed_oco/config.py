"""YAML experiment configuration with field-level validation.

See ``configs/example.yaml`` in the repository for the documented schema.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .geometry import DomainError
from .harness import (
    RATES,
    WRAPPERS,
    ConfigError,
    DelayGenerator,
    DomainSpec,
    EnvSpec,
    LossSpec,
    PlayerSpec,
    build_player,
)
from .losses import LossError
from .timeline import DelaySchedule, ScheduleError


@dataclass
class VerifySettings:
    random_schedules: int = 1000
    max_T: int = 200
    seed: int = 0
    learner_streams: int = 20


@dataclass
class ExperimentConfig:
    env: EnvSpec
    players: dict  # curve name -> PlayerSpec
    horizon: int = 1000
    T_grid: list = field(default_factory=lambda: [1024, 2048, 4096])
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "out"
    verify: VerifySettings = field(default_factory=VerifySettings)

    @property
    def player(self) -> PlayerSpec:
        return next(iter(self.players.values()))


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def _section(raw, path, allowed):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        _fail(path, "expected a mapping")
    extra = sorted(set(raw) - set(allowed))
    if extra:
        _fail(path, f"unknown keys {extra}; allowed {sorted(allowed)}")
    return raw


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        _fail(path, f"must be >= {lo}")
    return v


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        _fail(path, f"expected a finite number, got {v!r}")
    return float(v)


def _freeze(params):
    out = {}
    for k, v in params.items():
        out[k] = tuple(v) if isinstance(v, list) and not any(isinstance(x, dict) for x in v) else v
    return out


def parse_domain(raw) -> DomainSpec:
    d = _section(raw, "domain", {"kind", "dim", "radius", "lo", "hi"})
    kind = d.get("kind", "ball")
    if kind not in ("ball", "box"):
        _fail("domain.kind", f"unknown domain {kind!r}; choose ball or box")
    dim = _int(d.get("dim", 2), "domain.dim", 1)
    radius = _num(d.get("radius", 1.0), "domain.radius")
    if radius <= 0:
        _fail("domain.radius", "must be positive")
    lo, hi = d.get("lo"), d.get("hi")
    for name, v in (("lo", lo), ("hi", hi)):
        if v is not None and (not isinstance(v, list) or len(v) != dim):
            _fail(f"domain.{name}", f"expected a list of {dim} numbers")
    spec = DomainSpec(kind, dim, radius, None if lo is None else tuple(lo), None if hi is None else tuple(hi))
    try:
        spec.build()
    except DomainError as exc:
        _fail("domain", str(exc))
    return spec


def parse_loss(raw) -> LossSpec:
    d = _section(raw, "loss", {"kind", "params"})
    kind = d.get("kind", "linear")
    params = d.get("params", {}) or {}
    if not isinstance(params, dict):
        _fail("loss.params", "expected a mapping")
    return LossSpec(kind, _freeze(params))


def parse_delays(raw, base_dir: Path):
    d = _section(raw, "delays", {"kind", "d", "dmax", "p", "seed", "csv"})
    if "csv" in d:
        p = Path(d["csv"])
        if not p.is_absolute():
            p = base_dir / p
        try:
            return DelaySchedule.from_csv(p.read_text())
        except (OSError, ScheduleError, ValueError) as exc:
            _fail("delays.csv", str(exc))
    kw = {"kind": d.get("kind", "zero")}
    for key in ("d", "dmax", "seed"):
        if key in d and d[key] is not None:
            kw[key] = _int(d[key], f"delays.{key}", 0)
    if "p" in d:
        kw["p"] = _num(d["p"], "delays.p")
    try:
        return DelayGenerator(**kw)
    except ConfigError as exc:
        _fail("delays", str(exc))


_PLAYER_KEYS = {"wrapper", "learner", "rate", "eta", "smoothing", "smoothing_delta",
                "fixed_horizon_smoothing", "skip", "nu"}


def parse_player(raw, path) -> PlayerSpec:
    d = _section(raw, path, _PLAYER_KEYS)
    rate = d.get("rate")
    eta = d.get("eta")
    if isinstance(rate, str) and rate.startswith("fixed:"):
        eta = _num(float(rate.split(":", 1)[1]), f"{path}.rate")
        rate = "fixed"
    spec = PlayerSpec(
        wrapper=d.get("wrapper", "oco"),
        learner=d.get("learner", "pftrl"),
        rate=rate,
        eta=None if eta is None else _num(eta, f"{path}.eta"),
        smoothing=d.get("smoothing"),
        smoothing_delta=None if d.get("smoothing_delta") is None else _num(d["smoothing_delta"], f"{path}.smoothing_delta"),
        fixed_horizon_smoothing=bool(d.get("fixed_horizon_smoothing", False)),
        skip=bool(d.get("skip", False)),
        nu=None if d.get("nu") is None else _num(d["nu"], f"{path}.nu"),
    )
    if spec.wrapper not in WRAPPERS:
        _fail(f"{path}.wrapper", f"unknown wrapper {spec.wrapper!r}; choose from {WRAPPERS}")
    if spec.resolved_rate() not in RATES:
        _fail(f"{path}.rate", f"unknown rate schedule {spec.rate!r}; choose from {RATES}")
    if spec.learner not in ("pftrl", "omd"):
        _fail(f"{path}.learner", f"unknown learner {spec.learner!r}; choose pftrl or omd")
    return spec


def parse_config(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    top = _section(raw, "config", {"domain", "loss", "delays", "player", "players", "horizon",
                                   "T_grid", "seeds", "output", "verify"})
    env = EnvSpec(parse_domain(top.get("domain")), parse_loss(top.get("loss")),
                  parse_delays(top.get("delays"), base_dir))
    if "players" in top:
        if not isinstance(top["players"], dict) or not top["players"]:
            _fail("players", "expected a non-empty mapping of curve name to player")
        players = {str(k): parse_player(v, f"players.{k}") for k, v in top["players"].items()}
    else:
        players = {"default": parse_player(top.get("player"), "player")}
    horizon = _int(top.get("horizon", 1000), "horizon", 1)
    grid = top.get("T_grid", [1024, 2048, 4096])
    if not isinstance(grid, list) or not grid:
        _fail("T_grid", "expected a non-empty list of horizons")
    grid = [_int(v, f"T_grid[{i}]", 1) for i, v in enumerate(grid)]
    seeds = top.get("seeds", [0])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds:
        _fail("seeds", "expected a list of integers")
    seeds = [_int(v, f"seeds[{i}]", 0) for i, v in enumerate(seeds)]
    out = _section(top.get("output"), "output", {"dir"})
    vs = _section(top.get("verify"), "verify", {"random_schedules", "max_T", "seed", "learner_streams"})
    verify = VerifySettings(
        random_schedules=_int(vs.get("random_schedules", 1000), "verify.random_schedules", 0),
        max_T=_int(vs.get("max_T", 200), "verify.max_T", 1),
        seed=_int(vs.get("seed", 0), "verify.seed", 0),
        learner_streams=_int(vs.get("learner_streams", 20), "verify.learner_streams", 0),
    )
    cfg = ExperimentConfig(env, players, horizon, grid, seeds, str(out.get("dir", "out")), verify)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ExperimentConfig):
    """Build every player once on a short horizon to surface inconsistencies."""
    T = cfg.horizon
    if isinstance(cfg.env.delays, DelaySchedule):
        T = cfg.env.delays.horizon
        if cfg.horizon != T:
            _fail("horizon", f"differs from the delay CSV horizon {T}")
    domain = cfg.env.domain.build()
    try:
        family = cfg.env.loss.build(domain, T, cfg.seeds[0])
    except LossError as exc:
        _fail("loss", str(exc))
    for name, p in cfg.players.items():
        path = "player" if name == "default" and len(cfg.players) == 1 else f"players.{name}"
        try:
            build_player(p, family, domain, T, cfg.seeds[0])
        except (ConfigError, ValueError) as exc:
            _fail(path, str(exc))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = yaml.safe_load(p.read_text())
    except OSError as exc:
        raise ConfigError(f"config: cannot read {p}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML: {exc}") from None
    if raw is None:
        raw = {}
    return parse_config(raw, p.parent)
