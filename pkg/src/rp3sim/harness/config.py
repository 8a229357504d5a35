"""Strict TOML configuration for simulation experiments.

The format is flat typed key-value pairs grouped in sections. Unknown keys are
rejected with their full path; defaults are filled in and echoed back through
`SimConfig.to_dict`, so the resolved configuration is always serializable.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib


class ConfigError(Exception):
    pass


_ALGORITHMS = ("rp3", "ppp")
_GENERATORS = ("cycle-plus-random", "grid-with-diagonals", "erdos-renyi")
_PROBLEMS = ("consensus", "tracking", "quadratic")
_CONSTRAINTS = ("box", "ball", "all-space")
_S_KINDS = ("linear", "poly", "exp", "auto-linear", "none")
_X_KINDS = ("none", "poly", "exp")
_ATTACKS = ("none", "signed-extreme", "extreme-constant", "gradient-poison")
_MODES = ("compact", "unbounded")


@dataclass
class RunSection:
    algorithm: str = "rp3"
    iterations: int = 1000
    seed: int = 0
    replications: int = 1
    observation_window: int = 0
    early_stop: float | None = None
    record_trajectory: bool = False


@dataclass
class TopologySection:
    generator: str = "cycle-plus-random"
    file: str | None = None
    n_legitimate: int = 10
    n_malicious: int = 0
    edge_prob: float = 0.3
    attach_prob: float = 0.7
    undirected: bool = True
    seed: int | None = None  # set to share one topology across replications


@dataclass
class TrustSection:
    legit_low: float = 0.35
    legit_high: float = 0.75
    malicious_low: float = 0.25
    malicious_high: float = 0.65
    pc_second_coefficient: str = "NL"


@dataclass
class ProblemSection:
    kind: str = "consensus"
    dim: int = 1
    value_low: float = -50.0
    value_high: float = 50.0
    seed: int | None = None  # set to share one instance across replications
    horizon: int = 10
    process_noise: float = 0.01
    obs_noise: float = 0.1
    prior_cov: float = 1.0
    observation_radius: float = math.inf
    robot_spacing: float = 4.0


@dataclass
class ConstraintSection:
    kind: str = "box"
    lo: float = -50.0
    hi: float = 50.0
    radius: float = 50.0


@dataclass
class SetsSection:
    mode: str = "compact"
    s_kind: str = "auto-linear"
    s_theta: float = 1.0
    s_coeff: float = 0.1
    s_power: float = 2.0
    s_rate: float = 0.002
    s_margin: float = 2.0
    x_kind: str = "none"
    x_coeff: float = 0.1
    x_power: float = 1.0
    x_rate: float = 0.001


@dataclass
class StepsSection:
    eta: float | str = "auto"
    lam: float | str = "auto"
    safety: float = 0.5


@dataclass
class AttackSection:
    kind: str = "signed-extreme"
    value: float = -50.0


@dataclass
class OutputSection:
    dir: str = "results"
    per_run_csv: bool = True
    aggregate_csv: bool = True
    bounds_csv: bool = True
    observation_log: bool = False
    trajectory_csv: bool = False


@dataclass
class SimConfig:
    run: RunSection = field(default_factory=RunSection)
    topology: TopologySection = field(default_factory=TopologySection)
    trust: TrustSection = field(default_factory=TrustSection)
    problem: ProblemSection = field(default_factory=ProblemSection)
    constraint: ConstraintSection = field(default_factory=ConstraintSection)
    sets: SetsSection = field(default_factory=SetsSection)
    steps: StepsSection = field(default_factory=StepsSection)
    attack: AttackSection = field(default_factory=AttackSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        for sec in d.values():
            for key, val in sec.items():
                if isinstance(val, float) and math.isinf(val):
                    sec[key] = "inf"
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


_SECTIONS = {
    "run": RunSection,
    "topology": TopologySection,
    "trust": TrustSection,
    "problem": ProblemSection,
    "constraint": ConstraintSection,
    "sets": SetsSection,
    "steps": StepsSection,
    "attack": AttackSection,
    "output": OutputSection,
}

_OPTIONAL_NONE = {
    ("run", "early_stop"),
    ("topology", "file"),
    ("topology", "seed"),
    ("problem", "seed"),
}


def _coerce(section: str, key: str, value, default):
    path = f"{section}.{key}"
    if key == "eta" or key == "lam":
        if isinstance(value, str):
            if value != "auto":
                raise ConfigError(f"{path}: expected a number or 'auto', got {value!r}")
            return value
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{path}: expected a number or 'auto'")
    if (section, key) in _OPTIONAL_NONE:
        if key == "file":
            if not isinstance(value, str):
                raise ConfigError(f"{path}: expected a string path")
            return value
        if isinstance(value, bool):
            raise ConfigError(f"{path}: expected a number, got a boolean")
        if key == "early_stop" and isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, int):
            return value
        raise ConfigError(f"{path}: expected an integer")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if value == "inf":
            return math.inf
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported value {value!r}")


def parse_config_text(text: str) -> SimConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    cfg = SimConfig()
    for section, payload in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(payload, dict):
            raise ConfigError(f"[{section}] must be a table")
        target = getattr(cfg, section)
        for key, value in payload.items():
            if not hasattr(target, key):
                raise ConfigError(f"unknown key {section}.{key}")
            default = getattr(_SECTIONS[section](), key)
            setattr(target, key, _coerce(section, key, value, default))
    _validate(cfg)
    return cfg


def parse_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return parse_config_text(path.read_text(encoding="utf-8"))


def _validate(cfg: SimConfig) -> None:
    def expect(cond, msg):
        if not cond:
            raise ConfigError(msg)

    expect(cfg.run.algorithm in _ALGORITHMS, f"run.algorithm must be one of {_ALGORITHMS}")
    expect(cfg.run.iterations >= 0, "run.iterations must be >= 0")
    expect(cfg.run.replications >= 1, "run.replications must be >= 1")
    expect(cfg.run.observation_window >= 0, "run.observation_window must be >= 0")
    expect(cfg.topology.generator in _GENERATORS, f"topology.generator must be one of {_GENERATORS}")
    expect(cfg.topology.n_legitimate >= 1, "topology.n_legitimate must be >= 1")
    expect(cfg.topology.n_malicious >= 0, "topology.n_malicious must be >= 0")
    for name in ("edge_prob", "attach_prob"):
        v = getattr(cfg.topology, name)
        expect(0.0 <= v <= 1.0, f"topology.{name} must be in [0, 1]")
    t = cfg.trust
    expect(0 <= t.legit_low <= t.legit_high <= 1, "trust.legit_* must satisfy 0 <= lo <= hi <= 1")
    expect(0 <= t.malicious_low <= t.malicious_high <= 1, "trust.malicious_* must satisfy 0 <= lo <= hi <= 1")
    expect((t.legit_low + t.legit_high) / 2 > 0.5, "trust legit mean must exceed 1/2")
    expect((t.malicious_low + t.malicious_high) / 2 < 0.5, "trust malicious mean must be below 1/2")
    expect(t.pc_second_coefficient in ("NL", "NM"), "trust.pc_second_coefficient must be NL or NM")
    expect(cfg.problem.kind in _PROBLEMS, f"problem.kind must be one of {_PROBLEMS}")
    expect(cfg.constraint.kind in _CONSTRAINTS, f"constraint.kind must be one of {_CONSTRAINTS}")
    expect(cfg.constraint.lo <= cfg.constraint.hi, "constraint.lo must be <= constraint.hi")
    expect(cfg.sets.mode in _MODES, f"sets.mode must be one of {_MODES}")
    expect(cfg.sets.s_kind in _S_KINDS, f"sets.s_kind must be one of {_S_KINDS}")
    expect(cfg.sets.x_kind in _X_KINDS, f"sets.x_kind must be one of {_X_KINDS}")
    expect(cfg.attack.kind in _ATTACKS, f"attack.kind must be one of {_ATTACKS}")
    if cfg.sets.mode == "unbounded":
        expect(
            cfg.constraint.kind == "all-space" or cfg.sets.x_kind != "none",
            "unbounded mode with adversaries needs a growing decision set (sets.x_kind)",
        )
        if cfg.sets.s_kind == "exp" and cfg.sets.x_kind == "exp":
            expect(
                cfg.sets.s_rate > cfg.sets.x_rate > 0,
                "unbounded exponential sets need sets.s_rate > sets.x_rate > 0",
            )
        expect(cfg.sets.s_kind != "auto-linear", "unbounded mode cannot use auto-linear tracking sets")
    else:
        expect(
            cfg.constraint.kind != "all-space",
            "compact mode needs a bounded constraint set (use sets.mode = 'unbounded')",
        )
    if cfg.attack.kind == "signed-extreme":
        expect(cfg.constraint.kind != "all-space", "signed-extreme attack needs a bounded constraint set")
    if cfg.steps.eta == "auto" or cfg.steps.lam == "auto":
        expect(0 < cfg.steps.safety < 1, "steps.safety must be in (0, 1)")
    if isinstance(cfg.steps.eta, float):
        expect(cfg.steps.eta > 0, "steps.eta must be positive")
    if isinstance(cfg.steps.lam, float):
        expect(0 < cfg.steps.lam <= 1, "steps.lam must be in (0, 1]")


def apply_overrides(cfg: SimConfig, overrides: list[str]) -> SimConfig:
    """Apply `section.key=value` strings on top of a parsed config."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, raw = item.split("=", 1)
        if "." not in path:
            raise ConfigError(f"override path {path!r} must look like section.key")
        section, key = path.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section in override: {section}")
        target = getattr(cfg, section)
        if not hasattr(target, key):
            raise ConfigError(f"unknown key {section}.{key}")
        default = getattr(_SECTIONS[section](), key)
        value = _parse_literal(raw)
        setattr(target, key, _coerce(section, key, value, default))
    _validate(cfg)
    return cfg


def _parse_literal(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw
