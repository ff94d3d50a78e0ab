"""Simulation configuration: dataclasses plus an INI-style text format.

Grammar (parsed with :mod:`configparser`, keys are case-sensitive)::

    [section]
    key = value          # scalars
    key = a, b, c        # lists are comma-separated

Sections and keys are fixed; anything unknown is rejected.  Omitted keys
take the defaults of the dataclasses below, and :func:`dump_config` writes
every key back out so a parsed config round-trips exactly.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

from .controller import ControllerConfig, Policy
from .errors import ConfigError
from .hv_planner import PlannerConfig
from .state_estimator import DifficultyConfig

TOPOLOGIES = ("ring", "erdos_renyi", "grid", "file")
PROFILE_KINDS = {"flat": 0, "lowpass": 1, "highpass": 1, "band": 2}


def parse_profile(text: str) -> tuple[str, tuple[float, ...]]:
    """``"lowpass:0.7"`` -> ``("lowpass", (0.7,))``."""
    kind, *args = [part.strip() for part in text.split(":")]
    if kind not in PROFILE_KINDS:
        raise ConfigError(f"unknown spectral profile {kind!r}", "profiles")
    if len(args) != PROFILE_KINDS[kind]:
        raise ConfigError(f"profile {kind!r} takes {PROFILE_KINDS[kind]} parameter(s)", "profiles")
    try:
        vals = tuple(float(a) for a in args)
    except ValueError:
        raise ConfigError(f"bad profile parameters in {text!r}", "profiles") from None
    if any(not 0.0 <= v <= 2.0 for v in vals):
        raise ConfigError(f"profile cutoffs must lie in [0, 2]: {text!r}", "profiles")
    if kind == "band" and not vals[0] < vals[1]:
        raise ConfigError(f"band needs lo < hi: {text!r}", "profiles")
    return kind, vals


@dataclass(frozen=True)
class GraphConfig:
    topology: str = "ring"
    n: int = 64
    p: float = 0.1
    grid_cols: int = 0
    path: str = ""

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ConfigError(f"topology must be one of {TOPOLOGIES}", "topology")
        if self.n < 1:
            raise ConfigError("n must be at least 1", "n")
        if not 0 < self.p <= 1:
            raise ConfigError("p must lie in (0, 1]", "p")
        if self.grid_cols < 0:
            raise ConfigError("grid_cols must be nonnegative", "grid_cols")
        if self.topology == "file" and not self.path:
            raise ConfigError("topology=file needs a path", "path")


@dataclass(frozen=True)
class TestbedConfig:
    K: int = 3
    h: int = 8
    profiles: tuple[str, ...] = ("flat",)
    target_angles: tuple[float, ...] = ()
    target_scale: float = 1.0
    target_jitter: float = 0.25
    noise_sigma: float = 0.0
    init_scale: float = 0.1

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1", "K")
        if self.h < 1:
            raise ConfigError("h must be at least 1", "h")
        if len(self.profiles) not in (1, self.K):
            raise ConfigError("give one profile, or one per task", "profiles")
        for prof in self.profiles:
            parse_profile(prof)
        if len(self.target_angles) not in (0, self.K):
            raise ConfigError("give no target angles, or one per task", "target_angles")
        for name in ("target_scale", "target_jitter", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative", name)
        if not self.init_scale > 0:
            raise ConfigError("init_scale must be positive", "init_scale")

    def task_profiles(self) -> list[str]:
        return list(self.profiles) * self.K if len(self.profiles) == 1 else list(self.profiles)

    def task_angles(self) -> list[float]:
        if self.target_angles:
            return list(self.target_angles)
        if self.K == 1:
            return [0.0]
        return [180.0 * k / (self.K - 1) for k in range(self.K)]


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 5
    M: int = 100
    block_size: int = 1
    sense_period: int = 10
    eta: float = 0.1
    policy: str = "controlg"
    warmup_steps: int = 5
    warmup_eta: float = 0.1

    def __post_init__(self):
        for name in ("T", "M", "block_size", "sense_period", "warmup_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1", name)
        if not self.eta > 0:
            raise ConfigError("eta must be positive", "eta")
        if self.warmup_eta < 0:
            raise ConfigError("warmup_eta must be nonnegative", "warmup_eta")
        try:
            Policy(self.policy)
        except ValueError:
            raise ConfigError(f"policy must be one of {[p.value for p in Policy]}", "policy") from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    eps_stab: float = 1e-12
    mgda_tol: float = 1e-8
    mgda_max_iter: int = 10_000

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative", "seed")
        if not self.eps_stab > 0:
            raise ConfigError("eps_stab must be positive", "eps_stab")
        if not self.mgda_tol > 0:
            raise ConfigError("mgda_tol must be positive", "mgda_tol")
        if self.mgda_max_iter < 1:
            raise ConfigError("mgda_max_iter must be at least 1", "mgda_max_iter")


@dataclass(frozen=True)
class SimConfig:
    graph: GraphConfig = field(default_factory=GraphConfig)
    testbed: TestbedConfig = field(default_factory=TestbedConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    difficulty: DifficultyConfig = field(default_factory=DifficultyConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.difficulty.eps_stab != self.run.eps_stab:
            object.__setattr__(self, "difficulty", replace(self.difficulty, eps_stab=self.run.eps_stab))
        for name in ("k_p", "k_i", "k_d"):
            gain = getattr(self.controller, name)
            if isinstance(gain, tuple) and len(gain) != self.testbed.K:
                raise ConfigError(f"per-task {name} needs {self.testbed.K} values", f"controller.{name}")

    @property
    def seed(self) -> int:
        return self.run.seed

    @property
    def policy(self) -> Policy:
        return Policy(self.schedule.policy)

    def with_overrides(self, seed: int | None = None, policy: str | None = None) -> "SimConfig":
        cfg = self
        try:
            if seed is not None:
                cfg = replace(cfg, run=replace(cfg.run, seed=int(seed)))
            if policy is not None:
                cfg = replace(cfg, schedule=replace(cfg.schedule, policy=str(policy)))
        except ConfigError as exc:
            section = "run" if exc.field == "seed" else "schedule"
            raise ConfigError(f"{section}.{exc.field}: {exc}", f"{section}.{exc.field}") from None
        return cfg

    def to_dict(self) -> dict:
        return {name: _as_dict(getattr(self, name)) for name in SECTIONS}


SECTIONS = {
    "graph": GraphConfig,
    "testbed": TestbedConfig,
    "schedule": ScheduleConfig,
    "difficulty": DifficultyConfig,
    "planner": PlannerConfig,
    "controller": ControllerConfig,
    "run": RunConfig,
}
# eps_stab is global and lives in [run]
_HIDDEN = {"difficulty": {"eps_stab"}}
_GAINS = {"k_p", "k_i", "k_d"}


def _keys(section: str) -> list[str]:
    return [f.name for f in dataclasses.fields(SECTIONS[section]) if f.name not in _HIDDEN.get(section, ())]


def _as_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if f.name in _HIDDEN.get(_section_of(obj), ()):
            continue
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _section_of(obj) -> str:
    for name, cls in SECTIONS.items():
        if isinstance(obj, cls):
            return name
    raise TypeError(type(obj))


def _coerce(section: str, key: str, raw: str):
    default = {f.name: f for f in dataclasses.fields(SECTIONS[section])}[key]
    proto = default.default if default.default is not dataclasses.MISSING else default.default_factory()
    text = raw.strip()
    try:
        if key in _GAINS:
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return float(parts[0]) if len(parts) == 1 else tuple(float(p) for p in parts)
        if isinstance(proto, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if key == "target_angles":
                return tuple(float(p) for p in parts)
            return tuple(parts)
        if isinstance(proto, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
        return text
    except (ValueError, IndexError):
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}", f"{section}.{key}") from None


def _build(cls, section: str, values: dict):
    try:
        return cls(**values)
    except ConfigError as exc:
        name = exc.field or "?"
        raise ConfigError(f"{section}.{name}: {exc}", f"{section}.{name}") from None


def _key_line(text: str, section: str, key: str) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip() == key:
            return lineno
    return None


def loads_config(text: str, source: str = "<string>") -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]", section)
        allowed = set(_keys(section))
        for key in parser[section]:
            if key not in allowed:
                where = _key_line(text, section, key)
                at = f":{where}" if where else ""
                raise ConfigError(f"{source}{at}: unknown key {section}.{key}", f"{section}.{key}")
    built = {}
    for section, cls in SECTIONS.items():
        values = {}
        if parser.has_section(section):
            for key, raw in parser[section].items():
                try:
                    values[key] = _coerce(section, key, raw)
                except ConfigError as exc:
                    where = _key_line(text, section, key)
                    at = f":{where}" if where else ""
                    raise ConfigError(f"{source}{at}: {exc}", exc.field) from None
        built[section] = _build(cls, section, values)
    try:
        return SimConfig(**built)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}", exc.field) from None


def parse_config(path: str | Path) -> SimConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return loads_config(path.read_text(), source=str(path))


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: SimConfig) -> str:
    """Serialise every key of ``cfg``; floats use repr so parsing is lossless."""
    out = []
    for section, values in cfg.to_dict().items():
        out.append(f"[{section}]")
        out += [f"{key} = {_fmt(val)}" for key, val in values.items()]
        out.append("")
    return "\n".join(out)
