# See the NOTICE file distributed with this work for additional information
# regarding copyright ownership.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Run configuration: defaults, then a TOML file, then command-line flags.

Keys missing from both the file and the flags keep their defaults. Values
that are chosen automatically at run time (``eta``, ``kernel.c_alpha``,
``velocity.grid_h``, ``time.dt``) are written as the string ``"auto"``.
Every problem found is collected and raised as one :class:`ConfigError`.
"""

import json
import math
import pathlib
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Union

from loguru import logger

from .exceptions import ConfigError
from .kernel import AlphaParam, MollifierParam
from .presets import PRESETS

AUTO = "auto"
PROFILES = ("standard", "critical")
SOURCES = ("boundary", "area")
CRITICAL_ALPHA = 1.0 / 6.0
ECHO_NAME = "config.echo"


def _kind(kind: str, default: Any = None, **kwargs) -> Any:
    if isinstance(default, (list, dict)):
        return field(default_factory=lambda: type(default)(default), metadata={"kind": kind}, **kwargs)
    return field(default=default, metadata={"kind": kind}, **kwargs)


@dataclass
class KernelConfig:
    c_alpha: Optional[float] = _kind("auto_float")


@dataclass
class VelocityConfig:
    epsilon: float = _kind("float", 0.0)
    tol: float = _kind("float", 1e-8)
    max_depth: int = _kind("int", 24)
    grid_h: Optional[float] = _kind("auto_float")
    source: str = _kind("str", "boundary")


@dataclass
class TimeConfig:
    dt: Optional[float] = _kind("auto_float")
    cfl: float = _kind("float", 0.1)
    t_end: float = _kind("float", 1.0)
    resample_every: int = _kind("int", 50)


@dataclass
class OutputConfig:
    k_diag: int = _kind("int", 10)
    k_snap: int = _kind("int", 100)


@dataclass
class MonitorSection:
    q_max: float = _kind("float", 1e4)
    l_max: float = _kind("float", 1e6)
    min_delta: float = _kind("float", 1e-3)
    max_curvature: float = _kind("float", 1e3)
    slack: float = _kind("float", 1.2)
    area_tol: float = _kind("float", 1e-3)


@dataclass
class ScalingConfig:
    epsilons: List[float] = _kind("float_list", [0.2, 0.1, 0.05, 0.025])
    sample_nodes: int = _kind("int", 64)


@dataclass
class RunConfig:
    """Resolved configuration of one command-line invocation."""

    alpha: float = _kind("float", 0.25)
    preset: str = _kind("str", "disk")
    levels: int = _kind("int", 8)
    nodes: int = _kind("int", 256)
    eta: Optional[float] = _kind("auto_float")
    seed: int = _kind("int", 0)
    out: str = _kind("str", "gsqg_out")
    profile: str = _kind("str", "standard")
    kernel: KernelConfig = field(default_factory=KernelConfig)
    velocity: VelocityConfig = field(default_factory=VelocityConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    monitor: MonitorSection = field(default_factory=MonitorSection)
    scaling: ScalingConfig = field(default_factory=ScalingConfig)
    preset_params: Dict[str, Any] = field(default_factory=dict)

    @property
    def alpha_param(self) -> AlphaParam:
        return AlphaParam(self.alpha, self.kernel.c_alpha)

    @property
    def mollifier(self) -> MollifierParam:
        return MollifierParam(self.velocity.epsilon)

    @property
    def critical(self) -> bool:
        return self.profile == "critical"


SECTIONS = {
    "kernel": KernelConfig,
    "velocity": VelocityConfig,
    "time": TimeConfig,
    "output": OutputConfig,
    "monitor": MonitorSection,
    "scaling": ScalingConfig,
}


def _coerce(value: Any, kind: str, key: str, problems: List[str]) -> Any:
    try:
        if kind == "auto_float":
            if value is None or value == AUTO:
                return None
            return _finite(value, key)
        if kind == "float":
            return _finite(value, key)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if kind == "float_list":
            if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                value = [value]
            return [_finite(v, key) for v in value]
        if not isinstance(value, str):
            raise ValueError
        return value
    except (TypeError, ValueError):
        problems.append(f"{key}: expected {kind.replace('_', ' ')}, got {value!r}")
        return None


def _finite(value: Any, key: str) -> float:
    if isinstance(value, bool):
        raise ValueError(key)
    number = float(value)
    if not math.isfinite(number):
        raise ValueError(key)
    return number


def _merge(target: Dict[str, Any], updates: Mapping[str, Any], origin: str,
           problems: List[str]) -> None:
    for key, value in updates.items():
        section, _, sub = key.partition(".")
        if sub:
            if section not in SECTIONS or sub not in target[section]:
                problems.append(f"{origin}: unknown key {key}")
            else:
                target[section][sub] = value
        elif key == "preset_params":
            if not isinstance(value, Mapping):
                problems.append(f"{origin}: preset_params must be a table")
            else:
                target[key].update(value)
        elif key in SECTIONS:
            if not isinstance(value, Mapping):
                problems.append(f"{origin}: [{key}] must be a table")
                continue
            _merge(target, {f"{key}.{k}": v for k, v in value.items()}, origin, problems)
        elif key in target:
            target[key] = value
        else:
            problems.append(f"{origin}: unknown key {key}")


def _build(cls, values: Mapping[str, Any], prefix: str, problems: List[str]):
    kwargs = {}
    for f in fields(cls):
        if f.name in SECTIONS:
            kwargs[f.name] = _build(SECTIONS[f.name], values[f.name], f"{f.name}.", problems)
        elif f.name == "preset_params":
            kwargs[f.name] = dict(values[f.name])
        else:
            kind = f.metadata["kind"]
            coerced = _coerce(values[f.name], kind, prefix + f.name, problems)
            if coerced is None and kind != "auto_float":
                # already reported; keep the default so construction succeeds
                coerced = getattr(cls(), f.name)
            kwargs[f.name] = coerced
    return cls(**kwargs)


def _check_ranges(cfg: RunConfig) -> List[str]:
    problems = []

    def need(ok: bool, message: str) -> None:
        if not ok:
            problems.append(message)

    need(0.0 < cfg.alpha < 0.5, f"alpha must lie in (0, 0.5), got {cfg.alpha}")
    need(cfg.preset in PRESETS, f"preset must be one of {', '.join(sorted(PRESETS))}, got {cfg.preset!r}")
    need(cfg.levels >= 2, f"levels must be >= 2, got {cfg.levels}")
    need(cfg.nodes >= 16, f"nodes must be >= 16, got {cfg.nodes}")
    need(cfg.eta is None or cfg.eta > 0.0, f"eta must be positive, got {cfg.eta}")
    need(cfg.seed >= 0, f"seed must be >= 0, got {cfg.seed}")
    need(bool(cfg.out), "out must be a directory name")
    need(cfg.profile in PROFILES, f"profile must be one of {', '.join(PROFILES)}, got {cfg.profile!r}")
    if cfg.profile == "critical":
        need(cfg.alpha <= CRITICAL_ALPHA,
             f"profile critical requires alpha <= 1/6, got {cfg.alpha}")
    need(cfg.kernel.c_alpha is None or cfg.kernel.c_alpha > 0.0,
         f"kernel.c_alpha must be positive, got {cfg.kernel.c_alpha}")
    vel = cfg.velocity
    need(vel.epsilon >= 0.0, f"velocity.epsilon must be >= 0, got {vel.epsilon}")
    need(0.0 < vel.tol < 1.0, f"velocity.tol must lie in (0, 1), got {vel.tol}")
    need(vel.max_depth >= 1, f"velocity.max_depth must be >= 1, got {vel.max_depth}")
    need(vel.source in SOURCES, f"velocity.source must be one of {', '.join(SOURCES)}, got {vel.source!r}")
    if vel.grid_h is not None:
        need(vel.grid_h > 0.0, f"velocity.grid_h must be positive, got {vel.grid_h}")
        need(vel.epsilon == 0.0 or vel.grid_h <= vel.epsilon / 4.0,
             f"velocity.grid_h must be <= epsilon/4 = {vel.epsilon / 4.0:g}, got {vel.grid_h}")
    need(vel.source != "area" or vel.epsilon > 0.0, "velocity.source = area needs epsilon > 0")
    tim = cfg.time
    need(tim.dt is None or tim.dt > 0.0, f"time.dt must be positive, got {tim.dt}")
    need(tim.cfl > 0.0, f"time.cfl must be positive, got {tim.cfl}")
    need(tim.resample_every >= 0, f"time.resample_every must be >= 0, got {tim.resample_every}")
    need(cfg.output.k_diag >= 1, f"output.k_diag must be >= 1, got {cfg.output.k_diag}")
    need(cfg.output.k_snap >= 0, f"output.k_snap must be >= 0, got {cfg.output.k_snap}")
    for f in fields(MonitorSection):
        value = getattr(cfg.monitor, f.name)
        need(value > 0.0, f"monitor.{f.name} must be positive, got {value}")
    need(cfg.monitor.slack >= 1.0, f"monitor.slack must be >= 1, got {cfg.monitor.slack}")
    need(len(cfg.scaling.epsilons) >= 2 and all(e > 0.0 for e in cfg.scaling.epsilons),
         f"scaling.epsilons needs at least two positive values, got {cfg.scaling.epsilons}")
    need(cfg.scaling.sample_nodes >= 1, f"scaling.sample_nodes must be >= 1, got {cfg.scaling.sample_nodes}")
    return problems


def parse_config(
    path: Optional[Union[str, pathlib.Path]] = None, flags: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """Resolve the configuration.

    Args:
        path: TOML configuration file, optional.
        flags: Command-line overrides keyed by dotted name, e.g. ``time.t_end``.
            ``None`` values are ignored.

    Returns:
        The resolved configuration.

    Raises:
        ConfigError: Listing every unknown key, type error and out-of-range value.
    """
    values = asdict(RunConfig())
    problems: List[str] = []
    if path is not None:
        path = pathlib.Path(path)
        try:
            with open(path, "rb") as handle:
                document = tomllib.load(handle)
        except FileNotFoundError as err:
            raise ConfigError([f"configuration file {path} not found"]) from err
        except tomllib.TOMLDecodeError as err:
            raise ConfigError([f"{path}: {err}"]) from err
        _merge(values, document, str(path), problems)
    if flags:
        _merge(values, {k: v for k, v in flags.items() if v is not None}, "command line", problems)

    cfg = _build(RunConfig, values, "", problems)
    if not problems:
        problems.extend(_check_ranges(cfg))
    if problems:
        raise ConfigError(problems, f"{len(problems)} configuration problem(s): " + "; ".join(problems))
    logger.debug("resolved configuration {}", asdict(cfg))
    return cfg


def _toml_value(value: Any) -> str:
    if value is None:
        return json.dumps(AUTO)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    if isinstance(value, int):
        return str(value)
    return json.dumps(str(value))


def config_to_toml(cfg: RunConfig) -> str:
    """Every resolved value in the format :func:`parse_config` reads."""
    top, tables = [], []
    for name, value in asdict(cfg).items():
        if isinstance(value, dict):
            body = "\n".join(f"{key} = {_toml_value(v)}" for key, v in value.items())
            tables.append(f"[{name}]\n{body}\n" if body else f"[{name}]\n")
        else:
            top.append(f"{name} = {_toml_value(value)}")
    return "\n".join(top) + "\n\n" + "\n".join(tables)


def echo_config(cfg: RunConfig, out_dir: Union[str, pathlib.Path]) -> pathlib.Path:
    """Write config.echo into the output directory."""
    path = pathlib.Path(out_dir) / ECHO_NAME
    path.write_text(config_to_toml(cfg))
    logger.info(f"resolved configuration saved at {path}")
    return path
