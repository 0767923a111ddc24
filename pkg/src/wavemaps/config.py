"""Experiment configuration: flat ``key = value`` files with ``#`` comments.

Numeric values accept plain numbers and arithmetic in ``pi`` such as
``3*pi/2``.  Regions are ``start,end`` or ``full``; lists are comma
separated.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .errors import ConfigError
from .grid import ControlRegion

EXPERIMENTS = (
    "damp-decay",
    "harmonic-detect",
    "energy-drop",
    "radial",
    "kg-control",
    "pipeline",
    "s1-control",
    "degree",
    "nonuniform-decay",
    "small-time",
)

_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}
_NAMES = {"pi": math.pi}
_FUNCS = {"sqrt": math.sqrt}


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.operand))
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCS
        and len(node.args) == 1
        and not node.keywords
    ):
        return _FUNCS[node.func.id](_eval(node.args[0]))
    raise ValueError("unsupported expression")


def parse_number(text: str) -> float:
    """Float from a number or an arithmetic expression in pi."""
    try:
        value = _eval(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc
    if not math.isfinite(value):
        raise ValueError(f"not a finite number: {text!r}")
    return value


def parse_int(text: str) -> int:
    v = parse_number(text)
    if v != int(v):
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def parse_list(text: str) -> tuple:
    parts = [p for p in (s.strip() for s in text.split(",")) if p]
    return tuple(parse_number(p) for p in parts)


def parse_region(text: str) -> ControlRegion:
    t = text.strip().lower()
    if t == "full":
        return ControlRegion.full()
    vals = parse_list(t)
    if len(vals) != 2:
        raise ValueError(f"region must be 'start,end' or 'full', got {text!r}")
    return ControlRegion(vals[0], vals[1])


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def format_region(r: ControlRegion) -> str:
    return "full" if r.is_full else f"{r.start!r},{r.end!r}"


def _fmt(v) -> str:
    if isinstance(v, ControlRegion):
        return format_region(v)
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    if v is None:
        return "default"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = ""
    n_points: int = 256
    dt_ratio: float = 0.5
    k: int = 2
    damping_region: ControlRegion = field(default_factory=lambda: ControlRegion(0.0, math.pi))
    damping_amplitude: float = 1.0
    control_region: ControlRegion = field(default_factory=ControlRegion.full)
    eps: float = 0.05
    eps_schedule: tuple = (0.1, 0.05, 0.025, 0.0125)
    T: Optional[float] = None
    seed: int = 0
    output_dir: str = "out"
    # experiment-specific knobs
    N: int = 1
    initial_energy: Optional[float] = None
    perturbation: float = 0.0
    deviation_aware: bool = False
    theta_final: float = math.pi / 2
    target: float = -1.0
    mass: float = 1.0
    t_offset: float = 0.2
    amplitude: float = 0.3
    family: str = "A"
    m: int = 256
    s_values: tuple = (0.0, math.pi / 8, math.pi / 4, 3 * math.pi / 8, 7 * math.pi / 16, math.pi / 2)
    energy_target: float = 0.1
    t_max: float = 200.0
    a: float = math.pi / 4
    a_negative: float = 3 * math.pi / 4
    T_negative: float = 1.0
    n_samples: int = 100
    budget: float = 2000.0
    save_every: int = 50

    def lines(self) -> list:
        return [f"{f.name} = {_fmt(getattr(self, f.name))}" for f in fields(self)]

    def header(self) -> str:
        """Comment block echoing the full configuration."""
        return "".join(f"# {line}\n" for line in ["wavemaps config"] + self.lines())

    def with_values(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_PARSERS = {
    "experiment": str.strip,
    "n_points": parse_int,
    "dt_ratio": parse_number,
    "k": parse_int,
    "damping_region": parse_region,
    "damping_amplitude": parse_number,
    "control_region": parse_region,
    "eps": parse_number,
    "eps_schedule": parse_list,
    "T": lambda s: None if s.strip().lower() == "default" else parse_number(s),
    "seed": parse_int,
    "output_dir": str.strip,
    "N": parse_int,
    "initial_energy": lambda s: None if s.strip().lower() == "default" else parse_number(s),
    "perturbation": parse_number,
    "deviation_aware": parse_bool,
    "theta_final": parse_number,
    "target": parse_number,
    "mass": parse_number,
    "t_offset": parse_number,
    "amplitude": parse_number,
    "family": str.strip,
    "m": parse_int,
    "s_values": parse_list,
    "energy_target": parse_number,
    "t_max": parse_number,
    "a": parse_number,
    "a_negative": parse_number,
    "T_negative": parse_number,
    "n_samples": parse_int,
    "budget": parse_number,
    "save_every": parse_int,
}

FIELDS = tuple(_PARSERS)


def parse_assignments(pairs, base: Optional[ExperimentConfig] = None, source: str = "") -> ExperimentConfig:
    """Apply (key, value-text) pairs on top of ``base``; field-level ConfigError on failure."""
    cfg = base if base is not None else ExperimentConfig()
    updates = {}
    for key, text in pairs:
        where = f"{source}: " if source else ""
        if key not in _PARSERS:
            raise ConfigError(f"{where}unknown config field '{key}'")
        try:
            updates[key] = _PARSERS[key](text)
        except (ValueError, TypeError, ArithmeticError) as exc:
            raise ConfigError(f"{where}field '{key}': {exc}") from exc
        except Exception as exc:  # region validation raises library errors
            raise ConfigError(f"{where}field '{key}': {exc}") from exc
    return replace(cfg, **updates)


def split_assignment(line: str, where: str = "") -> tuple:
    if "=" not in line:
        raise ConfigError(f"{where}expected 'key = value', got {line!r}")
    key, value = line.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"{where}missing key in {line!r}")
    return key, value.strip()


def parse_config_text(text: str, base: Optional[ExperimentConfig] = None, source: str = "config") -> ExperimentConfig:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        pairs.append(split_assignment(line, f"{source}:{lineno}: "))
    return parse_assignments(pairs, base, source)


def load_config(path: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from exc
    return parse_config_text(text, base, source=path)


def _require(cond: bool, key: str, msg: str):
    if not cond:
        raise ConfigError(f"field '{key}': {msg}")


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field against the preconditions of the experiment it drives."""
    _require(cfg.experiment in EXPERIMENTS, "experiment", f"unknown experiment {cfg.experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    _require(cfg.n_points >= 8 and cfg.n_points % 2 == 0, "n_points", "must be an even integer >= 8")
    _require(0.0 < cfg.dt_ratio <= 0.5, "dt_ratio", "must lie in (0, 0.5] (CFL)")
    _require(cfg.k >= 1, "k", "must be >= 1")
    _require(cfg.damping_amplitude > 0.0, "damping_amplitude", "must be positive")
    _require(cfg.eps > 0.0, "eps", "must be positive")
    _require(len(cfg.eps_schedule) > 0 and all(e > 0 for e in cfg.eps_schedule), "eps_schedule", "must be a nonempty list of positive values")
    _require(cfg.T is None or cfg.T > 0.0, "T", "must be positive")
    _require(cfg.seed >= 0, "seed", "must be nonnegative")
    _require(bool(cfg.output_dir), "output_dir", "must be nonempty")
    _require(cfg.N >= 0, "N", "must be nonnegative")
    _require(cfg.perturbation >= 0.0, "perturbation", "must be nonnegative")
    _require(cfg.m >= 8, "m", "must be >= 8")
    _require(cfg.n_samples >= 1, "n_samples", "must be >= 1")
    _require(cfg.t_max > 0.0, "t_max", "must be positive")
    _require(cfg.budget > 0.0, "budget", "must be positive")
    _require(cfg.save_every >= 1, "save_every", "must be >= 1")
    e = cfg.experiment
    if e == "damp-decay":
        _require(cfg.k >= 2, "k", "damp-decay starts from a latitude circle and needs k >= 2")
        E0 = cfg.initial_energy
        _require(E0 is None or 0.0 <= E0 <= 2 * math.pi, "initial_energy", "latitude circles have energy in [0, 2 pi]")
    if e == "harmonic-detect":
        _require(cfg.k >= 2, "k", "needs k >= 2")
        _require(cfg.N >= 1, "N", "needs a geodesic with N >= 1")
        E0 = cfg.initial_energy
        _require(E0 is None or E0 >= 2 * math.pi * cfg.N**2, "initial_energy", "must be at least 2 pi N^2")
    if e == "energy-drop":
        _require(cfg.k >= 2, "k", "needs k >= 2")
        _require(cfg.N >= 1, "N", "needs N >= 1")
        _require(cfg.eps <= 0.5, "eps", "must lie in (0, 0.5]")
    if e == "radial":
        _require(0.0 <= cfg.theta_final < math.pi, "theta_final", "must lie in [0, pi)")
    if e == "kg-control":
        _require(cfg.mass >= 0.0, "mass", "must be nonnegative")
    if e == "pipeline":
        _require(cfg.k >= 2, "k", "needs k >= 2")
        _require(cfg.N >= 1, "N", "needs a geodesic with N >= 1")
    if e == "s1-control":
        _require(cfg.k == 1, "k", "s1-control needs k = 1")
        _require(not cfg.control_region.is_full, "control_region", "needs a proper arc")
    if e == "degree":
        _require(cfg.family in ("A", "A2", "A3", "A4"), "family", "must be one of A, A2, A3, A4")
        _require(cfg.m >= 64 or cfg.family != "A", "m", "family A needs m >= 64")
    if e == "nonuniform-decay":
        _require(cfg.k == 2, "k", "nonuniform-decay needs k = 2")
        _require(0.0 < cfg.energy_target < 2 * math.pi, "energy_target", "must lie in (0, 2 pi)")
        _require(len(cfg.s_values) > 0, "s_values", "must be nonempty")
    if e == "small-time":
        _require(0.0 < cfg.a < math.pi / 2, "a", "must lie in (0, pi/2)")
        _require(math.pi / 2 < cfg.a_negative < math.pi, "a_negative", "must lie in (pi/2, pi)")
        _require(cfg.T_negative > 0.0, "T_negative", "must be positive")
        T = cfg.T if cfg.T is not None else math.pi / 8
        _require(T < math.pi / 2 - cfg.a, "T", "small-time check needs T < pi/2 - a")
    return cfg
