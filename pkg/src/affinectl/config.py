"""Scenario configuration files.

The format is line based::

    # comment
    mode = optimal
    system = free-particle

    [grid]
    t0 = 0
    t1 = 2
    steps = 400

Keys before the first ``[section]`` header live in the root section. A dotted
key such as ``grid.steps = 400`` is the same as ``steps`` under ``[grid]``.
Values are raw text; double quotes protect leading/trailing blanks and ``#``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ExprSyntaxError
from .expr import Expression, parse_expression
from .numerics import TimeGrid
from .systems import BUILTIN_NAMES, builtin_defaults

MODES = ("realize", "controllability", "optimal", "analytic", "rds", "compare")


@dataclass
class Config:
    """Ordered sections of raw string values; the root section is ``""``."""

    sections: dict = field(default_factory=lambda: {"": {}})

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def set(self, section: str, key: str, value) -> None:
        self.sections.setdefault(section, {})[key] = str(value)

    def has(self, section: str, key: str) -> bool:
        return key in self.sections.get(section, {})


def _strip_comment(text: str) -> str:
    quoted = False
    for i, ch in enumerate(text):
        if ch == '"':
            quoted = not quoted
        elif ch == "#" and not quoted:
            return text[:i]
    return text


def _unquote(value: str, lineno: int) -> str:
    if value.startswith('"'):
        if len(value) < 2 or not value.endswith('"'):
            raise ConfigError(f"line {lineno}: unterminated quoted value")
        return value[1:-1]
    return value


def parse_config(text: str) -> Config:
    cfg = Config()
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            cfg.sections.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        target = section
        if section == "" and "." in key:
            target, key = key.split(".", 1)
        if cfg.has(target, key):
            name = f"{target}.{key}" if target else key
            raise ConfigError(f"line {lineno}: duplicate key '{name}'")
        cfg.set(target, key, _unquote(value, lineno))
    return cfg


def _format_value(value: str) -> str:
    if value == "" or value != value.strip() or "#" in value or value.startswith('"'):
        return f'"{value}"'
    return value


def serialize_config(cfg: Config) -> str:
    lines = [f"{k} = {_format_value(v)}" for k, v in cfg.sections.get("", {}).items()]
    for name, entries in cfg.sections.items():
        if name == "":
            continue
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_format_value(v)}" for k, v in entries.items())
    return "\n".join(lines) + "\n"


def load_config(path) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc


# typed access ---------------------------------------------------------------

def _key(section, key):
    return f"{section}.{key}" if section else key


def _float(text: str, name: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    try:
        v = float(t)
    except ValueError:
        raise ConfigError(f"key '{name}': expected a number, got {text!r}") from None
    if math.isnan(v):
        raise ConfigError(f"key '{name}': NaN is not allowed")
    return v


def _int(text: str, name: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"key '{name}': expected an integer, got {text!r}") from None


def _bool(text: str, name: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"key '{name}': expected true/false, got {text!r}")


def _floats(text: str, name: str) -> np.ndarray:
    parts = [p for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"key '{name}': empty list")
    return np.array([_float(p, name) for p in parts])


def _bools(text: str, name: str) -> tuple:
    return tuple(_bool(p, name) for p in text.split(","))


def _matrix(text: str, name: str) -> np.ndarray:
    rows = [_floats(r, name) for r in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"key '{name}': rows of unequal length")
    return np.array(rows)


def _expr(text: str, name: str) -> Expression:
    try:
        return parse_expression(text)
    except ExprSyntaxError as exc:
        raise ConfigError(f"key '{name}': {exc}") from exc


_CONVERT = {"float": _float, "int": _int, "bool": _bool, "floats": _floats,
            "bools": _bools, "matrix": _matrix, "expr": _expr,
            "str": lambda text, name: text.strip()}

REQUIRED = object()

# section -> key -> (type, default); REQUIRED marks mandatory keys
SCHEMAS = {
    "realize": {
        "realize": {"recipe": ("str", None), "output": ("expr", None), "x0": ("floats", None),
                    "clip": ("bool", False)},
    },
    "controllability": {
        "controllability": {"variant": ("str", "realizable"), "x_ref": ("floats", None),
                            "C": ("matrix", None)},
    },
    "optimal": {
        "problem": {"epsilon": ("float", REQUIRED), "x0": ("floats", REQUIRED),
                    "x1": ("floats", None), "S": ("floats", None), "S1": ("floats", None),
                    "sharp": ("bools", None), "u0": ("float", 0.0)},
        "solver": {"method": ("str", "steepest"), "max_iter": ("int", 5000),
                   "tol": ("float", 1e-8)},
    },
    "analytic": {
        "problem": {"epsilon": ("float", REQUIRED), "x0": ("floats", REQUIRED),
                    "x1": ("floats", REQUIRED), "s1": ("float", 1.0), "s2": ("float", 1.0),
                    "beta1": ("float", math.inf), "refine": ("int", 1),
                    "numerical": ("bool", False)},
    },
    "rds": {
        "rds": {"model": ("str", REQUIRED), "protocol": ("str", "sinusoidal"),
                "A": ("float", 10.0), "T": ("float", 20.0), "phi0": ("float", None),
                "duration": ("float", None), "L": ("float", None), "N": ("int", None),
                "bc": ("str", None), "store_every": ("int", 10)},
    },
    "compare": {
        "compare": {"a": ("str", None), "b": ("str", None), "norm": ("str", "sup"),
                    "columns": ("str", None)},
    },
}

CHOICES = {
    ("solver", "method"): ("steepest", "lbfgs"),
    ("realize", "recipe"): ("FhnMixedOutput", "FhnActivatorOutput", "SirInfected"),
    ("controllability", "variant"): ("kalman", "realizable", "output-classic", "output-realizable"),
    ("rds", "model"): ("schloegl", "fhn"),
    ("rds", "protocol"): ("sinusoidal", "uniform"),
    ("rds", "bc"): ("periodic", "neumann"),
    ("compare", "norm"): ("sup", "l2"),
}

NEEDS_SYSTEM = ("controllability", "optimal", "analytic")
NEEDS_GRID = ("realize", "optimal", "analytic")


@dataclass
class ScenarioConfig:
    """Validated scenario; every value already has its final type."""

    mode: str
    system: str | None = None
    params: dict = field(default_factory=dict)
    grid: TimeGrid | None = None
    desired: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)
    csv: str | None = None

    def desired_expr(self, i: int):
        return self.desired.get(f"x{i + 1}")


def _typed_section(cfg: Config, section: str, schema: dict) -> dict:
    raw = cfg.sections.get(section, {})
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown key '{_key(section, sorted(unknown)[0])}'")
    out = {}
    for key, (kind, default) in schema.items():
        name = _key(section, key)
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"missing required key '{name}'")
            out[key] = default
            continue
        value = _CONVERT[kind](raw[key], name)
        allowed = CHOICES.get((section, key))
        if allowed and value not in allowed:
            raise ConfigError(f"key '{name}': expected one of {', '.join(allowed)}, got {value!r}")
        out[key] = value
    return out


def scenario_from_config(cfg: Config, mode: str | None = None) -> ScenarioConfig:
    """Type and validate every key before anything is computed."""
    cfg_mode = cfg.get("", "mode")
    if mode and cfg_mode and cfg_mode != mode:
        raise ConfigError(f"key 'mode': config says {cfg_mode!r} but subcommand is {mode!r}")
    mode = mode or cfg_mode
    if mode is None:
        raise ConfigError("missing required key 'mode'")
    if mode not in MODES:
        raise ConfigError(f"key 'mode': expected one of {', '.join(MODES)}, got {mode!r}")

    schemas = SCHEMAS[mode]
    known = {"", "params", "grid", "desired", "output", *schemas}
    extra = [s for s in cfg.sections if s not in known]
    if extra:
        raise ConfigError(f"unknown section '[{extra[0]}]' for mode {mode}")
    root_extra = set(cfg.sections.get("", {})) - {"mode", "system"}
    if root_extra:
        raise ConfigError(f"unknown key '{sorted(root_extra)[0]}'")

    sc = ScenarioConfig(mode)
    sc.system = cfg.get("", "system")
    if sc.system is None and (mode in NEEDS_SYSTEM
                              or (mode == "realize" and not cfg.get("realize", "recipe"))):
        raise ConfigError("missing required key 'system'")
    if sc.system is not None:
        if sc.system not in BUILTIN_NAMES:
            raise ConfigError(f"key 'system': unknown system {sc.system!r} "
                              f"(known: {', '.join(BUILTIN_NAMES)})")
        defaults = builtin_defaults(sc.system)
    else:
        defaults = None

    for key, text in cfg.sections.get("params", {}).items():
        if defaults is not None and key not in defaults and key not in ("c1", "c2"):
            raise ConfigError(f"unknown key 'params.{key}' for system {sc.system}")
        sc.params[key] = _float(text, f"params.{key}")

    if mode in NEEDS_GRID:
        g = _typed_section(cfg, "grid", {"t0": ("float", 0.0), "t1": ("float", REQUIRED),
                                         "steps": ("int", REQUIRED)})
        try:
            sc.grid = TimeGrid(g["t0"], g["t1"], g["steps"])
        except ValueError as exc:
            raise ConfigError(f"section [grid]: {exc}") from None
    elif cfg.sections.get("grid"):
        raise ConfigError(f"section [grid] is not used by mode {mode}")

    for key, text in cfg.sections.get("desired", {}).items():
        if not (key.startswith("x") and key[1:].isdigit() and int(key[1:]) >= 1):
            raise ConfigError(f"key 'desired.{key}': components are named x1, x2, ...")
        sc.desired[key] = _expr(text, f"desired.{key}")

    for section, schema in schemas.items():
        sc.settings.update(_typed_section(cfg, section, schema))

    out = _typed_section(cfg, "output", {"csv": ("str", f"{mode}.csv")})
    sc.csv = out["csv"]
    _check_mode(sc)
    return sc


def _check_mode(sc: ScenarioConfig) -> None:
    s = sc.settings
    if sc.mode == "realize" and s["recipe"] is not None and s["output"] is None:
        raise ConfigError("missing required key 'realize.output'")
    if sc.mode == "realize" and s["recipe"] is None and not sc.desired:
        raise ConfigError("mode realize needs [desired] components or realize.recipe")
    if sc.mode == "controllability" and s["variant"].startswith("output") and s["C"] is None:
        raise ConfigError("missing required key 'controllability.C'")
    if sc.mode == "analytic":
        for key in ("x0", "x1"):
            if s[key].size != 2:
                raise ConfigError(f"key 'problem.{key}': expected two values")
        for key in ("x1", "x2"):
            if key not in sc.desired:
                raise ConfigError(f"missing required key 'desired.{key}'")
        if s["epsilon"] <= 0:
            raise ConfigError("key 'problem.epsilon': must be positive")
    if sc.mode == "optimal":
        if s["epsilon"] <= 0:
            raise ConfigError("key 'problem.epsilon': must be positive")
        n = s["x0"].size
        for i in range(n):
            if f"x{i + 1}" not in sc.desired:
                raise ConfigError(f"missing required key 'desired.x{i + 1}'")
        for key in ("x1", "S", "S1"):
            if s[key] is not None and s[key].size != n:
                raise ConfigError(f"key 'problem.{key}': expected {n} values")
        if s["sharp"] is not None:
            if len(s["sharp"]) != n:
                raise ConfigError(f"key 'problem.sharp': expected {n} values")
            if any(s["sharp"]) and s["x1"] is None:
                raise ConfigError("missing required key 'problem.x1'")
