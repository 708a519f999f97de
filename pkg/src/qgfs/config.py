"""Run configuration files: sectioned key = value text with typo safety.

Sections are [domain], [time], [solver], [forcing], [initial], [output].
Unknown sections or keys are hard errors carrying the line number and the
nearest valid key, so a misspelled knob cannot silently fall back to a
default.  Field expressions (initial data, forcing) are numpy expressions
in x, y (and t for forcing).
"""

from __future__ import annotations

import difflib
import math
from pathlib import Path

import numpy as np

from .elliptic import LinearSolveSettings
from .errors import ConfigError
from .scheme import Forcing, RunConfig

_SECTIONS = {
    "domain": {"shape", "nx", "ny", "lx", "ly", "radius", "cx", "cy"},
    "time": {"t_final", "dt", "t_w"},
    "solver": {"beta", "outer_tolerance", "max_outer_iterations",
               "linear_tolerance", "linear_max_iterations", "method",
               "interpolation", "time_interpolation",
               "track_flow_distance"},
    "forcing": {"mode", "f", "fx", "fy"},
    "initial": {"psi0", "q0"},
    "output": {"dir", "cadence"},
}

_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "tanh": np.tanh, "cosh": np.cosh,
    "sinh": np.sinh, "abs": np.abs, "hypot": np.hypot,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
    "pi": math.pi, "e": math.e,
}


class FieldExpression:
    """Compiled numpy expression of (x, y) or (x, y, t); repr-able so the
    manifest can echo it."""

    def __init__(self, expression, args=("x", "y"), key=None, line=None):
        self.expression = expression
        self.args = args
        try:
            self._code = compile(expression, f"<{key or 'expression'}>",
                                 "eval")
        except SyntaxError as exc:
            raise ConfigError(f"bad expression for {key}: {exc}",
                              key=key, line=line) from None
        # probe once so name errors surface at parse time, not mid-run
        probe = {name: np.array([0.25, 0.5]) for name in args}
        try:
            self(*[probe[a] for a in args])
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"expression for {key} does not evaluate: "
                              f"{exc}", key=key, line=line) from None

    def __call__(self, *vals):
        ns = dict(_EXPR_NAMES)
        ns.update(zip(self.args, vals))
        out = eval(self._code, {"__builtins__": {}}, ns)
        return out

    def __repr__(self):
        return f"FieldExpression({self.expression!r})"


def _parse_text(text):
    """Raw parse to {section: {key: (value, line)}} with strict validation."""
    data = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                hint = _suggest(section, _SECTIONS.keys())
                raise ConfigError(
                    f"line {lineno}: unknown section [{section}]{hint}",
                    key=section, line=lineno)
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(
                f"line {lineno}: expected 'key = value', got {line!r}",
                line=lineno)
        if section is None:
            raise ConfigError(
                f"line {lineno}: key outside any [section]", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in _SECTIONS[section]:
            hint = _suggest(key, _SECTIONS[section])
            raise ConfigError(
                f"line {lineno}: unknown key '{key}' in [{section}]{hint}",
                key=key, line=lineno)
        if key in data[section]:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'",
                              key=key, line=lineno)
        data[section][key] = (value, lineno)
    return data


def _suggest(name, valid):
    close = difflib.get_close_matches(name, list(valid), n=1, cutoff=0.55)
    if close:
        return f" (did you mean '{close[0]}'?)"
    return f" (valid: {', '.join(sorted(valid))})"


class _Section:
    def __init__(self, name, raw):
        self.name = name
        self.raw = raw.get(name, {})

    def get(self, key, cast=str, default=None, required=False):
        if key not in self.raw:
            if required:
                raise ConfigError(
                    f"missing required key '{key}' in [{self.name}]",
                    key=key)
            return default
        value, line = self.raw[key]
        try:
            return cast(value)
        except ConfigError:
            raise
        except Exception:
            raise ConfigError(
                f"line {line}: bad value for '{key}': {value!r}",
                key=key, line=line) from None

    def line(self, key):
        return self.raw[key][1] if key in self.raw else None

    def expr(self, key, args=("x", "y")):
        if key not in self.raw:
            return None
        value, line = self.raw[key]
        return FieldExpression(value, args=args, key=key, line=line)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def parse_config(path) -> RunConfig:
    """Parse and validate a run configuration file into a RunConfig.

    Defaults: beta = 1, bilinear interpolation, outer tolerance 1e-8,
    t_w = dt, output cadence = dt.
    """
    text = Path(path).read_text()
    raw = _parse_text(text)

    dom = _Section("domain", raw)
    shape = dom.get("shape", str, required=True).lower()
    if shape not in ("rectangle", "disk"):
        raise ConfigError(f"unknown domain shape {shape!r}", key="shape",
                          line=dom.line("shape"))
    spec = {"shape": shape,
            "nx": dom.get("nx", int, required=True),
            "ny": dom.get("ny", int, required=True)}
    if shape == "rectangle":
        spec["lx"] = dom.get("lx", float, required=True)
        spec["ly"] = dom.get("ly", float, required=True)
    else:
        spec["radius"] = dom.get("radius", float, required=True)
        spec["center"] = (dom.get("cx", float, 0.0),
                          dom.get("cy", float, 0.0))

    tim = _Section("time", raw)
    T = tim.get("t_final", float, required=True)
    dt = tim.get("dt", float, required=True)
    t_w = tim.get("t_w", float, None)
    if t_w is not None and dt > t_w:
        raise ConfigError(
            f"dt ({dt}) exceeds t_w ({t_w}); lines "
            f"{tim.line('dt')} and {tim.line('t_w')}", key="dt",
            line=tim.line("dt"))

    sol = _Section("solver", raw)
    linear = LinearSolveSettings(
        tolerance=sol.get("linear_tolerance", float, 1e-10),
        max_iterations=sol.get("linear_max_iterations", int, 50000),
        method=sol.get("method", str, "cg"))

    frc = _Section("forcing", raw)
    mode = frc.get("mode", str, "zero").lower()
    forcing = Forcing(
        mode=mode,
        f=frc.expr("f", args=("x", "y", "t")),
        Fx=frc.expr("fx", args=("x", "y", "t")),
        Fy=frc.expr("fy", args=("x", "y", "t")))

    ini = _Section("initial", raw)
    out = _Section("output", raw)

    config = RunConfig(
        domain_spec=spec,
        T=T, dt=dt, t_w=t_w,
        beta=sol.get("beta", float, 1.0),
        outer_tol=sol.get("outer_tolerance", float, 1e-8),
        max_outer=sol.get("max_outer_iterations", int, 40),
        linear=linear,
        interpolation=sol.get("interpolation", str, "bilinear"),
        time_interp=sol.get("time_interpolation", str, "constant"),
        forcing=forcing,
        psi0=ini.expr("psi0"),
        q0=ini.expr("q0"),
        out_cadence=out.get("cadence", float, None),
        track_flow_distance=sol.get("track_flow_distance", _bool, False),
        output_dir=out.get("dir", str, None))
    return config
