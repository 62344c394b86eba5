"""Run configuration: presets, ``key = value`` files and command-line overrides."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

CASES = ("auxetic", "non_auxetic", "mixed", "custom")
SOLVERS = ("newton", "picard")

# the Dirichlet value and the Neumann flux of the non-auxetic/mixed presets are
# not published; they are defaults, overridable per run
PRESETS = {
    "auxetic": dict(alpha=-0.9, beta=0.9, epsilon=0.0, r_tol=1e-8, neumann=0.0),
    "non_auxetic": dict(alpha=-0.9, beta=0.0, epsilon=0.5, r_tol=1e-6, neumann=-0.1),
    "mixed": dict(alpha=-1.6, beta=0.4, epsilon=0.071, r_tol=1e-6, neumann=-0.1, xi_minus=-math.pi / 6),
    "custom": dict(),
}


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        prefix = ""
        if source is not None and line is not None:
            prefix = f"{source}:{line}: "
        elif line is not None:
            prefix = f"line {line}: "
        super().__init__(prefix + message)


@dataclass
class Dirichlet:
    """Dirichlet data on the left/right sides.

    constant: (value,); ramp: (left, right), linear in x in between;
    bump: (peak,), peak * sin(pi y / L) on both sides.
    """

    kind: str = "constant"
    params: tuple = (0.3,)

    def function(self, L: float):
        if self.kind == "constant":
            (v,) = self.params
            return lambda x, y: np.full(np.shape(x), float(v))
        if self.kind == "ramp":
            a, b = self.params
            return lambda x, y: a + (b - a) * np.asarray(x) / L
        if self.kind == "bump":
            (v,) = self.params
            return lambda x, y: v * np.sin(np.pi * np.asarray(y) / L)
        raise ConfigError(f"unknown Dirichlet profile {self.kind!r}")

    def __str__(self):
        return f"{self.kind} " + " ".join(f"{p:g}" for p in self.params)


@dataclass
class RunConfig:
    case: str = "custom"
    alpha: float = 0.0
    beta: float = 0.0
    epsilon: float = 0.0
    nx: int = 64
    ny: int = 64
    L: float = 1.5
    xi_minus: float = -math.pi / 4
    xi_plus: float = math.pi / 3
    dirichlet: Dirichlet = field(default_factory=Dirichlet)
    neumann: float = 0.0
    r_tol: float = 1e-8
    a_tol: float = 0.0
    max_iterations: int = 50
    solver: str = "newton"
    quadrature_order: int = 2
    output_prefix: str = "kirigami"
    mesh_file: Optional[str] = None
    # study / sweep
    levels: int = 4
    base_n: int = 8
    manufactured: bool = False
    compare_picard: bool = False
    epsilons: tuple = ()

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {', '.join(CASES)}, got {self.case!r}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {', '.join(SOLVERS)}, got {self.solver!r}")
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("nx and ny must be >= 1")
        if not self.L > 0:
            raise ConfigError("L must be positive")
        if self.epsilon < 0 or any(e < 0 for e in self.epsilons):
            raise ConfigError("epsilon must be >= 0")
        if not 0 < self.r_tol < 1:
            raise ConfigError("r_tol must lie in (0, 1)")
        if self.a_tol < 0:
            raise ConfigError("a_tol must be >= 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.quadrature_order < 1:
            raise ConfigError("quadrature_order must be >= 1")
        return self


def _float(s):
    return float(s)


def _int(s):
    v = float(s)
    if v != int(v):
        raise ValueError(f"not an integer: {s}")
    return int(v)


def _bool(s):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s}")


def _floats(s):
    parts = [p for p in s.replace(",", " ").split() if p]
    return tuple(float(p) for p in parts)


def _pair(s):
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two values")
    return v


def _choice(s):
    return s.strip()


KEYS = {
    "case": _choice, "alpha": _float, "beta": _float, "epsilon": _float, "nx": _int, "ny": _int,
    "n": _int, "L": _float, "xi_minus": _float, "xi_plus": _float, "neumann": _float,
    "dirichlet_constant": _float, "dirichlet_ramp": _pair, "dirichlet_bump": _float,
    "r_tol": _float, "a_tol": _float, "max_iterations": _int, "solver": _choice,
    "quadrature_order": _int, "output_prefix": _choice, "mesh_file": _choice,
    "levels": _int, "base_n": _int, "manufactured": _bool, "compare_picard": _bool, "epsilons": _floats,
}
DIRICHLET_KEYS = ("dirichlet_constant", "dirichlet_ramp", "dirichlet_bump")


def parse_value(key: str, text: str, line=None, source=None):
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}", line, source)
    try:
        return KEYS[key](text)
    except ValueError as exc:
        raise ConfigError(f"invalid value {text!r} for {key}: {exc}", line, source) from None


def parse_config_text(text: str, source=None) -> dict:
    """Parse ``key = value`` lines (``#`` starts a comment) into a dict of typed values."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, source)
        key, value = (s.strip() for s in body.split("=", 1))
        key = key.replace("-", "_")
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", n, source)
        out[key] = parse_value(key, value, n, source)
    _check_dirichlet(out, source)
    return out


def _check_dirichlet(values: dict, source=None):
    given = [k for k in DIRICHLET_KEYS if k in values]
    if len(given) > 1:
        raise ConfigError(f"conflicting Dirichlet settings: {', '.join(given)}", source=source)


def load_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def build_config(*layers: dict) -> RunConfig:
    """Merge value dicts (later layers win) on top of the preset selected by ``case``."""
    merged = {}
    for layer in layers:
        if any(k in layer for k in DIRICHLET_KEYS):
            for k in DIRICHLET_KEYS:
                merged.pop(k, None)
        merged.update(layer)
    case = merged.get("case", "custom")
    if case not in CASES:
        raise ConfigError(f"case must be one of {', '.join(CASES)}, got {case!r}")
    cfg = RunConfig(case=case, **PRESETS[case])
    updates = {}
    for key, value in merged.items():
        if key == "n":
            updates["nx"] = updates["ny"] = value
        elif key == "dirichlet_constant":
            updates["dirichlet"] = Dirichlet("constant", (value,))
        elif key == "dirichlet_ramp":
            updates["dirichlet"] = Dirichlet("ramp", tuple(value))
        elif key == "dirichlet_bump":
            updates["dirichlet"] = Dirichlet("bump", (value,))
        else:
            updates[key] = value
    return dataclasses.replace(cfg, **updates).validate()


def preset(case: str, **overrides) -> RunConfig:
    return build_config({"case": case}, overrides)
