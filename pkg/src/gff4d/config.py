"""Flat ``key = value`` experiment configuration.

Values are numbers, short arithmetic over numbers and ``pi`` (``gamma = pi``,
``tail_delta = pi**2``), comma separated lists of those, or bare words for the
string keys. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import ast
import dataclasses
import difflib
import hashlib
import json
import math
import operator
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt, "log": math.log, "exp": math.exp}


def _eval_node(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval_node(node.operand))
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
        return _FUNCS[node.func.id](_eval_node(node.args[0]))
    raise ValueError("unsupported expression")


def evaluate(text):
    """Evaluate a small arithmetic expression over numbers, ``pi`` and ``e``."""
    try:
        return _eval_node(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, TypeError, ZeroDivisionError, OverflowError) as exc:
        raise ValueError(f"cannot evaluate {text!r}") from exc


FRACTALS = ("Point", "Ball", "PlanePatch", "ProductCantor")
BACKENDS = ("circulant", "dense")
METHODS = ("bridge", "plain")


@dataclass(frozen=True)
class ExperimentConfig:
    # model
    gamma: float = math.pi
    eps0: float = 0.5
    R: float = 1.0
    # grid and ladder
    grid: tuple = (12, 12, 12, 12)
    side: float = 1.0
    depth: int = 5
    backend: str = "circulant"
    replicas: int = 200
    seed: int = 0
    # exponents
    fractal: str = "Point"
    lambdas: tuple = ()
    lambda_top: float = 0.1  # exact route: absolute; empirical route: share of total mass
    lambda_decades: float = 3.0
    lambda_per_decade: int = 8
    # stopping times
    mc_replicas: int = 100_000
    dt: float = 1e-3
    max_time: float = 2.0
    method: str = "bridge"
    s_fractions: tuple = (1.0, 0.5, 0.1)
    mgf_lambdas: tuple = (0.1, 0.01, 0.001)
    # tail experiment
    tail_delta: float = math.pi ** 2
    tail_rho: float = 0.9
    tail_A: tuple = tuple(round(0.05 * k, 10) for k in range(1, 21))
    tail_cells: int = 13
    # covariance check
    cov_pairs: int = 20
    out: str = "runs"

    def __post_init__(self):
        check = _CHECKS
        for f in fields(self):
            rule = check.get(f.name)
            if rule is not None:
                ok, message = rule(getattr(self, f.name))
                if not ok:
                    raise ConfigError(f"{f.name}: {message}")

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def digest(self):
        """Hash of every field except the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _positive(v):
    return (v > 0, "must be positive")


def _grid_ok(v):
    return (len(v) == 4 and all(int(n) == n and n >= 1 for n in v),
            "needs 1 or 4 positive integers")


_CHECKS = {
    "gamma": lambda v: (v > 0 and v * v < 2 * math.pi ** 2,
                        f"need 0 < gamma^2 < 2 pi^2, got gamma^2 = {v * v:.6g}"),
    "eps0": lambda v: (0 < v < 1, "must lie in (0, 1)"),
    "R": _positive,
    "grid": _grid_ok,
    "side": _positive,
    "depth": lambda v: (v >= 1, "must be at least 1"),
    "backend": lambda v: (v in BACKENDS, f"must be one of {BACKENDS}"),
    "replicas": lambda v: (v >= 1, "must be at least 1"),
    "seed": lambda v: (v >= 0, "must be non-negative"),
    "fractal": lambda v: (v in FRACTALS, f"must be one of {FRACTALS}"),
    "lambdas": lambda v: (all(0 < x for x in v), "entries must be positive"),
    "lambda_top": _positive,
    "lambda_decades": _positive,
    "lambda_per_decade": lambda v: (v >= 1, "must be at least 1"),
    "mc_replicas": lambda v: (v >= 1, "must be at least 1"),
    "dt": _positive,
    "max_time": _positive,
    "method": lambda v: (v in METHODS, f"must be one of {METHODS}"),
    "s_fractions": lambda v: (len(v) > 0 and all(0 <= x <= 1 for x in v), "entries must lie in [0, 1]"),
    "mgf_lambdas": lambda v: (len(v) > 0 and all(0 < x < 1 for x in v), "entries must lie in (0, 1)"),
    "tail_rho": lambda v: (0 < v < 1, "must lie in (0, 1)"),
    "tail_delta": _positive,
    "tail_A": lambda v: (len(v) >= 2 and all(x > 0 for x in v), "needs at least 2 positive values"),
    "tail_cells": lambda v: (v >= 3, "must be at least 3"),
    "cov_pairs": lambda v: (v >= 1, "must be at least 1"),
}

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig.__dataclass_fields__


def _convert(key, text):
    default = _DEFAULTS[key].default
    text = text.strip()
    try:
        if isinstance(default, bool):
            raise ValueError
        if isinstance(default, str):
            if not text:
                raise ValueError("empty value")
            return text
        if isinstance(default, tuple):
            items = [t for t in text.replace(";", ",").split(",") if t.strip()]
            vals = tuple(evaluate(t) for t in items)
            if key == "grid":
                if len(vals) == 1:
                    vals = vals * 4
                if any(float(v) != int(v) for v in vals):
                    raise ValueError("grid entries must be integers")
                return tuple(int(v) for v in vals)
            return tuple(float(v) for v in vals)
        val = evaluate(text)
        if isinstance(default, int):
            if float(val) != int(val):
                raise ValueError("expected an integer")
            return int(val)
        return float(val)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} ({exc})") from None


def suggest(key):
    close = difflib.get_close_matches(key, list(_FIELDS), n=1)
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_lines(lines, source="<config>"):
    """``key -> value text`` from ``key = value`` lines."""
    found = {}
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}{suggest(key)}")
        found[key] = value
    return found


def parse_config(path=None, overrides=(), **values):
    """Build a validated config from a file, ``key=value`` overrides and keywords.

    Later sources win: file, then overrides, then keyword values.
    """
    raw = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        raw.update(parse_lines(text.splitlines(), str(path)))
    raw.update(parse_lines(list(overrides), "--set"))
    typed = {k: _convert(k, v) for k, v in raw.items()}
    for k, v in values.items():
        if k not in _FIELDS:
            raise ConfigError(f"unknown key {k!r}{suggest(k)}")
        typed[k] = v
    return ExperimentConfig(**typed)
