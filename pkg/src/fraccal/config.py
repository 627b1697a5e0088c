"""Flat ``section.key = value`` experiment configuration.

One entry per line, ``#`` starts a comment, at most one dot per key.  Every
key has a default; unknown keys and duplicates are rejected.  Cell index
sets are written as ``lo-hi`` ranges of global cell indices joined by
``;`` (``"20-23;30-31"``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .errors import ConfigError


def _float(text):
    return float(text)


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"{text!r} is not a boolean")


def _float_list(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _int_list(text):
    return tuple(_int(t) for t in text.split(",") if t.strip())


def _str(text):
    return text.strip()


def parse_ranges(text) -> list[tuple[int, ...]]:
    """``"3-6;9"`` -> ``[(3, 4, 5, 6), (9,)]``."""
    sets = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        lo, _, hi = chunk.partition("-")
        lo, hi = int(lo), int(hi) if hi else int(lo)
        if hi < lo:
            raise ValueError(f"empty range {chunk!r}")
        sets.append(tuple(range(lo, hi + 1)))
    return sets


def parse_blocks(text) -> list[tuple[tuple[int, ...], float]]:
    """``"20-23:1.5;30-31:-0.5"`` -> list of (cells, value)."""
    blocks = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        cells, sep, value = chunk.partition(":")
        if not sep:
            raise ValueError(f"block {chunk!r} needs the form lo-hi:value")
        blocks.append((parse_ranges(cells)[0], float(value)))
    return blocks


def _ranges(text):
    if text.strip() in ("none", "cells", "partition", "auto"):
        return text.strip()
    parse_ranges(text)
    return text.strip()


def _blocks(text):
    parse_blocks(text)
    return text.strip()


def _eps(text):
    if text.strip() == "auto":
        return "auto"
    values = _float_list(text)
    if not values or any(not (v > 0) for v in values):
        raise ValueError("fd.eps must be 'auto' or positive steps")
    return values


# key -> (parser, default, validator or None, description)
SCHEMA = {
    "experiment.id": (_str, "experiment", None, "label used in output file names"),
    "geometry.a": (_float, 0.0, None, "left end of the domain"),
    "geometry.b": (_float, 1.0, None, "right end of the domain"),
    "geometry.collar": (_float, 0.5, lambda v: v > 0, "exterior collar width"),
    "geometry.n_cells": (_int, 64, lambda v: v >= 8, "total number of cells"),
    "s": (_float, 0.5, lambda v: 0 < v < 1, "fractional order in (0, 1)"),
    "m": (_int, 3, lambda v: v >= 2, "power of the nonlinearity"),
    "solver.tol": (_float, 1e-12, lambda v: v >= 0, "fixed-point increment tolerance"),
    "solver.max_iter": (_int, 200, lambda v: v >= 1, "fixed-point iteration cap"),
    "fd.eps": (_eps, "auto", None, "'auto' or one step per derivative order 1..m"),
    "fd.sweep": (_float_list, (1.0, 2.0, 4.0), lambda v: len(v) >= 1 and min(v) > 0, "step multipliers"),
    "battery.count": (_int, 20, lambda v: v >= 1, "random g data"),
    "battery.h_count": (_int, 10, lambda v: v >= 1, "random h data (even m)"),
    "battery.seed": (_int, 0, lambda v: v >= 0, "battery seed"),
    "battery.localized": (_ranges, "auto", None, "none | cells | partition | auto | ranges"),
    "battery.lambda0": (_float, 1e-2, lambda v: v > 0, "localization schedule start"),
    "battery.rho": (_float, 1e-2, lambda v: 0 < v < 1, "localization schedule ratio"),
    "battery.levels": (_int, 10, lambda v: v >= 1, "localization levels"),
    "runge.target": (_ranges, "auto", None, "target block for 'localize'"),
    "runge.a": (_float, 2.0, lambda v: v > 1, "norm exponent"),
    "runge.lambda0": (_float, 1e-2, lambda v: v > 0, "schedule start"),
    "runge.rho": (_float, 0.1, lambda v: 0 < v < 1, "schedule ratio"),
    "runge.levels": (_int, 5, lambda v: v >= 1, "schedule length"),
    "phantom.q0": (_float, 0.0, math.isfinite, "background potential"),
    "phantom.blocks": (_blocks, "", None, "lo-hi:value blocks added to q0 to form q"),
    "forward.amplitude": (_float, 0.1, lambda v: v > 0, "scale of the forward data"),
    "forward.count": (_int, 5, lambda v: v >= 1, "number of forward data"),
    "inversion.partition": (_int, 8, lambda v: v >= 1, "reconstruction partition size"),
    "inversion.lo": (_float, -1.0, math.isfinite, "value range lower end"),
    "inversion.hi": (_float, 1.0, math.isfinite, "value range upper end"),
    "inversion.depth": (_int, 10, lambda v: 0 <= v <= 50, "bisection depth"),
    "inversion.alpha_grid": (_float_list, (0.25, 0.5, 1.0), lambda v: min(v) > 0, "inner-support alphas"),
    "inversion.alpha_max": (_str, "auto", None, "'auto' (sup |q - q0|), 'inf' or a number"),
    "inversion.pairs": (_bool, False, None, "add unions of two intervals"),
    "inversion.ball_width": (_int, 2, lambda v: v >= 1, "inner-support ball width in cells"),
    "inversion.definiteness": (_str, "auto", lambda v: v in ("auto", "GE", "LE"), "sign of q - q0"),
    "stability.dim": (_int, 2, lambda v: v >= 1, "number of block basis functions"),
    "stability.levels": (_int_list, (4, 8, 12, 16, 20), lambda v: len(v) >= 1 and min(v) >= 1, "H sizes"),
    "stability.samples": (_int, 256, lambda v: v >= 1, "sphere samples"),
    "stability.seed": (_int, 0, lambda v: v >= 0, "sphere seed"),
    "io.cache": (_str, "", None, "operator cache directory ('' disables)"),
    "io.out": (_str, "results", None, "output directory"),
    "io.format": (_str, "csv", lambda v: v == "csv", "output format"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        values = dict(self.values)
        for key, raw in overrides.items():
            values[key] = _validate(key, raw if not isinstance(raw, str) else _convert(key, raw))
        return ExperimentConfig(values)

    def canonical(self) -> str:
        """One ``key=value`` line per entry, sorted by key."""
        return "".join(f"{k}={_render(self.values[k])}\n" for k in sorted(self.values))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _render(value):
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _convert(key, raw, line=None):
    parser = SCHEMA[key][0]
    try:
        return parser(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})", key=key, line=line) from None


def _validate(key, value, line=None):
    check = SCHEMA[key][2]
    if check is not None and not check(value):
        raise ConfigError(f"{key}: value {value!r} out of range ({SCHEMA[key][3]})", key=key, line=line)
    return value


def default_config() -> ExperimentConfig:
    return ExperimentConfig({k: spec[1] for k, spec in SCHEMA.items()})


def parse_config(text: str) -> ExperimentConfig:
    values = {k: spec[1] for k, spec in SCHEMA.items()}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key = value", line=lineno)
        if key.count(".") > 1:
            raise ConfigError(f"line {lineno}: {key!r} nests deeper than one dot", key=key, line=lineno)
        if key in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})", key=key, line=lineno
            )
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key=key, line=lineno)
        seen[key] = lineno
        values[key] = _validate(key, _convert(key, value, lineno), lineno)
    config = ExperimentConfig(values)
    _cross_check(config)
    return config


def _cross_check(config):
    if not config["geometry.b"] > config["geometry.a"]:
        raise ConfigError("geometry.b must exceed geometry.a", key="geometry.b")
    if not config["inversion.hi"] > config["inversion.lo"]:
        raise ConfigError("inversion.hi must exceed inversion.lo", key="inversion.hi")
    alpha = config["inversion.alpha_max"]
    if alpha not in ("auto", "inf"):
        try:
            if not float(alpha) > 0:
                raise ValueError
        except ValueError:
            raise ConfigError(
                f"inversion.alpha_max: expected 'auto', 'inf' or a positive number, got {alpha!r}",
                key="inversion.alpha_max",
            ) from None
    eps = config["fd.eps"]
    if eps != "auto" and len(eps) != config["m"]:
        raise ConfigError("fd.eps needs one step per order 1..m", key="fd.eps")


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
