"""Line-oriented problem/run configuration files.

Format: ``[section]`` headers followed by ``key=value`` lines; the optional
``[matrix]`` section holds whitespace-separated matrix rows, one row per
line.  Unknown keys warn (stderr) but do not fail; unparseable values raise
``ConfigError`` carrying the line number.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .solver import ALMConfig


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class RunConfig:
    family: str = "circle"
    n: int = 20
    m: int = 200
    r: int = 5
    mu: float = 0.25
    seed: Optional[int] = None  # commands pick their own default when unset
    oversample: float = 3.0
    mode: Optional[str] = None
    alm: ALMConfig = field(default_factory=ALMConfig)
    matrix: Optional[np.ndarray] = None
    out_dir: str = "out"
    jobs: int = 1


_PROBLEM_KEYS = {
    "family": str,
    "n": int,
    "m": int,
    "r": int,
    "mu": float,
    "seed": int,
    "oversample": float,
    "mode": str,
}
_ALM_KEYS = {
    "rho0": float,
    "gamma": float,
    "tau": float,
    "eps0": float,
    "eps_decay": float,
    "eps_floor": float,
    "multiplier_bound": float,
    "kkt_tol": float,
    "max_outer": int,
    "fixed_rho": bool,
}
_FAMILIES = ("circle", "sphere-l1", "rmc")


def _parse_scalar(raw: str, typ, lineno: int):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r} as {typ.__name__}", lineno) from exc


def parse_problem_file(path: str) -> RunConfig:
    """Parse a config file into a RunConfig (defaults fill missing keys)."""
    cfg = RunConfig()
    matrix_rows: list[list[float]] = []
    section = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip().lower()
                if section not in ("problem", "alm", "matrix"):
                    print(f"warning: unknown section [{section}]", file=sys.stderr)
                continue
            if section == "matrix":
                try:
                    matrix_rows.append([float(tok) for tok in line.split()])
                except ValueError as exc:
                    raise ConfigError(f"bad matrix row {line!r}", lineno) from exc
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value, got {line!r}", lineno)
            key, _, raw_val = line.partition("=")
            key = key.strip().lower()
            if section == "problem":
                if key not in _PROBLEM_KEYS:
                    print(f"warning: unknown key {key!r} in [problem]", file=sys.stderr)
                    continue
                setattr(cfg, key, _parse_scalar(raw_val, _PROBLEM_KEYS[key], lineno))
            elif section == "alm":
                if key not in _ALM_KEYS:
                    print(f"warning: unknown key {key!r} in [alm]", file=sys.stderr)
                    continue
                setattr(cfg.alm, key, _parse_scalar(raw_val, _ALM_KEYS[key], lineno))
            else:
                raise ConfigError(f"key {key!r} outside any section", lineno)
    if matrix_rows:
        widths = {len(row) for row in matrix_rows}
        if len(widths) != 1:
            raise ConfigError("matrix rows have inconsistent lengths")
        cfg.matrix = np.asarray(matrix_rows, dtype=float)
    if cfg.family not in _FAMILIES:
        raise ConfigError(f"unknown family {cfg.family!r}; expected one of {_FAMILIES}")
    try:
        cfg.alm.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def apply_flag_overrides(cfg: RunConfig, args) -> RunConfig:
    """Command-line flags win over config-file values."""
    for name in ("family", "n", "m", "r", "mu", "seed", "oversample", "mode", "jobs"):
        val = getattr(args, name.replace("-", "_"), None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    for f in fields(ALMConfig):
        if f.name in ("inner", "fixed_rho"):
            continue
        val = getattr(args, f.name, None)
        if val is not None:
            setattr(cfg.alm, f.name, val)
    # store_true flag: only an explicit --fixed-rho can turn it on
    if getattr(args, "fixed_rho", False):
        cfg.alm.fixed_rho = True
    cfg.alm.validate()
    return cfg
