"""File formats: CSV matrices, prior-support lists, experiment configs and
result files. Everything on disk uses 1-based indices."""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, fields
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .model import PriorSupport, SolverConfig, ValidationError

FLOAT_FMT = "%.17g"


class ParseError(ValidationError):
    def __init__(self, path, line, column, message):
        self.path, self.line, self.column = str(path), line, column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{path}: {where}: {message}")


def fmt(value) -> str:
    return FLOAT_FMT % value


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless numeric CSV into a 2-D float array."""
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            row = []
            for col, token in enumerate(line.split(","), start=1):
                try:
                    value = float(token)
                except ValueError:
                    raise ParseError(path, lineno, col,
                                     f"not a number: {token.strip()!r}") from None
                if not math.isfinite(value):
                    raise ParseError(path, lineno, col, f"non-finite value {token.strip()!r}")
                row.append(value)
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(path, lineno, None,
                                 f"expected {width} columns, found {len(row)}")
            rows.append(row)
    if not rows:
        raise ParseError(path, 1, None, "file contains no data")
    return np.array(rows, dtype=float)


def read_vector_csv(path) -> np.ndarray:
    """A vector stored as one column or as one row."""
    M = read_matrix_csv(path)
    if M.shape[1] == 1 or M.shape[0] == 1:
        return M.ravel()
    raise ParseError(path, 1, None, f"expected a single row or column, got shape {M.shape}")


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_prior_support(path, n=None) -> PriorSupport:
    """One 1-based index per line; blank lines and ``#`` comments skipped."""
    idx = set()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                value = int(line)
            except ValueError:
                raise ParseError(path, lineno, None, f"not an integer index: {line!r}") from None
            if value < 1 or (n is not None and value > n):
                bound = "" if n is None else f"..{n}"
                raise ParseError(path, lineno, None, f"index {value} out of range 1{bound}")
            idx.add(value - 1)
    return PriorSupport(idx)


def write_prior_support(path, prior: PriorSupport) -> None:
    with open(path, "w") as fh:
        for i in sorted(prior.P):
            fh.write(f"{i + 1}\n")


# ---------------------------------------------------------------- configs

_MODES = {"type": "array", "minItems": 1, "uniqueItems": True,
          "items": {"enum": ["sbl", "nsl", "sl"]}}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_SOLVER = {
    "type": "object",
    "additionalProperties": False,
    "properties": {f.name: ({"type": "boolean"} if f.type in ("bool", bool) else
                            {"type": "integer", "minimum": 1} if f.name == "max_iter" else
                            {"type": "number", "exclusiveMinimum": 0})
                   for f in fields(SolverConfig) if f.name != "mode"},
}

SYNTH_SCHEMA = {
    "type": "object",
    "required": ["axis", "grid", "n", "K", "m", "size_S", "size_E", "trials", "seed", "modes"],
    "additionalProperties": False,
    "properties": {
        "axis": {"enum": ["m_over_n", "E_size", "snr_db"]},
        "grid": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "n": _POS_INT, "K": _NONNEG_INT, "m": _POS_INT,
        "size_S": _NONNEG_INT, "size_E": _NONNEG_INT,
        "snr_db": {"type": ["number", "null"]},
        "trials": _POS_INT,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "modes": _MODES,
        "solver": _SOLVER,
    },
}

SRCLOC_SCHEMA = {
    "type": "object",
    "required": ["rows", "cols", "K", "K1", "m_grid", "trials", "seed", "modes"],
    "additionalProperties": False,
    "properties": {
        "rows": _POS_INT, "cols": _POS_INT, "K": _POS_INT, "K1": _NONNEG_INT,
        "m_grid": {"type": "array", "minItems": 1,
                   "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}},
        "snr_db": {"type": ["number", "null"]},
        "trials": _POS_INT,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "modes": _MODES,
        "solver": _SOLVER,
    },
}


class ConfigError(ValidationError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n" + "\n".join(f"  {p}" for p in self.problems))


def _describe(err) -> str:
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else err.message
        prefix = ".".join(str(p) for p in err.absolute_path)
        return f"{prefix + '.' if prefix else ''}{missing}: required field is missing"
    if err.validator == "additionalProperties":
        return f"{'.'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
    field = ".".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{field}: {err.message}"


def config_kind(cfg) -> str:
    if isinstance(cfg, dict) and "m_grid" in cfg:
        return "srcloc"
    return "synth"


def validate_config(cfg, kind=None) -> list:
    """Every schema and consistency problem, one message per field."""
    kind = kind or config_kind(cfg)
    schema = SRCLOC_SCHEMA if kind == "srcloc" else SYNTH_SCHEMA
    validator = jsonschema.Draft202012Validator(schema)
    problems = sorted((_describe(e) for e in validator.iter_errors(cfg)))
    if problems or not isinstance(cfg, dict):
        return problems or ["<root>: expected a JSON object"]
    if kind == "synth":
        n, K = cfg["n"], cfg["K"]
        if K > n:
            problems.append(f"K: {K} exceeds n = {n}")
        if cfg["m"] > n:
            problems.append(f"m: {cfg['m']} exceeds n = {n}")
        if cfg["size_S"] > K:
            problems.append(f"size_S: {cfg['size_S']} exceeds K = {K}")
        if cfg["size_E"] > n - K:
            problems.append(f"size_E: {cfg['size_E']} exceeds n - K = {n - K}")
        if cfg["axis"] == "m_over_n":
            bad = [g for g in cfg["grid"] if not 0 < g <= 1]
            if bad:
                problems.append(f"grid: m/n ratios must lie in (0, 1], got {bad[0]}")
        if cfg["axis"] == "E_size":
            bad = [g for g in cfg["grid"] if g != int(g) or not 0 <= g <= n - K]
            if bad:
                problems.append(f"grid: |E| values must be integers in [0, n - K], got {bad[0]}")
    else:
        if cfg["K1"] > cfg["K"]:
            problems.append(f"K1: {cfg['K1']} exceeds K = {cfg['K']}")
        if cfg["K"] > cfg["rows"] * cfg["cols"]:
            problems.append("K: exceeds the number of grid points")
    return problems


def load_config(path, kind=None, env=None) -> dict:
    """Parse and validate a config file; ``SASBL_SEED`` overrides ``seed``."""
    env = os.environ if env is None else env
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.colno, exc.msg) from None
    if isinstance(cfg, dict) and env.get("SASBL_SEED"):
        try:
            cfg["seed"] = int(env["SASBL_SEED"])
        except ValueError:
            raise ConfigError([f"SASBL_SEED: not an integer: {env['SASBL_SEED']!r}"]) from None
    problems = validate_config(cfg, kind)
    if problems:
        raise ConfigError(problems)
    return cfg


def solver_from_config(cfg, default: SolverConfig) -> SolverConfig:
    return default.with_(**cfg.get("solver", {}))


# ---------------------------------------------------------------- outputs

SYNTH_HEADER = "axis_value,mode,trials,success_rate,mean_nmse,mean_iters"
SRCLOC_HEADER = "m_over_n,mode,trials,loc_success_rate"


def sweep_csv(result, kind="synth") -> str:
    lines = [SYNTH_HEADER if kind == "synth" else SRCLOC_HEADER]
    for agg in result.aggregates:
        if kind == "synth":
            lines.append(",".join([fmt(agg.axis_value), agg.mode.value, str(agg.trials),
                                   fmt(agg.success_rate), fmt(agg.mean_nmse),
                                   fmt(agg.mean_iters)]))
        else:
            lines.append(",".join([fmt(agg.axis_value), agg.mode.value, str(agg.trials),
                                   fmt(agg.success_rate)]))
    return "\n".join(lines) + "\n"


def sidecar_path(out_path) -> Path:
    return Path(out_path).with_suffix(".json")


def write_sweep(out_path, result, cfg, solver: SolverConfig, kind="synth") -> Path:
    """Write the aggregate CSV and its JSON provenance sidecar."""
    Path(out_path).write_text(sweep_csv(result, kind))
    solver_dict = asdict(solver)
    solver_dict["mode"] = None
    meta = {
        "tool": "sasbl",
        "version": __version__,
        "kind": kind,
        "seed": cfg["seed"],
        "config": cfg,
        "solver": solver_dict,
        "csv": Path(out_path).name,
    }
    side = sidecar_path(out_path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return side


def write_solve_result(path, result, config: SolverConfig) -> None:
    echo = asdict(config)
    echo["mode"] = config.mode.value
    payload = {
        "x_hat": [float(v) for v in result.x_hat],
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "final_gamma_mean": float(result.state.gamma_mean),
        "elbo_final": float(result.elbo_trace[-1]) if len(result.elbo_trace) else None,
        "config_echo": echo,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
