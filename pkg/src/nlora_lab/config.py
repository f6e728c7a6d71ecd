"""Flat key/value run configuration, read from TOML or JSON.

Every key is optional; see ``configs/default.toml`` for the full schema with
defaults. Errors carry the file, line (when known) and offending field.
"""
from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bench import DEFAULT_GRID, BenchmarkOrder, BenchmarkPlan, SuiteSpec, default_methods
from .engine import ConfigError, TrainConfig
from .objectives import RegularizerMode

DEFAULT_CONFIG = Path(__file__).parent / "configs" / "default.toml"


class ConfigFileError(ConfigError):
    def __init__(self, path, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.path = str(path)
        self.line = line
        self.key = key
        where = self.path + (f":{line}" if line else "")
        field_part = f" field '{key}':" if key else ""
        super().__init__(f"{where}:{field_part} {message}")


@dataclass
class LabConfig:
    num_tasks: int = 4
    dim: int = 32
    num_classes: int = 4
    samples_per_class: int = 200
    base_epochs: int = 20

    mode: str = "L1_DW"
    rank: int = 4
    # scalar broadcasts to every task
    lambda_: Any = 0.1
    lambda_orth: float = 0.5
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    reuse_subspace: bool = False
    eval_after_each_task: bool = True
    max_steps: Optional[int] = None
    order: Optional[list] = None

    eps: Optional[float] = None
    awom_norm: str = "fro"

    lambda_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    lambda_orth_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    tuning_seed: Optional[int] = None
    methods: Optional[list] = None

    def suite_spec(self) -> SuiteSpec:
        return SuiteSpec(self.num_tasks, self.dim, self.num_classes, self.samples_per_class, self.base_epochs)

    def lambdas(self) -> list[float]:
        lam = self.lambda_
        return [float(x) for x in lam] if isinstance(lam, list) else [float(lam)]

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            rank=self.rank,
            lambda_per_task=self.lambdas(),
            mode=RegularizerMode(self.mode),
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            eval_after_each_task=self.eval_after_each_task,
            lambda_orth=self.lambda_orth,
            reuse_subspace=self.reuse_subspace,
            max_steps=self.max_steps,
        )

    def benchmark_order(self) -> BenchmarkOrder:
        ids = self.order if self.order is not None else list(range(self.num_tasks))
        return BenchmarkOrder("configured", tuple(ids))

    def plan(self) -> BenchmarkPlan:
        return BenchmarkPlan(
            suite=self.suite_spec(),
            train=self.train_config(),
            lambda_grid=tuple(float(x) for x in self.lambda_grid),
            lambda_orth_grid=tuple(float(x) for x in self.lambda_orth_grid),
            methods=tuple(self.methods) if self.methods is not None else None,
            seed=self.seed,
            tuning_seed=self.tuning_seed,
            eps=self.eps,
            awom_norm=self.awom_norm,
        )

    def to_dict(self) -> dict:
        return {f.name.rstrip("_"): getattr(self, f.name) for f in fields(self)}


# key -> (accepted python types, description used in messages)
_INT = (int,)
_NUM = (int, float)
_SCHEMA: dict[str, tuple[tuple, str]] = {
    "num_tasks": (_INT, "integer >= 1"),
    "dim": (_INT, "integer >= 1"),
    "num_classes": (_INT, "integer >= 2"),
    "samples_per_class": (_INT, "integer >= 1"),
    "base_epochs": (_INT, "integer >= 0"),
    "mode": ((str,), "one of " + ", ".join(m.value for m in RegularizerMode)),
    "rank": (_INT, "integer >= 1"),
    "lambda": ((int, float, list), "number or list of numbers"),
    "lambda_orth": (_NUM, "number >= 0"),
    "learning_rate": (_NUM, "number > 0"),
    "epochs": (_INT, "integer >= 1"),
    "batch_size": (_INT, "integer >= 1"),
    "seed": (_INT, "integer >= 0"),
    "reuse_subspace": ((bool,), "boolean"),
    "eval_after_each_task": ((bool,), "boolean"),
    "max_steps": (_INT, "integer >= 0"),
    "order": ((list,), "permutation of 0..num_tasks-1"),
    "eps": (_NUM, "number >= 0"),
    "awom_norm": ((str,), "'fro' or 'spectral'"),
    "lambda_grid": ((list,), "nonempty list of numbers >= 0"),
    "lambda_orth_grid": ((list,), "nonempty list of numbers >= 0"),
    "tuning_seed": (_INT, "integer >= 0"),
    "methods": ((list,), "list of method names"),
}


def _line_of(text: str, key: str) -> Optional[int]:
    pat = re.compile(rf'(^|[{{,])\s*"?{re.escape(key)}"?\s*[=:]')
    for i, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return i
    return None


def _is_type(value, types) -> bool:
    # bool is an int subclass; only accept it where bool is asked for
    if isinstance(value, bool):
        return bool in types
    return isinstance(value, types)


def _check_value(key: str, value) -> Optional[str]:
    types, desc = _SCHEMA[key]
    if not _is_type(value, types):
        return f"expected {desc}, got {type(value).__name__} {value!r}"
    numbers = lambda xs: all(_is_type(x, _NUM) for x in xs)
    bad = False
    if key in ("num_tasks", "dim", "samples_per_class", "rank", "epochs", "batch_size"):
        bad = value < 1
    elif key == "num_classes":
        bad = value < 2
    elif key in ("base_epochs", "seed", "max_steps", "tuning_seed"):
        bad = value < 0
    elif key in ("lambda_orth", "eps"):
        bad = value < 0
    elif key == "learning_rate":
        bad = value <= 0
    elif key == "mode":
        bad = value not in {m.value for m in RegularizerMode}
    elif key == "awom_norm":
        bad = value not in ("fro", "spectral")
    elif key == "lambda":
        vals = value if isinstance(value, list) else [value]
        bad = not vals or not numbers(vals) or any(v < 0 for v in vals)
    elif key in ("lambda_grid", "lambda_orth_grid"):
        bad = not value or not numbers(value) or any(v < 0 for v in value)
    elif key == "order":
        bad = not all(_is_type(x, _INT) for x in value)
    elif key == "methods":
        known = {m.name for m in default_methods()}
        bad = not value or any(m not in known for m in value)
        if bad:
            return f"expected names from {sorted(known)}, got {value!r}"
    return f"expected {desc}, got {value!r}" if bad else None


def parse_config(text: str, path="<config>", fmt: Optional[str] = None) -> LabConfig:
    """Parse TOML (default) or JSON text; ``fmt='json'`` or a leading ``{`` selects JSON."""
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("{") else "toml"
    try:
        if fmt == "json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(path, f"invalid JSON: {exc.msg} (column {exc.colno})", line=exc.lineno) from None
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigFileError(path, f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from None
    if not isinstance(raw, dict):
        raise ConfigFileError(path, "top level must be a table of key/value pairs")
    values = {}
    for key, value in raw.items():
        line = _line_of(text, key)
        if isinstance(value, dict):
            raise ConfigFileError(path, "nested tables are not supported; the schema is flat", line, key)
        if key not in _SCHEMA:
            raise ConfigFileError(path, f"unknown key (known: {', '.join(sorted(_SCHEMA))})", line, key)
        problem = _check_value(key, value)
        if problem:
            raise ConfigFileError(path, problem, line, key)
        values["lambda_" if key == "lambda" else key] = value
    cfg = LabConfig(**values)
    _cross_check(cfg, text, path)
    return cfg


def _cross_check(cfg: LabConfig, text: str, path):
    if cfg.dim < cfg.num_classes:
        raise ConfigFileError(path, f"dim={cfg.dim} must be >= num_classes={cfg.num_classes}", _line_of(text, "dim"), "dim")
    lams = cfg.lambdas()
    if len(lams) not in (1, cfg.num_tasks):
        raise ConfigFileError(
            path, f"needs 1 or num_tasks={cfg.num_tasks} entries, got {len(lams)}", _line_of(text, "lambda"), "lambda"
        )
    if cfg.order is not None:
        try:
            order = cfg.benchmark_order()
        except ValueError as exc:
            raise ConfigFileError(path, str(exc), _line_of(text, "order"), "order") from None
        if len(order.task_ids) != cfg.num_tasks:
            raise ConfigFileError(path, f"must list all {cfg.num_tasks} task ids", _line_of(text, "order"), "order")
    if cfg.tuning_seed is not None and cfg.tuning_seed == cfg.seed:
        raise ConfigFileError(path, "must differ from seed", _line_of(text, "tuning_seed"), "tuning_seed")


def load_config(path) -> LabConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigFileError(p, "config file not found") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError(p, f"cannot read config: {exc}") from None
    return parse_config(text, p, "json" if p.suffix.lower() == ".json" else None)
