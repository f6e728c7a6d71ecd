"""Head-to-head benchmark: several adapter methods over several task orders.

A *cell* is one (method, order) pair; cells are independent and may run in
worker processes. Per-method numbers are plain means over orders.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adapters import delta_w
from .checkpoint import save_accuracy, save_checkpoint
from .engine import TrainConfig, TrainingDivergedError, pretrain_base, run_sequence
from .metrics import MetricsReport, collision_mask
from .objectives import RegularizerMode
from .tasks import TaskData, generate_task_suite, pretraining_task

log = logging.getLogger(__name__)

THREADS_ENV = "NLORA_LAB_THREADS"
SCATTER_HEADER = ["method", "order", "gsr_mean", "acr", "f_ra"]
SCALAR_KEYS = ["avg_accuracy", "forgetting_rate", "oo", "awom", "gsr_mean", "acr", "nuclear_mean"]


class BenchmarkError(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchmarkOrder:
    name: str
    task_ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(t) for t in self.task_ids)
        if sorted(ids) != list(range(len(ids))) or not ids:
            raise ValueError(f"order {self.name!r}: {list(ids)} is not a permutation of 0..{len(ids) - 1}")
        object.__setattr__(self, "task_ids", ids)


def default_orders(num_tasks: int, seed: int) -> list[BenchmarkOrder]:
    """Identity, reverse, and one shuffle drawn from ``seed``."""
    shuffle = np.random.default_rng(seed).permutation(num_tasks)
    return [
        BenchmarkOrder("identity", tuple(range(num_tasks))),
        BenchmarkOrder("reverse", tuple(reversed(range(num_tasks)))),
        BenchmarkOrder("shuffle", tuple(int(t) for t in shuffle)),
    ]


@dataclass(frozen=True)
class SuiteSpec:
    num_tasks: int = 4
    dim: int = 32
    num_classes: int = 4
    samples_per_class: int = 200
    base_epochs: int = 20

    def build(self, seed: int) -> tuple[list[TaskData], np.ndarray]:
        """Task suite plus a base pretrained on a held-out task from the same generator."""
        args = (self.num_tasks, self.dim, self.num_classes, self.samples_per_class, seed)
        suite = generate_task_suite(*args)
        base = pretrain_base(pretraining_task(*args), epochs=self.base_epochs, seed=seed)
        return suite, base


@dataclass(frozen=True)
class Method:
    """A named training recipe; empty grids mean the value is not tuned."""

    name: str
    mode: RegularizerMode
    reuse_subspace: bool = False
    lambda_grid: tuple[float, ...] = ()
    lambda_orth_grid: tuple[float, ...] = ()

    def candidates(self, base: TrainConfig) -> list[TrainConfig]:
        lams = self.lambda_grid or (0.0,)
        orths = self.lambda_orth_grid or (base.lambda_orth,)
        return [
            self.config(base, lam, lo) for lam, lo in itertools.product(lams, orths)
        ]

    def config(self, base: TrainConfig, lam: float, lambda_orth: float) -> TrainConfig:
        return replace(
            base,
            mode=self.mode,
            reuse_subspace=self.reuse_subspace,
            lambda_per_task=[float(lam)],
            lambda_orth=float(lambda_orth),
        )


DEFAULT_GRID = (0.1, 0.4, 1.2)


def default_methods(grid: Sequence[float] = DEFAULT_GRID, orth_grid: Sequence[float] = DEFAULT_GRID) -> list[Method]:
    grid, orth_grid = tuple(grid), tuple(orth_grid)
    M = RegularizerMode
    return [
        Method("seqlora", M.NONE, reuse_subspace=True),
        Method("inclora", M.NONE),
        Method("olora", M.ORTH, lambda_orth_grid=orth_grid),
        Method("nlora", M.L1_DW, lambda_grid=grid),
        Method("olora_nlora", M.ORTH_PLUS_L1_DW, lambda_grid=grid, lambda_orth_grid=orth_grid),
        Method("sparse_a", M.L1_A, lambda_grid=grid),
        Method("sparse_b", M.L1_B, lambda_grid=grid),
        Method("sparse_ab", M.L1_AB, lambda_grid=grid),
    ]


@dataclass
class BenchmarkCell:
    method: str
    order: BenchmarkOrder
    config: TrainConfig
    report: MetricsReport
    overlap: dict[str, list[list[int]]] = field(default_factory=dict)
    # position in the original report, so reloaded reports keep row order
    index: int = 0

    @property
    def cell_id(self) -> str:
        return f"{self.method}__{self.order.name}"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "order": self.order.name,
            "task_ids": list(self.order.task_ids),
            "config": self.config.to_dict(),
            "metrics": self.report.to_dict(),
            "overlap": self.overlap,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkCell":
        return cls(
            method=data["method"],
            order=BenchmarkOrder(data["order"], tuple(data["task_ids"])),
            config=TrainConfig(**data["config"]),
            report=MetricsReport.from_dict(data["metrics"]),
            overlap=data.get("overlap", {}),
            index=int(data.get("index", 0)),
        )


@dataclass
class BenchmarkReport:
    cells: list[BenchmarkCell]
    selection: dict = field(default_factory=dict)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(c.method for c in self.cells))

    def averages(self) -> dict[str, dict[str, Optional[float]]]:
        """Mean of each scalar over orders; ``None`` when any order lacks it."""
        out = {}
        for m in self.methods():
            rows = [c.report.scalars() for c in self.cells if c.method == m]
            out[m] = {}
            for key in SCALAR_KEYS:
                vals = [r[key] for r in rows]
                out[m][key] = None if any(v is None for v in vals) else float(np.mean(vals))
        return out

    def cell(self, method: str, order: str) -> BenchmarkCell:
        for c in self.cells:
            if c.method == method and c.order.name == order:
                return c
        raise KeyError(f"no cell {method}/{order}")


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise BenchmarkError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise BenchmarkError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _overlap_grids(chain, eps) -> dict[str, list[list[int]]]:
    dws = [delta_w(h) for h in chain.history]
    return {
        f"{i}_{j}": collision_mask(dws[i], dws[j], eps).tolist()
        for i, j in itertools.combinations(range(len(dws)), 2)
    }


def _run_cell(args):
    method, order, cfg, suite, base, eps, awom_norm = args
    tasks = [suite[t] for t in order.task_ids]
    res = run_sequence(tasks, cfg, base=base, eps=eps, awom_norm=awom_norm)
    return BenchmarkCell(method, order, cfg, res.report, _overlap_grids(res.chain, eps)), res.chain


def _config_name(cfg: TrainConfig) -> str:
    return cfg.mode.value.lower() + ("_reuse" if cfg.reuse_subspace else "")


def run_benchmark(
    suite: Sequence[TaskData],
    orders: Sequence[BenchmarkOrder],
    configs: Sequence[TrainConfig],
    names: Optional[Sequence[str]] = None,
    base: Optional[np.ndarray] = None,
    eps: Optional[float] = None,
    awom_norm: str = "fro",
    threads: Optional[int] = None,
    keep_chains: bool = False,
):
    """Train every config on every order and collect one report per cell.

    Returns a :class:`BenchmarkReport`; with ``keep_chains`` also a dict of
    trained chains keyed by cell id.
    """
    if not suite or not orders or not configs:
        raise ValueError("suite, orders and configs must be nonempty")
    names = list(names) if names is not None else [_config_name(c) for c in configs]
    if len(names) != len(configs):
        raise ValueError("names and configs differ in length")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate method names: {names}")
    for o in orders:
        if len(o.task_ids) != len(suite):
            raise ValueError(f"order {o.name!r} has {len(o.task_ids)} ids for {len(suite)} tasks")
    jobs = [(n, o, c, suite, base, eps, awom_norm) for n, c in zip(names, configs) for o in orders]
    threads = thread_count() if threads is None else threads
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    for i, (cell, _) in enumerate(results):
        cell.index = i
    report = BenchmarkReport([cell for cell, _ in results])
    if keep_chains:
        return report, {cell.cell_id: chain for cell, chain in results}
    return report


def _tune_job(args):
    cfg, tasks, base = args
    try:
        # diverging grid points overflow on the way to the error; they are then skipped
        with np.errstate(over="ignore", invalid="ignore"):
            res = run_sequence(tasks, cfg, base=base)
    except TrainingDivergedError:
        return None
    scal = res.report.scalars()
    if not all(v is None or math.isfinite(v) for v in scal.values()):
        return None
    return scal["avg_accuracy"]


def select_config(
    method: Method,
    base_cfg: TrainConfig,
    suite: Sequence[TaskData],
    orders: Sequence[BenchmarkOrder],
    base: Optional[np.ndarray] = None,
    threads: int = 1,
) -> tuple[TrainConfig, list[dict]]:
    """Grid point with the best mean AA over ``orders``; diverged points are skipped.

    Ties keep the earlier grid point. Returns the winner and the scored grid.
    """
    cands = method.candidates(base_cfg)
    if len(cands) == 1:
        return cands[0], []
    jobs = [(c, [suite[t] for t in o.task_ids], base) for c in cands for o in orders]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            scores = list(pool.map(_tune_job, jobs))
    else:
        scores = [_tune_job(j) for j in jobs]
    table, best, best_aa = [], None, -math.inf
    per = len(orders)
    for i, cfg in enumerate(cands):
        chunk = scores[i * per : (i + 1) * per]
        aa = None if any(s is None for s in chunk) else float(np.mean(chunk))
        table.append({"lambda": cfg.lambda_per_task[0], "lambda_orth": cfg.lambda_orth, "avg_accuracy": aa})
        if aa is not None and aa > best_aa:
            best, best_aa = cfg, aa
    if best is None:
        raise BenchmarkError(f"every grid point diverged for method {method.name}")
    return best, table


@dataclass
class BenchmarkPlan:
    """Everything needed to reproduce the default benchmark from seeds."""

    suite: SuiteSpec = field(default_factory=SuiteSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.1, epochs=30, batch_size=32))
    lambda_grid: tuple[float, ...] = DEFAULT_GRID
    lambda_orth_grid: tuple[float, ...] = DEFAULT_GRID
    methods: Optional[tuple[str, ...]] = None
    seed: int = 0
    # None selects seed + 1, which keeps tuning disjoint from reporting
    tuning_seed: Optional[int] = None
    eps: Optional[float] = None
    awom_norm: str = "fro"

    @property
    def resolved_tuning_seed(self) -> int:
        return self.seed + 1 if self.tuning_seed is None else self.tuning_seed

    def resolved_methods(self) -> list[Method]:
        all_methods = default_methods(self.lambda_grid, self.lambda_orth_grid)
        if self.methods is None:
            return all_methods
        by_name = {m.name: m for m in all_methods}
        unknown = [m for m in self.methods if m not in by_name]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {sorted(by_name)}")
        return [by_name[m] for m in self.methods]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"] = self.train.to_dict()
        out["tuning_seed"] = self.resolved_tuning_seed
        return out


def run_default_benchmark(plan: Optional[BenchmarkPlan] = None, threads: Optional[int] = None, keep_chains: bool = False):
    """Tune each method on ``plan.tuning_seed``, then report on ``plan.seed``."""
    plan = plan or BenchmarkPlan()
    tuning_seed = plan.resolved_tuning_seed
    if tuning_seed == plan.seed:
        raise ValueError("tuning seed must differ from the reporting seed")
    threads = thread_count() if threads is None else threads
    methods = plan.resolved_methods()
    tune_suite, tune_base = plan.suite.build(tuning_seed)
    tune_orders = default_orders(plan.suite.num_tasks, tuning_seed)
    tune_cfg = replace(plan.train, seed=tuning_seed)
    chosen, selection = [], {}
    for m in methods:
        cfg, table = select_config(m, tune_cfg, tune_suite, tune_orders, tune_base, threads)
        chosen.append(replace(cfg, seed=plan.seed))
        selection[m.name] = {
            "lambda": cfg.lambda_per_task[0],
            "lambda_orth": cfg.lambda_orth,
            "grid": table,
        }
        log.info("%s: lambda=%g lambda_orth=%g", m.name, cfg.lambda_per_task[0], cfg.lambda_orth)
    suite, base = plan.suite.build(plan.seed)
    orders = default_orders(plan.suite.num_tasks, plan.seed)
    out = run_benchmark(
        suite, orders, chosen, [m.name for m in methods], base,
        eps=plan.eps, awom_norm=plan.awom_norm, threads=threads, keep_chains=keep_chains,
    )
    report = out[0] if keep_chains else out
    report.selection = selection
    return out


# --- emission -------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise BenchmarkError(f"cannot write {path}: {exc.strerror or exc}") from exc


def csv_files(report: BenchmarkReport) -> dict[str, str]:
    """File name -> contents for every CSV artifact; a pure function of ``report``."""
    files = {}
    summary_rows = []
    for c in report.cells:
        s = c.report.scalars()
        summary_rows.append(
            [c.method, c.order.name, " ".join(map(str, c.order.task_ids)), c.config.mode.value,
             c.config.lambda_per_task[0], c.config.lambda_orth]
            + [s[k] for k in SCALAR_KEYS]
        )
    files["summary.csv"] = _csv_text(
        ["method", "order", "task_ids", "mode", "lambda", "lambda_orth"] + SCALAR_KEYS, summary_rows
    )
    files["scatter_gsr_vs_acr.csv"] = _csv_text(
        SCATTER_HEADER,
        [[c.method, c.order.name, c.report.gsr_mean, c.report.acr, c.report.forgetting_rate] for c in report.cells],
    )
    files["nuclear_norms.csv"] = _csv_text(
        ["method", "order", "position", "task_id", "nuclear_norm"],
        [
            [c.method, c.order.name, pos, c.order.task_ids[pos], v]
            for c in report.cells
            for pos, v in enumerate(c.report.nuclear_per_task)
        ],
    )
    pairs = sorted({p for c in report.cells for p in c.overlap}, key=lambda p: tuple(map(int, p.split("_"))))
    for pair in pairs:
        rows = []
        for c in report.cells:
            grid = c.overlap.get(pair)
            if grid is None:
                continue
            for r, line in enumerate(grid):
                for col, v in enumerate(line):
                    rows.append([c.method, c.order.name, r, col, v])
        files[f"collision_heatmap_{pair}.csv"] = _csv_text(["method", "order", "row", "col", "overlap"], rows)
    return files


def json_files(report: BenchmarkReport) -> dict[str, str]:
    summary = {
        "cells": [
            {"method": c.method, "order": c.order.name, "task_ids": list(c.order.task_ids), **c.report.scalars()}
            for c in report.cells
        ],
        "averages": report.averages(),
        "selection": report.selection,
    }
    return {"summary.json": json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n"}


def emit_report(report: BenchmarkReport, out_dir, chains: Optional[dict] = None, formats=("csv", "json")):
    """Write per-cell metrics JSON plus the requested derived tables under ``out_dir``."""
    out = Path(out_dir)
    for c in report.cells:
        _write(out / "metrics" / f"{c.cell_id}.json", json.dumps(c.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n")
    if report.selection:
        _write(out / "selection.json", json.dumps(report.selection, indent=2, sort_keys=True) + "\n")
    write_derived(report, out, formats)
    by_id = {c.cell_id: c for c in report.cells}
    for cell_id, chain in (chains or {}).items():
        (out / "chains").mkdir(parents=True, exist_ok=True)
        save_checkpoint(chain, out / "chains" / cell_id, extra={"task_ids": list(by_id[cell_id].order.task_ids)})
        if by_id[cell_id].report.accuracy is not None:
            save_accuracy(out / "chains" / cell_id, by_id[cell_id].report.accuracy)


def write_derived(report: BenchmarkReport, out: Path, formats=("csv", "json")):
    files = {}
    if "csv" in formats:
        files.update(csv_files(report))
    if "json" in formats:
        files.update(json_files(report))
    for name, text in files.items():
        _write(Path(out) / name, text)
    return sorted(files)


def load_report(bench_dir) -> BenchmarkReport:
    """Rebuild a report from ``metrics/*.json`` (and ``selection.json`` if present)."""
    root = Path(bench_dir)
    paths = sorted((root / "metrics").glob("*.json"))
    if not paths:
        raise BenchmarkError(f"no metrics JSON under {root / 'metrics'}")
    cells = []
    for p in paths:
        try:
            cells.append(BenchmarkCell.from_dict(json.loads(p.read_text(encoding="utf-8"))))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise BenchmarkError(f"{p}: {exc}") from exc
    sel_path = root / "selection.json"
    selection = json.loads(sel_path.read_text(encoding="utf-8")) if sel_path.exists() else {}
    cells.sort(key=lambda c: c.index)
    return BenchmarkReport(cells, selection)
