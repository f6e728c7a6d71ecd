"""``nlora-lab`` command line: train, analyze, verify, report.

Exit codes: 0 success, 1 runtime or data failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, theory
from ._backend import BACKEND
from .adapters import delta_w
from .bench import BenchmarkError, emit_report, load_report, run_default_benchmark, write_derived
from .checkpoint import ACCURACY_FILE, CheckpointError, load_accuracy, load_checkpoint, save_accuracy, save_checkpoint
from .config import DEFAULT_CONFIG, ConfigFileError, LabConfig, load_config
from .engine import ConfigError, run_sequence
from .metrics import AccuracyMatrix, MetricError, MetricsReport, compute_report

log = logging.getLogger("nlora_lab")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    resolved_config: dict
    tool_version: str
    timestamp: str

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        text = json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        (out_dir / "manifest.json").write_text(text, encoding="utf-8")


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the stamp so repeated runs leave identical trees
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch and epoch.isdigit() else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _manifest(command: str, config_path, resolved: dict) -> RunManifest:
    return RunManifest(command, str(config_path) if config_path else None, resolved, __version__, _timestamp())


def _write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _out_dir(args, fallback: Optional[Path] = None) -> Path:
    out = getattr(args, "out", None)
    if out is None:
        if fallback is None:
            raise UsageError(f"{args.command}: --out is required")
        return fallback
    return Path(out)


def _say(args, text: str):
    if not getattr(args, "quiet", False):
        print(text)


# --- train ------------------------------------------------------------------


def _load_lab_config(args) -> LabConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        if cfg.tuning_seed is not None and cfg.tuning_seed == cfg.seed:
            raise ConfigFileError(args.config, f"tuning_seed equals --seed {cfg.seed}", key="tuning_seed")
    return cfg


def cmd_train(args) -> int:
    cfg = _load_lab_config(args)
    out = _out_dir(args)
    if args.bench:
        return _train_bench(args, cfg, out)
    train_cfg = cfg.train_config()
    order = cfg.benchmark_order()
    suite, base = cfg.suite_spec().build(cfg.seed)
    tasks = [suite[t] for t in order.task_ids]
    log_path = out / "train_log.jsonl"
    if log_path.exists():
        log_path.unlink()
    out.mkdir(parents=True, exist_ok=True)
    res = run_sequence(tasks, train_cfg, base=base, log_path=log_path, eps=cfg.eps, awom_norm=cfg.awom_norm)
    ckpt = out / "checkpoint"
    save_checkpoint(res.chain, ckpt, extra={"task_ids": list(order.task_ids), "seed": cfg.seed})
    save_accuracy(ckpt, res.accuracy.to_list())
    _write_text(out / "metrics.json", res.report.to_json())
    resolved = {
        "train": train_cfg.for_tasks(len(tasks)).to_dict(),
        "suite": asdict(cfg.suite_spec()),
        "orders": [{"name": order.name, "task_ids": list(order.task_ids)}],
        "config": cfg.to_dict(),
    }
    _manifest("train", args.config, resolved).write(out)
    _say(args, _table(res.report))
    _say(args, f"wrote {out}")
    return EXIT_OK


def _train_bench(args, cfg: LabConfig, out: Path) -> int:
    plan = cfg.plan()
    report, chains = run_default_benchmark(plan, keep_chains=True)
    emit_report(report, out, chains)
    resolved = {
        "plan": plan.to_dict(),
        "orders": [{"name": c.order.name, "task_ids": list(c.order.task_ids)} for c in report.cells if c.method == report.cells[0].method],
        "config": cfg.to_dict(),
    }
    _manifest("train --bench", args.config, resolved).write(out)
    _say(args, _bench_table(report.averages()))
    _say(args, f"wrote {out}")
    return EXIT_OK


# --- analyze ----------------------------------------------------------------


def analyze_chain(chain_dir, eps: Optional[float] = None, awom_norm: str = "fro") -> MetricsReport:
    """Metric battery for a saved chain; AA/F.Ra need ``accuracy.json`` beside it."""
    root = Path(chain_dir)
    chain = load_checkpoint(root)
    rows = load_accuracy(root)
    try:
        acc = AccuracyMatrix.from_list(rows) if rows is not None else None
    except (ValueError, TypeError) as exc:
        raise CheckpointError(root / ACCURACY_FILE, f"bad accuracy matrix: {exc}") from None
    if not chain.history:
        raise CheckpointError(root, "chain has no merged adapters to analyze")
    return compute_report(
        [h.a for h in chain.history], [delta_w(h) for h in chain.history], acc, eps=eps, awom_norm=awom_norm
    )


def cmd_analyze(args) -> int:
    chain_dir = Path(args.chain)
    if args.eps is not None and args.eps < 0:
        raise UsageError("--eps must be >= 0")
    report = analyze_chain(chain_dir, args.eps, args.awom_norm)
    out = _out_dir(args, chain_dir / "analysis")
    _write_text(out / "metrics.json", report.to_json())
    _manifest("analyze", None, {"chain": str(chain_dir), "eps": args.eps, "awom_norm": args.awom_norm}).write(out)
    _say(args, _table(report))
    _say(args, f"wrote {out / 'metrics.json'}")
    return EXIT_OK


def _num(v) -> str:
    return "-" if v is None else f"{v:.6g}"


def _table(report: MetricsReport) -> str:
    eps = f"{report.zero_threshold:g}" + (" (relative)" if report.zero_threshold_relative else "")
    rows = [(k, _num(v)) for k, v in report.scalars().items() if k != "zero_threshold"]
    rows.append(("zero_threshold", eps))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def _bench_table(averages: dict) -> str:
    keys = ["avg_accuracy", "forgetting_rate", "oo", "awom", "gsr_mean", "acr", "nuclear_mean"]
    short = ["AA", "F.Ra", "OO", "AWOM", "GSR", "ACR", "nuclear"]
    lines = ["method".ljust(12) + "".join(" " + s.rjust(11) for s in short)]
    for m, vals in averages.items():
        lines.append(m.ljust(12) + "".join(" " + _num(vals[k]).rjust(11) for k in keys))
    return "\n".join(lines)


# --- verify -----------------------------------------------------------------


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    seed = args.seed if args.seed is not None else 0
    verdicts = theory.run_all(args.trials, seed, args.thm2_trials)
    text = theory.verdicts_json(verdicts)
    if args.json:
        sys.stdout.write(text)
    else:
        lines = [f"{'property':<9}{'trials':>8}{'failures':>10}{'worst':>14}  result"]
        for v in verdicts:
            lines.append(
                f"{v.property_id:<9}{v.trials:>8}{v.failures:>10}{v.worst_violation:>14.4g}  {'PASS' if v.passed else 'FAIL'}"
            )
        lines.append("")
        lines.extend(f"{v.property_id}: {theory.NOTES.get(v.property_id, '')}" for v in verdicts)
        _say(args, "\n".join(lines))
    if getattr(args, "out", None):
        out = Path(args.out)
        _write_text(out / "verdicts.json", text)
        _manifest("verify", None, {"trials": args.trials, "seed": seed, "thm2_trials": args.thm2_trials}).write(out)
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_RUNTIME


# --- report -----------------------------------------------------------------


def cmd_report(args) -> int:
    bench_dir = Path(args.bench_dir)
    if not bench_dir.is_dir():
        raise BenchmarkError(f"{bench_dir} is not a directory")
    report = load_report(bench_dir)
    out = _out_dir(args, bench_dir)
    written = write_derived(report, out, (args.format,))
    if out != bench_dir:
        _manifest("report", None, {"bench_dir": str(bench_dir), "format": args.format}).write(out)
    _say(args, "\n".join(f"wrote {out / name}" for name in written))
    return EXIT_OK


# --- parser -----------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed overriding the config (train) or trial seed (verify)")
    parser.add_argument("--out", default=default, help="output directory for artifacts")
    parser.add_argument(
        "--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False,
        help="print nothing but errors",
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nlora-lab",
        description=f"Sparse-adapter continual learning laboratory (kernels: {BACKEND}). "
        "Env NLORA_LAB_THREADS caps parallel benchmark cells.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    t = sub.add_parser("train", help="train one sequence, or the full benchmark with --bench")
    t.add_argument("--config", default=str(DEFAULT_CONFIG), help="TOML or JSON config (default: bundled default.toml)")
    t.add_argument("--bench", action="store_true", help="tune and run every method over three orders")
    _global_flags(t, suppress=True)

    a = sub.add_parser("analyze", help="metric battery for a saved chain")
    a.add_argument("--chain", required=True, help="checkpoint directory")
    a.add_argument("--eps", type=float, default=None, help="absolute zero threshold (default: relative 1e-5 * max|entry|)")
    a.add_argument("--awom-norm", choices=("fro", "spectral"), default="fro", help="norm inside AWOM")
    _global_flags(a, suppress=True)

    v = sub.add_parser("verify", help="randomized theorem and GSR axiom checks")
    v.add_argument("--trials", type=int, default=1000, help="trials per property (default 1000)")
    v.add_argument("--thm2-trials", type=int, default=None, help="masks per density for THM2 (default min(trials, 200))")
    v.add_argument("--json", action="store_true", help="print verdict JSON instead of the table")
    _global_flags(v, suppress=True)

    r = sub.add_parser("report", help="regenerate CSV/JSON tables from a benchmark directory")
    r.add_argument("--bench-dir", required=True, help="output directory of `train --bench`")
    r.add_argument("--format", choices=("csv", "json"), default="csv", help="which emission set to write")
    _global_flags(r, suppress=True)
    return p


COMMANDS = {"train": cmd_train, "analyze": cmd_analyze, "verify": cmd_verify, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"nlora-lab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, BenchmarkError, MetricError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"nlora-lab {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
