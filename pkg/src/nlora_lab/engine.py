"""Sequential continual-learning loop over an :class:`AdapterChain`."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adapters import AdapterChain, FrozenAdapterError, LoraAdapter, delta_w, freeze_and_merge, new_adapter
from .metrics import AccuracyMatrix, MetricsReport, compute_report
from .objectives import DEFAULT_LAMBDA_ORTH, RegularizerMode, log_softmax, total_objective

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    rank: int = 4
    lambda_per_task: list[float] = field(default_factory=lambda: [0.4])
    mode: RegularizerMode = RegularizerMode.L1_DW
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    eval_after_each_task: bool = True
    lambda_orth: float = DEFAULT_LAMBDA_ORTH
    # SeqLoRA-style warm start: each new adapter inherits the previous A (B still starts at 0)
    reuse_subspace: bool = False
    # caps total SGD steps per task; None = epochs * ceil(n / batch_size)
    max_steps: Optional[int] = None

    def __post_init__(self):
        self.mode = RegularizerMode(self.mode)
        self.lambda_per_task = [float(x) for x in self.lambda_per_task]
        self.validate()

    def validate(self, num_tasks: Optional[int] = None):
        problems = []
        if self.rank < 1:
            problems.append("rank must be >= 1")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if self.epochs < 1:
            problems.append("epochs must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if any(lam < 0 for lam in self.lambda_per_task):
            problems.append("lambda_per_task entries must be >= 0")
        if self.lambda_orth < 0:
            problems.append("lambda_orth must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            problems.append("max_steps must be >= 0")
        if num_tasks is not None and len(self.lambda_per_task) != num_tasks:
            problems.append(
                f"lambda_per_task has {len(self.lambda_per_task)} entries for {num_tasks} tasks"
            )
        if problems:
            raise ConfigError("; ".join(problems))

    def for_tasks(self, num_tasks: int) -> "TrainConfig":
        """Copy with a single lambda broadcast to ``num_tasks`` entries."""
        lams = self.lambda_per_task
        if len(lams) == 1 and num_tasks != 1:
            lams = lams * num_tasks
        cfg = TrainConfig(**{**asdict(self), "lambda_per_task": lams})
        cfg.validate(num_tasks)
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        return out


@dataclass
class TaskLog:
    task_index: int
    epoch_total: list[float]
    epoch_task: list[float]
    epoch_reg: list[float]
    final_task_loss: float
    final_reg_loss: float
    steps: int


def sgd_step(ad: LoraAdapter, grads: tuple[np.ndarray, np.ndarray], lr: float):
    if ad.frozen:
        raise FrozenAdapterError(f"adapter {ad.task_id} is frozen")
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    grad_a, grad_b = grads
    ad.a -= lr * grad_a
    ad.b -= lr * grad_b


def predict(weight: np.ndarray, xs) -> np.ndarray:
    # np.argmax picks the lowest index on ties
    return np.argmax(np.asarray(xs) @ weight, axis=1)


def accuracy(weight: np.ndarray, xs, ys) -> float:
    return float(np.mean(predict(weight, xs) == np.asarray(ys)))


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_task(
    chain: AdapterChain,
    task,
    cfg: TrainConfig,
    task_index: int,
    log_path: Optional[Path] = None,
) -> TaskLog:
    """SGD on the active adapter only; base and history are never written."""
    ad = chain.active
    if ad is None:
        raise ValueError("chain has no active adapter")
    xs, ys = np.asarray(task.train_x), np.asarray(task.train_y)
    if xs.shape[0] == 0:
        raise ValueError("task has no training data")
    lam = cfg.lambda_per_task[task_index]
    rng = np.random.default_rng([cfg.seed, task_index, 0x7A5C])
    steps_per_epoch = math.ceil(xs.shape[0] / cfg.batch_size)
    budget = cfg.epochs * steps_per_epoch if cfg.max_steps is None else cfg.max_steps
    steps = 0
    totals, tasks_l, regs = [], [], []
    out = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            if steps >= budget:
                break
            acc_total = acc_task = acc_reg = 0.0
            count = 0
            for idx in _batches(xs.shape[0], cfg.batch_size, rng):
                if steps >= budget:
                    break
                br = total_objective(chain, xs[idx], ys[idx], lam, cfg.mode, cfg.lambda_orth)
                if not math.isfinite(br.total):
                    raise TrainingDivergedError(
                        f"non-finite loss at task {task_index}, epoch {epoch}, step {steps} "
                        f"(task={br.task_loss}, reg={br.reg_loss})"
                    )
                sgd_step(ad, (br.grad_a, br.grad_b), cfg.learning_rate)
                steps += 1
                if not (np.isfinite(ad.a).all() and np.isfinite(ad.b).all()):
                    raise TrainingDivergedError(
                        f"adapter {ad.task_id} left the finite range at task {task_index}, epoch {epoch}, step {steps}"
                    )
                count += 1
                acc_total += br.total
                acc_task += br.task_loss
                acc_reg += br.reg_loss
            if count:
                totals.append(acc_total / count)
                tasks_l.append(acc_task / count)
                regs.append(acc_reg / count)
                if out:
                    out.write(json.dumps({
                        "task_index": task_index, "epoch": epoch, "steps": steps,
                        "total": totals[-1], "task_loss": tasks_l[-1], "reg_loss": regs[-1],
                    }) + "\n")
        final = total_objective(chain, xs, ys, lam, cfg.mode, cfg.lambda_orth)
    finally:
        if out:
            out.close()
    return TaskLog(task_index, totals, tasks_l, regs, final.task_loss, final.reg_loss, steps)


def pretrain_base(task, epochs: int = 20, lr: float = 0.1, batch_size: int = 32, seed: int = 0) -> np.ndarray:
    """Full-weight SGD on a held-out task; the result becomes the frozen base."""
    xs, ys = np.asarray(task.train_x), np.asarray(task.train_y)
    n, d = xs.shape
    k = int(task.num_classes)
    w = np.zeros((d, k))
    rng = np.random.default_rng([seed, 0xBA5E])
    for _ in range(epochs):
        for idx in _batches(n, batch_size, rng):
            p = np.exp(log_softmax(xs[idx] @ w))
            p[np.arange(len(idx)), ys[idx]] -= 1.0
            w -= lr * (xs[idx].T @ p / len(idx))
    return w


@dataclass
class SequenceResult:
    chain: AdapterChain
    accuracy: AccuracyMatrix
    report: MetricsReport
    logs: list[TaskLog]


def adapter_seed(cfg: TrainConfig, position: int) -> int:
    return cfg.seed * 1000 + position


def run_sequence(
    tasks: Sequence,
    cfg: TrainConfig,
    base: Optional[np.ndarray] = None,
    log_path: Optional[Path] = None,
    eps: Optional[float] = None,
    awom_norm: str = "fro",
) -> SequenceResult:
    if not tasks:
        raise ValueError("need at least one task")
    cfg = cfg.for_tasks(len(tasks))
    d = tasks[0].train_x.shape[1]
    k = tasks[0].num_classes
    chain = AdapterChain.from_base(np.zeros((d, k)) if base is None else base)
    acc = AccuracyMatrix.empty(len(tasks))
    logs = []
    for j, task in enumerate(tasks):
        ad = new_adapter(j, d, k, cfg.rank, adapter_seed(cfg, j))
        ad.lam = cfg.lambda_per_task[j]
        if cfg.reuse_subspace and chain.history:
            ad.a[...] = chain.history[-1].a
        chain.attach(ad)
        logs.append(train_task(chain, task, cfg, j, log_path))
        if cfg.eval_after_each_task or j == len(tasks) - 1:
            w = chain.weight()
            for i in range(j + 1):
                acc.set(i, j, accuracy(w, tasks[i].test_x, tasks[i].test_y))
        freeze_and_merge(chain)
        log.debug("task %d done: final task loss %.4f", j, logs[-1].final_task_loss)
    report = compute_report(
        [h.a for h in chain.history],
        [delta_w(h) for h in chain.history],
        acc,
        eps=eps,
        awom_norm=awom_norm,
    )
    return SequenceResult(chain, acc, report, logs)
