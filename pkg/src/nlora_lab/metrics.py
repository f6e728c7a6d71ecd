"""Continual-learning metrics over an accuracy matrix and adapter history.

Conventions:

* ``acc.a[i][j]`` is task ``i``'s test accuracy after training task ``j``
  (zero-based, defined for ``i <= j``).
* GSR is ``(mn)^(-1/2) * l1 / l2``: it lies in ``[(mn)^(-1/2), 1]`` and a
  *lower* value means *sparser*.
* A collision is a position where both matrices exceed the zero threshold.
  By default the threshold is relative: ``1e-5`` times the largest entry
  magnitude of the pair.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from . import _backend
from .matrix import MatrixError, as_matrix, fro_norm, l1_norm, nuclear_norm, singular_values

RELATIVE_EPS = 1e-5


class MetricError(ValueError):
    pass


@dataclass
class AccuracyMatrix:
    """Lower-triangular grid; undefined cells are NaN."""

    a: np.ndarray

    @classmethod
    def empty(cls, t: int) -> "AccuracyMatrix":
        return cls(np.full((t, t), np.nan))

    @property
    def t(self) -> int:
        return self.a.shape[0]

    def set(self, task: int, after: int, value: float):
        if task > after:
            raise IndexError(f"a[{task}][{after}] is above the diagonal")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"accuracy {value} outside [0, 1]")
        self.a[task, after] = value

    def to_list(self) -> list[list[Optional[float]]]:
        return [[None if math.isnan(v) else float(v) for v in row] for row in self.a]

    @classmethod
    def from_list(cls, rows) -> "AccuracyMatrix":
        a = np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise MetricError(f"accuracy matrix must be square, got {a.shape}")
        return cls(a)


def average_accuracy(acc: AccuracyMatrix) -> float:
    last = acc.a[:, acc.t - 1]
    if np.any(np.isnan(last)):
        raise MetricError("final column of the accuracy matrix is incomplete")
    return float(np.mean(last))


def forgetting_rate(acc: AccuracyMatrix, include_final: bool = True) -> float:
    """Mean over tasks ``t < T`` of (best accuracy seen for t) - final accuracy of t.

    By default the best is taken over every checkpoint from t's own training
    through the last one, so a task that only improved contributes 0. With
    ``include_final=False`` the final checkpoint is left out of the max and
    late improvement shows up as negative forgetting.
    """
    t = acc.t
    if t < 2:
        raise MetricError("forgetting rate needs at least two tasks")
    a = acc.a
    stop = t if include_final else t - 1
    total = 0.0
    for task in range(t - 1):
        seen = a[task, task:stop]
        if np.any(np.isnan(a[task, task:t])):
            raise MetricError(f"accuracy history of task {task} is incomplete")
        total += float(np.max(seen) - a[task, t - 1])
    return total / (t - 1)


def orthogonal_overlap(history_a: Sequence[np.ndarray]) -> float:
    if len(history_a) < 2:
        raise MetricError("orthogonal overlap needs at least two adapters")
    last = as_matrix(history_a[-1])
    total = 0.0
    for ai in history_a[:-1]:
        ai = as_matrix(ai)
        if ai.shape[0] != last.shape[0]:
            raise MatrixError(f"A matrices disagree on d: {ai.shape} vs {last.shape}")
        cross = ai.T @ last
        total += float(np.sum(cross * cross))
    return total


def awom(history_dw: Sequence[np.ndarray], norm: str = "fro") -> float:
    """Sum over earlier tasks of ``||dW_T^T dW_i||``; ``norm`` is "fro" or "spectral"."""
    if len(history_dw) < 2:
        raise MetricError("AWOM needs at least two adapters")
    if norm not in ("fro", "spectral"):
        raise ValueError(f"unknown AWOM norm {norm!r}")
    last = as_matrix(history_dw[-1])
    total = 0.0
    for dw in history_dw[:-1]:
        dw = as_matrix(dw)
        if dw.shape != last.shape:
            raise MatrixError(f"shape mismatch {dw.shape} vs {last.shape}")
        prod = last.T @ dw
        total += fro_norm(prod) if norm == "fro" else float(singular_values(prod)[0])
    return total


def gsr(m) -> float:
    m = as_matrix(m)
    l2 = fro_norm(m)
    if l2 == 0.0:
        raise MetricError("GSR is undefined for the zero matrix")
    return l1_norm(m) / (math.sqrt(m.size) * l2)


def pair_threshold(w1: np.ndarray, w2: np.ndarray) -> float:
    return RELATIVE_EPS * max(float(np.max(np.abs(w1))), float(np.max(np.abs(w2))))


def collision_rate(w1, w2, eps: Optional[float] = None) -> float:
    """Fraction of positions where both ``|w1|`` and ``|w2|`` exceed ``eps``.

    ``eps=None`` selects the relative default threshold for this pair.
    """
    w1 = as_matrix(w1, "w1")
    w2 = as_matrix(w2, "w2")
    if w1.shape != w2.shape:
        raise MatrixError(f"shape mismatch {w1.shape} vs {w2.shape}")
    if eps is None:
        eps = pair_threshold(w1, w2)
    elif eps < 0:
        raise ValueError("eps must be >= 0")
    return _backend.count_collisions(w1, w2, float(eps)) / w1.size


def collision_mask(w1, w2, eps: Optional[float] = None) -> np.ndarray:
    """Per-position 0/1 grid of the collisions counted by :func:`collision_rate`."""
    w1 = as_matrix(w1, "w1")
    w2 = as_matrix(w2, "w2")
    if w1.shape != w2.shape:
        raise MatrixError(f"shape mismatch {w1.shape} vs {w2.shape}")
    if eps is None:
        eps = pair_threshold(w1, w2)
    elif eps < 0:
        raise ValueError("eps must be >= 0")
    return ((np.abs(w1) > eps) & (np.abs(w2) > eps)).astype(np.int64)


def acr(history_dw: Sequence[np.ndarray], eps: Optional[float] = None) -> tuple[float, list[list[float]]]:
    """Mean pairwise collision rate and the full symmetric pair table (diagonal = 1 or self-CR)."""
    t = len(history_dw)
    if t < 2:
        raise MetricError("ACR needs at least two matrices")
    table = [[0.0] * t for _ in range(t)]
    for i in range(t):
        table[i][i] = collision_rate(history_dw[i], history_dw[i], eps)
    total = 0.0
    for i, j in combinations(range(t), 2):
        cr = collision_rate(history_dw[i], history_dw[j], eps)
        table[i][j] = table[j][i] = cr
        total += cr
    return total / (t * (t - 1) / 2), table


def nuclear_report(history_dw: Sequence[np.ndarray]) -> list[float]:
    return [nuclear_norm(dw) for dw in history_dw]


@dataclass
class MetricsReport:
    avg_accuracy: Optional[float]
    forgetting_rate: Optional[float]
    oo: Optional[float]
    awom: Optional[float]
    gsr_per_task: list[Optional[float]]
    acr: Optional[float]
    cr_pairs: list[list[float]]
    nuclear_per_task: list[float]
    zero_threshold: float
    zero_threshold_relative: bool = True
    awom_norm: str = "fro"
    accuracy: Optional[list[list[Optional[float]]]] = None
    extra: dict = field(default_factory=dict)

    @property
    def gsr_mean(self) -> Optional[float]:
        vals = [g for g in self.gsr_per_task if g is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def nuclear_mean(self) -> float:
        return float(np.mean(self.nuclear_per_task)) if self.nuclear_per_task else 0.0

    def scalars(self) -> dict:
        return {
            "avg_accuracy": self.avg_accuracy,
            "forgetting_rate": self.forgetting_rate,
            "oo": self.oo,
            "awom": self.awom,
            "gsr_mean": self.gsr_mean,
            "acr": self.acr,
            "nuclear_mean": self.nuclear_mean,
            "zero_threshold": self.zero_threshold,
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["gsr_mean"] = self.gsr_mean
        out["nuclear_mean"] = self.nuclear_mean
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        data = {k: v for k, v in data.items() if k not in ("gsr_mean", "nuclear_mean")}
        return cls(**data)

    def csv_header_and_row(self) -> tuple[list[str], list]:
        header, row = [], []
        for key, value in self.scalars().items():
            header.append(key)
            row.append(_fmt(value))
        for name, values in (("gsr", self.gsr_per_task), ("nuclear", self.nuclear_per_task)):
            for i, v in enumerate(values):
                header.append(f"{name}_{i}")
                row.append(_fmt(v))
        return header, row

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header, row = self.csv_header_and_row()
        writer.writerow(header)
        writer.writerow(row)
        return buf.getvalue()


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def compute_report(
    history_a: Sequence[np.ndarray],
    history_dw: Sequence[np.ndarray],
    acc: Optional[AccuracyMatrix] = None,
    eps: Optional[float] = None,
    awom_norm: str = "fro",
) -> MetricsReport:
    """Full metric battery. Metrics needing two tasks are ``None`` for a single task."""
    aa = fra = None
    if acc is not None:
        if not np.any(np.isnan(acc.a[:, acc.t - 1])):
            aa = average_accuracy(acc)
        if acc.t >= 2:
            try:
                fra = forgetting_rate(acc)
            except MetricError:
                fra = None
    multi = len(history_dw) >= 2
    gsrs = [gsr(dw) if np.any(dw) else None for dw in history_dw]
    acr_value, table = acr(history_dw, eps) if multi else (None, [])
    return MetricsReport(
        avg_accuracy=aa,
        forgetting_rate=fra,
        oo=orthogonal_overlap(history_a) if multi else None,
        awom=awom(history_dw, awom_norm) if multi else None,
        gsr_per_task=gsrs,
        acr=acr_value,
        cr_pairs=table,
        nuclear_per_task=nuclear_report(history_dw),
        zero_threshold=RELATIVE_EPS if eps is None else float(eps),
        zero_threshold_relative=eps is None,
        awom_norm=awom_norm,
        accuracy=acc.to_list() if acc is not None else None,
    )
