"""Losses and analytic gradients for the linear-softmax task model.

Only the active adapter's factors receive gradients. The l1 term is handled
by subgradients with ``sign(0) = 0``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .adapters import AdapterChain, LoraAdapter
from .matrix import MatrixError, as_matrix, elementwise_sign

DEFAULT_LAMBDA_ORTH = 0.5


class RegularizerMode(str, enum.Enum):
    NONE = "NONE"
    L1_DW = "L1_DW"
    L1_A = "L1_A"
    L1_B = "L1_B"
    L1_AB = "L1_AB"
    ORTH = "ORTH"
    ORTH_PLUS_L1_DW = "ORTH_PLUS_L1_DW"

    @property
    def l1_part(self) -> "RegularizerMode":
        if self is RegularizerMode.ORTH_PLUS_L1_DW:
            return RegularizerMode.L1_DW
        if self is RegularizerMode.ORTH:
            return RegularizerMode.NONE
        return self

    @property
    def uses_orth(self) -> bool:
        return self in (RegularizerMode.ORTH, RegularizerMode.ORTH_PLUS_L1_DW)


@dataclass
class LossBreakdown:
    task_loss: float
    reg_loss: float
    total: float
    grad_a: np.ndarray
    grad_b: np.ndarray


def _check_batch(xs, ys, d: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("batch must be a nonempty 2-D array of feature vectors")
    if xs.shape[1] != d:
        raise MatrixError(f"feature dimension {xs.shape[1]} does not match d={d}")
    if ys.shape != (xs.shape[0],):
        raise ValueError(f"need one label per example, got {ys.shape} for {xs.shape[0]} rows")
    if not np.issubdtype(ys.dtype, np.integer):
        raise ValueError("labels must be integers")
    if ys.min() < 0 or ys.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range [{ys.min()}, {ys.max()}]")
    return xs, ys


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def cross_entropy(chain: AdapterChain, xs, ys) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean negative log-likelihood of ``xs @ (merged + A B)`` and its factor gradients."""
    ad = chain.active
    if ad is None:
        raise ValueError("cross_entropy needs an active adapter")
    d, k = chain.shape
    xs, ys = _check_batch(xs, ys, d, k)
    n = xs.shape[0]
    logp = log_softmax(xs @ chain.weight())
    loss = -float(np.mean(logp[np.arange(n), ys]))
    residual = np.exp(logp)
    residual[np.arange(n), ys] -= 1.0
    g = xs.T @ residual / n
    return loss, g @ ad.b.T, ad.a.T @ g


def sparse_loss(ad: LoraAdapter, lam: float, mode: RegularizerMode) -> tuple[float, np.ndarray, np.ndarray]:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    mode = RegularizerMode(mode).l1_part
    a, b = ad.a, ad.b
    if mode is RegularizerMode.NONE or lam == 0:
        return 0.0, np.zeros_like(a), np.zeros_like(b)
    if mode is RegularizerMode.L1_DW:
        dw = a @ b
        s = elementwise_sign(dw)
        return lam * float(np.sum(np.abs(dw))), lam * (s @ b.T), lam * (a.T @ s)
    loss = 0.0
    grad_a = np.zeros_like(a)
    grad_b = np.zeros_like(b)
    if mode in (RegularizerMode.L1_A, RegularizerMode.L1_AB):
        loss += lam * float(np.sum(np.abs(a)))
        grad_a = lam * np.sign(a)
    if mode in (RegularizerMode.L1_B, RegularizerMode.L1_AB):
        loss += lam * float(np.sum(np.abs(b)))
        grad_b = lam * np.sign(b)
    return loss, grad_a, grad_b


def orth_loss(active: LoraAdapter, history: Sequence[LoraAdapter], lambda_orth: float) -> tuple[float, np.ndarray]:
    """``lambda_orth * sum_i ||A_i^T A_t||^2`` (entrywise squares) and its A_t gradient."""
    at = as_matrix(active.a, "A_t")
    loss = 0.0
    grad = np.zeros_like(at)
    for h in history:
        ai = h.a
        if ai.shape[0] != at.shape[0]:
            raise MatrixError(f"A_{h.task_id} has {ai.shape[0]} rows, active A has {at.shape[0]}")
        cross = ai.T @ at
        loss += float(np.sum(cross * cross))
        grad += ai @ cross
    return lambda_orth * loss, 2.0 * lambda_orth * grad


def total_objective(
    chain: AdapterChain,
    xs,
    ys,
    lam: float,
    mode: RegularizerMode,
    lambda_orth: float = DEFAULT_LAMBDA_ORTH,
) -> LossBreakdown:
    mode = RegularizerMode(mode)
    task_loss, grad_a, grad_b = cross_entropy(chain, xs, ys)
    reg, ga, gb = sparse_loss(chain.active, lam, mode)
    grad_a = grad_a + ga
    grad_b = grad_b + gb
    if mode.uses_orth:
        o, go = orth_loss(chain.active, chain.history, lambda_orth)
        reg += o
        grad_a = grad_a + go
    return LossBreakdown(task_loss, reg, task_loss + reg, grad_a, grad_b)
