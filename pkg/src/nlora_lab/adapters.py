"""LoRA adapters over a single frozen d x k weight, and the merge chain."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .matrix import MatrixError, as_matrix, fro_norm, matmul

INIT_STD = 0.02


class AdapterError(ValueError):
    pass


class FrozenAdapterError(AdapterError):
    pass


@dataclass(eq=False)
class LoraAdapter:
    """Factor pair with ``delta_w = a @ b``; ``a`` is d x r, ``b`` is r x k."""

    task_id: int
    a: np.ndarray
    b: np.ndarray
    frozen: bool = False
    seed: Optional[int] = None
    lam: Optional[float] = None

    def __post_init__(self):
        self.a = as_matrix(self.a, "A").copy()
        self.b = as_matrix(self.b, "B").copy()
        if self.a.shape[1] != self.b.shape[0]:
            raise AdapterError(
                f"factor shapes {self.a.shape} and {self.b.shape} disagree on rank"
            )
        if self.rank > min(self.a.shape[0], self.b.shape[1]):
            raise AdapterError(f"rank {self.rank} exceeds min(d, k) for {self.shape}")
        if self.frozen:
            self._lock()

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape[0], self.b.shape[1]

    def _lock(self):
        self.a.flags.writeable = False
        self.b.flags.writeable = False

    def freeze(self):
        self.frozen = True
        self._lock()

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(self.task_id, self.a, self.b, self.frozen, self.seed, self.lam)

    def same_as(self, other: "LoraAdapter") -> bool:
        """Bit-exact equality of both factors and all metadata."""
        return (
            self.task_id == other.task_id
            and self.frozen == other.frozen
            and self.seed == other.seed
            and self.lam == other.lam
            and _bits_equal(self.a, other.a)
            and _bits_equal(self.b, other.b)
        )


def _bits_equal(x: np.ndarray, y: np.ndarray) -> bool:
    return x.shape == y.shape and x.tobytes() == y.tobytes()


def new_adapter(task_id: int, d: int, k: int, rank: int, seed: int) -> LoraAdapter:
    """Fresh adapter: A ~ N(0, 0.02^2) from ``seed``, B = 0, so delta_w = 0."""
    if rank < 1 or rank > min(d, k):
        raise AdapterError(f"rank must lie in [1, min(d, k)] = [1, {min(d, k)}], got {rank}")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, INIT_STD, size=(d, rank))
    return LoraAdapter(task_id, a, np.zeros((rank, k)), seed=seed)


def delta_w(ad: LoraAdapter) -> np.ndarray:
    return matmul(ad.a, ad.b)


@dataclass(eq=False)
class AdapterChain:
    """Frozen base, frozen adapter history merged into ``merged``, one trainable slot."""

    base: np.ndarray
    merged: np.ndarray = None
    history: list[LoraAdapter] = field(default_factory=list)
    active: Optional[LoraAdapter] = None

    def __post_init__(self):
        self.base = as_matrix(self.base, "base").copy()
        self.base.flags.writeable = False
        if self.merged is None:
            self.merged = self.base.copy()
            for h in self.history:
                self.merged = self.merged + delta_w(h)
        else:
            self.merged = as_matrix(self.merged, "merged").copy()
        for earlier, later in zip(self.history, self.history[1:]):
            if later.task_id <= earlier.task_id:
                raise AdapterError("history task ids must be strictly increasing")

    @classmethod
    def from_base(cls, base) -> "AdapterChain":
        return cls(base=base)

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    def attach(self, ad: LoraAdapter):
        if self.active is not None:
            raise AdapterError("chain already has an active adapter")
        if ad.shape != self.shape:
            raise MatrixError(f"adapter shape {ad.shape} does not match base {self.shape}")
        if self.history and ad.task_id <= self.history[-1].task_id:
            raise AdapterError(
                f"task id {ad.task_id} must exceed last merged id {self.history[-1].task_id}"
            )
        self.active = ad

    def weight(self) -> np.ndarray:
        """Effective weight used by the forward pass."""
        if self.active is None:
            return self.merged
        return self.merged + delta_w(self.active)

    def merge_residual(self) -> float:
        """Relative Frobenius gap between ``merged`` and base + sum of history."""
        expected = self.base.copy()
        for h in self.history:
            expected = expected + delta_w(h)
        scale = max(fro_norm(expected), 1e-300)
        return fro_norm(self.merged - expected) / scale


def freeze_and_merge(chain: AdapterChain) -> AdapterChain:
    if chain.active is None:
        raise AdapterError("no active adapter to merge")
    ad = chain.active
    chain.merged = chain.merged + delta_w(ad)
    ad.freeze()
    chain.history.append(ad)
    chain.active = None
    return chain
