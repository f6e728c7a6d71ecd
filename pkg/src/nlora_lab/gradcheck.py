"""Central finite-difference checks for every analytic gradient in ``objectives``.

Relative error of an instance is ``||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||)``
over all checked coordinates at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapters import AdapterChain, LoraAdapter, freeze_and_merge
from .objectives import RegularizerMode, cross_entropy, orth_loss, sparse_loss

FD_STEP = 1e-6
REL_TOL = 1e-5
# l1 instances keep every penalized entry at least this far from its kink
KINK_MARGIN = 1e-4


@dataclass
class GradCheckResult:
    name: str
    instances: int
    worst_rel_error: float
    failures: int

    @property
    def passed(self) -> bool:
        return self.failures == 0


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x``, perturbed in place."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2.0 * h)
    return g


def rel_error(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def _shape(rng):
    d = int(rng.integers(2, 9))
    k = int(rng.integers(2, 6))
    r = int(rng.integers(1, min(d, k) + 1))
    return d, k, r


def _chain_instance(rng):
    d, k, r = _shape(rng)
    chain = AdapterChain.from_base(rng.standard_normal((d, k)))
    chain.attach(LoraAdapter(0, rng.standard_normal((d, r)), rng.standard_normal((r, k))))
    n = int(rng.integers(1, 12))
    return chain, rng.standard_normal((n, d)), rng.integers(0, k, size=n)


def _far_from_kink(m: np.ndarray) -> bool:
    return bool(np.all(np.abs(m) > KINK_MARGIN))


def _sparse_instance(rng, mode: RegularizerMode):
    while True:
        d, k, r = _shape(rng)
        ad = LoraAdapter(0, rng.standard_normal((d, r)), rng.standard_normal((r, k)))
        watched = {
            RegularizerMode.L1_DW: [ad.a @ ad.b],
            RegularizerMode.L1_A: [ad.a],
            RegularizerMode.L1_B: [ad.b],
            RegularizerMode.L1_AB: [ad.a, ad.b],
        }[mode]
        if all(_far_from_kink(m) for m in watched):
            return ad, float(rng.uniform(0.1, 2.0))


def _run(name, instances, seed, one) -> GradCheckResult:
    worst, failures = 0.0, 0
    for t in range(instances):
        err = one(np.random.default_rng([seed, t]))
        worst = max(worst, err)
        failures += err > REL_TOL
    return GradCheckResult(name, instances, worst, failures)


def check_cross_entropy(instances: int = 100, seed: int = 0) -> GradCheckResult:
    def one(rng):
        chain, xs, ys = _chain_instance(rng)
        ad = chain.active
        _, ga, gb = cross_entropy(chain, xs, ys)
        f = lambda: cross_entropy(chain, xs, ys)[0]
        return rel_error([ga, gb], [numeric_grad(f, ad.a), numeric_grad(f, ad.b)])

    return _run("cross_entropy", instances, seed, one)


def check_sparse_loss(mode: RegularizerMode, instances: int = 100, seed: int = 0) -> GradCheckResult:
    mode = RegularizerMode(mode)

    def one(rng):
        ad, lam = _sparse_instance(rng, mode)
        _, ga, gb = sparse_loss(ad, lam, mode)
        f = lambda: sparse_loss(ad, lam, mode)[0]
        return rel_error([ga, gb], [numeric_grad(f, ad.a), numeric_grad(f, ad.b)])

    return _run(f"sparse_loss[{mode.value}]", instances, seed, one)


def check_orth_loss(instances: int = 100, seed: int = 0) -> GradCheckResult:
    def one(rng):
        d, k, r = _shape(rng)
        chain = AdapterChain.from_base(np.zeros((d, k)))
        for t in range(int(rng.integers(1, 4))):
            ri = int(rng.integers(1, min(d, k) + 1))
            chain.attach(LoraAdapter(t, rng.standard_normal((d, ri)), rng.standard_normal((ri, k))))
            freeze_and_merge(chain)
        active = LoraAdapter(9, rng.standard_normal((d, r)), rng.standard_normal((r, k)))
        lam = float(rng.uniform(0.1, 2.0))
        _, ga = orth_loss(active, chain.history, lam)
        f = lambda: orth_loss(active, chain.history, lam)[0]
        return rel_error([ga], [numeric_grad(f, active.a)])

    return _run("orth_loss", instances, seed, one)


L1_MODES = (RegularizerMode.L1_DW, RegularizerMode.L1_A, RegularizerMode.L1_B, RegularizerMode.L1_AB)


def check_all(instances: int = 100, seed: int = 0) -> list[GradCheckResult]:
    return [
        check_cross_entropy(instances, seed),
        *[check_sparse_loss(m, instances, seed) for m in L1_MODES],
        check_orth_loss(instances, seed),
    ]
