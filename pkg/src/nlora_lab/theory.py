"""Randomized checks of the collision/orthogonality theorems and GSR axioms.

GSR here is ``(mn)^(-1/2) * l1 / l2``, so lower means sparser. Under that
normalization the axioms read:

    D1  Robin-Hood transfer (large -> small entry)   GSR strictly increases
    D2  scaling by alpha > 0                         GSR unchanged
    D3  adding gamma > 0 to every entry              GSR strictly increases
    D4  k-fold horizontal cloning                    GSR unchanged
    P1  one entry scaled by 1e6                      GSR -> (mn)^(-1/2) (its minimum)
    P2  appending an all-zero column                 GSR strictly decreases

Trial ``t`` of a check draws from ``default_rng(seed + t)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .matrix import fro_norm
from .metrics import collision_rate, gsr

EQ_TOL = 1e-12
THM1_TOL = 1e-12
P1_SCALE = 1e6
P1_REL_TOL = 0.01
THM2_SIGMAS = 4.0
DEFAULT_DENSITIES = (0.05, 0.1, 0.2, 0.4, 1.0)
SLOPE_DENSITIES = (0.05, 0.1, 0.2, 0.4)

PROPERTY_IDS = ("THM1", "THM2", "D1", "D2", "D3", "D4", "P1", "P2")

NOTES = {
    "THM1": "non-collision => W1^T W2 = 0 fails off the diagonal for generic pairs (see detail); "
    "the trace vanishes always, the product vanishes for row-disjoint supports; colliding orthogonal witnesses show non-necessity",
    "THM2": "mean CR of independent Bernoulli(s) supports matches s^2 within 4 standard errors",
    "D1": "Robin-Hood transfer raises GSR (lower GSR = sparser)",
    "D2": "GSR is scale invariant",
    "D3": "adding a constant raises GSR",
    "D4": "horizontal cloning leaves GSR unchanged",
    "P1": "a dominant entry drives GSR to its minimum (mn)^-1/2, the sparsest reading",
    "P2": "appending a zero column lowers GSR, so the matrix reads as sparser",
}


@dataclass
class PropertyVerdict:
    property_id: str
    trials: int
    failures: int
    worst_violation: float
    passed: bool
    detail: dict | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        out["note"] = NOTES.get(self.property_id, "")
        return out


def _verdict(pid: str, trials: int, violations: Sequence[float], failures: int, **detail) -> PropertyVerdict:
    worst = float(max(violations)) if len(violations) else 0.0
    return PropertyVerdict(pid, trials, failures, worst, failures == 0, detail or None)


def _random_shape(rng: np.random.Generator, max_dim: int) -> tuple[int, int]:
    return int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1))


def disjoint_pair(rng: np.random.Generator, max_dim: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Two random matrices whose supports never overlap."""
    m, n = _random_shape(rng, max_dim)
    owner = rng.integers(0, 3, size=(m, n))  # 0: neither, 1: first, 2: second
    w1 = np.where(owner == 1, rng.standard_normal((m, n)), 0.0)
    w2 = np.where(owner == 2, rng.standard_normal((m, n)), 0.0)
    return w1, w2


def colliding_orthogonal_pair(rng: np.random.Generator, max_dim: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal pair that collides: a shared column holding (x, x) vs (y, -y)."""
    m = int(rng.integers(2, max_dim + 1))
    n = int(rng.integers(1, max_dim + 1))
    p, q = rng.choice(m, size=2, replace=False)
    col = int(rng.integers(0, n))
    x, y = rng.uniform(0.5, 2.0, size=2) * rng.choice([-1.0, 1.0], size=2)
    w1 = np.zeros((m, n))
    w2 = np.zeros((m, n))
    w1[p, col] = w1[q, col] = x
    w2[p, col], w2[q, col] = y, -y
    return w1, w2


def check_thm1_noncollision_orthogonality(trials: int = 1000, seed: int = 0, max_dim: int = 64) -> PropertyVerdict:
    """Non-collision => ``W1^T W2 = 0``, plus a colliding orthogonal witness per trial.

    Position-disjoint supports only zero the *diagonal* of ``W1^T W2``
    (entry (k, l) pairs column k of W1 with column l of W2, at different
    positions when k != l). The verdict therefore fails on generic pairs;
    ``detail`` also reports the two weaker statements that do hold: the
    trace vanishes for every non-colliding pair, and the full product
    vanishes when the row supports are disjoint.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    failures = 0
    violations = []
    witness_failures = trace_failures = row_failures = 0
    counterexample = None
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        w1, w2 = disjoint_pair(rng, max_dim)
        norm = fro_norm(w1.T @ w2)
        product_ok = norm <= THM1_TOL and collision_rate(w1, w2, 0.0) == 0.0
        if not product_ok and counterexample is None:
            counterexample = {"trial": t, "shape": list(w1.shape), "product_fro": norm}
        trace_failures += abs(float(np.sum(w1 * w2))) > THM1_TOL
        r1, r2 = row_disjoint_pair(rng, max_dim)
        row_failures += fro_norm(r1.T @ r2) > THM1_TOL
        v1, v2 = colliding_orthogonal_pair(rng, max_dim)
        wnorm = fro_norm(v1.T @ v2)
        witness_ok = wnorm <= THM1_TOL and collision_rate(v1, v2, 0.0) > 0.0
        witness_failures += not witness_ok
        failures += not (product_ok and witness_ok)
        violations.append(max(norm, wnorm))
    return _verdict(
        "THM1", trials, violations, failures,
        witness_failures=witness_failures,
        trace_failures=trace_failures,
        row_disjoint_failures=row_failures,
        first_counterexample=counterexample,
        minimal_counterexample={"w1": [[1.0, 0.0]], "w2": [[0.0, 1.0]], "w1t_w2": [[0.0, 1.0], [0.0, 0.0]]},
    )


def row_disjoint_pair(rng: np.random.Generator, max_dim: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Pair whose nonzero *rows* never overlap; here ``W1^T W2 = 0`` exactly."""
    m, n = _random_shape(rng, max_dim)
    owner = rng.integers(0, 3, size=(m, 1))
    w1 = np.where(owner == 1, rng.standard_normal((m, n)), 0.0)
    w2 = np.where(owner == 2, rng.standard_normal((m, n)), 0.0)
    return w1, w2


def bernoulli_mask(rng: np.random.Generator, shape: tuple[int, int], density: float) -> np.ndarray:
    return (rng.random(shape) < density).astype(np.float64)


def check_thm2_quadratic_collision(
    densities: Sequence[float] = DEFAULT_DENSITIES,
    dims: tuple[int, int] = (64, 64),
    trials: int = 200,
    seed: int = 0,
) -> PropertyVerdict:
    if trials < 30:
        raise ValueError("THM2 needs at least 30 trials")
    for s in densities:
        if not 0.0 < s <= 1.0:
            raise ValueError(f"density {s} outside (0, 1]")
    m, n = dims
    failures = 0
    violations = []
    curve = {}
    for s in densities:
        crs = np.empty(trials)
        for t in range(trials):
            rng = np.random.default_rng(seed + t)
            crs[t] = collision_rate(bernoulli_mask(rng, dims, s), bernoulli_mask(rng, dims, s), 0.0)
        mean = float(crs.mean())
        expected = s * s
        se = math.sqrt(expected * (1.0 - expected) / (m * n * trials))
        dev = abs(mean - expected)
        ok = dev <= THM2_SIGMAS * se if se > 0 else dev == 0.0
        failures += not ok
        violations.append(dev)
        curve[repr(s)] = {"mean_cr": mean, "expected": expected, "stderr": se}
    slope_pts = [s for s in SLOPE_DENSITIES if s in densities]
    slope = None
    if len(slope_pts) >= 2:
        xs = np.log(slope_pts)
        ys = np.log([curve[repr(s)]["mean_cr"] for s in slope_pts])
        slope = float(np.polyfit(xs, ys, 1)[0])
        if abs(slope - 2.0) > 0.1:
            failures += 1
    return _verdict("THM2", trials, violations, failures, densities=list(densities), curve=curve, loglog_slope=slope)


def _positive_matrix(rng: np.random.Generator, max_dim: int = 16, min_size: int = 2) -> np.ndarray:
    while True:
        m, n = _random_shape(rng, max_dim)
        if m * n >= min_size:
            return rng.uniform(0.1, 1.0, size=(m, n))


def _robin_hood(rng, x):
    flat = x.ravel().copy()
    while True:
        i, j = rng.choice(flat.size, size=2, replace=False)
        if flat[i] < flat[j]:
            i, j = j, i
        if flat[i] - flat[j] > 1e-3:
            break
    alpha = rng.uniform(0.05, 0.95) * (flat[i] - flat[j]) / 2.0
    flat[i] -= alpha
    flat[j] += alpha
    return flat.reshape(x.shape)


def _strict_increase(before: float, after: float) -> float:
    return 0.0 if after > before else before - after + np.finfo(float).tiny


def _gsr_trial(pid: str, rng: np.random.Generator) -> tuple[bool, float]:
    x = _positive_matrix(rng)
    g = gsr(x)
    if pid == "D1":
        v = _strict_increase(g, gsr(_robin_hood(rng, x)))
        return v == 0.0, v
    if pid == "D2":
        alpha = float(np.exp(rng.uniform(-6.0, 6.0)))
        v = abs(gsr(alpha * x) - g)
        return v <= EQ_TOL, v
    if pid == "D3":
        v = _strict_increase(g, gsr(x + rng.uniform(0.01, 1.0)))
        return v == 0.0, v
    if pid == "D4":
        k = int(rng.integers(2, 6))
        v = abs(gsr(np.hstack([x] * k)) - g)
        return v <= EQ_TOL, v
    if pid == "P1":
        y = x.copy()
        y.flat[int(rng.integers(0, y.size))] *= P1_SCALE
        floor = 1.0 / math.sqrt(y.size)
        v = abs(gsr(y) - floor) / floor
        return v <= P1_REL_TOL, v
    if pid == "P2":
        after = gsr(np.hstack([x, np.zeros((x.shape[0], 1))]))
        v = _strict_increase(after, g)
        return v == 0.0, v
    raise ValueError(pid)


GSR_PROPERTIES = ("D1", "D2", "D3", "D4", "P1", "P2")


def check_gsr_properties(trials: int = 1000, seed: int = 0) -> list[PropertyVerdict]:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    verdicts = []
    for offset, pid in enumerate(GSR_PROPERTIES):
        failures = 0
        violations = []
        for t in range(trials):
            # distinct stream per property so the six checks do not share draws
            rng = np.random.default_rng([seed + t, offset])
            ok, v = _gsr_trial(pid, rng)
            failures += not ok
            violations.append(v)
        verdicts.append(_verdict(pid, trials, violations, failures))
    return verdicts


def run_all(trials: int = 1000, seed: int = 0, thm2_trials: int | None = None) -> list[PropertyVerdict]:
    thm2_trials = max(30, min(trials, 200) if thm2_trials is None else thm2_trials)
    return [
        check_thm1_noncollision_orthogonality(trials, seed),
        check_thm2_quadratic_collision(trials=thm2_trials, seed=seed),
        *check_gsr_properties(trials, seed),
    ]


def verdicts_json(verdicts: Sequence[PropertyVerdict]) -> str:
    return json.dumps({"verdicts": [v.to_dict() for v in verdicts], "all_pass": all(v.passed for v in verdicts)}, indent=2) + "\n"
