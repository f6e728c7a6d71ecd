import json
import math
import time

import numpy as np
import pytest

from nlora_lab import theory
from nlora_lab.matrix import fro_norm
from nlora_lab.metrics import collision_rate, gsr


# --- THM1 -----------------------------------------------------------------


@pytest.mark.example
def test_thm1_disjoint_example():
    w1 = np.array([[1.0, 0.0], [0.0, 0.0]])
    w2 = np.array([[0.0, 0.0], [0.0, 5.0]])
    assert fro_norm(w1.T @ w2) == 0.0
    assert collision_rate(w1, w2) == 0.0


@pytest.mark.example
def test_thm1_non_necessity_witness():
    w1 = np.array([[1.0], [1.0]])
    w2 = np.array([[1.0], [-1.0]])
    assert np.array_equal(w1.T @ w2, np.array([[0.0]]))
    assert collision_rate(w1, w2) == 1.0


@pytest.mark.example
def test_thm1_thousand_trials_no_failures():
    v = theory.check_thm1_noncollision_orthogonality(1000, seed=0)
    assert v.trials == 1000
    assert v.failures == 0, f"{v.failures} failures, worst {v.worst_violation}; see detail {v.detail['first_counterexample']}"


def test_thm1_witnesses_always_hold():
    v = theory.check_thm1_noncollision_orthogonality(200, seed=3)
    assert v.detail["witness_failures"] == 0


def test_thm1_weaker_statements_hold():
    v = theory.check_thm1_noncollision_orthogonality(200, seed=4)
    assert v.detail["trace_failures"] == 0
    assert v.detail["row_disjoint_failures"] == 0


def test_thm1_minimal_counterexample_is_real():
    ce = theory.check_thm1_noncollision_orthogonality(1, seed=0).detail["minimal_counterexample"]
    w1, w2 = np.array(ce["w1"]), np.array(ce["w2"])
    assert collision_rate(w1, w2, 0.0) == 0.0
    assert np.array_equal(w1.T @ w2, np.array(ce["w1t_w2"]))
    assert fro_norm(w1.T @ w2) == 1.0


def test_disjoint_pair_supports_never_overlap(rng):
    for _ in range(50):
        w1, w2 = theory.disjoint_pair(rng)
        assert not np.any((w1 != 0) & (w2 != 0))
        assert max(w1.shape) <= 64 and max(w2.shape) <= 64


def test_thm1_rejects_zero_trials():
    with pytest.raises(ValueError):
        theory.check_thm1_noncollision_orthogonality(0)


# --- THM2 -----------------------------------------------------------------


@pytest.mark.example
def test_thm2_full_density_collides_exactly(rng):
    for seed in range(20):
        r = np.random.default_rng(seed)
        m1 = theory.bernoulli_mask(r, (64, 64), 1.0)
        m2 = theory.bernoulli_mask(r, (64, 64), 1.0)
        assert collision_rate(m1, m2, 0.0) == 1.0
    curve = theory.check_thm2_quadratic_collision([1.0], trials=30).detail["curve"]
    assert curve["1.0"]["mean_cr"] == 1.0


@pytest.mark.example
@pytest.mark.parametrize("s", [0.1, 0.5])
def test_thm2_density_band(s):
    v = theory.check_thm2_quadratic_collision([s], dims=(64, 64), trials=200, seed=0)
    point = v.detail["curve"][repr(s)]
    assert point["expected"] == s * s
    assert point["stderr"] == pytest.approx(math.sqrt(s * s * (1 - s * s) / (64 * 64 * 200)), rel=1e-15)
    assert abs(point["mean_cr"] - s * s) <= 4 * point["stderr"]
    assert v.passed


def test_thm2_slope_is_quadratic():
    v = theory.check_thm2_quadratic_collision(trials=200, seed=0)
    assert abs(v.detail["loglog_slope"] - 2.0) <= 0.1


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_thm2_rejects_bad_density(bad):
    with pytest.raises(ValueError):
        theory.check_thm2_quadratic_collision([bad], trials=30)


def test_thm2_rejects_few_trials():
    with pytest.raises(ValueError):
        theory.check_thm2_quadratic_collision(trials=29)


# --- GSR axioms -----------------------------------------------------------


@pytest.mark.example
def test_d2_example():
    m = np.array([[3.0, 4.0], [0.0, 0.0]])
    assert gsr(m) == pytest.approx(0.7, abs=1e-12)
    assert gsr(10.0 * m) == pytest.approx(0.7, abs=1e-12)


@pytest.mark.example
def test_d4_example_k4(rng):
    for _ in range(20):
        m = rng.uniform(0.1, 1.0, size=tuple(rng.integers(1, 9, size=2)))
        assert abs(gsr(np.hstack([m] * 4)) - gsr(m)) <= 1e-12


@pytest.mark.example
def test_p2_one_hot_example():
    assert gsr(np.array([[2.5]])) == 1.0
    assert gsr(np.array([[2.5, 0.0]])) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_gsr_properties_thousand_trials():
    verdicts = theory.check_gsr_properties(1000, seed=0)
    assert [v.property_id for v in verdicts] == list(theory.GSR_PROPERTIES)
    for v in verdicts:
        assert v.trials == 1000
        assert v.failures == 0, v.property_id
    by_id = {v.property_id: v for v in verdicts}
    assert by_id["D2"].worst_violation <= 1e-12
    assert by_id["D4"].worst_violation <= 1e-12


def test_robin_hood_transfer_preserves_sum(rng):
    for _ in range(50):
        x = theory._positive_matrix(rng)
        y = theory._robin_hood(rng, x)
        assert y.sum() == pytest.approx(x.sum(), rel=1e-12)
        assert np.count_nonzero(x != y) == 2


# --- verdicts -------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
@pytest.mark.parametrize("check", ["THM1", "THM2", "GSR"])
def test_checks_pass_for_five_seeds(check, seed):
    if check == "THM1":
        verdicts = [theory.check_thm1_noncollision_orthogonality(100, seed)]
    elif check == "THM2":
        verdicts = [theory.check_thm2_quadratic_collision(trials=60, seed=seed)]
    else:
        verdicts = theory.check_gsr_properties(200, seed)
    for v in verdicts:
        assert v.passed, f"{v.property_id} seed {seed}: {v.failures} failures"


def test_verdict_pass_matches_failures():
    for v in theory.run_all(trials=20, seed=0):
        assert v.passed == (v.failures == 0)
        assert v.property_id in theory.PROPERTY_IDS


def test_run_all_is_deterministic():
    a = theory.verdicts_json(theory.run_all(trials=15, seed=9))
    b = theory.verdicts_json(theory.run_all(trials=15, seed=9))
    assert a == b


def test_verdicts_json_schema():
    data = json.loads(theory.verdicts_json(theory.run_all(trials=10, seed=0)))
    assert [v["property_id"] for v in data["verdicts"]] == list(theory.PROPERTY_IDS)
    for v in data["verdicts"]:
        assert {"trials", "failures", "worst_violation", "pass", "note"} <= set(v)
        assert v["note"]
    assert data["all_pass"] == all(v["pass"] for v in data["verdicts"])


def test_thm1_runtime_budget():
    start = time.perf_counter()
    theory.check_thm1_noncollision_orthogonality(1000, seed=1)
    assert time.perf_counter() - start < 10.0
