import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlora_lab import metrics as mt
from nlora_lab.matrix import MatrixError
from nlora_lab.metrics import AccuracyMatrix, MetricError

from conftest import finite_matrices


def acc_from(cells, t):
    """``cells`` maps 1-based (after k, task j) to accuracy, like a_{k,j}."""
    acc = AccuracyMatrix.empty(t)
    for (k, j), v in cells.items():
        acc.set(j - 1, k - 1, v)
    return acc


def row_disjoint(rng, m, n, count):
    owner = rng.integers(0, count + 1, size=m)
    return [np.where((owner == i + 1)[:, None], rng.standard_normal((m, n)), 0.0) for i in range(count)]


# --- accuracy metrics -----------------------------------------------------


@pytest.mark.example
def test_average_accuracy_cases():
    assert mt.average_accuracy(AccuracyMatrix(np.triu(np.ones((3, 3))).T.T)) == 1.0
    assert mt.average_accuracy(acc_from({(2, 1): 0.8, (2, 2): 0.6, (1, 1): 0.9}, 2)) == pytest.approx(0.7, abs=1e-15)
    assert mt.average_accuracy(acc_from({(1, 1): 0.37}, 1)) == 0.37


def test_average_accuracy_incomplete():
    acc = AccuracyMatrix.empty(2)
    acc.set(0, 0, 0.5)
    with pytest.raises(MetricError):
        mt.average_accuracy(acc)


@pytest.mark.example
def test_forgetting_two_tasks():
    acc = acc_from({(1, 1): 0.9, (2, 1): 0.8, (2, 2): 0.7}, 2)
    assert mt.forgetting_rate(acc) == pytest.approx(0.1, abs=1e-15)


@pytest.mark.example
def test_forgetting_three_tasks_uses_intermediate_max():
    acc = acc_from({(1, 1): 0.9, (2, 1): 0.7, (3, 1): 0.8, (2, 2): 0.6, (3, 2): 0.6, (3, 3): 0.5}, 3)
    assert mt.forgetting_rate(acc) == pytest.approx(0.05, abs=1e-15)


@pytest.mark.example
def test_forgetting_zero_when_non_decreasing(rng):
    t = 5
    a = np.full((t, t), np.nan)
    for i in range(t):
        a[i, i:] = np.sort(rng.random(t - i))
    assert mt.forgetting_rate(AccuracyMatrix(a)) == 0.0


def test_forgetting_needs_two_tasks():
    with pytest.raises(MetricError):
        mt.forgetting_rate(acc_from({(1, 1): 0.5}, 1))


def test_accuracy_matrix_guards():
    acc = AccuracyMatrix.empty(2)
    with pytest.raises(IndexError):
        acc.set(1, 0, 0.5)
    with pytest.raises(ValueError):
        acc.set(0, 0, 1.5)
    acc.set(0, 0, 0.25)
    assert AccuracyMatrix.from_list(acc.to_list()).to_list() == [[0.25, None], [None, None]]


# --- OO / AWOM ------------------------------------------------------------


@pytest.mark.example
def test_oo_cases(rng):
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    assert mt.orthogonal_overlap([q[:, :2], q[:, 2:5], q[:, 5:]]) == pytest.approx(0.0, abs=1e-28)
    e1 = np.array([[1.0], [0.0]])
    assert mt.orthogonal_overlap([e1, e1]) == 1.0
    hist = [rng.standard_normal((6, 2)) for _ in range(3)]
    base = mt.orthogonal_overlap(hist)
    assert mt.orthogonal_overlap(hist[:-1] + [3.0 * hist[-1]]) == pytest.approx(9.0 * base, rel=1e-12)


def test_oo_guards(rng):
    with pytest.raises(MetricError):
        mt.orthogonal_overlap([np.ones((3, 1))])
    with pytest.raises(MatrixError):
        mt.orthogonal_overlap([np.ones((3, 1)), np.ones((4, 1))])


@pytest.mark.example
def test_awom_cases():
    assert mt.awom([np.eye(2), np.eye(2)]) == math.sqrt(2)
    w1 = np.array([[1.0, 0.0], [0.0, 0.0]])
    assert mt.awom([w1, np.array([[0.0, 0.0], [0.0, 1.0]])]) == 0.0
    # disjoint supports in different rows
    assert mt.awom([w1, np.array([[0.0, 0.0], [0.0, 5.0]])]) == 0.0


def test_awom_spectral_and_guards(rng):
    dws = [rng.standard_normal((5, 4)) for _ in range(3)]
    fro, spec = mt.awom(dws, "fro"), mt.awom(dws, "spectral")
    assert spec <= fro + 1e-12
    expected = sum(np.linalg.norm(dws[-1].T @ d, 2) for d in dws[:-1])
    assert spec == pytest.approx(expected, rel=1e-10)
    with pytest.raises(ValueError):
        mt.awom(dws, "nuclear")
    with pytest.raises(MatrixError):
        mt.awom([np.ones((2, 2)), np.ones((2, 3))])
    with pytest.raises(MetricError):
        mt.awom([np.ones((2, 2))])


def test_awom_zero_for_row_disjoint_supports(rng):
    for _ in range(100):
        m, n = rng.integers(1, 20, size=2)
        dws = row_disjoint(rng, m, n, 3)
        assert mt.acr(dws, eps=0.0)[0] == 0.0
        assert mt.awom(dws) == 0.0


@pytest.mark.example
def test_awom_disjoint_support_pair_is_zero():
    from nlora_lab.theory import disjoint_pair

    bad = []
    for seed in range(100):
        w1, w2 = disjoint_pair(np.random.default_rng(seed), max_dim=8)
        assert mt.collision_rate(w1, w2, 0.0) == 0.0
        if mt.awom([w1, w2]) != 0.0:
            bad.append((seed, mt.awom([w1, w2])))
    assert not bad, f"{len(bad)}/100 disjoint-support pairs have nonzero AWOM, first {bad[0]}"


def test_non_collision_does_not_force_zero_awom():
    # supports never overlap, yet dW_T^T dW_1 has a nonzero off-diagonal entry
    w1, w2 = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    assert mt.collision_rate(w1, w2, 0.0) == 0.0
    assert mt.awom([w1, w2]) == 1.0
    assert float(np.sum(w1 * w2)) == 0.0


# --- GSR ------------------------------------------------------------------


@pytest.mark.example
def test_gsr_cases():
    assert mt.gsr(np.full((2, 2), 3.5)) == 1.0
    assert mt.gsr([[0.0, 0.0], [0.0, 2.0]]) == 0.5
    assert mt.gsr([[3.0, 4.0], [0.0, 0.0]]) == pytest.approx(0.7, abs=1e-15)


def test_gsr_zero_matrix():
    with pytest.raises(MetricError):
        mt.gsr(np.zeros((2, 2)))


@given(finite_matrices(), st.floats(1e-3, 1e3))
def test_gsr_range_and_scale_invariance(m, c):
    if not np.any(m):
        return
    g = mt.gsr(m)
    assert 1 / math.sqrt(m.size) - 1e-12 <= g <= 1 + 1e-12
    assert abs(mt.gsr(c * m) - g) <= 1e-12


# --- CR / ACR -------------------------------------------------------------


@pytest.mark.example
def test_cr_cases():
    w1 = np.array([[1.0, 1.0], [0.0, 0.0]])
    w2 = np.array([[2.0, 0.0], [3.0, 0.0]])
    assert mt.collision_rate(w1, w2, 0.0) == 0.25
    assert mt.collision_rate(w1, np.array([[0.0, 0.0], [1.0, 1.0]]), 0.0) == 0.0
    dense = np.array([[1.0, -2.0], [3.0, 4.0]])
    assert mt.collision_rate(dense, dense, 0.0) == 1.0


def test_cr_threshold():
    w1 = np.array([[1.0, 1e-7]])
    w2 = np.array([[1.0, 1.0]])
    assert mt.collision_rate(w1, w2, 0.0) == 1.0
    # default threshold is 1e-5 * max|entry| = 1e-5, which 1e-7 falls under
    assert mt.collision_rate(w1, w2) == 0.5
    with pytest.raises(ValueError):
        mt.collision_rate(w1, w2, -1.0)
    with pytest.raises(MatrixError):
        mt.collision_rate(w1, np.ones((2, 1)))


def test_cr_symmetric_and_matches_set_oracle(rng):
    for _ in range(100):
        m, n = rng.integers(1, 30, size=2)
        s1, s2 = rng.random(2)
        mask1, mask2 = rng.random((m, n)) < s1, rng.random((m, n)) < s2
        w1 = np.where(mask1, rng.uniform(0.5, 2.0, (m, n)), 0.0)
        w2 = np.where(mask2, -rng.uniform(0.5, 2.0, (m, n)), 0.0)
        sup1 = {tuple(p) for p in np.argwhere(mask1)}
        sup2 = {tuple(p) for p in np.argwhere(mask2)}
        cr = mt.collision_rate(w1, w2, 0.0)
        assert cr == len(sup1 & sup2) / (m * n)
        assert cr == mt.collision_rate(w2, w1, 0.0)
        for eps in (None, 0.7):
            assert mt.collision_rate(w1, w2, eps) == mt.collision_rate(w2, w1, eps)


@pytest.mark.example
def test_acr_cases(rng):
    assert mt.acr(row_disjoint(rng, 12, 5, 3), 0.0)[0] == 0.0
    m = rng.uniform(0.5, 1.0, (4, 3))
    assert mt.acr([m, m, m])[0] == 1.0
    # pair CRs (0.2, 0.4, 0.0) on a 1x5 grid
    w0 = np.array([[1, 1, 1, 0, 0]], float)
    w1 = np.array([[1, 0, 0, 0, 0]], float)
    w2 = np.array([[0, 1, 1, 0, 0]], float)
    value, table = mt.acr([w0, w1, w2], 0.0)
    assert (table[0][1], table[0][2], table[1][2]) == (0.2, 0.4, 0.0)
    assert value == pytest.approx(0.2, abs=1e-15)


def test_acr_table_and_permutation(rng):
    for _ in range(30):
        t = int(rng.integers(2, 6))
        dws = [np.where(rng.random((6, 4)) < 0.5, rng.standard_normal((6, 4)), 0.0) for _ in range(t)]
        value, table = mt.acr(dws, 0.0)
        upper = [table[i][j] for i in range(t) for j in range(i + 1, t)]
        assert abs(value - np.mean(upper)) <= 1e-12
        assert all(0.0 <= x <= 1.0 for row in table for x in row)
        assert all(table[i][j] == table[j][i] for i in range(t) for j in range(t))
        perm = rng.permutation(t)
        assert mt.acr([dws[i] for i in perm], 0.0)[0] == pytest.approx(value, abs=1e-15)
    with pytest.raises(MetricError):
        mt.acr([np.ones((2, 2))])


def test_collision_mask_matches_rate(rng):
    w1, w2 = rng.standard_normal((7, 3)), np.where(rng.random((7, 3)) < 0.4, 1.0, 0.0)
    assert mt.collision_mask(w1, w2).sum() / 21 == mt.collision_rate(w1, w2)


# --- nuclear report -------------------------------------------------------


@pytest.mark.example
def test_nuclear_report_cases(rng):
    assert mt.nuclear_report([np.zeros((4, 3)), np.zeros((4, 3))]) == [0.0, 0.0]
    padded = np.zeros((5, 4))
    padded[:2, :2] = np.diag([3.0, 4.0])
    assert mt.nuclear_report([padded])[0] == pytest.approx(7.0, abs=1e-12)
    for _ in range(20):
        r = int(rng.integers(1, 4))
        dw = rng.standard_normal((8, r)) @ rng.standard_normal((r, 5))
        nuc = mt.nuclear_report([dw])[0]
        assert nuc <= r * np.linalg.norm(dw, 2) * (1 + 1e-12)


# --- report ---------------------------------------------------------------


def sample_report(rng):
    dws = [rng.standard_normal((6, 2)) @ rng.standard_normal((2, 4)) for _ in range(3)]
    acc = AccuracyMatrix.empty(3)
    for j in range(3):
        for i in range(j + 1):
            acc.set(i, j, float(rng.random()))
    return mt.compute_report([rng.standard_normal((6, 2)) for _ in range(3)], dws + [], acc)


def test_report_json_round_trip(rng):
    rep = sample_report(rng)
    again = mt.MetricsReport.from_dict(json.loads(rep.to_json()))
    assert again.to_json() == rep.to_json()
    assert rep.zero_threshold == mt.RELATIVE_EPS and rep.zero_threshold_relative


def test_report_csv_schema(rng):
    rep = sample_report(rng)
    header, row = rep.to_csv().splitlines()
    cols = header.split(",")
    assert cols[:8] == ["avg_accuracy", "forgetting_rate", "oo", "awom", "gsr_mean", "acr", "nuclear_mean", "zero_threshold"]
    assert cols[8:] == ["gsr_0", "gsr_1", "gsr_2", "nuclear_0", "nuclear_1", "nuclear_2"]
    assert len(row.split(",")) == len(cols)


def test_report_single_task_has_absent_pair_metrics(rng):
    acc = AccuracyMatrix.empty(1)
    acc.set(0, 0, 0.5)
    rep = mt.compute_report([rng.standard_normal((4, 2))], [rng.standard_normal((4, 3))], acc)
    assert rep.forgetting_rate is None and rep.acr is None and rep.awom is None and rep.oo is None
    assert rep.avg_accuracy == 0.5


def test_report_zero_delta_gsr_absent(rng):
    rep = mt.compute_report([rng.standard_normal((4, 2))] * 2, [np.zeros((4, 3)), rng.standard_normal((4, 3))])
    assert rep.gsr_per_task[0] is None and rep.gsr_per_task[1] is not None
    assert rep.gsr_mean == rep.gsr_per_task[1]


def test_report_eps_recorded(rng):
    dws = [rng.standard_normal((4, 3)) for _ in range(2)]
    rep = mt.compute_report([np.ones((4, 1))] * 2, dws, eps=0.0)
    assert rep.zero_threshold == 0.0 and not rep.zero_threshold_relative


def test_forgetting_without_final_checkpoint_can_be_negative():
    acc = acc_from({(1, 1): 0.5, (2, 1): 0.9, (2, 2): 0.7}, 2)
    assert mt.forgetting_rate(acc) == 0.0
    assert mt.forgetting_rate(acc, include_final=False) == pytest.approx(-0.4, abs=1e-15)
