"""Chamfer / EMD / nearest-neighbour tests against brute-force oracles."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csipoint.errors import ContractError
from csipoint.metrics import (MetricReport, batch_chamfer, chamfer_distance, chamfer_gradient, emd,
                              evaluate_set, nearest_neighbors)

from gradcheck import numeric_grad, rel_error


def sq(p, q):
    dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
    return dx * dx + dy * dy + dz * dz


def chamfer_oracle(P, Q):
    """Double loop, then correctly rounded sums."""
    a = math.fsum(min(sq(p, q) for q in Q) for p in P) / len(P)
    b = math.fsum(min(sq(q, p) for p in P) for q in Q) / len(Q)
    return a + b


def emd_oracle(P, Q):
    best = None
    for perm in itertools.permutations(range(len(Q))):
        costs = [math.sqrt(sq(P[i], Q[j])) for i, j in enumerate(perm)]
        total = math.fsum(costs)
        if best is None or total < best:
            best = total
    return best / len(P)


def test_hand_values():
    assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    assert emd([[0, 0, 0]], [[3, 4, 0]]) == 5.0


def test_chamfer_equals_loop_oracle_exactly():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m = rng.integers(1, 65, size=2)
        P, Q = rng.standard_normal((n, 3)), rng.standard_normal((m, 3))
        assert chamfer_distance(P, Q) == chamfer_oracle(P.tolist(), Q.tolist())


def test_emd_equals_permutation_enumeration_exactly():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        P, Q = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        assert emd(P, Q) == emd_oracle(P.tolist(), Q.tolist())


def test_emd_size_mismatch_and_empty_inputs():
    with pytest.raises(ContractError):
        emd(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ContractError):
        chamfer_distance(np.zeros((0, 3)), np.zeros((3, 3)))
    with pytest.raises(ContractError):
        chamfer_distance(np.zeros((2, 2)), np.zeros((3, 3)))


clouds = arrays(np.float64, st.tuples(st.integers(1, 12), st.just(3)),
                elements=st.floats(-10, 10, allow_nan=False, width=64))


@settings(max_examples=60, deadline=None)
@given(clouds, clouds)
def test_chamfer_properties(P, Q):
    assert chamfer_distance(P, Q) == chamfer_distance(Q, P)
    assert chamfer_distance(P, Q) >= 0
    assert chamfer_distance(P, P) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, 3), elements=st.floats(-10, 10, width=64)),
    arrays(np.float64, (n, 3), elements=st.floats(-10, 10, width=64)))))
def test_emd_properties(pair):
    P, Q = pair
    assert emd(P, Q) == pytest.approx(emd(Q, P), rel=1e-12, abs=1e-15)
    assert emd(P, Q) >= 0
    assert emd(P, P) == 0
    assert emd(P, P[::-1]) == 0


@pytest.mark.parametrize("seed", range(10))
def test_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.standard_normal((20, 3)), rng.standard_normal((20, 3))
    t = rng.uniform(-5, 5, 3)
    assert abs(chamfer_distance(P + t, Q + t) - chamfer_distance(P, Q)) < 1e-9
    assert abs(emd(P + t, Q + t) - emd(P, Q)) < 1e-9


def test_positive_for_distinct_sets():
    assert chamfer_distance([[0, 0, 0]], [[0, 0, 1e-3]]) > 0
    assert emd([[0, 0, 0], [1, 1, 1]], [[0, 0, 0], [1, 1, 1.001]]) > 0


def test_kdtree_matches_linear_scan_on_1000_queries():
    rng = np.random.default_rng(3)
    Q = rng.standard_normal((500, 3))
    P = rng.standard_normal((1000, 3))
    assert np.array_equal(nearest_neighbors(P, Q, "kdtree"), nearest_neighbors(P, Q, "brute"))


def test_nearest_neighbor_ties_go_to_lowest_index():
    Q = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])
    P = np.zeros((1, 3))
    assert nearest_neighbors(P, Q).tolist() == [0]
    assert nearest_neighbors(P, Q, "kdtree").tolist() == [0]
    grid = np.array(list(itertools.product([0.0, 1.0], repeat=3)))
    centre = np.full((1, 3), 0.5)
    assert nearest_neighbors(centre, grid, "kdtree").tolist() == [0]


def test_unknown_nn_method():
    with pytest.raises(ValueError):
        nearest_neighbors(np.zeros((1, 3)), np.zeros((1, 3)), "octree")


@pytest.mark.parametrize("seed", range(20))
def test_chamfer_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    P, Q = rng.standard_normal((8, 3)), rng.standard_normal((6, 3))
    num = numeric_grad(lambda p: chamfer_distance(p, Q), [P.copy()], 0)
    assert rel_error(chamfer_gradient(P, Q), num) < 1e-4


def test_batch_chamfer_matches_single_pair():
    rng = np.random.default_rng(4)
    P, Q = rng.standard_normal((3, 10, 3)), rng.standard_normal((3, 7, 3))
    values, grad = batch_chamfer(P, Q)
    for b in range(3):
        assert values[b] == pytest.approx(chamfer_distance(P[b], Q[b]), rel=1e-13)
        np.testing.assert_allclose(grad[b], chamfer_gradient(P[b], Q[b]), rtol=1e-12, atol=1e-14)


def test_report_statistics_and_exports():
    rng = np.random.default_rng(5)
    recon = [rng.standard_normal((5, 3)) for _ in range(4)]
    gt = [rng.standard_normal((5, 3)) for _ in range(4)]
    report = evaluate_set(recon, gt, ["a", "b", "c", "d"])
    assert report.mean_cd == pytest.approx(np.mean(report.cd), rel=1e-14)
    assert report.std_cd == pytest.approx(np.std(report.cd), rel=1e-12)
    assert report.mean_emd == pytest.approx(np.mean(report.emd), rel=1e-14)
    rows = report.to_csv().splitlines()
    assert rows[0] == "id,cd,emd" and rows[1].startswith("a,") and rows[-2].startswith("mean,")
    assert '"count": 4' in report.to_json()
    zero = evaluate_set(gt, gt)
    assert zero.cd == [0.0] * 4 and zero.emd == [0.0] * 4
    assert math.isnan(MetricReport().mean_cd)
    with pytest.raises(ContractError):
        evaluate_set(recon, gt[:3])
