"""Objective family tests: frozen hand values first, then structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aflsim.objective import (
    DimensionMismatch,
    FixedRadius,
    GlobalObjective,
    LogisticClient,
    ObjectiveConstants,
    QuadraticClient,
    RadiusFromInit,
    compute_constants,
    make_heterogeneous_family,
    objective_from_dict,
    objective_to_dict,
)


def quad(matrix, optimum, weight=1.0):
    return QuadraticClient(matrix=np.array(matrix, float), optimum=np.array(optimum, float), weight=weight)


LOGISTIC_XY = (np.array([[1.0, -0.5], [-2.0, 1.5]]), np.array([1.0, 0.0]))


def small_logistic(weight=1.0, ridge=0.1):
    x, y = LOGISTIC_XY
    return LogisticClient(features=x, labels=y, ridge=ridge, weight=weight)


# ---------------------------------------------------------------- frozen values


def test_quadratic_loss_hand_values():
    assert quad([[1.0]], [0.0]).loss(np.array([2.0])) == pytest.approx(2.0, abs=1e-15)
    assert quad([[1.0]], [1.0]).loss(np.array([1.0])) == 0.0


def test_quadratic_gradient_hand_value():
    g = quad([[2.0]], [1.0]).gradient(np.array([3.0]))
    np.testing.assert_allclose(g, [4.0], rtol=0, atol=1e-15)


def test_logistic_loss_at_zero_is_ln2():
    # both samples contribute log(1 + e^0) - y*0 = ln 2; ridge term vanishes at 0
    client = small_logistic()
    assert client.loss(np.zeros(2)) == pytest.approx(math.log(2.0), rel=1e-14)


def test_logistic_gradient_matches_central_differences():
    client = small_logistic()
    for w in (np.zeros(2), np.array([0.3, -0.7]), np.array([-1.2, 2.4])):
        g = client.gradient(w)
        h = 1e-5
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (client.loss(w + e) - client.loss(w - e)) / (2 * h)
            assert g[j] == pytest.approx(fd, abs=1e-6)


def test_local_optimum_quadratic_returns_optimum():
    client = quad(np.diag([1.0, 2.0]), [-1.0, 1.0])
    np.testing.assert_array_equal(client.local_optimum(), [-1.0, 1.0])


def test_local_optimum_logistic_reaches_tolerance():
    client = small_logistic()
    w_opt = client.local_optimum()
    assert np.linalg.norm(client.gradient(w_opt)) <= 1e-10


def test_identical_clients_share_optimum():
    a = small_logistic(weight=0.5)
    b = small_logistic(weight=0.5)
    np.testing.assert_allclose(a.local_optimum(), b.local_optimum(), rtol=0, atol=1e-12)


def test_global_optimum_symmetric_pair_is_zero():
    fam = GlobalObjective([quad([[1.0]], [-1.0], 0.5), quad([[1.0]], [1.0], 0.5)])
    np.testing.assert_allclose(fam.global_optimum(), [0.0], atol=1e-14)


def test_global_optimum_closed_form_pair():
    # (0.5*1 + 0.5*3)^{-1} (0.5*0 + 0.5*12) = 6/2 = 3
    fam = GlobalObjective([quad([[1.0]], [0.0], 0.5), quad([[3.0]], [4.0], 0.5)])
    np.testing.assert_allclose(fam.global_optimum(), [3.0], rtol=1e-12)


def test_global_optimum_single_client_is_local():
    client = quad(np.diag([2.0, 5.0]), [3.0, -2.0])
    fam = GlobalObjective([client])
    np.testing.assert_allclose(fam.global_optimum(), client.local_optimum(), atol=1e-12)


def test_global_optimum_stationarity_mixed_family():
    fam = GlobalObjective([quad(np.diag([1.0, 3.0]), [1.0, -1.0], 0.5), small_logistic(weight=0.5)])
    w_star = fam.global_optimum()
    assert np.linalg.norm(fam.gradient(w_star)) <= 1e-10


def test_compute_constants_hand_example():
    fam = GlobalObjective([quad([[1.0]], [0.0], 0.5), quad([[3.0]], [4.0], 0.5)])
    consts = compute_constants(fam, FixedRadius(2.0), probe_seed=0)
    assert consts.smoothness == pytest.approx(3.0, rel=1e-12)
    assert consts.convexity == pytest.approx(1.0, rel=1e-12)
    assert consts.heterogeneity == pytest.approx(3.0, rel=1e-12)
    assert consts.gradient_bound == pytest.approx(3.0 * (2.0 + 3.0), rel=1e-12)


def test_identical_clients_have_zero_heterogeneity():
    c = quad(np.diag([1.0, 2.0]), [0.5, -0.5], 0.25)
    fam = GlobalObjective([quad(np.diag([1.0, 2.0]), [0.5, -0.5], 0.25) for _ in range(4)])
    consts = compute_constants(fam, FixedRadius(1.0), probe_seed=0)
    assert consts.heterogeneity == pytest.approx(0.0, abs=1e-12)
    del c


def test_gradient_bound_probe_holds(rng):
    fam = make_heterogeneous_family(4, 6, target_phi=2.0, seed=11)
    consts = compute_constants(fam, FixedRadius(3.0), probe_seed=5)
    w_star = fam.global_optimum()
    for _ in range(1000):
        direction = rng.standard_normal(6)
        direction /= np.linalg.norm(direction)
        w = w_star + consts.compactness_radius * rng.random() ** (1 / 6) * direction
        norms = np.linalg.norm(fam.client_gradients(np.broadcast_to(w, (4, 6))), axis=1)
        assert np.all(norms <= consts.gradient_bound * (1 + 1e-12))


# ---------------------------------------------------------------- validation


def test_weight_range_enforced():
    with pytest.raises(ValueError):
        quad([[1.0]], [0.0], weight=0.0)
    with pytest.raises(ValueError):
        quad([[1.0]], [0.0], weight=1.5)


def test_asymmetric_matrix_rejected():
    with pytest.raises(ValueError, match="symmetric"):
        quad([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])


def test_indefinite_matrix_rejected():
    with pytest.raises(ValueError, match="positive definite"):
        quad([[1.0, 0.0], [0.0, -0.5]], [0.0, 0.0])


def test_dimension_mismatch_is_structured():
    client = quad(np.eye(3), np.zeros(3))
    with pytest.raises(DimensionMismatch):
        client.loss(np.zeros(2))
    with pytest.raises(DimensionMismatch):
        client.gradient(np.zeros(4))


def test_logistic_validation():
    x, y = LOGISTIC_XY
    with pytest.raises(ValueError, match="ridge"):
        LogisticClient(features=x, labels=y, ridge=0.0, weight=1.0)
    with pytest.raises(ValueError, match="binary"):
        LogisticClient(features=x, labels=np.array([2.0, 0.0]), ridge=0.1, weight=1.0)
    with pytest.raises(DimensionMismatch):
        LogisticClient(features=x, labels=np.array([1.0]), ridge=0.1, weight=1.0)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError, match="sum to 1"):
        GlobalObjective([quad([[1.0]], [0.0], 0.5), quad([[1.0]], [1.0], 0.6)])


def test_mismatched_dimensions_rejected():
    with pytest.raises(DimensionMismatch):
        GlobalObjective([quad([[1.0]], [0.0], 0.5), quad(np.eye(2), np.zeros(2), 0.5)])


def test_eigen_extremes_match_recomputation():
    fam = make_heterogeneous_family(3, 8, target_phi=1.0, seed=3)
    for client in fam.clients:
        eigs = np.linalg.eigvalsh(client.matrix)
        assert client.eig_min == pytest.approx(eigs[0], abs=1e-10)
        assert client.eig_max == pytest.approx(eigs[-1], abs=1e-10)


def test_constants_validation():
    with pytest.raises(ValueError):
        ObjectiveConstants(smoothness=1.0, convexity=2.0, gradient_bound=1.0,
                           compactness_radius=1.0, heterogeneity=0.0)
    with pytest.raises(ValueError):
        ObjectiveConstants(smoothness=1.0, convexity=0.0, gradient_bound=1.0,
                           compactness_radius=1.0, heterogeneity=0.0)


# ---------------------------------------------------------------- properties


def _sandwich(client, lo, hi, pairs, radius, center, rng):
    for _ in range(pairs):
        w1 = center + radius * rng.standard_normal(center.shape[0])
        w2 = center + radius * rng.standard_normal(center.shape[0])
        gap = client.loss(w1) - client.loss(w2) - client.gradient(w2) @ (w1 - w2)
        sq = float(np.linalg.norm(w1 - w2) ** 2)
        slack = 1e-9 * max(1.0, abs(gap), hi / 2 * sq)
        assert lo / 2 * sq - slack <= gap <= hi / 2 * sq + slack


def test_sandwich_quadratic_family(rng):
    fam = make_heterogeneous_family(3, 5, target_phi=2.0, seed=9)
    for client in fam.clients:
        _sandwich(client, client.convexity(), client.smoothness(), 1000,
                  2.0, client.local_optimum(), rng)


def test_sandwich_logistic(rng):
    client = small_logistic()
    _sandwich(client, client.convexity(), client.smoothness(), 1000, 2.0, np.zeros(2), rng)


def test_heterogeneous_family_hits_target_phi():
    for target in (0.5, 5.0):
        fam = make_heterogeneous_family(4, 10, target_phi=target, seed=21)
        consts = compute_constants(fam, FixedRadius(1.0), probe_seed=None)
        assert abs(consts.heterogeneity - target) <= 0.01 * target


def test_heterogeneous_family_target_five_in_band():
    fam = make_heterogeneous_family(4, 10, target_phi=5.0, seed=2)
    consts = compute_constants(fam, FixedRadius(1.0), probe_seed=None)
    assert 4.95 <= consts.heterogeneity <= 5.05


def test_heterogeneous_family_zero_phi_collapses_optima():
    fam = make_heterogeneous_family(4, 6, target_phi=0.0, seed=4)
    for client in fam.clients:
        np.testing.assert_array_equal(client.optimum, np.zeros(6))


def test_heterogeneous_family_deterministic():
    a = make_heterogeneous_family(3, 4, target_phi=1.5, seed=8)
    b = make_heterogeneous_family(3, 4, target_phi=1.5, seed=8)
    for ca, cb in zip(a.clients, b.clients):
        np.testing.assert_array_equal(ca.matrix, cb.matrix)
        np.testing.assert_array_equal(ca.optimum, cb.optimum)


def test_heterogeneous_family_infeasible_condition_range():
    with pytest.raises(ValueError, match="condition range"):
        make_heterogeneous_family(2, 3, 1.0, condition_range=(0.0, 2.0))
    with pytest.raises(ValueError, match="condition range"):
        make_heterogeneous_family(2, 3, 1.0, condition_range=(3.0, 2.0))


def test_family_spectrum_stays_in_condition_range():
    fam = make_heterogeneous_family(4, 7, target_phi=1.0, condition_range=(2.0, 6.0), seed=13)
    for client in fam.clients:
        assert client.eig_min >= 2.0 - 1e-9
        assert client.eig_max <= 6.0 + 1e-9


def test_radius_from_init_policy():
    fam = GlobalObjective([quad([[1.0]], [0.0], 0.5), quad([[3.0]], [4.0], 0.5)])
    init = np.array([7.0])
    consts = compute_constants(fam, RadiusFromInit(init, margin=2.0), probe_seed=None)
    assert consts.compactness_radius == pytest.approx(2.0 * 4.0, rel=1e-12)
    with pytest.raises(ValueError, match="margin"):
        compute_constants(fam, RadiusFromInit(init, margin=0.5), probe_seed=None)


def test_serialization_round_trip():
    fam = GlobalObjective(
        [quad(np.diag([1.0, 2.0]), [0.5, -0.5], 0.5), small_logistic(weight=0.5)]
    )
    clone = objective_from_dict(objective_to_dict(fam))
    w = np.array([0.3, -1.1])
    assert clone.loss(w) == fam.loss(w)
    np.testing.assert_array_equal(clone.gradient(w), fam.gradient(w))


@given(
    d=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=10_000),
)
@settings(max_examples=40)
def test_quadratic_gradient_matches_finite_differences(d, seed):
    r = np.random.default_rng(seed)
    base = r.standard_normal((d, d))
    client = QuadraticClient(matrix=base @ base.T + np.eye(d), optimum=r.standard_normal(d), weight=1.0)
    w = r.standard_normal(d)
    g = client.gradient(w)
    h = 1e-6
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd = (client.loss(w + e) - client.loss(w - e)) / (2 * h)
        assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-5)


@given(seed=st.integers(min_value=0, max_value=10_000))
@settings(max_examples=25)
def test_global_loss_is_weighted_sum(seed):
    r = np.random.default_rng(seed)
    fam = make_heterogeneous_family(3, 4, target_phi=1.0, seed=seed)
    w = r.standard_normal(4)
    direct = sum(c.weight * c.loss(w) for c in fam.clients)
    assert fam.loss(w) == pytest.approx(direct, rel=1e-12)
    np.testing.assert_allclose(
        fam.gradient(w),
        sum(c.weight * c.gradient(w) for c in fam.clients),
        rtol=1e-12, atol=1e-12,
    )
