"""Tests for aggregation rules and the training loop."""

import math

import numpy as np
import pytest

from aflsim.delay import ChannelModel
from aflsim.objective import GlobalObjective, QuadraticClient, make_heterogeneous_family
from aflsim.training import (
    AggregationError,
    DivergenceError,
    GradientMessage,
    Rule,
    TrainingState,
    audg_aggregate,
    client_update,
    prefix_average_params,
    psurdg_aggregate,
    run_training,
    sfl_aggregate,
)


def scalar_quadratic(curvature, optimum, weight):
    return QuadraticClient(
        matrix=np.array([[curvature]]),
        optimum=np.array([optimum]),
        weight=weight,
    )


def symmetric_pair():
    """Two mirror quadratics; the global gradient at w is exactly w."""
    return GlobalObjective(
        clients=[scalar_quadratic(1.0, 1.0, 0.5), scalar_quadratic(1.0, -1.0, 0.5)]
    )


# ---------------------------------------------------------------------------
# messages and single steps


def test_client_update_evaluates_local_gradient():
    obj = GlobalObjective(clients=[scalar_quadratic(2.0, 1.0, 1.0)])
    msg = client_update(obj, sender=0, params=np.array([3.0]), stamp=5)
    assert msg.sender == 0
    assert msg.stamp == 5
    assert msg.gradient.tolist() == [4.0]


def test_synchronous_step_hand_value():
    state = TrainingState(params=np.array([3.0]), eta=0.1, weights=np.array([1.0]), rule=Rule.SFL)
    msg = GradientMessage(sender=0, gradient=np.array([4.0]), stamp=1)
    assert sfl_aggregate(state, [msg]).tolist() == [2.6]


def test_synchronous_step_requires_every_client():
    state = TrainingState(params=np.zeros(1), eta=0.1, weights=np.array([0.5, 0.5]), rule=Rule.SFL)
    msg = GradientMessage(sender=0, gradient=np.array([1.0]), stamp=1)
    with pytest.raises(AggregationError):
        sfl_aggregate(state, [msg])


def test_synchronous_step_rejects_stale_stamp():
    state = TrainingState(params=np.zeros(1), eta=0.1, weights=np.array([1.0]), rule=Rule.SFL)
    msg = GradientMessage(sender=0, gradient=np.array([1.0]), stamp=3)
    with pytest.raises(AggregationError):
        sfl_aggregate(state, [msg])


def test_received_only_step_hand_value():
    state = TrainingState(
        params=np.array([1.0]), eta=0.1, weights=np.array([0.5, 0.5]), rule=Rule.AUDG
    )
    msg = GradientMessage(sender=1, gradient=np.array([2.0]), stamp=1)
    assert audg_aggregate(state, [msg]).tolist() == [0.9]


def test_received_only_step_empty_round_is_identity():
    params = np.array([1.5, -2.0])
    state = TrainingState(params=params, eta=0.1, weights=np.array([0.5, 0.5]), rule=Rule.AUDG)
    out = audg_aggregate(state, [])
    assert out.tolist() == params.tolist()
    assert out is not state.params


def test_received_only_step_rejects_duplicate_senders():
    state = TrainingState(params=np.zeros(1), eta=0.1, weights=np.array([0.5, 0.5]), rule=Rule.AUDG)
    msgs = [
        GradientMessage(sender=0, gradient=np.array([1.0]), stamp=1),
        GradientMessage(sender=0, gradient=np.array([2.0]), stamp=1),
    ]
    with pytest.raises(AggregationError):
        audg_aggregate(state, msgs)


def test_cache_reuse_step_hand_value():
    state = TrainingState(
        params=np.array([1.0]),
        eta=0.1,
        weights=np.array([0.5, 0.5]),
        rule=Rule.PSURDG,
        gradient_cache=np.array([[2.0], [5.0]]),
    )
    msg = GradientMessage(sender=1, gradient=np.array([-1.0]), stamp=1)
    out = psurdg_aggregate(state, [msg])
    assert out.tolist() == [0.95]
    assert state.gradient_cache[1].tolist() == [-1.0]


def test_cache_reuse_step_applies_full_cache_when_round_is_empty():
    state = TrainingState(
        params=np.array([1.0]),
        eta=0.1,
        weights=np.array([0.5, 0.5]),
        rule=Rule.PSURDG,
        gradient_cache=np.array([[2.0], [-1.0]]),
    )
    assert psurdg_aggregate(state, []).tolist() == [0.95]


def test_cache_reuse_step_requires_seeded_cache():
    state = TrainingState(params=np.zeros(1), eta=0.1, weights=np.array([1.0]), rule=Rule.PSURDG)
    with pytest.raises(AggregationError):
        psurdg_aggregate(state, [])


def test_training_state_rejects_nonpositive_learning_rate():
    with pytest.raises(ValueError):
        TrainingState(params=np.zeros(1), eta=0.0, weights=np.array([1.0]), rule=Rule.SFL)


def test_rule_parses_from_string():
    assert Rule("audg") is Rule.AUDG
    with pytest.raises(ValueError):
        Rule("nonsense")


# ---------------------------------------------------------------------------
# full synchronous runs


def test_synchronous_trajectory_halves_each_step():
    result = run_training(
        symmetric_pair(), None, "sfl", eta=0.5, horizon=3, init_params=[2.0], seed=0
    )
    assert result.trajectory[:, 0].tolist() == [2.0, 1.0, 0.5, 0.25]
    assert result.w_star.tolist() == [0.0]
    assert result.f_star == pytest.approx(0.5)


def test_synchronous_loss_is_monotone_at_safe_step():
    obj = make_heterogeneous_family(n_clients=4, dimension=6, target_phi=2.0, seed=3)
    eta = 1.0 / obj.smoothness()
    result = run_training(obj, None, "sfl", eta=eta, horizon=80, init_params=np.ones(6), seed=0)
    assert np.all(np.diff(result.losses) <= 1e-12)


def test_synchronous_run_converges_geometrically():
    obj = make_heterogeneous_family(n_clients=3, dimension=4, target_phi=2.0, seed=5)
    mu, L = obj.convexity(), obj.smoothness()
    w0 = np.full(4, 2.0)
    d0 = float(np.linalg.norm(w0 - obj.global_optimum()))
    horizon = int(math.ceil(math.log(d0 / 1e-9) / -math.log(1.0 - mu / L))) + 5
    result = run_training(obj, None, "sfl", eta=1.0 / L, horizon=horizon, init_params=w0, seed=0)
    assert result.final_dist < 1e-8


def test_synchronous_error_series_is_exactly_zero():
    obj = make_heterogeneous_family(n_clients=3, dimension=4, target_phi=1.0, seed=2)
    result = run_training(
        obj, None, "sfl", eta=0.1 / obj.smoothness(), horizon=30, init_params=np.ones(4), seed=0
    )
    assert np.all(result.err_norms == 0.0)
    assert np.all(result.err_inners == 0.0)


# ---------------------------------------------------------------------------
# asynchronous runs


def test_runs_are_deterministic():
    obj = make_heterogeneous_family(n_clients=4, dimension=5, target_phi=3.0, seed=9)
    ch = ChannelModel.bernoulli([0.5, 0.4, 0.7, 0.6])
    kwargs = dict(eta=0.2 / obj.smoothness(), horizon=60, init_params=np.ones(5), seed=42)
    a = run_training(obj, ch, "audg", **kwargs)
    b = run_training(obj, ch, "audg", **kwargs)
    assert np.array_equal(a.trajectory, b.trajectory)
    assert np.array_equal(a.trace.membership, b.trace.membership)


def test_rules_share_the_channel_realization():
    obj = make_heterogeneous_family(n_clients=4, dimension=5, target_phi=3.0, seed=9)
    ch = ChannelModel.bernoulli([0.5, 0.4, 0.7, 0.6])
    kwargs = dict(eta=0.2 / obj.smoothness(), horizon=60, init_params=np.ones(5), seed=42)
    a = run_training(obj, ch, "audg", **kwargs)
    p = run_training(obj, ch, "psurdg", **kwargs)
    assert np.array_equal(a.trace.membership, p.trace.membership)
    assert np.array_equal(a.trace.delays, p.trace.delays)


def test_perfect_channel_collapses_all_rules_to_synchronous():
    obj = make_heterogeneous_family(n_clients=4, dimension=5, target_phi=2.0, seed=1)
    ch = ChannelModel.bernoulli([1.0, 1.0, 1.0, 1.0])
    kwargs = dict(eta=0.3 / obj.smoothness(), horizon=50, init_params=np.full(5, 1.5), seed=0)
    sync = run_training(obj, None, "sfl", **kwargs)
    audg = run_training(obj, ch, "audg", **kwargs)
    psurdg = run_training(obj, ch, "psurdg", **kwargs)
    assert np.array_equal(sync.trajectory, audg.trajectory)
    assert np.array_equal(sync.trajectory, psurdg.trajectory)


def test_received_only_rule_freezes_on_empty_rounds_but_cache_rule_moves():
    obj = make_heterogeneous_family(n_clients=2, dimension=3, target_phi=2.0, seed=4)
    ch = ChannelModel.bernoulli([0.05, 0.05])
    kwargs = dict(eta=0.1 / obj.smoothness(), horizon=40, init_params=np.ones(3), seed=8)
    audg = run_training(obj, ch, "audg", **kwargs)
    psurdg = run_training(obj, ch, "psurdg", **kwargs)
    empty = np.flatnonzero(audg.trace.set_sizes == 0)
    assert empty.size > 0
    k = int(empty[0])
    assert np.array_equal(audg.trajectory[k + 1], audg.trajectory[k])
    assert not np.array_equal(psurdg.trajectory[k + 1], psurdg.trajectory[k])


def test_zero_cache_start_waits_for_first_upload():
    obj = GlobalObjective(clients=[scalar_quadratic(1.0, 1.0, 1.0)])
    ch = ChannelModel.bernoulli([0.5])
    # Pick a seed whose first upload happens after round 1.
    seed = next(
        s
        for s in range(100)
        if not run_training(
            obj, ch, "psurdg", eta=0.1, horizon=10, init_params=[0.0], seed=s, cache_init="zero"
        ).trace.membership[0, 0]
    )
    result = run_training(
        obj, ch, "psurdg", eta=0.1, horizon=10, init_params=[0.0], seed=seed, cache_init="zero"
    )
    first = int(np.flatnonzero(result.trace.membership[:, 0])[0])
    assert np.all(result.trajectory[: first + 1] == 0.0)
    assert not np.array_equal(result.trajectory[first + 1], result.trajectory[first])


def test_warm_cache_start_moves_immediately():
    obj = GlobalObjective(clients=[scalar_quadratic(1.0, 1.0, 1.0)])
    ch = ChannelModel.bernoulli([0.5])
    result = run_training(
        obj, ch, "psurdg", eta=0.1, horizon=10, init_params=[0.0], seed=3, cache_init="warm"
    )
    assert not np.array_equal(result.trajectory[1], result.trajectory[0])


def test_received_only_updates_use_stamped_parameters():
    # Reconstruct each applied update from the trace and trajectory and compare
    # with the parameter motion; they must agree to rounding.
    obj = make_heterogeneous_family(n_clients=3, dimension=4, target_phi=2.0, seed=6)
    ch = ChannelModel.bernoulli([0.4, 0.6, 0.8])
    eta = 0.2 / obj.smoothness()
    result = run_training(obj, ch, "audg", eta=eta, horizon=50, init_params=np.ones(4), seed=12)
    for k in range(result.horizon):
        t = k + 1
        applied = (result.trajectory[k] - result.trajectory[k + 1]) / eta
        expected = np.zeros(4)
        for i in np.flatnonzero(result.trace.membership[k]):
            basis = result.trajectory[t - result.trace.delays[k, i] - 1]
            expected += obj.weights[i] * obj.clients[i].gradient(basis)
        assert applied == pytest.approx(expected, abs=1e-9)


def test_divergence_is_reported_with_iteration():
    obj = GlobalObjective(clients=[scalar_quadratic(4.0, 0.0, 1.0)])
    with pytest.raises(DivergenceError) as exc:
        run_training(obj, None, "sfl", eta=10.0, horizon=100, init_params=[1.0], seed=0)
    assert exc.value.iteration >= 1
    assert exc.value.norm > 1e6


# ---------------------------------------------------------------------------
# run bookkeeping


def test_loop_validates_arguments():
    obj = GlobalObjective(clients=[scalar_quadratic(1.0, 0.0, 1.0)])
    ch = ChannelModel.bernoulli([0.5])
    with pytest.raises(ValueError):
        run_training(obj, ch, "audg", eta=-0.1, horizon=10, init_params=[0.0], seed=0)
    with pytest.raises(ValueError):
        run_training(obj, ch, "audg", eta=0.1, horizon=0, init_params=[0.0], seed=0)
    with pytest.raises(ValueError):
        run_training(obj, None, "audg", eta=0.1, horizon=10, init_params=[0.0], seed=0)
    with pytest.raises(ValueError):
        run_training(
            obj, ChannelModel.bernoulli([0.5, 0.5]), "audg", eta=0.1, horizon=10,
            init_params=[0.0], seed=0,
        )
    with pytest.raises(ValueError):
        run_training(obj, ch, "audg", eta=0.1, horizon=10, init_params=[0.0], seed=0,
                     cache_init="hot")


def test_prefix_average_runs_over_post_init_iterates():
    traj = np.array([[0.0], [2.0], [4.0], [6.0]])
    avg = prefix_average_params(traj)
    assert avg[:, 0].tolist() == [2.0, 3.0, 4.0]


def test_result_series_are_consistent():
    obj = make_heterogeneous_family(n_clients=3, dimension=4, target_phi=2.0, seed=7)
    ch = ChannelModel.bernoulli([0.5, 0.5, 0.5])
    result = run_training(
        obj, ch, "psurdg", eta=0.2 / obj.smoothness(), horizon=40,
        init_params=np.ones(4), seed=5,
    )
    assert result.horizon == 40
    assert result.trajectory.shape == (41, 4)
    assert result.losses.shape == (40,)
    assert np.array_equal(result.loss_gaps, result.losses - result.f_star)
    assert result.averaged_params == pytest.approx(result.trajectory[1:].mean(axis=0))
    assert result.final_gap == pytest.approx(obj.loss(result.averaged_params) - result.f_star)
    assert result.last_gap == pytest.approx(result.loss_gaps[-1])
    assert result.final_dist == pytest.approx(float(np.linalg.norm(result.trajectory[-1] - result.w_star)))
    assert result.max_dist >= result.final_dist
    assert result.max_dist >= float(np.linalg.norm(result.trajectory[0] - result.w_star))
    assert np.all(result.loss_gaps >= -1e-12)
