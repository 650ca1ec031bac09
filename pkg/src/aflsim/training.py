"""Server-side aggregation rules and the discrete-time training loop.

Three rules share one update skeleton w^{t+1} = w^t - eta * applied(t):

* sfl: the synchronous benchmark; every client contributes a fresh gradient each
  iteration, applied(t) = grad f(w^t).
* audg: aggregate only the gradients that arrived this round, each evaluated at
  the (possibly stale) parameters its sender held; absent clients contribute
  nothing, and an empty round leaves the parameters unchanged.
* psurdg: the server keeps one cached gradient per client, overwrites the cache
  rows of this round's uploaders, and applies the full weighted cache every
  iteration, so stale entries are reused rather than dropped.

The loop also records the per-iteration aggregation error (the gap between the
synchronous gradient and what was actually applied) because the upper-bound
audit consumes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .delay import ChannelModel, DelayState, TransmissionTrace, advance, client_streams
from .objective import GlobalObjective, _as_params


class Rule(str, Enum):
    SFL = "sfl"
    AUDG = "audg"
    PSURDG = "psurdg"


class AggregationError(ValueError):
    """Raised for malformed aggregation inputs (duplicates, missing clients, no cache)."""


class DivergenceError(RuntimeError):
    """Raised when the iterate norm explodes; carries the offending iteration."""

    def __init__(self, iteration: int, norm: float):
        super().__init__(f"iterates diverged at iteration {iteration} (norm {norm:.3e})")
        self.iteration = iteration
        self.norm = norm


DIVERGENCE_FACTOR = 1e6


@dataclass
class GradientMessage:
    """One upload: sender's index, its gradient, and the stamp it was computed at."""

    sender: int
    gradient: np.ndarray
    stamp: int


def client_update(objective: GlobalObjective, sender: int, params: np.ndarray, stamp: int) -> GradientMessage:
    """Compute sender's local gradient at the stamped parameters it holds."""
    grad = objective.clients[sender].gradient(params)
    return GradientMessage(sender=sender, gradient=grad, stamp=stamp)


@dataclass
class TrainingState:
    """Server state: current parameters, iteration count, and the gradient cache."""

    params: np.ndarray
    eta: float
    weights: np.ndarray
    rule: Rule
    iteration: int = 0
    gradient_cache: np.ndarray | None = None
    history: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.eta <= 0.0:
            raise ValueError(f"learning rate must be positive, got {self.eta}")
        self.params = np.asarray(self.params, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)


def sfl_aggregate(state: TrainingState, messages: list[GradientMessage]) -> np.ndarray:
    """Synchronous step; requires exactly one fresh message per client."""
    n = state.weights.shape[0]
    senders = [m.sender for m in messages]
    if sorted(senders) != list(range(n)):
        raise AggregationError(f"synchronous step needs one message from each of {n} clients, got senders {senders}")
    for m in messages:
        if m.stamp != state.iteration + 1:
            raise AggregationError(
                f"synchronous step at iteration {state.iteration + 1} received stale stamp {m.stamp}"
            )
    stack = np.stack([m.gradient for m in sorted(messages, key=lambda m: m.sender)])
    return state.params - state.eta * (state.weights @ stack)


def audg_aggregate(state: TrainingState, messages: list[GradientMessage]) -> np.ndarray:
    """Apply only this round's arrivals; an empty round is a no-op on the parameters."""
    senders = [m.sender for m in messages]
    if len(set(senders)) != len(senders):
        raise AggregationError(f"duplicate senders in one round: {senders}")
    if not messages:
        return state.params.copy()
    update = np.zeros_like(state.params)
    for m in messages:
        update += state.weights[m.sender] * m.gradient
    return state.params - state.eta * update


def psurdg_aggregate(state: TrainingState, messages: list[GradientMessage]) -> np.ndarray:
    """Overwrite cache rows for this round's arrivals, then apply the full cache."""
    if state.gradient_cache is None:
        raise AggregationError("gradient cache is uninitialized; seed it before the first step")
    senders = [m.sender for m in messages]
    if len(set(senders)) != len(senders):
        raise AggregationError(f"duplicate senders in one round: {senders}")
    for m in messages:
        state.gradient_cache[m.sender] = m.gradient
    return state.params - state.eta * (state.weights @ state.gradient_cache)


@dataclass
class RunResult:
    """Trajectory and per-iteration diagnostics of one training run.

    trajectory[k] is w^{k+1} (row 0 is the initial point); series index k holds the
    quantities of iteration t = k + 1, evaluated after the step: losses[k] =
    f(w^{t+1}), dists[k] = ||w^{t+1} - w*||. err_norms/err_inners describe the
    aggregation error e(t) = grad f(w^t) - applied(t) and its inner product with
    w^{t+1} - w*. averaged_params is the running mean of w^2..w^{T+1}.
    """

    rule: Rule
    eta: float
    trajectory: np.ndarray
    averaged_params: np.ndarray
    w_star: np.ndarray
    f_star: float
    trace: TransmissionTrace
    losses: np.ndarray
    loss_gaps: np.ndarray
    dists: np.ndarray
    err_norms: np.ndarray
    err_inners: np.ndarray
    final_gap: float
    last_gap: float
    final_dist: float
    max_dist: float

    @property
    def horizon(self) -> int:
        return self.trajectory.shape[0] - 1


def prefix_average_params(trajectory: np.ndarray) -> np.ndarray:
    """Row T-1 is the average of w^2..w^{T+1}, the certified iterate at horizon T."""
    post = trajectory[1:]
    return np.cumsum(post, axis=0) / np.arange(1, post.shape[0] + 1)[:, None]


def run_training(
    objective: GlobalObjective,
    channel: ChannelModel | None,
    rule: Rule | str,
    eta: float,
    horizon: int,
    init_params: np.ndarray,
    seed: int,
    run_index: int = 0,
    cache_init: str = "warm",
) -> RunResult:
    """Simulate one run of the chosen aggregation rule for `horizon` iterations.

    The channel may be None only for the synchronous rule. cache_init chooses how
    the reuse rule seeds its cache: "warm" stores every client's gradient at the
    initial point (one synchronous warm-up round), "zero" starts from zeros so
    clients contribute nothing until their first upload. Runs with the same
    (seed, run_index) see identical channel realizations for every rule.
    """
    rule = Rule(rule)
    if eta <= 0.0:
        raise ValueError(f"learning rate must be positive, got {eta}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if cache_init not in ("warm", "zero"):
        raise ValueError(f"cache_init must be 'warm' or 'zero', got {cache_init!r}")
    n = objective.n_clients
    dim = objective.dimension
    if rule is not Rule.SFL:
        if channel is None:
            raise ValueError(f"rule {rule.value} requires a channel model")
        if channel.n_clients != n:
            raise ValueError(f"channel has {channel.n_clients} clients, objective has {n}")

    w = _as_params(init_params, dim).copy()
    w_star = objective.global_optimum()
    f_star = objective.loss(w_star)
    weights = objective.weights

    trajectory = np.empty((horizon + 1, dim))
    trajectory[0] = w
    membership = np.empty((horizon, n), dtype=bool)
    delays = np.zeros((horizon, n), dtype=np.int64)
    losses = np.empty(horizon)
    dists = np.empty(horizon)
    err_norms = np.empty(horizon)
    err_inners = np.empty(horizon)

    explode_at = DIVERGENCE_FACTOR * max(1.0, float(np.linalg.norm(w)))
    state = DelayState.initial(channel) if rule is not Rule.SFL else None
    rngs = client_streams(seed, run_index, n) if rule is not Rule.SFL else None
    cache = None
    if rule is Rule.PSURDG:
        if cache_init == "warm":
            cache = objective.client_gradients(np.broadcast_to(w, (n, dim))).copy()
        else:
            cache = np.zeros((n, dim))

    for k in range(horizon):
        t = k + 1
        sync_grad = weights @ objective.client_gradients(np.broadcast_to(w, (n, dim)))
        if rule is Rule.SFL:
            membership[k] = True
            applied = sync_grad
        else:
            members = advance(channel, state, t, rngs)
            membership[k] = members
            delays[k] = state.delays
            basis_rows = t - state.delays - 1
            fresh = objective.client_gradients(trajectory[basis_rows])
            if rule is Rule.AUDG:
                applied = (weights * members) @ fresh
            else:
                cache[members] = fresh[members]
                applied = weights @ cache

        w_next = w - eta * applied
        norm_next = float(np.linalg.norm(w_next))
        if not np.isfinite(norm_next) or norm_next > explode_at:
            raise DivergenceError(iteration=t, norm=norm_next)
        err = sync_grad - applied
        trajectory[k + 1] = w_next
        losses[k] = objective.loss(w_next)
        dists[k] = float(np.linalg.norm(w_next - w_star))
        err_norms[k] = float(np.linalg.norm(err))
        err_inners[k] = float(err @ (w_next - w_star))
        w = w_next

    trace = TransmissionTrace(membership=membership, delays=delays)
    averaged = trajectory[1:].mean(axis=0)
    final_gap = objective.loss(averaged) - f_star
    traj_dists = np.linalg.norm(trajectory - w_star, axis=1)
    return RunResult(
        rule=rule,
        eta=eta,
        trajectory=trajectory,
        averaged_params=averaged,
        w_star=w_star,
        f_star=f_star,
        trace=trace,
        losses=losses,
        loss_gaps=losses - f_star,
        dists=dists,
        err_norms=err_norms,
        err_inners=err_inners,
        final_gap=final_gap,
        last_gap=float(losses[-1] - f_star),
        final_dist=float(dists[-1]),
        max_dist=float(traj_dists.max()),
    )
