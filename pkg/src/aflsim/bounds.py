"""Executable upper bounds for the three aggregation rules, plus audit helpers.

Every evaluator consumes one BoundInputs pack: curvature constants, step size,
horizon, client weights, per-client delay moments (first three), and the mean
success-set size. Moments may come from the closed-form geometric expressions of
the default channel or from the time averages of a recorded trace, and the pack
records which.

All three bounds share the synchronous benchmark part

    R^2 / (2 eta T)  +  (2 L / (mu T^2)) (L R^2 + (mu + L) phi^2)

and the asynchronous rules add delay penalties built from the weighted moment
sums. Each evaluator also exposes its term breakdown so reports can show where a
bound's mass comes from. `performance_gap` is the exact difference between the
reuse-rule bound and the drop-rule bound, so its sign predicts which rule the
theory favors on a given channel.

The audit half reconstructs the per-iteration aggregation error of a finished run
from its trace and checks the deterministic descent inequality that underpins all
three bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .delay import ChannelModel, TransmissionTrace, empirical_delay_moments, geometric_delay_moments
from .objective import GlobalObjective, ObjectiveConstants
from .training import Rule, RunResult


class BoundInputError(ValueError):
    """Raised for inconsistent bound inputs (bad moments, weights, set sizes)."""


def delay_penalty_poly(m1: float | np.ndarray, m2: float | np.ndarray, m3: float | np.ndarray):
    """Cubic staleness penalty m3/3 + 3 m2/2 + 13 m1/6 entering both async bounds."""
    return m3 / 3.0 + 1.5 * m2 + (13.0 / 6.0) * m1


@dataclass(frozen=True)
class BoundInputs:
    """Everything the bound evaluators need, with its provenance.

    delay_m1/m2/m3 are per-client arrays; mean_set_size is the expected number of
    successful uploads per iteration. source is "analytic" for closed-form channel
    moments and "empirical" for trace averages.
    """

    constants: ObjectiveConstants
    eta: float
    horizon: int
    weights: np.ndarray
    delay_m1: np.ndarray
    delay_m2: np.ndarray
    delay_m3: np.ndarray
    mean_set_size: float
    source: str = "analytic"

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "delay_m1", np.asarray(self.delay_m1, dtype=float))
        object.__setattr__(self, "delay_m2", np.asarray(self.delay_m2, dtype=float))
        object.__setattr__(self, "delay_m3", np.asarray(self.delay_m3, dtype=float))
        if self.eta <= 0.0:
            raise BoundInputError(f"step size must be positive, got {self.eta}")
        if self.horizon < 1:
            raise BoundInputError(f"horizon must be >= 1, got {self.horizon}")
        n = self.weights.shape[0] if self.weights.ndim == 1 else 0
        if n == 0:
            raise BoundInputError("weights must be a nonempty 1-d array")
        if np.any(self.weights <= 0.0):
            raise BoundInputError("client weights must be positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise BoundInputError(f"client weights must sum to 1, got {float(self.weights.sum())!r}")
        for name in ("delay_m1", "delay_m2", "delay_m3"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise BoundInputError(f"{name} must have shape ({n},), got {arr.shape}")
            if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
                raise BoundInputError(f"{name} entries must be finite and nonnegative")
        # second moment can never undercut the squared mean
        if np.any(self.delay_m2 < self.delay_m1**2 * (1.0 - 1e-9) - 1e-12):
            raise BoundInputError("delay_m2 < delay_m1^2 is not realizable by any delay distribution")
        if not 0.0 <= self.mean_set_size <= n * (1.0 + 1e-12):
            raise BoundInputError(f"mean set size must lie in [0, {n}], got {self.mean_set_size}")
        if self.source not in ("analytic", "empirical"):
            raise BoundInputError(f"source must be 'analytic' or 'empirical', got {self.source!r}")

    @property
    def n_clients(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def from_channel(
        cls,
        constants: ObjectiveConstants,
        eta: float,
        horizon: int,
        weights: np.ndarray,
        channel: ChannelModel,
    ) -> "BoundInputs":
        """Closed-form geometric moments; only the default channel admits them."""
        if not channel.is_default:
            raise BoundInputError(
                "closed-form moments exist only for the default channel "
                "(instant downloads, single compute round); use from_trace instead"
            )
        moments = np.array([geometric_delay_moments(p) for p in channel.upload_probs])
        return cls(
            constants=constants,
            eta=eta,
            horizon=horizon,
            weights=weights,
            delay_m1=moments[:, 0],
            delay_m2=moments[:, 1],
            delay_m3=moments[:, 2],
            mean_set_size=float(channel.upload_probs.sum()),
            source="analytic",
        )

    @classmethod
    def from_trace(
        cls,
        constants: ObjectiveConstants,
        eta: float,
        horizon: int,
        weights: np.ndarray,
        trace: TransmissionTrace,
    ) -> "BoundInputs":
        """Moments taken as time averages of a recorded trace."""
        m = empirical_delay_moments(trace)
        return cls(
            constants=constants,
            eta=eta,
            horizon=horizon,
            weights=weights,
            delay_m1=m.m1,
            delay_m2=m.m2,
            delay_m3=m.m3,
            mean_set_size=m.mean_set_size,
            source="empirical",
        )

    def to_dict(self) -> dict:
        return {
            "constants": self.constants.to_dict(),
            "eta": self.eta,
            "horizon": self.horizon,
            "weights": self.weights.tolist(),
            "delay_m1": self.delay_m1.tolist(),
            "delay_m2": self.delay_m2.tolist(),
            "delay_m3": self.delay_m3.tolist(),
            "mean_set_size": self.mean_set_size,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BoundInputs":
        return cls(
            constants=ObjectiveConstants.from_dict(data["constants"]),
            eta=float(data["eta"]),
            horizon=int(data["horizon"]),
            weights=np.asarray(data["weights"], dtype=float),
            delay_m1=np.asarray(data["delay_m1"], dtype=float),
            delay_m2=np.asarray(data["delay_m2"], dtype=float),
            delay_m3=np.asarray(data["delay_m3"], dtype=float),
            mean_set_size=float(data["mean_set_size"]),
            source=str(data.get("source", "analytic")),
        )


def sfl_terms(x: BoundInputs) -> dict[str, float]:
    """Synchronous benchmark bound on f(averaged iterate) - f*, split into terms."""
    c = x.constants
    L, mu, R, phi = c.smoothness, c.convexity, c.compactness_radius, c.heterogeneity
    T = float(x.horizon)
    return {
        "init_distance": R * R / (2.0 * x.eta * T),
        "curvature_transient": (2.0 * L / (mu * T * T)) * (L * R * R + (mu + L) * phi * phi),
    }


def sfl_bound(x: BoundInputs) -> float:
    return math.fsum(sfl_terms(x).values())


def audg_terms(x: BoundInputs) -> dict[str, float]:
    """Drop-rule bound terms: the benchmark part plus four delay penalties.

    stale_drift charges each unit of expected staleness against the ball radius;
    absent_clients charges the expected number of silent clients per round;
    participation_cross couples mean staleness with the mean set size; and
    staleness_poly is the cubic moment penalty scaled by the step size squared.
    """
    c = x.constants
    L, mu, R, phi, G = (
        c.smoothness,
        c.convexity,
        c.compactness_radius,
        c.heterogeneity,
        c.gradient_bound,
    )
    n = float(x.n_clients)
    s = x.mean_set_size
    wm1 = float(x.weights @ x.delay_m1)
    wpoly = float(x.weights @ delay_penalty_poly(x.delay_m1, x.delay_m2, x.delay_m3))
    eg2 = x.eta * x.eta * G * G
    terms = sfl_terms(x)
    terms["stale_drift"] = 0.5 * L * R * R * wm1
    terms["absent_clients"] = (n - s) * (0.5 * (2.0 * L - mu) * phi * phi + 1.5 * L * R * R)
    terms["participation_cross"] = 0.5 * eg2 * (L - mu) * s * wm1
    terms["staleness_poly"] = 0.5 * eg2 * L * n * wpoly
    return terms


def audg_bound(x: BoundInputs) -> float:
    return math.fsum(audg_terms(x).values())


def psurdg_terms(x: BoundInputs) -> dict[str, float]:
    """Reuse-rule bound terms: the benchmark part plus two delay penalties.

    reuse_staleness combines the linear and cubic moment penalties of replaying
    cached gradients from every client every round; stale_drift is the same
    radius-weighted mean-staleness charge as in the drop rule. No term depends on
    the set size: the cache makes every client present in every aggregation.
    """
    c = x.constants
    L, mu, R, G = c.smoothness, c.convexity, c.compactness_radius, c.gradient_bound
    n = float(x.n_clients)
    wm1 = float(x.weights @ x.delay_m1)
    mixed = (L - mu) * x.delay_m1 + L * delay_penalty_poly(x.delay_m1, x.delay_m2, x.delay_m3)
    terms = sfl_terms(x)
    terms["reuse_staleness"] = 0.5 * n * x.eta * x.eta * G * G * float(x.weights @ mixed)
    terms["stale_drift"] = 0.5 * L * R * R * wm1
    return terms


def psurdg_bound(x: BoundInputs) -> float:
    return math.fsum(psurdg_terms(x).values())


def persistent_delay_degradation(x: BoundInputs) -> float:
    """Horizon-independent part of the drop-rule bound: what delay alone costs.

    This is what remains of audg_bound - sfl_bound once heterogeneity is removed
    (phi = 0); the benchmark part vanishes as the horizon grows but these four
    penalties persist. Not monotone in a single client's mean delay: on a Bernoulli
    channel, raising one client's delay also shrinks the mean set size, which can
    deflate the cross term faster than the moment terms inflate.
    """
    c = x.constants
    L, mu, R, G = c.smoothness, c.convexity, c.compactness_radius, c.gradient_bound
    n = float(x.n_clients)
    s = x.mean_set_size
    wm1 = float(x.weights @ x.delay_m1)
    wpoly = float(x.weights @ delay_penalty_poly(x.delay_m1, x.delay_m2, x.delay_m3))
    eg2 = x.eta * x.eta * G * G
    return math.fsum(
        (
            0.5 * L * R * R * wm1,
            1.5 * L * R * R * (n - s),
            0.5 * eg2 * L * n * wpoly,
            0.5 * eg2 * (L - mu) * s * wm1,
        )
    )


def performance_gap(x: BoundInputs) -> float:
    """Exact difference psurdg_bound - audg_bound, factored over the silent mass.

    Equals (N - mean set size) times [ 0.5 eta^2 G^2 (L - mu) * sum_i w_i m1_i
    minus (0.5 (2L - mu) phi^2 + 1.5 L R^2) ]. Negative values mean the theory
    favors reusing cached gradients on this channel; positive values favor
    dropping them. The factored form is algebraically identical to subtracting
    the two bound evaluators, which the tests pin down to float precision.
    """
    c = x.constants
    L, mu, R, phi, G = (
        c.smoothness,
        c.convexity,
        c.compactness_radius,
        c.heterogeneity,
        c.gradient_bound,
    )
    n = float(x.n_clients)
    s = x.mean_set_size
    wm1 = float(x.weights @ x.delay_m1)
    per_client = 0.5 * x.eta * x.eta * G * G * (L - mu) * wm1
    absent_price = 0.5 * (2.0 * L - mu) * phi * phi + 1.5 * L * R * R
    return (n - s) * (per_client - absent_price)


@dataclass(frozen=True)
class BoundReport:
    """All bound values for one input pack, with per-term breakdowns."""

    sfl: float
    audg: float
    psurdg: float
    delay_degradation: float
    gap: float
    term_breakdown: dict
    source: str
    assumption_violated: bool = False

    def to_dict(self) -> dict:
        return {
            "sfl": self.sfl,
            "audg": self.audg,
            "psurdg": self.psurdg,
            "delay_degradation": self.delay_degradation,
            "gap": self.gap,
            "term_breakdown": self.term_breakdown,
            "source": self.source,
            "assumption_violated": self.assumption_violated,
        }


def evaluate_bounds(x: BoundInputs, assumption_violated: bool = False) -> BoundReport:
    """Evaluate every bound for one input pack."""
    s_terms = sfl_terms(x)
    a_terms = audg_terms(x)
    p_terms = psurdg_terms(x)
    return BoundReport(
        sfl=math.fsum(s_terms.values()),
        audg=math.fsum(a_terms.values()),
        psurdg=math.fsum(p_terms.values()),
        delay_degradation=persistent_delay_degradation(x),
        gap=performance_gap(x),
        term_breakdown={"sfl": s_terms, "audg": a_terms, "psurdg": p_terms},
        source=x.source,
        assumption_violated=assumption_violated,
    )


def bound_report_to_json(report: BoundReport, inputs: BoundInputs) -> str:
    """Stable JSON for audit files: inputs and report together, keys sorted."""
    return json.dumps(
        {"inputs": inputs.to_dict(), "report": report.to_dict()},
        sort_keys=True,
        indent=2,
    )


def async_error(
    objective: GlobalObjective,
    trajectory: np.ndarray,
    trace: TransmissionTrace,
    rule: Rule | str,
    t: int,
    w_star: np.ndarray | None = None,
    cache_init: str = "warm",
) -> tuple[np.ndarray, float]:
    """Reconstruct the aggregation error e(t) of a finished run from its trace.

    For the drop rule e(t) = grad f(w^t) - sum over the round's uploaders of
    w_i grad f_i(w^{t - tau_i(t)}). For the reuse rule the subtracted sum runs
    over every client at its most recently delivered stamp (the cache content),
    falling back to the initial point under warm start and to a zero gradient
    under zero start. Returns (e(t), <e(t), w^{t+1} - w*>).
    """
    rule = Rule(rule)
    horizon = trace.n_iterations
    if not 1 <= t <= horizon:
        raise ValueError(f"iteration t={t} outside recorded range 1..{horizon}")
    if trajectory.shape[0] < horizon + 1:
        raise ValueError(
            f"trajectory has {trajectory.shape[0]} rows, need {horizon + 1} to cover the trace"
        )
    if cache_init not in ("warm", "zero"):
        raise ValueError(f"cache_init must be 'warm' or 'zero', got {cache_init!r}")
    n = objective.n_clients
    weights = objective.weights
    k = t - 1
    if w_star is None:
        w_star = objective.global_optimum()

    sync_grad = weights @ objective.client_gradients(
        np.broadcast_to(trajectory[k], (n, objective.dimension))
    )
    if rule is Rule.SFL:
        applied = sync_grad
    elif rule is Rule.AUDG:
        members = trace.membership[k]
        basis_rows = t - trace.delays[k] - 1
        if np.any(basis_rows < 0):
            raise ValueError(f"delays at iteration {t} point before the trajectory start")
        fresh = objective.client_gradients(trajectory[basis_rows])
        applied = (weights * members) @ fresh
    else:
        basis_rows = np.empty(n, dtype=np.int64)
        contributes = np.ones(n, dtype=bool)
        for i in range(n):
            uploads = np.flatnonzero(trace.membership[: t, i])
            if uploads.size:
                last = uploads[-1]
                basis_rows[i] = (last + 1) - trace.delays[last, i] - 1
            elif cache_init == "warm":
                basis_rows[i] = 0
            else:
                basis_rows[i] = 0
                contributes[i] = False
        if np.any(basis_rows < 0):
            raise ValueError(f"delays at iteration {t} point before the trajectory start")
        cached = objective.client_gradients(trajectory[basis_rows])
        applied = (weights * contributes) @ cached
    err = sync_grad - applied
    inner = float(err @ (trajectory[k + 1] - w_star))
    return err, inner


@dataclass
class AsyncErrorTrace:
    """Aggregation errors of a whole run: e(t) rows and their optimality inner products."""

    errors: np.ndarray
    inners: np.ndarray
    norms: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.errors = np.asarray(self.errors, dtype=float)
        self.inners = np.asarray(self.inners, dtype=float)
        if self.errors.shape[0] != self.inners.shape[0]:
            raise ValueError("errors and inners must cover the same iterations")
        # row-at-a-time so the values match the per-iteration norms a live run records
        self.norms = np.array([float(np.linalg.norm(row)) for row in self.errors])

    @property
    def cumulative_inner(self) -> np.ndarray:
        return np.cumsum(self.inners)


def async_error_trace(
    objective: GlobalObjective, result: RunResult, cache_init: str = "warm"
) -> AsyncErrorTrace:
    """Reconstruct every iteration's aggregation error for a finished run."""
    horizon = result.horizon
    errors = np.empty((horizon, objective.dimension))
    inners = np.empty(horizon)
    w_star = result.w_star
    for t in range(1, horizon + 1):
        errors[t - 1], inners[t - 1] = async_error(
            objective, result.trajectory, result.trace, result.rule, t,
            w_star=w_star, cache_init=cache_init,
        )
    return AsyncErrorTrace(errors=errors, inners=inners)


@dataclass(frozen=True)
class DescentCheck:
    """Outcome of the deterministic descent inequality on one trajectory."""

    lhs: float
    rhs: float
    slack: float
    satisfied: bool


def descent_inequality_check(
    objective: GlobalObjective,
    trajectory: np.ndarray,
    error_inners: Iterable[float] | AsyncErrorTrace,
    eta: float,
) -> DescentCheck:
    """Check the summed-descent inequality that underpins every bound.

    For any run of w^{t+1} = w^t - eta (grad f(w^t) - e(t)) on a smooth convex f:

        sum_t [f(w^{t+1}) - f*]  <=  (||w^1 - w*||^2 - ||w^{T+1} - w*||^2) / (2 eta)
                                     + sum_t <e(t), w^{t+1} - w*>
                                     + 0.5 (L - 1/eta) sum_t ||w^{t+1} - w^t||^2

    holds deterministically, with genuine slack from dropped curvature terms.
    The returned slack is rhs - lhs; satisfied demands lhs <= rhs with no tolerance.
    """
    if eta <= 0.0:
        raise ValueError(f"step size must be positive, got {eta}")
    inners = np.asarray(
        error_inners.inners if isinstance(error_inners, AsyncErrorTrace) else error_inners,
        dtype=float,
    )
    trajectory = np.asarray(trajectory, dtype=float)
    horizon = trajectory.shape[0] - 1
    if inners.shape != (horizon,):
        raise ValueError(f"need one error inner product per iteration, got {inners.shape} for T={horizon}")
    w_star = objective.global_optimum()
    f_star = objective.loss(w_star)
    lhs = math.fsum(objective.loss(trajectory[t]) - f_star for t in range(1, horizon + 1))
    d_first = float(np.linalg.norm(trajectory[0] - w_star)) ** 2
    d_last = float(np.linalg.norm(trajectory[-1] - w_star)) ** 2
    steps = np.diff(trajectory, axis=0)
    rhs = (
        (d_first - d_last) / (2.0 * eta)
        + float(inners.sum())
        + 0.5 * (objective.smoothness() - 1.0 / eta) * float((steps * steps).sum())
    )
    slack = rhs - lhs
    return DescentCheck(lhs=lhs, rhs=rhs, slack=slack, satisfied=bool(lhs <= rhs))
