"""Per-client delay state machine and stochastic transmission channels.

Each client holds a stamped copy of the global parameters. In every iteration a
client that has finished its local computation attempts an upload, which succeeds
with a per-client Bernoulli probability; successful uploaders form the round's
success set and receive the new parameters back, a download that may itself fail.
After a download failure the client keeps its stale stamp and retransmits the same
gradient on subsequent rounds.

A client's delay at iteration t is always t minus the stamp of the parameters it
holds. It therefore resets to zero on the round after a successful round trip,
grows by one for every round without one, and jumps straight to the stamp gap when
a retransmission finally lands.

With instant downloads and single-round computation the stationary delay is
geometric: P(tau = k) = phi (1 - phi)^k for k >= 0, with mean 1/phi - 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ChannelError(ValueError):
    """Raised for invalid channel parameters or malformed traces."""


@dataclass
class ChannelModel:
    """Per-client Bernoulli upload/download success probabilities and compute times.

    upload_probs[i] in (0, 1]; download_probs[i] in (0, 1] with 1 meaning the reply
    always arrives; compute_rounds[i] >= 1 is how many rounds client i computes on a
    fresh stamp before its first upload attempt.
    """

    upload_probs: np.ndarray
    download_probs: np.ndarray
    compute_rounds: np.ndarray

    def __post_init__(self) -> None:
        self.upload_probs = np.asarray(self.upload_probs, dtype=float)
        self.download_probs = np.asarray(self.download_probs, dtype=float)
        self.compute_rounds = np.asarray(self.compute_rounds, dtype=np.int64)
        n = self.upload_probs.shape[0] if self.upload_probs.ndim == 1 else 0
        if n == 0:
            raise ChannelError("channel needs at least one client")
        for name, arr in (("upload_probs", self.upload_probs), ("download_probs", self.download_probs)):
            if arr.shape != (n,):
                raise ChannelError(f"{name} must have shape ({n},), got {arr.shape}")
            if np.any(arr <= 0.0) or np.any(arr > 1.0):
                raise ChannelError(f"{name} entries must lie in (0, 1]")
        if self.compute_rounds.shape != (n,):
            raise ChannelError(f"compute_rounds must have shape ({n},), got {self.compute_rounds.shape}")
        if np.any(self.compute_rounds < 1):
            raise ChannelError("compute_rounds entries must be >= 1")

    @classmethod
    def bernoulli(cls, upload_probs: Sequence[float]) -> "ChannelModel":
        """Default channel: lossy uploads, instant downloads, one compute round."""
        phis = np.asarray(upload_probs, dtype=float)
        return cls(
            upload_probs=phis,
            download_probs=np.ones_like(phis),
            compute_rounds=np.ones(phis.shape[0], dtype=np.int64),
        )

    @property
    def n_clients(self) -> int:
        return self.upload_probs.shape[0]

    @property
    def is_default(self) -> bool:
        return bool(np.all(self.download_probs >= 1.0) and np.all(self.compute_rounds == 1))


@dataclass
class DelayState:
    """Mutable per-client transmission state.

    stamps[i] is the iteration index of the parameters client i holds (1-based;
    everyone starts with the initial parameters, stamp 1). delays[i] caches
    t - stamps[i] for the last advanced iteration. compute_left[i] counts rounds of
    local computation remaining before the next upload attempt; 0 means ready, and
    a client left at 0 after a failed download retransmits its stored gradient.
    """

    stamps: np.ndarray
    delays: np.ndarray
    compute_left: np.ndarray

    @classmethod
    def initial(cls, channel: ChannelModel) -> "DelayState":
        n = channel.n_clients
        return cls(
            stamps=np.ones(n, dtype=np.int64),
            delays=np.zeros(n, dtype=np.int64),
            compute_left=channel.compute_rounds - 1,
        )


def advance(channel: ChannelModel, state: DelayState, t: int, rngs: Sequence) -> np.ndarray:
    """Advance every client through iteration t; return the success-set mask.

    Clients still computing burn one round. Ready clients attempt an upload with
    their success probability; successes form the round's set and are credited with
    delay t - stamp. Afterwards the server replies to each success: a delivered
    reply restarts computation on stamp t + 1, a lost reply leaves the stale stamp
    in place so the same gradient is retransmitted. rngs[i] supplies client i's
    random stream via .random(); the state is mutated in place.
    """
    if t < 1:
        raise ChannelError(f"iterations are 1-based, got t={t}")
    n = channel.n_clients
    members = np.zeros(n, dtype=bool)
    for i in range(n):
        if state.compute_left[i] > 0:
            state.compute_left[i] -= 1
        elif rngs[i].random() < channel.upload_probs[i]:
            members[i] = True
    state.delays = t - state.stamps
    for i in np.flatnonzero(members):
        delivered = channel.download_probs[i] >= 1.0 or rngs[i].random() < channel.download_probs[i]
        if delivered:
            state.stamps[i] = t + 1
            state.compute_left[i] = channel.compute_rounds[i] - 1
    return members


@dataclass
class TransmissionTrace:
    """Recorded success sets and delays for iterations 1..T; row k is iteration k+1."""

    membership: np.ndarray
    delays: np.ndarray

    def __post_init__(self) -> None:
        self.membership = np.asarray(self.membership, dtype=bool)
        self.delays = np.asarray(self.delays, dtype=np.int64)
        if self.membership.ndim != 2 or self.membership.shape != self.delays.shape:
            raise ChannelError(
                f"membership {self.membership.shape} and delays {self.delays.shape} must be equal 2-d shapes"
            )
        if np.any(self.delays < 0):
            raise ChannelError("delays cannot be negative")

    @property
    def n_iterations(self) -> int:
        return self.membership.shape[0]

    @property
    def n_clients(self) -> int:
        return self.membership.shape[1]

    @property
    def set_sizes(self) -> np.ndarray:
        return self.membership.sum(axis=1)


def client_streams(seed: int, run_index: int, n_clients: int) -> list[np.random.Generator]:
    """Independent per-client generators keyed by (seed, run_index, client).

    The keying makes runs pairable: changing one client's channel parameters leaves
    every other client's draw sequence untouched, and the same (seed, run_index)
    yields the same channel realization regardless of the aggregation rule.
    """
    return [
        np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run_index, i)))
        for i in range(n_clients)
    ]


def simulate_channel(
    channel: ChannelModel, horizon: int, seed: int, run_index: int = 0
) -> TransmissionTrace:
    """Run the channel alone for `horizon` iterations and record the trace.

    The default channel (instant downloads, single compute round) is vectorized:
    each client consumes exactly one uniform per iteration, the same stream layout
    as the step-by-step advance, so both paths produce identical traces.
    """
    if horizon < 1:
        raise ChannelError(f"horizon must be >= 1, got {horizon}")
    n = channel.n_clients
    rngs = client_streams(seed, run_index, n)
    if channel.is_default:
        membership = np.empty((horizon, n), dtype=bool)
        delays = np.empty((horizon, n), dtype=np.int64)
        steps = np.arange(horizon, dtype=np.int64)
        for i in range(n):
            hits = rngs[i].random(horizon) < channel.upload_probs[i]
            membership[:, i] = hits
            last_hit = np.maximum.accumulate(np.where(hits, steps, -1))
            prev_hit = np.concatenate(([-1], last_hit[:-1]))
            delays[:, i] = np.where(prev_hit < 0, steps, steps - prev_hit - 1)
        return TransmissionTrace(membership=membership, delays=delays)

    state = DelayState.initial(channel)
    membership = np.empty((horizon, n), dtype=bool)
    delays = np.empty((horizon, n), dtype=np.int64)
    for k in range(horizon):
        members = advance(channel, state, k + 1, rngs)
        membership[k] = members
        delays[k] = state.delays
    return TransmissionTrace(membership=membership, delays=delays)


def geometric_delay_moments(phi: float) -> tuple[float, float, float]:
    """First three stationary delay moments of a Bernoulli upload channel.

    For P(tau = k) = phi (1 - phi)^k, k >= 0, with q = 1 - phi:
    E[tau] = q/phi, E[tau^2] = q(1 + q)/phi^2, E[tau^3] = q(1 + 4q + q^2)/phi^3.
    """
    phi = float(phi)
    if not 0.0 < phi <= 1.0:
        raise ChannelError(f"upload probability must lie in (0, 1], got {phi}")
    q = 1.0 - phi
    m1 = q / phi
    m2 = q * (1.0 + q) / phi**2
    m3 = q * (1.0 + 4.0 * q + q * q) / phi**3
    return m1, m2, m3


@dataclass(frozen=True)
class DelayMoments:
    """Per-client time-averaged delay moments plus the mean success-set size."""

    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    mean_set_size: float


def empirical_delay_moments(trace: TransmissionTrace) -> DelayMoments:
    """Time averages of tau, tau^2, tau^3 per client over every iteration of a trace."""
    if trace.n_iterations == 0:
        raise ChannelError("cannot average an empty trace")
    d = trace.delays.astype(float)
    return DelayMoments(
        m1=d.mean(axis=0),
        m2=(d * d).mean(axis=0),
        m3=(d**3).mean(axis=0),
        mean_set_size=float(trace.set_sizes.mean()),
    )


def upload_delay_moments(trace: TransmissionTrace) -> DelayMoments:
    """Delay moments conditioned on upload rounds only (set membership); NaN if none."""
    if trace.n_iterations == 0:
        raise ChannelError("cannot average an empty trace")
    d = trace.delays.astype(float)
    mask = trace.membership
    counts = mask.sum(axis=0).astype(float)
    with np.errstate(invalid="ignore"):
        m1 = np.where(counts > 0, (d * mask).sum(0) / counts, np.nan)
        m2 = np.where(counts > 0, (d * d * mask).sum(0) / counts, np.nan)
        m3 = np.where(counts > 0, (d**3 * mask).sum(0) / counts, np.nan)
    return DelayMoments(m1=m1, m2=m2, m3=m3, mean_set_size=float(trace.set_sizes.mean()))


def stationary_delay_pmf(phi: float, k_max: int) -> np.ndarray:
    """Geometric pmf P(tau = k) for k = 0..k_max under a Bernoulli upload channel."""
    if not 0.0 < phi <= 1.0:
        raise ChannelError(f"upload probability must lie in (0, 1], got {phi}")
    if k_max < 0:
        raise ChannelError("k_max must be nonnegative")
    k = np.arange(k_max + 1)
    if phi == 1.0:
        pmf = np.zeros(k_max + 1)
        pmf[0] = 1.0
        return pmf
    return phi * np.exp(k * math.log1p(-phi))
