"""Convex client objectives with exactly computable curvature constants.

Two client families are supported. Quadratics f_i(w) = 0.5 (w - b_i)^T A_i (w - b_i)
with A_i symmetric positive definite have closed-form optima and constants read off
the spectrum. Ridge-regularized logistic losses are smooth and strongly convex with
constants read off the data matrix; their optima are found by deterministic full
gradient descent with backtracking.

A weighted family exposes the global objective f = sum_i lambda_i f_i together with
the constant pack consumed by the delay-aware upper bounds: smoothness L, strong
convexity mu, a gradient bound G valid on a ball around the global optimum, the
ball radius R, and the heterogeneity radius phi = max_i ||w_i* - w*||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np


class DimensionMismatch(ValueError):
    """Raised when a parameter vector does not match the objective dimension."""


class OptimizationError(RuntimeError):
    """Raised when the inner optimizer fails to reach its gradient tolerance."""


def _as_params(w: Sequence[float] | np.ndarray, dimension: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (dimension,):
        raise DimensionMismatch(f"expected parameter vector of shape ({dimension},), got {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("parameter vector contains non-finite entries")
    return w


def _check_weight(weight: float) -> float:
    weight = float(weight)
    if not 0.0 < weight <= 1.0:
        raise ValueError(f"client weight must lie in (0, 1], got {weight}")
    return weight


@dataclass
class QuadraticClient:
    """Client loss 0.5 (w - optimum)^T matrix (w - optimum) with SPD matrix."""

    matrix: np.ndarray
    optimum: np.ndarray
    weight: float
    eig_min: float = field(init=False)
    eig_max: float = field(init=False)

    kind = "quadratic"

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.optimum = np.asarray(self.optimum, dtype=float)
        self.weight = _check_weight(self.weight)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"curvature matrix must be square, got shape {self.matrix.shape}")
        if self.optimum.shape != (self.matrix.shape[0],):
            raise DimensionMismatch(
                f"optimum shape {self.optimum.shape} does not match matrix of order {self.matrix.shape[0]}"
            )
        scale = max(1.0, float(np.abs(self.matrix).max()))
        if not np.allclose(self.matrix, self.matrix.T, atol=1e-12 * scale, rtol=0.0):
            raise ValueError("curvature matrix must be symmetric")
        eigs = np.linalg.eigvalsh(self.matrix)
        if eigs[0] <= 0.0:
            raise ValueError(f"curvature matrix must be positive definite, smallest eigenvalue {eigs[0]}")
        self.eig_min = float(eigs[0])
        self.eig_max = float(eigs[-1])
        self.matrix.setflags(write=False)
        self.optimum.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def loss(self, w: np.ndarray) -> float:
        w = _as_params(w, self.dimension)
        r = w - self.optimum
        return 0.5 * float(r @ (self.matrix @ r))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        w = _as_params(w, self.dimension)
        return self.matrix @ (w - self.optimum)

    def local_optimum(self) -> np.ndarray:
        return self.optimum.copy()

    def smoothness(self) -> float:
        return self.eig_max

    def convexity(self) -> float:
        return self.eig_min


@dataclass
class LogisticClient:
    """Mean logistic loss over (features, labels) plus 0.5 * ridge * ||w||^2.

    Labels are 0/1. The ridge term makes the loss strongly convex with
    convexity constant exactly `ridge` and smoothness eigmax(X^T X) / (4 n) + ridge.
    """

    features: np.ndarray
    labels: np.ndarray
    ridge: float
    weight: float

    kind = "logistic"

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        self.ridge = float(self.ridge)
        self.weight = _check_weight(self.weight)
        if self.features.ndim != 2:
            raise ValueError(f"features must be a 2-d sample matrix, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n == 0:
            raise ValueError("logistic client requires at least one sample")
        if self.labels.shape != (n,):
            raise DimensionMismatch(f"labels shape {self.labels.shape} does not match {n} samples")
        if not np.all(np.isin(self.labels, (0.0, 1.0))):
            raise ValueError("labels must be binary 0/1")
        if self.ridge <= 0.0:
            raise ValueError(f"ridge must be positive for strong convexity, got {self.ridge}")
        self.features.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def loss(self, w: np.ndarray) -> float:
        w = _as_params(w, self.dimension)
        z = self.features @ w
        # mean of log(1 + e^z) - y z, stable via logaddexp
        data = float(np.mean(np.logaddexp(0.0, z) - self.labels * z))
        return data + 0.5 * self.ridge * float(w @ w)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        w = _as_params(w, self.dimension)
        z = self.features @ w
        p = 1.0 / (1.0 + np.exp(-z))
        return self.features.T @ (p - self.labels) / self.features.shape[0] + self.ridge * w

    def local_optimum(self) -> np.ndarray:
        return _descend(self.loss, self.gradient, np.zeros(self.dimension), self.smoothness())

    def smoothness(self) -> float:
        n = self.features.shape[0]
        gram_top = float(np.linalg.eigvalsh(self.features.T @ self.features)[-1])
        return gram_top / (4.0 * n) + self.ridge

    def convexity(self) -> float:
        return self.ridge


ClientObjective = Union[QuadraticClient, LogisticClient]

GRADIENT_TOLERANCE = 1e-10
MAX_INNER_STEPS = 100_000


def _descend(loss_fn, grad_fn, w0: np.ndarray, lipschitz: float) -> np.ndarray:
    """Full gradient descent with Armijo backtracking, run to gradient norm 1e-10.

    Steps start at 1/lipschitz, where the sufficient-decrease test holds exactly
    for a smooth function; the test carries a float-noise allowance so it cannot
    stall once loss differences drop below machine resolution.
    """
    w = np.asarray(w0, dtype=float).copy()
    base_step = 1.0 / lipschitz
    f = loss_fn(w)
    for _ in range(MAX_INNER_STEPS):
        g = grad_fn(w)
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= GRADIENT_TOLERANCE:
            return w
        step = base_step
        while True:
            trial = w - step * g
            f_trial = loss_fn(trial)
            if f_trial <= f - 0.5 * step * gnorm2 + 1e-14 * max(1.0, abs(f)) or step < 1e-18:
                break
            step *= 0.5
        w, f = trial, f_trial
    raise OptimizationError(
        f"inner optimizer did not reach gradient norm {GRADIENT_TOLERANCE} within {MAX_INNER_STEPS} steps"
    )


@dataclass
class GlobalObjective:
    """Weighted family f(w) = sum_i weight_i f_i(w) over clients of equal dimension."""

    clients: list[ClientObjective]

    def __post_init__(self) -> None:
        if not self.clients:
            raise ValueError("objective family must contain at least one client")
        dims = {c.dimension for c in self.clients}
        if len(dims) != 1:
            raise DimensionMismatch(f"clients disagree on dimension: {sorted(dims)}")
        total = math.fsum(c.weight for c in self.clients)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"client weights must sum to 1 within 1e-12, got {total!r}")
        self.weights = np.array([c.weight for c in self.clients], dtype=float)
        self.weights.setflags(write=False)
        self._all_quadratic = all(c.kind == "quadratic" for c in self.clients)
        if self._all_quadratic:
            self._mat_stack = np.stack([c.matrix for c in self.clients])
            self._opt_stack = np.stack([c.optimum for c in self.clients])
        self._w_star: np.ndarray | None = None

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def dimension(self) -> int:
        return self.clients[0].dimension

    def loss(self, w: np.ndarray) -> float:
        w = _as_params(w, self.dimension)
        if self._all_quadratic:
            r = w - self._opt_stack
            quad = np.einsum("ni,nij,nj->n", r, self._mat_stack, r)
            return 0.5 * float(self.weights @ quad)
        return math.fsum(c.weight * c.loss(w) for c in self.clients)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        w = _as_params(w, self.dimension)
        # weighted sum over the same batched path used by the training loop, so a
        # synchronous run and a zero-delay asynchronous run produce identical floats
        return self.weights @ self.client_gradients(np.broadcast_to(w, (self.n_clients, self.dimension)))

    def client_gradients(self, points: np.ndarray) -> np.ndarray:
        """Per-client gradients, client i evaluated at points[i]; shape (n_clients, dim)."""
        if self._all_quadratic:
            return np.einsum("nij,nj->ni", self._mat_stack, points - self._opt_stack)
        return np.stack([c.gradient(points[i]) for i, c in enumerate(self.clients)])

    def local_optima(self) -> np.ndarray:
        return np.stack([c.local_optimum() for c in self.clients])

    def global_optimum(self) -> np.ndarray:
        """Minimizer of the weighted family; closed form when every client is quadratic."""
        if self._w_star is not None:
            return self._w_star.copy()
        if self._all_quadratic:
            lhs = np.einsum("n,nij->ij", self.weights, self._mat_stack)
            rhs = np.einsum("n,nij,nj->i", self.weights, self._mat_stack, self._opt_stack)
            w_star = np.linalg.solve(lhs, rhs)
        else:
            start = self.weights @ self.local_optima()
            w_star = _descend(self.loss, self.gradient, start, self.smoothness())
        self._w_star = w_star
        return w_star.copy()

    def smoothness(self) -> float:
        return max(c.smoothness() for c in self.clients)

    def convexity(self) -> float:
        return min(c.convexity() for c in self.clients)


@dataclass(frozen=True)
class ObjectiveConstants:
    """Constant pack consumed by the bound evaluators.

    smoothness L >= convexity mu > 0 hold for every client individually;
    gradient_bound G = L * (compactness_radius + heterogeneity) dominates every
    client gradient norm on the radius-R ball around the global optimum.
    """

    smoothness: float
    convexity: float
    gradient_bound: float
    compactness_radius: float
    heterogeneity: float

    def __post_init__(self) -> None:
        if not self.convexity > 0.0:
            raise ValueError(f"convexity must be positive, got {self.convexity}")
        if self.smoothness < self.convexity:
            raise ValueError(
                f"smoothness {self.smoothness} cannot be below convexity {self.convexity}"
            )
        if self.compactness_radius <= 0.0:
            raise ValueError(f"compactness radius must be positive, got {self.compactness_radius}")
        if self.heterogeneity < 0.0:
            raise ValueError(f"heterogeneity must be nonnegative, got {self.heterogeneity}")
        if self.gradient_bound <= 0.0:
            raise ValueError(f"gradient bound must be positive, got {self.gradient_bound}")

    def to_dict(self) -> dict:
        return {
            "smoothness": self.smoothness,
            "convexity": self.convexity,
            "gradient_bound": self.gradient_bound,
            "compactness_radius": self.compactness_radius,
            "heterogeneity": self.heterogeneity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectiveConstants":
        return cls(
            smoothness=float(data["smoothness"]),
            convexity=float(data["convexity"]),
            gradient_bound=float(data["gradient_bound"]),
            compactness_radius=float(data["compactness_radius"]),
            heterogeneity=float(data["heterogeneity"]),
        )


@dataclass(frozen=True)
class FixedRadius:
    """Use an explicitly chosen compactness radius."""

    radius: float


@dataclass(frozen=True)
class RadiusFromInit:
    """Radius = margin * ||w_init - w*||, so the start sits well inside the ball."""

    init: np.ndarray
    margin: float = 2.0


RadiusPolicy = Union[FixedRadius, RadiusFromInit]


def compute_constants(
    objective: GlobalObjective,
    radius_policy: RadiusPolicy,
    probe_seed: int | None = 0,
    n_probes: int = 1000,
) -> ObjectiveConstants:
    """Derive (L, mu, G, R, phi) for a family and spot-check the gradient bound.

    When probe_seed is not None the bound G is audited on n_probes points drawn
    uniformly from the radius-R ball around the global optimum; a violation means
    the constants are inconsistent and raises.
    """
    smoothness = objective.smoothness()
    convexity = objective.convexity()
    if convexity <= 0.0:
        raise ValueError(f"family convexity must be positive, got {convexity}")
    w_star = objective.global_optimum()
    local = objective.local_optima()
    heterogeneity = float(np.max(np.linalg.norm(local - w_star, axis=1)))

    if isinstance(radius_policy, FixedRadius):
        radius = float(radius_policy.radius)
    elif isinstance(radius_policy, RadiusFromInit):
        init = _as_params(radius_policy.init, objective.dimension)
        if radius_policy.margin < 1.0:
            raise ValueError(f"radius margin must be at least 1, got {radius_policy.margin}")
        radius = float(radius_policy.margin * np.linalg.norm(init - w_star))
    else:
        raise TypeError(f"unknown radius policy {radius_policy!r}")
    if radius <= 0.0:
        raise ValueError("compactness radius must be positive; start from a point away from the optimum")

    gradient_bound = smoothness * (radius + heterogeneity)
    constants = ObjectiveConstants(
        smoothness=smoothness,
        convexity=convexity,
        gradient_bound=gradient_bound,
        compactness_radius=radius,
        heterogeneity=heterogeneity,
    )

    if probe_seed is not None:
        rng = np.random.default_rng(probe_seed)
        d = objective.dimension
        directions = rng.standard_normal((n_probes, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = radius * rng.random(n_probes) ** (1.0 / d)
        probes = w_star + radii[:, None] * directions
        for w in probes:
            norms = np.linalg.norm(objective.client_gradients(np.broadcast_to(w, (objective.n_clients, d))), axis=1)
            if np.any(norms > gradient_bound * (1.0 + 1e-9)):
                raise ValueError(
                    "gradient bound audit failed: a client gradient on the compactness ball "
                    f"exceeds G={gradient_bound}"
                )
    return constants


def make_heterogeneous_family(
    n_clients: int,
    dimension: int,
    target_phi: float,
    condition_range: tuple[float, float] = (1.0, 10.0),
    seed: int = 0,
    weights: Sequence[float] | None = None,
) -> GlobalObjective:
    """Build a random quadratic family whose heterogeneity radius equals target_phi.

    Client curvatures are rotations of uniform spectra drawn from condition_range.
    Client optima are scaled offsets b_i = s * delta_i around a zero mean; because
    the global optimum is linear in s, a single rescaling hits the requested
    max_i ||w_i* - w*|| to machine precision. target_phi = 0 collapses every
    optimum to the origin.
    """
    if n_clients < 1:
        raise ValueError(f"need at least one client, got {n_clients}")
    if dimension < 1:
        raise ValueError(f"dimension must be positive, got {dimension}")
    if target_phi < 0.0:
        raise ValueError(f"target heterogeneity must be nonnegative, got {target_phi}")
    lo, hi = float(condition_range[0]), float(condition_range[1])
    if not (0.0 < lo <= hi):
        raise ValueError(f"infeasible condition range ({lo}, {hi}); need 0 < low <= high")

    if weights is None:
        weight_arr = np.full(n_clients, 1.0 / n_clients)
    else:
        weight_arr = np.asarray(weights, dtype=float)
        if weight_arr.shape != (n_clients,):
            raise ValueError(f"weights must have shape ({n_clients},), got {weight_arr.shape}")

    rng = np.random.default_rng(seed)
    matrices = []
    for _ in range(n_clients):
        basis, _ = np.linalg.qr(rng.standard_normal((dimension, dimension)))
        spectrum = rng.uniform(lo, hi, size=dimension)
        mat = (basis * spectrum) @ basis.T
        matrices.append(0.5 * (mat + mat.T))

    if target_phi == 0.0:
        optima = [np.zeros(dimension) for _ in range(n_clients)]
    else:
        for _ in range(100):
            offsets = rng.standard_normal((n_clients, dimension))
            lhs = np.einsum("n,nij->ij", weight_arr, np.stack(matrices))
            rhs = np.einsum("n,nij,nj->i", weight_arr, np.stack(matrices), offsets)
            center = np.linalg.solve(lhs, rhs)
            spread = float(np.max(np.linalg.norm(offsets - center, axis=1)))
            if spread > 1e-9:
                break
        else:
            raise OptimizationError("failed to draw client offsets with nonzero spread")
        scale = target_phi / spread
        optima = [scale * offsets[i] for i in range(n_clients)]

    clients = [
        QuadraticClient(matrix=matrices[i], optimum=optima[i], weight=float(weight_arr[i]))
        for i in range(n_clients)
    ]
    return GlobalObjective(clients)


def objective_to_dict(objective: GlobalObjective) -> dict:
    """Serialize a family to a plain structure; matrices stored as row-major lists."""
    clients = []
    for c in objective.clients:
        if c.kind == "quadratic":
            clients.append(
                {
                    "kind": "quadratic",
                    "weight": c.weight,
                    "matrix": c.matrix.tolist(),
                    "optimum": c.optimum.tolist(),
                }
            )
        else:
            clients.append(
                {
                    "kind": "logistic",
                    "weight": c.weight,
                    "features": c.features.tolist(),
                    "labels": [int(v) for v in c.labels],
                    "ridge": c.ridge,
                }
            )
    return {"clients": clients}


def objective_from_dict(data: dict) -> GlobalObjective:
    """Inverse of objective_to_dict."""
    clients: list[ClientObjective] = []
    for entry in data["clients"]:
        kind = entry.get("kind")
        if kind == "quadratic":
            clients.append(
                QuadraticClient(
                    matrix=np.array(entry["matrix"], dtype=float),
                    optimum=np.array(entry["optimum"], dtype=float),
                    weight=float(entry["weight"]),
                )
            )
        elif kind == "logistic":
            clients.append(
                LogisticClient(
                    features=np.array(entry["features"], dtype=float),
                    labels=np.array(entry["labels"], dtype=float),
                    ridge=float(entry["ridge"]),
                    weight=float(entry["weight"]),
                )
            )
        else:
            raise ValueError(f"unknown client kind {kind!r}")
    return GlobalObjective(clients)
