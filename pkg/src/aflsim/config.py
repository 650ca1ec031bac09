"""Experiment configuration schema: validation, file loading, and sweep specs.

Configs are plain mappings (YAML or JSON on disk) validated into an
ExperimentConfig. Validation errors name the offending field by its path, e.g.
"channel.upload_probs[2]: must lie in (0, 1]". The raw objective/channel/init
blocks are kept on the config so sweeps can re-derive modified copies; build_*
methods resolve them into runtime objects deterministically.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .delay import ChannelModel
from .objective import GlobalObjective, make_heterogeneous_family, objective_from_dict
from .training import Rule

SCHEMA_VERSION = 1

SWEEP_AXES = ("client_delay", "heterogeneity", "learning_rate", "horizon")


class ConfigError(ValueError):
    """Configuration rejected; the message starts with the offending field path."""


def _require(data: dict, key: str, path: str):
    if key not in data:
        raise ConfigError(f"{path}{key}: required field is missing")
    return data[key]


def _as_positive_float(value, path: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if not value > 0.0:
        raise ConfigError(f"{path}: must be positive, got {value}")
    return value


def _as_positive_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if value < 1:
        raise ConfigError(f"{path}: must be >= 1, got {value}")
    return value


@dataclass
class ExperimentConfig:
    """Validated experiment description; raw spec blocks retained for sweeps."""

    version: int
    objective_spec: dict
    channel_spec: dict
    init_spec: dict
    rules: tuple[Rule, ...]
    eta: float
    horizon: int
    monte_carlo_runs: int
    master_seed: int
    cache_init: str = "warm"
    radius_margin: float = 2.0
    fixed_radius: float | None = None
    exclude_divergent: bool = False
    output_dir: str | None = None

    def build_objective(self) -> GlobalObjective:
        spec = self.objective_spec
        if spec["kind"] == "family":
            return make_heterogeneous_family(
                n_clients=spec["n_clients"],
                dimension=spec["dimension"],
                target_phi=spec["target_phi"],
                condition_range=tuple(spec.get("condition_range", (1.0, 10.0))),
                seed=spec.get("seed", 0),
                weights=spec.get("weights"),
            )
        return objective_from_dict(spec)

    def build_channel(self) -> ChannelModel:
        spec = self.channel_spec
        phis = np.asarray(spec["upload_probs"], dtype=float)
        downloads = spec.get("download_probs")
        computes = spec.get("compute_rounds")
        return ChannelModel(
            upload_probs=phis,
            download_probs=np.ones_like(phis) if downloads is None else np.asarray(downloads, float),
            compute_rounds=(
                np.ones(phis.shape[0], dtype=np.int64)
                if computes is None
                else np.asarray(computes, dtype=np.int64)
            ),
        )

    def build_init(self, objective: GlobalObjective) -> np.ndarray:
        spec = self.init_spec
        if "values" in spec:
            return np.asarray(spec["values"], dtype=float)
        block = spec["random"]
        rng = np.random.default_rng(block["seed"])
        return block.get("scale", 1.0) * rng.standard_normal(objective.dimension)

    def with_axis_value(self, axis: str, value, client: int | None = None) -> "ExperimentConfig":
        """Derived copy for one sweep point; the master seed is kept for pairing."""
        if axis == "client_delay":
            if client is None:
                raise ConfigError("sweep.client: required for the client_delay axis")
            spec = copy.deepcopy(self.channel_spec)
            probs = list(spec["upload_probs"])
            if not 0 <= client < len(probs):
                raise ConfigError(f"sweep.client: index {client} out of range for {len(probs)} clients")
            probs[client] = float(value)
            spec["upload_probs"] = probs
            return replace(self, channel_spec=spec)
        if axis == "heterogeneity":
            if self.objective_spec.get("kind") != "family":
                raise ConfigError("sweep.axis: heterogeneity sweeps need a family objective spec")
            spec = copy.deepcopy(self.objective_spec)
            spec["target_phi"] = float(value)
            return replace(self, objective_spec=spec)
        if axis == "learning_rate":
            return replace(self, eta=float(value))
        if axis == "horizon":
            return replace(self, horizon=int(value))
        raise ConfigError(f"sweep.axis: unknown axis {axis!r}, expected one of {SWEEP_AXES}")


def config_from_dict(data: dict) -> ExperimentConfig:
    """Validate a raw mapping into an ExperimentConfig; errors carry field paths."""
    if not isinstance(data, dict):
        raise ConfigError(f": expected a mapping at the top level, got {type(data).__name__}")
    version = _require(data, "version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {version!r}, expected {SCHEMA_VERSION}")

    objective_spec = _validate_objective(_require(data, "objective", ""))
    channel_spec = _validate_channel(_require(data, "channel", ""), _spec_n_clients(objective_spec))
    init_spec = _validate_init(_require(data, "init", ""), _spec_dimension(objective_spec))

    raw_rules = _require(data, "rules", "")
    if not isinstance(raw_rules, (list, tuple)) or not raw_rules:
        raise ConfigError("rules: expected a nonempty list of rule names")
    rules = []
    for idx, name in enumerate(raw_rules):
        try:
            rules.append(Rule(name))
        except ValueError:
            raise ConfigError(
                f"rules[{idx}]: unknown rule {name!r}, expected one of {[r.value for r in Rule]}"
            ) from None
    if len(set(rules)) != len(rules):
        raise ConfigError("rules: duplicate entries")

    eta = _as_positive_float(_require(data, "eta", ""), "eta")
    horizon = _as_positive_int(_require(data, "horizon", ""), "horizon")
    runs = _as_positive_int(_require(data, "monte_carlo_runs", ""), "monte_carlo_runs")
    master_seed = _require(data, "master_seed", "")
    if isinstance(master_seed, bool) or not isinstance(master_seed, int) or master_seed < 0:
        raise ConfigError(f"master_seed: expected a nonnegative integer, got {master_seed!r}")

    cache_init = data.get("cache_init", "warm")
    if cache_init not in ("warm", "zero"):
        raise ConfigError(f"cache_init: expected 'warm' or 'zero', got {cache_init!r}")

    radius_margin = data.get("radius_margin", 2.0)
    if radius_margin is not None:
        radius_margin = float(radius_margin)
        if radius_margin < 1.0:
            raise ConfigError(f"radius_margin: must be >= 1, got {radius_margin}")
    fixed_radius = data.get("fixed_radius")
    if fixed_radius is not None:
        fixed_radius = _as_positive_float(fixed_radius, "fixed_radius")

    exclude_divergent = data.get("exclude_divergent", False)
    if not isinstance(exclude_divergent, bool):
        raise ConfigError(f"exclude_divergent: expected a boolean, got {exclude_divergent!r}")

    output_dir = data.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError(f"output_dir: expected a string path, got {output_dir!r}")

    unknown = set(data) - {
        "version", "objective", "channel", "init", "rules", "eta", "horizon",
        "monte_carlo_runs", "master_seed", "cache_init", "radius_margin",
        "fixed_radius", "exclude_divergent", "output_dir",
    }
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown field")

    return ExperimentConfig(
        version=version,
        objective_spec=objective_spec,
        channel_spec=channel_spec,
        init_spec=init_spec,
        rules=tuple(rules),
        eta=eta,
        horizon=horizon,
        monte_carlo_runs=runs,
        master_seed=master_seed,
        cache_init=cache_init,
        radius_margin=radius_margin,
        fixed_radius=fixed_radius,
        exclude_divergent=exclude_divergent,
        output_dir=output_dir,
    )


def _spec_n_clients(spec: dict) -> int:
    return spec["n_clients"] if spec["kind"] == "family" else len(spec["clients"])


def _spec_dimension(spec: dict) -> int | None:
    if spec["kind"] == "family":
        return spec["dimension"]
    first = spec["clients"][0]
    if first["kind"] == "quadratic":
        return len(first["optimum"])
    return len(first["features"][0])


def _validate_objective(spec, path: str = "objective") -> dict:
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected a mapping")
    kind = spec.get("kind")
    if kind == "family":
        out = dict(spec)
        out["n_clients"] = _as_positive_int(_require(spec, "n_clients", f"{path}."), f"{path}.n_clients")
        out["dimension"] = _as_positive_int(_require(spec, "dimension", f"{path}."), f"{path}.dimension")
        target = _require(spec, "target_phi", f"{path}.")
        try:
            out["target_phi"] = float(target)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.target_phi: expected a number, got {target!r}") from None
        if out["target_phi"] < 0:
            raise ConfigError(f"{path}.target_phi: must be nonnegative, got {out['target_phi']}")
        if "condition_range" in spec:
            cr = spec["condition_range"]
            if not isinstance(cr, (list, tuple)) or len(cr) != 2:
                raise ConfigError(f"{path}.condition_range: expected [low, high]")
            lo, hi = float(cr[0]), float(cr[1])
            if not 0 < lo <= hi:
                raise ConfigError(f"{path}.condition_range: need 0 < low <= high, got [{lo}, {hi}]")
        if "seed" in spec and (isinstance(spec["seed"], bool) or not isinstance(spec["seed"], int)):
            raise ConfigError(f"{path}.seed: expected an integer")
        return out
    if kind == "explicit":
        clients = _require(spec, "clients", f"{path}.")
        if not isinstance(clients, list) or not clients:
            raise ConfigError(f"{path}.clients: expected a nonempty list")
        for idx, entry in enumerate(clients):
            if not isinstance(entry, dict) or entry.get("kind") not in ("quadratic", "logistic"):
                raise ConfigError(f"{path}.clients[{idx}].kind: expected 'quadratic' or 'logistic'")
            if "weight" not in entry:
                raise ConfigError(f"{path}.clients[{idx}].weight: required field is missing")
        return dict(spec)
    raise ConfigError(f"{path}.kind: expected 'family' or 'explicit', got {kind!r}")


def _validate_channel(spec, n_clients: int, path: str = "channel") -> dict:
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected a mapping")
    probs = _require(spec, "upload_probs", f"{path}.")
    if not isinstance(probs, (list, tuple)) or len(probs) != n_clients:
        raise ConfigError(f"{path}.upload_probs: expected a list of {n_clients} probabilities")
    for idx, p in enumerate(probs):
        try:
            p = float(p)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.upload_probs[{idx}]: expected a number, got {p!r}") from None
        if not 0.0 < p <= 1.0:
            raise ConfigError(f"{path}.upload_probs[{idx}]: must lie in (0, 1], got {p}")
    for key in ("download_probs",):
        if spec.get(key) is not None:
            vals = spec[key]
            if not isinstance(vals, (list, tuple)) or len(vals) != n_clients:
                raise ConfigError(f"{path}.{key}: expected a list of {n_clients} probabilities")
            for idx, p in enumerate(vals):
                if not 0.0 < float(p) <= 1.0:
                    raise ConfigError(f"{path}.{key}[{idx}]: must lie in (0, 1], got {p}")
    if spec.get("compute_rounds") is not None:
        vals = spec["compute_rounds"]
        if not isinstance(vals, (list, tuple)) or len(vals) != n_clients:
            raise ConfigError(f"{path}.compute_rounds: expected a list of {n_clients} integers")
        for idx, c in enumerate(vals):
            if isinstance(c, bool) or not isinstance(c, int) or c < 1:
                raise ConfigError(f"{path}.compute_rounds[{idx}]: must be an integer >= 1, got {c!r}")
    unknown = set(spec) - {"upload_probs", "download_probs", "compute_rounds"}
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown field")
    return dict(spec)


def _validate_init(spec, dimension: int | None, path: str = "init") -> dict:
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: expected a mapping")
    has_values = "values" in spec
    has_random = "random" in spec
    if has_values == has_random:
        raise ConfigError(f"{path}: provide exactly one of 'values' or 'random'")
    if has_values:
        vals = spec["values"]
        if not isinstance(vals, (list, tuple)) or not vals:
            raise ConfigError(f"{path}.values: expected a nonempty list of numbers")
        if dimension is not None and len(vals) != dimension:
            raise ConfigError(f"{path}.values: expected {dimension} entries, got {len(vals)}")
        return dict(spec)
    block = spec["random"]
    if not isinstance(block, dict):
        raise ConfigError(f"{path}.random: expected a mapping")
    seed = _require(block, "seed", f"{path}.random.")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{path}.random.seed: expected a nonnegative integer, got {seed!r}")
    if "scale" in block:
        _as_positive_float(block["scale"], f"{path}.random.scale")
    return dict(spec)


@dataclass
class SweepSpec:
    """A base experiment plus one axis of variation (>= 2 points, same master seed)."""

    base: ExperimentConfig
    axis: str
    values: tuple
    client: int | None = None

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis: unknown axis {self.axis!r}, expected one of {SWEEP_AXES}")
        if len(self.values) < 2:
            raise ConfigError("sweep.values: a sweep needs at least two axis points")
        if self.axis == "client_delay" and self.client is None:
            raise ConfigError("sweep.client: required for the client_delay axis")

    def configs(self) -> list[ExperimentConfig]:
        return [self.base.with_axis_value(self.axis, v, self.client) for v in self.values]


def sweep_from_dict(data: dict) -> SweepSpec:
    if not isinstance(data, dict):
        raise ConfigError(": expected a mapping at the top level")
    base = config_from_dict(_require(data, "base", ""))
    sweep_block = _require(data, "sweep", "")
    if not isinstance(sweep_block, dict):
        raise ConfigError("sweep: expected a mapping")
    axis = _require(sweep_block, "axis", "sweep.")
    values = _require(sweep_block, "values", "sweep.")
    if not isinstance(values, (list, tuple)):
        raise ConfigError("sweep.values: expected a list")
    client = sweep_block.get("client")
    if client is not None and (isinstance(client, bool) or not isinstance(client, int)):
        raise ConfigError(f"sweep.client: expected an integer index, got {client!r}")
    return SweepSpec(base=base, axis=axis, values=tuple(values), client=client)


def _load_raw(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        return yaml.safe_load(text)
    if path.suffix == ".json":
        return json.loads(text)
    raise ConfigError(f": unsupported config extension {path.suffix!r}, use .yaml/.yml/.json")


def load_config(path: str | Path) -> ExperimentConfig:
    """Load and validate an experiment config from a YAML or JSON file."""
    return config_from_dict(_load_raw(path))


def load_sweep(path: str | Path) -> SweepSpec:
    """Load and validate a sweep spec ({base: ..., sweep: {axis, values, client}})."""
    return sweep_from_dict(_load_raw(path))
