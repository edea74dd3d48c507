"""Experiment configuration: YAML file merged over the five-agent defaults."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dynamics import AgentModel
from .protocol import CostWeights, TerminalSet, validate_delta

VARIANTS = ("P-DMPC", "ST-DMPC", "ST-DMPC-D", "P-DeMPC", "ST-DeMPC")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


DEFAULTS = {
    "model": {
        "mass": 1.0,
        "spring": 0.33,
        "damping": 1.1,
        "sample_period": 0.3,
        "input_box": [-4.0, 4.0],
        "position_bound": 1.95,
        "w_bound": 0.1,
        "v_bound": 0.15,
        "velocity_sample_box": [-3.0, 3.0],
    },
    "weights": {
        "Q": [[0.6, 0.0], [0.0, 0.6]],
        "Q_ij": [[0.5, 0.0], [0.0, 0.5]],
        "R": [[1.0]],
        "P": [[8.05, 2.90], [2.90, 3.48]],
        "hbar": 1.1,
    },
    "horizon": 5,
    "max_interval": 4,
    "tau_bar": 3,
    "delta": 3.58,
    "rho": math.sqrt(6.0),
    "kappa": [-0.87, -1.04],
    "lipschitz": {"nu": 1.23, "xi": 0.42},
    "graph": {1: [2], 2: [1, 5], 3: [2, 4], 4: [3], 5: [2]},
    "initial_states": {
        1: [1.5, 0.7],
        2: [-0.5, -1.1],
        3: [-2.0, 0.5],
        4: [0.7, -1.0],
        5: [1.95, 0.0],
    },
    "steps": 50,
    "seed": 0,
    "variant": "ST-DMPC",
    "strict": True,
    # the delta bound is compared after allowing this slack (3.58 vs the exact 3.5843)
    "delta_tolerance": 0.01,
    "solver": {
        "budget": 400,
        "extra_scenarios": 20,
        "penalty": 1.0e6,
        "shrink": 0.5,
        "initial_step": 0.1,
        "tail_bounds": {"a": [-3.0, 3.0], "b": [-2.0, 2.0], "c": [-4.0, 4.0]},
    },
    "disturbance": {"time_base": "tick", "w_amplitude": 0.1, "v_amplitude": 0.15},
}

# mappings whose keys are data (agent ids), not schema
_FREE_KEYS = {"graph", "initial_states"}


@dataclass
class ExperimentConfig:
    model: AgentModel
    weights: CostWeights
    horizon: int
    max_interval: int
    tau_bar: int
    delta: float
    rho: float
    kappa: np.ndarray
    nu: float
    xi: float
    graph: dict
    initial_states: dict
    steps: int
    seed: int
    variant: str
    strict: bool
    delta_tolerance: float
    solver: dict
    disturbance: dict
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def terminal(self) -> TerminalSet:
        return TerminalSet(self.weights.P, self.rho)

    @property
    def agent_ids(self) -> list[int]:
        return sorted(self.initial_states)

    def delta_bound(self) -> float:
        return validate_delta(self.nu, self.xi, self.model.d_bar, self.horizon,
                              self.max_interval, self.terminal)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        return from_dict(_merge(self.raw, overrides), fill_defaults=False)


def _merge(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in defaults:
            raise ConfigError(where, "unknown key")
        if isinstance(defaults[key], dict) and key not in _FREE_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(where, "expected a mapping")
            out[key] = _merge(defaults[key], value, where + ".")
        else:
            out[key] = value
    return out


def _int_keys(mapping, name):
    if not isinstance(mapping, dict):
        raise ConfigError(name, "expected a mapping of agent id to values")
    out = {}
    for k, v in mapping.items():
        try:
            out[int(k)] = v
        except (TypeError, ValueError):
            raise ConfigError(f"{name}.{k}", "agent ids must be integers") from None
    return out


def from_dict(data: dict | None, fill_defaults: bool = True) -> ExperimentConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    raw = _merge(DEFAULTS, data) if fill_defaults else copy.deepcopy(data)

    m = raw["model"]
    try:
        model = AgentModel(
            mass=float(m["mass"]), spring=float(m["spring"]), damping=float(m["damping"]),
            sample_period=float(m["sample_period"]), input_box=tuple(map(float, m["input_box"])),
            position_bound=float(m["position_bound"]), w_bound=float(m["w_bound"]),
            v_bound=float(m["v_bound"]),
            velocity_sample_box=tuple(map(float, m["velocity_sample_box"])))
    except (ValueError, TypeError) as exc:
        raise ConfigError("model", str(exc)) from None

    wts = raw["weights"]
    try:
        weights = CostWeights(Q=wts["Q"], Q_ij=wts["Q_ij"], R=wts["R"], P=wts["P"],
                              hbar=float(wts["hbar"]))
    except ValueError as exc:
        raise ConfigError("weights", str(exc)) from None
    if not weights.hbar > 1:
        raise ConfigError("weights.hbar", f"must be > 1, got {weights.hbar}")

    graph = {i: [int(j) for j in (nbrs or [])] for i, nbrs in _int_keys(raw["graph"], "graph").items()}
    initial = {i: [float(c) for c in x] for i, x in _int_keys(raw["initial_states"], "initial_states").items()}
    for i, x in initial.items():
        if len(x) != 2:
            raise ConfigError(f"initial_states.{i}", "expected two coordinates")
    for i, nbrs in graph.items():
        if i not in initial:
            raise ConfigError(f"graph.{i}", f"agent {i} has no initial state")
        for j in nbrs:
            if j not in initial:
                raise ConfigError(f"graph.{i}", f"neighbor {j} is not a valid agent id "
                                                f"(agents: {sorted(initial)})")
            if j == i:
                raise ConfigError(f"graph.{i}", "an agent cannot be its own neighbor")

    ints = {}
    for key in ("horizon", "max_interval", "tau_bar", "steps", "seed"):
        value = raw[key]
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        ints[key] = value
    if ints["horizon"] < 1:
        raise ConfigError("horizon", "must be >= 1")
    if not 1 <= ints["max_interval"] <= ints["horizon"]:
        raise ConfigError("max_interval", "must lie in [1, horizon]")
    if ints["tau_bar"] < 0:
        raise ConfigError("tau_bar", "must be >= 0")
    if ints["steps"] < 0:
        raise ConfigError("steps", "must be >= 0")
    if raw["variant"] not in VARIANTS:
        raise ConfigError("variant", f"unknown variant {raw['variant']!r}; expected one of {VARIANTS}")

    kappa = np.asarray(raw["kappa"], dtype=float).reshape(-1)
    if kappa.shape != (2,):
        raise ConfigError("kappa", "expected a gain row of length 2")
    rho = float(raw["rho"])
    if rho < 0:
        raise ConfigError("rho", "must be >= 0")

    s = raw["solver"]
    if int(s["budget"]) < 1:
        raise ConfigError("solver.budget", "must be >= 1")
    if int(s["extra_scenarios"]) < 0:
        raise ConfigError("solver.extra_scenarios", "must be >= 0")
    if not 0 < float(s["shrink"]) < 1:
        raise ConfigError("solver.shrink", "must lie in (0, 1)")
    tb = s["tail_bounds"]
    for key in ("a", "b", "c"):
        lo, hi = tb[key]
        if not lo <= hi:
            raise ConfigError(f"solver.tail_bounds.{key}", "lower bound exceeds upper bound")
    if raw["disturbance"]["time_base"] not in ("tick", "seconds"):
        raise ConfigError("disturbance.time_base", "expected 'tick' or 'seconds'")

    cfg = ExperimentConfig(
        model=model, weights=weights, horizon=ints["horizon"], max_interval=ints["max_interval"],
        tau_bar=ints["tau_bar"], delta=float(raw["delta"]), rho=rho, kappa=kappa,
        nu=float(raw["lipschitz"]["nu"]), xi=float(raw["lipschitz"]["xi"]),
        graph=graph, initial_states=initial, steps=ints["steps"], seed=ints["seed"],
        variant=raw["variant"], strict=bool(raw["strict"]),
        delta_tolerance=float(raw["delta_tolerance"]), solver=s, disturbance=raw["disturbance"],
        raw=raw)
    if cfg.delta < 0:
        raise ConfigError("delta", "must be >= 0")
    if cfg.strict:
        bound = cfg.delta_bound()
        if cfg.delta < bound - cfg.delta_tolerance:
            raise ConfigError("delta", f"{cfg.delta} is below the validate_delta bound "
                                       f"{bound:.2f} (strict mode)")
    return cfg


def load_config(path, defaults: bool = True) -> ExperimentConfig:
    """Parse a YAML file and validate it; missing keys come from the defaults."""
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from None
    return from_dict(data, fill_defaults=defaults)


def default_config(**overrides) -> ExperimentConfig:
    return from_dict(overrides)


@dataclass(frozen=True)
class VariantSettings:
    H_bar: int
    tau_bar: int
    distributed: bool


def variant_settings(cfg: ExperimentConfig, variant: str | None = None) -> VariantSettings:
    """P-* trigger every tick, *-D draw random delays, *DeMPC drop coupling and messages."""
    variant = variant or cfg.variant
    if variant not in VARIANTS:
        raise ConfigError("variant", f"unknown variant {variant!r}")
    H_bar = 1 if variant.startswith("P-") else cfg.max_interval
    tau_bar = cfg.tau_bar if variant.endswith("-D") else 0
    return VariantSettings(H_bar=H_bar, tau_bar=tau_bar, distributed="DeMPC" not in variant)
