"""Declarative run configuration: strict YAML with full validation.

One YAML file drives every pipeline command (data generation, synthesis,
simulation, Monte-Carlo studies).  Unknown keys are hard errors at every
nesting level — a typo in a risk parameter must never be silently
ignored — and all cross-dimension consistency is checked before any
compute starts.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .sim import NoiseConfig, PlantModel, double_mass_spring_damper
from .synthesis import SynthesisConfig
from .polytope import HPolytope

logger = logging.getLogger(__name__)

__all__ = ["ConfigError", "RunConfig", "load_config"]

#: Named plant presets selectable via ``plant: <name>``.
PLANT_PRESETS = {
    "double-mass-spring-damper": double_mass_spring_damper,
}


class ConfigError(ValueError):
    """Malformed, unknown, or dimensionally inconsistent configuration."""


def _require_mapping(obj, context: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{context} must be a mapping, got {type(obj).__name__}")
    return obj


def _check_keys(mapping: dict, allowed, context: str) -> None:
    unknown = sorted(set(mapping) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown key(s) {unknown} in {context}; allowed: {sorted(allowed)}"
        )


def _matrix(obj, name: str) -> np.ndarray:
    try:
        M = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be numeric") from exc
    if M.ndim == 1:  # diagonal shorthand
        M = np.diag(M)
    if M.ndim != 2:
        raise ConfigError(f"{name} must be a matrix or a diagonal vector")
    return M


def _vector(obj, name: str) -> np.ndarray:
    try:
        v = np.asarray(obj, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be numeric") from exc
    return v


@dataclass
class RunConfig:
    """Validated parameters for one controller study.

    Attributes:
        plant: Ground-truth plant (preset name resolved at load).
        horizon: Prediction horizon ``L``.
        Q, R: Stage-cost weights.
        state_bound, input_bound: Componentwise box bounds (sets are
            symmetric boxes ``|x_i| <= bound_i``).
        noise: Disturbance / measurement-noise distribution parameters.
        n_scenarios: Disturbance sample sequences for the tightening.
        p_min, p_max, beta: Scenario probability range and confidence
            complement.
        lambda_alpha: Consistency-regularizer weight (noisy mode).
        noise_margin: Extra robustness offset per tightened row.
        x0: Initial state for closed-loop studies.
        sim_steps, runs: Closed-loop length and Monte-Carlo run count.
        data_steps: Recorded samples for the offline experiment.
        data_seed, sim_seed: Base seeds (data / simulation streams).
        output_dir: Artifact directory.
        cumulative_tubes: Nested-tightening variant.
        noisy_data: Perturb the offline record and enable regularized
            synthesis.
    """

    plant: PlantModel
    horizon: int
    Q: np.ndarray
    R: np.ndarray
    state_bound: np.ndarray
    input_bound: np.ndarray
    noise: NoiseConfig
    n_scenarios: int = 2924
    p_min: float = 0.88
    p_max: float = 0.92
    beta: float = 0.01
    lambda_alpha: float = 0.0
    noise_margin: float = 0.0
    x0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sim_steps: int = 50
    runs: int = 100
    data_steps: int = 50
    data_seed: int = 1234
    sim_seed: int = 2024
    output_dir: Path = Path("out")
    cumulative_tubes: bool = False
    noisy_data: bool = False

    def __post_init__(self):
        n_x, n_u = self.plant.n_x, self.plant.n_u
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.Q.shape != (n_x, n_x):
            raise ConfigError(
                f"Q must be {n_x}x{n_x} for this plant, got {self.Q.shape}"
            )
        if self.R.shape != (n_u, n_u):
            raise ConfigError(
                f"R must be {n_u}x{n_u} for this plant, got {self.R.shape}"
            )
        if self.state_bound.shape != (n_x,):
            raise ConfigError(f"state_bound must have length {n_x}")
        if self.input_bound.shape != (n_u,):
            raise ConfigError(f"input_bound must have length {n_u}")
        if np.any(self.state_bound <= 0) or np.any(self.input_bound <= 0):
            raise ConfigError("constraint bounds must be positive")
        if self.x0.size == 0:
            self.x0 = np.zeros(n_x)
        if self.x0.shape != (n_x,):
            raise ConfigError(f"x0 must have length {n_x}")
        if self.n_scenarios < 1:
            raise ConfigError("n_scenarios must be >= 1")
        if not (0.0 < self.p_min <= self.p_max < 1.0):
            raise ConfigError("need 0 < p_min <= p_max < 1")
        if not (0.0 < self.beta < 1.0):
            raise ConfigError("beta must be in (0, 1)")
        if self.sim_steps < 1 or self.data_steps < 1:
            raise ConfigError("sim_steps and data_steps must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        min_len = self.horizon + n_x + 2
        if self.data_steps < min_len:
            raise ConfigError(
                f"data_steps={self.data_steps} too short for horizon "
                f"{self.horizon}: need at least {min_len} samples for a "
                "persistently exciting record"
            )

    def state_set(self) -> HPolytope:
        return HPolytope.box(-self.state_bound, self.state_bound)

    def input_set(self) -> HPolytope:
        return HPolytope.box(-self.input_bound, self.input_bound)

    def disturbance_set(self) -> HPolytope:
        bound = self.noise.d_bar * np.ones(self.plant.n_d)
        return HPolytope.box(-bound, bound)

    def noise_set(self) -> HPolytope:
        bound = self.noise.mu_bar * np.ones(self.plant.n_x)
        return HPolytope.box(-bound, bound)

    def synthesis_config(self) -> SynthesisConfig:
        """Materialize the offline-pipeline configuration."""
        return SynthesisConfig(
            horizon=self.horizon,
            Q=self.Q,
            R=self.R,
            state_set=self.state_set(),
            input_set=self.input_set(),
            disturbance_set=self.disturbance_set(),
            noise_set=self.noise_set(),
            p_min=self.p_min,
            p_max=self.p_max,
            beta=self.beta,
            lambda_alpha=self.lambda_alpha if self.noisy_data else 0.0,
            cumulative_tubes=self.cumulative_tubes,
            noise_margin=self.noise_margin if self.noisy_data else 0.0,
            exact_data=not self.noisy_data,
        )


_TOP_KEYS = (
    "plant",
    "horizon",
    "weights",
    "constraints",
    "noise",
    "tightening",
    "regularization",
    "simulation",
    "data",
    "seeds",
    "output_dir",
    "options",
)


def _parse_plant(obj) -> PlantModel:
    if isinstance(obj, str):
        if obj not in PLANT_PRESETS:
            raise ConfigError(
                f"unknown plant preset {obj!r}; available: "
                f"{sorted(PLANT_PRESETS)}"
            )
        return PLANT_PRESETS[obj]()
    mapping = _require_mapping(obj, "plant")
    _check_keys(mapping, ("A", "B", "B_d"), "plant")
    missing = [k for k in ("A", "B", "B_d") if k not in mapping]
    if missing:
        raise ConfigError(f"plant matrices missing: {missing}")
    try:
        return PlantModel(
            A=_matrix(mapping["A"], "plant.A"),
            B=_matrix(mapping["B"], "plant.B"),
            B_d=_matrix(mapping["B_d"], "plant.B_d"),
        )
    except ValueError as exc:
        raise ConfigError(f"invalid plant: {exc}") from exc


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises:
        ConfigError: On YAML syntax errors, unknown keys anywhere,
            missing required keys, or dimension mismatches.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    raw = _require_mapping(raw, "top level")
    _check_keys(raw, _TOP_KEYS, "top level")
    for key in ("plant", "horizon", "weights", "constraints"):
        if key not in raw:
            raise ConfigError(f"required key {key!r} missing")

    plant = _parse_plant(raw["plant"])

    weights = _require_mapping(raw["weights"], "weights")
    _check_keys(weights, ("Q", "R"), "weights")
    if "Q" not in weights or "R" not in weights:
        raise ConfigError("weights must provide both Q and R")

    constraints = _require_mapping(raw["constraints"], "constraints")
    _check_keys(constraints, ("state_bound", "input_bound"), "constraints")
    if "state_bound" not in constraints or "input_bound" not in constraints:
        raise ConfigError(
            "constraints must provide state_bound and input_bound"
        )

    noise_map = _require_mapping(raw.get("noise"), "noise")
    _check_keys(
        noise_map, ("d_bar", "d_sigma", "mu_bar", "mu_sigma", "seed"), "noise"
    )
    try:
        noise = NoiseConfig(**noise_map)
    except ValueError as exc:
        raise ConfigError(f"invalid noise section: {exc}") from exc

    tight = _require_mapping(raw.get("tightening"), "tightening")
    _check_keys(tight, ("n_scenarios", "p_min", "p_max", "beta"), "tightening")

    reg = _require_mapping(raw.get("regularization"), "regularization")
    _check_keys(reg, ("lambda_alpha", "noise_margin"), "regularization")

    simulation = _require_mapping(raw.get("simulation"), "simulation")
    _check_keys(simulation, ("x0", "steps", "runs"), "simulation")

    data_map = _require_mapping(raw.get("data"), "data")
    _check_keys(data_map, ("steps",), "data")

    seeds = _require_mapping(raw.get("seeds"), "seeds")
    _check_keys(seeds, ("data", "simulation"), "seeds")

    options = _require_mapping(raw.get("options"), "options")
    _check_keys(options, ("cumulative_tubes", "noisy_data"), "options")

    kwargs = dict(
        plant=plant,
        horizon=int(raw["horizon"]),
        Q=_matrix(weights["Q"], "weights.Q"),
        R=_matrix(weights["R"], "weights.R"),
        state_bound=_vector(constraints["state_bound"], "state_bound"),
        input_bound=_vector(constraints["input_bound"], "input_bound"),
        noise=noise,
    )
    if tight:
        kwargs.update(
            n_scenarios=int(tight.get("n_scenarios", 2924)),
            p_min=float(tight.get("p_min", 0.88)),
            p_max=float(tight.get("p_max", 0.92)),
            beta=float(tight.get("beta", 0.01)),
        )
    if reg:
        kwargs.update(
            lambda_alpha=float(reg.get("lambda_alpha", 0.0)),
            noise_margin=float(reg.get("noise_margin", 0.0)),
        )
    if simulation:
        if "x0" in simulation:
            kwargs["x0"] = _vector(simulation["x0"], "simulation.x0")
        if "steps" in simulation:
            kwargs["sim_steps"] = int(simulation["steps"])
        if "runs" in simulation:
            kwargs["runs"] = int(simulation["runs"])
    if data_map and "steps" in data_map:
        kwargs["data_steps"] = int(data_map["steps"])
    if seeds:
        if "data" in seeds:
            kwargs["data_seed"] = int(seeds["data"])
        if "simulation" in seeds:
            kwargs["sim_seed"] = int(seeds["simulation"])
    if "output_dir" in raw:
        kwargs["output_dir"] = Path(str(raw["output_dir"]))
    if options:
        kwargs["cumulative_tubes"] = bool(options.get("cumulative_tubes", False))
        kwargs["noisy_data"] = bool(options.get("noisy_data", False))
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
