"""Data-driven tube-based stochastic model predictive control.

The package builds a predictive controller directly from one recorded
input/disturbance/state trajectory of an unknown linear system:

* behavioral system representation through block-Hankel matrices,
* gain and cost-to-go synthesis from data via semidefinite programming,
* scenario-based probabilistic constraint tightening plus robust
  measurement-noise tubes,
* terminal set, feasible-set and first-step-constraint construction for
  recursive feasibility,
* a quadratic-program receding-horizon controller and closed-loop
  simulation tooling.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .behavior import (
    BehaviorError,
    BehaviorRep,
    DataIntegrityError,
    ExcitationError,
    RegularizationKit,
    TrajectoryData,
)
from .hankel import build_hankel, is_persistently_exciting
from .ocp import (
    INFEASIBLE,
    OPTIMAL,
    SOLVER_FAILURE,
    OCPError,
    OCPProblem,
    OCPSolution,
    assemble,
    backup_law,
    candidate_shift,
    control_law,
    solve,
)
from .polytope import (
    EmptySetError,
    HPolytope,
    PolytopeError,
    ProjectionLimitError,
    UnboundedSetError,
    affine_image,
    convex_hull_union,
    minkowski_sum,
    pontryagin_diff,
    project,
    set_equal,
    vertex_hull,
)
from .synthesis import (
    ConfigurationError,
    ControllerSpec,
    SynthesisConfig,
    SynthesisError,
    SynthesisReport,
    TighteningParams,
    choose_discard_count,
    synthesize,
)
from .sim import (
    MonteCarloStats,
    NoiseConfig,
    PlantModel,
    SimRecord,
    double_mass_spring_damper,
    generate_offline_data,
    make_run_rng,
    monte_carlo,
    perturb_data,
    run_closed_loop,
    sample_disturbance_bank,
)
from .config import ConfigError, RunConfig, load_config
from .storage import (
    StorageError,
    load_controller,
    load_data,
    save_controller,
    save_data,
)
from .estimator import NotFittedError, TubeMPCRegulator

__all__ = [
    "__version__",
    "build_hankel",
    "is_persistently_exciting",
    "HPolytope",
    "PolytopeError",
    "EmptySetError",
    "UnboundedSetError",
    "ProjectionLimitError",
    "pontryagin_diff",
    "minkowski_sum",
    "affine_image",
    "project",
    "convex_hull_union",
    "vertex_hull",
    "set_equal",
    "TrajectoryData",
    "BehaviorRep",
    "RegularizationKit",
    "BehaviorError",
    "DataIntegrityError",
    "ExcitationError",
    "SynthesisConfig",
    "TighteningParams",
    "ControllerSpec",
    "SynthesisReport",
    "SynthesisError",
    "ConfigurationError",
    "choose_discard_count",
    "synthesize",
    "OCPProblem",
    "OCPSolution",
    "OCPError",
    "OPTIMAL",
    "INFEASIBLE",
    "SOLVER_FAILURE",
    "assemble",
    "solve",
    "control_law",
    "candidate_shift",
    "backup_law",
    "PlantModel",
    "NoiseConfig",
    "SimRecord",
    "MonteCarloStats",
    "double_mass_spring_damper",
    "make_run_rng",
    "generate_offline_data",
    "sample_disturbance_bank",
    "perturb_data",
    "run_closed_loop",
    "monte_carlo",
    "ConfigError",
    "RunConfig",
    "load_config",
    "StorageError",
    "save_data",
    "load_data",
    "save_controller",
    "load_controller",
    "NotFittedError",
    "TubeMPCRegulator",
]
