"""Estimator-style facade: fit on recorded data, predict control inputs.

Wraps the offline pipeline and the online program behind the familiar
``fit`` / ``predict`` / ``get_params`` interface so the controller can sit
in hyper-parameter searches or pipelines that speak that protocol.  No
external estimator framework is required; the parameter-introspection
contract is implemented directly.
"""

from __future__ import annotations

import inspect
import logging

import numpy as np

from .behavior import TrajectoryData
from .ocp import INFEASIBLE, OPTIMAL, assemble, backup_law, control_law, solve
from .polytope import HPolytope
from .synthesis import SynthesisConfig, synthesize

logger = logging.getLogger(__name__)

__all__ = ["NotFittedError", "TubeMPCRegulator"]


class NotFittedError(ValueError, AttributeError):
    """Prediction was requested before ``fit``."""


class TubeMPCRegulator:
    """Receding-horizon regulator learned from one recorded trajectory.

    ``fit`` runs the complete offline pipeline (feedback gain, scenario
    tightening, noise tubes, terminal and first-step sets) on a
    :class:`~ddtubempc.behavior.TrajectoryData` record; ``predict`` maps
    measured states to control inputs by solving the online program, with
    a saturating feedback fallback whenever the program is infeasible.

    Parameters mirror the synthesis configuration; ``Q``, ``R``,
    ``state_bound`` and ``input_bound`` are required before fitting.

    Attributes:
        spec_: Frozen controller (set after ``fit``).
        report_: Synthesis diagnostics (set after ``fit``).
        problem_: Assembled online program (set after ``fit``).
    """

    def __init__(
        self,
        horizon: int = 10,
        Q=None,
        R=None,
        state_bound=None,
        input_bound=None,
        d_bar: float = 0.1,
        mu_bar: float = 0.015,
        n_scenarios: int = 2924,
        p_min: float = 0.88,
        p_max: float = 0.92,
        beta: float = 0.01,
        lambda_alpha: float = 0.0,
        noise_margin: float = 0.0,
        cumulative_tubes: bool = False,
        exact_data: bool = True,
        seed: int = 0,
    ):
        self.horizon = horizon
        self.Q = Q
        self.R = R
        self.state_bound = state_bound
        self.input_bound = input_bound
        self.d_bar = d_bar
        self.mu_bar = mu_bar
        self.n_scenarios = n_scenarios
        self.p_min = p_min
        self.p_max = p_max
        self.beta = beta
        self.lambda_alpha = lambda_alpha
        self.noise_margin = noise_margin
        self.cumulative_tubes = cumulative_tubes
        self.exact_data = exact_data
        self.seed = seed

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        """Constructor parameters as a dict (estimator protocol)."""
        del deep
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "TubeMPCRegulator":
        """Update constructor parameters in place (estimator protocol)."""
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(
                    f"invalid parameter {name!r}; valid parameters: "
                    f"{sorted(valid)}"
                )
            setattr(self, name, value)
        return self

    def __repr__(self) -> str:
        args = ", ".join(
            f"{k}={v!r}" for k, v in self.get_params().items() if v is not None
        )
        return f"{type(self).__name__}({args})"

    def _synthesis_config(self, data: TrajectoryData) -> SynthesisConfig:
        for name in ("Q", "R", "state_bound", "input_bound"):
            if getattr(self, name) is None:
                raise ValueError(f"parameter {name!r} must be set before fit")
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        if R.ndim == 1:
            R = np.diag(R)
        state_bound = np.asarray(self.state_bound, dtype=float).ravel()
        input_bound = np.asarray(self.input_bound, dtype=float).ravel()
        return SynthesisConfig(
            horizon=self.horizon,
            Q=Q,
            R=R,
            state_set=HPolytope.box(-state_bound, state_bound),
            input_set=HPolytope.box(-input_bound, input_bound),
            disturbance_set=HPolytope.box(
                -self.d_bar * np.ones(data.n_d), self.d_bar * np.ones(data.n_d)
            ),
            noise_set=HPolytope.box(
                -self.mu_bar * np.ones(data.n_x), self.mu_bar * np.ones(data.n_x)
            ),
            p_min=self.p_min,
            p_max=self.p_max,
            beta=self.beta,
            lambda_alpha=self.lambda_alpha,
            cumulative_tubes=self.cumulative_tubes,
            noise_margin=self.noise_margin,
            exact_data=self.exact_data,
            seed=self.seed,
        )

    def fit(self, data: TrajectoryData, y=None) -> "TubeMPCRegulator":
        """Synthesize the controller from a recorded trajectory.

        Args:
            data: Input/disturbance/state record with a disturbance bank.
            y: Ignored; present for pipeline compatibility.

        Returns:
            self
        """
        del y
        if not isinstance(data, TrajectoryData):
            raise TypeError(
                "fit expects a TrajectoryData record, got "
                f"{type(data).__name__}"
            )
        self.spec_, self.report_ = synthesize(data, self._synthesis_config(data))
        self.problem_ = assemble(self.spec_)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "spec_"):
            raise NotFittedError(
                "this TubeMPCRegulator instance is not fitted yet; "
                "call fit with a trajectory record first"
            )

    def predict(self, X) -> np.ndarray:
        """Control inputs for measured states, one row per state.

        States where the online program is infeasible fall back to the
        saturating feedback law; a solver failure raises.

        Args:
            X: Array of shape ``(n_samples, n_x)`` or a single state.

        Returns:
            Array of shape ``(n_samples, n_u)``.
        """
        self._check_fitted()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n_x = self.spec_.rep.n_x
        if X.shape[1] != n_x:
            raise ValueError(f"states must have {n_x} columns, got {X.shape[1]}")
        inputs = np.empty((X.shape[0], self.spec_.rep.n_u))
        for i, x_hat in enumerate(X):
            solution = solve(self.problem_, x_hat)
            if solution.status == OPTIMAL:
                inputs[i] = control_law(self.problem_, x_hat, solution)
            elif solution.status == INFEASIBLE:
                inputs[i] = backup_law(self.spec_, x_hat)
            else:
                raise RuntimeError(
                    f"program backend failed at state {x_hat}: "
                    f"{solution.diagnostics}"
                )
        return inputs
