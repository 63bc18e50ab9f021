"""Ground-truth plant, stochastic sampling, data generation and simulation.

The plant matrices live only in this module: controller synthesis and the
receding-horizon program never see them.  They serve as the simulation
ground truth and as the oracle for tests.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .behavior import ExcitationError, TrajectoryData
from .hankel import is_persistently_exciting
from .ocp import (
    INFEASIBLE,
    OPTIMAL,
    assemble,
    backup_law,
    control_law,
    solve,
)
from .synthesis import ControllerSpec

logger = logging.getLogger(__name__)

__all__ = [
    "PlantModel",
    "NoiseConfig",
    "SimRecord",
    "MonteCarloStats",
    "double_mass_spring_damper",
    "make_run_rng",
    "sample_truncated_normal",
    "sample_disturbance_bank",
    "generate_offline_data",
    "perturb_data",
    "run_closed_loop",
    "monte_carlo",
    "write_run_csv",
    "write_summary_csv",
]

#: Hard cap on rejection-sampling draws per call.
_MAX_REJECTION_DRAWS = 10**6


def _ctrb_rank(A: np.ndarray, B: np.ndarray) -> int:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


@dataclass
class PlantModel:
    """True linear plant ``x+ = A x + B u + B_d d`` (simulation only).

    Attributes:
        A: State matrix, ``(n_x, n_x)``.
        B: Input matrix, ``(n_x, n_u)``.
        B_d: Disturbance matrix, ``(n_x, n_d)``.
    """

    A: np.ndarray
    B: np.ndarray
    B_d: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.B_d = np.atleast_2d(np.asarray(self.B_d, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.B_d.shape[0] != n:
            raise ValueError("B and B_d must have as many rows as A")
        if _ctrb_rank(self.A, self.B) != n:
            raise ValueError("(A, B) must be controllable")
        if _ctrb_rank(self.A, self.B_d) != n:
            raise ValueError("(A, B_d) must be controllable")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_d(self) -> int:
        return self.B_d.shape[1]

    def step(self, x, u, d) -> np.ndarray:
        """One state update."""
        x = np.asarray(x, dtype=float).ravel()
        u = np.atleast_1d(np.asarray(u, dtype=float)).ravel()
        d = np.atleast_1d(np.asarray(d, dtype=float)).ravel()
        return self.A @ x + self.B @ u + self.B_d @ d

    def simulate(self, x0, u_seq, d_seq) -> np.ndarray:
        """States ``x_0 .. x_T`` for given input/disturbance sequences."""
        u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
        d_seq = np.atleast_2d(np.asarray(d_seq, dtype=float))
        if u_seq.shape[1] != self.n_u:
            u_seq = u_seq.T
        if d_seq.shape[1] != self.n_d:
            d_seq = d_seq.T
        T = u_seq.shape[0]
        X = np.zeros((T + 1, self.n_x))
        X[0] = np.asarray(x0, dtype=float).ravel()
        for k in range(T):
            X[k + 1] = self.step(X[k], u_seq[k], d_seq[k])
        return X


def double_mass_spring_damper() -> PlantModel:
    """Benchmark plant: two coupled masses, input on one, disturbance on the other.

    Discrete-time model with a 0.1 s sampling period; states are the two
    angles and their velocities.
    """
    A = np.array(
        [
            [0.952, 0.048, 0.094, 0.002],
            [0.048, 0.952, 0.002, 0.094],
            [-0.920, 0.920, 0.859, 0.046],
            [0.920, -0.920, 0.046, 0.858],
        ]
    )
    B = np.array([[0.048], [0.001], [0.936], [0.016]])
    B_d = np.array([[0.001], [0.048], [0.016], [0.940]])
    return PlantModel(A=A, B=B, B_d=B_d)


@dataclass
class NoiseConfig:
    """Disturbance and measurement-noise distribution parameters.

    Both channels draw from zero-mean normal distributions truncated at
    their bounds; a zero bound (or zero standard deviation) degenerates
    to exactly zero samples.

    Attributes:
        d_bar: Disturbance truncation bound.
        d_sigma: Disturbance standard deviation.
        mu_bar: Per-component measurement-noise bound.
        mu_sigma: Measurement-noise standard deviation.
        seed: Base RNG seed.
    """

    d_bar: float = 0.1
    d_sigma: float = 0.1
    mu_bar: float = 0.015
    mu_sigma: float = 0.015
    seed: int = 0

    def __post_init__(self):
        for name in ("d_bar", "d_sigma", "mu_bar", "mu_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class SimRecord:
    """Log entry for one closed-loop step."""

    k: int
    x: np.ndarray
    x_hat: np.ndarray
    u: np.ndarray
    d: np.ndarray
    stage_cost_true: float
    stage_cost_meas: float
    ocp_status: str
    violation_mask: np.ndarray
    optimal_cost: float = math.nan


def make_run_rng(seed: int, run_index: int = 0) -> np.random.Generator:
    """Counter-based generator with independent per-run substreams."""
    return np.random.Generator(np.random.Philox(key=seed).jumped(run_index))


def sample_truncated_normal(sigma, bound, rng, size=None):
    """Zero-mean normal samples rejected outside ``[-bound, bound]``.

    Args:
        sigma: Standard deviation of the underlying normal.
        bound: Truncation bound; ``0`` degenerates to exact zeros.
        rng: numpy random generator.
        size: None for a scalar, or an integer/shape tuple.

    Returns:
        Scalar float (``size=None``) or array of the requested shape.

    Raises:
        RuntimeError: If rejection needs more than 10^6 draws.
    """
    if sigma < 0 or bound < 0:
        raise ValueError("sigma and bound must be nonnegative")
    shape = () if size is None else (
        (size,) if np.isscalar(size) else tuple(size)
    )
    n = int(np.prod(shape)) if shape else 1
    if bound == 0 or sigma == 0:
        out = np.zeros(n)
    else:
        out = np.empty(n)
        filled = 0
        drawn = 0
        while filled < n:
            batch = max(64, 2 * (n - filled))
            if drawn + batch > _MAX_REJECTION_DRAWS:
                raise RuntimeError(
                    "rejection sampling exceeded the draw budget; "
                    "bound is too tight relative to sigma"
                )
            cand = rng.normal(0.0, sigma, size=batch)
            drawn += batch
            cand = cand[np.abs(cand) <= bound]
            take = min(cand.size, n - filled)
            out[filled : filled + take] = cand[:take]
            filled += take
    if size is None:
        return float(out[0])
    return out.reshape(shape)


def sample_disturbance_bank(
    noise: NoiseConfig, n_samples: int, horizon: int, n_d: int, rng
) -> np.ndarray:
    """Sampled disturbance sequences, shape ``(n_samples, horizon, n_d)``."""
    return sample_truncated_normal(
        noise.d_sigma, noise.d_bar, rng, size=(n_samples, horizon, n_d)
    )


def generate_offline_data(
    plant: PlantModel,
    steps: int,
    input_box,
    noise: NoiseConfig,
    rng,
    horizon: int,
    max_attempts: int = 10,
) -> TrajectoryData:
    """Open-loop experiment with uniform random admissible inputs.

    Simulates the plant from the origin with inputs drawn uniformly from
    the input box and disturbances from the configured truncated normal,
    then asserts persistency of excitation of order ``horizon + n_x + 1``
    for both the input and the disturbance sequences, regenerating with
    fresh draws up to ``max_attempts`` times.

    Args:
        plant: Ground-truth plant.
        steps: Number of recorded samples ``N``.
        input_box: Pair ``(lower, upper)`` of componentwise input bounds.
        noise: Disturbance distribution parameters.
        rng: numpy random generator.
        horizon: Prediction horizon the data must support.
        max_attempts: Regeneration budget.

    Returns:
        TrajectoryData without a disturbance bank (sample one separately).

    Raises:
        ExcitationError: If no attempt passes the excitation check.
    """
    lower, upper = (np.asarray(b, dtype=float).ravel() for b in input_box)
    if lower.shape != (plant.n_u,) or upper.shape != (plant.n_u,):
        raise ValueError(f"input_box bounds must have length {plant.n_u}")
    order = horizon + plant.n_x + 1
    last_error = None
    for attempt in range(max_attempts):
        u = rng.uniform(lower, upper, size=(steps, plant.n_u))
        d = sample_truncated_normal(
            noise.d_sigma, noise.d_bar, rng, size=(steps, plant.n_d)
        )
        x = plant.simulate(np.zeros(plant.n_x), u, d)[:steps]
        if is_persistently_exciting(u, order) and is_persistently_exciting(
            d, order
        ):
            if attempt:
                logger.info("offline data accepted on attempt %d", attempt + 1)
            return TrajectoryData(u=u, d=d, x=x)
        last_error = ExcitationError(
            f"offline data failed excitation order {order} "
            f"({max_attempts} attempts)"
        )
    raise last_error


def perturb_data(
    data: TrajectoryData, noise: NoiseConfig, rng
) -> TrajectoryData:
    """Measurement-noise corruption of states and disturbances.

    Adds truncated-normal noise (measurement-noise channel) to every
    state sample and every disturbance sample, including the disturbance
    bank when present.  Inputs are applied, not measured, and stay exact.
    """
    x = data.x + sample_truncated_normal(
        noise.mu_sigma, noise.mu_bar, rng, size=data.x.shape
    )
    d = data.d + sample_truncated_normal(
        noise.mu_sigma, noise.mu_bar, rng, size=data.d.shape
    )
    bank = data.disturbance_bank
    if bank is not None:
        bank = bank + sample_truncated_normal(
            noise.mu_sigma, noise.mu_bar, rng, size=bank.shape
        )
    return TrajectoryData(u=data.u.copy(), d=d, x=x, disturbance_bank=bank)


def _stage_cost(x, u, Q, R) -> float:
    return float(x @ Q @ x + u @ R @ u)


def run_closed_loop(
    plant: PlantModel,
    spec: ControllerSpec,
    x0,
    steps: int,
    noise: NoiseConfig,
    rng,
    problem=None,
) -> list[SimRecord]:
    """Simulate the receding-horizon controller on the true plant.

    Each step measures ``x_hat = x + mu``, solves the program, applies the
    optimal first input (or the saturated fallback when the program is
    infeasible, flagged in the record), then advances the plant with a
    sampled disturbance.  Both the true-state and the measured-state stage
    costs are logged.

    Args:
        plant: Ground-truth plant.
        spec: Synthesized controller; must carry the original state and
            input sets (violation audit and fallback law).
        x0: Initial true state.
        steps: Number of logged steps; record ``k`` holds the state
            before the ``k``-th input.
        noise: Disturbance / measurement-noise distribution.
        rng: numpy random generator (one measurement draw, then one
            disturbance draw per step).
        problem: Optional pre-assembled program for ``spec`` (assembled
            here when omitted).

    Returns:
        One :class:`SimRecord` per executed step.  On a numerical
        backend failure the run aborts and the partial log ends with a
        record whose status is the failure and whose input is NaN.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if spec.X is None:
        raise ValueError(
            "controller carries no original state set; re-synthesize"
        )
    if problem is None:
        problem = assemble(spec)
    n_x, n_u, n_d = plant.n_x, plant.n_u, plant.n_d
    Q, R = np.asarray(spec.Q, float), np.asarray(spec.R, float)
    G_x, g_x = spec.X.G, spec.X.g
    viol_tol = 1e-9 * np.maximum(1.0, np.abs(g_x))
    x = np.asarray(x0, dtype=float).ravel()
    records: list[SimRecord] = []
    for k in range(steps):
        mu = sample_truncated_normal(
            noise.mu_sigma, noise.mu_bar, rng, size=n_x
        )
        x_hat = x + mu
        sol = solve(problem, x_hat)
        if sol.status == OPTIMAL:
            u = control_law(problem, x_hat, sol)
        elif sol.status == INFEASIBLE:
            u = backup_law(spec, x_hat)
        else:
            logger.warning(
                "aborting run at step %d: %s (%s)",
                k,
                sol.status,
                sol.diagnostics,
            )
            records.append(
                SimRecord(
                    k=k,
                    x=x,
                    x_hat=x_hat,
                    u=np.full(n_u, np.nan),
                    d=np.full(n_d, np.nan),
                    stage_cost_true=math.nan,
                    stage_cost_meas=math.nan,
                    ocp_status=sol.status,
                    violation_mask=G_x @ x > g_x + viol_tol,
                    optimal_cost=math.nan,
                )
            )
            return records
        d = sample_truncated_normal(
            noise.d_sigma, noise.d_bar, rng, size=n_d
        )
        records.append(
            SimRecord(
                k=k,
                x=x,
                x_hat=x_hat,
                u=u,
                d=d,
                stage_cost_true=_stage_cost(x, u, Q, R),
                stage_cost_meas=_stage_cost(x_hat, u, Q, R),
                ocp_status=sol.status,
                violation_mask=G_x @ x > g_x + viol_tol,
                optimal_cost=sol.cost,
            )
        )
        x = plant.step(x, u, d)
    return records


@dataclass
class MonteCarloStats:
    """Aggregates over independent closed-loop runs.

    Attributes:
        runs, steps: Requested run count and per-run step count.
        total_costs_true, total_costs_meas: Per-run cost sums (length
            ``runs``; NaN for aborted runs).
        mean_cost_true, std_cost_true, median_cost_true: Statistics of
            the true-state totals over completed runs (std is the sample
            standard deviation, 0 by convention for a single run).
        mean_cost_meas, std_cost_meas, median_cost_meas: Same for the
            measured-state totals.
        infeasible_fraction: Infeasible statuses over all executed steps.
        n_infeasible, n_violations: Per-run counts (infeasible steps;
            steps whose true state violates at least one state row).
        satisfaction_rate: Per-step fraction of runs whose true state
            satisfies every state-constraint row, length ``steps``.
        final_norms: Per-run Euclidean norm of the last logged state.
        aborted_runs: Indices of runs cut short by a backend failure.
    """

    runs: int
    steps: int
    total_costs_true: np.ndarray
    total_costs_meas: np.ndarray
    mean_cost_true: float
    std_cost_true: float
    median_cost_true: float
    mean_cost_meas: float
    std_cost_meas: float
    median_cost_meas: float
    infeasible_fraction: float
    n_infeasible: np.ndarray
    n_violations: np.ndarray
    satisfaction_rate: np.ndarray
    final_norms: np.ndarray
    aborted_runs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "steps": self.steps,
            "mean_cost_true": self.mean_cost_true,
            "std_cost_true": self.std_cost_true,
            "median_cost_true": self.median_cost_true,
            "mean_cost_meas": self.mean_cost_meas,
            "std_cost_meas": self.std_cost_meas,
            "median_cost_meas": self.median_cost_meas,
            "infeasible_fraction": self.infeasible_fraction,
            "aborted_runs": list(self.aborted_runs),
        }


def monte_carlo(
    plant: PlantModel,
    spec: ControllerSpec,
    x0,
    runs: int,
    steps: int,
    noise: NoiseConfig,
    seed: int,
    out_dir=None,
    problem=None,
) -> MonteCarloStats:
    """Independent closed-loop runs with per-run RNG substreams.

    Args:
        plant, spec, x0, steps, noise: As in :func:`run_closed_loop`.
        runs: Number of independent runs (>= 1).
        seed: Base seed; run ``i`` uses the ``i``-th substream.
        out_dir: When given, writes one trajectory CSV per run plus a
            summary CSV into this directory.
        problem: Optional pre-assembled program (assembled once here
            when omitted).

    Returns:
        A :class:`MonteCarloStats`; aborted runs are listed there and
        excluded from the cost statistics.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    if problem is None:
        problem = assemble(spec)
    total_true = np.full(runs, np.nan)
    total_meas = np.full(runs, np.nan)
    n_infeasible = np.zeros(runs, dtype=int)
    n_violations = np.zeros(runs, dtype=int)
    final_norms = np.full(runs, np.nan)
    satisfied = np.zeros(steps)
    executed_steps = 0
    infeasible_steps = 0
    aborted = []
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    summary_rows = []
    for i in range(runs):
        rng = make_run_rng(seed, i)
        records = run_closed_loop(
            plant, spec, x0, steps, noise, rng, problem=problem
        )
        ok = [r for r in records if not math.isnan(r.stage_cost_true)]
        executed_steps += len(records)
        infeasible_steps += sum(r.ocp_status == INFEASIBLE for r in records)
        n_infeasible[i] = sum(r.ocp_status == INFEASIBLE for r in records)
        n_violations[i] = sum(bool(r.violation_mask.any()) for r in records)
        final_norms[i] = float(np.linalg.norm(records[-1].x))
        if len(ok) == len(records) == steps:
            total_true[i] = sum(r.stage_cost_true for r in ok)
            total_meas[i] = sum(r.stage_cost_meas for r in ok)
            for r in records:
                satisfied[r.k] += not r.violation_mask.any()
        else:
            aborted.append(i)
        if out_path is not None:
            write_run_csv(out_path / f"run_{i:04d}.csv", records)
        summary_rows.append(
            (
                i,
                total_true[i],
                total_meas[i],
                int(n_infeasible[i]),
                int(n_violations[i]),
            )
        )
    if out_path is not None:
        write_summary_csv(out_path / "summary.csv", summary_rows)
    done = ~np.isnan(total_true)
    n_done = int(done.sum())
    tt, tm = total_true[done], total_meas[done]

    def _std(v: np.ndarray) -> float:
        return float(np.std(v, ddof=1)) if v.size > 1 else 0.0

    stats = MonteCarloStats(
        runs=runs,
        steps=steps,
        total_costs_true=total_true,
        total_costs_meas=total_meas,
        mean_cost_true=float(np.mean(tt)) if n_done else math.nan,
        std_cost_true=_std(tt),
        median_cost_true=float(np.median(tt)) if n_done else math.nan,
        mean_cost_meas=float(np.mean(tm)) if n_done else math.nan,
        std_cost_meas=_std(tm),
        median_cost_meas=float(np.median(tm)) if n_done else math.nan,
        infeasible_fraction=(
            infeasible_steps / executed_steps if executed_steps else 0.0
        ),
        n_infeasible=n_infeasible,
        n_violations=n_violations,
        satisfaction_rate=satisfied / max(n_done, 1),
        final_norms=final_norms,
        aborted_runs=aborted,
    )
    logger.info(
        "monte carlo: %d/%d runs completed, mean cost %.4f (std %.4f), "
        "infeasible fraction %.4f",
        n_done,
        runs,
        stats.mean_cost_true,
        stats.std_cost_true,
        stats.infeasible_fraction,
    )
    return stats


def write_run_csv(path, records: list[SimRecord]) -> None:
    """One trajectory CSV: k, states, measurements, inputs, disturbances,
    both stage costs, program status, and the violation bitmask."""
    if not records:
        raise ValueError("no records to write")
    n_x = records[0].x.size
    n_u = records[0].u.size
    n_d = records[0].d.size
    header = (
        ["k"]
        + [f"x{i + 1}" for i in range(n_x)]
        + [f"xhat{i + 1}" for i in range(n_x)]
        + [f"u{i + 1}" for i in range(n_u)]
        + [f"d{i + 1}" for i in range(n_d)]
        + ["stage_cost_true", "stage_cost_meas", "ocp_status", "violation_mask"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            writer.writerow(
                [r.k]
                + [repr(float(v)) for v in r.x]
                + [repr(float(v)) for v in r.x_hat]
                + [repr(float(v)) for v in np.atleast_1d(r.u)]
                + [repr(float(v)) for v in np.atleast_1d(r.d)]
                + [repr(float(r.stage_cost_true)), repr(float(r.stage_cost_meas))]
                + [r.ocp_status]
                + ["".join("1" if b else "0" for b in r.violation_mask)]
            )


def write_summary_csv(path, rows) -> None:
    """Per-run summary CSV: run id, both total costs, step counts."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "run_id",
                "total_cost_true",
                "total_cost_meas",
                "n_infeasible",
                "n_violations",
            ]
        )
        for run_id, cost_t, cost_m, n_inf, n_viol in rows:
            writer.writerow(
                [run_id, repr(float(cost_t)), repr(float(cost_m)), n_inf, n_viol]
            )
