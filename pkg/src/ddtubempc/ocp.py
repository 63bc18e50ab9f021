"""Receding-horizon quadratic program over the behavioral parameter.

The online controller repeatedly solves a convex QP whose only decision
variable is the combination vector ``alpha`` of the recorded trajectory
windows.  Nominal states and inputs are linear images of ``alpha`` through
the stacked Hankel blocks, so the predicted trajectory, the tightened
constraints, and the quadratic cost all become explicit functions of
``alpha``.  This module assembles that program once per controller,
solves it for a measured state, and exposes the implicit control law plus
a saturating fallback for infeasible states.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .synthesis import ControllerSpec

logger = logging.getLogger(__name__)

__all__ = [
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
]

#: Solution statuses (plain strings so they serialize directly).
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver-failure"

#: Primal/dual residual and duality-gap tolerance of the QP backend.  The
#: tightened-constraint margins are of order 1e-2, six orders above this.
QP_TOL = 1e-8


class OCPError(Exception):
    """Raised on assembly errors or when an input law has no solution."""


@dataclass
class OCPSolution:
    """Outcome of one receding-horizon solve.

    Attributes:
        status: ``"optimal"``, ``"infeasible"`` or ``"solver-failure"``.
            Infeasibility is a value, not an exception: the closed-loop
            simulator switches to the fallback input law when it sees it.
        alpha_star: Optimal combination vector (None unless optimal).
        v_star: Pre-stabilized input sequence, shape ``(L+1, n_u)``; the
            applied input at step ``l`` is ``K z_hat[l] + v[l]``.  The
            trailing entry is pinned to zero (it affects neither the cost
            nor any constraint).
        z_hat_star: Nominal state sequence, shape ``(L+1, n_x)``.
        cost: Objective value at the minimizer; ``inf`` when not optimal.
        solve_time: Wall-clock seconds spent in the backend.
        diagnostics: Backend status detail for non-optimal outcomes.
    """

    status: str
    alpha_star: np.ndarray | None = None
    v_star: np.ndarray | None = None
    z_hat_star: np.ndarray | None = None
    cost: float = math.inf
    solve_time: float = 0.0
    diagnostics: str = ""


@dataclass
class OCPProblem:
    """Frozen quadratic program; immutable after :func:`assemble`.

    The decision vector is ``alpha`` of dimension ``N - L``.  Equality
    rows pin the disturbance window to zero, the first nominal state to
    the measured state (right-hand side updated per solve), and the
    trailing pre-stabilized input to zero.  Inequality rows apply the
    tightened state sets at steps ``1..L``, the first-step recursive-
    feasibility set at step 1, the tightened terminal set at step ``L``,
    and the tightened input sets at steps ``0..L-1``.

    Attributes:
        spec: The synthesized controller this program realizes.
        H_cost: Cost Hessian over ``alpha``: the objective is
            ``alpha @ H_cost @ alpha`` (positive semidefinite; positive
            definite on the feasible subspace when R is).
        A_eq, b_eq: Equality rows; ``b_eq`` holds zeros in the slots of
            the measured state, filled per solve.
        x0_rows: Slice of the equality rows carrying the measured state.
        A_in, b_in: Stacked inequality rows ``A_in @ alpha <= b_in``.
    """

    spec: ControllerSpec
    H_cost: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    x0_rows: slice
    A_in: np.ndarray
    b_in: np.ndarray
    _P_triu: sparse.csc_matrix = field(repr=False, default=None)
    _A_csc: sparse.csc_matrix = field(repr=False, default=None)
    _cones: list = field(repr=False, default=None)
    _settings: object = field(repr=False, default=None)

    @property
    def n_alpha(self) -> int:
        return self.H_cost.shape[0]

    @property
    def n_eq(self) -> int:
        return self.A_eq.shape[0]

    @property
    def n_in(self) -> int:
        return self.A_in.shape[0]

    def objective(self, alpha: np.ndarray) -> float:
        """Quadratic objective evaluated at an arbitrary ``alpha``."""
        alpha = np.asarray(alpha, dtype=float).ravel()
        if alpha.shape != (self.n_alpha,):
            raise OCPError(
                f"alpha must have length {self.n_alpha}, got {alpha.shape}"
            )
        return float(alpha @ self.H_cost @ alpha)


def _weight(M, name: str, n: int) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (n, n):
        raise OCPError(f"{name} must have shape ({n}, {n}), got {M.shape}")
    return M


def assemble(spec: ControllerSpec) -> OCPProblem:
    """Build the receding-horizon QP for a synthesized controller.

    Args:
        spec: Frozen controller (validated by the offline pipeline).

    Returns:
        An :class:`OCPProblem` ready for repeated solves.

    Raises:
        OCPError: On dimension inconsistencies between the controller's
            sets, weights, and the behavioral representation.
    """
    rep = spec.rep
    L, n_x, n_u, n_d = rep.L, rep.n_x, rep.n_u, rep.n_d
    n_alpha = rep.n_alpha
    if L < 1:
        raise OCPError(f"horizon must be >= 1, got {L}")
    Q = _weight(spec.Q, "Q", n_x)
    R = _weight(spec.R, "R", n_u)
    P = _weight(spec.P, "P", n_x)
    Pi = np.asarray(spec.kit.Pi, dtype=float)
    lam = float(spec.kit.lambda_alpha)
    if Pi.shape != (n_alpha, n_alpha):
        raise OCPError(
            f"projector must be ({n_alpha}, {n_alpha}), got {Pi.shape}"
        )
    if len(spec.X_hat) != L or len(spec.U_hat) < L:
        raise OCPError(
            f"need {L} state sets and >= {L} input sets, got "
            f"{len(spec.X_hat)} and {len(spec.U_hat)}"
        )

    def x_block(l: int) -> np.ndarray:
        return rep.H_x[l * n_x : (l + 1) * n_x]

    def u_block(l: int) -> np.ndarray:
        return rep.H_u[l * n_u : (l + 1) * n_u]

    # Cost: sum_{l<L} (|z_l|_Q^2 + |u_l|_R^2) + |z_L|_P^2 + lam*|Pi a|^2.
    H = np.zeros((n_alpha, n_alpha))
    for l in range(L):
        Hx, Hu = x_block(l), u_block(l)
        H += Hx.T @ Q @ Hx + Hu.T @ R @ Hu
    HxL = x_block(L)
    H += HxL.T @ P @ HxL
    if lam > 0.0:
        H += lam * (Pi.T @ Pi)
    H = 0.5 * (H + H.T)
    eig_min = float(np.linalg.eigvalsh(H)[0])
    scale = max(1.0, float(np.abs(H).max()))
    if eig_min < -1e-8 * scale:
        raise OCPError(f"cost Hessian not positive semidefinite ({eig_min:.3e})")

    # Equalities: zero disturbance window, pinned initial state (rhs per
    # solve), zero trailing pre-stabilized input (removes the one flat
    # direction of the input window).
    A_eq = np.vstack([rep.H_d, x_block(0), rep.H_v[L * n_u :]])
    b_eq = np.zeros(A_eq.shape[0])
    x0_rows = slice(n_d * (L + 1), n_d * (L + 1) + n_x)

    # Inequalities, grouped by stage.
    rows, offsets = [], []
    for l in range(1, L + 1):
        S = spec.X_hat[l - 1]
        rows.append(S.G @ x_block(l))
        offsets.append(S.g)
    rows.append(spec.F_first.G @ x_block(1))
    offsets.append(spec.F_first.g)
    rows.append(spec.X_f_hat.G @ x_block(L))
    offsets.append(spec.X_f_hat.g)
    for l in range(L):
        S = spec.U_hat[l]
        rows.append(S.G @ u_block(l))
        offsets.append(S.g)
    A_in = np.vstack(rows)
    b_in = np.concatenate(offsets)

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = QP_TOL
    settings.tol_gap_abs = QP_TOL
    settings.tol_gap_rel = QP_TOL

    problem = OCPProblem(
        spec=spec,
        H_cost=H,
        A_eq=A_eq,
        b_eq=b_eq,
        x0_rows=x0_rows,
        A_in=A_in,
        b_in=b_in,
        _P_triu=sparse.triu(sparse.csc_matrix(2.0 * H)).tocsc(),
        _A_csc=sparse.csc_matrix(np.vstack([A_eq, A_in])),
        _cones=[
            clarabel.ZeroConeT(A_eq.shape[0]),
            clarabel.NonnegativeConeT(A_in.shape[0]),
        ],
        _settings=settings,
    )
    logger.info(
        "assembled QP: %d variables, %d equality rows, %d inequality rows",
        problem.n_alpha,
        problem.n_eq,
        problem.n_in,
    )
    return problem


def solve(
    problem: OCPProblem,
    x_hat,
    warm_start: np.ndarray | None = None,
) -> OCPSolution:
    """Solve the receding-horizon QP for a measured state.

    Args:
        problem: Assembled program.
        x_hat: Measured state, length ``n_x``.
        warm_start: Candidate combination vector.  Accepted for API
            compatibility; the interior-point backend does not exploit
            it, so passing it never changes the returned minimizer.

    Returns:
        An :class:`OCPSolution`.  ``status`` is ``"infeasible"`` when a
        primal infeasibility certificate is found and
        ``"solver-failure"`` (with diagnostics) on numerical breakdown;
        neither raises.
    """
    del warm_start  # interior-point backend; see docstring
    rep = problem.spec.rep
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    if x_hat.shape != (rep.n_x,) or not np.all(np.isfinite(x_hat)):
        raise OCPError(f"x_hat must be a finite vector of length {rep.n_x}")

    b = np.concatenate([problem.b_eq, problem.b_in])
    b[problem.x0_rows] = x_hat

    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(
        problem._P_triu,
        np.zeros(problem.n_alpha),
        problem._A_csc,
        b,
        problem._cones,
        problem._settings,
    )
    result = solver.solve()
    elapsed = time.perf_counter() - t0

    status = result.status
    if status in (
        clarabel.SolverStatus.Solved,
        clarabel.SolverStatus.AlmostSolved,
    ):
        alpha = np.asarray(result.x, dtype=float)
        v = (rep.H_v @ alpha).reshape(rep.L + 1, rep.n_u)
        z = rep.state_blocks(alpha)
        note = "" if status == clarabel.SolverStatus.Solved else str(status)
        return OCPSolution(
            status=OPTIMAL,
            alpha_star=alpha,
            v_star=v,
            z_hat_star=z,
            cost=problem.objective(alpha),
            solve_time=elapsed,
            diagnostics=note,
        )
    if status in (
        clarabel.SolverStatus.PrimalInfeasible,
        clarabel.SolverStatus.AlmostPrimalInfeasible,
    ):
        return OCPSolution(
            status=INFEASIBLE, solve_time=elapsed, diagnostics=str(status)
        )
    logger.warning("QP backend failed: %s", status)
    return OCPSolution(
        status=SOLVER_FAILURE, solve_time=elapsed, diagnostics=str(status)
    )


def control_law(
    problem: OCPProblem,
    x_hat,
    solution: OCPSolution | None = None,
) -> np.ndarray:
    """First applied input ``u = K x_hat + v*_0`` at the measured state.

    Args:
        problem: Assembled program.
        x_hat: Measured state.
        solution: A solution previously obtained for this exact state;
            when omitted, the program is solved here.

    Returns:
        The input vector, inside the original input set by construction
        of the step-0 tightened input constraint.

    Raises:
        OCPError: When the program is infeasible at ``x_hat`` or the
            backend failed (callers needing the fallback input should
            call :func:`solve` themselves and branch on the status).
    """
    if solution is None:
        solution = solve(problem, x_hat)
    if solution.status != OPTIMAL:
        raise OCPError(
            f"no optimal solution at the queried state: {solution.status}"
            + (f" ({solution.diagnostics})" if solution.diagnostics else "")
        )
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    return problem.spec.K @ x_hat + solution.v_star[0]


def candidate_shift(
    problem: OCPProblem, previous: OCPSolution
) -> np.ndarray:
    """Shifted warm-start candidate from the previous optimal solution.

    The previous optimal input sequence is advanced one step and extended
    with the terminal feedback: the candidate applies
    ``(u*_1, ..., u*_{L-1}, K z*_L, K z_next)`` from initial state
    ``z*_1``, where ``z_next`` continues the trajectory one step under
    the terminal feedback.  The least-norm combination vector that
    realizes this window is returned.  It serves as a solver warm start
    only — never as a certified feasibility proof at runtime.

    Args:
        problem: Assembled program.
        previous: Optimal solution of the preceding step.

    Returns:
        Candidate combination vector, length ``n_alpha``.

    Raises:
        OCPError: If ``previous`` is not optimal.
    """
    if previous.status != OPTIMAL:
        raise OCPError("candidate shift requires an optimal previous solution")
    rep = problem.spec.rep
    K = problem.spec.K
    L, n_u, n_d, n_x = rep.L, rep.n_u, rep.n_d, rep.n_x
    z = previous.z_hat_star
    u_prev = z @ K.T + previous.v_star  # u*_l = K z*_l + v*_l
    u_term = K @ z[L]
    z_next = rep.one_step_map() @ np.concatenate([z[L], u_term])
    u_window = np.vstack([u_prev[1:L], u_term, K @ z_next])
    rhs = np.concatenate(
        [u_window.ravel(), np.zeros(n_d * (L + 1)), z[1]]
    )
    return rep._M_open_pinv @ rhs


def backup_law(spec: ControllerSpec, x_hat) -> np.ndarray:
    """Saturated state feedback for states where the program is infeasible.

    Scales ``K x_hat`` back along the ray from the origin until it lies
    inside the original input set, preserving the input direction.

    Args:
        spec: Synthesized controller (must carry the untightened input
            set; the step-0 tightened set is used as a fallback).
        x_hat: Measured state.

    Returns:
        The clamped input vector.
    """
    x_hat = np.asarray(x_hat, dtype=float).ravel()
    u = spec.K @ x_hat
    U = spec.U if spec.U is not None else spec.U_hat[0]
    dots = U.G @ u
    positive = dots > 0.0
    if not np.any(positive):
        return u
    t = float(np.min(U.g[positive] / dots[positive]))
    return u * min(1.0, max(0.0, t))
