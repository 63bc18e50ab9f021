"""Offline controller synthesis from recorded data.

Pipeline stages (all driven purely by recorded trajectories, never by
plant matrices):

1. feedback gain from a semidefinite program over nominal data,
2. disturbance error samples through the behavioral representation,
3. scenario-based probabilistic constraint tightening with sample
   discarding,
4. robust tightening by measurement-noise tubes,
5. quadratic cost-to-go for the terminal penalty,
6. extended disturbance support for the measured-state closed loop,
7. robust positive invariant terminal set,
8. feasible set of the receding-horizon program, its robust control
   invariant subset, and the first-step constraint set.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .behavior import BehaviorRep, RegularizationKit, TrajectoryData
from .polytope import (
    HPolytope,
    PolytopeError,
    affine_image,
    convex_hull_union,
    pontryagin_diff,
    project,
    set_equal,
)

logger = logging.getLogger(__name__)

__all__ = [
    "SynthesisError",
    "ConfigurationError",
    "TighteningParams",
    "SynthesisConfig",
    "SynthesisReport",
    "ControllerSpec",
    "sampling_feasible_range",
    "choose_discard_count",
    "lqr_gain_from_data",
    "cost_to_go_from_data",
    "generate_nominal_data",
    "tighten_state_constraints",
    "tighten_input_constraints",
    "noise_tube_sets",
    "robustify_sets",
    "closed_loop_disturbance_set",
    "terminal_set",
    "extended_disturbance_set",
    "feasible_set_CL",
    "robust_invariant_subset",
    "first_step_set",
    "synthesize",
]

#: Two-sided set-equality tolerance used by the invariance recursions.
SET_TOL = 1e-8

#: Iteration cap shared by the invariance recursions.
RECURSION_CAP = 100


class SynthesisError(Exception):
    """A synthesis stage failed; ``stage`` names the failing step."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ConfigurationError(ValueError):
    """User-supplied parameters admit no valid synthesis."""


# ----------------------------------------------------------------------
# sample-discarding parameters
# ----------------------------------------------------------------------
def sampling_feasible_range(
    N_S: int, p_min: float, p_max: float, beta: float
) -> tuple[float, float]:
    """Real interval of admissible discard counts ``r``.

    The lower end guarantees (with confidence ``1 - beta``) that the
    tightened constraint is not conservative beyond ``p_max``; the upper
    end guarantees satisfaction probability at least ``p_min``.
    """
    if not (0 < p_min <= p_max < 1):
        raise ConfigurationError(
            f"need 0 < p_min <= p_max < 1, got [{p_min}, {p_max}]"
        )
    if not (0 < beta < 1):
        raise ConfigurationError(f"beta must lie in (0, 1), got {beta}")
    if N_S < 1:
        raise ConfigurationError(f"N_S must be >= 1, got {N_S}")
    lo = (1 - p_max) * N_S - 1 + math.sqrt(
        3 * (1 - p_max) * N_S * math.log(2 / beta)
    )
    hi = (1 - p_min) * N_S - math.sqrt(
        2 * (1 - p_min) * N_S * math.log(1 / beta)
    )
    return lo, hi


def choose_discard_count(
    N_S: int, p_min: float, p_max: float, beta: float
) -> int:
    """Largest integer discard count satisfying both sampling bounds.

    Raises:
        ConfigurationError: If no integer lies in the feasible interval
            (advises a larger sample bank or a wider risk interval).
    """
    lo, hi = sampling_feasible_range(N_S, p_min, p_max, beta)
    r = math.floor(hi)
    if r < lo or r < 0:
        raise ConfigurationError(
            f"no integer discard count in [{lo:.3f}, {hi:.3f}]; increase the "
            "sample count or widen [p_min, p_max]"
        )
    return r


@dataclass
class TighteningParams:
    """Scenario parameters for the probabilistic tightening.

    Attributes:
        p_min: Lower end of the admissible satisfaction-probability range.
        p_max: Upper end of that range.
        beta: Complement of the confidence level.
        N_S: Number of disturbance sample sequences.
        r: Discard count.
    """

    p_min: float
    p_max: float
    beta: float
    N_S: int
    r: int

    def __post_init__(self):
        lo, hi = sampling_feasible_range(self.N_S, self.p_min, self.p_max, self.beta)
        if not (lo <= self.r <= hi):
            raise ConfigurationError(
                f"discard count r={self.r} outside the admissible interval "
                f"[{lo:.3f}, {hi:.3f}]"
            )
        if (1 - self.p_min) * self.N_S < self.r:
            raise ConfigurationError(
                "discard count exceeds (1 - p_min) * N_S"
            )


# ----------------------------------------------------------------------
# gain and cost-to-go from data
# ----------------------------------------------------------------------
def _solve_gain_sdp(U, X, X_plus, Q, R):
    import cvxpy as cp

    T = U.shape[1]
    n_x = X.shape[0]
    R_half = sla.sqrtm(R).real
    W = cp.Variable((T, n_x))
    V = cp.Variable((R.shape[0], R.shape[0]), symmetric=True)
    XW = X @ W
    RUW = R_half @ (U @ W)
    lmi_cost = cp.bmat([[V, RUW], [RUW.T, XW]])
    lmi_stab = cp.bmat([[XW - np.eye(n_x), X_plus @ W], [(X_plus @ W).T, XW]])
    problem = cp.Problem(
        cp.Minimize(cp.trace(Q @ XW) + cp.trace(V)),
        [XW == XW.T, lmi_cost >> 0, lmi_stab >> 0],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem.solve(
            solver=cp.CLARABEL,
            tol_gap_abs=1e-12,
            tol_gap_rel=1e-12,
            tol_feas=1e-12,
            tol_ktratio=1e-7,
            max_iter=200,
        )
    if problem.status not in ("optimal", "optimal_inaccurate") or W.value is None:
        raise SynthesisError(
            "gain", f"gain program did not solve (status: {problem.status})"
        )
    return W.value


def lqr_gain_from_data(U, X, X_plus, Q, R) -> np.ndarray:
    """Optimal state-feedback gain from nominal data matrices.

    Solves the two-LMI semidefinite program whose optimizer ``W`` yields
    ``K = U W (X W)^{-1}``, then certifies the result: the data-consistent
    closed loop must be Schur stable.

    Args:
        U: Inputs, shape ``(n_u, T)``.
        X: States, shape ``(n_x, T)``.
        X_plus: Successor states, shape ``(n_x, T)``.
        Q: State weight, symmetric positive definite.
        R: Input weight, symmetric positive definite.

    Returns:
        Gain ``K`` of shape ``(n_u, n_x)`` for the law ``u = K x``.

    Raises:
        SynthesisError: If the program fails, ``X W`` is singular, or the
            resulting closed loop is not Schur stable.
    """
    U, X, X_plus = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (U, X, X_plus))
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n_u, n_x = U.shape[0], X.shape[0]
    if np.linalg.matrix_rank(np.vstack([U, X])) < n_u + n_x:
        raise SynthesisError(
            "gain", "nominal data matrices [U; X] are rank deficient"
        )
    Wv = _solve_gain_sdp(U, X, X_plus, Q, R)
    XW = X @ Wv
    if np.linalg.cond(XW) > 1e10:
        raise SynthesisError("gain", "X W is numerically singular")
    K = U @ Wv @ np.linalg.inv(XW)
    A_cl = _closed_loop_from_data(K, U, X, X_plus)
    rho = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
    if not np.all(np.isfinite(K)) or rho >= 1.0:
        raise SynthesisError(
            "gain", f"closed loop not Schur stable (spectral radius {rho:.6f})"
        )
    return K


def _closed_loop_from_data(K, U, X, X_plus) -> np.ndarray:
    """Data-consistent closed-loop matrix ``X_plus @ W_tilde``."""
    n_x = X.shape[0]
    stacked = np.vstack([U, X])
    target = np.vstack([K, np.eye(n_x)])
    W_tilde, *_ = np.linalg.lstsq(stacked, target, rcond=1e-10)
    resid = np.linalg.norm(stacked @ W_tilde - target)
    if resid > 1e-6:
        raise SynthesisError(
            "cost_to_go",
            f"no W with U W = K and X W = I (residual {resid:.2e}); "
            "data are not exciting enough",
        )
    return X_plus @ W_tilde


def _solve_cost_sdp(A_cl, Q_P):
    import cvxpy as cp

    n_x = A_cl.shape[0]
    P = cp.Variable((n_x, n_x), symmetric=True)
    problem = cp.Problem(
        cp.Minimize(cp.trace(P)),
        [A_cl.T @ P @ A_cl - P + Q_P << 0, P >> 0],
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        problem.solve(
            solver=cp.CLARABEL,
            tol_gap_abs=1e-11,
            tol_gap_rel=1e-11,
            tol_feas=1e-11,
            tol_ktratio=1e-7,
            max_iter=200,
        )
    if problem.status not in ("optimal", "optimal_inaccurate") or P.value is None:
        raise SynthesisError(
            "cost_to_go",
            f"cost-to-go program did not solve (status: {problem.status})",
        )
    return P.value


def cost_to_go_from_data(K, U, X, X_plus, Q, R) -> np.ndarray:
    """Quadratic cost-to-go of the closed loop, from nominal data.

    Two independent routes must agree within ``1e-5`` relative Frobenius
    norm: the trace-minimizing semidefinite program, and the direct
    solution of the closed-loop Lyapunov equation evaluated through the
    data (the program's optimum).  The direct solution is returned.

    Raises:
        SynthesisError: If no consistent positive-definite solution
            exists or the two routes disagree.
    """
    U, X, X_plus = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (U, X, X_plus))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Q = np.asarray(Q, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    A_cl = _closed_loop_from_data(K, U, X, X_plus)
    Q_P = Q + K.T @ R @ K
    P_direct = sla.solve_discrete_lyapunov(A_cl.T, Q_P)
    P_direct = 0.5 * (P_direct + P_direct.T)
    P_sdp = _solve_cost_sdp(A_cl, Q_P)
    rel = np.linalg.norm(P_sdp - P_direct) / max(1.0, np.linalg.norm(P_direct))
    if rel > 1e-5:
        raise SynthesisError(
            "cost_to_go",
            f"the two cost-to-go routes disagree (relative error {rel:.2e})",
        )
    eigvals = np.linalg.eigvalsh(P_direct)
    if eigvals.min() <= 0:
        raise SynthesisError("cost_to_go", "cost-to-go matrix is not positive definite")
    resid = A_cl.T @ P_direct @ A_cl - P_direct + Q_P
    if np.max(np.linalg.eigvalsh(0.5 * (resid + resid.T))) > 1e-6:
        raise SynthesisError(
            "cost_to_go", "Lyapunov residual is not negative semidefinite"
        )
    return P_direct


def generate_nominal_data(
    rep: BehaviorRep, n_samples: int, input_box, rng
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disturbance-free data matrices generated through the representation.

    Chains nominal prediction windows (random admissible inputs, zero
    disturbance, each window pinned at the previous end state) until
    ``n_samples`` state transitions are collected.

    Returns:
        ``(U, X, X_plus)`` with shapes ``(n_u, T)``, ``(n_x, T)``,
        ``(n_x, T)``.
    """
    lower, upper = (np.asarray(b, dtype=float).ravel() for b in input_box)
    n_u, n_x, L = rep.n_u, rep.n_x, rep.L
    U_cols: list[np.ndarray] = []
    X_cols: list[np.ndarray] = []
    Xp_cols: list[np.ndarray] = []
    x = np.zeros(n_x)
    while len(U_cols) < n_samples:
        v = rng.uniform(lower, upper, size=(L + 1, n_u))
        z = rep.nominal_trajectory(x, v)
        u = z @ rep.K.T + v
        for l in range(L):
            U_cols.append(u[l])
            X_cols.append(z[l])
            Xp_cols.append(z[l + 1])
            if len(U_cols) == n_samples:
                break
        x = z[L]
    return (
        np.array(U_cols).T,
        np.array(X_cols).T,
        np.array(Xp_cols).T,
    )


# ----------------------------------------------------------------------
# probabilistic tightening
# ----------------------------------------------------------------------
def _discard_quantile(values: np.ndarray, r: int) -> np.ndarray:
    """Per-column value with exactly ``r`` strictly larger samples discarded.

    ``values`` has shape ``(N_S, n_rows)``; returns the ``(1 - r/N_S)``
    quantile per column under the convention v_(N_S - r) of the sorted
    samples; ``r = 0`` gives the maximum.
    """
    N_S = values.shape[0]
    if not (0 <= r < N_S):
        raise ConfigurationError(f"need 0 <= r < N_S, got r={r}, N_S={N_S}")
    idx = N_S - r - 1
    return np.partition(values, idx, axis=0)[idx]


def tighten_state_constraints(
    rep: BehaviorRep,
    bank: np.ndarray,
    X: HPolytope,
    r: int,
    margin: float = 0.0,
    cumulative: bool = False,
) -> tuple[list[np.ndarray], list[HPolytope]]:
    """Probabilistically tightened state sets for steps ``1 .. L``.

    For every constraint row i and step l, the offset becomes
    ``g_i - q_{i,l} - margin`` where ``q_{i,l}`` is the discard quantile
    of the sampled error responses ``G_x e_l`` over the disturbance bank.
    With ``cumulative`` the quantiles are replaced by their running
    maximum over l, which makes the tightened sets nested.

    Returns:
        ``(etas, sets)``: tightened offsets and sets, index 0 ↔ step 1.

    Raises:
        SynthesisError: If a tightened set becomes empty (names the step).
    """
    errors = rep.error_from_disturbance_batch(bank)
    etas: list[np.ndarray] = []
    sets: list[HPolytope] = []
    q_running = None
    for l in range(1, rep.L + 1):
        vals = errors[:, l, :] @ X.G.T  # (N_S, rows)
        q = _discard_quantile(vals, r)
        if cumulative:
            q_running = q if q_running is None else np.maximum(q_running, q)
            q = q_running
        eta = X.g - q - margin
        P = HPolytope(X.G.copy(), eta)
        if P.is_empty():
            raise SynthesisError(
                "probabilistic_tightening",
                f"state set empty after tightening at step {l}",
            )
        etas.append(eta)
        sets.append(P)
    return etas, sets


def tighten_input_constraints(
    rep: BehaviorRep,
    bank: np.ndarray,
    U: HPolytope,
    K: np.ndarray,
    r: int,
    margin: float = 0.0,
    cumulative: bool = False,
) -> tuple[list[np.ndarray], list[HPolytope]]:
    """Probabilistically tightened input sets for steps ``0 .. L``.

    The sampled quantity is ``G_u K e_l``; the step-0 error is zero, so
    the first set is the untightened input set.

    Returns:
        ``(sigmas, sets)`` with ``L + 1`` entries.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    errors = rep.error_from_disturbance_batch(bank)
    sigmas: list[np.ndarray] = [U.g.copy()]
    sets: list[HPolytope] = [HPolytope(U.G.copy(), U.g.copy())]
    GK = U.G @ K
    q_running = None
    for l in range(1, rep.L + 1):
        vals = errors[:, l, :] @ GK.T
        q = _discard_quantile(vals, r)
        if cumulative:
            q_running = q if q_running is None else np.maximum(q_running, q)
            q = q_running
        sigma = U.g - q - margin
        P = HPolytope(U.G.copy(), sigma)
        if P.is_empty():
            raise SynthesisError(
                "probabilistic_tightening",
                f"input set empty after tightening at step {l}",
            )
        sigmas.append(sigma)
        sets.append(P)
    return sigmas, sets


# ----------------------------------------------------------------------
# measurement-noise tubes and robust tightening
# ----------------------------------------------------------------------
def noise_tube_sets(rep: BehaviorRep, Xi: HPolytope) -> list[HPolytope]:
    """Measurement-noise tubes: images of ``Xi`` under the l-step free map.

    The measured and true nominal predictions share the realized input
    sequence, so their difference evolves with the open-loop (zero input,
    zero disturbance) transition realized behaviorally; the tube at step
    l is that l-step map applied to the noise support set.

    Returns:
        List ``[E_0 .. E_L]`` with ``E_0 = Xi``.
    """
    maps = rep.zero_input_response_maps()
    tubes = [HPolytope(Xi.G.copy(), Xi.g.copy())]
    for l in range(1, rep.L + 1):
        tubes.append(affine_image(Xi, maps[l]))
    return tubes


def robustify_sets(
    X_list: list[HPolytope],
    U_list: list[HPolytope],
    tubes: list[HPolytope],
    K: np.ndarray,
    cumulative: bool = False,
) -> tuple[list[HPolytope], list[HPolytope]]:
    """Subtract noise tubes from the probabilistically tightened sets.

    ``X_hat_l = X_l ⊖ E_l`` for ``l = 1..L`` (with the convex hull of all
    tubes up to l when ``cumulative``), and ``U_hat_l = U_l ⊖ K E_l`` for
    ``l = 0..L``.

    Raises:
        SynthesisError: Naming the stage when a result is empty.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    X_hat: list[HPolytope] = []
    for l, X_l in enumerate(X_list, start=1):
        if cumulative:
            tube = convex_hull_union(tubes[1 : l + 1])
        else:
            tube = tubes[l]
        P = pontryagin_diff(X_l, tube)
        if P.is_empty():
            raise SynthesisError(
                "robust_tightening", f"state set empty after tube subtraction at step {l}"
            )
        X_hat.append(P.remove_redundancy())
    U_hat: list[HPolytope] = []
    for l, U_l in enumerate(U_list):
        P = pontryagin_diff(U_l, affine_image(tubes[l], K))
        if P.is_empty():
            raise SynthesisError(
                "robust_tightening", f"input set empty after tube subtraction at step {l}"
            )
        U_hat.append(P.remove_redundancy())
    return X_hat, U_hat


# ----------------------------------------------------------------------
# extended disturbance support and terminal set
# ----------------------------------------------------------------------
def extended_disturbance_set(
    rep: BehaviorRep, D: HPolytope, Xi: HPolytope
) -> HPolytope:
    """Disturbance support of the measured-state closed loop.

    Combines the one-step disturbance image (realized behaviorally),
    the negated one-step noise tube, and the noise set itself:
    ``W_ext = E_d1 ⊕ (-A Xi) ⊕ Xi``.
    """
    E_d1 = affine_image(D, rep.disturbance_entry_map())
    A_map = rep.zero_input_response_maps()[1]
    neg_A_Xi = affine_image(Xi, -A_map)
    V1 = E_d1.vertices()
    V2 = neg_A_Xi.vertices()
    V3 = Xi.vertices()
    V = (
        V1[:, None, None, :] + V2[None, :, None, :] + V3[None, None, :, :]
    ).reshape(-1, rep.n_x)
    from .polytope import vertex_hull

    return vertex_hull(V).remove_redundancy()


def _rpi_recursion(
    seed: HPolytope, A_cl: np.ndarray, W: HPolytope, stage: str
) -> tuple[HPolytope, int]:
    """Backward intersection recursion for a robust positive invariant set.

    Iterates ``Omega ∩ {x : A_cl x ∈ Omega ⊖ W}`` until two-sided set
    equality or the iteration cap.
    """
    Omega = seed.remove_redundancy()
    for it in range(1, RECURSION_CAP + 1):
        shrunk = pontryagin_diff(Omega, W)
        if shrunk.is_empty():
            raise SynthesisError(
                stage, "disturbance too large: invariant recursion emptied the set"
            )
        pre = HPolytope(shrunk.G @ A_cl, shrunk.g)
        Omega_next = Omega.intersect(pre).remove_redundancy()
        if set_equal(Omega, Omega_next, SET_TOL):
            return Omega_next, it
        Omega = Omega_next
    raise SynthesisError(
        stage, f"invariant recursion did not converge in {RECURSION_CAP} iterations"
    )


def closed_loop_disturbance_set(
    rep: BehaviorRep, E_d1: HPolytope, Xi: HPolytope
) -> HPolytope:
    """Disturbance support of the true state under measured-state feedback.

    With ``u = K x_hat = K (x + noise)`` the true state evolves as
    ``x+ = (A + B K) x + B K noise + (disturbance image)``, so the
    relevant support is ``E_d1 ⊕ B K Xi``.
    """
    M = rep.one_step_map()
    BK = M[:, rep.n_x :] @ rep.K
    V1 = E_d1.vertices()
    V2 = affine_image(Xi, BK).vertices()
    V = (V1[:, None, :] + V2[None, :, :]).reshape(-1, rep.n_x)
    from .polytope import vertex_hull

    return vertex_hull(V).remove_redundancy()


def terminal_set(
    rep: BehaviorRep,
    X_hat_1: HPolytope,
    U_hat_0: HPolytope,
    K: np.ndarray,
    tubes: list[HPolytope],
    E_d1: HPolytope,
    bank: np.ndarray,
    r: int,
    state_box: HPolytope,
    margin: float = 0.0,
) -> tuple[HPolytope, HPolytope, HPolytope, int]:
    """Terminal sets: invariant, probabilistically and robustly tightened.

    Builds the one-step feasibility region
    ``{x : (A + B K) x ∈ X_hat_1, K x ∈ U_hat_0}``, intersects it with
    the state-constraint set and with a 10x-inflated copy of the state
    box (which keeps vertex enumeration bounded even for unbounded
    constraint rows), runs the invariant recursion for the true state
    under measured-state feedback (disturbance support
    ``E_d1 ⊕ B K Xi``), then applies the discard-quantile tightening on
    the terminal rows and subtracts the step-L noise tube.

    Carrying the state-constraint rows through the recursion means they
    are tightened by exactly the same step-L quantile and tube as the
    last stage set, so the tightened terminal set is contained in the
    last tightened state set by construction.

    Returns:
        ``(X_f, X_f_prob, X_f_hat, n_iterations)``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    M = rep.one_step_map()
    n_x = rep.n_x
    A_mat, B_mat = M[:, :n_x], M[:, n_x:]
    A_cl = A_mat + B_mat @ K
    G = np.vstack([X_hat_1.G @ A_cl, U_hat_0.G @ K])
    g = np.concatenate([X_hat_1.g, U_hat_0.g])
    lo, hi = state_box.bounding_box()
    big_box = HPolytope.box(10.0 * lo, 10.0 * hi)
    seed = HPolytope(G, g).intersect(big_box).intersect(state_box)
    W_cl = closed_loop_disturbance_set(rep, E_d1, tubes[0])
    X_f, n_iter = _rpi_recursion(seed, A_cl, W_cl, "terminal_set")
    # re-append the state rows: redundancy removal inside the recursion
    # may have dropped them, and the tightening below must apply to them
    # verbatim (the set itself is unchanged since X_f lies in the box)
    X_f = HPolytope(
        np.vstack([X_f.G, state_box.G]),
        np.concatenate([X_f.g, state_box.g]),
    )
    errors = rep.error_from_disturbance_batch(bank)
    vals = errors[:, rep.L, :] @ X_f.G.T
    eta_f = X_f.g - _discard_quantile(vals, r) - margin
    X_f_prob = HPolytope(X_f.G.copy(), eta_f)
    if X_f_prob.is_empty():
        raise SynthesisError(
            "terminal_set", "terminal set empty after probabilistic tightening"
        )
    X_f_hat = pontryagin_diff(X_f_prob, tubes[rep.L])
    if X_f_hat.is_empty():
        raise SynthesisError(
            "terminal_set", "terminal set empty after tube subtraction"
        )
    return X_f, X_f_prob, X_f_hat.remove_redundancy(), n_iter


# ----------------------------------------------------------------------
# feasible set, invariant subset, first-step set
# ----------------------------------------------------------------------
def _theta_maps(rep: BehaviorRep) -> tuple[np.ndarray, np.ndarray]:
    """Linear maps from ``theta = (x0, v_0..v_L)`` to state/input windows.

    Exactness of the pinned nominal representation makes the whole
    predicted window an explicit linear function of ``theta``, which
    eliminates the equality rows of the feasible-set polytope exactly.
    """
    L, n_u, n_d, n_x = rep.L, rep.n_u, rep.n_d, rep.n_x
    n_v = n_u * (L + 1)
    n_th = n_x + n_v
    E = np.zeros((rep._M_window.shape[0], n_th))
    E[:n_v, n_x:] = np.eye(n_v)
    E[n_v + n_d * (L + 1) :, :n_x] = np.eye(n_x)
    A_alpha = rep._M_window_pinv @ E
    Z_map = rep.H_x @ A_alpha
    U_map = rep.H_u @ A_alpha
    return Z_map, U_map


def feasible_set_CL(
    rep: BehaviorRep,
    X_hat: list[HPolytope],
    U_hat: list[HPolytope],
    X_f_hat: HPolytope,
) -> HPolytope:
    """Feasible initial states of the receding-horizon program.

    Assembles every constraint row of the program as a function of
    ``theta = (x0, v-sequence)`` and eliminates the input coordinates
    exactly, leaving the shadow on the ``x0`` coordinates.

    Raises:
        SynthesisError: If the projection resource cap is exhausted.
    """
    L, n_u, n_x = rep.L, rep.n_u, rep.n_x
    Z_map, U_map = _theta_maps(rep)
    rows = []
    offs = []
    for l in range(1, L + 1):
        blk = Z_map[l * n_x : (l + 1) * n_x]
        rows.append(X_hat[l - 1].G @ blk)
        offs.append(X_hat[l - 1].g)
    rows.append(X_f_hat.G @ Z_map[L * n_x :])
    offs.append(X_f_hat.g)
    for l in range(L):
        blk = U_map[l * n_u : (l + 1) * n_u]
        rows.append(U_hat[l].G @ blk)
        offs.append(U_hat[l].g)
    theta_poly = HPolytope(np.vstack(rows), np.concatenate(offs))
    try:
        return project(theta_poly, range(n_x))
    except PolytopeError as exc:
        raise SynthesisError(
            "feasible_sets",
            f"projection of the feasible set failed ({exc}); a "
            "support-function outer approximation would be cheaper but "
            "would void the recursive feasibility guarantee, so it is "
            "not applied automatically",
        ) from exc


def robust_invariant_subset(
    rep: BehaviorRep,
    C_L: HPolytope,
    U_hat_0: HPolytope,
    W_ext: HPolytope,
) -> tuple[HPolytope, int]:
    """Robust control invariant subset of the feasible set.

    Iterates
    ``C^{i+1} = {x ∈ C^i | ∃ u ∈ U_hat_0 : M (x; u) ∈ C^i ⊖ W_ext}``
    through the data-driven one-step map and an (x, u)-space projection,
    until two-sided set equality at tolerance ``1e-8`` or the cap.

    Each projection is seeded with the current iterate (a guaranteed
    outer approximation of the next one, because the lifted system
    contains the rows ``x ∈ C^i``), so converged iterations cost little.
    Convergence is decided by vertex containment: ``C^{i+1} ⊆ C^i``
    holds by construction, and equality follows once every vertex of
    ``C^i`` satisfies all rows of ``C^{i+1}``.

    Returns:
        ``(C_L_inf, n_iterations)``.
    """
    M = rep.one_step_map()
    n_x, n_u = rep.n_x, rep.n_u
    A_mat, B_mat = M[:, :n_x], M[:, n_x:]
    C = C_L.remove_redundancy()
    for it in range(1, RECURSION_CAP + 1):
        shrunk = pontryagin_diff(C, W_ext)
        if shrunk.is_empty():
            raise SynthesisError(
                "feasible_sets",
                "disturbance too large for the horizon/constraints: "
                "invariant recursion emptied the feasible set",
            )
        G_xu = np.vstack(
            [
                np.hstack([C.G, np.zeros((C.n_rows, n_u))]),
                np.hstack([np.zeros((U_hat_0.n_rows, n_x)), U_hat_0.G]),
                np.hstack([shrunk.G @ A_mat, shrunk.G @ B_mat]),
            ]
        )
        g_xu = np.concatenate([C.g, U_hat_0.g, shrunk.g])
        try:
            C_next = project(
                HPolytope(G_xu, g_xu), range(n_x), initial_outer=C
            )
        except PolytopeError as exc:
            raise SynthesisError(
                "feasible_sets", f"invariant-subset projection failed ({exc})"
            ) from exc
        V = C.vertices()
        slack = SET_TOL * np.maximum(1.0, np.abs(C_next.g))
        if np.all(C_next.G @ V.T <= (C_next.g + slack)[:, None]):
            return C_next, it
        C = C_next
    raise SynthesisError(
        "feasible_sets",
        f"invariant recursion did not converge in {RECURSION_CAP} iterations",
    )


def first_step_set(C_L_inf: HPolytope, W_ext: HPolytope) -> HPolytope:
    """First-step constraint set ``C_L_inf ⊖ W_ext``.

    Raises:
        SynthesisError: If the difference is empty.
    """
    F = pontryagin_diff(C_L_inf, W_ext)
    if F.is_empty():
        raise SynthesisError(
            "feasible_sets", "first-step set is empty (disturbance too large)"
        )
    return F.remove_redundancy()


# ----------------------------------------------------------------------
# configuration, report, frozen controller
# ----------------------------------------------------------------------
@dataclass
class SynthesisConfig:
    """Everything the offline pipeline needs besides the data.

    Attributes:
        horizon: Prediction horizon ``L``.
        Q: State stage-cost weight.
        R: Input stage-cost weight.
        state_set: State constraint polytope.
        input_set: Input constraint polytope.
        disturbance_set: Disturbance support polytope.
        noise_set: Measurement-noise support polytope.
        p_min, p_max: Admissible satisfaction-probability range.
        beta: Complement of the scenario confidence level.
        lambda_alpha: Weight of the consistency regularizer in the
            online program (0 for exact data).
        cumulative_tubes: Use nested (running) tightening and cumulative
            tube hulls.
        noise_margin: Extra offset subtracted from every tightened row.
        exact_data: Strict consistency checking (True for exact data).
        lqr_samples: Number of nominal transitions generated for the
            gain/cost programs.
        seed: Seed for the nominal-data excitation.
    """

    horizon: int
    Q: np.ndarray
    R: np.ndarray
    state_set: HPolytope
    input_set: HPolytope
    disturbance_set: HPolytope
    noise_set: HPolytope
    p_min: float = 0.88
    p_max: float = 0.92
    beta: float = 0.01
    lambda_alpha: float = 0.0
    cumulative_tubes: bool = False
    noise_margin: float = 0.0
    exact_data: bool = True
    lqr_samples: int = 20
    seed: int = 0

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        for name in ("Q", "R"):
            M = getattr(self, name)
            if np.max(np.abs(M - M.T)) > 1e-12 or np.min(np.linalg.eigvalsh(M)) <= 0:
                raise ConfigurationError(f"{name} must be symmetric positive definite")
        if self.lambda_alpha < 0 or self.noise_margin < 0:
            raise ConfigurationError("lambda_alpha and noise_margin must be >= 0")
        if self.lqr_samples < 1:
            raise ConfigurationError("lqr_samples must be >= 1")


@dataclass
class SynthesisReport:
    """Diagnostics from one synthesis run."""

    discard_count: int = 0
    stage_seconds: dict = field(default_factory=dict)
    iteration_counts: dict = field(default_factory=dict)
    chebyshev_radii: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "discard_count": self.discard_count,
            "stage_seconds": dict(self.stage_seconds),
            "iteration_counts": dict(self.iteration_counts),
            "chebyshev_radii": dict(self.chebyshev_radii),
            "notes": list(self.notes),
        }


@dataclass
class ControllerSpec:
    """Frozen output of the offline pipeline; input to the online program.

    Attributes:
        rep: Behavioral representation (pre-stabilized by ``K``).
        K: Pre-stabilizing feedback gain.
        P: Terminal cost matrix.
        Q, R: Stage-cost weights.
        X_hat: Tightened state sets for steps ``1 .. L``.
        U_hat: Tightened input sets for steps ``0 .. L``.
        X_f_hat: Tightened terminal set.
        F_first: First-step constraint set.
        W_ext: Extended disturbance support.
        kit: Consistency regularizer for the online program.
        L: Horizon.
        X, U: Original (untightened) state and input constraint sets;
            ``U`` also backs the saturating fallback input law.
        X_f: Untightened invariant terminal set (diagnostics).
        C_L: Feasible set of the program (diagnostics).
        C_L_inf: Robust control invariant subset (diagnostics).
        etas, sigmas: Tightened offsets (diagnostics).
        cumulative_tubes: Whether nested tightening was used.
    """

    rep: BehaviorRep
    K: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    X_hat: list
    U_hat: list
    X_f_hat: HPolytope
    F_first: HPolytope
    W_ext: HPolytope
    kit: RegularizationKit
    L: int
    X: HPolytope | None = None
    U: HPolytope | None = None
    X_f: HPolytope | None = None
    C_L: HPolytope | None = None
    C_L_inf: HPolytope | None = None
    etas: list | None = None
    sigmas: list | None = None
    cumulative_tubes: bool = False

    def validate(self) -> None:
        """Check the structural invariants of a synthesized controller.

        Raises:
            SynthesisError: On the first violated invariant.
        """
        if len(self.X_hat) != self.L or len(self.U_hat) != self.L + 1:
            raise SynthesisError("freeze", "tightened set lists have wrong lengths")
        for name, sets in (("state", self.X_hat), ("input", self.U_hat)):
            for i, S in enumerate(sets):
                if S.is_empty():
                    raise SynthesisError(
                        "freeze", f"tightened {name} set {i} is empty"
                    )
        for name, S in (
            ("terminal", self.X_f_hat),
            ("first-step", self.F_first),
        ):
            if S.is_empty():
                raise SynthesisError("freeze", f"{name} set is empty")
        if not self.X_hat[-1].contains_set(self.X_f_hat, 1e-7):
            raise SynthesisError(
                "freeze", "terminal set not contained in the last state set"
            )
        if self.cumulative_tubes:
            for l in range(len(self.X_hat) - 1):
                if not self.X_hat[l].contains_set(self.X_hat[l + 1], 1e-7):
                    raise SynthesisError(
                        "freeze",
                        f"state sets not nested at step {l + 1} despite "
                        "cumulative tightening",
                    )
        if self.C_L_inf is not None:
            # F ⊕ W ⊆ C holds iff h_F(c) + h_W(c) <= d for every row
            # (c, d) of C; checking supports avoids building the sum,
            # whose facet count can be large.
            for row, off in zip(self.C_L_inf.G, self.C_L_inf.g):
                grown = self.F_first.support(row) + self.W_ext.support(row)
                if grown > off + 1e-7 * max(1.0, abs(off)):
                    raise SynthesisError(
                        "freeze",
                        "first-step set plus disturbance support leaves the "
                        "invariant feasible subset",
                    )
            if self.C_L is not None and not self.C_L.contains_set(
                self.C_L_inf, 1e-7
            ):
                raise SynthesisError(
                    "freeze", "invariant subset not contained in the feasible set"
                )


def synthesize(
    data: TrajectoryData, config: SynthesisConfig
) -> tuple[ControllerSpec, SynthesisReport]:
    """Run the full offline pipeline on recorded data.

    Returns:
        ``(spec, report)``: the frozen controller and a diagnostics
        report with timings, iteration counts and set-size proxies.

    Raises:
        SynthesisError: From any failing stage, named accordingly.
        ConfigurationError: For invalid parameters.
    """
    report = SynthesisReport()
    timer = _StageTimer(report)
    L = config.horizon

    if data.disturbance_bank is None:
        raise ConfigurationError(
            "data has no disturbance bank; sample one before synthesis"
        )
    bank = data.disturbance_bank
    if bank.shape[1] != L:
        raise ConfigurationError(
            f"disturbance bank horizon {bank.shape[1]} != config horizon {L}"
        )
    data.check_excitation(L)
    N_S = bank.shape[0]
    r = choose_discard_count(N_S, config.p_min, config.p_max, config.beta)
    params = TighteningParams(
        p_min=config.p_min,
        p_max=config.p_max,
        beta=config.beta,
        N_S=N_S,
        r=r,
    )
    report.discard_count = params.r

    # stage 1: feedback gain from nominal data
    with timer.stage("gain"):
        rng = np.random.Generator(np.random.Philox(key=config.seed))
        box = config.input_set.bounding_box()
        rep0 = BehaviorRep(data, L, np.zeros((data.n_u, data.n_x)), strict=config.exact_data)
        K = None
        last = None
        for attempt in range(5):
            try:
                U_n, X_n, Xp_n = generate_nominal_data(
                    rep0, config.lqr_samples, box, rng
                )
                K = lqr_gain_from_data(U_n, X_n, Xp_n, config.Q, config.R)
                break
            except SynthesisError as exc:
                last = exc
                logger.warning("gain attempt %d failed: %s", attempt + 1, exc)
        if K is None:
            raise last
        rep = BehaviorRep(data, L, K, strict=config.exact_data)
        v_seq = data.u - data.x @ K.T
        from .hankel import is_persistently_exciting

        if not is_persistently_exciting(v_seq, L + data.n_x + 1):
            raise SynthesisError(
                "gain",
                "pre-stabilized input sequence lost persistency of excitation",
            )

    # stage 2: error samples (computed inside the tightening calls; timed here)
    with timer.stage("error_samples"):
        rep.error_from_disturbance_batch(bank)

    # stage 3: probabilistic tightening
    with timer.stage("probabilistic_tightening"):
        etas, X_sets = tighten_state_constraints(
            rep,
            bank,
            config.state_set,
            params.r,
            margin=config.noise_margin,
            cumulative=config.cumulative_tubes,
        )
        sigmas, U_sets = tighten_input_constraints(
            rep,
            bank,
            config.input_set,
            K,
            params.r,
            margin=config.noise_margin,
            cumulative=config.cumulative_tubes,
        )

    # stage 4: robust tightening by noise tubes
    with timer.stage("robust_tightening"):
        tubes = noise_tube_sets(rep, config.noise_set)
        X_hat, U_hat = robustify_sets(
            X_sets, U_sets, tubes, K, cumulative=config.cumulative_tubes
        )

    # stage 5: terminal cost
    with timer.stage("cost_to_go"):
        P = cost_to_go_from_data(K, U_n, X_n, Xp_n, config.Q, config.R)

    # stage 6: extended disturbance support
    with timer.stage("disturbance_support"):
        W_ext = extended_disturbance_set(
            rep, config.disturbance_set, config.noise_set
        )

    # stage 7: terminal set
    with timer.stage("terminal_set"):
        E_d1 = affine_image(config.disturbance_set, rep.disturbance_entry_map())
        X_f, X_f_prob, X_f_hat, n_iter_f = terminal_set(
            rep,
            X_hat[0],
            U_hat[0],
            K,
            tubes,
            E_d1,
            bank,
            params.r,
            config.state_set,
            margin=config.noise_margin,
        )
        report.iteration_counts["terminal_set"] = n_iter_f

    # stage 8: feasible set, invariant subset, first-step set
    with timer.stage("feasible_sets"):
        C_L = feasible_set_CL(rep, X_hat, U_hat, X_f_hat)
        C_L_inf, n_iter_c = robust_invariant_subset(rep, C_L, U_hat[0], W_ext)
        report.iteration_counts["invariant_subset"] = n_iter_c
        F = first_step_set(C_L_inf, W_ext)

    kit = rep.build_projector(config.lambda_alpha)
    spec = ControllerSpec(
        rep=rep,
        K=K,
        P=P,
        Q=config.Q,
        R=config.R,
        X_hat=X_hat,
        U_hat=U_hat,
        X_f_hat=X_f_hat,
        F_first=F,
        W_ext=W_ext,
        kit=kit,
        L=L,
        X=config.state_set,
        U=config.input_set,
        X_f=X_f,
        C_L=C_L,
        C_L_inf=C_L_inf,
        etas=etas,
        sigmas=sigmas,
        cumulative_tubes=config.cumulative_tubes,
    )
    spec.validate()
    for name, S in (
        ("X_hat_L", X_hat[-1]),
        ("X_f_hat", X_f_hat),
        ("C_L", C_L),
        ("C_L_inf", C_L_inf),
        ("F_first", F),
        ("W_ext", W_ext),
    ):
        try:
            _, radius = S.chebyshev_center()
            report.chebyshev_radii[name] = radius
        except PolytopeError:  # pragma: no cover - defensive
            report.chebyshev_radii[name] = float("nan")
    return spec, report


class _StageTimer:
    def __init__(self, report: SynthesisReport):
        self.report = report

    def stage(self, name: str):
        return _StageContext(self.report, name)


class _StageContext:
    def __init__(self, report: SynthesisReport, name: str):
        self.report = report
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.t0
        self.report.stage_seconds[self.name] = elapsed
        logger.info("stage %s: %.2f s", self.name, elapsed)
        return False
