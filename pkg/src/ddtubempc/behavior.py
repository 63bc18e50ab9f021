"""Non-parametric system representation built from recorded trajectories.

A single recorded input/disturbance/state trajectory of a linear system,
sufficiently exciting, spans every trajectory of that system over a fixed
window length.  This module wraps the stacked block-Hankel matrices of the
recorded data, exposes pre-stabilized nominal predictions, disturbance
error responses, and the regularization projector used with inexact data.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .hankel import build_hankel, is_persistently_exciting

logger = logging.getLogger(__name__)

__all__ = [
    "TrajectoryData",
    "BehaviorRep",
    "RegularizationKit",
    "BehaviorError",
    "DataIntegrityError",
    "ExcitationError",
]

#: Relative residual bound for consistency checks on exact data.
RESIDUAL_TOL = 1e-8

#: Relative singular-value cutoff for all pseudo-inverses in this module.
PINV_RCOND = 1e-10


class BehaviorError(Exception):
    """Base class for behavioral-representation failures."""


class DataIntegrityError(BehaviorError):
    """A consistency equation that must hold for valid data was violated."""


class ExcitationError(BehaviorError):
    """Recorded data are not persistently exciting at the required order."""


def _as_sequence(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {out.shape}")
    return out


@dataclass
class TrajectoryData:
    """One recorded trajectory plus an optional disturbance sample bank.

    Attributes:
        u: Input samples, shape ``(N, n_u)``.
        d: Disturbance samples, shape ``(N, n_d)``.
        x: State samples, shape ``(N, n_x)``.
        disturbance_bank: Optional sampled disturbance sequences used for
            probabilistic constraint tightening, shape ``(N_S, L, n_d)``.
    """

    u: np.ndarray
    d: np.ndarray
    x: np.ndarray
    disturbance_bank: np.ndarray | None = None

    def __post_init__(self):
        self.u = _as_sequence(self.u, "u")
        self.d = _as_sequence(self.d, "d")
        self.x = _as_sequence(self.x, "x")
        lengths = {self.u.shape[0], self.d.shape[0], self.x.shape[0]}
        if len(lengths) != 1:
            raise ValueError(
                "u, d, x must share the same number of samples, got "
                f"{self.u.shape[0]}, {self.d.shape[0]}, {self.x.shape[0]}"
            )
        if self.disturbance_bank is not None:
            bank = np.asarray(self.disturbance_bank, dtype=float)
            if bank.ndim == 2:
                bank = bank[:, :, None]
            if bank.ndim != 3 or bank.shape[2] != self.d.shape[1]:
                raise ValueError(
                    "disturbance_bank must have shape (N_S, L, n_d) with "
                    f"n_d={self.d.shape[1]}, got {bank.shape}"
                )
            self.disturbance_bank = bank

    @property
    def N(self) -> int:
        """Number of recorded samples."""
        return self.u.shape[0]

    @property
    def n_u(self) -> int:
        return self.u.shape[1]

    @property
    def n_d(self) -> int:
        return self.d.shape[1]

    @property
    def n_x(self) -> int:
        return self.x.shape[1]

    def check_excitation(self, horizon: int) -> None:
        """Require input and disturbance excitation of order L + n_x + 1.

        Raises:
            ExcitationError: If either sequence fails the rank condition.
        """
        order = horizon + self.n_x + 1
        if not is_persistently_exciting(self.u, order):
            raise ExcitationError(
                f"input data not persistently exciting at order {order}"
            )
        if not is_persistently_exciting(self.d, order):
            raise ExcitationError(
                f"disturbance data not persistently exciting at order {order}"
            )


@dataclass
class RegularizationKit:
    """Projector onto the complement of the consistent-solution row space.

    Attributes:
        Pi: Symmetric idempotent matrix of size ``(N - L, N - L)``.
        lambda_alpha: Nonnegative weight of the ``||Pi @ alpha||^2`` cost
            term in the receding-horizon program.
    """

    Pi: np.ndarray
    lambda_alpha: float = 0.0

    def __post_init__(self):
        self.Pi = np.asarray(self.Pi, dtype=float)
        if self.Pi.ndim != 2 or self.Pi.shape[0] != self.Pi.shape[1]:
            raise ValueError(f"Pi must be square, got shape {self.Pi.shape}")
        if self.lambda_alpha < 0:
            raise ValueError("lambda_alpha must be nonnegative")
        if np.max(np.abs(self.Pi - self.Pi.T)) > 1e-8:
            raise ValueError("Pi must be symmetric within 1e-8")
        if np.max(np.abs(self.Pi @ self.Pi - self.Pi)) > 1e-8:
            raise ValueError("Pi must be idempotent within 1e-8")


class BehaviorRep:
    """Stacked-Hankel representation of all length-(L+1) trajectories.

    Args:
        data: Recorded trajectory.
        horizon: Prediction horizon ``L``; Hankel depth is ``L + 1``.
        K: Pre-stabilizing feedback gain, shape ``(n_u, n_x)``.  The
            recorded input rows are re-expressed as
            ``H_v = H_u - blockdiag(K) @ H_x`` so predictions are made for
            the pre-stabilized system driven by ``v``.
        strict: When True (exact data), consistency residuals above
            ``RESIDUAL_TOL`` raise :class:`DataIntegrityError`; when False
            (noisy data) they are only logged.

    Attributes:
        H_u, H_d, H_x: Block-Hankel matrices of depth ``L + 1``.
        H_v: Pre-stabilized input block ``H_u - K_blk @ H_x``.
        K: The pre-stabilizing gain.
        L: Horizon.
    """

    def __init__(
        self,
        data: TrajectoryData,
        horizon: int,
        K: np.ndarray,
        strict: bool = True,
    ):
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if K.shape != (data.n_u, data.n_x):
            raise ValueError(
                f"K must have shape ({data.n_u}, {data.n_x}), got {K.shape}"
            )
        self.L = int(horizon)
        self.K = K
        self.strict = bool(strict)
        self.n_u, self.n_d, self.n_x = data.n_u, data.n_d, data.n_x
        depth = self.L + 1
        self.H_u = build_hankel(data.u, depth)
        self.H_d = build_hankel(data.d, depth)
        self.H_x = build_hankel(data.x, depth)
        self.K_blk = np.kron(np.eye(depth), K)
        self.H_v = self.H_u - self.K_blk @ self.H_x
        self.n_alpha = self.H_u.shape[1]
        if self.n_alpha < 1:
            raise ValueError("data too short for the requested horizon")
        # stacked pin matrices (shared by several operations)
        self._M_window = np.vstack([self.H_v, self.H_d, self.H_x[: self.n_x]])
        self._M_window_pinv = np.linalg.pinv(self._M_window, rcond=PINV_RCOND)
        self._M_step = np.vstack(
            [
                self.H_v[: self.n_u],
                self.H_d[: self.n_d],
                self.H_x[: self.n_x],
            ]
        )
        self._M_step_pinv = np.linalg.pinv(self._M_step, rcond=PINV_RCOND)
        self._M_open = np.vstack([self.H_u, self.H_d, self.H_x[: self.n_x]])
        self._M_open_pinv = np.linalg.pinv(self._M_open, rcond=PINV_RCOND)

    # ------------------------------------------------------------------
    def _check_residual(self, M, alpha, rhs, what: str) -> None:
        resid = np.linalg.norm(M @ alpha - rhs, axis=0)
        scale = np.maximum(1.0, np.linalg.norm(rhs, axis=0))
        worst = float(np.max(resid / scale))
        if worst > RESIDUAL_TOL:
            msg = f"{what}: consistency residual {worst:.3e} exceeds {RESIDUAL_TOL:.0e}"
            if self.strict:
                raise DataIntegrityError(msg)
            logger.debug(msg)

    def state_blocks(self, alpha: np.ndarray) -> np.ndarray:
        """Reshape ``H_x @ alpha`` into an ``(L+1, n_x)`` state sequence."""
        return (self.H_x @ alpha).reshape(self.L + 1, self.n_x)

    # ------------------------------------------------------------------
    def verify_trajectory(self, u_seq, d_seq, x_seq, tol: float = RESIDUAL_TOL) -> bool:
        """Check that a length-(L+1) window is a trajectory of the system.

        Returns True when the stacked window lies in the column space of
        the stacked Hankel blocks (relative least-squares residual below
        ``tol``).
        """
        u_seq = _as_sequence(u_seq, "u_seq")
        d_seq = _as_sequence(d_seq, "d_seq")
        x_seq = _as_sequence(x_seq, "x_seq")
        depth = self.L + 1
        for name, seq, m in (
            ("u_seq", u_seq, self.n_u),
            ("d_seq", d_seq, self.n_d),
            ("x_seq", x_seq, self.n_x),
        ):
            if seq.shape != (depth, m):
                raise ValueError(
                    f"{name} must have shape ({depth}, {m}), got {seq.shape}"
                )
        stacked = np.vstack([self.H_u, self.H_d, self.H_x])
        rhs = np.concatenate([u_seq.ravel(), d_seq.ravel(), x_seq.ravel()])
        alpha, *_ = np.linalg.lstsq(stacked, rhs, rcond=PINV_RCOND)
        resid = np.linalg.norm(stacked @ alpha - rhs)
        return bool(resid <= tol * max(1.0, np.linalg.norm(rhs)))

    def nominal_trajectory(self, x0, v_seq) -> np.ndarray:
        """Disturbance-free pre-stabilized prediction pinned at ``x0``.

        Args:
            x0: Initial state, length ``n_x``.
            v_seq: Pre-stabilized input sequence, shape ``(L+1, n_u)``.

        Returns:
            State sequence ``z`` of shape ``(L+1, n_x)`` with
            ``z[0] = x0``, generated by ``u = K z + v`` and zero
            disturbance.

        Raises:
            DataIntegrityError: If the pinned system cannot be met within
                ``RESIDUAL_TOL`` (impossible for valid exciting data).
        """
        x0 = np.asarray(x0, dtype=float).ravel()
        v_seq = _as_sequence(v_seq, "v_seq")
        if x0.shape != (self.n_x,):
            raise ValueError(f"x0 must have length {self.n_x}")
        if v_seq.shape != (self.L + 1, self.n_u):
            raise ValueError(
                f"v_seq must have shape ({self.L + 1}, {self.n_u}), "
                f"got {v_seq.shape}"
            )
        rhs = np.concatenate(
            [v_seq.ravel(), np.zeros(self.n_d * (self.L + 1)), x0]
        )
        alpha = self._M_window_pinv @ rhs
        self._check_residual(self._M_window, alpha, rhs, "nominal_trajectory")
        return self.state_blocks(alpha)

    def error_from_disturbance(self, d_seq) -> np.ndarray:
        """Error response to a disturbance sequence, from zero initial error.

        Args:
            d_seq: Disturbance sequence of shape ``(L, n_d)``; the stacked
                equations run on an ``L+1`` grid, so the trailing slot is
                zero-padded (the response over ``[0, L]`` does not depend
                on it).

        Returns:
            Error sequence ``e`` of shape ``(L+1, n_x)`` with ``e[0] = 0``.
        """
        d_seq = _as_sequence(d_seq, "d_seq")
        if d_seq.shape != (self.L, self.n_d):
            raise ValueError(
                f"d_seq must have shape ({self.L}, {self.n_d}), got {d_seq.shape}"
            )
        return self.error_from_disturbance_batch(d_seq[None, :, :])[0]

    def error_from_disturbance_batch(self, d_batch) -> np.ndarray:
        """Vectorized :meth:`error_from_disturbance` over a sample bank.

        Args:
            d_batch: Array of shape ``(n_samples, L, n_d)``.

        Returns:
            Errors of shape ``(n_samples, L+1, n_x)``.
        """
        d_batch = np.asarray(d_batch, dtype=float)
        if d_batch.ndim == 2:
            d_batch = d_batch[:, :, None]
        n_s = d_batch.shape[0]
        if d_batch.shape[1:] != (self.L, self.n_d):
            raise ValueError(
                f"d_batch must have shape (n, {self.L}, {self.n_d}), "
                f"got {d_batch.shape}"
            )
        n_v = self.n_u * (self.L + 1)
        n_dd = self.n_d * (self.L + 1)
        rhs = np.zeros((n_v + n_dd + self.n_x, n_s))
        rhs[n_v : n_v + self.n_d * self.L] = d_batch.reshape(n_s, -1).T
        alpha = self._M_window_pinv @ rhs
        self._check_residual(self._M_window, alpha, rhs, "error_from_disturbance")
        E = self.H_x @ alpha  # (n_x * (L+1), n_s)
        return E.T.reshape(n_s, self.L + 1, self.n_x)

    def error_from_disturbance_regularized(
        self, d_seq, kit: RegularizationKit, ridge: float = 1e-8
    ) -> np.ndarray:
        """Error response computed through the consistency projector.

        Minimizes ``||Pi @ alpha||^2 + ridge * ||alpha||^2`` subject to the
        pinned window equations, which coincides with
        :meth:`error_from_disturbance` on exact data and de-noises the
        response on corrupted data.

        Falls back to an unconstrained least-squares solve (with a
        RuntimeWarning) when the equality system itself is infeasible.
        """
        d_seq = _as_sequence(d_seq, "d_seq")
        if d_seq.shape != (self.L, self.n_d):
            raise ValueError(
                f"d_seq must have shape ({self.L}, {self.n_d}), got {d_seq.shape}"
            )
        n_v = self.n_u * (self.L + 1)
        rhs = np.zeros(self._M_window.shape[0])
        rhs[n_v : n_v + self.n_d * self.L] = d_seq.ravel()
        M = self._M_window
        alpha_p = self._M_window_pinv @ rhs
        resid = np.linalg.norm(M @ alpha_p - rhs)
        if resid > 1e-6 * max(1.0, np.linalg.norm(rhs)):
            warnings.warn(
                "pinned window equations are infeasible; falling back to a "
                "least-squares error response",
                RuntimeWarning,
                stacklevel=2,
            )
            return self.state_blocks(alpha_p)
        # minimize over alpha_p + null(M): normal equations in the null basis
        from scipy.linalg import null_space

        Z = null_space(M, rcond=PINV_RCOND)
        if Z.shape[1]:
            Q = kit.Pi.T @ kit.Pi + ridge * np.eye(self.n_alpha)
            A = Z.T @ Q @ Z
            b = -Z.T @ (Q @ alpha_p)
            y = np.linalg.solve(A, b)
            alpha = alpha_p + Z @ y
        else:
            alpha = alpha_p
        return self.state_blocks(alpha)

    def build_projector(self, lambda_alpha: float = 0.0) -> RegularizationKit:
        """Projector ``Pi = I - M^+ M`` for the stacked pin matrix.

        The kernel of ``Pi`` is exactly the row space of the stacked
        (pre-stabilized input, disturbance, initial state) blocks, so
        ``||Pi @ alpha||`` measures how far a decision vector strays from
        the consistent subspace.
        """
        Pi = np.eye(self.n_alpha) - self._M_window_pinv @ self._M_window
        Pi = 0.5 * (Pi + Pi.T)
        return RegularizationKit(Pi=Pi, lambda_alpha=float(lambda_alpha))

    def one_step_map(self) -> np.ndarray:
        """One-step transition ``M`` with ``x_next = M @ (x; u)``.

        Evaluated by pinning the first-block rows (pre-stabilized input
        compensated by ``K``, zero disturbance, initial state) on
        canonical basis vectors, then reading the second state block.

        Returns:
            Matrix of shape ``(n_x, n_x + n_u)``; the first ``n_x``
            columns act on the state, the remaining ``n_u`` on the input.

        Raises:
            DataIntegrityError: On residual breach with strict data.
        """
        n_rhs = self.n_x + self.n_u
        rhs = np.zeros((self._M_step.shape[0], n_rhs))
        # columns 0..n_x-1: x0 = e_i, u0 = 0  ->  v0 = -K e_i
        rhs[: self.n_u, : self.n_x] = -self.K
        rhs[self.n_u + self.n_d :, : self.n_x] = np.eye(self.n_x)
        # columns n_x..: u0 = e_j, x0 = 0  ->  v0 = e_j
        rhs[: self.n_u, self.n_x :] = np.eye(self.n_u)
        alpha = self._M_step_pinv @ rhs
        self._check_residual(self._M_step, alpha, rhs, "one_step_map")
        return self.H_x[self.n_x : 2 * self.n_x] @ alpha

    def disturbance_entry_map(self) -> np.ndarray:
        """Map from a one-step disturbance to the successor state.

        Returns:
            Matrix of shape ``(n_x, n_d)``: the state reached after one
            step from the origin with zero input and a unit disturbance.
        """
        rhs = np.zeros((self._M_step.shape[0], self.n_d))
        rhs[self.n_u : self.n_u + self.n_d] = np.eye(self.n_d)
        alpha = self._M_step_pinv @ rhs
        self._check_residual(self._M_step, alpha, rhs, "disturbance_entry_map")
        return self.H_x[self.n_x : 2 * self.n_x] @ alpha

    def zero_input_response_maps(self) -> np.ndarray:
        """Open-loop initial-condition response maps ``T_0 .. T_L``.

        ``T_l`` maps an initial state to the state ``l`` steps later under
        identically zero input and disturbance (no pre-stabilization), so
        a bounded initial uncertainty set propagates as ``T_l @ set``.

        Returns:
            Array of shape ``(L+1, n_x, n_x)`` with ``T_0 = I``.
        """
        rhs = np.zeros((self._M_open.shape[0], self.n_x))
        rhs[-self.n_x :] = np.eye(self.n_x)
        alpha = self._M_open_pinv @ rhs
        self._check_residual(self._M_open, alpha, rhs, "zero_input_response_maps")
        Z = self.H_x @ alpha  # (n_x*(L+1), n_x)
        return Z.reshape(self.L + 1, self.n_x, self.n_x)
