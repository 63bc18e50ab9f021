"""Receding-horizon program: assembly audit, solve contracts, input laws."""

import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from ddtubempc import ocp
from ddtubempc.behavior import BehaviorRep, TrajectoryData
from ddtubempc.polytope import HPolytope
from ddtubempc.synthesis import ControllerSpec


def interval(radius: float) -> HPolytope:
    return HPolytope(np.array([[1.0], [-1.0]]), np.array([radius, radius]))


def scalar_controller(
    a: float = 0.5,
    b: float = 1.0,
    horizon: int = 2,
    steps: int = 30,
    lambda_alpha: float = 0.0,
    seed: int = 7,
) -> SimpleNamespace:
    """Hand-built controller for the scalar plant x+ = a x + b u.

    All tightened sets equal the unit interval (terminal half of it), so
    every contract of the online program can be checked against closed
    forms without running the offline pipeline.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1, 1, size=(steps, 1))
    d = np.zeros((steps, 1))
    x = np.zeros((steps + 1, 1))
    for k in range(steps):
        x[k + 1] = a * x[k] + b * u[k]
    data = TrajectoryData(u=u, d=d, x=x[:-1])
    K = np.array([[0.0]])
    rep = BehaviorRep(data, horizon, K)
    Q, R = np.array([[1.0]]), np.array([[0.1]])
    P = solve_discrete_are(np.array([[a]]), np.array([[b]]), Q, R)
    spec = ControllerSpec(
        rep=rep,
        K=K,
        P=P,
        Q=Q,
        R=R,
        X_hat=[interval(1.0)] * horizon,
        U_hat=[interval(1.0)] * (horizon + 1),
        X_f_hat=interval(0.5),
        F_first=interval(1.0),
        W_ext=interval(0.0),
        kit=rep.build_projector(lambda_alpha),
        L=horizon,
        X=interval(1.0),
        U=interval(1.0),
    )
    return SimpleNamespace(
        a=a, b=b, spec=spec, problem=ocp.assemble(spec), Q=Q, R=R
    )


@pytest.fixture(scope="module")
def scalar():
    return scalar_controller()


class TestAssembly:
    def test_row_count_audit_scalar(self, scalar):
        prob, spec = scalar.problem, scalar.spec
        L = spec.L
        n_d, n_x, n_u = 1, 1, 1
        assert prob.n_alpha == 30 - L
        assert prob.n_eq == n_d * (L + 1) + n_x + n_u
        expected_in = (
            sum(S.G.shape[0] for S in spec.X_hat)
            + spec.F_first.G.shape[0]
            + spec.X_f_hat.G.shape[0]
            + sum(S.G.shape[0] for S in spec.U_hat[:L])
        )
        assert prob.n_in == expected_in
        assert prob.A_eq.shape == (prob.n_eq, prob.n_alpha)
        assert prob.A_in.shape == (prob.n_in, prob.n_alpha)

    def test_benchmark_decision_dimension(self, benchmark):
        prob = ocp.assemble(benchmark.spec)
        assert prob.n_alpha == 40

    def test_benchmark_row_count_audit(self, benchmark):
        spec = benchmark.spec
        prob = ocp.assemble(spec)
        L, n_d, n_x, n_u = spec.L, 1, 4, 1
        assert prob.n_eq == n_d * (L + 1) + n_x + n_u
        expected_in = (
            sum(S.G.shape[0] for S in spec.X_hat)
            + spec.F_first.G.shape[0]
            + spec.X_f_hat.G.shape[0]
            + sum(S.G.shape[0] for S in spec.U_hat[:L])
        )
        assert prob.n_in == expected_in

    def test_hessian_psd_and_strict_on_moving_directions(self, scalar):
        prob = scalar.problem
        H = prob.H_cost
        assert np.allclose(H, H.T)
        eigs = np.linalg.eigvalsh(H)
        assert eigs[0] > -1e-10 * max(1.0, eigs[-1])
        # Strict convexity holds for every equality-feasible direction
        # that actually moves the predicted trajectory.
        rep = scalar.spec.rep
        null = np.linalg.svd(prob.A_eq)[2][np.linalg.matrix_rank(prob.A_eq) :].T
        window = np.vstack([rep.H_u, rep.H_x])
        rng = np.random.default_rng(3)
        for _ in range(50):
            delta = null @ rng.standard_normal(null.shape[1])
            if np.linalg.norm(window @ delta) > 1e-9:
                assert delta @ H @ delta > 0.0

    def test_zero_horizon_rejected(self):
        rng = np.random.default_rng(0)
        data = TrajectoryData(
            u=rng.uniform(-1, 1, (10, 1)),
            d=np.zeros((10, 1)),
            x=rng.standard_normal((10, 1)),
        )
        with pytest.raises(ValueError):
            BehaviorRep(data, 0, np.zeros((1, 1)))

    def test_dimension_mismatch_raises(self, scalar):
        import dataclasses

        bad = dataclasses.replace(scalar.spec, Q=np.eye(3))
        with pytest.raises(ocp.OCPError):
            ocp.assemble(bad)


class TestSolve:
    def test_origin_gives_zero_cost_and_input(self, scalar):
        sol = ocp.solve(scalar.problem, [0.0])
        assert sol.status == ocp.OPTIMAL
        assert abs(sol.cost) < 1e-9
        assert abs(ocp.control_law(scalar.problem, [0.0], sol)[0]) < 1e-9

    def test_benchmark_initial_state_is_feasible(self, benchmark):
        prob = ocp.assemble(benchmark.spec)
        sol = ocp.solve(prob, [np.pi / 2, np.pi / 2, 0.0, 0.0])
        assert sol.status == ocp.OPTIMAL
        assert sol.cost > 0.0
        assert sol.solve_time < 0.5

    def test_nominal_trajectory_consistency(self, scalar, benchmark):
        for prob, x0 in (
            (scalar.problem, [0.8]),
            (ocp.assemble(benchmark.spec), [np.pi / 2, np.pi / 2, 0.0, 0.0]),
        ):
            sol = ocp.solve(prob, x0)
            assert sol.status == ocp.OPTIMAL
            znom = prob.spec.rep.nominal_trajectory(x0, sol.v_star)
            assert np.max(np.abs(znom - sol.z_hat_star)) < 1e-7

    def test_repeated_solves_agree(self, scalar):
        s1 = ocp.solve(scalar.problem, [0.8])
        s2 = ocp.solve(scalar.problem, [0.8])
        assert np.max(np.abs(s1.v_star - s2.v_star)) < 1e-7
        assert np.max(np.abs(s1.z_hat_star - s2.z_hat_star)) < 1e-7

    def test_cost_matches_stagewise_recomputation(self, scalar):
        spec = scalar.spec
        sol = ocp.solve(scalar.problem, [0.8])
        z, v = sol.z_hat_star, sol.v_star
        u = z @ spec.K.T + v
        total = sum(
            float(z[l] @ spec.Q @ z[l] + u[l] @ spec.R @ u[l])
            for l in range(spec.L)
        ) + float(z[-1] @ spec.P @ z[-1])
        assert math.isclose(sol.cost, total, abs_tol=1e-6)

    def test_infeasible_is_a_value(self, scalar):
        sol = ocp.solve(scalar.problem, [5.0])
        assert sol.status == ocp.INFEASIBLE
        assert sol.alpha_star is None
        assert sol.cost == math.inf
        assert sol.diagnostics

    def test_trailing_prestabilized_input_pinned(self, scalar):
        sol = ocp.solve(scalar.problem, [0.8])
        assert np.max(np.abs(sol.v_star[-1])) < 1e-9

    def test_bad_state_raises(self, scalar):
        with pytest.raises(ocp.OCPError):
            ocp.solve(scalar.problem, [1.0, 2.0])
        with pytest.raises(ocp.OCPError):
            ocp.solve(scalar.problem, [np.nan])


class TestControlLaw:
    def test_first_input_identity(self, scalar):
        sol = ocp.solve(scalar.problem, [0.8])
        u = ocp.control_law(scalar.problem, [0.8], sol)
        expected = scalar.spec.K @ np.array([0.8]) + sol.v_star[0]
        assert np.allclose(u, expected)

    def test_infeasibility_propagates(self, scalar):
        with pytest.raises(ocp.OCPError, match="infeasible"):
            ocp.control_law(scalar.problem, [5.0])

    def test_benchmark_input_inside_box(self, benchmark):
        prob = ocp.assemble(benchmark.spec)
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(20):
            x0 = rng.uniform(-1, 1, 4) * np.array([1.5, 1.5, 0.3, 0.3])
            sol = ocp.solve(prob, x0)
            if sol.status != ocp.OPTIMAL:
                continue
            u = ocp.control_law(prob, x0, sol)
            assert np.all(np.abs(u) <= 1.0 + 1e-8)
            checked += 1
        assert checked >= 5

    def test_local_lipschitz_probe(self, scalar):
        rng = np.random.default_rng(5)
        ratios = []
        for _ in range(100):
            x0 = rng.uniform(-0.7, 0.7)
            delta = rng.uniform(-1e-4, 1e-4)
            sa = ocp.solve(scalar.problem, [x0])
            sb = ocp.solve(scalar.problem, [x0 + delta])
            if (
                sa.status != ocp.OPTIMAL
                or sb.status != ocp.OPTIMAL
                or abs(delta) < 1e-9
            ):
                continue
            ua = ocp.control_law(scalar.problem, [x0], sa)
            ub = ocp.control_law(scalar.problem, [x0 + delta], sb)
            ratios.append(abs(ub[0] - ua[0]) / abs(delta))
        assert len(ratios) >= 80
        assert max(ratios) < 1e4


class TestCandidateShift:
    def test_descent_along_exact_closed_loop(self, scalar):
        prob, spec = scalar.problem, scalar.spec
        a, b = scalar.a, scalar.b
        x = np.array([0.8])
        prev = ocp.solve(prob, x)
        for _ in range(8):
            u = ocp.control_law(prob, x, prev)
            stage = float(x @ spec.Q @ x + u @ spec.R @ u)
            cand = ocp.candidate_shift(prob, prev)
            assert prob.objective(cand) - prev.cost <= -stage + 1e-6
            x = a * x + b * u
            nxt = ocp.solve(prob, x)
            assert nxt.status == ocp.OPTIMAL
            assert nxt.cost <= prev.cost - stage + 1e-6
            prev = nxt

    def test_candidate_realizes_shifted_window(self, scalar):
        prob, spec = scalar.problem, scalar.spec
        rep, K, L = spec.rep, spec.K, spec.L
        prev = ocp.solve(prob, [0.8])
        cand = ocp.candidate_shift(prob, prev)
        u_cand = (rep.H_u @ cand).reshape(L + 1, rep.n_u)
        u_prev = prev.z_hat_star @ K.T + prev.v_star
        # first L inputs: the previous sequence advanced one step, then
        # the terminal feedback at the previous terminal state
        assert np.allclose(u_cand[: L - 1], u_prev[1:L], atol=1e-7)
        assert np.allclose(u_cand[L - 1], K @ prev.z_hat_star[L], atol=1e-7)
        x0_cand = (rep.H_x @ cand)[: rep.n_x]
        assert np.allclose(x0_cand, prev.z_hat_star[1], atol=1e-7)
        assert np.max(np.abs(rep.H_d @ cand)) < 1e-7

    def test_warm_start_does_not_change_minimizer(self, scalar):
        prev = ocp.solve(scalar.problem, [0.8])
        cand = ocp.candidate_shift(scalar.problem, prev)
        cold = ocp.solve(scalar.problem, [0.4])
        warm = ocp.solve(scalar.problem, [0.4], warm_start=cand)
        assert np.max(np.abs(cold.v_star - warm.v_star)) < 1e-6
        assert abs(cold.cost - warm.cost) < 1e-6

    def test_requires_optimal_previous(self, scalar):
        bad = ocp.solve(scalar.problem, [5.0])
        with pytest.raises(ocp.OCPError):
            ocp.candidate_shift(scalar.problem, bad)


class TestBackupLaw:
    def test_inside_unchanged(self, scalar):
        spec = scalar.spec
        ns = SimpleNamespace(K=np.array([[-0.5]]), U=interval(1.0), U_hat=[])
        u = ocp.backup_law(ns, [0.6])
        assert np.allclose(u, [-0.3])

    def test_clamped_to_boundary_preserving_direction(self):
        U = HPolytope.box([-1.0, -2.0], [1.0, 2.0])
        ns = SimpleNamespace(K=np.array([[2.0], [1.0]]), U=U, U_hat=[])
        u = ocp.backup_law(ns, [3.0])  # K x = (6, 3), clamp factor 1/6
        assert np.allclose(u, [1.0, 0.5])
        raw = np.array([6.0, 3.0])
        cross = u[0] * raw[1] - u[1] * raw[0]
        assert abs(cross) < 1e-12

    def test_zero_state_zero_input(self, scalar):
        assert np.allclose(ocp.backup_law(scalar.spec, [0.0]), [0.0])

    def test_benchmark_always_inside_box(self, benchmark):
        rng = np.random.default_rng(23)
        for _ in range(100):
            x = rng.uniform(-10, 10, 4)
            u = ocp.backup_law(benchmark.spec, x)
            assert np.all(np.abs(u) <= 1.0 + 1e-12)
