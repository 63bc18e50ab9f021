"""Tests for the data-driven behavioral representation."""

import numpy as np
import pytest
import scipy.linalg as sla

from ddtubempc.behavior import (
    BehaviorRep,
    DataIntegrityError,
    ExcitationError,
    RegularizationKit,
    TrajectoryData,
)
from ddtubempc.sim import (
    NoiseConfig,
    double_mass_spring_damper,
    generate_offline_data,
    make_run_rng,
    perturb_data,
)

L = 10


@pytest.fixture(scope="module")
def plant():
    return double_mass_spring_damper()


@pytest.fixture(scope="module")
def data(plant):
    rng = make_run_rng(1234)
    return generate_offline_data(
        plant, 50, (-np.ones(1), np.ones(1)), NoiseConfig(), rng, L
    )


@pytest.fixture(scope="module")
def gain(plant):
    Q = np.diag([10.0, 10.0, 1.0, 1.0])
    R = np.array([[0.1]])
    P = sla.solve_discrete_are(plant.A, plant.B, Q, R)
    return -np.linalg.solve(
        R + plant.B.T @ P @ plant.B, plant.B.T @ P @ plant.A
    )


@pytest.fixture(scope="module")
def rep(data, gain):
    return BehaviorRep(data, L, gain)


def closed_loop(plant, gain):
    return plant.A + plant.B @ gain


class TestTrajectoryData:
    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            TrajectoryData(u=np.zeros((5, 1)), d=np.zeros((4, 1)), x=np.zeros((5, 2)))

    def test_bank_shape_checked(self):
        with pytest.raises(ValueError):
            TrajectoryData(
                u=np.zeros((5, 1)),
                d=np.zeros((5, 1)),
                x=np.zeros((5, 2)),
                disturbance_bank=np.zeros((3, 4, 2)),
            )

    def test_excitation_check(self, data):
        data.check_excitation(L)  # passes for generated data
        flat = TrajectoryData(
            u=np.ones((50, 1)), d=data.d.copy(), x=data.x.copy()
        )
        with pytest.raises(ExcitationError):
            flat.check_excitation(L)


class TestVerifyTrajectory:
    def test_zero_window_is_a_trajectory(self, rep):
        z = np.zeros((L + 1, 1))
        assert rep.verify_trajectory(z, z, np.zeros((L + 1, 4)))

    def test_hankel_columns_are_trajectories(self, rep):
        for j in (0, 7, rep.n_alpha - 1):
            u = rep.H_u[:, j].reshape(L + 1, 1)
            d = rep.H_d[:, j].reshape(L + 1, 1)
            x = rep.H_x[:, j].reshape(L + 1, 4)
            assert rep.verify_trajectory(u, d, x)

    def test_foreign_system_trajectory_rejected(self, rep):
        rng = np.random.default_rng(5)
        A2 = np.diag([0.5, 0.6, 0.7, 0.8]) + 0.1 * rng.normal(size=(4, 4))
        B2 = rng.normal(size=(4, 1))
        Bd2 = rng.normal(size=(4, 1))
        u = rng.uniform(-1, 1, (L + 1, 1))
        d = rng.uniform(-0.1, 0.1, (L + 1, 1))
        x = np.zeros((L + 1, 4))
        x[0] = rng.normal(size=4)
        for k in range(L):
            x[k + 1] = A2 @ x[k] + (B2 @ u[k]) + (Bd2 @ d[k])
        assert not rep.verify_trajectory(u, d, x)

    def test_length_mismatch_raises(self, rep):
        with pytest.raises(ValueError):
            rep.verify_trajectory(
                np.zeros((L, 1)), np.zeros((L + 1, 1)), np.zeros((L + 1, 4))
            )


class TestNominalTrajectory:
    def test_origin_equilibrium(self, rep):
        z = rep.nominal_trajectory(np.zeros(4), np.zeros((L + 1, 1)))
        np.testing.assert_allclose(z, 0.0, atol=1e-10)

    def test_closed_loop_power_iteration(self, rep, plant, gain):
        Acl = closed_loop(plant, gain)
        z = rep.nominal_trajectory(np.eye(4)[0], np.zeros((L + 1, 1)))
        expected = np.stack(
            [np.linalg.matrix_power(Acl, l)[:, 0] for l in range(L + 1)]
        )
        np.testing.assert_allclose(z, expected, atol=1e-8)

    def test_superposition(self, rep):
        rng = np.random.default_rng(17)
        x0a, x0b = rng.normal(size=(2, 4))
        va, vb = rng.normal(size=(2, L + 1, 1))
        za = rep.nominal_trajectory(x0a, va)
        zb = rep.nominal_trajectory(x0b, vb)
        zab = rep.nominal_trajectory(x0a + x0b, va + vb)
        np.testing.assert_allclose(za + zb, zab, atol=1e-8)

    def test_insufficient_data_strict_raises(self, plant, gain):
        # 30 samples leave only 20 columns against 26 pinned rows: the
        # pinned window system becomes infeasible and strict mode reports it
        rng = make_run_rng(99)
        short = generate_offline_data(
            plant, 30, (-np.ones(1), np.ones(1)), NoiseConfig(), rng, L
        )
        strict_rep = BehaviorRep(short, L, gain, strict=True)
        with pytest.raises(DataIntegrityError):
            strict_rep.nominal_trajectory(np.ones(4), np.ones((L + 1, 1)))


class TestErrorFromDisturbance:
    def test_zero_disturbance(self, rep):
        e = rep.error_from_disturbance(np.zeros((L, 1)))
        np.testing.assert_allclose(e, 0.0, atol=1e-10)

    def test_pulse_response_matches_plant(self, rep, plant, gain):
        Acl = closed_loop(plant, gain)
        d = np.zeros((L, 1))
        d[0] = 1.0
        e = rep.error_from_disturbance(d)
        np.testing.assert_allclose(e[0], 0.0, atol=1e-9)
        np.testing.assert_allclose(e[1], plant.B_d[:, 0], atol=1e-8)
        np.testing.assert_allclose(e[2], Acl @ plant.B_d[:, 0], atol=1e-8)
        expected = np.zeros((L + 1, 4))
        for l in range(L):
            expected[l + 1] = Acl @ expected[l] + plant.B_d @ d[l]
        np.testing.assert_allclose(e, expected, atol=1e-8)

    def test_linearity(self, rep):
        rng = np.random.default_rng(23)
        da, db = rng.normal(size=(2, L, 1))
        ea = rep.error_from_disturbance(da)
        eb = rep.error_from_disturbance(db)
        eab = rep.error_from_disturbance(da + 2.0 * db)
        np.testing.assert_allclose(ea + 2.0 * eb, eab, atol=1e-8)

    def test_batch_matches_single(self, rep):
        rng = np.random.default_rng(29)
        batch = rng.normal(size=(7, L, 1)) * 0.1
        E = rep.error_from_disturbance_batch(batch)
        for i in range(7):
            np.testing.assert_allclose(
                E[i], rep.error_from_disturbance(batch[i]), atol=1e-10
            )


class TestRegularized:
    def test_matches_plain_on_exact_data(self, rep):
        kit = rep.build_projector(lambda_alpha=5.0)
        rng = np.random.default_rng(31)
        for _ in range(5):
            d = rng.normal(size=(L, 1)) * 0.1
            e_plain = rep.error_from_disturbance(d)
            e_reg = rep.error_from_disturbance_regularized(d, kit)
            np.testing.assert_allclose(e_reg, e_plain, atol=1e-6)

    def test_zero_disturbance(self, rep):
        kit = rep.build_projector()
        e = rep.error_from_disturbance_regularized(np.zeros((L, 1)), kit)
        np.testing.assert_allclose(e, 0.0, atol=1e-8)

    def test_regularization_helps_on_noisy_data(self, data, gain, plant):
        noisy = perturb_data(data, NoiseConfig(seed=7), make_run_rng(7))
        nrep = BehaviorRep(noisy, L, gain, strict=False)
        kit = nrep.build_projector(lambda_alpha=5.0)
        Acl = closed_loop(plant, gain)
        rng = np.random.default_rng(11)
        err_plain = 0.0
        err_reg = 0.0
        for _ in range(100):
            d = np.clip(rng.normal(0, 0.1, (L, 1)), -0.1, 0.1)
            truth = np.zeros((L + 1, 4))
            for l in range(L):
                truth[l + 1] = Acl @ truth[l] + plant.B_d @ d[l]
            err_plain += np.linalg.norm(nrep.error_from_disturbance(d) - truth)
            err_reg += np.linalg.norm(
                nrep.error_from_disturbance_regularized(d, kit) - truth
            )
        # the pinned system is feasible, so the projector cannot make the
        # prediction worse; allow float-level slack on the comparison
        assert err_reg <= err_plain + 1e-9 * (1.0 + err_plain)


class TestProjector:
    def test_square_invertible_gives_zero(self):
        # scalar plant, L = 1, N = 6: the pin matrix is square 5x5
        rng = np.random.default_rng(3)
        a, b, bd = 0.5, 1.0, 1.0
        N = 6
        u = rng.uniform(-1, 1, N)
        d = rng.uniform(-1, 1, N)
        x = np.zeros(N)
        for k in range(N - 1):
            x[k + 1] = a * x[k] + b * u[k] + bd * d[k]
        dat = TrajectoryData(u=u, d=d, x=x)
        r = BehaviorRep(dat, 1, np.zeros((1, 1)))
        assert r._M_window.shape == (5, 5)
        assert np.linalg.matrix_rank(r._M_window) == 5
        kit = r.build_projector()
        np.testing.assert_allclose(kit.Pi, 0.0, atol=1e-8)

    def test_projector_identities(self, rep):
        kit = rep.build_projector()
        np.testing.assert_allclose(kit.Pi, kit.Pi.T, atol=1e-8)
        np.testing.assert_allclose(kit.Pi @ kit.Pi, kit.Pi, atol=1e-8)

    def test_row_space_annihilated(self, rep):
        rng = np.random.default_rng(37)
        kit = rep.build_projector()
        for _ in range(10):
            y = rng.normal(size=rep._M_window.shape[0])
            alpha = rep._M_window_pinv @ y
            np.testing.assert_allclose(kit.Pi @ alpha, 0.0, atol=1e-8)

    def test_kit_validation(self):
        with pytest.raises(ValueError):
            RegularizationKit(Pi=np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValueError):
            RegularizationKit(Pi=np.eye(2), lambda_alpha=-1.0)


class TestOneStepMap:
    def test_benchmark_recovers_plant(self, rep, plant):
        M = rep.one_step_map()
        np.testing.assert_allclose(M[:, :4], plant.A, atol=1e-8)
        np.testing.assert_allclose(M[:, 4:], plant.B, atol=1e-8)

    def test_origin_fixed_point(self, rep):
        M = rep.one_step_map()
        np.testing.assert_allclose(M @ np.zeros(5), 0.0, atol=1e-12)

    def test_recursion_matches_nominal(self, rep):
        rng = np.random.default_rng(41)
        M = rep.one_step_map()
        x0 = rng.normal(size=4)
        v = rng.normal(size=(L + 1, 1))
        z = rep.nominal_trajectory(x0, v)
        xk = x0.copy()
        for l in range(L):
            u = rep.K @ xk + v[l]
            xk = M @ np.concatenate([xk, u])
            np.testing.assert_allclose(xk, z[l + 1], atol=1e-7)

    def test_disturbance_entry_map(self, rep, plant):
        np.testing.assert_allclose(
            rep.disturbance_entry_map(), plant.B_d, atol=1e-8
        )

    def test_zero_input_response_maps(self, rep, plant):
        T = rep.zero_input_response_maps()
        for l in range(L + 1):
            np.testing.assert_allclose(
                T[l], np.linalg.matrix_power(plant.A, l), atol=1e-7
            )


class TestFundamentalLemmaRoundTrip:
    def test_nominal_outputs_verify(self, rep):
        rng = np.random.default_rng(43)
        zeros_d = np.zeros((L + 1, 1))
        for _ in range(1000):
            x0 = rng.normal(size=4)
            v = rng.normal(size=(L + 1, 1))
            z = rep.nominal_trajectory(x0, v)
            u = z @ rep.K.T + v
            assert rep.verify_trajectory(u, zeros_d, z)
