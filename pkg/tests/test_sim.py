"""Closed-loop simulation, Monte-Carlo aggregation, and CSV logging."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
import pytest

from ddtubempc.behavior import ExcitationError
from ddtubempc.ocp import OPTIMAL
from ddtubempc.synthesis import noise_tube_sets
from ddtubempc.sim import (
    MonteCarloStats,
    NoiseConfig,
    PlantModel,
    double_mass_spring_damper,
    generate_offline_data,
    make_run_rng,
    monte_carlo,
    perturb_data,
    run_closed_loop,
    sample_disturbance_bank,
    sample_truncated_normal,
    write_run_csv,
)

ZERO_NOISE = NoiseConfig(d_bar=0.0, d_sigma=0.0, mu_bar=0.0, mu_sigma=0.0)
FULL_NOISE = NoiseConfig()


class TestPlantModel:
    def test_benchmark_dimensions(self):
        plant = double_mass_spring_damper()
        assert (plant.n_x, plant.n_u, plant.n_d) == (4, 1, 1)

    def test_step_matches_matrices(self):
        plant = double_mass_spring_damper()
        rng = np.random.default_rng(3)
        x = rng.normal(size=4)
        u = rng.normal(size=1)
        d = rng.normal(size=1)
        expected = plant.A @ x + plant.B @ u + plant.B_d @ d
        np.testing.assert_allclose(plant.step(x, u, d), expected, atol=1e-12)

    def test_simulate_rolls_forward(self):
        plant = double_mass_spring_damper()
        rng = np.random.default_rng(4)
        u_seq = rng.normal(size=(6, 1))
        d_seq = rng.normal(size=(6, 1))
        traj = plant.simulate(np.zeros(4), u_seq, d_seq)
        assert traj.shape == (7, 4)
        x = np.zeros(4)
        for k in range(6):
            x = plant.step(x, u_seq[k], d_seq[k])
            np.testing.assert_allclose(traj[k + 1], x, atol=1e-12)

    def test_rejects_uncontrollable(self):
        with pytest.raises(ValueError, match="controllable"):
            PlantModel(
                A=np.diag([0.5, 0.7]),
                B=np.array([[1.0], [0.0]]),
                B_d=np.eye(2)[:, :1],
            )


class TestSampling:
    def test_truncation_bound_respected(self):
        rng = make_run_rng(11)
        samples = sample_truncated_normal(0.1, 0.1, rng, size=5000)
        assert np.max(np.abs(samples)) <= 0.1

    def test_zero_bound_degenerates(self):
        rng = make_run_rng(11)
        assert sample_truncated_normal(0.1, 0.0, rng) == 0.0
        samples = sample_truncated_normal(0.0, 0.1, rng, size=(3, 2))
        assert samples.shape == (3, 2)
        assert np.all(samples == 0.0)

    def test_substreams_differ_and_reproduce(self):
        a1 = make_run_rng(5, 0).normal(size=4)
        a2 = make_run_rng(5, 0).normal(size=4)
        b = make_run_rng(5, 1).normal(size=4)
        np.testing.assert_array_equal(a1, a2)
        assert not np.allclose(a1, b)

    def test_bank_shape(self):
        bank = sample_disturbance_bank(FULL_NOISE, 7, 10, 1, make_run_rng(2))
        assert bank.shape == (7, 10, 1)
        assert np.max(np.abs(bank)) <= FULL_NOISE.d_bar


class TestOfflineData:
    def test_generates_persistently_exciting_record(self):
        plant = double_mass_spring_damper()
        data = generate_offline_data(
            plant,
            50,
            (np.array([-1.0]), np.array([1.0])),
            FULL_NOISE,
            make_run_rng(1234, 0),
            horizon=10,
        )
        assert data.N == 50
        assert np.max(np.abs(data.u)) <= 1.0

    def test_too_short_record_fails(self):
        plant = double_mass_spring_damper()
        with pytest.raises(ExcitationError):
            generate_offline_data(
                plant,
                12,
                (np.array([-1.0]), np.array([1.0])),
                FULL_NOISE,
                make_run_rng(0),
                horizon=10,
                max_attempts=2,
            )

    def test_perturb_keeps_inputs_exact(self):
        plant = double_mass_spring_damper()
        data = generate_offline_data(
            plant,
            50,
            (np.array([-1.0]), np.array([1.0])),
            FULL_NOISE,
            make_run_rng(1234, 0),
            horizon=10,
        )
        data.disturbance_bank = sample_disturbance_bank(
            FULL_NOISE, 20, 10, 1, make_run_rng(1)
        )
        noisy = perturb_data(data, FULL_NOISE, make_run_rng(7))
        np.testing.assert_array_equal(noisy.u, data.u)
        assert np.max(np.abs(noisy.x - data.x)) <= FULL_NOISE.mu_bar
        assert np.max(np.abs(noisy.x - data.x)) > 0.0
        assert np.max(np.abs(noisy.disturbance_bank - data.disturbance_bank)) > 0


@pytest.mark.slow
class TestClosedLoopBenchmark:
    def test_single_run_feasible_and_decaying(self, benchmark):
        plant = double_mass_spring_damper()
        records = run_closed_loop(
            plant,
            benchmark.spec,
            np.array([np.pi / 2, np.pi / 2, 0.0, 0.0]),
            50,
            FULL_NOISE,
            make_run_rng(2024, 0),
            problem=benchmark.problem,
        )
        assert len(records) == 50
        assert all(r.ocp_status == OPTIMAL for r in records)
        assert all(not r.violation_mask.any() for r in records)
        assert all(np.max(np.abs(r.u)) <= 1.0 + 1e-9 for r in records)
        early = np.linalg.norm(records[0].x)
        late = np.linalg.norm(records[-1].x)
        assert late < 0.25 * early

    def test_determinism_bit_identical(self, benchmark):
        plant = double_mass_spring_damper()
        x0 = np.array([np.pi / 2, np.pi / 2, 0.0, 0.0])
        runs = [
            run_closed_loop(
                plant,
                benchmark.spec,
                x0,
                10,
                FULL_NOISE,
                make_run_rng(99, 0),
                problem=benchmark.problem,
            )
            for _ in range(2)
        ]
        for r1, r2 in zip(*runs):
            np.testing.assert_array_equal(r1.x, r2.x)
            np.testing.assert_array_equal(r1.u, r2.u)
            assert r1.stage_cost_true == r2.stage_cost_true

    def test_measurement_error_stays_in_tube(self, benchmark):
        plant = double_mass_spring_damper()
        records = run_closed_loop(
            plant,
            benchmark.spec,
            np.array([0.5, -0.5, 0.1, 0.0]),
            20,
            FULL_NOISE,
            make_run_rng(5, 0),
            problem=benchmark.problem,
        )
        tube0 = noise_tube_sets(benchmark.spec.rep, benchmark.config.noise_set)[0]
        for r in records:
            assert tube0.contains(r.x_hat - r.x, tol=1e-9)

    def test_validates_steps_and_state_set(self, benchmark):
        plant = double_mass_spring_damper()
        with pytest.raises(ValueError, match="steps"):
            run_closed_loop(
                plant,
                benchmark.spec,
                np.zeros(4),
                0,
                FULL_NOISE,
                make_run_rng(0),
            )


@pytest.mark.slow
class TestMonteCarlo:
    def test_single_run_stats_conventions(self, benchmark, tmp_path):
        plant = double_mass_spring_damper()
        stats = monte_carlo(
            plant,
            benchmark.spec,
            np.array([0.3, 0.3, 0.0, 0.0]),
            1,
            5,
            FULL_NOISE,
            seed=2024,
            out_dir=tmp_path,
            problem=benchmark.problem,
        )
        assert isinstance(stats, MonteCarloStats)
        assert stats.runs == 1
        assert stats.std_cost_true == 0.0
        assert stats.mean_cost_true == pytest.approx(stats.median_cost_true)
        assert (tmp_path / "run_0000.csv").exists()
        assert (tmp_path / "summary.csv").exists()

    def test_runs_reproduce_run_closed_loop(self, benchmark):
        plant = double_mass_spring_damper()
        x0 = np.array([0.4, -0.2, 0.0, 0.1])
        stats = monte_carlo(
            plant,
            benchmark.spec,
            x0,
            3,
            4,
            FULL_NOISE,
            seed=77,
            problem=benchmark.problem,
        )
        records = run_closed_loop(
            plant,
            benchmark.spec,
            x0,
            4,
            FULL_NOISE,
            make_run_rng(77, 1),
            problem=benchmark.problem,
        )
        total = sum(r.stage_cost_true for r in records)
        assert stats.total_costs_true[1] == pytest.approx(total, rel=1e-12)

    def test_summary_dict_roundtrips(self, benchmark):
        plant = double_mass_spring_damper()
        stats = monte_carlo(
            plant,
            benchmark.spec,
            np.zeros(4),
            2,
            3,
            ZERO_NOISE,
            seed=1,
            problem=benchmark.problem,
        )
        payload = stats.to_dict()
        assert payload["runs"] == 2
        assert payload["aborted_runs"] == []
        assert math.isfinite(payload["mean_cost_true"])


class TestCsvSchema:
    def _records(self, benchmark):
        plant = double_mass_spring_damper()
        return run_closed_loop(
            plant,
            benchmark.spec,
            np.array([0.2, 0.2, 0.0, 0.0]),
            3,
            FULL_NOISE,
            make_run_rng(8, 0),
            problem=benchmark.problem,
        )

    @pytest.mark.slow
    def test_run_csv_roundtrip_exact(self, benchmark, tmp_path):
        records = self._records(benchmark)
        path = tmp_path / "run.csv"
        write_run_csv(path, records)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(records)
        for row, rec in zip(rows, records):
            assert int(row["k"]) == rec.k
            for i in range(4):
                assert float(row[f"x{i + 1}"]) == rec.x[i]
                assert float(row[f"xhat{i + 1}"]) == rec.x_hat[i]
            assert float(row["u1"]) == rec.u[0]
            assert float(row["d1"]) == rec.d[0]
            assert float(row["stage_cost_true"]) == rec.stage_cost_true
            assert row["ocp_status"] == rec.ocp_status
            assert row["violation_mask"] == "".join(
                "1" if b else "0" for b in rec.violation_mask
            )

    @pytest.mark.slow
    def test_rewrite_is_byte_identical(self, benchmark, tmp_path):
        records = self._records(benchmark)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_run_csv(p1, records)
        write_run_csv(p2, records)
        assert Path(p1).read_bytes() == Path(p2).read_bytes()
