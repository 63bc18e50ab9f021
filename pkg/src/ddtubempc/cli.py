"""Command-line pipeline: data generation, synthesis, simulation, reports.

Exit codes: 0 success, 2 configuration/validation problem, 3 synthesis
failure, 4 simulation abort.  All randomness flows from configured seeds;
re-running any command with identical inputs reproduces identical files.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .behavior import BehaviorError
from .config import ConfigError, RunConfig, load_config
from .ocp import SOLVER_FAILURE
from .sim import (
    generate_offline_data,
    make_run_rng,
    monte_carlo,
    perturb_data,
    run_closed_loop,
    sample_disturbance_bank,
    write_run_csv,
)
from .storage import (
    StorageError,
    load_controller,
    load_data,
    save_controller,
    save_data,
)
from .synthesis import ConfigurationError, SynthesisError, synthesize

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 2
EXIT_SYNTHESIS = 3
EXIT_SIMULATION = 4

MCSTATS_FORMAT = "ddtubempc-mcstats"


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_run_config(config_path, seed, runs, noisy_data, cumulative_tubes):
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    if seed is not None:
        cfg.data_seed = seed
        cfg.sim_seed = seed
    if runs is not None:
        if runs < 1:
            _fail(EXIT_VALIDATION, "runs must be >= 1")
        cfg.runs = runs
    if noisy_data:
        cfg.noisy_data = True
    if cumulative_tubes:
        cfg.cumulative_tubes = True
    return cfg


def _out_dir(cfg: RunConfig, out) -> Path:
    path = Path(out) if out is not None else cfg.output_dir
    path.mkdir(parents=True, exist_ok=True)
    return path


config_option = click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(),
    help="YAML run configuration.",
)
out_option = click.option(
    "--out", default=None, type=click.Path(), help="Artifact directory."
)
seed_option = click.option(
    "--seed", default=None, type=int, help="Override the configured seeds."
)


@click.group()
@click.option("--verbose", is_flag=True, help="Debug-level logging.")
def main(verbose):
    """Data-driven tube-based stochastic MPC pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("generate-data")
@config_option
@out_option
@seed_option
def cmd_generate_data(config_path, out, seed):
    """Record an open-loop experiment plus a disturbance sample bank."""
    cfg = _load_run_config(config_path, seed, None, False, False)
    out_dir = _out_dir(cfg, out)
    rng = make_run_rng(cfg.data_seed, 0)
    try:
        data = generate_offline_data(
            cfg.plant,
            cfg.data_steps,
            (-cfg.input_bound, cfg.input_bound),
            cfg.noise,
            rng,
            horizon=cfg.horizon,
        )
    except BehaviorError as exc:
        _fail(
            EXIT_VALIDATION,
            f"{exc}; increase data.steps, widen the input box, or enable "
            "a nonzero disturbance bound so both channels are excited",
        )
    except ValueError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    data.disturbance_bank = sample_disturbance_bank(
        cfg.noise,
        n_samples=cfg.n_scenarios,
        horizon=cfg.horizon,
        n_d=cfg.plant.n_d,
        rng=rng,
    )
    target = out_dir / "data.json"
    save_data(data, target)
    order = cfg.horizon + cfg.plant.n_x + 1
    click.echo(
        f"recorded {data.N} samples; input and disturbance sequences "
        f"persistently exciting of order {order}"
    )
    click.echo(
        f"disturbance bank: {data.disturbance_bank.shape[0]} sequences "
        f"of length {data.disturbance_bank.shape[1]}"
    )
    click.echo(f"wrote {target}")


@main.command("synthesize")
@config_option
@out_option
@seed_option
@click.option(
    "--data",
    "data_path",
    default=None,
    type=click.Path(),
    help="Dataset file (default: <out>/data.json).",
)
@click.option(
    "--noisy-data",
    is_flag=True,
    help="Perturb the record with measurement noise and synthesize with "
    "regularization and robust margins.",
)
@click.option(
    "--cumulative-tubes",
    is_flag=True,
    help="Use nested (running) tightening across the horizon.",
)
def cmd_synthesize(
    config_path, out, seed, data_path, noisy_data, cumulative_tubes
):
    """Run the offline pipeline and freeze a controller."""
    cfg = _load_run_config(config_path, seed, None, noisy_data, cumulative_tubes)
    out_dir = _out_dir(cfg, out)
    source = Path(data_path) if data_path else out_dir / "data.json"
    try:
        data = load_data(source)
    except StorageError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    if cfg.noisy_data:
        noise_rng = make_run_rng(cfg.data_seed, 1)
        data = perturb_data(data, cfg.noise, noise_rng)
        click.echo("offline record perturbed with measurement noise")
    try:
        spec, report = synthesize(data, cfg.synthesis_config())
    except ConfigurationError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    except SynthesisError as exc:
        _fail(
            EXIT_SYNTHESIS,
            f"{exc}; revisit the uncertainty bounds or probability range",
        )
    controller_path = out_dir / "controller.json"
    save_controller(spec, controller_path)
    report_path = out_dir / "synthesis_report.json"
    with open(report_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(f"discard count r = {report.discard_count}")
    for name, secs in report.stage_seconds.items():
        click.echo(f"  stage {name}: {secs:.2f} s")
    click.echo(
        f"tightened sets: {len(spec.X_hat)} state stages, "
        f"{len(spec.U_hat)} input stages"
    )
    click.echo(f"wrote {controller_path} and {report_path}")


@main.command("simulate")
@config_option
@out_option
@seed_option
@click.option(
    "--controller",
    "controller_path",
    default=None,
    type=click.Path(),
    help="Controller file (default: <out>/controller.json).",
)
@click.option("--steps", default=None, type=int, help="Override step count.")
def cmd_simulate(config_path, out, seed, controller_path, steps):
    """One closed-loop run; writes a trajectory CSV."""
    cfg = _load_run_config(config_path, seed, None, False, False)
    out_dir = _out_dir(cfg, out)
    source = Path(controller_path) if controller_path else out_dir / "controller.json"
    try:
        spec = load_controller(source)
    except StorageError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    n_steps = steps if steps is not None else cfg.sim_steps
    if n_steps < 1:
        _fail(EXIT_VALIDATION, "steps must be >= 1")
    rng = make_run_rng(cfg.sim_seed, 0)
    records = run_closed_loop(
        cfg.plant, spec, cfg.x0, n_steps, cfg.noise, rng
    )
    target = out_dir / "trajectory.csv"
    write_run_csv(target, records)
    n_infeasible = sum(r.ocp_status == "infeasible" for r in records)
    click.echo(
        f"{len(records)} steps logged, {n_infeasible} infeasible; "
        f"wrote {target}"
    )
    if records[-1].ocp_status == SOLVER_FAILURE:
        _fail(
            EXIT_SIMULATION,
            f"run aborted at step {records[-1].k}: numerical failure in "
            "the program backend (partial log written)",
        )


@main.command("montecarlo")
@config_option
@out_option
@seed_option
@click.option(
    "--controller",
    "controller_path",
    default=None,
    type=click.Path(),
    help="Controller file (default: <out>/controller.json).",
)
@click.option("--runs", default=None, type=int, help="Override run count.")
@click.option(
    "--noisy-data",
    is_flag=True,
    help="Label the resulting statistics as noisy-mode (for reports).",
)
def cmd_montecarlo(config_path, out, seed, controller_path, runs, noisy_data):
    """Monte-Carlo study; writes per-run CSVs, a summary, and statistics."""
    cfg = _load_run_config(config_path, seed, runs, noisy_data, False)
    out_dir = _out_dir(cfg, out)
    source = Path(controller_path) if controller_path else out_dir / "controller.json"
    try:
        spec = load_controller(source)
    except StorageError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    stats = monte_carlo(
        cfg.plant,
        spec,
        cfg.x0,
        cfg.runs,
        cfg.sim_steps,
        cfg.noise,
        cfg.sim_seed,
        out_dir=out_dir / "runs",
    )
    payload = {
        "format": MCSTATS_FORMAT,
        "version": 1,
        "x0": [float(v) for v in cfg.x0],
        "data_mode": "noisy" if cfg.noisy_data else "exact",
        **stats.to_dict(),
    }
    stats_path = out_dir / "mc_stats.json"
    with open(stats_path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(
        f"{stats.runs} runs x {stats.steps} steps: "
        f"mean cost {stats.mean_cost_true:.1f} "
        f"(std {stats.std_cost_true:.1f}), "
        f"infeasible fraction {stats.infeasible_fraction:.4f}"
    )
    click.echo(f"wrote {stats_path} and per-run CSVs under {out_dir / 'runs'}")
    if stats.aborted_runs:
        _fail(
            EXIT_SIMULATION,
            f"{len(stats.aborted_runs)} run(s) aborted: {stats.aborted_runs}",
        )


@main.command("report")
@click.argument("stats_files", nargs=-1, required=True, type=click.Path())
@click.option(
    "--out",
    default=None,
    type=click.Path(),
    help="Also write the table as CSV here.",
)
def cmd_report(stats_files, out):
    """Comparison table over Monte-Carlo statistics files.

    Rows are grouped by initial state and data mode; groups with several
    files (for example different offline-noise realizations) get an
    aggregate row averaging their statistics.
    """
    entries = []
    for path in stats_files:
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            _fail(EXIT_VALIDATION, f"cannot read {path}: {exc}")
        if payload.get("format") != MCSTATS_FORMAT:
            _fail(EXIT_VALIDATION, f"{path} is not a statistics file")
        if payload.get("version") != 1:
            _fail(EXIT_VALIDATION, f"{path}: unsupported schema version")
        entries.append((Path(path).name, payload))

    header = (
        "source",
        "initial state",
        "data",
        "runs",
        "infeasible %",
        "mean cost",
        "std",
    )
    rows = []
    groups: dict[tuple, list] = {}
    for name, p in entries:
        x0 = tuple(round(v, 6) for v in p["x0"])
        key = (x0, p["data_mode"])
        groups.setdefault(key, []).append(p)
        rows.append(
            (
                name,
                "(" + ", ".join(f"{v:.4g}" for v in p["x0"]) + ")",
                p["data_mode"],
                str(p["runs"]),
                f"{100 * p['infeasible_fraction']:.2f}",
                f"{p['mean_cost_true']:.1f}",
                f"{p['std_cost_true']:.1f}",
            )
        )
    for (x0, mode), members in groups.items():
        if len(members) < 2:
            continue
        rows.append(
            (
                f"aggregate ({len(members)} files)",
                "(" + ", ".join(f"{v:.4g}" for v in x0) + ")",
                mode,
                str(sum(m["runs"] for m in members)),
                f"{100 * np.mean([m['infeasible_fraction'] for m in members]):.2f}",
                f"{np.mean([m['mean_cost_true'] for m in members]):.1f}",
                f"{np.mean([m['std_cost_true'] for m in members]):.1f}",
            )
        )
    widths = [
        max(len(header[i]), max((len(r[i]) for r in rows), default=0))
        for i in range(len(header))
    ]
    line = "  ".join(h.ljust(widths[i]) for i, h in enumerate(header))
    click.echo(line)
    click.echo("-" * len(line))
    for r in rows:
        click.echo("  ".join(r[i].ljust(widths[i]) for i in range(len(r))))
    if out is not None:
        import csv as _csv

        with open(out, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
