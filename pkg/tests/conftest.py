"""Shared fixtures: synthesized controllers for the two-mass benchmark.

Synthesis of the benchmark controller is expensive (minutes), so the two
controller variants used across test modules are session-scoped: one with
the published uncertainty levels, one with both uncertainty sets zeroed
(the offline data still carries disturbances so the behavioral
representation stays well-posed).  Built controllers are additionally
cached on disk, keyed by a fingerprint of the source modules that
determine the result, so repeated test sessions skip the rebuild.
"""

import hashlib
import pickle
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from ddtubempc.polytope import HPolytope
from ddtubempc.sim import (
    NoiseConfig,
    double_mass_spring_damper,
    generate_offline_data,
    make_run_rng,
    sample_disturbance_bank,
)
from ddtubempc.synthesis import SynthesisConfig, synthesize

STATE_BOUND = np.array([2 * np.pi, 2 * np.pi, 0.5 * np.pi, 0.5 * np.pi])
INPUT_BOUND = np.array([1.0])
HORIZON = 10
BANK_SIZE = 2924


def benchmark_config(noise: NoiseConfig, **overrides) -> SynthesisConfig:
    """Synthesis configuration for the two-mass benchmark."""
    defaults = dict(
        horizon=HORIZON,
        Q=np.diag([10.0, 10.0, 1.0, 1.0]),
        R=np.array([[0.1]]),
        state_set=HPolytope.box(-STATE_BOUND, STATE_BOUND),
        input_set=HPolytope.box(-INPUT_BOUND, INPUT_BOUND),
        disturbance_set=HPolytope.box([-noise.d_bar], [noise.d_bar]),
        noise_set=HPolytope.box(
            -noise.mu_bar * np.ones(4), noise.mu_bar * np.ones(4)
        ),
    )
    defaults.update(overrides)
    return SynthesisConfig(**defaults)


def build_benchmark(
    noise: NoiseConfig,
    bank_noise: NoiseConfig | None = None,
    data_seed: int = 1234,
    offline_steps: int = 50,
    **config_overrides,
) -> SimpleNamespace:
    """Generate offline data, synthesize, and bundle everything up."""
    plant = double_mass_spring_damper()
    rng = make_run_rng(data_seed, 0)
    data = generate_offline_data(
        plant,
        offline_steps,
        (-INPUT_BOUND, INPUT_BOUND),
        NoiseConfig(
            d_bar=0.1, d_sigma=0.1, mu_bar=0.0, mu_sigma=0.0
        ),  # excite the disturbance channel; measurements stay exact
        rng,
        horizon=HORIZON,
    )
    data.disturbance_bank = sample_disturbance_bank(
        bank_noise if bank_noise is not None else noise,
        n_samples=BANK_SIZE,
        horizon=HORIZON,
        n_d=1,
        rng=rng,
    )
    config = benchmark_config(noise, **config_overrides)
    spec, report = synthesize(data, config)
    return SimpleNamespace(
        plant=plant, data=data, config=config, spec=spec, report=report
    )


_CACHE_DIR = Path(__file__).resolve().parent / ".cache"

#: Source modules whose behavior determines a synthesized controller.
_FINGERPRINT_MODULES = (
    "hankel.py",
    "polytope.py",
    "behavior.py",
    "synthesis.py",
    "sim.py",
)


def _source_fingerprint() -> str:
    src = Path(__file__).resolve().parents[1] / "src" / "ddtubempc"
    digest = hashlib.sha256()
    for name in _FINGERPRINT_MODULES:
        digest.update(name.encode())
        digest.update((src / name).read_bytes())
    return digest.hexdigest()[:16]


def cached_build(tag: str, builder) -> SimpleNamespace:
    """Build (or load) a controller bundle, cached across test sessions."""
    path = _CACHE_DIR / f"{tag}-{_source_fingerprint()}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    bundle = builder()
    _CACHE_DIR.mkdir(exist_ok=True)
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        pickle.dump(bundle, fh)
    tmp.replace(path)
    return bundle


@pytest.fixture(scope="session")
def benchmark():
    """Benchmark controller at the published uncertainty levels."""
    return cached_build("benchmark", lambda: build_benchmark(NoiseConfig()))


@pytest.fixture(scope="session")
def benchmark_certain():
    """Benchmark controller with disturbance and noise sets both {0}."""
    return cached_build(
        "benchmark-certain",
        lambda: build_benchmark(
            NoiseConfig(d_bar=0.0, d_sigma=0.0, mu_bar=0.0, mu_sigma=0.0)
        ),
    )
