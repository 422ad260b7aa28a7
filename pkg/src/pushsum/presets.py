"""Built-in scenario presets for one-command reproduction of the benchmark
experiments: small-network convergence under three randomization horizons,
the epsilon-rate sweep, and the 1000-agent scalability run."""

from __future__ import annotations

from .engine import ScenarioConfig
from .errors import ConfigurationError
from .graphs import builtin_schedule
from .protocol import ProtocolParams

DEFAULT_SEED = 12345

FIG3_GRID = (0.01, 0.02, 0.05, 0.1, 0.15)
FIG3_TRIALS = 1000


def _alternating5_config(name: str, big_k: int, seed: int) -> ScenarioConfig:
    return ScenarioConfig(
        params=ProtocolParams(n=5, a=-50.0, b=50.0, epsilon=0.05, big_k=big_k),
        schedule=builtin_schedule("alternating5"),
        horizon=200,
        seed=seed,
        initial_values="uniform-random",
        algorithm="confidential",
        name=name,
    )


def scenario(name: str, seed: int | None = None) -> ScenarioConfig:
    """Resolve a preset name to its scenario configuration."""
    seed = DEFAULT_SEED if seed is None else seed
    if name == "fig2_k10":
        return _alternating5_config(name, big_k=10, seed=seed)
    if name == "fig2_k20":
        return _alternating5_config(name, big_k=20, seed=seed)
    if name == "fig2_k30":
        return _alternating5_config(name, big_k=30, seed=seed)
    if name == "fig3_sweep":
        return _alternating5_config(name, big_k=10, seed=seed)
    if name == "fig7_scale":
        return ScenarioConfig(
            params=ProtocolParams(n=1000, a=-50.0, b=50.0, epsilon=0.05, big_k=10),
            schedule=builtin_schedule("ring1000"),
            horizon=3000,
            seed=seed,
            initial_values="uniform-random",
            algorithm="confidential",
            record="states-only",
            name=name,
        )
    raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")


def sweep_defaults(name: str) -> tuple[tuple[float, ...], int]:
    """Default (epsilon grid, trials) for a sweep preset."""
    if name == "fig3_sweep":
        return FIG3_GRID, FIG3_TRIALS
    return FIG3_GRID, FIG3_TRIALS


PRESET_NAMES = ("fig2_k10", "fig2_k20", "fig2_k30", "fig3_sweep", "fig7_scale")
