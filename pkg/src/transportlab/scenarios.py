"""Named, fully populated simulation configurations.

=================  ====  ========================  ==============================
name               d     flux                      coupling
=================  ====  ========================  ==============================
linear_rotation    2     identity                  prescribed solid_rotation
swarm_poisson      1     logistic, n_bar = 1       Poisson, g(n) = n
chemo_hj           1     logistic, n_bar = 1       Hamilton-Jacobi, alpha = 0.1
shock_1d           1     logistic, n_bar = 1       prescribed compressive_sine
=================  ====  ========================  ==============================

All use a period ``L = 8``. ``linear_rotation`` runs with ``epsilon = 0``
(smooth data, short horizon); the others are viscous. ``shock_1d`` starts
from the constant 0.3 and the compressive flow piles mass into a plateau
bounded by two steep viscous fronts.
"""

from __future__ import annotations

import dataclasses
from typing import Any, Callable

from .errors import ConfigError
from .model import (
    FluxFunction,
    GaussianBump,
    Grid,
    HamiltonJacobi,
    Indicator,
    Poisson,
    Prescribed,
    SimConfig,
    SourceFunction,
)

__all__ = ["SCENARIOS", "scenario", "scenario_names"]

LENGTH = 8.0


def _linear_rotation(n: int) -> SimConfig:
    c = LENGTH / 2
    return SimConfig(
        grid=Grid(2, n, LENGTH),
        flux=FluxFunction("identity"),
        coupling=Prescribed("solid_rotation", {"omega": 1.0}),
        epsilon=0.0,
        t_final=1.0,
        cfl_factor=0.3,
        initial_data=GaussianBump((c + 1.5, c), width=0.75, amplitude=1.0),
    )


def _swarm_poisson(n: int) -> SimConfig:
    return SimConfig(
        grid=Grid(1, n, LENGTH),
        flux=FluxFunction("logistic", 1.0),
        coupling=Poisson(SourceFunction.identity()),
        epsilon=0.04,
        t_final=1.0,
        cfl_factor=0.3,
        initial_data=GaussianBump((LENGTH / 2,), width=1.0, amplitude=0.5),
    )


def _chemo_hj(n: int) -> SimConfig:
    return SimConfig(
        grid=Grid(1, n, LENGTH),
        flux=FluxFunction("logistic", 1.0),
        coupling=HamiltonJacobi(SourceFunction.identity(), alpha=0.1, fp_tol=1e-10, fp_maxiter=200),
        epsilon=0.04,
        t_final=1.0,
        cfl_factor=0.3,
        initial_data=GaussianBump((LENGTH / 2,), width=1.0, amplitude=0.5),
    )


def _shock_1d(n: int) -> SimConfig:
    return SimConfig(
        grid=Grid(1, n, LENGTH),
        flux=FluxFunction("logistic", 1.0),
        coupling=Prescribed("compressive_sine", {"amplitude": 4.0}),
        epsilon=0.2,
        t_final=1.0,
        cfl_factor=0.3,
        initial_data=Indicator(((0.0, LENGTH),), amplitude=0.3),
    )


SCENARIOS: dict[str, tuple[Callable[[int], SimConfig], int]] = {
    "linear_rotation": (_linear_rotation, 128),
    "swarm_poisson": (_swarm_poisson, 256),
    "chemo_hj": (_chemo_hj, 256),
    "shock_1d": (_shock_1d, 512),
}


def scenario_names() -> list[str]:
    return list(SCENARIOS)


def scenario(name: str, n_per_axis: int | None = None, **overrides: Any) -> SimConfig:
    """Registry lookup; ``overrides`` replace top-level :class:`SimConfig` fields."""
    try:
        build, default_n = SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}", "scenario") from None
    config = build(n_per_axis or default_n)
    if overrides:
        bad = set(overrides) - {f.name for f in dataclasses.fields(SimConfig)}
        if bad:
            raise ConfigError(f"unknown override {sorted(bad)[0]!r}", sorted(bad)[0])
        config = dataclasses.replace(config, **overrides)
    return config
