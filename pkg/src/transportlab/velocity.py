"""Velocity fields from the density.

Four couplings are supported: spectral Poisson, Picard iteration for the
Hamilton-Jacobi variant, FFT convolution, and closed-form prescribed fields.
On the torus ``-lap phi = g(n)`` is only solvable after removing the mean of
``g(n)``; the zero-mean gauge is used throughout and the removed constant is
reported. The velocity does not depend on the gauge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special

from . import spectral
from .errors import ConfigError, HJDivergence
from .model import (
    Convolution,
    CouplingSpec,
    Grid,
    HamiltonJacobi,
    Poisson,
    Prescribed,
    ScalarField,
    SourceFunction,
    VelocityField,
)

__all__ = [
    "PoissonSolveReport",
    "HJSolution",
    "poisson_velocity",
    "hj_solve",
    "hj_velocity",
    "hj_residual",
    "convolution_velocity",
    "prescribed_velocity",
    "coupled_velocity",
    "PRESCRIBED_FIELDS",
]


@dataclass(frozen=True)
class PoissonSolveReport:
    mean_subtracted: float
    residual_linf: float


def _velocity_from_potential(phi: np.ndarray, grid: Grid) -> VelocityField:
    return VelocityField(grid, tuple(-g for g in spectral.spectral_gradient(phi, grid)))


def poisson_potential(n: ScalarField, g: SourceFunction) -> tuple[np.ndarray, PoissonSolveReport]:
    grid = n.grid
    gn = g(n.values)
    mean = float(gn.mean())
    rhs = gn - mean
    phi = spectral.inverse_neg_laplacian(rhs, grid)
    residual = spectral.spectral_laplacian(phi, grid) + rhs
    return phi, PoissonSolveReport(mean, float(np.abs(residual).max()))


def poisson_velocity(n: ScalarField, g: SourceFunction) -> tuple[VelocityField, PoissonSolveReport]:
    """``a = -grad phi`` where ``-lap phi = g(n) - <g(n)>``, all spectral.

    With this sign convention ``div a = g(n) - <g(n)>`` (up to the Nyquist
    mode, which first derivatives discard).
    """
    phi, report = poisson_potential(n, g)
    return _velocity_from_potential(phi, n.grid), report


@dataclass(frozen=True, eq=False)
class HJSolution:
    phi: np.ndarray
    velocity: VelocityField
    iterations: int
    changes: tuple[float, ...]
    residual_linf: float


def hj_residual(phi: np.ndarray, n: ScalarField, g: SourceFunction, alpha: float) -> np.ndarray:
    """Residual of ``-lap phi + alpha |grad phi|^2 = g(n) - c``.

    ``c = <g(n) - alpha |grad phi|^2>`` is the constant that makes the torus
    problem solvable.
    """
    grid = n.grid
    grad_sq = sum(d * d for d in spectral.spectral_gradient(phi, grid))
    source = g(n.values) - alpha * grad_sq
    return -spectral.spectral_laplacian(phi, grid) - (source - source.mean())


def hj_solve(
    n: ScalarField,
    g: SourceFunction,
    alpha: float,
    fp_tol: float = 1e-10,
    fp_maxiter: int = 200,
) -> HJSolution:
    """Picard iteration ``phi <- (-lap)^{-1}[g(n) - alpha |grad phi|^2 - mean]``.

    Starts from the Poisson potential and stops once the sup-norm change of
    ``phi`` between iterates is at most ``fp_tol``.
    """
    if alpha < 0:
        raise ConfigError(f"must be >= 0, got {alpha}", "alpha")
    grid = n.grid
    gn = g(n.values)
    phi, _ = poisson_potential(n, g)
    changes: list[float] = []
    for it in range(1, int(fp_maxiter) + 1):
        # a diverging iterate overflows; the non-finite change ends the loop
        with np.errstate(over="ignore", invalid="ignore"):
            grad_sq = sum(d * d for d in spectral.spectral_gradient(phi, grid))
            new = spectral.inverse_neg_laplacian(gn - alpha * grad_sq, grid)
            change = float(np.abs(new - phi).max())
        changes.append(change)
        phi = new
        if not math.isfinite(change):
            break
        if change <= fp_tol:
            res = float(np.abs(hj_residual(phi, n, g, alpha)).max())
            return HJSolution(phi, _velocity_from_potential(phi, grid), it, tuple(changes), res)
    raise HJDivergence(
        f"HJ Picard iteration did not reach fp_tol={fp_tol:g} in {len(changes)} iterations "
        f"(last change {changes[-1]:.3e}, alpha={alpha:g})",
        last_change=changes[-1],
        iterations=len(changes),
    )


def hj_velocity(
    n: ScalarField,
    g: SourceFunction,
    alpha: float,
    fp_tol: float = 1e-10,
    fp_maxiter: int = 200,
) -> tuple[VelocityField, int]:
    sol = hj_solve(n, g, alpha, fp_tol, fp_maxiter)
    return sol.velocity, sol.iterations


def convolution_velocity(n: ScalarField, kernel_components: Sequence) -> VelocityField:
    """``a_i(x) = sum_y K_i(x - y) n(y) dx^d`` with periodic wraparound.

    Kernels are indexed by displacement: entry ``j`` holds ``K(j * dx)``.
    """
    grid = n.grid
    if len(kernel_components) != grid.dim:
        raise ConfigError(f"need {grid.dim} kernel components", "components")
    nhat = np.fft.rfftn(n.values)
    comps = []
    for k in kernel_components:
        if isinstance(k, ScalarField):
            if k.grid != grid:
                raise ConfigError("kernel sampled on a different grid", "components")
            k = k.values
        k = np.asarray(k, dtype=float)
        if k.shape != grid.shape:
            raise ConfigError("kernel shape does not match grid", "components")
        conv = np.fft.irfftn(np.fft.rfftn(k) * nhat, s=grid.shape, axes=tuple(range(grid.dim)))
        comps.append(conv * grid.cell_volume)
    return VelocityField(grid, tuple(comps))


# --------------------------------------------------------------------------
# Prescribed fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PrescribedDef:
    dim: int
    defaults: Mapping[str, float]
    evaluate: Callable
    # closed-form sup|div a| where available
    div_sup: Callable | None = None
    # analytic d/dx for d=1 fields; maps (x array, grid, params) -> a'(x)
    derivative: Callable | None = None
    doc: str = ""


def _solid_rotation(grid: Grid, t: float, p: Mapping[str, float]):
    ell = grid.length / (2.0 * np.pi)
    cx = p.get("cx", 0.5 * grid.length)
    cy = p.get("cy", 0.5 * grid.length)
    x, y = grid.mesh()
    w = p["omega"]
    return (-w * ell * np.sin((y - cy) / ell), w * ell * np.sin((x - cx) / ell))


def _shear(grid: Grid, t: float, p: Mapping[str, float]):
    x, y = grid.mesh()
    return (p["speed"] * np.sin(2.0 * np.pi * y / grid.length), np.zeros(grid.shape))


def _compressive_sine(grid: Grid, t: float, p: Mapping[str, float]):
    (x,) = grid.mesh()
    return (p["amplitude"] * np.sin(2.0 * np.pi * x / grid.length),)


def _compressive_sine_derivative(x, grid: Grid, p):
    kappa = 2.0 * np.pi / grid.length
    return p["amplitude"] * kappa * np.cos(kappa * x)


def _w1p_shape(x, grid: Grid, p):
    ell = grid.length / (2.0 * np.pi)
    x0 = p.get("x0", 0.5 * grid.length)
    s = np.sin((x - x0) / ell)
    return s, ell


def _w1p_singular(grid: Grid, t: float, p: Mapping[str, float]):
    (x,) = grid.mesh()
    beta = p["beta"]
    s, ell = _w1p_shape(x, grid, p)
    return (-p["amplitude"] * ell**beta * np.sign(s) * np.abs(s) ** beta,)


def _w1p_singular_derivative(x, grid: Grid, p):
    beta = p["beta"]
    s, ell = _w1p_shape(x, grid, p)
    c = np.cos((x - p.get("x0", 0.5 * grid.length)) / ell)
    with np.errstate(divide="ignore"):
        return -p["amplitude"] * beta * ell ** (beta - 1.0) * np.abs(s) ** (beta - 1.0) * c


def w1p_singular_gradient_norm_p(grid: Grid, p: float, beta: float = 0.5, amplitude: float = 1.0) -> float:
    """Closed form of ``int_torus |a'|^p`` for ``w1p_singular``; ``inf`` when ``p >= 1/(1-beta)``."""
    expo = p * (beta - 1.0)
    if expo <= -1.0:
        return math.inf
    ell = grid.length / (2.0 * np.pi)
    return float(
        (amplitude * beta) ** p * ell ** (expo + 1.0) * 2.0 * special.beta((expo + 1.0) / 2.0, (p + 1.0) / 2.0)
    )


PRESCRIBED_FIELDS: dict[str, PrescribedDef] = {
    "solid_rotation": PrescribedDef(
        dim=2,
        defaults={"omega": 1.0},
        evaluate=_solid_rotation,
        div_sup=lambda grid, p: 0.0,
        doc="periodic vortex; rigid rotation with rate omega near (cx, cy), divergence-free",
    ),
    "shear": PrescribedDef(
        dim=2,
        defaults={"speed": 1.0},
        evaluate=_shear,
        div_sup=lambda grid, p: 0.0,
        doc="a = (speed sin(2 pi y / L), 0), divergence-free",
    ),
    "compressive_sine": PrescribedDef(
        dim=1,
        defaults={"amplitude": 1.0},
        evaluate=_compressive_sine,
        div_sup=lambda grid, p: abs(p["amplitude"]) * 2.0 * np.pi / grid.length,
        derivative=_compressive_sine_derivative,
        doc="a = A sin(2 pi x / L); flow converges at x = L/2",
    ),
    "w1p_singular": PrescribedDef(
        dim=1,
        defaults={"beta": 0.5, "amplitude": 1.0},
        evaluate=_w1p_singular,
        derivative=_w1p_singular_derivative,
        doc="a = -A l^beta sgn(s)|s|^beta, s = sin((x-x0)/l): compressive |x-x0|^beta cusp at x0",
    ),
}


def _resolve_params(name: str, params: Mapping[str, float] | None) -> dict[str, float]:
    if name not in PRESCRIBED_FIELDS:
        raise ConfigError(
            f"unknown prescribed field {name!r}; known: {sorted(PRESCRIBED_FIELDS)}", "name"
        )
    spec = PRESCRIBED_FIELDS[name]
    allowed = set(spec.defaults) | {"cx", "cy"} if spec.dim == 2 else set(spec.defaults) | {"x0"}
    params = dict(params or {})
    unknown = set(params) - allowed
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)} for {name}", sorted(unknown)[0])
    out = dict(spec.defaults)
    out.update({k: float(v) for k, v in params.items()})
    if name == "w1p_singular" and not (0.0 < out["beta"] < 1.0):
        raise ConfigError(f"beta must lie in (0, 1), got {out['beta']}", "beta")
    return out


def prescribed_velocity(
    name: str, t: float, grid: Grid, params: Mapping[str, float] | None = None
) -> VelocityField:
    """Evaluate a registry field at the grid nodes at time ``t``."""
    p = _resolve_params(name, params)
    spec = PRESCRIBED_FIELDS[name]
    if spec.dim != grid.dim:
        raise ConfigError(f"{name} is defined for d={spec.dim}, grid has d={grid.dim}", "name")
    return VelocityField(grid, spec.evaluate(grid, t, p))


def prescribed_div_sup(name: str, grid: Grid, params: Mapping[str, float] | None = None) -> float | None:
    p = _resolve_params(name, params)
    fn = PRESCRIBED_FIELDS[name].div_sup
    return None if fn is None else float(fn(grid, p))


def prescribed_derivative(name: str, x, grid: Grid, params: Mapping[str, float] | None = None):
    p = _resolve_params(name, params)
    fn = PRESCRIBED_FIELDS[name].derivative
    if fn is None:
        raise ConfigError(f"{name} has no closed-form derivative", "name")
    return fn(np.asarray(x, dtype=float), grid, p)


def coupled_velocity(coupling: CouplingSpec, n: ScalarField, t: float) -> VelocityField:
    """Dispatch on the coupling variant."""
    if isinstance(coupling, Prescribed):
        return prescribed_velocity(coupling.name, t, n.grid, coupling.params)
    if isinstance(coupling, HamiltonJacobi):
        return hj_velocity(n, coupling.g, coupling.alpha, coupling.fp_tol, coupling.fp_maxiter)[0]
    if isinstance(coupling, Poisson):
        return poisson_velocity(n, coupling.g)[0]
    if isinstance(coupling, Convolution):
        return convolution_velocity(n, coupling.components)
    raise ConfigError(f"unsupported coupling {type(coupling).__name__}", "coupling")
