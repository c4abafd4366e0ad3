"""Domain types shared by every module: grids, fields, fluxes, couplings, configs.

All objects are immutable after construction. Array payloads are copied and
flagged read-only so that a field can be handed to several consumers (or
worker processes) without defensive copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import ConfigError, FluxRangeError

__all__ = [
    "Grid",
    "ScalarField",
    "VelocityField",
    "FluxFunction",
    "SourceFunction",
    "Prescribed",
    "Poisson",
    "HamiltonJacobi",
    "Convolution",
    "CouplingSpec",
    "GaussianBump",
    "Indicator",
    "BandLimitedRandom",
    "Custom",
    "InitialData",
    "SimConfig",
    "eval_flux",
    "eval_flux_derivative",
    "initial_field",
]


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# Grid and fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform periodic lattice on the ``dim``-torus of period ``length``.

    Nodes sit at ``x_i = i * spacing``; each node is the center of a cell of
    width ``spacing``. Arrays on the grid use ``indexing='ij'`` (axis 0 is x).
    """

    dim: int
    n_per_axis: int
    length: float
    spacing: float = field(init=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.dim}", "dim")
        n = self.n_per_axis
        if not isinstance(n, (int, np.integer)) or n < 2 or (n & (n - 1)) != 0:
            raise ConfigError(f"must be a power of two >= 2, got {n}", "n_per_axis")
        if not (math.isfinite(self.length) and self.length > 4.0):
            raise ConfigError(f"torus period must exceed 4, got {self.length}", "length")
        object.__setattr__(self, "n_per_axis", int(n))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "spacing", self.length / self.n_per_axis)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.dim

    @property
    def n_points(self) -> int:
        return self.n_per_axis**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    def axis(self) -> np.ndarray:
        return np.arange(self.n_per_axis) * self.spacing

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Node coordinates, one array of shape ``self.shape`` per axis."""
        ax = self.axis()
        return tuple(np.meshgrid(*([ax] * self.dim), indexing="ij"))

    def displacement(self, center: Sequence[float]) -> tuple[np.ndarray, ...]:
        """Minimal-image displacement ``x - center`` per axis, in ``[-L/2, L/2)``."""
        L = self.length
        return tuple((x - c + 0.5 * L) % L - 0.5 * L for x, c in zip(self.mesh(), center))

    def offset_distance(self) -> np.ndarray:
        """Minimal-image norm of the displacement of every node from node 0."""
        disp = self.displacement([0.0] * self.dim)
        return np.sqrt(sum(d * d for d in disp))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real field sampled on the nodes of ``grid``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.n_points:
            raise ConfigError(
                f"field has {vals.size} values, grid needs {self.grid.n_points}", "values"
            )
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ConfigError("field contains non-finite values", "values")
        object.__setattr__(self, "values", _frozen_array(vals))

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def linf(self) -> float:
        return float(np.abs(self.values).max())

    def l2_squared(self) -> float:
        return float(np.sum(self.values**2) * self.grid.cell_volume)

    def replace(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """A vector field with ``grid.dim`` components sampled on the nodes."""

    grid: Grid
    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) != self.grid.dim:
            raise ConfigError(
                f"expected {self.grid.dim} components, got {len(comps)}", "components"
            )
        frozen = []
        for c in comps:
            c = np.asarray(c, dtype=float)
            if c.size != self.grid.n_points:
                raise ConfigError("component size does not match grid", "components")
            c = c.reshape(self.grid.shape)
            if not np.all(np.isfinite(c)):
                raise ConfigError("velocity contains non-finite values", "components")
            frozen.append(_frozen_array(c))
        object.__setattr__(self, "components", tuple(frozen))

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        return cls(grid, tuple(np.zeros(grid.shape) for _ in range(grid.dim)))

    def max_speed(self) -> float:
        """Largest component magnitude, the quantity entering the CFL number."""
        return float(max(np.abs(c).max() for c in self.components))

    def stacked(self) -> np.ndarray:
        return np.stack(self.components)


# --------------------------------------------------------------------------
# Flux and source nonlinearities
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FluxFunction:
    """The nonlinearity ``f`` of the transport term ``div(a f(n))``.

    ``kind`` is ``"identity"``, ``"logistic"`` (``f = n (1 - n/n_bar)_+``,
    zero outside ``[0, n_bar]``) or ``"tabulated"`` (piecewise-linear
    interpolation of sorted ``(xi, f(xi))`` samples).
    """

    kind: str
    n_bar: float | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "identity":
            if self.n_bar is not None or self.samples is not None:
                raise ConfigError("identity flux takes no parameters", "flux")
        elif self.kind == "logistic":
            if self.n_bar is None or not (math.isfinite(self.n_bar) and self.n_bar > 0):
                raise ConfigError(f"must be finite and > 0, got {self.n_bar}", "n_bar")
            object.__setattr__(self, "n_bar", float(self.n_bar))
        elif self.kind == "tabulated":
            s = np.asarray(self.samples, dtype=float)
            if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] < 2:
                raise ConfigError("need at least two (xi, f) pairs", "samples")
            if not np.all(np.isfinite(s)):
                raise ConfigError("non-finite sample", "samples")
            if np.any(np.diff(s[:, 0]) <= 0):
                raise ConfigError("xi values must be strictly increasing", "samples")
            if not (s[0, 0] <= 0.0 <= s[-1, 0]):
                raise ConfigError("sampled range must contain 0", "samples")
            f0 = np.interp(0.0, s[:, 0], s[:, 1])
            if abs(f0) > 1e-14 * max(1.0, np.abs(s[:, 1]).max()):
                raise ConfigError(f"f(0) must vanish, got {f0}", "samples")
            object.__setattr__(self, "samples", _frozen_array(s))
        else:
            raise ConfigError(f"unknown flux kind {self.kind!r}", "kind")

    @classmethod
    def identity(cls) -> "FluxFunction":
        return cls("identity")

    @classmethod
    def logistic(cls, n_bar: float = 1.0) -> "FluxFunction":
        return cls("logistic", n_bar=n_bar)

    @classmethod
    def tabulated(cls, samples) -> "FluxFunction":
        return cls("tabulated", samples=np.asarray(samples, dtype=float))

    @property
    def lipschitz(self) -> float:
        """Lipschitz constant of ``f``; exact for every supported kind."""
        if self.kind in ("identity", "logistic"):
            return 1.0
        xs, fs = self.samples[:, 0], self.samples[:, 1]
        return float(np.max(np.abs(np.diff(fs) / np.diff(xs))))

    def _check_range(self, xi: np.ndarray):
        if self.kind == "tabulated":
            lo, hi = self.samples[0, 0], self.samples[-1, 0]
            if np.any(xi < lo) or np.any(xi > hi):
                bad = xi[(xi < lo) | (xi > hi)].flat[0]
                raise FluxRangeError(f"xi={bad} outside sampled range [{lo}, {hi}]", "xi")

    def __call__(self, xi):
        x = np.asarray(xi, dtype=float)
        if self.kind == "identity":
            return x.copy() if x.ndim else float(x)
        if self.kind == "logistic":
            nb = self.n_bar
            out = np.where((x > 0.0) & (x < nb), x * (1.0 - x / nb), 0.0)
        else:
            self._check_range(x)
            out = np.interp(x, self.samples[:, 0], self.samples[:, 1])
        return out if out.ndim else float(out)

    def derivative(self, xi):
        """``f'``; one-sided at kinks (right at 0, left at ``n_bar`` and knots)."""
        x = np.asarray(xi, dtype=float)
        if self.kind == "identity":
            out = np.ones_like(x)
        elif self.kind == "logistic":
            nb = self.n_bar
            out = np.where((x >= 0.0) & (x <= nb), 1.0 - 2.0 * x / nb, 0.0)
        else:
            self._check_range(x)
            xs, fs = self.samples[:, 0], self.samples[:, 1]
            slopes = np.diff(fs) / np.diff(xs)
            idx = np.clip(np.searchsorted(xs, x, side="left") - 1, 0, len(slopes) - 1)
            out = slopes[idx]
        return out if out.ndim else float(out)

    def antiderivative(self, xi):
        """``F(xi) = int_0^xi f``, used by the quadratic entropy flux."""
        x = np.asarray(xi, dtype=float)
        if self.kind == "identity":
            out = 0.5 * x * x
        elif self.kind == "logistic":
            nb = self.n_bar
            c = np.clip(x, 0.0, nb)
            out = c * c / 2.0 - c**3 / (3.0 * nb)
        else:
            self._check_range(x)
            xs, fs = self.samples[:, 0], self.samples[:, 1]
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (fs[1:] + fs[:-1]) * np.diff(xs))])
            idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
            fx = np.interp(x, xs, fs)
            total = cum[idx] + 0.5 * (fs[idx] + fx) * (x - xs[idx])
            zero_idx = int(np.clip(np.searchsorted(xs, 0.0, side="right") - 1, 0, len(xs) - 2))
            base = cum[zero_idx] + 0.5 * (fs[zero_idx] + 0.0) * (0.0 - xs[zero_idx])
            out = total - base
        return out if np.ndim(out) else float(out)


def eval_flux(flux: FluxFunction, xi):
    return flux(xi)


def eval_flux_derivative(flux: FluxFunction, xi):
    return flux.derivative(xi)


@dataclass(frozen=True, eq=False)
class SourceFunction:
    """Polynomial ``g(n) = sum_j c_j n^j`` for ``j >= 1``, so ``g(0) = 0``."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs or not all(math.isfinite(c) for c in coeffs):
            raise ConfigError("need at least one finite coefficient", "coefficients")
        object.__setattr__(self, "coefficients", coeffs)

    @classmethod
    def identity(cls) -> "SourceFunction":
        return cls((1.0,))

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        out = np.zeros_like(n)
        for c in reversed(self.coefficients):
            out = (out + c) * n
        return out

    def derivative(self, n):
        n = np.asarray(n, dtype=float)
        out = np.zeros_like(n)
        for j, c in reversed(list(enumerate(self.coefficients, start=1))):
            out = out * n + j * c
        return out

    def max_abs_derivative(self, lo: float, hi: float, samples: int = 2001) -> float:
        """``max |g'|`` on ``[lo, hi]``: dense sampling plus interior critical points."""
        pts = [np.linspace(lo, hi, samples)]
        if len(self.coefficients) > 2:
            # critical points of g' are roots of g''
            d2 = [j * (j - 1) * c for j, c in enumerate(self.coefficients, start=1)][1:]
            roots = np.roots(d2[::-1]) if any(d2) else np.array([])
            real = roots[np.abs(roots.imag) < 1e-12].real
            pts.append(real[(real >= lo) & (real <= hi)])
        return float(np.max(np.abs(self.derivative(np.concatenate(pts)))))


# --------------------------------------------------------------------------
# Couplings
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prescribed:
    """Closed-form velocity from the registry in :mod:`transportlab.velocity`."""

    name: str
    params: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Poisson:
    """``a = -grad phi`` with ``-lap phi = g(n)``."""

    g: SourceFunction = field(default_factory=SourceFunction.identity)


@dataclass(frozen=True, eq=False)
class HamiltonJacobi:
    """``a = -grad phi`` with ``-lap phi + alpha |grad phi|^2 = g(n)``."""

    g: SourceFunction = field(default_factory=SourceFunction.identity)
    alpha: float = 0.0
    fp_tol: float = 1e-10
    fp_maxiter: int = 200

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ConfigError(f"must be >= 0, got {self.alpha}", "alpha")
        if not self.fp_tol > 0:
            raise ConfigError("must be > 0", "fp_tol")
        if int(self.fp_maxiter) < 1:
            raise ConfigError("must be >= 1", "fp_maxiter")


@dataclass(frozen=True, eq=False)
class Convolution:
    """``a_i = K_i * n``; one kernel array per component, displacement-indexed."""

    components: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "components", tuple(_frozen_array(c) for c in self.components)
        )


CouplingSpec = Union[Prescribed, Poisson, HamiltonJacobi, Convolution]


# --------------------------------------------------------------------------
# Initial data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianBump:
    center: tuple[float, ...]
    width: float = 1.0
    amplitude: float = 1.0


@dataclass(frozen=True)
class Indicator:
    box: tuple[tuple[float, float], ...]
    amplitude: float = 1.0


@dataclass(frozen=True)
class BandLimitedRandom:
    seed: int
    max_mode: int = 4
    amplitude: float = 1.0


@dataclass(frozen=True, eq=False)
class Custom:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))


InitialData = Union[GaussianBump, Indicator, BandLimitedRandom, Custom]


# --------------------------------------------------------------------------
# Simulation configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Everything needed to reproduce one run of the viscous equation.

    ``epsilon = 0`` drops the viscous term; that Euler limit is only meant
    for short runs with smooth data (e.g. the linear transport oracle).
    """

    grid: Grid
    flux: FluxFunction
    coupling: CouplingSpec
    epsilon: float
    t_final: float
    cfl_factor: float
    initial_data: InitialData
    output_every: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ConfigError(f"must be >= 0, got {self.epsilon}", "epsilon")
        if not (math.isfinite(self.t_final) and self.t_final >= 0):
            raise ConfigError(f"must be >= 0, got {self.t_final}", "t_final")
        if not (0.0 < self.cfl_factor <= 1.0):
            raise ConfigError(f"must lie in (0, 1], got {self.cfl_factor}", "cfl_factor")
        if int(self.output_every) < 1:
            raise ConfigError("must be >= 1", "output_every")
        self._check_coupling()
        self._check_initial_data()

    def _check_coupling(self):
        c = self.coupling
        if isinstance(c, Convolution):
            if len(c.components) != self.grid.dim:
                raise ConfigError("need one kernel per dimension", "components")
            for k in c.components:
                if k.size != self.grid.n_points:
                    raise ConfigError("kernel does not match grid", "components")
        elif isinstance(c, Prescribed):
            from .velocity import PRESCRIBED_FIELDS

            if c.name not in PRESCRIBED_FIELDS:
                raise ConfigError(f"unknown prescribed field {c.name!r}", "name")
            if PRESCRIBED_FIELDS[c.name].dim != self.grid.dim:
                raise ConfigError(f"{c.name} needs d={PRESCRIBED_FIELDS[c.name].dim}", "name")
        elif not isinstance(c, (Poisson, HamiltonJacobi)):
            raise ConfigError(f"unsupported coupling {type(c).__name__}", "coupling")

    def _check_initial_data(self):
        d = self.initial_data
        dim = self.grid.dim
        if isinstance(d, GaussianBump):
            if len(d.center) != dim:
                raise ConfigError("center needs one coordinate per axis", "center")
            if not d.width > 0:
                raise ConfigError("must be > 0", "width")
            if d.amplitude < 0:
                raise ConfigError("must be >= 0", "amplitude")
        elif isinstance(d, Indicator):
            if len(d.box) != dim or any(len(b) != 2 or b[0] > b[1] for b in d.box):
                raise ConfigError("need one [lo, hi] interval per axis", "box")
            if d.amplitude < 0:
                raise ConfigError("must be >= 0", "amplitude")
        elif isinstance(d, BandLimitedRandom):
            if not (1 <= d.max_mode < self.grid.n_per_axis // 2):
                raise ConfigError("must lie in [1, N/2)", "max_mode")
            if d.amplitude < 0:
                raise ConfigError("must be >= 0", "amplitude")
        elif isinstance(d, Custom):
            if d.values.size != self.grid.n_points:
                raise ConfigError("value count does not match grid", "values")
            if not np.all(np.isfinite(d.values)) or np.any(d.values < 0):
                raise ConfigError("initial density must be finite and >= 0", "values")
        else:
            raise ConfigError(f"unsupported initial data {type(d).__name__}", "initial_data")


def initial_field(config: SimConfig) -> ScalarField:
    """Sample the initial density; pure function of ``config``."""
    grid = config.grid
    d = config.initial_data
    if isinstance(d, GaussianBump):
        disp = grid.displacement(d.center)
        r2 = sum(x * x for x in disp)
        values = d.amplitude * np.exp(-r2 / (2.0 * d.width**2))
    elif isinstance(d, Indicator):
        mask = np.ones(grid.shape, dtype=bool)
        for x, (lo, hi) in zip(grid.mesh(), d.box):
            mask &= (x >= lo) & (x < hi)
        values = d.amplitude * mask.astype(float)
    elif isinstance(d, BandLimitedRandom):
        values = band_limited_random(grid, d.seed, d.max_mode, d.amplitude)
    else:
        values = np.asarray(d.values, dtype=float)
    return ScalarField(grid, values)


def band_limited_random(grid: Grid, seed: int, max_mode: int, amplitude: float = 1.0) -> np.ndarray:
    """Random field with Fourier modes ``|k_j| <= max_mode``, rescaled onto ``[0, amplitude]``."""
    rng = np.random.default_rng(seed)
    n = grid.n_per_axis
    idx = np.fft.fftfreq(n, d=1.0 / n)
    keep = np.abs(idx) <= max_mode
    spec = np.zeros(grid.shape, dtype=complex)
    sel = np.ix_(*([np.flatnonzero(keep)] * grid.dim))
    sub_shape = (int(keep.sum()),) * grid.dim
    spec[sel] = rng.standard_normal(sub_shape) + 1j * rng.standard_normal(sub_shape)
    u = np.fft.ifftn(spec).real
    span = u.max() - u.min()
    if span == 0:
        return np.zeros(grid.shape)
    return amplitude * (u - u.min()) / span
