"""The singular radial kernel ``K_h`` and its normalized variant.

``K_h(r) = (r + h)^-d`` for ``r <= 1`` and ``eta(r) = r^-d s(r)`` for
``1 < r < 2``, where ``s`` is a C-infinity step equal to 1 on ``[1, 1.25]`` and
0 on ``[1.75, 2]``. The outer profile does not depend on ``h``; the jump of
size ``O(h)`` at ``r = 1`` is deliberate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import ConfigError
from .model import Grid

__all__ = [
    "KernelSpec",
    "NormalizedKernel",
    "smooth_step",
    "smooth_step_derivative",
    "surface_constant",
    "outer_mass",
]

STEP_START = 1.25
STEP_END = 1.75
SUPPORT = 2.0


def _psi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _dpsi(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos]) / x[pos] ** 2
    return out


def smooth_step(r):
    """C-infinity cutoff: 1 for ``r <= 1.25``, 0 for ``r >= 1.75``."""
    t = (np.asarray(r, dtype=float) - STEP_START) / (STEP_END - STEP_START)
    A = _psi(1.0 - t)
    B = _psi(t)
    return A / (A + B)


def smooth_step_derivative(r):
    t = (np.asarray(r, dtype=float) - STEP_START) / (STEP_END - STEP_START)
    A, B = _psi(1.0 - t), _psi(t)
    dA, dB = -_dpsi(1.0 - t), _dpsi(t)
    return (dA * B - A * dB) / (A + B) ** 2 / (STEP_END - STEP_START)


def surface_constant(dim: int) -> float:
    """Measure of the unit sphere: 2 points in 1D, circumference ``2 pi`` in 2D."""
    return {1: 2.0, 2: 2.0 * math.pi}[dim]


@lru_cache(maxsize=None)
def outer_mass(dim: int) -> float:
    """``int_{1<|x|<2} eta`` by adaptive quadrature (``h``-independent)."""
    val, _ = integrate.quad(lambda r: float(smooth_step(r)) / r, 1.0, SUPPORT, epsabs=1e-14, epsrel=1e-13)
    return surface_constant(dim) * val


def _inner_mass(h: float, dim: int) -> float:
    lg = math.log1p(1.0 / h)
    if dim == 1:
        return 2.0 * lg
    return 2.0 * math.pi * (lg + h / (1.0 + h) - 1.0)


@dataclass(frozen=True)
class KernelSpec:
    """``K_h`` on ``R^dim``; evaluation is radial, ``r = |x|``."""

    h: float
    dim: int

    def __post_init__(self):
        if not (0.0 < self.h < 1.0):
            raise ConfigError(f"kernel h must lie in (0, 1), got {self.h}", "h")
        if self.dim not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {self.dim}", "dim")

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        d = self.dim
        out = np.zeros_like(r)
        inner = r <= 1.0
        out[inner] = (r[inner] + self.h) ** (-d)
        outer = (r > 1.0) & (r < SUPPORT)
        ro = r[outer]
        out[outer] = ro ** (-d) * smooth_step(ro)
        return out

    def radial_derivative(self, r) -> np.ndarray:
        """``dK/dr``; on ``r <= 1`` the inner branch, outer ``eta'`` elsewhere."""
        r = np.asarray(r, dtype=float)
        d = self.dim
        out = np.zeros_like(r)
        inner = r <= 1.0
        out[inner] = -d * (r[inner] + self.h) ** (-d - 1)
        outer = (r > 1.0) & (r < SUPPORT)
        ro = r[outer]
        out[outer] = -d * ro ** (-d - 1) * smooth_step(ro) + ro ** (-d) * smooth_step_derivative(ro)
        return out

    @property
    def l1_mass(self) -> float:
        """``||K_h||_{L^1}``: closed-form inner part plus cached outer quadrature."""
        return _inner_mass(self.h, self.dim) + outer_mass(self.dim)

    def table(self, grid: Grid) -> np.ndarray:
        """``K_h`` at every minimal-image displacement of ``grid`` (FFT order).

        The origin entry is set to 0; it never contributes to difference
        functionals because ``u(x) - u(x) = 0``.
        """
        self._check_grid(grid)
        r = grid.offset_distance()
        tab = self.radial(r)
        tab[(0,) * grid.dim] = 0.0
        return tab

    def grid_mass(self, grid: Grid) -> float:
        """Discrete mass ``sum K_h dx^d`` of :meth:`table`."""
        return float(self.table(grid).sum() * grid.cell_volume)

    def _check_grid(self, grid: Grid):
        if grid.dim != self.dim:
            raise ConfigError(f"kernel dim {self.dim} does not match grid dim {grid.dim}", "dim")
        if grid.length <= 2.0 * SUPPORT:
            raise ConfigError("grid period must exceed 4 for the kernel support to embed", "length")


@dataclass(frozen=True)
class NormalizedKernel:
    """``c_h K_h`` with unit integral.

    ``c_h = 1 / ||K_h||_1`` in the continuum. On a lattice, :meth:`grid_normalizer`
    divides by the discrete mass instead so that the smoothing weights sum to
    one exactly.
    """

    base: KernelSpec

    @property
    def c_h(self) -> float:
        return 1.0 / self.base.l1_mass

    def grid_normalizer(self, grid: Grid) -> float:
        return 1.0 / self.base.grid_mass(grid)

    def smooth(self, values: np.ndarray, grid: Grid) -> np.ndarray:
        """``K~_h * u`` by FFT with periodic wraparound."""
        tab = self.base.table(grid)
        weights = tab / tab.sum()
        return np.fft.irfftn(np.fft.rfftn(weights) * np.fft.rfftn(values), s=grid.shape, axes=tuple(range(grid.dim)))
