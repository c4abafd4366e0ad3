"""Kernel-weighted difference functionals and velocity-regularity diagnostics.

The central quantity is

    Q_{p,h}(u) = sum_x sum_y K_h(|x - y|) |u(x) - u(y)|^p dx^{2d}

over ordered pairs with the periodic minimal-image distance. ``qnorm_brute``
evaluates it literally; ``qnorm_fft_p2`` and ``qnorm_fft_p1`` are the
``O(N log N)`` paths used everywhere else.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import spectral
from .errors import ConfigError, OracleSizeError, StructuralUnavailable
from .kernels import SUPPORT, KernelSpec, NormalizedKernel
from .model import (
    CouplingSpec,
    Grid,
    HamiltonJacobi,
    Poisson,
    ScalarField,
    VelocityField,
)

__all__ = [
    "ORACLE_CAP",
    "QSeries",
    "FamilyVerdict",
    "qnorm_brute",
    "qnorm_fft_p2",
    "qnorm_fft_p1",
    "qnorm",
    "compactness_indicator",
    "smoothing_distance",
    "smoothing_constant",
    "commutator_functional",
    "w1p_seminorm",
    "divergence_split",
    "write_qseries_csv",
    "write_commutator_csv",
    "fit_log_exponent",
]

ORACLE_CAP = 2**14
DEFAULT_LEVELS = 64


def _values(u) -> tuple[Grid, np.ndarray]:
    if isinstance(u, ScalarField):
        return u.grid, u.values
    raise TypeError(f"expected ScalarField, got {type(u).__name__}")


def _check_p(p):
    if p not in (1, 2):
        raise ConfigError(f"p must be 1 or 2, got {p}", "p")


def qnorm_brute(u: ScalarField, kernel: KernelSpec, p: int, cap: int = ORACLE_CAP, block: int = 256) -> float:
    """Direct ordered-pair double sum (the quadratic oracle).

    Raises
    ------
    OracleSizeError
        If the grid has more than ``cap`` points; use the FFT paths instead.
    """
    _check_p(p)
    grid, vals = _values(u)
    kernel._check_grid(grid)
    npts = grid.n_points
    if npts > cap:
        raise OracleSizeError(f"{npts} points exceeds the oracle cap {cap}; use qnorm_fft_p{p}")
    L = grid.length
    coords = np.stack([c.ravel() for c in grid.mesh()], axis=1)
    flat = vals.ravel()
    total = 0.0
    for start in range(0, npts, block):
        stop = min(start + block, npts)
        diff = coords[start:stop, None, :] - coords[None, :, :]
        diff = (diff + 0.5 * L) % L - 0.5 * L
        r = np.sqrt((diff * diff).sum(axis=-1))
        w = kernel.radial(r)
        du = np.abs(flat[start:stop, None] - flat[None, :])
        total += float((w * du**p).sum())
    return total * grid.cell_volume**2


def _kernel_hat(kernel: KernelSpec, grid: Grid) -> tuple[np.ndarray, float]:
    tab = kernel.table(grid)
    return np.fft.rfftn(tab), float(tab.sum() * grid.cell_volume)


def _q2_batch(fields: np.ndarray, khat: np.ndarray, mass: float, grid: Grid) -> np.ndarray:
    """``Q_2`` for a stack of fields along axis 0."""
    vol = grid.cell_volume
    axes = tuple(range(1, grid.dim + 1))
    conv = np.fft.irfftn(khat * np.fft.rfftn(fields, axes=axes), s=grid.shape, axes=axes) * vol
    sq = (fields * fields).sum(axis=axes) * vol
    cross = (fields * conv).sum(axis=axes) * vol
    return 2.0 * (mass * sq - cross)


def qnorm_fft_p2(u: ScalarField, kernel: KernelSpec) -> float:
    """``Q_{2,h}`` via ``2 [M ||u||^2 - <u, K_h * u>]`` with one FFT convolution.

    ``M`` is the mass of the tabulated kernel, which makes the identity exact
    on the lattice.
    """
    grid, vals = _values(u)
    khat, mass = _kernel_hat(kernel, grid)
    # subtracting the mean does not change Q and limits cancellation
    centered = vals - vals.mean()
    return max(float(_q2_batch(centered[None], khat, mass, grid)[0]), 0.0)


def qnorm_fft_p1(
    u: ScalarField, kernel: KernelSpec, levels: int = DEFAULT_LEVELS, chunk: int = 32
) -> tuple[float, float]:
    """``Q_{1,h}`` by level-set decomposition.

    ``|u(x) - u(y)| = int |chi_xi(x) - chi_xi(y)|^2 dxi`` with
    ``chi_xi = 1[u > xi]``; the integral over ``xi`` uses the midpoint rule on
    ``levels`` cells spanning ``[min u, max u]``, and each term is a ``Q_2``.

    Returns
    -------
    value : float
    quantization_bound : float
        ``2 M |Omega| dxi / 2``; ``|value - Q_1(u)|`` never exceeds it.
    """
    if levels < 2:
        raise ConfigError(f"levels must be >= 2, got {levels}", "levels")
    grid, vals = _values(u)
    lo, hi = float(vals.min()), float(vals.max())
    if hi <= lo:
        return 0.0, 0.0
    khat, mass = _kernel_hat(kernel, grid)
    dxi = (hi - lo) / levels
    xi = lo + (np.arange(levels) + 0.5) * dxi
    total = 0.0
    for s in range(0, levels, chunk):
        thresholds = xi[s : s + chunk].reshape((-1,) + (1,) * grid.dim)
        chi = (vals[None] > thresholds).astype(float)
        total += float(_q2_batch(chi, khat, mass, grid).sum())
    bound = 2.0 * mass * grid.volume * 0.5 * dxi
    return max(total * dxi, 0.0), bound


def qnorm(u: ScalarField, kernel: KernelSpec, p: int, levels: int = DEFAULT_LEVELS) -> float:
    """Fast ``Q_{p,h}``: :func:`qnorm_fft_p2` or the value of :func:`qnorm_fft_p1`."""
    _check_p(p)
    if p == 2:
        return qnorm_fft_p2(u, kernel)
    return qnorm_fft_p1(u, kernel, levels)[0]


@dataclass(frozen=True)
class QSeries:
    """``Q_{p,h}`` of one field over a decreasing list of ``h``."""

    h_list: tuple[float, ...]
    p: int
    values: tuple[float, ...]
    field_id: str = ""

    @property
    def indicator(self) -> tuple[float, ...]:
        return tuple(v / abs(math.log(h)) for v, h in zip(self.values, self.h_list))


COMPACT = "compact-consistent"
NON_COMPACT = "non-compact-consistent"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class FamilyVerdict:
    """Family-level indicator ``max_members Q/|log h|`` and a heuristic label.

    The label compares the first and last ``h``: a decay by at least
    ``decay_factor`` reads as compact-consistent, retaining at least
    ``plateau_fraction`` as non-compact-consistent. Such finite-``h``
    thresholds are heuristics, not a proof of (non)compactness.
    """

    h_list: tuple[float, ...]
    indicator: tuple[float, ...]
    verdict: str
    decay_factor: float = 2.0
    plateau_fraction: float = 0.8
    heuristic: bool = True

    @property
    def ratio(self) -> float:
        first = self.indicator[0]
        return self.indicator[-1] / first if first > 0 else 0.0

    def label(self) -> str:
        return f"{self.verdict} (heuristic)"


def compactness_indicator(
    u_family: Sequence[ScalarField],
    h_list: Sequence[float],
    p: int,
    levels: int = DEFAULT_LEVELS,
    decay_factor: float = 2.0,
    plateau_fraction: float = 0.8,
) -> tuple[list[QSeries], FamilyVerdict]:
    """Per-member ``QSeries`` and the family verdict.

    ``h_list`` must be strictly decreasing with at least three entries.
    """
    _check_p(p)
    hs = tuple(float(h) for h in h_list)
    if len(hs) < 3:
        raise ConfigError("compactness_indicator needs at least 3 h values", "h_list")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("h_list must be strictly decreasing", "h_list")
    if not u_family:
        raise ConfigError("empty family", "u_family")
    grid = u_family[0].grid
    if any(u.grid != grid for u in u_family):
        raise ConfigError("family members must share one grid", "u_family")
    series = []
    for i, u in enumerate(u_family):
        vals = tuple(qnorm(u, KernelSpec(h, grid.dim), p, levels) for h in hs)
        series.append(QSeries(hs, p, vals, f"member_{i}"))
    ind = tuple(max(s.indicator[j] for s in series) for j in range(len(hs)))
    first, last = ind[0], ind[-1]
    if last * decay_factor <= first:
        verdict = COMPACT
    elif last >= plateau_fraction * first:
        verdict = NON_COMPACT
    else:
        verdict = INCONCLUSIVE
    return series, FamilyVerdict(hs, ind, verdict, decay_factor, plateau_fraction)


def smoothing_constant(nk: NormalizedKernel, grid: Grid, p: int, safety: float = 1.01) -> float:
    """``C`` with ``||u - K~_h * u||_p^p <= C |log h|^-1 Q_{p,h}(u)``.

    Jensen's inequality with the probability weights ``c_h K_h dx^d`` gives
    ``||u - K~_h*u||_p^p <= c_h Q``; written in the lemma's form this is
    ``C = (c_h |log h|)^p (M / |log h|)^(p-1)`` times ``safety``.
    """
    lg = abs(math.log(nk.base.h))
    c_h = nk.grid_normalizer(grid)
    mass = nk.base.grid_mass(grid)
    return safety * (c_h * lg) ** p * (mass / lg) ** (p - 1)


def smoothing_distance(u: ScalarField, nk: NormalizedKernel, p: int) -> float:
    """``||u - K~_h * u||_{L^p}^p``."""
    _check_p(p)
    grid, vals = _values(u)
    diff = vals - nk.smooth(vals, grid)
    return float((np.abs(diff) ** p).sum() * grid.cell_volume)


def _offsets_within(grid: Grid, radius: float) -> list[tuple[int, ...]]:
    m = min(int(math.ceil(radius / grid.spacing)), grid.n_per_axis // 2)
    rng = range(-m, m + 1)
    if grid.dim == 1:
        offs = [(j,) for j in rng]
    else:
        offs = [(i, j) for i in rng for j in rng]
    return [o for o in offs if any(o) and math.hypot(*o) * grid.spacing < radius]


def commutator_functional(
    a: VelocityField,
    g: ScalarField,
    kernel: KernelSpec,
    cap: int = ORACLE_CAP,
    unordered: bool = False,
) -> float:
    """``sum_{x != y} grad K_h(x - y) . (a(x) - a(y)) |g(x) - g(y)|^2 dx^{2d}``.

    The sum is exact: pairs are grouped by lattice offset ``z = x - y`` and only
    offsets inside the kernel support ``|z| < 2`` are visited, every ordered
    pair with a nonzero weight is included (no subsampling). With
    ``unordered=True`` each unordered pair is counted once.
    """
    grid = a.grid
    if g.grid != grid:
        raise ConfigError("velocity and g live on different grids", "grid")
    kernel._check_grid(grid)
    if grid.n_points > cap:
        raise OracleSizeError(f"{grid.n_points} points exceeds the oracle cap {cap}")
    gv = g.values
    total = 0.0
    for off in _offsets_within(grid, SUPPORT):
        if unordered and off < tuple(-o for o in off):
            continue
        z = np.array(off, dtype=float) * grid.spacing
        r = float(np.sqrt(z @ z))
        dk = float(kernel.radial_derivative(np.array([r]))[0])
        if dk == 0.0:
            continue
        axes = tuple(range(grid.dim))
        # y = x - z, so shifted arrays hold values at y
        g_y = np.roll(gv, off, axis=axes)
        dg2 = (gv - g_y) ** 2
        proj = np.zeros(grid.shape)
        for ax, comp in enumerate(a.components):
            if z[ax] != 0.0:
                proj += (comp - np.roll(comp, off, axis=axes)) * (z[ax] / r)
        total += dk * float((proj * dg2).sum())
    return total * grid.cell_volume**2


def w1p_seminorm(a: VelocityField, p: float) -> float:
    """``||grad a||_{L^p} + ||a||_{L^p}`` with spectral derivatives.

    ``|grad a|`` is the Frobenius norm of the Jacobian, ``|a|`` the Euclidean
    norm of the vector.
    """
    if not (1.0 < p < math.inf):
        raise ConfigError(f"p must lie in (1, inf), got {p}", "p")
    grid = a.grid
    vol = grid.cell_volume
    jac_sq = np.zeros(grid.shape)
    speed_sq = np.zeros(grid.shape)
    for comp in a.components:
        speed_sq += comp * comp
        for d in spectral.spectral_gradient(comp, grid):
            jac_sq += d * d
    grad = (np.sum(jac_sq ** (p / 2.0)) * vol) ** (1.0 / p)
    base = (np.sum(speed_sq ** (p / 2.0)) * vol) ** (1.0 / p)
    return float(grad + base)


def divergence_split(
    a: VelocityField, n: ScalarField, coupling: CouplingSpec
) -> tuple[ScalarField, ScalarField, float]:
    """Split ``div a = d + r`` with ``r`` Lipschitz in the density.

    For ``a = -grad phi`` with ``-lap phi (+ alpha |grad phi|^2) = g(n) - mean``
    one has ``div a = -lap phi``, so ``r = g(n) - <g(n)>`` and ``d = div a - r``
    (spectrally zero for Poisson, ``-(alpha |grad phi|^2 - mean)`` for HJ).
    ``lip_bound = max |g'|`` over ``[min n, max n]``, so
    ``|r(x) - r(y)| <= lip_bound |n(x) - n(y)|``.

    Raises
    ------
    StructuralUnavailable
        For prescribed or convolution couplings; callers then use
        ``d = div a`` and ``r = 0``.
    """
    if not isinstance(coupling, (Poisson, HamiltonJacobi)):
        raise StructuralUnavailable(
            f"{type(coupling).__name__} coupling has no structural divergence split"
        )
    grid = n.grid
    if a.grid != grid:
        raise ConfigError("velocity and density live on different grids", "grid")
    gn = coupling.g(n.values)
    r = gn - gn.mean()
    div_a = spectral.spectral_divergence(a.components, grid)
    d = div_a - r
    lip = coupling.g.max_abs_derivative(float(n.values.min()), float(n.values.max()))
    return ScalarField(grid, d), ScalarField(grid, r), float(lip)


def fit_log_exponent(h_list: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log value`` against ``log |log h|``."""
    x = np.log(np.abs(np.log(np.asarray(h_list, dtype=float))))
    y = np.log(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


def write_qseries_csv(series: Sequence[QSeries], path) -> None:
    """Columns ``h, value, value_over_log, p, field_id``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "value", "value_over_log", "p", "field_id"])
        for s in series:
            for h, v, ind in zip(s.h_list, s.values, s.indicator):
                w.writerow([repr(h), repr(v), repr(ind), s.p, s.field_id])


def write_commutator_csv(h_list: Sequence[float], values: Sequence[float], path, field_id: str = "commutator") -> None:
    """Same columns as :func:`write_qseries_csv`; ``p`` is 2 for the ``|g|^2`` weight."""
    s = QSeries(tuple(h_list), 2, tuple(values), field_id)
    write_qseries_csv([s], path)
