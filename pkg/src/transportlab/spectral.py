"""Fourier and finite-difference operators on the periodic grid.

First-derivative symbols zero the Nyquist wavenumber (the standard choice for
odd derivatives of real data); the Laplacian keeps the full ``-|k|^2`` symbol.
"""

from __future__ import annotations

import numpy as np

from .model import Grid


def wavenumbers(grid: Grid) -> np.ndarray:
    """Angular wavenumbers of one axis, ``2 pi m / L`` in FFT order."""
    n = grid.n_per_axis
    return 2.0 * np.pi * np.fft.fftfreq(n, d=grid.spacing)


def _derivative_wavenumbers(grid: Grid) -> np.ndarray:
    k = wavenumbers(grid)
    k[grid.n_per_axis // 2] = 0.0
    return k


def _axis_symbol(k: np.ndarray, axis: int, dim: int) -> np.ndarray:
    shape = [1] * dim
    shape[axis] = k.size
    return k.reshape(shape)


def laplacian_symbol(grid: Grid) -> np.ndarray:
    k = wavenumbers(grid)
    return -sum(_axis_symbol(k, ax, grid.dim) ** 2 for ax in range(grid.dim))


def spectral_gradient(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, ...]:
    vhat = np.fft.fftn(values)
    k = _derivative_wavenumbers(grid)
    return tuple(
        np.fft.ifftn(1j * _axis_symbol(k, ax, grid.dim) * vhat).real for ax in range(grid.dim)
    )


def spectral_divergence(components, grid: Grid) -> np.ndarray:
    k = _derivative_wavenumbers(grid)
    total = np.zeros(grid.shape, dtype=complex)
    for ax, comp in enumerate(components):
        total += 1j * _axis_symbol(k, ax, grid.dim) * np.fft.fftn(comp)
    return np.fft.ifftn(total).real


def spectral_laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.fft.ifftn(laplacian_symbol(grid) * np.fft.fftn(values)).real


def inverse_neg_laplacian(rhs: np.ndarray, grid: Grid) -> np.ndarray:
    """Zero-mean solution of ``-lap phi = rhs``; the mean of ``rhs`` is ignored."""
    sym = -laplacian_symbol(grid)
    rhat = np.fft.fftn(rhs)
    zero = (0,) * grid.dim
    sym[zero] = 1.0
    phat = rhat / sym
    phat[zero] = 0.0
    return np.fft.ifftn(phat).real


def centered_difference(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * grid.spacing)


def fd_divergence(components, grid: Grid) -> np.ndarray:
    """Centered-difference divergence.

    Equal to the face-difference divergence ``(a_{i+1/2} - a_{i-1/2})/dx`` of
    arithmetic-mean face velocities, i.e. the divergence the flux scheme sees.
    """
    return sum(centered_difference(c, grid, ax) for ax, c in enumerate(components))


def fd_laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    out = -2.0 * grid.dim * values
    for ax in range(grid.dim):
        out = out + np.roll(values, 1, ax) + np.roll(values, -1, ax)
    return out / grid.spacing**2


def forward_gradient_sq(values: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_axes ((v_{i+1} - v_i)/dx)^2``, the discrete Dirichlet energy density."""
    return sum(
        ((np.roll(values, -1, ax) - values) / grid.spacing) ** 2 for ax in range(grid.dim)
    )
