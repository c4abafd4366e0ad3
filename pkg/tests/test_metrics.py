import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transportlab import metrics, spectral
from transportlab.errors import ConfigError, OracleSizeError, StructuralUnavailable
from transportlab.kernels import KernelSpec, NormalizedKernel
from transportlab.model import (
    Convolution,
    Grid,
    HamiltonJacobi,
    Poisson,
    Prescribed,
    ScalarField,
    SourceFunction,
    VelocityField,
    band_limited_random,
)
from transportlab.velocity import hj_solve, poisson_velocity, prescribed_velocity

from conftest import random_field

L = 8.0


def indicator_half(N):
    g = Grid(1, N, L)
    return ScalarField(g, (g.axis() < L / 2).astype(float))


class TestQnormBrute:
    def test_constant_is_zero(self):
        g = Grid(1, 64, L)
        assert metrics.qnorm_brute(ScalarField(g, np.full(64, 2.5)), KernelSpec(0.1, 1), 2) == 0.0

    @pytest.mark.parametrize("p", [1, 2])
    def test_shift_by_constant(self, p):
        g = Grid(2, 16, L)
        u = random_field(g, 2)
        k = KernelSpec(0.05, 2)
        a = metrics.qnorm_brute(u, k, p)
        b = metrics.qnorm_brute(ScalarField(g, u.values + 3.0), k, p)
        assert a == pytest.approx(b, rel=1e-12)

    def test_jump_pair_counting(self):
        N = 64
        u = indicator_half(N)
        dx = L / N
        h = 2.0**-4
        k = KernelSpec(h, 1)
        # each jump is straddled by j ordered pairs per orientation at offset j;
        # the kernel support (< 2) is shorter than the gap between jumps (4)
        per_jump = 0.0
        for j in range(1, N // 2):
            r = j * dx
            if r >= 2.0:
                break
            kr = (r + h) ** -1 if r <= 1.0 else float(k.radial(np.array([r]))[0])
            per_jump += j * kr
        expected = 2 * 2 * per_jump * dx * dx
        assert metrics.qnorm_brute(u, k, 1) == pytest.approx(expected, rel=1e-12)

    def test_oracle_cap(self):
        g = Grid(2, 256, L)
        with pytest.raises(OracleSizeError, match="qnorm_fft_p2"):
            metrics.qnorm_brute(ScalarField(g, np.zeros(g.shape)), KernelSpec(0.1, 2), 2)

    def test_invalid_p(self):
        g = Grid(1, 16, L)
        with pytest.raises(ConfigError, match="p"):
            metrics.qnorm_brute(ScalarField(g, np.zeros(16)), KernelSpec(0.1, 1), 3)


class TestQnormFFT:
    @pytest.mark.parametrize("dim,N", [(1, 128), (2, 32)])
    @pytest.mark.parametrize("h", [2**-3, 2**-6, 2**-10])
    def test_p2_matches_brute(self, dim, N, h):
        g = Grid(dim, N, L)
        for seed in range(3):
            u = random_field(g, seed, 8)
            k = KernelSpec(h, dim)
            ref = metrics.qnorm_brute(u, k, 2)
            assert metrics.qnorm_fft_p2(u, k) == pytest.approx(ref, rel=1e-10)

    def test_p2_constant_and_scaling(self):
        g = Grid(1, 128, L)
        k = KernelSpec(2**-5, 1)
        assert abs(metrics.qnorm_fft_p2(ScalarField(g, np.full(128, 7.3)), k)) <= 1e-12
        u = random_field(g, 11)
        base = metrics.qnorm_fft_p2(u, k)
        assert metrics.qnorm_fft_p2(ScalarField(g, 3.0 * u.values), k) == pytest.approx(9.0 * base, rel=1e-12)

    @pytest.mark.parametrize("dim,N", [(1, 128), (2, 32)])
    def test_p1_binary_exact(self, dim, N):
        g = Grid(dim, N, L)
        rng = np.random.default_rng(dim)
        u = ScalarField(g, np.where(rng.random(g.shape) > 0.6, 2.0, -0.5))
        k = KernelSpec(2**-4, dim)
        val, _ = metrics.qnorm_fft_p1(u, k, levels=2)
        assert val == pytest.approx(metrics.qnorm_brute(u, k, 1), rel=1e-10)

    @pytest.mark.parametrize("dim,N", [(1, 128), (2, 32)])
    def test_p1_within_bound(self, dim, N):
        g = Grid(dim, N, L)
        u = random_field(g, 5, 6)
        k = KernelSpec(2**-6, dim)
        ref = metrics.qnorm_brute(u, k, 1)
        bounds = []
        for levels in (16, 32, 64, 256):
            val, bound = metrics.qnorm_fft_p1(u, k, levels)
            assert abs(val - ref) <= bound
            bounds.append(bound)
        assert bounds[0] / bounds[1] == pytest.approx(2.0)
        assert bounds[0] / bounds[3] == pytest.approx(16.0)

    def test_p1_degenerate(self):
        g = Grid(1, 32, L)
        assert metrics.qnorm_fft_p1(ScalarField(g, np.ones(32)), KernelSpec(0.1, 1), 8) == (0.0, 0.0)
        with pytest.raises(ConfigError, match="levels"):
            metrics.qnorm_fft_p1(ScalarField(g, np.arange(32.0)), KernelSpec(0.1, 1), 1)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([1, 2]))
    def test_monotone_in_h(self, seed, p):
        g = Grid(1, 256, L)
        u = random_field(g, seed, 10)
        vals = [metrics.qnorm(u, KernelSpec(2.0**-k, 1), p) for k in range(2, 12)]
        assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 31), st.integers(0, 31))
    def test_translation_invariance(self, seed, sx, sy):
        g = Grid(2, 32, L)
        u = random_field(g, seed, 5)
        k = KernelSpec(2**-5, 2)
        shifted = ScalarField(g, np.roll(u.values, (sx, sy), axis=(0, 1)))
        for p in (1, 2):
            assert metrics.qnorm(shifted, k, p) == pytest.approx(metrics.qnorm(u, k, p), rel=1e-12)


class TestCompactness:
    HS = [2.0**-k for k in range(4, 11)]

    def test_constant_family(self):
        g = Grid(1, 256, L)
        series, verdict = metrics.compactness_indicator([ScalarField(g, np.ones(256))], self.HS, 2)
        assert all(v == 0.0 for v in verdict.indicator)
        assert verdict.verdict == metrics.COMPACT
        assert verdict.label().endswith("(heuristic)") and verdict.heuristic

    def test_needs_three_decreasing_h(self):
        g = Grid(1, 64, L)
        u = [ScalarField(g, np.zeros(64))]
        with pytest.raises(ConfigError, match="h_list"):
            metrics.compactness_indicator(u, [0.1, 0.05], 2)
        with pytest.raises(ConfigError, match="h_list"):
            metrics.compactness_indicator(u, [0.1, 0.2, 0.05], 2)

    def test_translates_bounded_and_decaying(self):
        g = Grid(1, 1024, L)
        x = g.axis()
        fam = [ScalarField(g, np.exp(-(((x - c + L / 2) % L - L / 2) ** 2) / 2)) for c in (2, 3, 4, 5)]
        series, verdict = metrics.compactness_indicator(fam, self.HS, 2)
        ind = np.array(verdict.indicator)
        assert np.all(np.diff(ind) < 0)
        # Q itself saturates: increments shrink as h halves
        vals = np.array(series[0].values)
        inc = np.diff(vals)
        assert np.all(inc[1:] < inc[:-1])
        # Q_2 <= sup|u'|^2 * sum K_h(z)|z|^2 dx |Omega|
        gk = KernelSpec(self.HS[-1], 1)
        r = g.offset_distance()
        moment = float((gk.table(g) * r**2).sum() * g.spacing)
        du = np.abs(spectral.spectral_gradient(fam[0].values, g)[0]).max()
        assert vals.max() <= du**2 * moment * L * 1.01

    def test_oscillatory_family_plateaus(self):
        g = Grid(1, 2**13, L)
        x = g.axis()
        hs = [2.0**-k for k in range(4, 9)]
        fam = [ScalarField(g, np.sin(2 * np.pi * round(L / (2 * np.pi * h)) * x / L)) for h in hs]
        _, verdict = metrics.compactness_indicator(fam, hs, 2)
        assert verdict.verdict == metrics.NON_COMPACT
        assert verdict.ratio >= 0.8


class TestSmoothing:
    @pytest.mark.parametrize("p", [1, 2])
    def test_inequality(self, p):
        g = Grid(1, 128, L)
        h = 2.0**-6
        nk = NormalizedKernel(KernelSpec(h, 1))
        for seed in range(5):
            u = random_field(g, seed, 12)
            lhs = metrics.smoothing_distance(u, nk, p)
            rhs = metrics.smoothing_constant(nk, g, p) / abs(math.log(h)) * metrics.qnorm_brute(u, nk.base, p)
            assert lhs / rhs < 1.0

    def test_constant_field(self):
        g = Grid(2, 32, L)
        nk = NormalizedKernel(KernelSpec(0.1, 2))
        assert metrics.smoothing_distance(ScalarField(g, np.full(g.shape, 4.0)), nk, 2) <= 1e-24

    def test_nonincreasing_as_h_shrinks(self):
        g = Grid(1, 1024, L)
        u = ScalarField(g, np.sin(2 * np.pi * g.axis() / L) + 0.3 * np.cos(6 * np.pi * g.axis() / L))
        vals = [metrics.smoothing_distance(u, NormalizedKernel(KernelSpec(2.0**-k, 1)), 2) for k in range(4, 11)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_constant_matches_jensen_bound(self):
        g = Grid(1, 256, L)
        nk = NormalizedKernel(KernelSpec(2**-5, 1))
        lg = abs(math.log(2**-5))
        for p in (1, 2):
            C = metrics.smoothing_constant(nk, g, p, safety=1.0)
            assert C / lg == pytest.approx(nk.grid_normalizer(g))


def commutator_pairs(a, g, kernel):
    """Ordered-pair loop with minimal image, diagonal skipped."""
    grid = g.grid
    coords = np.stack([c.ravel() for c in grid.mesh()], axis=1)
    av = np.stack([c.ravel() for c in a.components], axis=1)
    gv = g.values.ravel()
    total = 0.0
    for i in range(coords.shape[0]):
        z = coords[i] - coords
        z = (z + L / 2) % L - L / 2
        r = np.sqrt((z * z).sum(axis=1))
        mask = r > 0
        dk = kernel.radial_derivative(r[mask])
        unit = z[mask] / r[mask, None]
        proj = ((av[i] - av[mask]) * unit).sum(axis=1)
        total += float((dk * proj * (gv[i] - gv[mask]) ** 2).sum())
    return total * grid.cell_volume**2


class TestCommutator:
    def test_constant_a_or_g(self):
        g = Grid(1, 128, L)
        k = KernelSpec(0.05, 1)
        gg = random_field(g, 1)
        a_const = VelocityField(g, (np.full(128, 1.7),))
        assert metrics.commutator_functional(a_const, gg, k) == 0.0
        a = prescribed_velocity("compressive_sine", 0.0, g, {"amplitude": 1.0})
        assert metrics.commutator_functional(a, ScalarField(g, np.full(128, 2.0)), k) == 0.0

    @pytest.mark.parametrize("dim,N", [(1, 64), (2, 16)])
    def test_direct_pair_oracle(self, dim, N):
        g = Grid(dim, N, L)
        rng = np.random.default_rng(dim)
        a = VelocityField(g, tuple(rng.standard_normal(g.shape) for _ in range(dim)))
        gg = ScalarField(g, rng.standard_normal(g.shape))
        k = KernelSpec(0.1, dim)
        ref = commutator_pairs(a, gg, k)
        assert metrics.commutator_functional(a, gg, k) == pytest.approx(ref, rel=1e-10)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([1, 2]))
    def test_ordered_is_twice_unordered(self, seed, dim):
        g = Grid(dim, 64 if dim == 1 else 16, L)
        rng = np.random.default_rng(seed)
        a = VelocityField(g, tuple(rng.standard_normal(g.shape) for _ in range(dim)))
        gg = ScalarField(g, rng.standard_normal(g.shape))
        k = KernelSpec(0.2, dim)
        full = metrics.commutator_functional(a, gg, k)
        half = metrics.commutator_functional(a, gg, k, unordered=True)
        assert full == pytest.approx(2.0 * half, rel=1e-10, abs=1e-12)

    def test_cap(self):
        g = Grid(2, 256, L)
        with pytest.raises(OracleSizeError):
            metrics.commutator_functional(VelocityField.zeros(g), ScalarField(g, np.zeros(g.shape)), KernelSpec(0.1, 2))


class TestW1p:
    def test_zero(self):
        assert metrics.w1p_seminorm(VelocityField.zeros(Grid(2, 16, L)), 2.0) == 0.0

    def test_single_mode_closed_form(self):
        g = Grid(1, 256, L)
        a = VelocityField(g, (np.sin(2 * np.pi * g.axis() / L),))
        assert metrics.w1p_seminorm(a, 2.0) == pytest.approx(math.sqrt(L / 2) * (1 + 2 * math.pi / L), rel=1e-12)

    def test_invalid_p(self):
        with pytest.raises(ConfigError, match="p"):
            metrics.w1p_seminorm(VelocityField.zeros(Grid(1, 16, L)), 1.0)

    def test_singular_field_refinement(self):
        Ns = (512, 1024, 2048, 4096)

        def grad_part(N, p):
            g = Grid(1, N, L)
            a = prescribed_velocity("w1p_singular", 0.0, g, {"beta": 0.5})
            (da,) = spectral.spectral_gradient(a.components[0], g)
            return float(np.sum(np.abs(da) ** p) * g.spacing)

        # p = 1.5 is below the threshold 1/(1 - beta) = 2: the norm settles
        low = [metrics.w1p_seminorm(prescribed_velocity("w1p_singular", 0.0, Grid(1, N, L), {"beta": 0.5}), 1.5)
               for N in Ns]
        assert low[-1] / low[0] < 1.2
        # p = 2.5 is above it: |a'|^p integrates like |x|^-1.25, so the
        # discrete sum grows like N^0.25
        high = [grad_part(N, 2.5) for N in Ns]
        assert np.all(np.diff(high) > 0)
        slope = np.polyfit(np.log(Ns), np.log(high), 1)[0]
        assert 0.15 < slope < 0.35


class TestDivergenceSplit:
    def test_poisson_identity(self):
        g = Grid(1, 128, L)
        n = random_field(g, 3, 8)
        coupling = Poisson(SourceFunction.identity())
        a, _ = poisson_velocity(n, coupling.g)
        d, r, lip = metrics.divergence_split(a, n, coupling)
        assert np.abs(d.values).max() <= 1e-10 * n.linf()
        assert np.allclose(r.values, n.values - n.values.mean(), atol=1e-14)
        assert lip == pytest.approx(1.0)

    def test_quadratic_lip_bound_and_pairs(self):
        g = Grid(1, 256, L)
        x = g.axis()
        n = ScalarField(g, 0.5 + 0.5 * np.sin(2 * np.pi * x / L))
        n = ScalarField(g, (n.values - n.values.min()) / np.ptp(n.values))
        coupling = Poisson(SourceFunction((0.0, 1.0)))
        a, _ = poisson_velocity(n, coupling.g)
        _, r, lip = metrics.divergence_split(a, n, coupling)
        assert lip == pytest.approx(2.0)
        rng = np.random.default_rng(0)
        i, j = rng.integers(0, 256, size=(2, 100_000))
        assert np.all(np.abs(r.values[i] - r.values[j]) <= lip * np.abs(n.values[i] - n.values[j]) + 1e-14)

    def test_hj_remainder(self):
        g = Grid(1, 128, L)
        n = random_field(g, 4, 6)
        coupling = HamiltonJacobi(SourceFunction.identity(), alpha=0.2, fp_tol=1e-12)
        sol = hj_solve(n, coupling.g, coupling.alpha, coupling.fp_tol)
        d, r, _ = metrics.divergence_split(sol.velocity, n, coupling)
        gsq = spectral.spectral_gradient(sol.phi, g)[0] ** 2
        assert np.allclose(d.values, -0.2 * (gsq - gsq.mean()), atol=1e-9)

    @pytest.mark.parametrize(
        "coupling", [Prescribed("compressive_sine"), Convolution((np.zeros(64),))], ids=["prescribed", "convolution"]
    )
    def test_structural_unavailable(self, coupling):
        g = Grid(1, 64, L)
        with pytest.raises(StructuralUnavailable):
            metrics.divergence_split(VelocityField.zeros(g), ScalarField(g, np.ones(64)), coupling)


class TestExport:
    def test_fit_log_exponent_exact(self):
        hs = [2.0**-k for k in range(4, 13)]
        vals = [3.0 * abs(math.log(h)) ** 0.37 for h in hs]
        assert metrics.fit_log_exponent(hs, vals) == pytest.approx(0.37, abs=1e-12)

    def test_qseries_csv_roundtrip(self, tmp_path):
        s = metrics.QSeries((0.1, 0.05), 1, (2.0, 3.0), "u0")
        path = tmp_path / "q.csv"
        metrics.write_qseries_csv([s], path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["h", "value", "value_over_log", "p", "field_id"]
        assert float(rows[1]["value_over_log"]) == 3.0 / abs(math.log(0.05))
        assert rows[0]["field_id"] == "u0" and rows[0]["p"] == "1"

    def test_commutator_csv(self, tmp_path):
        path = tmp_path / "c.csv"
        metrics.write_commutator_csv([0.1, 0.01], [1.0, 2.0], path, "g")
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["p"] for r in rows] == ["2", "2"]
