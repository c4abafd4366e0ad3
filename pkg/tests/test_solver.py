import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from transportlab import solver, spectral
from transportlab.errors import CFLViolation, ConfigError, HJDivergence, NumericalError
from transportlab.model import (
    FluxFunction,
    GaussianBump,
    Grid,
    Indicator,
    Poisson,
    Prescribed,
    ScalarField,
    SimConfig,
    VelocityField,
    band_limited_random,
)
from transportlab.scenarios import scenario
from transportlab.solver import EntropyPair, cfl_dt, entropy_residual, run, step
from transportlab.velocity import prescribed_velocity

LOGISTIC = FluxFunction.logistic(1.0)
IDENTITY = FluxFunction.identity()


def constant_velocity(grid, *c):
    return VelocityField(grid, tuple(np.full(grid.shape, ci) for ci in c))


class TestCflDt:
    def test_formula_example(self):
        g = Grid(1, 64, 6.4)
        a = constant_velocity(g, 2.0)
        assert cfl_dt(a, IDENTITY, 0.0, g, 0.5) == pytest.approx(0.025, rel=1e-12)

    def test_no_transport_no_diffusion_clamps(self):
        g = Grid(2, 16, 8.0)
        assert cfl_dt(VelocityField.zeros(g), LOGISTIC, 0.0, g, 0.4, dt_max=0.7) == 0.7

    def test_viscous_limit(self):
        g = Grid(1, 128, 8.0)
        a = constant_velocity(g, 1.0)
        eps = 10.0
        assert cfl_dt(a, LOGISTIC, eps, g, 0.3) == pytest.approx(0.3 * g.spacing**2 / (2 * eps**2), rel=1e-12)

    def test_dimension_factor(self):
        g = Grid(2, 32, 8.0)
        a = constant_velocity(g, 1.0, -3.0)
        assert cfl_dt(a, LOGISTIC, 0.0, g, 1.0) == pytest.approx(g.spacing / (2 * 3.0), rel=1e-12)


class TestStep:
    def test_zero_velocity_inviscid_is_identity(self):
        g = Grid(2, 16, 8.0)
        n = ScalarField(g, band_limited_random(g, 4, 3))
        out, rep = step(n, VelocityField.zeros(g), LOGISTIC, 0.0, 0.1)
        assert np.array_equal(out.values, n.values)
        assert rep.cfl_advective == 0.0

    @pytest.mark.parametrize("c", [1.0, -0.7])
    def test_translation_oracle_second_order_per_step(self, c):
        L = 8.0
        errs = []
        for N in (64, 128, 256):
            g = Grid(1, N, L)
            x = g.axis()
            n = ScalarField(g, 1.0 + 0.5 * np.sin(2 * np.pi * x / L) + 0.2 * np.cos(4 * np.pi * x / L))
            a = constant_velocity(g, c)
            dt = cfl_dt(a, IDENTITY, 0.0, g, 0.5)
            out, _ = step(n, a, IDENTITY, 0.0, dt)
            k = 2 * np.pi * np.fft.fftfreq(N, d=g.spacing)
            exact = np.fft.ifft(np.fft.fft(n.values) * np.exp(-1j * k * c * dt)).real
            errs.append(np.sqrt(np.sum((out.values - exact) ** 2) * g.spacing))
        ratios = np.array(errs[:-1]) / np.array(errs[1:])
        assert np.all(ratios > 3.5), ratios

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([1, 2]), st.floats(0.0, 0.3))
    def test_mass_conserved_on_random_input(self, seed, dim, eps):
        rng = np.random.default_rng(seed)
        g = Grid(dim, 64 if dim == 1 else 16, 8.0)
        n = ScalarField(g, rng.random(g.shape) * 2.0)
        a = VelocityField(g, tuple(rng.standard_normal(g.shape) for _ in range(dim)))
        dt = cfl_dt(a, LOGISTIC, eps, g, 0.5)
        out, rep = step(n, a, LOGISTIC, eps, dt, cfl_factor=0.5)
        assert abs(out.mass() - n.mass()) <= 1e-12 * abs(n.mass())
        assert rep.cfl_advective <= 0.5 * (1 + 1e-12) and rep.cfl_viscous <= 0.5 * (1 + 1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.3))
    def test_nonnegativity_under_cfl(self, seed, eps):
        rng = np.random.default_rng(seed)
        g = Grid(1, 64, 8.0)
        vals = rng.random(64) * (rng.random(64) > 0.5)
        n = ScalarField(g, vals)
        a = VelocityField(g, (3.0 * rng.standard_normal(64),))
        dt = cfl_dt(a, LOGISTIC, eps, g, 0.5)
        out, _ = step(n, a, LOGISTIC, eps, dt, cfl_factor=0.5)
        assert out.values.min() >= -1e-12 * max(vals.max(), 1.0)

    def test_cfl_violation_rejected(self):
        g = Grid(1, 64, 8.0)
        n = ScalarField(g, np.ones(64))
        a = constant_velocity(g, 1.0)
        dt = cfl_dt(a, IDENTITY, 0.0, g, 0.5)
        with pytest.raises(CFLViolation):
            step(n, a, IDENTITY, 0.0, 2.01 * dt, cfl_factor=0.5)
        with pytest.raises(CFLViolation):
            step(n, a, IDENTITY, 0.0, 0.0)

    def test_stage_two_velocity_is_used(self):
        g = Grid(1, 64, 8.0)
        n = ScalarField(g, band_limited_random(g, 1, 4))
        a = constant_velocity(g, 1.0)
        dt = 0.01
        fixed, _ = step(n, a, IDENTITY, 0.0, dt)
        calls = []

        def fn(m, t):
            calls.append(t)
            return constant_velocity(g, 1.0)

        refreshed, _ = step(n, a, IDENTITY, 0.0, dt, velocity_fn=fn, t=0.5)
        assert calls == [0.51]
        assert np.array_equal(fixed.values, refreshed.values)

    def test_grid_mismatch(self):
        n = ScalarField(Grid(1, 32, 8.0), np.ones(32))
        with pytest.raises(ConfigError):
            step(n, VelocityField.zeros(Grid(1, 64, 8.0)), IDENTITY, 0.0, 0.01)


def swarm(N=128, **kw):
    return scenario("swarm_poisson", N, **kw)


class TestRun:
    def test_t_final_zero(self):
        cfg = swarm(t_final=0.0)
        traj, series = run(cfg)
        assert len(traj) == 1 and traj.times == [0.0]
        assert series.steps == []
        assert np.array_equal(traj.fields[0].values, solver.initial_field(cfg).values)

    def test_deterministic(self):
        a, _ = run(swarm(t_final=0.3))
        b, _ = run(swarm(t_final=0.3))
        assert a.times == b.times
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a.fields, b.fields))

    def test_snapshot_times_hit_exactly(self):
        times = [0.1, 0.25, 0.5]
        traj, series = run(swarm(t_final=0.5), snapshot_times=times)
        assert traj.times == [0.0] + times
        assert len(traj.velocities) == 4
        assert sum(series.column("dt")) == pytest.approx(0.5, abs=1e-12)

    def test_output_every(self):
        traj, series = run(swarm(t_final=0.3, output_every=5))
        k = len(series.steps)
        assert len(traj) == 1 + k // 5 + (1 if k % 5 else 0)
        assert traj.times[-1] == pytest.approx(0.3, abs=1e-12)

    def test_gronwall_envelope_poisson(self):
        cfg = swarm()
        traj, series = run(cfg)
        lip = cfg.flux.lipschitz
        assert solver.gronwall_violations(series, lip) == []
        # with g = Id and n >= 0, sup|g(n) - mean| <= sup n
        sup_g = max(series.initial_linf, series.column("linf").max())
        t = series.column("time")
        envelope = np.exp(lip * sup_g * t) * series.initial_linf
        assert np.all(series.column("linf") <= envelope * (1 + 1e-12))

    def test_mass_drift_and_nonnegativity(self):
        traj, series = run(scenario("chemo_hj", 128))
        assert series.max_relative_mass_drift() <= 1e-11
        assert series.column("min_value").min() >= -1e-12 * series.initial_linf

    def test_epsilon_sweep_trend(self):
        finals = {}
        for eps in (0.2, 0.1, 0.05):
            traj, _ = run(swarm(256, epsilon=eps))
            finals[eps] = traj.fields[-1].values
        dx = 8.0 / 256
        big = np.abs(finals[0.2] - finals[0.1]).sum() * dx
        small = np.abs(finals[0.1] - finals[0.05]).sum() * dx
        assert small < big

    @pytest.mark.parametrize("name", ["swarm_poisson", "chemo_hj", "shock_1d"])
    def test_energy_estimate(self, name):
        cfg = scenario(name, 128)
        _, series = run(cfg)
        lhs, rhs = solver.energy_balance(series, cfg.epsilon, cfg.flux.lipschitz)
        assert lhs > 0
        assert lhs <= 1.05 * rhs

    def test_errors_tagged_with_time(self, monkeypatch):
        real = solver.coupled_velocity

        def failing(coupling, n, t):
            if t > 0.05:
                raise HJDivergence("forced", last_change=1.0, iterations=3)
            return real(coupling, n, t)

        monkeypatch.setattr(solver, "coupled_velocity", failing)
        with pytest.raises(NumericalError) as info:
            run(swarm(t_final=0.2))
        # tagged with the time the coupling was evaluated, not the step start
        assert info.value.time is not None and info.value.time > 0.05
        assert "at t=" in str(info.value)

    def test_hj_divergence_at_start_tagged(self):
        cfg = scenario("chemo_hj", 64)
        bad = dataclasses.replace(
            cfg,
            coupling=dataclasses.replace(cfg.coupling, alpha=20.0, fp_maxiter=20),
            initial_data=GaussianBump((4.0,), 0.3, 5.0),
        )
        with pytest.raises(HJDivergence) as info:
            run(bad)
        assert info.value.time == 0.0


class TestDiagnostics:
    def test_gronwall_detects_growth(self):
        s = solver.StepReport(time=0.1, dt=0.1, mass=1, linf=2.0, min_value=0, cfl_advective=0,
                              cfl_viscous=0, div_sup=1.0, linf_before=1.0)
        series = solver.DiagnosticsSeries(1.0, 1.0, 1.0, [s])
        assert solver.gronwall_violations(series, 1.0) == [0]

    def test_energy_balance_arithmetic(self):
        steps = [
            solver.StepReport(time=0.1 * (i + 1), dt=0.1, mass=1, linf=1, min_value=0, cfl_advective=0,
                              cfl_viscous=0, div_sup=2.0, l2_sq=3.0, grad_sq=5.0)
            for i in range(4)
        ]
        lhs, rhs = solver.energy_balance(solver.DiagnosticsSeries(1.0, 1.0, 7.0, steps), 0.5, 1.0)
        assert lhs == pytest.approx(0.25 * 0.4 * 5.0)
        assert rhs == pytest.approx(7.0 + 0.5 * 2.0 * 0.4 * 3.0)


class TestEntropyPair:
    @pytest.mark.parametrize("k", [0.0, 0.3, 0.5, 1.2])
    def test_kruzkov_flux_normalized(self, k):
        pair = EntropyPair.kruzkov(k, LOGISTIC)
        assert pair.q(k) == 0.0
        xi = np.linspace(-0.5, 1.5, 41)
        assert np.allclose(pair.q(xi), (LOGISTIC(xi) - LOGISTIC(k)) * np.sign(xi - k))

    def test_square_flux_derivative(self):
        pair = EntropyPair.square(LOGISTIC)
        assert pair.q(0.0) == 0.0
        xi = np.linspace(0.03, 1.43, 29)  # avoids the kink at n_bar
        h = 1e-6
        num = (pair.q(xi + h) - pair.q(xi - h)) / (2 * h)
        assert np.allclose(num, 2 * xi * LOGISTIC.derivative(xi), atol=1e-6)

    @given(st.floats(-1.0, 2.0), st.floats(-1.0, 2.0))
    def test_compression_weight_identity(self, xi, k):
        for pair in (EntropyPair.square(LOGISTIC), EntropyPair.kruzkov(k, LOGISTIC)):
            lhs = pair.compression_weight(xi)
            rhs = pair.dphi(xi) * LOGISTIC(xi) - pair.q(xi)
            assert lhs == pytest.approx(float(rhs), abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            EntropyPair("cubic", LOGISTIC)


def conservation_residual(traj, flux, eps):
    """Independent forward-time, centered-space residual of the plain conservation law."""
    out = []
    for m in range(len(traj) - 1):
        n0, n1 = traj.fields[m].values, traj.fields[m + 1].values
        a = traj.velocities[m].components[0]
        dx = traj.fields[m].grid.spacing
        fa = a * flux(n0)
        lap = (np.roll(n0, -1) - 2 * n0 + np.roll(n0, 1)) / dx**2
        out.append((n1 - n0) / (traj.times[m + 1] - traj.times[m])
                   + (np.roll(fa, -1) - np.roll(fa, 1)) / (2 * dx) - eps**2 * lap)
    return out


def shock_traj(N, t_final=1.0):
    cfg = scenario("shock_1d", N, t_final=t_final)
    tau = cfg.grid.spacing
    times = np.arange(1, int(round(t_final / tau)) + 1) * tau
    traj, _ = run(cfg, snapshot_times=times)
    return cfg, traj


class TestEntropyResidual:
    def test_constant_state_divergence_free(self):
        g = Grid(2, 32, 8.0)
        a = prescribed_velocity("shear", 0.0, g, {"speed": 1.3})
        n = ScalarField(g, np.full(g.shape, 0.4))
        snaps = [(0.0, n), (0.1, n), (0.2, n)]
        for pair in (EntropyPair.square(LOGISTIC), EntropyPair.kruzkov(0.2, LOGISTIC)):
            res = entropy_residual(snaps, [a, a, a], LOGISTIC, pair, 0.1)
            assert max(np.abs(r).max() for r in res.fields) <= 1e-12

    def test_length_mismatch(self):
        g = Grid(1, 16, 8.0)
        n = ScalarField(g, np.ones(16))
        a = VelocityField.zeros(g)
        with pytest.raises(ConfigError, match="velocities"):
            entropy_residual([(0.0, n), (0.1, n)], [a], IDENTITY, EntropyPair.square(IDENTITY), 0.0)
        with pytest.raises(ConfigError):
            entropy_residual([(0.0, n)], [a], IDENTITY, EntropyPair.square(IDENTITY), 0.0)
        with pytest.raises(ConfigError):
            entropy_residual([(0.1, n), (0.1, n)], [a, a], IDENTITY, EntropyPair.square(IDENTITY), 0.0)

    def test_kruzkov_above_max_is_flipped_conservation_residual(self):
        cfg = swarm(128, t_final=0.5)
        traj, _ = run(cfg, snapshot_times=np.arange(1, 21) * 0.025)
        k = 1.5
        assert max(f.linf() for f in traj.fields) < k
        res = entropy_residual(traj, None, cfg.flux, EntropyPair.kruzkov(k, cfg.flux), cfg.epsilon)
        ref = conservation_residual(traj, cfg.flux, cfg.epsilon)
        # f(k) = 0 for the logistic flux beyond n_bar, so R = -(conservation residual)
        for r, c in zip(res.fields, ref):
            assert np.allclose(r, -c, atol=1e-9)

    def test_kruzkov_above_max_refines(self):
        pos = []
        for N in (128, 256, 512):
            cfg = swarm(N, t_final=0.5)
            tau = cfg.grid.spacing
            traj, _ = run(cfg, snapshot_times=np.arange(1, int(round(0.5 / tau)) + 1) * tau)
            res = entropy_residual(traj, None, cfg.flux, EntropyPair.kruzkov(2.0, cfg.flux), cfg.epsilon)
            pos.append(res.positive_spacetime)
        ratios = np.array(pos[:-1]) / np.array(pos[1:])
        assert np.all(ratios >= 1.7), ratios

    def test_square_entropy_dissipates_at_shock(self):
        pos, neg = [], []
        for N in (512, 1024):
            cfg, traj = shock_traj(N)
            res = entropy_residual(traj, None, cfg.flux, EntropyPair.square(cfg.flux), cfg.epsilon)
            pos.append(res.positive_spacetime)
            neg.append(res.negative_spacetime)
        assert min(neg) > 0.05
        assert pos[1] < pos[0]

    def test_nonuniform_spacing_accepted(self):
        cfg = swarm(64, t_final=0.3)
        traj, _ = run(cfg, snapshot_times=[0.05, 0.1, 0.3])
        res = entropy_residual(traj, None, cfg.flux, EntropyPair.square(cfg.flux), cfg.epsilon)
        assert np.allclose(res.intervals, [0.05, 0.05, 0.2])
        assert res.positive_l1.shape == (3,)
