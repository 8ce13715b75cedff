import numpy as np
import pytest

from loggas_sle.errors import DomainViolation, GridExceeded, PoleHit
from loggas_sle.loewner import (
    Domain,
    LoewnerChain,
    batch_trace,
    evolve,
    evolve_many,
    evolve_trace,
    hcap_coefficient,
    stopping_time,
    vector_field,
    write_trace_csv,
)
from loggas_sle.loggas import GasState, Support, simulate_gas


def zero_noise_chain(horizon=0.3, n_steps=300, n=1):
    times = np.linspace(0.0, horizon, n_steps + 1)
    return LoewnerChain.from_driving(
        times, np.zeros((n_steps + 1, n)), Domain.HALF_PLANE, kappa=4.0
    )


def dyson_chain(n=2, seed=3, horizon=0.1, n_steps=200, kappa=4.0):
    x0 = np.linspace(-1.0, 1.0, n)
    if n == 1:
        x0 = np.array([0.0])
    path = simulate_gas(GasState(x0, 0.0, Support.REAL_LINE, kappa), horizon, n_steps, seed)
    return LoewnerChain(path)


def wishart_chain(nu=1.0, seed=5, horizon=0.05, n_steps=100):
    path = simulate_gas(
        GasState([0.5, 1.5], 0.0, Support.HALF_LINE, 4.0, nu), horizon, n_steps, seed
    )
    return LoewnerChain(path)


class TestVectorField:
    def test_single_pole_at_origin(self):
        assert vector_field(Domain.HALF_PLANE, 1j, [0.0]) == pytest.approx(-2j)

    def test_two_symmetric_poles(self):
        assert vector_field(Domain.HALF_PLANE, 1j, [-1.0, 1.0]) == pytest.approx(-2j)

    def test_quadrant_single_pole(self):
        val = vector_field(Domain.QUADRANT, 2j, [1.0], delta=0.0)
        assert val == pytest.approx(-1.6j)

    def test_pole_hit(self):
        with pytest.raises(PoleHit):
            vector_field(Domain.HALF_PLANE, 1.0 + 0j, [1.0])
        with pytest.raises(PoleHit):
            vector_field(Domain.QUADRANT, 1e-15 + 0j, [1.0])


class TestEvolveClosedForm:
    """Zero driving, N=1: g_t(z) = sqrt(z^2 + 4t), g' = z / g."""

    def test_single_probe_value(self):
        chain = zero_noise_chain()
        e = evolve(chain, 1j, 0.125)
        assert e.g == pytest.approx(np.sqrt(0.5) * 1j, rel=1e-10)
        assert e.alive

    @pytest.mark.parametrize("t", [0.05, 0.125, 0.2])
    def test_many_probes_map_and_derivative(self, t):
        chain = zero_noise_chain()
        rng = np.random.default_rng(1)
        probes = rng.uniform(-2, 2, 20) + 1j * rng.uniform(1.2, 3.0, 20)
        for e in evolve_many(chain, probes, t):
            exact = np.sqrt(e.z0**2 + 4 * t)
            if exact.imag < 0:
                exact = -exact
            assert abs(e.g - exact) / abs(exact) < 1e-6
            assert abs(e.gprime - e.z0 / exact) / abs(e.z0 / exact) < 1e-6

    def test_initial_condition(self):
        chain = dyson_chain()
        e = evolve(chain, 0.7 + 1.3j, 0.0)
        assert e.g == 0.7 + 1.3j
        assert e.gprime == 1.0 and e.log_gprime == 0.0

    def test_swallow_near_quarter(self):
        chain = zero_noise_chain()
        e = evolve(chain, 1j, 0.26)
        assert not e.alive
        assert e.swallow_time == pytest.approx(0.25, abs=1e-3)
        assert abs(e.g) == pytest.approx(0.0, abs=0.05)  # frozen near the tip

    def test_grid_exceeded(self):
        chain = zero_noise_chain(horizon=0.3)
        with pytest.raises(GridExceeded):
            evolve(chain, 1j, 0.4)

    def test_probe_must_be_interior(self):
        chain = zero_noise_chain()
        with pytest.raises(DomainViolation):
            evolve(chain, 1.0 - 0.5j, 0.1)
        wchain = wishart_chain()
        with pytest.raises(DomainViolation):
            evolve(wchain, -1.0 + 1j, 0.01)


class TestInvariants:
    def test_imaginary_part_decreases_on_h(self):
        chain = dyson_chain(n=3, seed=11)
        evals = evolve_trace(chain, 0.5 + 1.5j, chain.times[::10])
        ims = np.array([e.g.imag for e in evals])
        assert np.all(np.diff(ims) < 0)

    def test_quadrant_preserved_on_o(self):
        chain = wishart_chain(seed=7)
        for z0 in (0.5 + 0.8j, 2.0 + 0.3j, 0.2 + 2.0j):
            evals = evolve_trace(chain, z0, chain.times[::5])
            for e in evals:
                if e.alive:
                    assert e.g.real > 0 and e.g.imag > 0

    def test_log_gprime_consistent_with_gprime(self):
        for chain in (dyson_chain(seed=2), wishart_chain(seed=9)):
            zs = [1 + 2j, 0.5 + 1.0j, 2 + 3j]
            for e in evolve_many(chain, zs, chain.horizon):
                assert abs(np.exp(e.log_gprime) - e.gprime) <= 1e-8 * abs(e.gprime)

    def test_derivative_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        h = 1e-5
        for seed in (1, 2):
            chain = dyson_chain(n=2, seed=seed)
            probes = rng.uniform(-2, 2, 10) + 1j * rng.uniform(1.0, 3.0, 10)
            for z in probes:
                t = chain.horizon
                gp = evolve(chain, z, t).gprime
                gplus = evolve(chain, z + h, t).g
                gminus = evolve(chain, z - h, t).g
                fd = (gplus - gminus) / (2 * h)
                assert abs(gp - fd) / abs(gp) <= 1e-4

    def test_driving_grid_convergence_order(self):
        # piecewise-constant driving: halving the macro grid changes g by O(dt)
        fine = simulate_gas(
            GasState([-1.0, 1.0], 0.0, Support.REAL_LINE, 4.0), 0.1, 1600, seed=17
        )
        z, t = 0.5 + 2j, 0.1
        def g_at(stride):
            times = fine.times[::stride]
            pos = fine.positions[::stride]
            ch = LoewnerChain.from_driving(times, pos, Domain.HALF_PLANE, 4.0)
            return evolve(ch, z, t, rtol=1e-12, atol=1e-14).g
        ref = g_at(1)
        errs = np.array([abs(g_at(s) - ref) for s in (16, 8, 4, 2)])
        dts = np.array([16, 8, 4, 2], dtype=float)
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope >= 0.9


class TestHcap:
    def test_zero_noise_capacity(self):
        chain = zero_noise_chain()
        c1 = hcap_coefficient(chain, 0.1, probe_radius=1e3)
        assert c1 == pytest.approx(0.2, abs=1e-4)

    def test_three_particle_capacity(self):
        chain = dyson_chain(n=3, seed=21, horizon=0.1, n_steps=200)
        c1 = hcap_coefficient(chain, 0.1, probe_radius=1e3)
        assert c1 == pytest.approx(0.6, rel=1e-3)

    def test_zero_time(self):
        chain = dyson_chain()
        assert hcap_coefficient(chain, 0.0, probe_radius=1e3) == pytest.approx(0.0, abs=1e-9)

    def test_probe_radius_precondition(self):
        chain = dyson_chain()
        with pytest.raises(ValueError):
            hcap_coefficient(chain, 0.1, probe_radius=10.0)


class TestStoppingTime:
    def test_far_probes_return_horizon(self):
        chain = dyson_chain(horizon=0.05, n_steps=100)
        assert stopping_time(chain, [4j, 1 + 3j]) == chain.horizon

    def test_zero_noise_probe_at_i(self):
        chain = zero_noise_chain(horizon=1.0, n_steps=1000)
        tau = stopping_time(chain, [1j])
        assert tau == pytest.approx(0.25, abs=2e-3)

    def test_monotone_in_swallow_eps(self):
        chain = zero_noise_chain(horizon=1.0, n_steps=1000)
        taus = [stopping_time(chain, [1j], swallow_eps=eps) for eps in (1e-4, 1e-3, 1e-2, 1e-1)]
        assert all(a >= b for a, b in zip(taus, taus[1:]))


class TestBatchTrace:
    def test_matches_adaptive_integrator(self):
        path = simulate_gas(
            GasState([-1.0, 1.0], 0.0, Support.REAL_LINE, 4.0), 0.1, 200, seed=3
        )
        chain = LoewnerChain(path)
        probes = np.array([2j, 3 + 2j, -1 + 4j])
        bt = batch_trace(
            Domain.HALF_PLANE, path.positions[None], path.times, probes, [0, 100, 200]
        )
        for j, z0 in enumerate(probes):
            ev = evolve(chain, z0, 0.1)
            assert abs(bt["g"][0, 2, j] - ev.g) < 1e-10
            assert abs(bt["log_gprime"][0, 2, j] - ev.log_gprime) < 1e-10

    def test_quadrant_batch(self):
        chain = wishart_chain(seed=13)
        probes = np.array([1 + 2j, 2 + 1j])
        bt = batch_trace(
            Domain.QUADRANT, chain.positions[None], chain.times, probes,
            [0, chain.times.size - 1], delta=chain.delta,
        )
        for j, z0 in enumerate(probes):
            ev = evolve(chain, z0, chain.horizon)
            assert abs(bt["g"][0, 1, j] - ev.g) < 1e-9


class TestTraceSerialization:
    def test_csv_columns(self, tmp_path):
        chain = dyson_chain()
        evals = evolve_trace(chain, 2j, chain.times[::50])
        f = tmp_path / "trace.csv"
        write_trace_csv(evals, f)
        lines = f.read_text().splitlines()
        assert lines[0] == "t,re_g,im_g,re_gp,im_gp,alive"
        assert len(lines) == len(evals) + 1
        assert lines[1].endswith(",1")
