import json
import math

import numpy as np
import pytest

from loggas_sle.errors import (
    CoincidentPoints,
    DomainViolation,
    MeshTooCoarse,
    SupportOutsideBox,
    SwallowedProbe,
)
from loggas_sle.gff import (
    FieldSample,
    SquareMapPullback,
    TestFunction,
    box_green_quadrature,
    default_box,
    dirichlet_energy,
    dirichlet_inner,
    green,
    green_decrement,
    green_evolved,
    pair_field,
    sample_field,
)
from loggas_sle.gff import dirichlet_energy_static, sample_field_batch
from loggas_sle.loewner import Domain, LoewnerChain, evolve_many
from loggas_sle.loggas import GasState, Support, simulate_gas


def zero_noise_chain(horizon=0.2, n_steps=200):
    times = np.linspace(0.0, horizon, n_steps + 1)
    return LoewnerChain.from_driving(
        times, np.zeros((n_steps + 1, 1)), Domain.HALF_PLANE, kappa=4.0
    )


def dyson_chain(seed=12, horizon=0.05, n_steps=100):
    path = simulate_gas(
        GasState([-1.0, 1.0], 0.0, Support.REAL_LINE, 4.0), horizon, n_steps, seed
    )
    return LoewnerChain(path)


class TestGreen:
    def test_half_plane_closed_form(self):
        assert green(Domain.HALF_PLANE, 1j, 2j) == pytest.approx(math.log(3.0), rel=1e-12)

    def test_boundary_vanishing_spot(self):
        assert green(Domain.HALF_PLANE, 0.001 + 1e-6j, 1j) < 1e-2

    def test_quadrant_closed_form(self):
        assert green(Domain.QUADRANT, 1 + 1j, 2 + 2j) == pytest.approx(
            math.log(5.0 / 3.0), rel=1e-12
        )

    def test_symmetry_and_positivity(self):
        rng = np.random.default_rng(5)
        for domain in Domain:
            for _ in range(1000):
                z = rng.uniform(0.1, 4) + 1j * rng.uniform(0.1, 4)
                w = rng.uniform(0.1, 4) + 1j * rng.uniform(0.1, 4)
                if domain is Domain.HALF_PLANE:
                    z, w = z - 2, w - 2  # allow negative real parts on H
                if abs(z - w) < 1e-3:
                    continue
                a, b = green(domain, z, w), green(domain, w, z)
                assert a > 0
                assert a == pytest.approx(b, rel=1e-13, abs=1e-15)

    def test_conformal_square_identity(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            z = rng.uniform(0.2, 3) + 1j * rng.uniform(0.2, 3)
            w = rng.uniform(0.2, 3) + 1j * rng.uniform(0.2, 3)
            if abs(z - w) < 1e-3:
                continue
            a = green(Domain.QUADRANT, z, w)
            b = green(Domain.HALF_PLANE, z * z, w * w)
            assert abs(a - b) <= 1e-12 * abs(b)

    def test_boundary_vanishing_linear_rate(self):
        for w in (1j, -0.5 + 2j, 3 + 0.7j):
            fit_eps = 1e-3
            c = green(Domain.HALF_PLANE, 0.3 + fit_eps * 1j, w) / fit_eps
            for eps in (3e-4, 1e-4, 1e-5, 1e-6):
                assert green(Domain.HALF_PLANE, 0.3 + eps * 1j, w) <= 1.05 * c * eps

    def test_coincident_points(self):
        with pytest.raises(CoincidentPoints):
            green(Domain.HALF_PLANE, 1j, 1j)

    def test_domain_violation(self):
        with pytest.raises(DomainViolation):
            green(Domain.HALF_PLANE, 1j, 2 - 1j)
        with pytest.raises(DomainViolation):
            green(Domain.QUADRANT, -1 + 1j, 1 + 1j)


class TestGreenEvolved:
    def test_identity_at_zero(self):
        chain = dyson_chain()
        assert green_evolved(chain, 0.0, 2j, 3j) == pytest.approx(
            green(Domain.HALF_PLANE, 2j, 3j), rel=1e-12
        )

    def test_zero_noise_closed_form(self):
        # g_t(z) = sqrt(z^2 + 4t): G(g(2i), g(3i)) at t = 0.1
        chain = zero_noise_chain()
        gz = np.sqrt((2j) ** 2 + 0.4)
        gw = np.sqrt((3j) ** 2 + 0.4)
        expected = math.log(abs(gz - np.conj(gw))) - math.log(abs(gz - gw))
        val = green_evolved(chain, 0.1, 2j, 3j)
        assert val == pytest.approx(expected, rel=1e-8)
        assert val == pytest.approx(1.54023, abs=1e-4)

    def test_monotone_decreasing_along_chain(self):
        chain = dyson_chain(seed=4)
        ts = np.linspace(0.0, chain.horizon, 11)
        vals = [green_evolved(chain, t, 0.5 + 2j, -0.5 + 2.5j) for t in ts]
        assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_swallowed_probe(self):
        chain = zero_noise_chain(horizon=0.5, n_steps=500)
        with pytest.raises(SwallowedProbe):
            green_evolved(chain, 0.4, 1j, 2j)


class TestGreenDecrement:
    def test_example_value(self):
        chain = zero_noise_chain()
        assert green_decrement(chain, 0.0, 1j, 2j) == pytest.approx(-2.0, rel=1e-12)

    def test_always_nonpositive(self):
        rng = np.random.default_rng(9)
        chain = dyson_chain(seed=2)
        wpath = simulate_gas(
            GasState([0.5, 1.5], 0.0, Support.HALF_LINE, 4.0, 1.0), 0.05, 100, 7
        )
        wchain = LoewnerChain(wpath)
        for _ in range(50):
            t = rng.uniform(0, 0.05)
            z = rng.uniform(-2, 2) + 1j * rng.uniform(1, 3)
            w = rng.uniform(-2, 2) + 1j * rng.uniform(1, 3)
            assert green_decrement(chain, t, z, w) <= 1e-12
            zq = rng.uniform(0.5, 2) + 1j * rng.uniform(0.5, 2)
            assert green_decrement(wchain, t, zq, zq) <= 1e-12

    def test_matches_forward_differences_at_first_order(self):
        # d/dt G(g_t z, g_t w) under zero-noise driving, Richardson sweep
        chain = zero_noise_chain(horizon=0.11, n_steps=11)
        z, w, t = 2j, 1 + 2j, 0.05
        base = green_evolved(chain, t, z, w)
        dec = green_decrement(chain, t, z, w)
        dts = np.array([1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
        errs = []
        for dt in dts:
            fd = (green_evolved(chain, t + dt, z, w) - base) / dt
            errs.append(abs(fd - dec))
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert slope >= 0.9


class TestDirichletInner:
    def test_disjoint_supports(self):
        f = TestFunction(2j, 0.5)
        g = TestFunction(4 + 2j, 0.5)
        assert dirichlet_inner(f, g, 0.05) == 0.0

    def test_positive_norm(self):
        f = TestFunction(2j, 0.5)
        assert dirichlet_inner(f, f, 0.02) > 0

    def test_conformal_invariance_under_square_map(self):
        f = TestFunction(2j, 0.6)
        g = TestFunction(0.4 + 2.2j, 0.6)
        pf, pg = SquareMapPullback(f), SquareMapPullback(g)

        def richardson(func, other, mesh):
            coarse = dirichlet_inner(func, other, mesh)
            fine = dirichlet_inner(func, other, mesh / 4)
            return (16.0 * fine - coarse) / 15.0

        h_side = richardson(f, g, 0.03)
        o_side = richardson(pf, pg, 0.015)
        assert abs(h_side - o_side) <= 1e-4 * abs(h_side)


class TestDirichletEnergy:
    def test_positive(self):
        f = TestFunction(3j, 0.5)
        chain = dyson_chain()
        assert dirichlet_energy(f, chain, 0.0, 0.1) > 0

    def test_non_increasing_in_time(self):
        f = TestFunction(3j, 0.5)
        chain = dyson_chain(seed=3)
        vals = [dirichlet_energy(f, chain, t, 0.1) for t in (0.0, 0.02, 0.05)]
        assert vals[0] >= vals[1] >= vals[2]

    def test_quadratic_scaling(self):
        chain = dyson_chain()
        f1 = TestFunction(3j, 0.5, amplitude=1.0)
        f3 = TestFunction(3j, 0.5, amplitude=3.0)
        e1 = dirichlet_energy(f1, chain, 0.0, 0.1)
        e3 = dirichlet_energy(f3, chain, 0.0, 0.1)
        assert e3 == pytest.approx(9.0 * e1, rel=1e-12)

    def test_static_shortcut_matches_chain_at_zero(self):
        f = TestFunction(3j, 0.5)
        chain = dyson_chain()
        a = dirichlet_energy(f, chain, 0.0, 0.1)
        b = dirichlet_energy_static(f, Domain.HALF_PLANE, 0.1)
        assert a == pytest.approx(b, rel=1e-10)

    def test_support_must_fit_domain(self):
        chain = dyson_chain()
        with pytest.raises(DomainViolation):
            dirichlet_energy(TestFunction(0.3j, 0.5), chain, 0.0, 0.1)


class TestFieldSampler:
    BOX = (-2.0, 2.0, 0.0, 2.0)
    MESH = 0.025
    BUMP = TestFunction(1j, 0.4)

    def test_deterministic_per_seed(self):
        a = sample_field(self.BOX, self.MESH, seed=3)
        b = sample_field(self.BOX, self.MESH, seed=3)
        assert np.array_equal(a.values, b.values)

    def test_mesh_must_divide(self):
        with pytest.raises(ValueError):
            sample_field((0.0, 1.0, 0.0, 1.0), 0.3, seed=0)

    def test_mesh_too_coarse(self):
        with pytest.raises(MeshTooCoarse):
            sample_field(self.BOX, 0.1, seed=0, min_feature=0.8)

    def test_zero_mean_pairing(self):
        vals = [pair_field(f, self.BUMP) for f in sample_field_batch(self.BOX, self.MESH, range(2000))]
        vals = np.asarray(vals)
        assert abs(vals.mean()) <= 3 * vals.std() / math.sqrt(vals.size)

    def test_variance_matches_box_green_quadrature(self):
        oracle = box_green_quadrature(self.BOX, self.MESH, self.BUMP)
        vals = [pair_field(f, self.BUMP) for f in sample_field_batch(self.BOX, self.MESH, range(3000))]
        assert np.var(vals) == pytest.approx(oracle, rel=0.08)

    def test_covariance_structure_two_bumps(self):
        g = TestFunction(-0.5 + 1j, 0.35)
        oracle = box_green_quadrature(self.BOX, self.MESH, self.BUMP, g)
        pf, pg = [], []
        for fld in sample_field_batch(self.BOX, self.MESH, range(3000)):
            pf.append(pair_field(fld, self.BUMP))
            pg.append(pair_field(fld, g))
        pf, pg = np.asarray(pf), np.asarray(pg)
        cov = np.mean(pf * pg) - pf.mean() * pg.mean()
        se = np.std(pf * pg) / math.sqrt(pf.size)
        assert abs(cov - oracle) <= 5 * se

    def test_pairing_linearity(self):
        fld = sample_field(self.BOX, self.MESH, seed=11)
        g = TestFunction(-0.5 + 1j, 0.35)
        zz = (fld.node_x[:, None] + 1j * fld.node_y[None, :]).ravel()
        combined = 2.0 * self.BUMP.value(zz) + 0.5 * g.value(zz)
        direct = fld.mesh**2 * np.sum(fld.values.ravel() * combined)
        assert direct == pytest.approx(
            2.0 * pair_field(fld, self.BUMP) + 0.5 * pair_field(fld, g), rel=1e-12
        )

    def test_support_outside_box(self):
        fld = sample_field(self.BOX, self.MESH, seed=0)
        with pytest.raises(SupportOutsideBox):
            pair_field(fld, TestFunction(5 + 1j, 0.4))

    def test_csv_round_trip_header(self, tmp_path):
        fld = sample_field((0.0, 1.0, 0.0, 1.0), 0.25, seed=2)
        f = tmp_path / "field.csv"
        fld.write_csv(f)
        lines = f.read_text().splitlines()
        assert lines[0] == "ix,iy,value"
        assert len(lines) == 1 + fld.values.size
        meta = json.loads((tmp_path / "field.json").read_text())
        assert meta["mesh"] == 0.25 and meta["seed"] == 2


class TestEvolvedPairingVariance:
    def test_variance_matches_evolved_energy(self):
        # Var[(H o g_t, f)] vs E_t(f): box truncation at 16x support
        # diameter plus bilinear interpolation keep the bias within the
        # 7% contract at 10^4 field draws.
        f = TestFunction(3j, 0.5)
        mesh = 0.0625
        box = default_box(Domain.HALF_PLANE, [f], factor=16)
        chain = dyson_chain(seed=12, horizon=0.05, n_steps=100)
        e_t = dirichlet_energy(f, chain, 0.05, mesh)
        pts, vals = f.nodes(mesh)
        evals = evolve_many(chain, pts, 0.05)
        w = np.array([e.g for e in evals])
        pairs = np.empty(10000)
        for i, fld in enumerate(sample_field_batch(box, mesh, range(10000))):
            pairs[i] = mesh**2 * np.sum(vals * fld.interpolate(w))
        assert np.var(pairs) == pytest.approx(e_t, rel=0.07)
