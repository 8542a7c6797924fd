import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenlab import kernels
from degenlab.discrete import (
    CALIBRATION,
    AxisymGrid,
    DirichletProblem,
    GridField,
    caccioppoli_check,
    calibrate,
    corollary_check,
    cutoff_optimize,
    energy,
    minimize_energy,
    moser_bound_check,
    reference_boundary,
    sharpness_ratio,
    sphere_max_bound,
    weak_residual,
)
from degenlab.params import ConfigError, ExponentConfig


@pytest.fixture(scope="module")
def small_grid():
    return AxisymGrid.uniform(1 / 8, d=3)


@pytest.fixture(scope="module")
def reference_solutions():
    grid = AxisymGrid.uniform(1 / 16, d=3)
    out = []
    for p in (1.5, 2.0, 3.0):
        for m in range(3):
            u, rep = minimize_energy(DirichletProblem(grid, p, reference_boundary(11, m)))
            out.append((p, u, rep))
    return out


def bump(grid, radius=0.9):
    X, R = grid.mesh()
    return GridField(grid, np.clip(1 - (X**2 + R**2) / radius**2, 0, None) ** 2)


class TestGrid:
    def test_axis_offset(self):
        g = AxisymGrid.uniform(1 / 8)
        assert g.shape == (17, 8)
        assert g.r[0] == pytest.approx(1 / 16) and g.r[-1] == pytest.approx(15 / 16)

    def test_annulus_grid(self):
        g = AxisymGrid.uniform(1 / 8, r_range=(0.25, 1.0), region="annulus", inner=0.5)
        assert g.r[0] == 0.25 and g.shape == (17, 7)
        X, R = g.cell_centers()
        rho = np.hypot(X, R)
        assert np.array_equal(g.active, (rho > 0.5) & (rho < 1.0))

    def test_validation(self):
        with pytest.raises(ConfigError):
            AxisymGrid(1, 4)
        with pytest.raises(ConfigError):
            AxisymGrid(4, 4, region="cube")

    def test_gradient_operator_matches_kernel(self, small_grid):
        rng = np.random.default_rng(0)
        u = rng.standard_normal(small_grid.shape)
        gx, gr = kernels.cell_gradients(u, small_grid.hx, small_grid.hr)
        G = small_grid.gradient_operator() @ u.ravel()
        n = gx.size
        np.testing.assert_allclose(G[:n], gx.ravel(), rtol=1e-13, atol=1e-12)
        np.testing.assert_allclose(G[n:], gr.ravel(), rtol=1e-13, atol=1e-12)

    def test_volume_weights(self):
        g = AxisymGrid.uniform(1 / 64, d=3, region="cylinder")
        # cells cover h/2 <= r <= 1 - h/2: the shell of the unit cylinder has volume 2 pi (1 - h)
        assert g.gauss_weights().sum() == pytest.approx(2 * math.pi * (1 - 1 / 64), rel=1e-12)


class TestEnergy:
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_gradient_matches_differences(self, small_grid, p):
        g = small_grid
        w = g.gauss_weights()
        rng = np.random.default_rng(int(p * 10))
        worst = 0.0
        for _ in range(100):
            u = rng.standard_normal(g.shape)
            d = rng.standard_normal(g.shape)
            _, grad, _ = kernels.energy_gradient(u, w, g.hx, g.hr, p, 0.0)
            h = 1e-6
            ep = kernels.energy_gradient(u + h * d, w, g.hx, g.hr, p, 0.0)[0]
            em = kernels.energy_gradient(u - h * d, w, g.hx, g.hr, p, 0.0)[0]
            fd = (ep - em) / (2 * h)
            exact = float(np.sum(grad * d))
            worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-12))
        assert worst < 1e-5

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_flux_pairing_is_p_times_energy(self, small_grid, p):
        u = GridField.from_function(small_grid, lambda x, r: np.sin(2 * x) + r * r)
        assert weak_residual(u, u, 1.0, p) == pytest.approx(p * energy(u, 1.0, p), rel=1e-12)

    @settings(max_examples=30)
    @given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000), st.sampled_from([1.5, 2.0, 3.0]))
    def test_weak_residual_linear(self, a, b, seed, p):
        g = AxisymGrid.uniform(1 / 8, d=3)
        rng = np.random.default_rng(seed)
        u, f1, f2 = (GridField(g, rng.standard_normal(g.shape)) for _ in range(3))
        combo = GridField(g, a * f1.values + b * f2.values)
        lhs = weak_residual(u, combo, 1.0, p)
        rhs = a * weak_residual(u, f1, 1.0, p) + b * weak_residual(u, f2, 1.0, p)
        scale = abs(a) * weak_residual(u, f1, 1.0, p, absolute=True) + abs(b) * weak_residual(u, f2, 1.0, p, absolute=True)
        assert abs(lhs - rhs) <= 1e-13 * max(scale, 1e-300)


class TestSolver:
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_affine_data_exact(self, p):
        g = AxisymGrid.uniform(1 / 16, d=3)
        u, rep = minimize_energy(DirichletProblem(g, p, lambda x, r: 2 * x + 1))
        X, _ = g.mesh()
        assert rep.converged
        assert np.max(np.abs(u.values - (2 * X + 1))) < 1e-8

    def test_energy_history_nonincreasing(self, reference_solutions):
        for _, _, rep in reference_solutions:
            assert rep.converged
            assert all(b <= a for a, b in zip(rep.energy_history, rep.energy_history[1:]))

    def test_maximum_principle(self, reference_solutions):
        for _, u, _ in reference_solutions:
            used, _ = u.grid.node_roles()
            bnd = u.values[u.dirichlet]
            inner = u.values[used & ~u.dirichlet]
            assert inner.max() <= bnd.max() + 1e-8
            assert inner.min() >= bnd.min() - 1e-8

    def test_regularisation_reported(self):
        g = AxisymGrid.uniform(1 / 8, d=3)
        _, rep = minimize_energy(DirichletProblem(g, 1.5, lambda x, r: x))
        assert rep.regularization == pytest.approx(1e-8)
        _, rep = minimize_energy(DirichletProblem(g, 3.0, lambda x, r: 3 * x))
        assert rep.regularization == 0.0

    def test_rejects_nonpositive_lambda(self, small_grid):
        with pytest.raises(ConfigError):
            DirichletProblem(small_grid, 2.0, lambda x, r: x, lam=0.0)

    def test_truncation_compatibility(self):
        errors = []
        for h in (1 / 8, 1 / 16, 1 / 32):
            g = AxisymGrid.uniform(h, d=3)
            u, _ = minimize_energy(DirichletProblem(g, 2.0, lambda x, r: x + 0.3 * r * r - 0.1))
            up = u.positive_part()
            phi = GridField(g, bump(g).values ** 2 * up.values)
            gap = abs(weak_residual(u, phi) - weak_residual(up, phi)) / weak_residual(u, phi, absolute=True)
            assert gap <= h
            errors.append(gap)
        assert errors[0] > errors[1] > errors[2]


class TestCaccioppoli:
    def test_holds_for_minimisers(self, reference_solutions):
        for p, u, _ in reference_solutions:
            eta = bump(u.grid)
            for beta in (1.0, 2.0, 5.0):
                res = caccioppoli_check(u, 1.0, 1.0, eta, beta, p)
                assert res.holds, (p, beta, res)

    def test_rejects_small_beta(self, reference_solutions):
        _, u, _ = reference_solutions[0]
        with pytest.raises(ConfigError):
            caccioppoli_check(u, 1.0, 1.0, bump(u.grid), 0.5, 2.0)


class TestCutoff:
    def test_annulus_capacity(self):
        res = cutoff_optimize(1.0, 1.0, 0.5, 1.0, 2.0, 3, h=1 / 128)
        assert res.J_min == pytest.approx(4 * math.pi, rel=0.02)
        assert res.J_min <= res.J_ramp
        assert res.profile[0] == 1.0 and res.profile[-1] == 0.0
        assert np.all(np.diff(res.profile) <= 0)

    @settings(max_examples=20)
    @given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.sampled_from([1.5, 2.0, 3.0]))
    def test_monotone_in_mu(self, a, b, p):
        def mu1(x, r):
            return 1.0 + a * x * x

        def mu2(x, r):
            return mu1(x, r) + b * r * r

        lo = cutoff_optimize(mu1, 1.0, 0.5, 1.0, p, 3, h=1 / 32).J_min
        hi = cutoff_optimize(mu2, 1.0, 0.5, 1.0, p, 3, h=1 / 32).J_min
        assert hi >= lo * (1 - 1e-12)

    def test_bound(self):
        res = cutoff_optimize(1.0, lambda x, r: x + 2.0, 0.5, 0.75, 2.0, 3, s=4.0, h=1 / 64)
        assert res.ok and np.isfinite(res.bound_rhs)

    def test_rejects_bad_radii(self):
        with pytest.raises(ConfigError):
            cutoff_optimize(1.0, 1.0, 1.0, 0.5, 2.0)


class TestBounds:
    def test_moser_bound(self, reference_solutions):
        for p, u, _ in reference_solutions:
            chk = moser_bound_check(u, 1.0, 1.0, ExponentConfig(3, p, 8.0, 8.0))
            assert chk.ok and chk.ratio > 0

    def test_corollary_bound(self, reference_solutions):
        for p, u, _ in reference_solutions:
            for gamma in (0.5, 1.0, 2.0):
                assert corollary_check(u, 1.0, 1.0, ExponentConfig(3, p), gamma).ok

    def test_sphere_bound_2d(self):
        g = AxisymGrid.uniform(1 / 16, d=2)
        for m in range(3):
            u, _ = minimize_energy(DirichletProblem(g, 2.0, reference_boundary(5, m)))
            chk = sphere_max_bound(u, ExponentConfig(2, 2.0))
            assert chk.ok
            assert 0.5 < chk.r0 < 1.0

    def test_sphere_bound_needs_regime(self, reference_solutions):
        _, u, _ = reference_solutions[3]
        with pytest.raises(ConfigError):
            sphere_max_bound(u, ExponentConfig(3, 2.0, 4.0, 4.0))

    def test_critical_pair_rejected(self, reference_solutions):
        _, u, _ = reference_solutions[0]
        with pytest.raises(ConfigError):
            moser_bound_check(u, 1.0, 1.0, ExponentConfig(3, 2.0, 2.0, 2.0))


class TestSharpness:
    def test_exponents(self, ce4):
        crit = sharpness_ratio(ce4, ExponentConfig(4, 2.0, 3.0, 3.0), 6)
        adm = sharpness_ratio(ce4, ExponentConfig(4, 2.0, 4.0, 4.0), 6)
        assert crit.exponent == 0.0
        assert adm.exponent == pytest.approx(6.0)
        assert crit.sup_val == pytest.approx(6 * math.exp(12))

    def test_depth_limit(self, ce4):
        with pytest.raises(ConfigError):
            sharpness_ratio(ce4, ExponentConfig(4, 2.0, 3.0, 3.0), 41)


class TestSerialisation:
    def test_binary_round_trip(self, reference_solutions, tmp_path):
        _, u, _ = reference_solutions[1]
        path = tmp_path / "u.bin"
        u.save(path)
        back = GridField.load(path)
        assert back.grid == u.grid
        assert np.array_equal(back.values, u.values)
        assert np.array_equal(back.dirichlet, u.dirichlet)
        assert back.to_bytes() == u.to_bytes()

    def test_binary_layout(self, small_grid):
        u = GridField.from_function(small_grid, lambda x, r: x)
        data = u.to_bytes()
        assert data[:4] == b"DGLF"
        nx, nr = small_grid.shape
        body = np.frombuffer(data[-(9 * nx * nr) : -(nx * nr)], dtype="<f8").reshape(nx, nr)
        assert np.array_equal(body, u.values)

    def test_corrupt_payloads(self, small_grid):
        data = GridField.from_function(small_grid, lambda x, r: x).to_bytes()
        with pytest.raises(ValueError):
            GridField.from_bytes(b"XXXX" + data[4:])
        with pytest.raises(ValueError):
            GridField.from_bytes(data[:-1])
        with pytest.raises(ValueError):
            GridField.from_bytes(data[:10])

    def test_csv_rows(self, small_grid):
        u = GridField.from_function(small_grid, lambda x, r: x)
        rows = list(u.csv_rows())
        assert rows[0] == ["x1", "r", "value", "dirichlet"]
        assert len(rows) == 1 + small_grid.nx * small_grid.nr
        assert float(rows[1][2]) == u.values[0, 0]

    def test_rejects_non_finite(self, small_grid):
        with pytest.raises(ValueError):
            GridField(small_grid, np.full(small_grid.shape, np.nan))


@pytest.mark.slow
def test_calibration_is_reproducible():
    assert calibrate() == CALIBRATION
