import math
from fractions import Fraction
from types import SimpleNamespace

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from degenlab.params import ConfigError
from degenlab.quadrature import (
    ShellQuadRule,
    ball_volume,
    energy_integrals,
    integrate_ball_radial,
    integrate_radial,
    lambda_functional,
    power_series_tail,
    sobolev_norm,
    sphere_area,
    truncated_weight_norms,
    weight_norms,
)


def weight_norm_oracle(d, p, theta, e, inverse):
    """``int_{B_1} omega^{+-e}`` with mpmath: flat-slab measure summed in closed form plus the fast curvature correction."""
    mp = mpmath
    with mp.workdps(30):
        sgn = -1 if inverse else 1
        sigma = 2 * mp.pi ** (mp.mpf(d - 1) / 2) / mp.gamma(mp.mpf(d - 1) / 2)

        def w_log(i):
            return ((i + 1) ** ((p - 1) * theta) * mp.mpf(4) ** (-p * i * theta)) ** (sgn * e)

        def w_quad(i):
            return (((i + 1) ** (-(p - 1)) * mp.mpf(4) ** (p * i)) ** (1 - theta)) ** (sgn * e)

        def slab(a, b):
            return sigma * 2 * (b ** (d - 1) - a ** (d - 1)) / (d - 1)

        def curvature(a, b):
            return sigma * 2 * mp.quad(lambda r: (1 - mp.sqrt(1 - r * r)) * r ** (d - 2), [a, b])

        def term(i, fn):
            top = mp.mpf(4) ** (-i)
            return w_log(i) * fn(top / 2, top) + w_quad(i) * fn(top / 4, top / 2)

        # each branch is (i+1)^a 4^{b i} times a constant: sum them separately
        flat = mp.nsum(lambda i: w_log(i) * slab(mp.mpf(4) ** -i / 2, mp.mpf(4) ** -i), [0, mp.inf], method="e")
        flat += mp.nsum(lambda i: w_quad(i) * slab(mp.mpf(4) ** -i / 4, mp.mpf(4) ** -i / 2), [0, mp.inf], method="e")
        corr = sum(term(i, curvature) for i in range(40))
        return float(flat - corr)


def energy_oracle(d, alpha, theta, shells=24):
    """``int lambda_theta v^2`` at p = 2, d = 4 from the profile formula with closed-form eta."""
    mp = mpmath
    with mp.workdps(20):
        Q, C_Q = 1, 4
        sigma = 2 * mp.pi ** (mp.mpf(d - 1) / 2) / mp.gamma(mp.mpf(d - 1) / 2)
        total = mp.mpf(0)
        for i in range(shells):
            a = Fraction(8 * 16**i, i + 1)
            frac = Fraction(C_Q) / (C_Q + a)
            eps = mp.mpf(frac.numerator) / frac.denominator
            eta = 1 - eps
            top = mp.mpf(4) ** (-i)
            w_log = ((i + 1) * mp.mpf(4) ** (-2 * i)) ** theta
            w_quad = ((i + 1) ** -1 * mp.mpf(4) ** (2 * i)) ** (1 - theta)

            def axial(r):
                c = 2 * alpha
                return 2 * mp.sinh(c * mp.sqrt(1 - r * r)) / c

            def log_branch(r):
                phi = i + eta / (2**Q - 1) * ((4**i * r) ** (-Q) - 1)
                return w_log * phi**2 * axial(r) * r ** (d - 2)

            def quad_branch(r):
                phi = (i + 1) - eps * (4 ** (i + 1) * r - 1) ** 2
                return w_quad * phi**2 * axial(r) * r ** (d - 2)

            total += mp.quad(log_branch, [top / 2, top]) + mp.quad(quad_branch, [top / 4, top / 2])
        return float(sigma * total)


class TestBasics:
    @pytest.mark.parametrize("d", [2, 3, 4, 5, 7])
    def test_ball_volume(self, d):
        exact = float(mpmath.pi ** (d / 2) / mpmath.gamma(d / 2 + 1))
        assert ball_volume(d) == pytest.approx(exact, rel=1e-14)
        res = integrate_ball_radial(lambda x1, r: np.ones_like(r), d, core="gauss")
        assert res.value == pytest.approx(exact, rel=1e-10)

    def test_sphere_area(self):
        assert sphere_area(1) == pytest.approx(2 * math.pi)
        assert sphere_area(2) == pytest.approx(4 * math.pi)

    @pytest.mark.parametrize("k", range(8))
    def test_polynomial_exactness(self, k):
        res = integrate_radial(lambda r: r**k)
        assert res.value == pytest.approx(1.0 / (k + 1), rel=1e-14, abs=1e-16)

    def test_polynomial_ball_integral(self):
        # int_{B_1 in R^3} x1^2 r^2 = 8 pi / 105
        res = integrate_ball_radial(lambda x1, r: x1**2 * r**2, 3, core="gauss")
        assert res.value == pytest.approx(8 * math.pi / 105, rel=1e-12)

    def test_closed_axial_matches_gauss(self):
        c = 3.0
        closed = integrate_ball_radial(lambda r: r, 3, ShellQuadRule(depth=12), axial_rate=c, core="gauss")
        gauss = integrate_ball_radial(lambda x1, r: r * np.exp(c * x1), 3, ShellQuadRule(depth=12), core="gauss")
        assert closed.value == pytest.approx(gauss.value, rel=1e-10)

    def test_rule_validation(self):
        with pytest.raises(ConfigError):
            ShellQuadRule(depth=2)
        with pytest.raises(ConfigError):
            ShellQuadRule(nodes_per_panel=2)

    def test_csv_row(self):
        res = integrate_radial(lambda r: r)
        row = res.csv_row("x")
        assert row[0] == "x" and row[3] == "32" and row[4] == "true"
        assert float(row[1]) == res.value


class TestSeriesTail:
    @pytest.mark.parametrize("a, b, start", [(-1.5, 0.0, 5), (2.0, -1.0, 3), (0.5, -0.25, 10), (-3.0, 0.0, 0)])
    def test_against_direct_sum(self, a, b, start):
        direct = mpmath.nsum(lambda i: (i + 1) ** a * mpmath.mpf(4) ** (b * i), [start, mpmath.inf], method="levin")
        assert power_series_tail(a, b, start) == pytest.approx(float(direct), rel=1e-10)

    @pytest.mark.parametrize("a, b", [(-1.0, 0.0), (0.0, 0.1), (2.0, 1e-13)])
    def test_divergent(self, a, b):
        assert power_series_tail(a, b, 4) == math.inf


def _shell_weight(d, p, theta):
    return SimpleNamespace(d=d, p=p, theta=theta)


class TestWeightNorms:
    def test_golden_d4(self):
        ce = _shell_weight(4, 2.0, 0.5)
        ns, nt = weight_norms(ce, 3.0, 3.0)
        assert ns.converged and nt.converged
        assert ns.value == pytest.approx(weight_norm_oracle(4, 2.0, 0.5, 3.0, False) ** (1 / 3), rel=1e-10)
        assert nt.value == pytest.approx(weight_norm_oracle(4, 2.0, 0.5, 3.0, True) ** (1 / 3), rel=1e-10)

    @pytest.mark.parametrize("d, p, theta, e", [(5, 3.0, 0.3, 2.0), (3, 2.5, 0.7, 1.5)])
    def test_other_oracles(self, d, p, theta, e):
        ce = _shell_weight(d, p, theta)
        ns, _ = weight_norms(ce, e, 2.0)
        expected = weight_norm_oracle(d, p, theta, e, False)
        if math.isfinite(expected):
            assert ns.value == pytest.approx(expected ** (1 / e), rel=1e-9)

    def test_depth_independence(self):
        ce = _shell_weight(4, 2.0, 0.5)
        a = weight_norms(ce, 3.0, 3.0, ShellQuadRule(depth=24))
        b = weight_norms(ce, 3.0, 3.0, ShellQuadRule(depth=48))
        for x, y in zip(a, b):
            assert abs(x.value - y.value) / y.value < 1e-12

    def test_refinement_error_nonincreasing(self):
        ce = _shell_weight(4, 2.0, 0.5)
        for res in weight_norms(ce, 3.0, 3.0, ShellQuadRule(depth=48)):
            errs = [abs(v - res.value) for _, v in res.refinement_history]
            assert all(b <= a + 1e-15 * res.value for a, b in zip(errs, errs[1:]))

    def test_critical_d3_diverges(self):
        ns, nt = weight_norms(_shell_weight(3, 2.0, 0.5), 2.0, 2.0)
        assert not ns.converged and not nt.converged
        assert ns.tail_estimate == math.inf

    def test_sup_norms_diverge(self):
        ns, nt = weight_norms(_shell_weight(4, 2.0, 0.5), math.inf, math.inf)
        assert not ns.converged and not nt.converged

    @settings(max_examples=25)
    @given(st.integers(3, 6), st.floats(1.1, 5.0), st.floats(0.02, 0.98))
    def test_finiteness_matches_exponent_arithmetic(self, d, p, theta):
        assume((1 - theta) * p < d - 1)
        split = 1 + 1 / (d - 2)
        assume(abs(p - split) > 0.05)
        s = (d - 1) / ((1 - theta) * p)
        t = (d - 1) / (theta * p)
        ns, nt = weight_norms(_shell_weight(d, p, theta), s, t, ShellQuadRule(depth=24))
        assert (ns.converged and nt.converged) == (p > split)

    def test_truncated_norms_are_finite(self):
        ns, nt = truncated_weight_norms(_shell_weight(3, 2.0, 0.5), 2.0, 2.0, 8)
        assert ns.converged and nt.converged
        full, _ = weight_norms(_shell_weight(3, 2.0, 0.5), 2.0, 2.0)
        assert ns.value < full.value


class TestEnergies:
    def test_against_profile_oracle(self, ce4):
        zeroth, first = energy_integrals(ce4, ShellQuadRule(depth=24))
        assert zeroth.converged and first.converged
        assert zeroth.value == pytest.approx(energy_oracle(4, 24, 0.5), rel=1e-8)

    def test_depth_stability(self, ce4):
        a = energy_integrals(ce4, ShellQuadRule(depth=24))
        b = energy_integrals(ce4, ShellQuadRule(depth=40))
        for x, y in zip(a, b):
            assert abs(x.value - y.value) / y.value < 1e-3

    def test_depth_beyond_table_rejected(self, ce4):
        with pytest.raises(ConfigError):
            energy_integrals(ce4, ShellQuadRule(depth=60))


class TestNorms:
    def test_sobolev_norm_of_coordinate(self):
        # u = x1 on B_1 in R^3: ||u||_2 = sqrt(4 pi / 15), ||grad u||_2 = sqrt(4 pi / 3)
        val = sobolev_norm(lambda x, r: x, lambda x, r: (np.ones_like(x), np.zeros_like(x)), 2.0, 3)
        assert val == pytest.approx(math.sqrt(4 * math.pi / 15) + math.sqrt(4 * math.pi / 3), rel=1e-10)

    @given(st.floats(0.1, 10.0), st.floats(1.0, 4.0))
    def test_sobolev_norm_scale_invariant(self, R, gamma):
        def u(x, r):
            return 1.0 + x * x + 0.5 * r * r

        def g(x, r):
            return 2 * x, r

        ref = sobolev_norm(u, g, gamma, 3)
        scaled = sobolev_norm(lambda x, r: u(x / R, r / R), lambda x, r: tuple(c / R for c in g(x / R, r / R)), gamma, 3, R=R)
        assert scaled == pytest.approx(ref, rel=1e-10)

    def test_lambda_functional(self):
        one = lambda x, r: np.ones_like(x)  # noqa: E731
        assert lambda_functional(one, one, 3.0, 3.0, 4) == pytest.approx(1.0, rel=1e-12)
        two = lambda x, r: 2.0 * np.ones_like(x)  # noqa: E731
        assert lambda_functional(two, two, math.inf, 2.0, 3) == pytest.approx(1.0, rel=1e-12)

    def test_sobolev_rejects_small_gamma(self):
        with pytest.raises(ConfigError):
            sobolev_norm(lambda x, r: x, lambda x, r: (x, r), 0.5, 3)
