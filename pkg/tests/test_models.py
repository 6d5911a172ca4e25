"""Model construction, jump measures, regions, and assumption screening."""

import numpy as np
import pytest
from scipy import integrate

import levytpt as lt
from levytpt.errors import ConfigError


class TestBuildModel:
    def test_double_well_family(self, model):
        assert model.dim == 1
        xs = np.array([-2.0, -1.0, 0.0, 0.5, 2.0])
        assert np.allclose(model.drift(xs), xs - xs**3)
        assert model.sigma_const == 0.5
        assert model.sigma_l == 0.3
        assert model.has_jumps

    def test_no_jumps_degenerates_to_diffusion(self):
        m = lt.build_model({"family": "double-well", "sigma": 0.5, "sigma_l": 0.0})
        assert not m.has_jumps
        assert m.levy_measure is None
        # Empty measure has the same effect as zero amplitude.
        m2 = lt.build_model({
            "family": "double-well", "sigma": 0.5, "sigma_l": 0.3,
            "measure": {"kind": "uniform", "r_min": 0.1, "r_max": 1.0, "mass": 0.0},
        })
        assert not m2.has_jumps

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            lt.build_model({"family": "triple-well"})

    def test_missing_family_rejected(self):
        with pytest.raises(ConfigError):
            lt.build_model({"sigma": 1.0})

    def test_ou_drift(self, ou_model):
        assert ou_model.drift(2.0) == pytest.approx(-2.0)

    def test_additive_inverse_round_trip(self, model):
        # T^{-1} then T must return the start point to machine precision.
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-2, 2)
            r = rng.uniform(-1, 1)
            theta = rng.uniform(0, 1)
            y, jac = model.jump_amplitude_inverse(x, r, theta)
            assert jac == 1.0
            fwd = y + theta * model.jump_amplitude(y, r)
            assert abs(fwd - x) < 1e-12


class TestLevyMeasure:
    def test_uniform_mass_and_moments(self):
        nu = lt.uniform_measure(2.0, r_min=0.1, r_max=1.0)
        assert nu.total_mass == pytest.approx(2.0, rel=1e-12)
        # Symmetric support: odd moment vanishes, second moment is exact.
        assert nu.moment(1) == pytest.approx(0.0, abs=1e-14)
        # Density is mass/(2*width) per side; both sides contribute to r^2.
        m2_exact = (2.0 / (2 * 0.9)) * 2.0 * (1.0**3 - 0.1**3) / 3.0
        assert nu.moment(2) == pytest.approx(m2_exact, rel=1e-12)
        assert nu.moment(2) == pytest.approx(0.74, rel=1e-12)

    def test_truncated_stable_mass_matches_quadrature(self):
        # Choose c so the one-sided mass over [0.01, 1) integrates to 10,
        # making the symmetric total 20.
        alpha = 0.5
        target = 20.0
        raw, _ = integrate.quad(lambda r: r ** (-1 - alpha), 0.01, 1.0)
        c = target / (2 * raw)
        nu = lt.truncated_stable_measure(alpha=alpha, c=c, r_min=0.01, r_max=1.0)
        oracle, err = integrate.quad(lambda r: 2 * c * r ** (-1 - alpha), 0.01, 1.0)
        assert err < 1e-7
        assert abs(nu.total_mass - oracle) < 1e-8
        assert abs(nu.total_mass - 20.0) < 1e-8

    def test_quadrature_integrates_smooth_functions(self):
        nu = lt.uniform_measure(2.0, r_min=0.1, r_max=1.0)
        r, w = nu.quadrature(64)
        for k in (0, 1, 2, 3, 4):
            got = float(np.sum(w * r**k))
            want = nu.moment(k)
            assert got == pytest.approx(want, abs=1e-10)

    def test_table_measure(self):
        # The table is literal: symmetric support needs explicit negative nodes.
        pos = np.linspace(0.1, 1.0, 200)
        nodes = np.concatenate([-pos[::-1], pos])
        dens = np.exp(-np.abs(nodes))
        nu = lt.table_measure(nodes, dens)
        oracle, _ = integrate.quad(np.exp, -1.0, -0.1)
        assert nu.total_mass == pytest.approx(2 * oracle, rel=1e-3)

    def test_negative_density_rejected(self):
        with pytest.raises(ConfigError):
            lt.table_measure(np.linspace(0.1, 1, 10), -np.ones(10))

    def test_mark_sampling_matches_density(self):
        nu = lt.uniform_measure(2.0, r_min=0.1, r_max=1.0)
        uu, rr = nu.mark_inverse_cdf()
        u = np.random.default_rng(0).uniform(size=20000)
        marks = np.interp(u, uu, rr)
        assert np.all((np.abs(marks) >= 0.1) & (np.abs(marks) <= 1.0))
        # Uniform symmetric measure: half the marks on each side.
        frac_neg = np.mean(marks < 0)
        assert abs(frac_neg - 0.5) < 0.02


class TestRegion:
    def test_interval_membership(self):
        a = lt.Region.interval(-1.25, -0.75, label="A")
        assert a.contains(-1.0)
        assert not a.contains(-0.75)  # open set
        assert a.contains_closure(-0.75)
        assert not a.contains(0.0)

    def test_signed_distance(self):
        a = lt.Region.interval(-1.25, -0.75)
        assert a.signed_distance(-1.0) < 0
        assert a.signed_distance(-0.75) == pytest.approx(0.0, abs=1e-15)
        assert a.signed_distance(0.25) == pytest.approx(1.0)

    def test_collar(self):
        a = lt.Region.interval(-1.25, -0.75)
        assert a.collar_contains(-0.5, 0.3)
        assert not a.collar_contains(-0.4, 0.3)
        assert a.collar_contains(0.25, 1.0)

    def test_gap(self):
        a = lt.Region.interval(-1.25, -0.75)
        b = lt.Region.interval(0.75, 1.25)
        assert lt.region_gap(a, b) == pytest.approx(1.5)


class TestValidateAssumptions:
    def test_reference_geometry_passes(self, model, regions):
        a, b = regions
        rep = lt.validate_assumptions(model, a, b)
        assert rep.dist_ab == pytest.approx(1.5)
        assert rep.max_jump_reach == pytest.approx(0.3, abs=1e-9)
        assert rep.jump_clearance_ok
        assert rep.ok

    def test_close_sets_with_long_jumps_fail(self):
        m = lt.build_model({
            "family": "double-well", "sigma": 0.5, "sigma_l": 1.0,
            "measure": {"kind": "uniform", "r_min": 0.1, "r_max": 1.0, "mass": 2.0},
        })
        a = lt.Region.interval(-0.4, 0.0, label="A")
        b = lt.Region.interval(0.4, 1.0, label="B")
        rep = lt.validate_assumptions(m, a, b)
        # dist 0.4 <= reach 1.0: advisory failure, not an exception.
        assert not rep.jump_clearance_ok
        assert not rep.ok
        assert rep.warnings

    def test_lyapunov_drift_negative_at_large_x(self, model, regions):
        rep = lt.validate_assumptions(model, *regions)
        assert rep.lyapunov_ok
        # L applied to V(x)=x^2 at the probe points, all negative far out.
        assert rep.lyapunov_drift
        assert all(v < 0.0 for v in rep.lyapunov_drift.values())
