import math

import numpy as np
import pytest

from wirepinn import fermi

# Dirichlet eta function at 3/2: (1 - 2**-0.5) * zeta(3/2)
F_HALF_AT_ZERO = 0.7651470246254077


class TestQuadratureOracle:
    def test_boltzmann_limit(self):
        assert fermi.fermi_half_quadrature(-20.0) == pytest.approx(math.exp(-20.0), rel=1e-6)

    def test_eta_zero_series_value(self):
        assert fermi.fermi_half_quadrature(0.0) == pytest.approx(F_HALF_AT_ZERO, abs=1e-5)

    def test_monotone(self):
        assert fermi.fermi_half_quadrature(2.0) > fermi.fermi_half_quadrature(1.0)


class TestApprox:
    def test_deep_boltzmann(self):
        # e^-10 = 4.5399929762484854e-05
        value = fermi.fermi_half_approx(-10.0)
        assert value == pytest.approx(4.5399929762484854e-05, rel=5e-3)
        assert value == pytest.approx(fermi.fermi_half_quadrature(-10.0), rel=5e-3)

    def test_eta_zero(self):
        assert fermi.fermi_half_approx(0.0) == pytest.approx(0.7651, rel=5e-3)

    def test_degenerate_sommerfeld(self):
        # leading Sommerfeld term (4 / (3 sqrt(pi))) * eta^(3/2) ~ 67.3 at eta = 20
        value = fermi.fermi_half_approx(20.0)
        assert value == pytest.approx(67.3, rel=5e-3)
        assert value == pytest.approx(fermi.fermi_half_quadrature(20.0), rel=5e-3)

    def test_accuracy_class_on_grid(self):
        # coarse here; the dense 0.01 grid runs in the acceptance suite
        grid = np.arange(-30.0, 50.001, 0.5)
        approx = fermi.fermi_half_approx(grid)
        quad = np.array([fermi.fermi_half_quadrature(e) for e in grid])
        assert np.max(np.abs(approx - quad) / quad) <= 5e-3

    def test_strictly_increasing(self):
        grid = np.arange(-30.0, 50.001, 0.01)
        values = fermi.fermi_half_approx(grid)
        assert np.all(np.diff(values) > 0)

    def test_vector_and_scalar_agree(self):
        grid = np.array([-3.0, 0.5, 7.0])
        vec = fermi.fermi_half_approx(grid)
        assert all(vec[i] == fermi.fermi_half_approx(grid[i]) for i in range(3))


class TestDerivative:
    @pytest.mark.parametrize("eta", [-5.0, 0.0, 5.0])
    def test_matches_central_differences(self, eta):
        h = 1e-6
        fd = (fermi.fermi_half_approx(eta + h) - fermi.fermi_half_approx(eta - h)) / (2 * h)
        assert fermi.fermi_half_deriv(eta) == pytest.approx(fd, rel=1e-6)

    def test_random_etas_match_fd(self, rng):
        etas = rng.uniform(-25.0, 45.0, size=100)
        h = 1e-6
        fd = (fermi.fermi_half_approx(etas + h) - fermi.fermi_half_approx(etas - h)) / (2 * h)
        assert np.max(np.abs(fermi.fermi_half_deriv(etas) - fd) / np.abs(fd)) <= 1e-6

    def test_boltzmann_ratio_tends_to_one(self):
        eta = -25.0
        assert fermi.fermi_half_deriv(eta) / fermi.fermi_half_approx(eta) == pytest.approx(1.0, rel=1e-9)

    def test_positive_everywhere(self):
        grid = np.arange(-30.0, 50.001, 0.05)
        assert np.all(fermi.fermi_half_deriv(grid) > 0)


class TestInverse:
    @pytest.mark.parametrize("eta", [-5.0, 0.0, 5.0])
    def test_round_trip(self, eta):
        u = fermi.fermi_half_approx(eta)
        assert fermi.inverse_fermi_half(u) == pytest.approx(eta, abs=1e-9)

    def test_boltzmann_limit(self):
        u = 1e-12
        assert fermi.inverse_fermi_half(u) == pytest.approx(math.log(u), rel=1e-6)

    def test_residual_tolerance(self):
        for u in (1e-8, 0.5, 3.4965, 40.0):
            eta = fermi.inverse_fermi_half(u)
            assert abs(fermi.fermi_half_approx(eta) - u) <= 1e-12 * u

    def test_source_drain_boundary_value(self, params):
        # charge neutrality at the 1e20 contacts, cross-checked via quadrature
        u = 1e20 / params.n_c
        eta = fermi.inverse_fermi_half(u)
        assert fermi.fermi_half_quadrature(eta) == pytest.approx(u, rel=5e-3)
        assert 2.0 < eta < 3.0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            fermi.inverse_fermi_half(0.0)
        with pytest.raises(ValueError):
            fermi.inverse_fermi_half(-1.0)


class TestElectronDensity:
    def test_at_reference_potential(self, params):
        n = fermi.electron_density(params.phi_ref, params)
        assert n == pytest.approx(0.7651 * params.n_c, rel=5e-3)

    def test_depletion_limit(self, params):
        assert fermi.electron_density(params.phi_ref - 3.0, params) < 1e-20 * params.n_c

    def test_contact_density_by_construction(self, params):
        phi_bi = params.phi_ref + params.v_t * fermi.inverse_fermi_half(1e20 / params.n_c)
        assert fermi.electron_density(phi_bi, params) == pytest.approx(1e20, rel=1e-9)

    def test_region_mask(self, params):
        phi = np.array([0.1, 0.2, 0.3])
        mask = np.array([True, False, True])
        n = fermi.electron_density(phi, params, mask)
        assert n[1] == 0.0 and n[0] > 0 and n[2] > 0

    def test_strictly_increasing_in_phi(self, params, rng):
        phi = np.sort(rng.uniform(-0.5, 1.0, size=200))
        n = fermi.electron_density(phi, params)
        assert np.all(np.diff(n) > 0)

    def test_deriv_matches_fd(self, params):
        phi = np.linspace(-0.2, 0.9, 50)
        h = 1e-7
        fd = (fermi.electron_density(phi + h, params) - fermi.electron_density(phi - h, params)) / (2 * h)
        an = fermi.electron_density_deriv(phi, params)
        assert np.max(np.abs(an - fd) / np.abs(fd)) <= 1e-5


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            fermi.SemiconductorParams(n_c=-1.0, v_t=0.025, phi_ref=0.0)
        with pytest.raises(ValueError):
            fermi.SemiconductorParams(n_c=1e19, v_t=0.0, phi_ref=0.0)

    def test_reference_from_density_round_trip(self, params):
        phi_ref = fermi.reference_from_density(1e10, params.n_c, params.v_t)
        p = fermi.SemiconductorParams(params.n_c, params.v_t, phi_ref)
        assert fermi.electron_density(0.0, p) == pytest.approx(1e10, rel=1e-9)
