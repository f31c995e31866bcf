import numpy as np
import pytest
from scipy.integrate import solve_ivp

from hbvm.errors import ModelDomainError
from hbvm.hamiltonian_models import (CONSTANTS, CrtbpParams, collinear_libration_points,
                                     control_from_costate, crtbp_model,
                                     days_to_nondim, extended_hill_model,
                                     extended_model, hill_model, j_times_mat,
                                     j_times_vec, km_to_nondim, linearize,
                                     nondim_to_days)

from tests.problems import fd_gradient, fd_hessian

MU_SE = 3.04036e-6


def random_crtbp_points(rng, dim, count):
    """Admissible random states away from both primaries."""
    pts = []
    while len(pts) < count:
        q = rng.uniform(-1.5, 1.5, size=3)
        if np.linalg.norm(q - [-MU_SE, 0, 0]) < 0.2:
            continue
        if np.linalg.norm(q - [1 - MU_SE, 0, 0]) < 0.2:
            continue
        p = rng.uniform(-1.0, 1.0, size=3)
        y = np.concatenate([q, p])
        pts.append(y if dim == 6 else y[[0, 1, 3, 4]])
    return pts


def check_derivatives(model, points, grad_rtol=1e-6, hess_rtol=1e-5):
    for y in points:
        g, gf = model.grad(y), fd_gradient(model, y)
        scale = max(1.0, float(np.max(np.abs(g))))
        assert np.max(np.abs(g - gf)) / scale < grad_rtol
        h, hf = model.hess(y), fd_hessian(model, y)
        hscale = max(1.0, float(np.max(np.abs(h))))
        assert np.max(np.abs(h - h.T)) < 1e-13
        assert np.max(np.abs(h - hf)) / hscale < hess_rtol


class TestStructureMatrix:
    def test_vector_application(self):
        g = np.array([1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(j_times_vec(g), [3.0, 4.0, -1.0, -2.0])

    def test_matrix_application_matches_dense(self):
        rng = np.random.default_rng(3)
        M = rng.standard_normal((6, 6))
        J = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])
        assert np.allclose(j_times_mat(M), J @ M)


class TestCrtbp:
    def test_gradient_vanishes_at_published_l2(self):
        model = crtbp_model(CrtbpParams(MU_SE, spatial=True))
        x = 1.010075
        y = np.array([x, 0, 0, 0, x, 0])
        assert np.max(np.abs(model.grad(y))) < 1e-5

    def test_energy_at_l2_point(self):
        model = crtbp_model(CrtbpParams(MU_SE, spatial=True))
        x = 1.010075
        assert model.H(np.array([x, 0, 0, 0, x, 0])) == pytest.approx(-1.50045, abs=1e-4)

    def test_derivative_oracles(self):
        rng = np.random.default_rng(11)
        for spatial in (True, False):
            model = crtbp_model(CrtbpParams(0.01, spatial=spatial))
            check_derivatives(model, random_crtbp_points(rng, model.dim, 20))

    def test_planar_embeds_in_spatial(self):
        planar = crtbp_model(CrtbpParams(0.01, spatial=False))
        spatial = crtbp_model(CrtbpParams(0.01, spatial=True))
        y4 = np.array([0.4, 0.3, -0.2, 0.5])
        y6 = np.array([0.4, 0.3, 0.0, -0.2, 0.5, 0.0])
        assert planar.H(y4) == spatial.H(y6)

    def test_singularity_guard(self):
        model = crtbp_model(CrtbpParams(0.01, spatial=True))
        with pytest.raises(ModelDomainError):
            model.H(np.array([1.0 - 0.01, 0, 0, 0, 0, 0]))

    def test_invalid_mass_ratio(self):
        with pytest.raises(ValueError):
            CrtbpParams(0.7)

    def test_energy_conserved_along_flow(self):
        model = crtbp_model(CrtbpParams(0.01, spatial=False))
        y0 = np.array([0.5, 0.1, -0.2, 0.6])
        sol = solve_ivp(lambda t, y: j_times_vec(model.grad(y)), (0.0, 1.0), y0,
                        rtol=1e-12, atol=1e-12, dense_output=True)
        H0 = model.H(y0)
        drift = max(abs(model.H(sol.sol(t)) - H0) for t in np.linspace(0, 1, 21))
        assert drift < 1e-9


class TestHill:
    def test_equilibrium(self):
        model = hill_model()
        xi = (1.0 / 3.0) ** (1.0 / 3.0)
        assert xi == pytest.approx(0.69336127, abs=1e-8)
        y = np.array([xi, 0.0, 0.0, xi])
        assert np.max(np.abs(model.grad(y))) < 1e-12

    def test_derivative_oracles(self):
        rng = np.random.default_rng(5)
        pts = []
        while len(pts) < 20:
            q = rng.uniform(-1.2, 1.2, size=2)
            if np.linalg.norm(q) < 0.2:
                continue
            pts.append(np.concatenate([q, rng.uniform(-1, 1, size=2)]))
        check_derivatives(hill_model(), pts)

    def test_origin_rejected(self):
        with pytest.raises(ModelDomainError):
            hill_model().H(np.zeros(4))


class TestExtendedModels:
    def test_zero_costate_reduces_to_base_flow(self):
        base = crtbp_model(CrtbpParams(MU_SE, spatial=True))
        ext = extended_model(base)
        y = np.array([0.5, 0.2, 0.1, -0.1, 0.4, 0.0])
        z = np.concatenate([y, np.zeros(6)])
        assert ext.H(z) == 0.0
        flow = j_times_vec(ext.grad(z))
        assert np.max(np.abs(flow[:6] - j_times_vec(base.grad(y)))) < 1e-14
        assert np.max(np.abs(flow[6:])) < 1e-14

    def test_control_recovery(self):
        lam = np.array([0.0, 0.0, 0.0, 0.1, -0.2, 0.3])
        z = np.concatenate([np.ones(6), lam])
        assert control_from_costate(z) == pytest.approx([-0.1, 0.2, -0.3])

    def test_planar_control_recovery(self):
        z = np.concatenate([np.ones(4), [0.0, 0.0, 0.5, -0.25]])
        assert control_from_costate(z) == pytest.approx([-0.5, 0.25])

    def test_extended_crtbp_derivative_oracles(self):
        rng = np.random.default_rng(7)
        base = crtbp_model(CrtbpParams(0.01, spatial=True))
        ext = extended_model(base)
        pts = [np.concatenate([y, 0.3 * rng.standard_normal(6)])
               for y in random_crtbp_points(rng, 6, 20)]
        check_derivatives(ext, pts)

    def test_extended_hill_derivative_oracles(self):
        rng = np.random.default_rng(9)
        ext = extended_hill_model()
        pts = []
        while len(pts) < 20:
            q = rng.uniform(-1.2, 1.2, size=2)
            if np.linalg.norm(q) < 0.2:
                continue
            pts.append(np.concatenate([q, rng.uniform(-1, 1, 2),
                                       0.3 * rng.standard_normal(4)]))
        check_derivatives(ext, pts)

    def test_dim_validation(self):
        with pytest.raises(ValueError):
            extended_model(hill_model())
        with pytest.raises(ValueError):
            extended_hill_model(crtbp_model(CrtbpParams(0.01)))


class TestLibrationPoints:
    def test_sun_earth_l2(self):
        L = collinear_libration_points(MU_SE)
        assert L[1] == pytest.approx(1.010075, abs=1e-6)

    def test_small_mu_limits(self):
        L = collinear_libration_points(1e-12)
        assert L[1] == pytest.approx(1.0, abs=1e-3)
        assert L[2] == pytest.approx(-1.0, abs=1e-3)

    def test_gradient_vanishes_at_each_point(self):
        mu = 0.01
        model = crtbp_model(CrtbpParams(mu, spatial=True))
        for x in collinear_libration_points(mu):
            y = np.array([x, 0, 0, 0, x, 0])
            assert np.max(np.abs(model.grad(y))) < 1e-10


class TestLinearize:
    def test_crtbp_l2_eigenstructure(self):
        mu = MU_SE
        model = crtbp_model(CrtbpParams(mu, spatial=True))
        x = collinear_libration_points(mu)[1]
        M = linearize(model, np.array([x, 0, 0, 0, x, 0]))
        eig = np.linalg.eigvals(M)
        real = eig[np.abs(eig.imag) < 1e-9]
        imag = eig[np.abs(eig.imag) >= 1e-9]
        assert len(real) == 2 and len(imag) == 4         # saddle x center x center
        assert real[0] == pytest.approx(-real[1], abs=1e-9)
        assert abs(np.trace(M)) < 1e-12

    def test_hill_l2_eigenstructure(self):
        model = hill_model()
        xi = (1.0 / 3.0) ** (1.0 / 3.0)
        M = linearize(model, np.array([xi, 0.0, 0.0, xi]))
        eig = np.linalg.eigvals(M)
        assert np.sum(np.abs(eig.imag) < 1e-9) == 2      # planar saddle x center
        assert np.sum(np.abs(eig.imag) >= 1e-9) == 2
        assert abs(np.trace(M)) < 1e-12

    def test_non_equilibrium_rejected(self):
        model = hill_model()
        with pytest.raises(ValueError):
            linearize(model, np.array([0.5, 0.1, 0.0, 0.0]))


class TestUnits:
    def test_180_days(self):
        assert days_to_nondim(180.0) == pytest.approx(3.09639, abs=1e-4)

    def test_zero(self):
        assert days_to_nondim(0.0) == 0.0

    def test_round_trip(self):
        x = 123.456
        assert nondim_to_days(days_to_nondim(x)) == pytest.approx(x, rel=1e-14)

    def test_km(self):
        assert km_to_nondim(CONSTANTS.R_km) == 1.0
