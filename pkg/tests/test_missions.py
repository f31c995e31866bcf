import numpy as np
import pytest

from hbvm import missions
from hbvm.errors import ConvergenceError
from hbvm.hamiltonian_models import (CrtbpParams, collinear_libration_points,
                                     crtbp_model, extended_hill_model,
                                     nondim_to_days)
from hbvm.hbvm_core import NewtonOptions

MU = missions.DEFAULT_MU

HILL_L2 = (1.0 / 3.0) ** (1.0 / 3.0)
HILL_P1 = np.array([HILL_L2, 0.0, 0.0, HILL_L2])


def hill_endpoint(dq1, dq2):
    q1, q2 = HILL_L2 + dq1, dq2
    return np.array([q1, q2, -q2, q1])  # null synodic velocity


@pytest.fixture(scope="module")
def lyapunov_200(request):
    guess = missions.lyapunov_guess(MU, n=100)
    return missions.lyapunov_by_period(MU, 200.0, guess, hbvm=(6, 2), n=100)


class TestInitialGuess:
    def test_planar_guess_period_near_178_days(self):
        guess = missions.lyapunov_guess(MU, n=100)
        period_days = nondim_to_days(guess.n * guess.h)
        assert period_days == pytest.approx(178.0, rel=0.02)

    def test_guess_is_closed(self):
        guess = missions.lyapunov_guess(MU, n=64)
        assert np.array_equal(guess.ys[0], guess.ys[-1])
        halo = missions.halo_guess(MU, n=64)
        assert np.array_equal(halo.ys[0], halo.ys[-1])

    def test_guess_starts_on_x_axis(self):
        guess = missions.lyapunov_guess(MU, n=50)
        assert guess.ys[0, 1] == 0.0

    def test_halo_guess_starts_at_vertical_top(self):
        halo = missions.halo_guess(MU, amplitude=2e-3, n=50)
        assert halo.ys[0, 2] == pytest.approx(2e-3)
        assert np.max(halo.ys[:, 2]) <= 2e-3 + 1e-15

    def test_energy_gap_scales_quadratically_with_amplitude(self):
        model = crtbp_model(CrtbpParams(MU, spatial=False))
        x2 = collinear_libration_points(MU)[1]
        H_eq = model.H(np.array([x2, 0.0, 0.0, x2]))
        amps = np.array([4e-4, 2e-4, 1e-4])
        gaps = []
        for a in amps:
            guess = missions.lyapunov_guess(MU, amplitude=a, n=32)
            gaps.append(abs(model.H(guess.ys[0]) - H_eq))
        slopes = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
        assert np.all(np.abs(slopes - 2.0) < 0.2)

    def test_no_center_pair_rejected(self):
        from tests.problems import harmonic_model
        model = harmonic_model()
        with pytest.raises(ValueError):
            # the harmonic center exists; ask for a vertical guess instead
            missions.initial_guess_linearized(model, np.zeros(2), 1e-3, 16,
                                              plane="vertical")


class TestLyapunov:
    def test_by_period_energy_value(self, lyapunov_200):
        assert lyapunov_200.energy == pytest.approx(-1.5002604, abs=5e-5)
        assert lyapunov_200.period_days == pytest.approx(200.0)
        assert np.array_equal(lyapunov_200.mesh.ys[-1], lyapunov_200.mesh.ys[0])
        assert lyapunov_200.max_energy_drift < 1e-12

    def test_anchor_satisfied(self, lyapunov_200):
        assert abs(lyapunov_200.mesh.ys[0, 1]) < 1e-12

    def test_by_energy_fixed_point(self, lyapunov_200):
        # re-targeting the converged orbit's own energy leaves h unchanged
        H_own = lyapunov_200.energy
        orbit = missions.lyapunov_by_energy(MU, H_own, lyapunov_200.mesh.copy(),
                                            hbvm=(6, 2), n=100)
        assert orbit.mesh.report.iterations <= 2
        assert orbit.mesh.h == pytest.approx(lyapunov_200.mesh.h, abs=1e-8)


class TestHillTransfer:
    def test_null_transfer(self):
        tr = missions.hill_transfer(HILL_P1, HILL_P1, 2.0, hbvm=(4, 2), n=40)
        assert np.max(np.abs(tr.control)) < 1e-9
        assert tr.cost < 1e-18
        assert np.max(np.abs(tr.mesh.ys[:, :4] - HILL_P1[None, :])) < 1e-9

    def test_short_transfer(self):
        tr = missions.hill_transfer(HILL_P1, hill_endpoint(0.005, 0.0044),
                                    2.1, hbvm=(4, 2), n=60)
        assert tr.boundary_mismatch < 1e-10
        assert tr.cost > 0.0
        u = tr.control
        assert np.array_equal(u, -tr.mesh.ys[:, 6:])

    def test_costates_zero_iff_no_control(self):
        tr = missions.hill_transfer(HILL_P1, hill_endpoint(0.005, 0.0044),
                                    2.1, hbvm=(4, 2), n=60)
        model = extended_hill_model()
        # converged transfer satisfies the stage equations at mission tolerance
        assert tr.mesh.report.converged


class TestLyapunovInverse:
    def test_energy_solve_from_linearized_guess(self):
        # targeting the 200-day orbit's energy from the raw near-equilibrium
        # guess must recover the 200-day period (inverse of the period ->
        # energy pairing)
        guess = missions.lyapunov_guess(MU, n=100)
        orbit = missions.lyapunov_by_energy(MU, -1.5002604, guess, hbvm=(6, 2), n=100)
        assert orbit.period_days == pytest.approx(200.0, rel=0.01)

    def test_states_invariant_under_doubling_k(self, lyapunov_200):
        orbit12 = missions.lyapunov_by_period(MU, 200.0, lyapunov_200.mesh.copy(),
                                              hbvm=(12, 2), n=100)
        assert np.max(np.abs(orbit12.mesh.ys - lyapunov_200.mesh.ys)) < 1e-8


@pytest.fixture(scope="module")
def halo_pair():
    guess = missions.halo_guess(MU, n=100)
    inner = missions.halo_by_period(MU, 180.0, guess, hbvm=(6, 2), n=100)
    outer = missions.halo_by_energy(MU, -1.50036, inner.mesh.copy(),
                                    hbvm=(6, 2), n=100)
    return inner, outer


class TestHaloTransfer:
    def test_transfer_between_halos(self, halo_pair):
        inner, outer = halo_pair
        T = 0.5 * (inner.period_days + outer.period_days)
        tr = missions.halo_transfer(inner, outer, T, hbvm=(6, 2), n=100)
        assert abs(tr.energy_error) < 1e-9
        assert tr.boundary_mismatch < 1e-10
        # control history: costate identity and no node-to-node jumps
        assert np.array_equal(tr.control, -tr.mesh.ys[:, 9:])
        unorm = np.linalg.norm(tr.control, axis=1)
        assert np.all(np.isfinite(unorm))
        increments = np.abs(np.diff(unorm))
        assert np.max(increments) <= 10.0 * np.median(increments)

    def test_endpoints_are_topmost_nodes(self, halo_pair):
        inner, outer = halo_pair
        T = 0.5 * (inner.period_days + outer.period_days)
        tr = missions.halo_transfer(inner, outer, T, hbvm=(6, 2), n=100)
        P1 = inner.mesh.ys[np.argmax(inner.mesh.ys[:, 2])]
        P2 = outer.mesh.ys[np.argmax(outer.mesh.ys[:, 2])]
        assert np.max(np.abs(tr.mesh.ys[0, :6] - P1)) < 1e-10
        assert np.max(np.abs(tr.mesh.ys[-1, :6] - P2)) < 1e-10


class TestContinuation:
    def test_single_element_equals_direct_call(self, lyapunov_200):
        driver = lambda T, g: missions.lyapunov_by_period(MU, T, g, (6, 2), 100)
        guess = missions.lyapunov_guess(MU, n=100)
        steps = missions.continuation(driver, [200.0], guess)
        assert len(steps) == 1 and steps[0].ok
        assert steps[0].result.energy == pytest.approx(lyapunov_200.energy, abs=1e-12)

    def test_two_step_energy_continuation(self, lyapunov_200):
        driver = lambda H, g: missions.lyapunov_by_energy(MU, H, g, (6, 2), 100)
        steps = missions.continuation(driver, [-1.50018, -1.5001],
                                      lyapunov_200.mesh.copy())
        assert all(s.ok for s in steps)
        assert steps[-1].result.energy == pytest.approx(-1.5001, abs=1e-10)

    def test_failures_are_recorded_and_skipped(self):
        calls = []

        class Dummy:
            def __init__(self, mesh):
                self.mesh = mesh

        def driver(p, guess):
            calls.append(p)
            if p == 2:
                raise ConvergenceError("nope")
            return Dummy(guess)

        guess = missions.lyapunov_guess(MU, n=16)
        steps = missions.continuation(driver, [1, 2, 3], guess)
        assert [s.ok for s in steps] == [True, False, True]
        assert calls == [1, 2, 3]
