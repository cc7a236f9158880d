"""Simulated plants: integrators, discretization, mismatch knobs, noise."""

import warnings

import numpy as np
import numpy.testing as npt
import pytest
import scipy.linalg
import scipy.signal

from pimpc.model import ConstraintBox, LtiModel
from pimpc.plants import (
    BicyclePlants,
    LinearMismatchPlant,
    NonlinearSpringPlant,
    SimulationFault,
    measure,
    modal_truth_and_model,
    plant_step,
    rk4_step,
    zoh_discretize,
)


class TestRk4:
    def test_exponential_decay(self):
        # dx/dt = -x has the exact one-step map exp(-dt)
        f = lambda x, u: -x
        x0 = np.array([2.0])
        dt = 0.05
        got = rk4_step(f, x0, np.zeros(1), dt)
        npt.assert_allclose(got, x0 * np.exp(-dt), atol=1e-10)

    def test_fourth_order_convergence(self):
        # halving the step should shrink the one-step error about 32x
        f = lambda x, u: np.array([x[1], -x[0]])
        x0 = np.array([1.0, 0.0])
        exact = lambda t: np.array([np.cos(t), -np.sin(t)])
        errs = []
        for dt in (0.2, 0.1):
            got = rk4_step(f, x0, np.zeros(1), dt)
            errs.append(np.max(np.abs(got - exact(dt))))
        ratio = errs[0] / errs[1]
        assert 20.0 <= ratio <= 45.0

    def test_forced_linear_system(self):
        # constant input held over the step: compare to the exact ZOH map
        A_c = np.array([[0.0, 1.0], [-4.0, -0.8]])
        B_c = np.array([[0.0], [1.0]])
        dt = 0.01
        A_d, B_d = zoh_discretize(A_c, B_c, dt)
        f = lambda x, u: A_c @ x + B_c @ u
        x0 = np.array([0.3, -0.2])
        u = np.array([0.7])
        got = rk4_step(f, x0, u, dt)
        npt.assert_allclose(got, A_d @ x0 + B_d @ u, atol=1e-10)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            rk4_step(lambda x, u: -x, np.array([1.0]), np.zeros(1), 0.0)

    def test_nonfinite_state_faults(self):
        f = lambda x, u: x ** 3
        x = np.array([1e200])
        with np.errstate(over="ignore"), pytest.raises(SimulationFault):
            rk4_step(f, x, np.zeros(1), 1.0)


class TestZohDiscretize:
    def test_double_integrator_closed_form(self):
        A_c = np.array([[0.0, 1.0], [0.0, 0.0]])
        B_c = np.array([[0.0], [1.0]])
        dt = 0.3
        A, B = zoh_discretize(A_c, B_c, dt)
        npt.assert_allclose(A, [[1.0, dt], [0.0, 1.0]], atol=1e-14)
        npt.assert_allclose(B, [[0.5 * dt * dt], [dt]], atol=1e-14)

    def test_matches_scipy_cont2discrete(self):
        rng = np.random.default_rng(71)
        for _ in range(10):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 3))
            A_c = rng.standard_normal((n, n))
            B_c = rng.standard_normal((n, m))
            dt = float(rng.uniform(0.01, 0.5))
            A, B = zoh_discretize(A_c, B_c, dt)
            C = np.eye(n)
            D = np.zeros((n, m))
            A_ref, B_ref, *_ = scipy.signal.cont2discrete((A_c, B_c, C, D), dt,
                                                          method="zoh")
            npt.assert_allclose(A, A_ref, atol=1e-12)
            npt.assert_allclose(B, B_ref, atol=1e-12)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            zoh_discretize(np.eye(2), np.ones((2, 1)), -0.1)


class TestLinearMismatchPlant:
    def test_step_and_output(self):
        A = np.array([[0.9, 0.1], [0.0, 0.8]])
        B = np.array([[0.0], [1.0]])
        C = np.array([[1.0, 0.0]])
        plant = LinearMismatchPlant(A, B, C)
        x = np.array([1.0, -1.0])
        u = np.array([0.5])
        npt.assert_allclose(plant.step(x, u), A @ x + B @ u)
        npt.assert_allclose(plant.output(x), C @ x)
        assert (plant.n, plant.n_y, plant.n_u) == (2, 1, 1)

    def test_input_gain_scales_response(self):
        A = np.array([[0.5]])
        B = np.array([[1.0]])
        C = np.array([[1.0]])
        base = LinearMismatchPlant(A, B, C)
        boosted = LinearMismatchPlant(A, B, C, input_gain=1.3)
        u = np.array([2.0])
        x = np.zeros(1)
        npt.assert_allclose(boosted.step(x, u), 1.3 * base.step(x, u))

    def test_delay_shifts_input_by_one_step(self):
        A = np.array([[0.0]])
        B = np.array([[1.0]])
        C = np.array([[1.0]])
        direct = LinearMismatchPlant(A, B, C)
        delayed = LinearMismatchPlant(A, B, C, delay_input=True)
        assert delayed.n == 2
        u_seq = [np.array([1.0]), np.array([-2.0]), np.array([0.5])]
        xd = delayed.initial_state()
        x = direct.initial_state()
        outs_direct, outs_delayed = [], []
        for u in u_seq:
            x = direct.step(x, u)
            xd = delayed.step(xd, u)
            outs_direct.append(direct.output(x)[0])
            outs_delayed.append(delayed.output(xd)[0])
        # delayed output at step k equals the direct output at step k-1
        npt.assert_allclose(outs_delayed[0], 0.0, atol=1e-14)
        npt.assert_allclose(outs_delayed[1:], outs_direct[:-1], atol=1e-14)

    def test_rejects_inconsistent_shapes(self):
        with pytest.raises(ValueError):
            LinearMismatchPlant(np.eye(2), np.ones((3, 1)), np.ones((1, 2)))

    def test_initial_state_copies(self):
        plant = LinearMismatchPlant(np.eye(2) * 0.5, np.ones((2, 1)),
                                    np.eye(2), x0=[1.0, 2.0])
        s = plant.initial_state()
        s[0] = 99.0
        npt.assert_allclose(plant.initial_state(), [1.0, 2.0])


class TestMeasurement:
    def _plant(self, noise_std=0.1):
        return LinearMismatchPlant(np.eye(2) * 0.5, np.ones((2, 1)),
                                   np.eye(2), noise_std=noise_std)

    def test_noise_free_is_exact(self):
        plant = self._plant(noise_std=0.0)
        x = np.array([0.3, -0.7])
        npt.assert_array_equal(measure(plant, x, seed=5, t=3), x)

    def test_no_seed_means_no_noise(self):
        plant = self._plant()
        x = np.array([1.0, 2.0])
        npt.assert_array_equal(measure(plant, x, seed=None, t=0), x)

    def test_same_key_same_draw(self):
        plant = self._plant()
        x = np.array([1.0, 2.0])
        a = measure(plant, x, seed=11, t=7)
        b = measure(plant, x, seed=11, t=7)
        npt.assert_array_equal(a, b)

    def test_draw_keyed_by_step_and_seed(self):
        plant = self._plant()
        x = np.array([1.0, 2.0])
        base = measure(plant, x, seed=11, t=7)
        assert np.any(measure(plant, x, seed=11, t=8) != base)
        assert np.any(measure(plant, x, seed=12, t=7) != base)

    def test_order_independent(self):
        # evaluating t=9 first must not change the draw at t=3
        plant = self._plant()
        x = np.array([0.0, 0.0])
        first = measure(plant, x, seed=2, t=3)
        measure(plant, x, seed=2, t=9)
        npt.assert_array_equal(measure(plant, x, seed=2, t=3), first)


class TestPlantStep:
    def test_advances_and_measures(self):
        plant = LinearMismatchPlant(np.eye(1) * 0.5, np.eye(1), np.eye(1))
        x_next, y = plant_step(plant, np.array([2.0]), np.array([1.0]))
        npt.assert_allclose(x_next, [2.0])
        npt.assert_allclose(y, [2.0])

    def test_clamps_out_of_range_input(self):
        box = ConstraintBox([-1.0], [1.0])
        plant = LinearMismatchPlant(np.zeros((1, 1)), np.eye(1), np.eye(1),
                                    input_limits=box)
        with pytest.warns(UserWarning, match="clamping"):
            x_next, _ = plant_step(plant, np.zeros(1), np.array([5.0]))
        npt.assert_allclose(x_next, [1.0])

    def test_in_range_input_passes_silently(self):
        box = ConstraintBox([-1.0], [1.0])
        plant = LinearMismatchPlant(np.zeros((1, 1)), np.eye(1), np.eye(1),
                                    input_limits=box)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            x_next, _ = plant_step(plant, np.zeros(1), np.array([0.5]))
        npt.assert_allclose(x_next, [0.5])

    def test_nonfinite_state_faults(self):
        plant = LinearMismatchPlant(np.array([[2.0]]), np.eye(1), np.eye(1))
        with np.errstate(over="ignore"), pytest.raises(SimulationFault,
                                                       match="non-finite"):
            plant_step(plant, np.array([1e308]), np.array([1e308]))


class TestNonlinearSpring:
    def _plant(self, cubic=4.0):
        return NonlinearSpringPlant(mass=1.0, stiffness=2.0, cubic=cubic,
                                    damping=0.3, dt=0.05)

    def test_linearization_matches_zoh(self):
        plant = self._plant()
        model = plant.linearization()
        A_c = np.array([[0.0, 1.0], [-2.0, -0.3]])
        B_c = np.array([[0.0], [1.0]])
        A_ref, B_ref = zoh_discretize(A_c, B_c, 0.05)
        npt.assert_allclose(model.A, A_ref, atol=1e-12)
        npt.assert_allclose(model.B, B_ref, atol=1e-12)
        npt.assert_allclose(model.C, [[1.0, 0.0]])

    def test_zero_cubic_matches_linear_model(self):
        # without the cubic term the RK4 step should track the exact
        # discretization to integrator order
        plant = self._plant(cubic=0.0)
        model = plant.linearization()
        x = np.array([0.4, -0.1])
        u = np.array([0.2])
        got = plant.step(x, u)
        npt.assert_allclose(got, model.A @ x + model.B @ u, atol=1e-8)

    def test_cubic_term_stiffens_spring(self):
        soft = self._plant(cubic=0.0)
        hard = self._plant(cubic=50.0)
        x = np.array([0.5, 0.0])
        u = np.zeros(1)
        acc_soft = soft.step(x, u)[1]
        acc_hard = hard.step(x, u)[1]
        # extra restoring force pulls the velocity down harder
        assert acc_hard < acc_soft

    def test_output_is_position(self):
        plant = self._plant()
        npt.assert_allclose(plant.output(np.array([0.7, -3.0])), [0.7])

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            NonlinearSpringPlant(mass=0.0, stiffness=1.0, cubic=0.0,
                                 damping=0.1, dt=0.05)
        with pytest.raises(ValueError):
            NonlinearSpringPlant(mass=1.0, stiffness=1.0, cubic=0.0,
                                 damping=0.1, dt=0.0)


class TestBicycle:
    def _pair(self, **kw):
        defaults = dict(l_r=0.17, l_f=0.15, dt=0.05)
        defaults.update(kw)
        return BicyclePlants(**defaults)

    def test_truth_coincides_with_nominal_when_unperturbed(self):
        pair = self._pair(lag_tau=0.0, gain_coeff=0.0, slip_coeff=0.0)
        rng = np.random.default_rng(33)
        for _ in range(20):
            x4 = rng.standard_normal(4)
            u = np.array([float(rng.uniform(-0.4, 0.4)),
                          float(rng.uniform(-1.0, 1.0))])
            x5 = np.concatenate([x4, [rng.standard_normal()]])
            truth_next = pair.true_plant.step(x5, u)
            npt.assert_allclose(truth_next[:4], pair.nominal_step(x4, u),
                                atol=1e-13)

    def test_perturbations_change_the_motion(self):
        clean = self._pair()
        bent = self._pair(lag_tau=0.2, gain_coeff=0.1, slip_coeff=0.1)
        x = np.array([0.0, 0.0, 0.0, 2.0, 0.0])
        u = np.array([0.3, 0.0])
        a = clean.true_plant.step(x, u)
        b = bent.true_plant.step(x, u)
        assert np.max(np.abs(a[:4] - b[:4])) > 1e-4

    def test_actuator_lag_tracks_command(self):
        pair = self._pair(lag_tau=0.1)
        x = np.zeros(5)
        u = np.array([0.4, 0.0])
        for _ in range(60):
            x = pair.true_plant.step(x, u)
        # steering state converges to the held command
        npt.assert_allclose(x[4], 0.4, atol=1e-8)

    def test_jacobians_match_finite_differences(self):
        pair = self._pair()
        rng = np.random.default_rng(41)
        for _ in range(10):
            x = rng.standard_normal(4)
            u = np.array([float(rng.uniform(-0.4, 0.4)),
                          float(rng.uniform(-1.0, 1.0))])
            A, B = pair.nominal_jacobians(x, u)
            h = 1e-6
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                col = (pair.nominal_step(x + e, u)
                       - pair.nominal_step(x - e, u)) / (2 * h)
                npt.assert_allclose(A[:, j], col, atol=1e-6)
            for j in range(2):
                e = np.zeros(2)
                e[j] = h
                col = (pair.nominal_step(x, u + e)
                       - pair.nominal_step(x, u - e)) / (2 * h)
                npt.assert_allclose(B[:, j], col, atol=1e-6)

    def test_truth_output_drops_actuator_state(self):
        pair = self._pair()
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        npt.assert_allclose(pair.true_plant.output(x), [1.0, 2.0, 3.0, 4.0])

    def test_initial_state_pads_actuator(self):
        pair = BicyclePlants(l_r=0.2, l_f=0.2, dt=0.05, x0=[1.0, 0.0, 0.5, 2.0])
        npt.assert_allclose(pair.true_plant.initial_state(),
                            [1.0, 0.0, 0.5, 2.0, 0.0])

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            BicyclePlants(l_r=0.0, l_f=0.2, dt=0.05)
        with pytest.raises(ValueError):
            BicyclePlants(l_r=0.2, l_f=0.2, dt=0.05, lag_tau=-1.0)


class TestModalTruthAndModel:
    def _build(self, keep=1, **kw):
        return modal_truth_and_model(
            frequencies=[2.0, 9.0], dampings=[0.05, 0.1],
            input_gains=[[1.0], [0.4]], output_gains=[[1.0, 0.3]],
            dt=0.05, keep=keep, **kw)

    def test_model_truncates_truth(self):
        truth, model = self._build(keep=1)
        assert truth.n == 4
        assert model.A.shape == (2, 2)
        # the slow mode's discretized block is shared
        npt.assert_allclose(model.A, truth.A[:2, :2], atol=1e-12)
        npt.assert_allclose(model.C, truth.C[:, :2], atol=1e-12)

    def test_keep_all_reproduces_truth(self):
        truth, model = self._build(keep=2)
        npt.assert_allclose(model.A, truth.A, atol=1e-12)
        npt.assert_allclose(model.B, truth.B, atol=1e-12)
        npt.assert_allclose(model.C, truth.C, atol=1e-12)

    def test_input_gain_error_scales_truth_only(self):
        truth, model = self._build(keep=1, input_gain_error=1.2)
        plain, _ = self._build(keep=1)
        npt.assert_allclose(truth.B, 1.2 * plain.B, atol=1e-12)
        npt.assert_allclose(model.B, plain.B[:2] / 1.0, atol=1e-12)

    def test_delay_grows_truth_state(self):
        truth, _ = self._build(keep=1, delay_input=True)
        assert truth.n == 5

    def test_velocity_gains_enter_output(self):
        truth, _ = modal_truth_and_model(
            frequencies=[2.0], dampings=[0.05], input_gains=[[1.0]],
            output_gains=[[1.0]], velocity_gains=[[0.5]], dt=0.05, keep=1)
        npt.assert_allclose(truth.C, [[1.0, 0.5]])

    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(ValueError, match="sizes disagree"):
            modal_truth_and_model([2.0], [0.05, 0.1], [[1.0]], [[1.0]],
                                  dt=0.05, keep=1)
        with pytest.raises(ValueError, match="velocity"):
            modal_truth_and_model([2.0], [0.05], [[1.0]], [[1.0]],
                                  velocity_gains=[[0.5, 0.1]], dt=0.05, keep=1)
        with pytest.raises(ValueError, match="keep"):
            self._build(keep=3)
        with pytest.raises(ValueError, match="positive"):
            modal_truth_and_model([-2.0], [0.05], [[1.0]], [[1.0]],
                                  dt=0.05, keep=1)
