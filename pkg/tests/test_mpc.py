"""Controllers: condensed linear MPC and the Gauss-Newton SQP variant."""

import numpy as np
import numpy.testing as npt
import pytest

from pimpc.model import (
    AugmentedModel,
    ConstraintBox,
    LiftedDisturbance,
    LtiModel,
    PeriodicReference,
    SelectionMatrix,
    default_channels,
)
from pimpc.mpc import (
    LinearMpc,
    MpcConfig,
    MpcError,
    NmpcConfig,
    NonlinearMpc,
    TerminalCost,
    build_terminal,
    expand_estimate,
)
from pimpc.numerics.dare import solve_dare
from pimpc.numerics.linalg import spectral_radius
from pimpc.target import compute_targets


def _tracking_setup(rng, n_x=3, n_u=2, n_y=2, n_r=1, N=8, horizon=3,
                    input_box=None):
    A = 0.85 * rng.standard_normal((n_x, n_x)) / np.sqrt(n_x)
    B = rng.standard_normal((n_x, n_u))
    C = rng.standard_normal((n_y, n_x))
    model = LtiModel(A=A, B=B, C=C)
    aug = AugmentedModel(model, default_channels("output", model, N), N)
    H = SelectionMatrix(np.eye(n_y)[:n_r])
    Q = C.T @ C + 1e-6 * np.eye(n_x)
    R = 0.1 * np.eye(n_u)
    cfg = MpcConfig(Q=Q, R=R, horizon=horizon, input_box=input_box)
    term = build_terminal(model, Q, R)
    mpc = LinearMpc(aug, cfg, term)
    ref = PeriodicReference(0.3 * rng.standard_normal((N, n_r)))
    d = LiftedDisturbance(0.1 * rng.standard_normal(N * n_y), n_y)
    targets = compute_targets(aug, H, d, ref, 0)
    return model, aug, mpc, term, d, targets


class TestTerminal:
    def test_build_terminal_is_dare_pair(self):
        rng = np.random.default_rng(80)
        A = 0.9 * rng.standard_normal((3, 3)) / np.sqrt(3)
        B = rng.standard_normal((3, 1))
        model = LtiModel(A=A, B=B, C=np.eye(3)[:1])
        Q, R = np.eye(3), np.eye(1)
        term = build_terminal(model, Q, R)
        sol = solve_dare(A, B, Q, R)
        npt.assert_allclose(term.P, sol.P, atol=1e-9)
        npt.assert_allclose(term.K, sol.K, atol=1e-9)
        assert spectral_radius(A + B @ term.K) < 1.0

    def test_terminal_validation(self):
        with pytest.raises(MpcError):
            TerminalCost(P=-np.eye(2), K=np.zeros((1, 2)))
        with pytest.raises(MpcError):
            TerminalCost(P=np.eye(2), K=np.zeros((1, 3)))


class TestLinearMpcUnconstrained:
    def test_first_input_is_lqr_feedback(self):
        rng = np.random.default_rng(81)
        for _ in range(5):
            model, aug, mpc, term, d, targets = _tracking_setup(rng)
            x_hat = rng.standard_normal(model.n_x)
            step = mpc.step(x_hat, d, targets)
            assert step.status == "solved"
            want = targets.input_block(0) \
                + term.K @ (x_hat - targets.state_block(0))
            npt.assert_allclose(step.u0, want, atol=1e-6)
            assert step.active_constraints == 0

    def test_on_target_zero_correction(self):
        rng = np.random.default_rng(82)
        model, aug, mpc, term, d, targets = _tracking_setup(rng)
        step = mpc.step(targets.state_block(0), d, targets)
        npt.assert_allclose(step.u0, targets.input_block(0), atol=1e-6)

    def test_predicted_states_follow_model(self):
        rng = np.random.default_rng(83)
        model, aug, mpc, term, d, targets = _tracking_setup(rng, horizon=4)
        x_hat = rng.standard_normal(model.n_x)
        step = mpc.step(x_hat, d, targets)
        x = x_hat
        for k in range(4):
            x = model.A @ x + model.B @ step.inputs[k] \
                + aug.channels.Bbar @ d.block(k)
            npt.assert_allclose(step.states[k + 1], x, atol=1e-9)


class TestLinearMpcConstrained:
    def test_input_box_respected(self):
        rng = np.random.default_rng(84)
        box = ConstraintBox([-0.2, -0.2], [0.2, 0.2])
        model, aug, mpc, term, d, targets = _tracking_setup(
            rng, input_box=box)
        x_hat = 5.0 * rng.standard_normal(model.n_x)
        step = mpc.step(x_hat, d, targets)
        assert np.all(step.u0 >= box.lower - 1e-12)
        assert np.all(step.u0 <= box.upper + 1e-12)
        assert step.active_constraints > 0

    def test_horizon_must_fit_period(self):
        rng = np.random.default_rng(85)
        with pytest.raises(MpcError):
            _tracking_setup(rng, N=3, horizon=3)

    def test_weight_dimensions_checked(self):
        rng = np.random.default_rng(86)
        model, aug, mpc, term, d, targets = _tracking_setup(rng)
        bad = MpcConfig(Q=np.eye(2), R=np.eye(2), horizon=3)
        with pytest.raises(MpcError):
            LinearMpc(aug, bad, term)


class TestExpandEstimate:
    def test_standard_ignores_estimate(self):
        d = LiftedDisturbance(np.ones(4), 2)
        out = expand_estimate("standard", d, 6)
        assert out.N == 6
        assert not out.stack.any()

    def test_offset_free_tiles_single_block(self):
        d = LiftedDisturbance(np.array([1.0, 2.0]), 2)
        out = expand_estimate("offset-free", d, 4)
        npt.assert_array_equal(out.stack, np.tile([1.0, 2.0], 4))

    def test_offset_free_rejects_long_stack(self):
        d = LiftedDisturbance(np.ones(4), 2)
        with pytest.raises(MpcError):
            expand_estimate("offset-free", d, 4)

    def test_pi_mpc_passes_through(self):
        d = LiftedDisturbance(np.arange(8.0), 2)
        out = expand_estimate("pi-mpc", d, 4)
        npt.assert_array_equal(out.stack, d.stack)

    def test_unknown_variant_rejected(self):
        with pytest.raises(MpcError):
            expand_estimate("other", LiftedDisturbance.zero(2, 1), 2)


class _Integrator:
    """Two-state discrete integrator used as an exactly linear plant."""

    A = np.array([[1.0, 0.1], [0.0, 1.0]])
    B = np.array([[0.0], [0.1]])

    def f(self, x, u):
        return self.A @ x + self.B @ u

    def f_jac(self, x, u):
        return self.A, self.B

    def h(self, x):
        return x

    def h_jac(self, x):
        return np.eye(2)


class TestNonlinearMpc:
    def _controller(self, horizon=6, input_rate=False, box=None, R=1e-4):
        plant = _Integrator()
        cfg = NmpcConfig(Q_z=np.eye(1), R=R * np.eye(1), horizon=horizon,
                         input_box=box, input_rate=input_rate,
                         max_sqp_iter=20)
        H = SelectionMatrix(np.array([[1.0, 0.0]]))
        return plant, NonlinearMpc(plant.f, plant.h, H, cfg, n_x=2, n_u=1,
                                   f_jac=plant.f_jac, h_jac=plant.h_jac)

    def test_linear_plant_converges_in_one_iteration(self):
        plant, ctrl = self._controller()
        x0 = np.array([0.5, 0.0])
        ref = np.full((6, 1), 1.0)
        step = ctrl.step(x0, LiftedDisturbance.zero(6, 2), ref, None)
        assert step.status == "solved"
        assert step.converged
        # Gauss-Newton on a linear model is exact after one QP
        assert step.iterations <= 2

    def test_tracks_reachable_reference(self):
        plant, ctrl = self._controller(horizon=8)
        x = np.array([0.0, 0.0])
        d0 = LiftedDisturbance.zero(8, 2)
        for t in range(120):
            ref = np.full((8, 1), 0.7)
            step = ctrl.step(x, d0, ref, None)
            x = plant.f(x, step.u0)
        npt.assert_allclose(x[0], 0.7, atol=1e-3)

    def test_disturbance_blocks_enter_prediction(self):
        plant, ctrl = self._controller()
        d = LiftedDisturbance(np.tile([0.05, 0.0], 6), 2)
        x0 = np.zeros(2)
        step = ctrl.step(x0, d, np.zeros((6, 1)), None)
        x = x0
        for k in range(6):
            x = plant.f(x, step.inputs[k]) + d.block(k)
            npt.assert_allclose(step.states[k + 1], x, atol=1e-9)

    def test_input_box_hard(self):
        box = ConstraintBox([-0.3], [0.3])
        plant, ctrl = self._controller(box=box)
        step = ctrl.step(np.array([5.0, 0.0]), LiftedDisturbance.zero(6, 2),
                         np.zeros((6, 1)), None)
        assert np.all(np.abs(step.inputs) <= 0.3 + 1e-9)

    def test_periodicity_cost_pulls_toward_past_inputs(self):
        # with zero tracking weight the optimum repeats last period's inputs
        plant = _Integrator()
        cfg = NmpcConfig(Q_z=1e-12 * np.eye(1), R=np.eye(1), horizon=4,
                         max_sqp_iter=20)
        H = SelectionMatrix(np.array([[1.0, 0.0]]))
        ctrl = NonlinearMpc(plant.f, plant.h, H, cfg, n_x=2, n_u=1,
                            f_jac=plant.f_jac, h_jac=plant.h_jac)
        past = np.array([[0.2], [-0.1], [0.3], [0.0]])
        step = ctrl.step(np.zeros(2), LiftedDisturbance.zero(4, 2),
                         np.zeros((4, 1)), past)
        npt.assert_allclose(step.inputs, past, atol=1e-5)

    def test_bootstrap_handles_missing_history(self):
        plant, ctrl = self._controller(input_rate=True)
        past = np.full((6, 1), np.nan)
        step = ctrl.step(np.array([0.2, 0.0]), LiftedDisturbance.zero(6, 2),
                         np.full((6, 1), 0.5), past)
        assert step.status == "solved"
        assert np.all(np.isfinite(step.inputs))

    def test_nmpc_config_validation(self):
        with pytest.raises(MpcError):
            NmpcConfig(Q_z=np.eye(1), R=np.eye(1), horizon=0)
        with pytest.raises(MpcError):
            NmpcConfig(Q_z=np.eye(1), R=-np.eye(1), horizon=3)
