"""Simulated true plants with deliberate nominal-model mismatch.

Controllers in this package only ever see their nominal models; these
classes play the unknown real system.  Each plant is a pure transition
``step(x, u) -> x+`` plus an output map, deterministic given state,
input, and noise key, so closed-loop runs are exactly reproducible.
"""

from __future__ import annotations

import warnings
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .model import ConstraintBox, LtiModel

__all__ = [
    "BicyclePlants",
    "LinearMismatchPlant",
    "NonlinearSpringPlant",
    "Plant",
    "SimulationFault",
    "measure",
    "modal_truth_and_model",
    "plant_step",
    "rk4_step",
    "zoh_discretize",
]


class SimulationFault(RuntimeError):
    """Raised when a simulated state leaves the finite range."""


def rk4_step(f_continuous: Callable[[np.ndarray, np.ndarray], np.ndarray],
             x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step with the input held constant."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(f_continuous(x, u), dtype=float)
    k2 = np.asarray(f_continuous(x + 0.5 * dt * k1, u), dtype=float)
    k3 = np.asarray(f_continuous(x + 0.5 * dt * k2, u), dtype=float)
    k4 = np.asarray(f_continuous(x + dt * k3, u), dtype=float)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise SimulationFault("integrator produced a non-finite state")
    return x_next


def zoh_discretize(A_c: np.ndarray, B_c: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the stacked matrix exponential."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.atleast_2d(np.asarray(B_c, dtype=float))
    n, m = A_c.shape[0], B_c.shape[1]
    block = np.zeros((n + m, n + m))
    block[:n, :n] = A_c
    block[:n, n:] = B_c
    E = scipy.linalg.expm(block * dt)
    return E[:n, :n], E[:n, n:]


class Plant:
    """Deterministic simulated system.

    Subclasses implement :meth:`step` and :meth:`output` as pure
    functions of their arguments; ``noise_std`` adds zero-mean Gaussian
    measurement noise only through :func:`plant_step` with an explicit
    key, so noise-free plants stay bit-reproducible.
    """

    n: int
    n_y: int
    n_u: int
    noise_std: float = 0.0
    input_limits: Optional[ConstraintBox] = None

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.n)


def plant_step(plant: Plant, x_f: np.ndarray, u: np.ndarray,
               seed: Optional[int] = None, t: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Advance the plant one step and measure its output.

    Inputs outside the plant's declared actuator range are clamped with a
    warning.  Measurement noise, when configured and a ``seed`` is given,
    comes from a counter-based generator keyed by ``(seed, t)`` so the
    draw for a step never depends on execution order.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if plant.input_limits is not None and not plant.input_limits.contains(u, tol=0.0):
        warnings.warn("input outside actuator range; clamping", stacklevel=2)
        u = plant.input_limits.clip(u)
    x_next = np.asarray(plant.step(np.asarray(x_f, dtype=float), u), dtype=float)
    if not np.all(np.isfinite(x_next)):
        raise SimulationFault(f"plant state became non-finite at step {t}")
    return x_next, measure(plant, x_next, seed=seed, t=t)


def measure(plant: Plant, x: np.ndarray, seed: Optional[int] = None,
            t: int = 0) -> np.ndarray:
    """Measure the plant output at state ``x``.

    The noise draw is keyed by ``(seed, t)`` alone, so measuring the same
    state at the same step index always returns the same value no matter
    how many times or in what order it is evaluated.
    """
    y = np.asarray(plant.output(np.asarray(x, dtype=float)), dtype=float).reshape(-1)
    if plant.noise_std > 0.0 and seed is not None:
        gen = np.random.Generator(np.random.Philox(key=np.uint64(seed),
                                                   counter=[np.uint64(t), 0, 0, 0]))
        y = y + plant.noise_std * gen.standard_normal(y.size)
    return y


class LinearMismatchPlant(Plant):
    """Linear truth the nominal model only approximates.

    The state dimension may exceed the nominal one (unmodeled modes).
    Optional knobs add an input gain error and a one-step input delay;
    the delay is folded into the state so stepping stays pure.
    """

    def __init__(self, A_f, B_f, C_f, input_gain: float = 1.0,
                 delay_input: bool = False, noise_std: float = 0.0,
                 input_limits: Optional[ConstraintBox] = None,
                 x0: Optional[np.ndarray] = None):
        A_f = np.atleast_2d(np.asarray(A_f, dtype=float))
        B_f = np.atleast_2d(np.asarray(B_f, dtype=float))
        C_f = np.atleast_2d(np.asarray(C_f, dtype=float))
        n, m = A_f.shape[0], B_f.shape[1]
        if A_f.shape != (n, n) or B_f.shape[0] != n or C_f.shape[1] != n:
            raise ValueError("inconsistent plant matrices")
        self._delay = bool(delay_input)
        gain_B = input_gain * B_f
        if self._delay:
            # state becomes [x; stored input]; the stored input acts first
            self.A = np.block([[A_f, gain_B],
                               [np.zeros((m, n)), np.zeros((m, m))]])
            self.B = np.vstack([np.zeros((n, m)), np.eye(m)])
            self.C = np.hstack([C_f, np.zeros((C_f.shape[0], m))])
            self.n = n + m
        else:
            self.A, self.B, self.C = A_f, gain_B, C_f
            self.n = n
        self.n_y = C_f.shape[0]
        self.n_u = m
        self.noise_std = float(noise_std)
        self.input_limits = input_limits
        self._x0 = np.zeros(self.n) if x0 is None else np.asarray(x0, dtype=float).reshape(self.n)

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def output(self, x):
        return self.C @ x

    def initial_state(self):
        return self._x0.copy()


class NonlinearSpringPlant(Plant):
    """Mass on a hardening spring, integrated with fixed-step RK4.

    Continuous dynamics ``m q'' = -k q - k3 q^3 - c q' + u`` with the
    position measured.  The cubic term is the model mismatch when the
    nominal model is the linearization.
    """

    n = 2
    n_y = 1
    n_u = 1

    def __init__(self, mass: float, stiffness: float, cubic: float,
                 damping: float, dt: float, noise_std: float = 0.0,
                 input_limits: Optional[ConstraintBox] = None):
        if mass <= 0.0 or dt <= 0.0:
            raise ValueError("mass and dt must be positive")
        self.mass = float(mass)
        self.stiffness = float(stiffness)
        self.cubic = float(cubic)
        self.damping = float(damping)
        self.dt = float(dt)
        self.noise_std = float(noise_std)
        self.input_limits = input_limits

    def _ode(self, x, u):
        q, v = x
        acc = (-self.stiffness * q - self.cubic * q ** 3
               - self.damping * v + float(u[0])) / self.mass
        return np.array([v, acc])

    def step(self, x, u):
        return rk4_step(self._ode, x, u, self.dt)

    def output(self, x):
        return x[:1].copy()

    def linearization(self) -> LtiModel:
        """Nominal model: the spring without its cubic term, discretized."""
        A_c = np.array([[0.0, 1.0],
                        [-self.stiffness / self.mass, -self.damping / self.mass]])
        B_c = np.array([[0.0], [1.0 / self.mass]])
        A, B = zoh_discretize(A_c, B_c, self.dt)
        return LtiModel(A, B, np.array([[1.0, 0.0]]))


class BicyclePlants:
    """Kinematic bicycle pair: the nominal model and a perturbed truth.

    Nominal (also the controller's prediction model): forward-Euler
    kinematic bicycle with states ``(p_x, p_y, psi, v)``, inputs
    ``(delta, a)``, slip angle ``beta = arctan(l_r/(l_r+l_f) tan delta)``.

    Truth: same kinematics plus a first-order steering actuator lag, a
    velocity-dependent steering gain ``1/(1 + gain_coeff v^2)``, and a
    lateral-slip perturbation ``slip_coeff * v * delta`` added to beta.
    All three vanish at ``lag_tau = gain_coeff = slip_coeff = 0``, where
    truth and nominal coincide exactly.
    """

    def __init__(self, l_r: float, l_f: float, dt: float,
                 lag_tau: float = 0.0, gain_coeff: float = 0.0,
                 slip_coeff: float = 0.0, noise_std: float = 0.0,
                 input_limits: Optional[ConstraintBox] = None,
                 x0: Optional[np.ndarray] = None):
        if l_r <= 0.0 or l_f <= 0.0 or dt <= 0.0:
            raise ValueError("geometry and dt must be positive")
        if lag_tau < 0.0:
            raise ValueError("lag time constant cannot be negative")
        self.l_r, self.l_f, self.dt = float(l_r), float(l_f), float(dt)
        self.lag_tau = float(lag_tau)
        self.gain_coeff = float(gain_coeff)
        self.slip_coeff = float(slip_coeff)
        self.true_plant = _BicycleTruth(self, noise_std, input_limits, x0)

    def nominal_step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Controller-side prediction model."""
        px, py, psi, v = x
        delta, a = float(u[0]), float(u[1])
        beta = np.arctan(self.l_r / (self.l_r + self.l_f) * np.tan(delta))
        return np.array([
            px + self.dt * v * np.cos(psi + beta),
            py + self.dt * v * np.sin(psi + beta),
            psi + self.dt * v / self.l_r * np.sin(beta),
            v + self.dt * a,
        ])

    def nominal_output(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float).copy()

    def nominal_jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Analytic stage Jacobians of the nominal step."""
        px, py, psi, v = x
        delta = float(u[0])
        ratio = self.l_r / (self.l_r + self.l_f)
        tb = ratio * np.tan(delta)
        beta = np.arctan(tb)
        dbeta_ddelta = ratio / (np.cos(delta) ** 2 * (1.0 + tb ** 2))
        c, s = np.cos(psi + beta), np.sin(psi + beta)
        dt = self.dt
        A = np.array([
            [1.0, 0.0, -dt * v * s, dt * c],
            [0.0, 1.0, dt * v * c, dt * s],
            [0.0, 0.0, 1.0, dt * np.sin(beta) / self.l_r],
            [0.0, 0.0, 0.0, 1.0],
        ])
        B = np.array([
            [-dt * v * s * dbeta_ddelta, 0.0],
            [dt * v * c * dbeta_ddelta, 0.0],
            [dt * v / self.l_r * np.cos(beta) * dbeta_ddelta, 0.0],
            [0.0, dt],
        ])
        return A, B


class _BicycleTruth(Plant):
    """True bicycle with actuator lag, gain droop, and slip drift."""

    n = 5
    n_y = 4
    n_u = 2

    def __init__(self, pair: BicyclePlants, noise_std, input_limits, x0):
        self.pair = pair
        self.noise_std = float(noise_std)
        self.input_limits = input_limits
        if x0 is None:
            self._x0 = np.zeros(self.n)
        else:
            x0 = np.asarray(x0, dtype=float).reshape(-1)
            self._x0 = np.concatenate([x0, [0.0]]) if x0.size == 4 else x0.copy()

    def step(self, x, u):
        p = self.pair
        px, py, psi, v, delta_act = x
        delta_cmd, a = float(u[0]), float(u[1])
        if p.lag_tau > 0.0:
            alpha = np.exp(-p.dt / p.lag_tau)
        else:
            alpha = 0.0
        delta_used = alpha * delta_act + (1.0 - alpha) * delta_cmd
        delta_eff = delta_used / (1.0 + p.gain_coeff * v ** 2)
        beta = np.arctan(p.l_r / (p.l_r + p.l_f) * np.tan(delta_eff)) \
            + p.slip_coeff * v * delta_eff
        return np.array([
            px + p.dt * v * np.cos(psi + beta),
            py + p.dt * v * np.sin(psi + beta),
            psi + p.dt * v / p.l_r * np.sin(beta),
            v + p.dt * a,
            delta_used,
        ])

    def output(self, x):
        return np.asarray(x[:4], dtype=float).copy()

    def initial_state(self):
        return self._x0.copy()


def modal_truth_and_model(frequencies, dampings, input_gains, output_gains,
                          dt: float, keep: int,
                          velocity_gains=None,
                          input_gain_error: float = 1.0,
                          delay_input: bool = False,
                          noise_std: float = 0.0,
                          input_limits: Optional[ConstraintBox] = None,
                          ) -> tuple[LinearMismatchPlant, LtiModel]:
    """Build a modal truth plant and its truncated nominal model.

    Each mode i is a damped oscillator with natural frequency
    ``frequencies[i]`` (rad/s) and damping ratio ``dampings[i]``; its
    input and output couplings come from the corresponding rows of
    ``input_gains`` (n_modes, n_u) and ``output_gains`` (n_y, n_modes),
    the output reading the modal position.  ``velocity_gains`` (same
    shape as ``output_gains``) optionally mixes the modal rates into the
    outputs, which keeps the output map well conditioned up to the
    sampling Nyquist rate.  The truth keeps every mode; the nominal model
    keeps only the first ``keep`` (the slow ones), so the controller
    never sees the fast dynamics.  Both are discretized exactly at
    ``dt``.
    """
    freqs = np.asarray(frequencies, dtype=float).reshape(-1)
    zetas = np.asarray(dampings, dtype=float).reshape(-1)
    Bg = np.atleast_2d(np.asarray(input_gains, dtype=float))
    Cg = np.atleast_2d(np.asarray(output_gains, dtype=float))
    n_modes = freqs.size
    if zetas.size != n_modes or Bg.shape[0] != n_modes or Cg.shape[1] != n_modes:
        raise ValueError("modal parameter sizes disagree")
    if velocity_gains is None:
        Vg = np.zeros_like(Cg)
    else:
        Vg = np.atleast_2d(np.asarray(velocity_gains, dtype=float))
        if Vg.shape != Cg.shape:
            raise ValueError("velocity gains must match the output gains' shape")
    if not 1 <= keep <= n_modes:
        raise ValueError("keep must select at least one and at most all modes")
    if np.any(freqs <= 0.0) or np.any(zetas <= 0.0):
        raise ValueError("frequencies and dampings must be positive")
    n_u = Bg.shape[1]
    n_y = Cg.shape[0]
    A_c = np.zeros((2 * n_modes, 2 * n_modes))
    B_c = np.zeros((2 * n_modes, n_u))
    C = np.zeros((n_y, 2 * n_modes))
    for i, (w, z) in enumerate(zip(freqs, zetas)):
        sl = slice(2 * i, 2 * i + 2)
        A_c[sl, sl] = [[0.0, 1.0], [-w * w, -2.0 * z * w]]
        B_c[2 * i + 1] = Bg[i]
        C[:, 2 * i] = Cg[:, i]
        C[:, 2 * i + 1] = Vg[:, i]
    A_f, B_f = zoh_discretize(A_c, B_c, dt)
    truth = LinearMismatchPlant(A_f, B_f, C, input_gain=input_gain_error,
                                delay_input=delay_input, noise_std=noise_std,
                                input_limits=input_limits)
    k2 = 2 * keep
    A_n, B_n = zoh_discretize(A_c[:k2, :k2], B_c[:k2], dt)
    model = LtiModel(A_n, B_n, C[:, :k2])
    return truth, model
