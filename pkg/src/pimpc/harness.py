"""Closed-loop experiment harness: offline design, online loop, reporting.

``design`` turns a validated scenario into controller and observer
artifacts, running every design-time check and naming the one that fails.
``run_closed_loop`` executes the receding-horizon loop against the truth
plant, recording a full time series plus per-period metrics.
``compare_variants`` repeats the run for the three controller variants
under identical seeds and reports the error ordering.

Variants share one code path; they differ only in how the disturbance
estimate is produced and expanded:

``standard``     no disturbance model; a plain state observer feeds the
                 controller and the lifted estimate is pinned to zero.
``offset-free``  a single constant disturbance block, estimated jointly
                 with the state and tiled across the period.
``pi-mpc``       the full lifted estimate, one block per phase of the
                 reference period.

Phase bookkeeping is owned here: step ``t`` has reference phase
``t mod N`` and the estimate's block 0 always refers to the current step.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .config import Scenario
from .mpc import (
    VARIANTS,
    LinearMpc,
    MpcError,
    NonlinearMpc,
    TerminalCost,
    build_terminal,
    expand_estimate,
)
from .model import (
    AugmentedModel,
    LiftedDisturbance,
    build_shift,
    check_augmented_observability,
    check_target_feasibility,
    default_channels,
)
from .numerics.dare import DareError, solve_dual_dare_kalman
from .numerics.linalg import spectral_radius
from .numerics.qp import QpError
from .observer import (
    ObserverDesignError,
    ObserverGains,
    ObserverState,
    _weight_matrix,
    check_gain_coverage,
    design_gains,
    estimator_matrix,
    observer_step,
    state_measurement_observer_step,
)
from .plants import SimulationFault, measure, plant_step
from .target import TargetSolver

__all__ = [
    "BicycleDesign",
    "Design",
    "DesignCheck",
    "DesignError",
    "ScenarioResult",
    "VariantComparison",
    "compare_variants",
    "design",
    "periodicity_check",
    "run_closed_loop",
    "series_header",
    "write_comparison",
    "write_series",
    "write_summary",
]

# status codes stored in the per-step series
_STATUS_CODES = {"solved": 0, "max_iter": 1, "infeasible": 2, "stalled": 3}


class DesignError(RuntimeError):
    """A design-time check failed; ``checks`` holds the report so far."""

    def __init__(self, message: str, checks=None):
        super().__init__(message)
        self.checks = list(checks) if checks else []


@dataclass(frozen=True)
class DesignCheck:
    """One named design-time check and its outcome."""

    name: str
    passed: bool
    detail: str = ""


def _record(checks: list, name: str, passed: bool, detail: str = "") -> None:
    checks.append(DesignCheck(name=name, passed=passed, detail=detail))
    if not passed:
        raise DesignError(f"design check failed: {name}" +
                          (f" ({detail})" if detail else ""), checks)


@dataclass
class Design:
    """Artifacts for the linear controller path."""

    scenario: Scenario
    variant: str
    aug: AugmentedModel
    terminal: TerminalCost
    mpc: LinearMpc
    targets: TargetSolver
    obs_aug: Optional[AugmentedModel]
    gains: Optional[ObserverGains]
    plain_gain: Optional[np.ndarray]
    checks: list = field(default_factory=list)


@dataclass
class BicycleDesign:
    """Artifacts for the nonlinear (state-measured) controller path."""

    scenario: Scenario
    variant: str
    controller: NonlinearMpc
    L_d: np.ndarray
    N_obs: int
    checks: list = field(default_factory=list)


def design(scenario: Scenario, variant: str = "pi-mpc"
           ) -> Union[Design, BicycleDesign]:
    """Run the offline design pipeline for one controller variant.

    Every check is recorded by name; the first failure raises
    :class:`DesignError` carrying the report collected so far.
    """
    if variant not in VARIANTS:
        raise DesignError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if scenario.kind == "bicycle":
        return _design_bicycle(scenario, variant)
    return _design_linear(scenario, variant)


def _design_linear(scenario: Scenario, variant: str) -> Design:
    model = scenario.model
    H = scenario.selection
    N = scenario.period
    cfg = scenario.mpc_config
    checks: list = []

    ok = cfg.horizon < N or N == 1
    _record(checks, "horizon-within-period", ok,
            f"horizon {cfg.horizon} vs period {N}")

    ok = H.n_r <= model.n_u
    _record(checks, "reference-width", ok,
            f"{H.n_r} tracked channels need at most {model.n_u} inputs")
    diag = check_target_feasibility(model, H, N)
    _record(checks, "target-feasibility", diag.ok, diag.describe())

    try:
        channels = default_channels(scenario.channel_kind, model, N)
    except Exception as exc:
        _record(checks, "disturbance-channels", False, str(exc))
    _record(checks, "disturbance-channels", True,
            f"{scenario.channel_kind} channels, {channels.Bbar.shape[1]} "
            "disturbance inputs per phase")
    aug = AugmentedModel(model, channels, N)

    obs_aug = None
    gains = None
    plain_gain = None
    w_x, w_d, v = scenario.observer_weights
    if variant == "standard":
        try:
            plain_gain, _ = solve_dual_dare_kalman(
                model.A, model.C,
                _weight_matrix(w_x, model.n_x, "W_x"),
                _weight_matrix(v, model.n_y, "V"))
        except DareError as exc:
            _record(checks, "state-estimator-design", False, str(exc))
        _record(checks, "state-estimator-design", True,
                "steady-state filter gain found")
        rho = spectral_radius(model.A + plain_gain @ model.C)
        _record(checks, "estimator-stability", rho < 1.0,
                f"spectral radius {rho:.6f}")
    else:
        N_obs = 1 if variant == "offset-free" else N
        obs_channels = default_channels(scenario.channel_kind, model, N_obs)
        obs_aug = AugmentedModel(model, obs_channels, N_obs)
        diag = check_augmented_observability(obs_aug)
        _record(checks, "augmented-observability", diag.ok, diag.describe())
        try:
            gains = design_gains(obs_aug, W_x=w_x, W_d=w_d, V=v)
        except (ObserverDesignError, DareError) as exc:
            _record(checks, "observer-design", False, str(exc))
        _record(checks, "observer-design", True,
                "lifted estimator gains found")
        rho = spectral_radius(estimator_matrix(obs_aug, gains))
        _record(checks, "estimator-stability", rho < 1.0,
                f"spectral radius {rho:.6f}")
        _record(checks, "disturbance-gain-coverage",
                check_gain_coverage(obs_aug.S_d, gains.L_d),
                "rotation modes reachable through the disturbance gain")

    try:
        terminal = build_terminal(model, cfg.Q, cfg.R)
    except (DareError, MpcError) as exc:
        _record(checks, "terminal-cost", False, str(exc))
    _record(checks, "terminal-cost", True, "stabilizing terminal pair found")

    mpc = LinearMpc(aug, cfg, terminal)
    targets = TargetSolver(aug, H)
    return Design(scenario=scenario, variant=variant, aug=aug, terminal=terminal,
                  mpc=mpc, targets=targets, obs_aug=obs_aug, gains=gains,
                  plain_gain=plain_gain, checks=checks)


def _design_bicycle(scenario: Scenario, variant: str) -> BicycleDesign:
    pair = scenario.bicycle
    cfg = scenario.nmpc_config
    N = scenario.period
    checks: list = []

    _record(checks, "horizon-within-period", cfg.horizon < N,
            f"horizon {cfg.horizon} vs period {N}")
    _record(checks, "reference-width", scenario.selection.n_r <= 2,
            "at most as many tracked channels as inputs")

    lam = scenario.observer_lambda
    L_d = -np.diag(lam)
    N_obs = 1 if variant == "offset-free" else N
    # after one update the corrected block sits at position N-1 of the
    # rotated stack, so the lifted gain has a single nonzero block there
    S_d, _ = build_shift(N_obs, 4)
    lifted = np.zeros((N_obs * 4, 4))
    lifted[(N_obs - 1) * 4:] = L_d
    _record(checks, "disturbance-gain-coverage", check_gain_coverage(S_d, lifted),
            "every phase refreshed once per period")

    controller = NonlinearMpc(pair.nominal_step, pair.nominal_output,
                              scenario.selection, cfg, n_x=4, n_u=2,
                              f_jac=pair.nominal_jacobians,
                              h_jac=lambda x: np.eye(4))
    return BicycleDesign(scenario=scenario, variant=variant,
                         controller=controller, L_d=L_d, N_obs=N_obs,
                         checks=checks)


@dataclass
class ScenarioResult:
    """Recorded closed-loop run plus per-period metrics.

    All metrics are recomputable from the raw series;
    :meth:`recompute_metrics` returns fresh copies for integrity checks.
    """

    name: str
    variant: str
    N: int
    dt: float
    seed: int
    noise_std: float
    t: np.ndarray
    y: np.ndarray
    z: np.ndarray
    r: np.ndarray
    u: np.ndarray
    x_f: np.ndarray
    x_hat: np.ndarray
    x_bar0: np.ndarray
    u_bar0: np.ndarray
    d_norm: np.ndarray
    innov: np.ndarray
    nact: np.ndarray
    iters: np.ndarray
    solver_status: np.ndarray
    fault: Optional[dict] = None
    mean_error: np.ndarray = field(default=None)
    peak_error: np.ndarray = field(default=None)
    innovation_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.mean_error is None:
            m = self.recompute_metrics()
            self.mean_error = m["mean_error"]
            self.peak_error = m["peak_error"]
            self.innovation_mean = m["innovation_mean"]

    @property
    def steps(self) -> int:
        return self.t.size

    @property
    def periods(self) -> int:
        """Complete periods recorded."""
        return self.steps // self.N

    def error_norms(self) -> np.ndarray:
        """Per-step tracking error ``|z - r|`` (2-norm).

        A faulted run can hold astronomically large samples; overflow to
        inf is fine for reporting, so the warnings are suppressed.
        """
        with np.errstate(over="ignore", invalid="ignore"):
            return np.linalg.norm(self.z - self.r, axis=1)

    def recompute_metrics(self) -> dict:
        """Per-period mean/peak error and mean innovation from the raw series."""
        P, N = self.periods, self.N
        err = self.error_norms()[:P * N].reshape(P, N)
        innov = self.innov[:P * N].reshape(P, N)
        return {
            "mean_error": err.mean(axis=1) if P else np.zeros(0),
            "peak_error": err.max(axis=1) if P else np.zeros(0),
            "innovation_mean": innov.mean(axis=1) if P else np.zeros(0),
        }

    def final_period_mean_error(self) -> float:
        if self.periods == 0:
            return float("nan")
        return float(self.mean_error[-1])

    @property
    def converged(self) -> bool:
        """Periodicity residual at most 1e-6 over the last two periods."""
        if self.periods < 4:
            return False
        return periodicity_check(self, 2) <= 1e-6

    def active_steps_in_tail(self, fraction: float = 0.2) -> int:
        """Steps with any active constraint in the final ``fraction`` of the run."""
        tail = max(1, int(np.ceil(fraction * self.steps)))
        return int(np.count_nonzero(self.nact[-tail:]))

    def summary(self) -> dict:
        """Deterministic run summary (no wall-clock content)."""
        P = self.periods
        resid = None
        if P >= 2:
            resid = float(periodicity_check(self, min(2, P // 2)))
        return {
            "scenario": self.name,
            "variant": self.variant,
            "N": int(self.N),
            "dt": float(self.dt),
            "seed": int(self.seed),
            "noise_std": float(self.noise_std),
            "steps": int(self.steps),
            "periods": int(P),
            "per_period": {
                "mean_error": [float(v) for v in self.mean_error],
                "peak_error": [float(v) for v in self.peak_error],
                "innovation_mean": [float(v) for v in self.innovation_mean],
            },
            "final_period": {
                "mean_error": self.final_period_mean_error(),
                "peak_error": float(self.peak_error[-1]) if P else float("nan"),
            },
            "periodicity_residual": resid,
            "converged": bool(self.converged),
            "active_steps_final_fifth": self.active_steps_in_tail(0.2),
            "solver_iterations_total": int(self.iters.sum()),
            "fault": self.fault,
        }


def periodicity_check(result: ScenarioResult, tail_periods: int = 2) -> float:
    """Deviation from exact period-N repetition near the end of the run.

    Over the last ``tail_periods`` periods, the maximum of
    ``|u(t) - u(t-N)|`` and ``|y(t) - y(t-N)|`` in the infinity norm.
    """
    N, T = result.N, result.steps
    if tail_periods < 1:
        raise ValueError("tail_periods must be at least 1")
    if T < (tail_periods + 1) * N:
        raise ValueError("run too short for the requested tail")
    start = T - tail_periods * N
    with np.errstate(over="ignore", invalid="ignore"):
        du = np.abs(result.u[start:] - result.u[start - N:T - N]).max()
        dy = np.abs(result.y[start:] - result.y[start - N:T - N]).max()
    return float(max(du, dy))


class _Recorder:
    """Preallocated series buffers with truncation on fault."""

    def __init__(self, T, n_y, n_r, n_u, n_truth, n_x):
        self.t = np.arange(T)
        self.y = np.zeros((T, n_y))
        self.z = np.zeros((T, n_r))
        self.r = np.zeros((T, n_r))
        self.u = np.zeros((T, n_u))
        self.x_f = np.zeros((T, n_truth))
        self.x_hat = np.zeros((T, n_x))
        self.x_bar0 = np.full((T, n_x), np.nan)
        self.u_bar0 = np.full((T, n_u), np.nan)
        self.d_norm = np.zeros(T)
        self.innov = np.zeros(T)
        self.nact = np.zeros(T, dtype=int)
        self.iters = np.zeros(T, dtype=int)
        self.status = np.zeros(T, dtype=int)

    def result(self, scenario, variant, steps, fault=None) -> ScenarioResult:
        s = slice(0, steps)
        return ScenarioResult(
            name=scenario.name, variant=variant, N=scenario.period,
            dt=scenario.dt, seed=scenario.seed, noise_std=scenario.noise_std,
            t=self.t[s], y=self.y[s], z=self.z[s], r=self.r[s], u=self.u[s],
            x_f=self.x_f[s], x_hat=self.x_hat[s], x_bar0=self.x_bar0[s],
            u_bar0=self.u_bar0[s], d_norm=self.d_norm[s], innov=self.innov[s],
            nact=self.nact[s], iters=self.iters[s], solver_status=self.status[s],
            fault=fault)


def run_closed_loop(scenario: Scenario, designed: Union[Design, BicycleDesign],
                    periods: Optional[int] = None,
                    seed: Optional[int] = None) -> ScenarioResult:
    """Execute the online loop for one designed variant.

    Each step computes the periodic targets from the current estimate
    (linear path), solves the receding-horizon problem, applies the first
    input to the truth plant, measures, and updates the observer.  On a
    simulation fault the partial series is attached to the raised
    :class:`~pimpc.plants.SimulationFault` as ``exc.partial``.
    """
    if periods is None:
        periods = scenario.periods
    if seed is None:
        seed = scenario.seed
    # drop warm starts and caches held by the design artifacts, so the
    # run is a pure function of (scenario, designed, periods, seed) even
    # when the same design object is reused
    if isinstance(designed, BicycleDesign):
        designed.controller.reset()
        return _run_bicycle(scenario, designed, periods, seed)
    designed.mpc.reset()
    designed.targets.reset()
    return _run_linear(scenario, designed, periods, seed)


def _fault_raise(rec, scenario, variant, steps, t, message):
    fault = {"step": int(t), "message": str(message)}
    exc = SimulationFault(f"{message} (step {t})")
    exc.partial = rec.result(scenario, variant, steps, fault=fault)
    raise exc


def _run_linear(scenario: Scenario, dz: Design, periods: int, seed: int
                ) -> ScenarioResult:
    model = scenario.model
    truth = scenario.truth
    H = scenario.selection
    reference = scenario.reference
    N = scenario.period
    T = periods * N
    variant = dz.variant
    n_d_mpc = dz.aug.channels.Cbar.shape[1]

    x_f = truth.initial_state()
    if variant == "standard":
        obs = ObserverState.cold_start(model.n_x, 1, model.n_y)
    else:
        n_d = dz.obs_aug.channels.Cbar.shape[1]
        obs = ObserverState.cold_start(model.n_x, dz.obs_aug.N, n_d)
    if scenario.start_on_target:
        targets0 = dz.targets.compute(LiftedDisturbance.zero(N, n_d_mpc),
                                      reference, 0)
        obs = ObserverState(x_hat=targets0.state_block(0), d_hat=obs.d_hat, t=0)
        if truth.n == model.n_x:
            x_f = targets0.state_block(0).copy()

    rec = _Recorder(T, model.n_y, H.n_r, model.n_u, truth.n, model.n_x)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            if not (np.all(np.isfinite(obs.x_hat))
                    and np.all(np.isfinite(obs.d_hat.stack))):
                _fault_raise(rec, scenario, variant, t, t,
                             "state estimate became non-finite")
            y = measure(truth, x_f, seed=seed, t=t)
            p = t % N
            D = expand_estimate(variant, obs.d_hat, N)
            # A huge-but-finite estimate can overflow to NaN inside the
            # target solve or the condensed subproblem; report that as a
            # simulation fault instead of letting the solver error escape.
            try:
                targets = dz.targets.compute(D, reference, p)
                if targets.phase != p:
                    raise RuntimeError("target phase misaligned with the loop")
                step = dz.mpc.step(obs.x_hat, D, targets)
            except (QpError, np.linalg.LinAlgError) as exc:
                _fault_raise(rec, scenario, variant, t, t,
                             f"controller arithmetic failed: {exc}")
            if step.status == "infeasible":
                _fault_raise(rec, scenario, variant, t, t,
                             "controller subproblem reported infeasible")
            u = step.u0

            if variant == "standard":
                e = model.C @ obs.x_hat - y
                x_next = model.A @ obs.x_hat + model.B @ u + dz.plain_gain @ e
                obs = ObserverState(x_hat=x_next, d_hat=obs.d_hat, t=obs.t + 1)
            else:
                e = (model.C @ obs.x_hat
                     + dz.obs_aug.channels.Cbar @ obs.d_hat.block(0) - y)
                obs = observer_step(obs, u, y, dz.obs_aug, dz.gains)

            rec.y[t] = y
            rec.z[t] = H.H @ y
            rec.r[t] = reference.at(t)
            rec.u[t] = u
            rec.x_f[t] = x_f
            rec.x_hat[t] = step.states[0]
            rec.x_bar0[t] = targets.state_block(0)
            rec.u_bar0[t] = targets.input_block(0)
            rec.d_norm[t] = np.linalg.norm(obs.d_hat.stack)
            rec.innov[t] = np.linalg.norm(e)
            rec.nact[t] = step.active_constraints
            rec.iters[t] = step.iterations
            rec.status[t] = _STATUS_CODES.get(step.status, 1)

            try:
                x_f, _ = plant_step(truth, x_f, u, seed=seed, t=t)
            except SimulationFault as exc:
                _fault_raise(rec, scenario, variant, t + 1, t, exc)
    return rec.result(scenario, variant, T)


def _run_bicycle(scenario: Scenario, dz: BicycleDesign, periods: int, seed: int
                 ) -> ScenarioResult:
    pair = scenario.bicycle
    truth = scenario.truth
    H = scenario.selection
    reference = scenario.reference
    N = scenario.period
    L = scenario.nmpc_config.horizon
    T = periods * N
    variant = dz.variant

    x_f = truth.initial_state()
    d_hat = LiftedDisturbance.zero(dz.N_obs, 4)
    u_hist = np.full((N, 2), np.nan)
    u_prev = None
    past_prev = None

    rec = _Recorder(T, 4, H.n_r, 2, truth.n, 4)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            x_t = measure(truth, x_f, seed=seed, t=t)
            if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(d_hat.stack))):
                _fault_raise(rec, scenario, variant, t, t,
                             "measured state became non-finite")
            p = t % N
            D = expand_estimate(variant, d_hat, N)
            window = reference.window(t + 1, L)
            past = u_hist[(p + np.arange(L)) % N].copy()
            # Same escape hatch as the linear loop: arithmetic blowups
            # inside the solver count as simulation faults.
            try:
                step = dz.controller.step(x_t, D, window, past,
                                          u_prev=u_prev, past_prev=past_prev)
            except (QpError, np.linalg.LinAlgError) as exc:
                _fault_raise(rec, scenario, variant, t, t,
                             f"controller arithmetic failed: {exc}")
            u = step.u0

            try:
                x_f_next, _ = plant_step(truth, x_f, u, seed=seed, t=t)
            except SimulationFault as exc:
                rec.y[t] = x_t
                rec.z[t] = H.H @ x_t
                rec.r[t] = reference.at(t)
                rec.u[t] = u
                rec.x_f[t] = x_f
                rec.x_hat[t] = x_t
                _fault_raise(rec, scenario, variant, t + 1, t, exc)
            x_next = measure(truth, x_f_next, seed=seed, t=t + 1)
            e = pair.nominal_step(x_t, u) + d_hat.block(0) - x_next
            if variant != "standard":
                d_hat = state_measurement_observer_step(
                    d_hat, x_t, u, x_next, pair.nominal_step, dz.L_d)

            rec.y[t] = x_t
            rec.z[t] = H.H @ x_t
            rec.r[t] = reference.at(t)
            rec.u[t] = u
            rec.x_f[t] = x_f
            rec.x_hat[t] = x_t
            rec.d_norm[t] = np.linalg.norm(d_hat.stack)
            rec.innov[t] = np.linalg.norm(e)
            rec.nact[t] = step.active_constraints
            rec.iters[t] = step.iterations
            rec.status[t] = _STATUS_CODES.get(step.status, 1)

            past_prev = u_hist[p].copy()
            u_hist[p] = u
            u_prev = u
            x_f = x_f_next
    return rec.result(scenario, variant, T)


@dataclass
class VariantComparison:
    """Per-variant results of one scenario under identical seeds."""

    scenario_name: str
    results: dict
    statuses: dict
    final_errors: dict
    ordering_ok: Optional[bool]
    equivalent: bool

    def table(self) -> tuple[list, list]:
        """Header and rows of per-period mean/peak errors per variant."""
        header = ["period"]
        for v in VARIANTS:
            header += [f"mean_{v}", f"peak_{v}"]
        rows = []
        P = max((r.periods for r in self.results.values() if r is not None),
                default=0)
        for p in range(P):
            row = [p]
            for v in VARIANTS:
                r = self.results.get(v)
                if r is not None and p < r.periods:
                    row += [float(r.mean_error[p]), float(r.peak_error[p])]
                else:
                    row += [float("nan"), float("nan")]
            rows.append(row)
        return header, rows


def compare_variants(scenario: Scenario, periods: Optional[int] = None,
                     seed: Optional[int] = None,
                     tie_tolerance: float = 1e-8) -> VariantComparison:
    """Run all three variants with identical seeds and rank their errors.

    A variant that faults contributes its partial series and a fault
    status; the others still run.  ``ordering_ok`` is the strict check
    pi-mpc < offset-free < standard on final-period mean error, or None
    when a variant is missing or the errors tie within ``tie_tolerance``
    (reported via ``equivalent``).
    """
    results: dict = {}
    statuses: dict = {}
    for variant in VARIANTS:
        try:
            dz = design(scenario, variant)
            results[variant] = run_closed_loop(scenario, dz, periods=periods,
                                               seed=seed)
            statuses[variant] = "ok"
        except DesignError as exc:
            results[variant] = None
            statuses[variant] = f"design-error: {exc}"
        except SimulationFault as exc:
            results[variant] = getattr(exc, "partial", None)
            statuses[variant] = f"fault: {exc}"

    final = {v: (r.final_period_mean_error() if r is not None and r.periods > 0
                 else float("nan"))
             for v, r in results.items()}
    vals = [final[v] for v in VARIANTS]
    ordering = None
    equivalent = False
    if all(np.isfinite(vals)):
        spread = max(vals) - min(vals)
        if spread <= tie_tolerance:
            equivalent = True
        else:
            ordering = bool(final["pi-mpc"] < final["offset-free"] < final["standard"])
    return VariantComparison(scenario_name=scenario.name, results=results,
                             statuses=statuses, final_errors=final,
                             ordering_ok=ordering, equivalent=equivalent)


def series_header(n_r: int, n_u: int) -> list:
    """Fixed, versioned column set of the series CSV."""
    cols = ["t"]
    cols += [f"z{i}" for i in range(n_r)]
    cols += [f"r{i}" for i in range(n_r)]
    cols += ["err"]
    cols += [f"u{i}" for i in range(n_u)]
    cols += ["innov", "nact"]
    return cols


def _fmt(v) -> str:
    return repr(float(v))


def write_series(result: ScenarioResult, path) -> None:
    """Write the per-step series as CSV with the documented header."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    err = result.error_norms()
    lines = [",".join(series_header(result.z.shape[1], result.u.shape[1]))]
    for i in range(result.steps):
        row = [str(int(result.t[i]))]
        row += [_fmt(v) for v in result.z[i]]
        row += [_fmt(v) for v in result.r[i]]
        row.append(_fmt(err[i]))
        row += [_fmt(v) for v in result.u[i]]
        row.append(_fmt(result.innov[i]))
        row.append(str(int(result.nact[i])))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def write_summary(result: ScenarioResult, path) -> None:
    """Write the run summary as deterministic JSON (sorted keys)."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")


def write_comparison(cmp: VariantComparison, outdir) -> None:
    """Write the per-period comparison table and its verdict."""
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    header, rows = cmp.table()
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, int) else _fmt(c)
                              for c in row))
    (outdir / "comparison.csv").write_text("\n".join(lines) + "\n")
    verdict = {
        "scenario": cmp.scenario_name,
        "statuses": cmp.statuses,
        "final_errors": {v: (float(e) if np.isfinite(e) else None)
                         for v, e in cmp.final_errors.items()},
        "ordering_ok": cmp.ordering_ok,
        "equivalent": cmp.equivalent,
    }
    (outdir / "comparison.json").write_text(
        json.dumps(verdict, indent=2, sort_keys=True) + "\n")
