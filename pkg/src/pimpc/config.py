"""Scenario configuration: YAML schema, strict validation, construction.

A scenario file fully determines a closed-loop experiment: the true
plant, the nominal model, the reference, the controller and observer
tuning, and the run length.  Unknown keys anywhere are hard errors so a
typo can never silently fall back to a default.

Schema overview (see the shipped files under ``scenarios/``)::

    name: <str>            kind: linear | spring | bicycle
    dt: <float>            period: <int, steps per reference period>
    periods: <int>         seed: <int>
    plant: {...}           # kind-specific, see the builders below
    nominal: {...}         # only for kind=linear with explicit matrices
    reference: {...}       # constant | harmonic | figure_eight | samples
    controller: {...}      # weights, horizon, boxes
    observer: {...}        # covariances (linear) or block gain (bicycle)
    selection: {rows: [[...]]}   # optional, defaults per kind
"""

from __future__ import annotations

import pathlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from .model import ConstraintBox, LtiModel, PeriodicReference, SelectionMatrix
from .mpc import MpcConfig, NmpcConfig
from .numerics.qp import QpSettings
from .plants import (
    BicyclePlants,
    LinearMismatchPlant,
    NonlinearSpringPlant,
    Plant,
    modal_truth_and_model,
)

__all__ = [
    "ConfigError",
    "Scenario",
    "builtin_scenario_path",
    "builtin_scenarios",
    "load_scenario",
]

_SCENARIO_DIR = pathlib.Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario files."""


@dataclass(frozen=True)
class Scenario:
    """Fully validated experiment description."""

    name: str
    kind: str
    dt: float
    period: int
    periods: int
    seed: int
    reference: PeriodicReference
    selection: SelectionMatrix
    truth: Plant
    noise_std: float
    start_on_target: bool = False
    # linear / spring controller path
    model: Optional[LtiModel] = None
    channel_kind: str = "output"
    observer_weights: tuple = (1e-4, 1e-2, 1e-4)
    mpc_config: Optional[MpcConfig] = None
    # bicycle controller path
    bicycle: Optional[BicyclePlants] = None
    nmpc_config: Optional[NmpcConfig] = None
    observer_lambda: Optional[np.ndarray] = None

    @property
    def uses_targets(self) -> bool:
        """True when the controller tracks periodic targets (linear path)."""
        return self.mpc_config is not None


_MISSING = object()


class _Section:
    """Mapping view that tracks consumed keys and rejects leftovers."""

    def __init__(self, data, where: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
        self._data = dict(data)
        self._where = where

    def take(self, key, default=_MISSING):
        if key in self._data:
            return self._data.pop(key)
        if default is _MISSING:
            raise ConfigError(f"{self._where}: missing required key '{key}'")
        return default

    def subsection(self, key, required=True) -> "_Section":
        raw = self.take(key) if required else self.take(key, None)
        return _Section(raw, f"{self._where}.{key}")

    def finish(self):
        if self._data:
            raise ConfigError(
                f"{self._where}: unknown keys {sorted(self._data)}")


def _number(value, where, positive=False, nonneg=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    v = float(value)
    if positive and v <= 0.0:
        raise ConfigError(f"{where}: must be positive, got {v}")
    if nonneg and v < 0.0:
        raise ConfigError(f"{where}: must be non-negative, got {v}")
    return v


def _integer(value, where, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return int(value)


def _vector(value, where, length=None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric array ({exc})") from None
    arr = arr.reshape(-1)
    if length is not None and arr.size != length:
        raise ConfigError(f"{where}: expected length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}: contains non-finite values")
    return arr


def _matrix(value, where) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise ConfigError(f"{where}: expected a matrix (list of rows)")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}: contains non-finite values")
    return arr


def _weight(value, where, dim) -> np.ndarray:
    """Scalar, diagonal, or full symmetric weight matrix."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    if arr.ndim == 1:
        if arr.size != dim:
            raise ConfigError(f"{where}: diagonal needs {dim} entries, got {arr.size}")
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise ConfigError(f"{where}: expected {dim}x{dim}, got {arr.shape}")
    return arr


def _box(sec: _Section, prefix: str, dim: int, where: str) -> Optional[ConstraintBox]:
    lo = sec.take(f"{prefix}_lower", None)
    hi = sec.take(f"{prefix}_upper", None)
    if lo is None and hi is None:
        return None
    lower = np.full(dim, -np.inf) if lo is None else _vector(lo, f"{where}.{prefix}_lower", dim)
    upper = np.full(dim, np.inf) if hi is None else _vector(hi, f"{where}.{prefix}_upper", dim)
    try:
        return ConstraintBox(lower, upper)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _build_reference(sec: _Section, N: int, where: str) -> PeriodicReference:
    kind = sec.take("type")
    k = np.arange(N)
    if kind == "constant":
        value = _vector(sec.take("value"), f"{where}.value")
        sec.finish()
        return PeriodicReference(np.tile(value, (N, 1)))
    if kind == "harmonic":
        center = _vector(sec.take("center"), f"{where}.center")
        amplitude = _vector(sec.take("amplitude"), f"{where}.amplitude", center.size)
        harmonics = _vector(sec.take("harmonics", np.ones(center.size)),
                            f"{where}.harmonics", center.size)
        phases = _vector(sec.take("phases", np.zeros(center.size)),
                         f"{where}.phases", center.size)
        sec.finish()
        samples = np.empty((N, center.size))
        for c in range(center.size):
            samples[:, c] = center[c] + amplitude[c] * np.sin(
                2.0 * np.pi * harmonics[c] * k / N + phases[c])
        return PeriodicReference(samples)
    if kind == "figure_eight":
        center = _vector(sec.take("center"), f"{where}.center", 2)
        amplitude = _vector(sec.take("amplitude"), f"{where}.amplitude", 2)
        sec.finish()
        samples = np.column_stack([
            center[0] + amplitude[0] * np.sin(2.0 * np.pi * k / N),
            center[1] + amplitude[1] * np.sin(4.0 * np.pi * k / N),
        ])
        return PeriodicReference(samples)
    if kind == "ellipse":
        center = _vector(sec.take("center"), f"{where}.center", 2)
        radii = _vector(sec.take("radii"), f"{where}.radii", 2)
        phase = _number(sec.take("phase", 0.0), f"{where}.phase")
        sec.finish()
        ang = 2.0 * np.pi * k / N + phase
        samples = np.column_stack([center[0] + radii[0] * np.cos(ang),
                                   center[1] + radii[1] * np.sin(ang)])
        return PeriodicReference(samples)
    if kind == "samples":
        samples = _matrix(sec.take("values"), f"{where}.values")
        sec.finish()
        if samples.shape[0] != N:
            raise ConfigError(f"{where}.values: {samples.shape[0]} rows, expected {N}")
        return PeriodicReference(samples)
    raise ConfigError(f"{where}.type: unknown reference type {kind!r}")


def _build_linear_plant(sec: _Section, top: _Section, dt: float, noise_std: float,
                        where: str) -> tuple[Plant, LtiModel]:
    ptype = sec.take("type")
    if ptype == "modal":
        freqs = _vector(sec.take("frequencies"), f"{where}.frequencies")
        damps = _vector(sec.take("dampings"), f"{where}.dampings", freqs.size)
        bg = _matrix(sec.take("input_gains"), f"{where}.input_gains")
        cg = _matrix(sec.take("output_gains"), f"{where}.output_gains")
        vg = sec.take("velocity_gains", None)
        if vg is not None:
            vg = _matrix(vg, f"{where}.velocity_gains")
        keep = _integer(sec.take("keep"), f"{where}.keep", minimum=1)
        gain_err = _number(sec.take("input_gain_error", 1.0), f"{where}.input_gain_error",
                           positive=True)
        delay = bool(sec.take("delay_input", False))
        sec.finish()
        try:
            truth, model = modal_truth_and_model(
                freqs, damps, bg, cg, dt, keep, velocity_gains=vg,
                input_gain_error=gain_err, delay_input=delay,
                noise_std=noise_std)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return truth, model
    if ptype == "matrices":
        A_f = _matrix(sec.take("A"), f"{where}.A")
        B_f = _matrix(sec.take("B"), f"{where}.B")
        C_f = _matrix(sec.take("C"), f"{where}.C")
        gain_err = _number(sec.take("input_gain_error", 1.0), f"{where}.input_gain_error",
                           positive=True)
        delay = bool(sec.take("delay_input", False))
        sec.finish()
        nom = top.subsection("nominal")
        A = _matrix(nom.take("A"), "nominal.A")
        B = _matrix(nom.take("B"), "nominal.B")
        C = _matrix(nom.take("C"), "nominal.C")
        nom.finish()
        try:
            truth = LinearMismatchPlant(A_f, B_f, C_f, input_gain=gain_err,
                                        delay_input=delay, noise_std=noise_std)
            model = LtiModel(A, B, C)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        return truth, model
    raise ConfigError(f"{where}.type: unknown linear plant type {ptype!r}")


def _qp_settings(sec: _Section, where: str) -> QpSettings:
    kwargs = {}
    for key in ("eps_abs", "eps_rel"):
        val = sec.take(key, None)
        if val is not None:
            kwargs[key] = _number(val, f"{where}.{key}", positive=True)
    max_iter = sec.take("max_qp_iter", None)
    if max_iter is not None:
        kwargs["max_iter"] = _integer(max_iter, f"{where}.max_qp_iter", minimum=1)
    return QpSettings(**kwargs)


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file.

    Raises
    ------
    ConfigError
        On YAML syntax errors, missing or unknown keys, or values that
        fail structural validation.
    """
    path = pathlib.Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    top = _Section(raw, path.name)

    name = str(top.take("name"))
    kind = top.take("kind")
    if kind not in ("linear", "spring", "bicycle"):
        raise ConfigError(f"{path.name}: unknown kind {kind!r}")
    dt = _number(top.take("dt"), "dt", positive=True)
    period = _integer(top.take("period"), "period", minimum=1)
    periods = _integer(top.take("periods", 20), "periods", minimum=1)
    seed = _integer(top.take("seed", 0), "seed", minimum=0)
    noise_std = _number(top.take("noise_std", 0.0), "noise_std", nonneg=True)
    start_on_target = bool(top.take("start_on_target", False))

    ref_sec = top.subsection("reference")
    reference = _build_reference(ref_sec, period, "reference")

    if kind == "bicycle":
        if start_on_target:
            raise ConfigError("start_on_target applies only to target-tracking kinds")
        scenario = _load_bicycle(top, name, dt, period, periods, seed,
                                 noise_std, reference)
    else:
        scenario = _load_linear_like(top, kind, name, dt, period, periods,
                                     seed, noise_std, reference, start_on_target)
    top.finish()
    return scenario


def _load_linear_like(top: _Section, kind: str, name, dt, period, periods,
                      seed, noise_std, reference, start_on_target) -> Scenario:
    if kind == "linear":
        plant_sec = top.subsection("plant")
        truth, model = _build_linear_plant(plant_sec, top, dt, noise_std, "plant")
    else:
        plant_sec = top.subsection("plant")
        mass = _number(plant_sec.take("mass"), "plant.mass", positive=True)
        stiffness = _number(plant_sec.take("stiffness"), "plant.stiffness", nonneg=True)
        cubic = _number(plant_sec.take("cubic"), "plant.cubic")
        damping = _number(plant_sec.take("damping"), "plant.damping", nonneg=True)
        plant_sec.finish()
        truth = NonlinearSpringPlant(mass, stiffness, cubic, damping, dt,
                                     noise_std=noise_std)
        model = truth.linearization()

    sel_sec = top.subsection("selection", required=False)
    rows = sel_sec.take("rows", None)
    sel_sec.finish()
    H = SelectionMatrix(_matrix(rows, "selection.rows") if rows is not None
                        else np.eye(model.n_y))
    if H.n_y != model.n_y:
        raise ConfigError(f"selection.rows: {H.n_y} columns, expected {model.n_y}")
    if reference.n_r != H.n_r:
        raise ConfigError(
            f"reference width {reference.n_r} does not match selection rows {H.n_r}")

    ctrl = top.subsection("controller")
    horizon = _integer(ctrl.take("horizon"), "controller.horizon", minimum=1)
    Q = _weight(ctrl.take("output_weight", 1.0), "controller.output_weight", model.n_y)
    state_reg = _number(ctrl.take("state_reg", 0.0), "controller.state_reg", nonneg=True)
    R = _weight(ctrl.take("input_weight", 1.0), "controller.input_weight", model.n_u)
    input_box = _box(ctrl, "input", model.n_u, "controller")
    state_box = _box(ctrl, "state", model.n_x, "controller")
    settings = _qp_settings(ctrl, "controller")
    ctrl.finish()
    Q_state = model.C.T @ Q @ model.C + state_reg * np.eye(model.n_x)
    try:
        mpc_config = MpcConfig(Q=Q_state, R=R, horizon=horizon,
                               state_box=state_box, input_box=input_box,
                               qp_settings=settings)
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from None

    obs = top.subsection("observer", required=False)
    wx = obs.take("wx", 1e-4)
    wd = obs.take("wd", 1e-2)
    v = obs.take("v", 1e-4)
    channel_kind = obs.take("channels", "output")
    obs.finish()
    if channel_kind not in ("output", "input", "full_state"):
        raise ConfigError(f"observer.channels: unknown kind {channel_kind!r}")

    if truth.input_limits is None and input_box is not None:
        truth.input_limits = input_box
    return Scenario(name=name, kind=kind, dt=dt, period=period, periods=periods,
                    seed=seed, reference=reference, selection=H, truth=truth,
                    noise_std=noise_std, start_on_target=start_on_target,
                    model=model, channel_kind=channel_kind,
                    observer_weights=(wx, wd, v), mpc_config=mpc_config)


def _load_bicycle(top: _Section, name, dt, period, periods, seed,
                  noise_std, reference) -> Scenario:
    plant_sec = top.subsection("plant")
    l_r = _number(plant_sec.take("l_r"), "plant.l_r", positive=True)
    l_f = _number(plant_sec.take("l_f"), "plant.l_f", positive=True)
    lag_tau = _number(plant_sec.take("lag_tau", 0.0), "plant.lag_tau", nonneg=True)
    gain_coeff = _number(plant_sec.take("gain_coeff", 0.0), "plant.gain_coeff", nonneg=True)
    slip_coeff = _number(plant_sec.take("slip_coeff", 0.0), "plant.slip_coeff")
    x0 = _vector(plant_sec.take("x0", [0.0, 0.0, 0.0, 0.0]), "plant.x0", 4)
    plant_sec.finish()

    sel_sec = top.subsection("selection", required=False)
    rows = sel_sec.take("rows", None)
    sel_sec.finish()
    H = SelectionMatrix(_matrix(rows, "selection.rows") if rows is not None
                        else np.hstack([np.eye(2), np.zeros((2, 2))]))
    if H.n_y != 4:
        raise ConfigError("selection.rows: bicycle output has 4 channels")
    if reference.n_r != H.n_r:
        raise ConfigError(
            f"reference width {reference.n_r} does not match selection rows {H.n_r}")

    ctrl = top.subsection("controller")
    horizon = _integer(ctrl.take("horizon"), "controller.horizon", minimum=1)
    Q_z = _weight(ctrl.take("output_weight", 1.0), "controller.output_weight", H.n_r)
    R = _weight(ctrl.take("input_weight", 1e-3), "controller.input_weight", 2)
    input_rate = bool(ctrl.take("input_rate", True))
    bootstrap = _number(ctrl.take("bootstrap_weight", 1e-3), "controller.bootstrap_weight",
                        positive=True)
    sqp_cap = _integer(ctrl.take("max_sqp_iter", 10), "controller.max_sqp_iter", minimum=1)
    input_box = _box(ctrl, "input", 2, "controller")
    settings = _qp_settings(ctrl, "controller")
    ctrl.finish()
    try:
        nmpc = NmpcConfig(Q_z=Q_z, R=R, horizon=horizon, input_box=input_box,
                          input_rate=input_rate, bootstrap_weight=bootstrap,
                          max_sqp_iter=sqp_cap, qp_settings=settings)
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from None

    obs = top.subsection("observer")
    lam = _vector(obs.take("lambda"), "observer.lambda", 4)
    obs.finish()
    if np.any(lam <= 0.0) or np.any(lam >= 1.0):
        raise ConfigError("observer.lambda: entries must lie in (0, 1)")

    pair = BicyclePlants(l_r, l_f, dt, lag_tau=lag_tau, gain_coeff=gain_coeff,
                         slip_coeff=slip_coeff, noise_std=noise_std,
                         input_limits=input_box, x0=x0)
    return Scenario(name=name, kind="bicycle", dt=dt, period=period,
                    periods=periods, seed=seed, reference=reference,
                    selection=H, truth=pair.true_plant, noise_std=noise_std,
                    bicycle=pair, nmpc_config=nmpc, observer_lambda=lam)


def builtin_scenarios() -> list[str]:
    """Names of the scenario files shipped with the package."""
    return sorted(p.stem for p in _SCENARIO_DIR.glob("*.yaml"))


def builtin_scenario_path(name: str) -> pathlib.Path:
    """Path of a shipped scenario by name."""
    p = _SCENARIO_DIR / f"{name}.yaml"
    if not p.exists():
        raise ConfigError(
            f"no builtin scenario {name!r}; available: {builtin_scenarios()}")
    return p
