"""Shared fixtures: the expensive closed-loop runs are computed once."""

import time
from types import SimpleNamespace

import numpy as np
import pytest

from pimpc.config import builtin_scenario_path, load_scenario
from pimpc.harness import design, run_closed_loop
from pimpc.observer import ObserverState, observer_step
from pimpc.plants import measure, plant_step


@pytest.fixture(scope="session")
def softarm_scenario():
    return load_scenario(builtin_scenario_path("softarm"))


@pytest.fixture(scope="session")
def softarm_designs(softarm_scenario):
    return {v: design(softarm_scenario, v)
            for v in ("standard", "offset-free", "pi-mpc")}


@pytest.fixture(scope="session")
def softarm_runs(softarm_scenario, softarm_designs):
    """All three variants at full length, with wall time per variant."""
    results, seconds = {}, {}
    for v, dz in softarm_designs.items():
        t0 = time.perf_counter()
        results[v] = run_closed_loop(softarm_scenario, dz)
        seconds[v] = time.perf_counter() - t0
    return SimpleNamespace(results=results, seconds=seconds)


@pytest.fixture(scope="session")
def softarm_steady_window(softarm_scenario, softarm_designs):
    """Final-period estimates, inputs, and outputs of a converged run.

    The run is repeated inline (rather than read from ``softarm_runs``)
    because the recorded series does not keep the lifted estimate, which
    the steady-state equations need at the window's first step.
    """
    sc = softarm_scenario
    dz = softarm_designs["pi-mpc"]
    model, ref, N = sc.model, sc.reference, sc.period
    T = sc.periods * N
    dz.mpc.reset()
    dz.targets.reset()
    n_d = dz.obs_aug.channels.Cbar.shape[1]
    obs = ObserverState.cold_start(model.n_x, N, n_d)
    x_f = sc.truth.initial_state()
    xh = np.zeros((T, model.n_x))
    us = np.zeros((T, model.n_u))
    ys = np.zeros((T, model.n_y))
    d_start = None
    for t in range(T):
        y = measure(sc.truth, x_f, seed=sc.seed, t=t)
        if t == T - N:
            d_start = obs.d_hat
        targets = dz.targets.compute(obs.d_hat, ref, t % N)
        step = dz.mpc.step(obs.x_hat, obs.d_hat, targets)
        xh[t], us[t], ys[t] = obs.x_hat, step.u0, y
        obs = observer_step(obs, step.u0, y, dz.obs_aug, dz.gains)
        x_f, _ = plant_step(sc.truth, x_f, step.u0, seed=sc.seed, t=t)
    return SimpleNamespace(aug=dz.obs_aug, x_hats=xh[-N:], us=us[-N:],
                           y_fs=ys[-N:], d_hat=d_start)


@pytest.fixture(scope="session")
def bicycle_scenario():
    return load_scenario(builtin_scenario_path("bicycle"))


@pytest.fixture(scope="session")
def bicycle_runs(bicycle_scenario):
    return {v: run_closed_loop(bicycle_scenario, design(bicycle_scenario, v))
            for v in ("standard", "pi-mpc")}


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
