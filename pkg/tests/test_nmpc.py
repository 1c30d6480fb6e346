import time

import numpy as np
import pytest

from quadsafe.dynamics import QuadParams, step_euler, step_rk4
from quadsafe.minco import Boundary, MincoTrajectory
from quadsafe.nmpc import (
    FlatnessError, NmpcConfig, NmpcTracker, ReferenceWindow, hover_reference, reference_from_flat,
    reference_from_trajectory, solve_nmpc,
)

PARAMS = QuadParams()
CFG = NmpcConfig()


def hover_state(p=(0.0, 0.0, 1.0)):
    x = np.zeros(9)
    x[:3] = p
    return x


def test_hover_reference_is_equilibrium():
    refs = hover_reference([1, 2, 3], 0.0, CFG, PARAMS)
    assert np.allclose(refs.states, refs.states[0])
    assert np.allclose(refs.inputs, [PARAMS.hover_thrust, 0, 0, 0])


def test_level_reference_from_zero_acceleration():
    n = CFG.horizon + 1
    refs = reference_from_flat(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3)), 0.0, CFG, PARAMS)
    assert np.allclose(refs.states[:, 6:8], 0.0)
    assert np.allclose(refs.inputs[:, 0], 9.81 * PARAMS.mass)


@pytest.mark.parametrize("theta", [0.1, -0.3, 0.6])
def test_flatness_recovers_pitch(theta):
    n = CFG.horizon + 1
    acc = np.tile([9.81 * np.tan(theta), 0.0, 0.0], (n, 1))
    refs = reference_from_flat(np.zeros((n, 3)), np.zeros((n, 3)), acc, 0.0, CFG, PARAMS)
    assert np.allclose(refs.states[:, 7], theta, atol=1e-9)
    assert np.allclose(refs.states[:, 6], 0.0, atol=1e-12)


def test_free_fall_reference_rejected():
    n = CFG.horizon + 1
    acc = np.tile([0.0, 0.0, -9.81], (n, 1))
    with pytest.raises(FlatnessError):
        reference_from_flat(np.zeros((n, 3)), np.zeros((n, 3)), acc, 0.0, CFG, PARAMS)


def test_disturbance_enters_reference():
    refs = hover_reference([0, 0, 1], 0.0, CFG, PARAMS, f_hat=np.array([1.0, 0, 0]))
    # Leaning into the force: negative pitch produces thrust along -x.
    assert refs.states[0, 7] < 0
    assert refs.inputs[0, 0] == pytest.approx(np.hypot(1.0, 9.81))


def test_trajectory_reference_holds_endpoint():
    traj = MincoTrajectory(np.zeros((0, 3)), [1.0], Boundary.rest([0, 0, 1], [1, 0, 1]))
    refs = reference_from_trajectory(traj, 0.5, CFG, 0.0, PARAMS)
    assert len(refs.states) == CFG.horizon + 1
    assert np.allclose(refs.states[-1, :3], [1, 0, 1])
    assert np.allclose(refs.states[-1, 3:6], 0.0)


def test_hover_solve_returns_hover_input():
    refs = hover_reference([0, 0, 1], 0.0, CFG, PARAMS)
    sol = solve_nmpc(hover_state(), refs, np.zeros(3), CFG, PARAMS)
    assert np.allclose(sol.control, [PARAMS.hover_thrust, 0, 0, 0], atol=1e-6)


def random_problem(rng):
    x0 = hover_state(rng.uniform(-1, 1, 3))
    x0[3:6] = rng.uniform(-1, 1, 3)
    x0[6:9] = rng.uniform(-0.3, 0.3, 3)
    refs = hover_reference(rng.uniform(-1, 1, 3), 0.0, CFG, PARAMS)
    return x0, refs, rng.uniform(-2, 2, 3)


def test_input_box_and_euler_recursion():
    rng = np.random.default_rng(0)
    lo, hi = PARAMS.input_bounds()
    for _ in range(20):
        x0, refs, f = random_problem(rng)
        sol = solve_nmpc(x0, refs, f, CFG, PARAMS)
        assert np.all(sol.inputs >= lo) and np.all(sol.inputs <= hi)
        for k in range(CFG.horizon):
            pred = step_euler(sol.states[k], sol.inputs[k], f, CFG.dt, PARAMS)
            assert np.abs(pred - sol.states[k + 1]).max() < 1e-10


def test_cost_not_above_initial_guess():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x0, refs, f = random_problem(rng)
        sol = solve_nmpc(x0, refs, f, CFG, PARAMS)
        assert sol.cost <= sol.initial_cost + 1e-9


def test_deterministic_solve():
    x0, refs, f = random_problem(np.random.default_rng(2))
    a = solve_nmpc(x0, refs, f, CFG, PARAMS)
    b = solve_nmpc(x0.copy(), refs, f.copy(), CFG, PARAMS)
    assert np.array_equal(a.control, b.control)


def test_large_input_weight_pulls_toward_reference():
    x0, refs, f = random_problem(np.random.default_rng(3))
    gaps = []
    for scale in (1.0, 1e2, 1e4):
        cfg = NmpcConfig(input_weights=CFG.input_weights * scale)
        sol = solve_nmpc(x0, refs, f, cfg, PARAMS)
        gaps.append(np.linalg.norm(sol.control - refs.inputs[0]))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.05


def test_predictions_match_plant():
    x0, refs, f = random_problem(np.random.default_rng(4))
    sol = solve_nmpc(x0, refs, f, CFG, PARAMS)
    x = x0.copy()
    for k in range(5):
        for _ in range(10):
            x = step_rk4(x, sol.inputs[k], f, CFG.dt / 10, PARAMS)
        # One Euler step of 0.05 s differs from the integrated plant by O(dt^2).
        assert np.linalg.norm(x[:6] - sol.states[k + 1][:6]) < 0.05 * (k + 1)


def test_tilted_state_clamped_and_flagged():
    x0 = hover_state()
    x0[6] = PARAMS.max_tilt + 0.2
    sol = solve_nmpc(x0, hover_reference([0, 0, 1], 0.0, CFG, PARAMS), np.zeros(3), CFG, PARAMS)
    assert sol.state_clamped
    assert abs(sol.states[0, 6]) <= PARAMS.max_tilt + 1e-12


def test_constant_force_compensated_in_closed_loop():
    F = np.array([1.0, 0.0, 0.0])
    tracker = NmpcTracker(CFG, PARAMS)
    refs = hover_reference([0, 0, 1], 0.0, CFG, PARAMS, f_hat=F)
    x = hover_state()
    dt = 0.01
    for _ in range(1000):
        u = tracker.step(x, refs, F).control
        for _ in range(10):
            x = step_rk4(x, u, F, dt / 10, PARAMS)
    assert np.linalg.norm(x[:3] - [0, 0, 1]) < 0.02


def test_config_and_window_validation():
    with pytest.raises(ValueError):
        NmpcConfig(horizon=1)
    with pytest.raises(ValueError):
        NmpcConfig(dt=0.0)
    with pytest.raises(ValueError):
        NmpcConfig(input_weights=[0.0, 1, 1, 1])
    with pytest.raises(ValueError):
        NmpcConfig(state_weights=np.ones((9, 9)))
    with pytest.raises(ValueError):
        ReferenceWindow(np.zeros((5, 9)), np.zeros((5, 4)))
    with pytest.raises(ValueError):
        solve_nmpc(hover_state(), hover_reference([0, 0, 1], 0.0, NmpcConfig(horizon=5), PARAMS),
                   np.zeros(3), CFG, PARAMS)


def test_solve_time_budget():
    rng = np.random.default_rng(5)
    problems = [random_problem(rng) for _ in range(60)]
    solve_nmpc(*problems[0], CFG, PARAMS)  # compile
    times = []
    for x0, refs, f in problems[1:]:
        wall = time.perf_counter()
        solve_nmpc(x0, refs, f, CFG, PARAMS)
        times.append(time.perf_counter() - wall)
    assert np.mean(times) <= 0.010
