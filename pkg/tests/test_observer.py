import numpy as np
import pytest

from quadsafe.dynamics import QuadParams, rotation, step_euler, step_rk4
from quadsafe.observer import (
    DisturbanceObserver, ObserverConfig, ObserverError, ObserverGains, ObserverState, observer_step,
)


def run(force, duration, params=None, dt=0.01, substeps=10, thrust=None, filtered=False):
    """Level vehicle under hover thrust pushed by ``force(t)``; returns times, truth, estimates, states."""
    params = params or QuadParams()
    thrust = params.hover_thrust if thrust is None else thrust
    gains = ObserverGains.from_bandwidth(8.0, params.mass)
    obs = DisturbanceObserver(params)
    s = ObserverState()
    x = np.zeros(9)
    u = np.array([thrust, 0, 0, 0])
    out_t, out_f, out_z, out_s = [], [], [], []
    for k in range(int(round(duration / dt))):
        t = k * dt
        est = obs.update(t, x, thrust, dt)
        s = observer_step(s, x[3:6], np.eye(3), thrust, x[3:6], dt, gains, params)
        out_t.append(t)
        out_f.append(force(t))
        out_z.append(est.force if filtered else s.z1)
        out_s.append(s)
        for i in range(substeps):
            x = step_rk4(x, u, force(t + i * dt / substeps), dt / substeps, params)
    return np.array(out_t), np.array(out_f), np.array(out_z), out_s, x


def test_zero_innovation_keeps_zero_estimate():
    params = QuadParams()
    gains = ObserverGains.from_bandwidth(8.0, params.mass)
    dt = 0.01
    x = np.array([0, 0, 1, 0.5, -0.2, 0.1, 0.1, -0.05, 0.3])
    u = np.array([10.5, 0.2, -0.1, 0.05])
    s = ObserverState(v_hat=x[3:6].copy())
    for _ in range(300):
        R = rotation(*x[6:9])
        s = observer_step(s, x[3:6], R, u[0], x[3:6], dt, gains, params)
        x = step_euler(x, u, np.zeros(3), dt, params)
        assert np.allclose(s.z1, 0.0, atol=1e-12)
        assert np.allclose(s.v_hat, x[3:6], atol=1e-12)


def test_constant_force_converges():
    F = np.array([2.0, 0.0, 0.0])
    t, truth, est, _, _ = run(lambda s: F, 4.0)
    assert np.abs(est[t >= 3.0] - truth[t >= 3.0]).max() < 0.05


def test_published_estimate_converges():
    F = np.array([2.0, -1.0, 0.5])
    t, truth, est, _, _ = run(lambda s: F, 4.0, filtered=True)
    assert np.linalg.norm(est[t >= 3.0] - truth[t >= 3.0], axis=1).max() < 0.05


def test_ramp_tracked():
    t, truth, est, _, _ = run(lambda s: np.array([0.5 * s, 0.0, 0.0]), 6.0)
    assert np.abs(est[t >= 5.0] - truth[t >= 5.0]).max() < 0.02


def test_error_linear_in_disturbance():
    F = np.array([1.0, -0.5, 0.25])
    _, truth1, est1, _, _ = run(lambda s: F, 2.0)
    _, truth2, est2, _, _ = run(lambda s: 2 * F, 2.0)
    e1, e2 = est1 - truth1, est2 - truth2
    assert np.abs(e2 - 2 * e1).max() <= 1e-9 * np.abs(e2).max()


def test_error_decays_to_one_percent():
    params = QuadParams()
    F = np.array([1.5, 1.0, -0.5])
    _, _, _, states, x = run(lambda s: F, 5.0, params=params)
    s = states[-1]
    # Velocity error uses the vehicle state at the last observer update.
    err_end = np.concatenate([s.z1 - F, s.z2])
    err_start = np.concatenate([np.zeros(3) - F, np.zeros(3)])
    assert np.linalg.norm(err_end) < 0.01 * np.linalg.norm(err_start)


def test_bandwidth_gains_place_triple_pole():
    for m in (0.5, 1.0, 2.3):
        eig = np.linalg.eigvals(ObserverGains.from_bandwidth(8.0, m).error_matrix(m))
        assert np.allclose(eig.real, -8.0, atol=1e-3)


def test_non_hurwitz_rejected():
    bad = ObserverGains(np.eye(3), -np.eye(3), np.eye(3))
    with pytest.raises(ObserverError, match="Hurwitz"):
        bad.validate(1.0)
    with pytest.raises(ObserverError):
        DisturbanceObserver(QuadParams(), ObserverConfig(gains=bad))
    with pytest.raises(ObserverError):
        ObserverGains.from_bandwidth(-1.0)


def test_non_finite_rejected():
    params = QuadParams()
    gains = ObserverGains.from_bandwidth()
    with pytest.raises(ObserverError):
        observer_step(ObserverState(), [np.nan, 0, 0], np.eye(3), 9.81, np.zeros(3), 0.01, gains, params)
    with pytest.raises(ObserverError):
        observer_step(ObserverState(), np.zeros(3), np.eye(3), 9.81, np.zeros(3), 0.0, gains, params)


def test_deterministic():
    F = np.array([0.7, 0.1, 0.0])
    a = run(lambda s: F, 1.0)[2]
    b = run(lambda s: F, 1.0)[2]
    assert np.array_equal(a, b)


def test_spread_reflects_fluctuation():
    params = QuadParams()
    rng = np.random.default_rng(0)
    steady = DisturbanceObserver(params)
    noisy = DisturbanceObserver(params)
    for obs, sigma in ((steady, 0.0), (noisy, 1.0)):
        x = np.zeros(9)
        v = np.zeros(3)
        for k in range(500):
            f = np.array([1.0 + sigma * np.sin(0.9 * k * 0.01) * 2, 0, 0]) + sigma * rng.normal(0, 0.1, 3)
            x[3:6] = v
            obs.update(k * 0.01, x, params.hover_thrust, 0.01)
            v = v + 0.01 * (f - params.drag @ v) / params.mass
    assert noisy.estimate().spread[0] > steady.estimate().spread[0] + 0.1
