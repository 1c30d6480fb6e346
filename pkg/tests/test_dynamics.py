import numpy as np
import pytest
from scipy.integrate import solve_ivp

from quadsafe.dynamics import (
    DynamicsError, FeedbackGain, QuadParams, SingularityError, derivative, jacobians, linearize,
    rotation, step_euler, step_rk4, flat_state,
)


def hover(params):
    return np.zeros(9), np.array([params.hover_thrust, 0.0, 0.0, 0.0])


def random_state(rng):
    x = np.concatenate([rng.uniform(-5, 5, 3), rng.uniform(-3, 3, 3), rng.uniform(-0.6, 0.6, 3)])
    u = np.array([rng.uniform(3, 15), *rng.uniform(-1, 1, 3)])
    return x, u


def test_hover_is_equilibrium():
    params = QuadParams()
    x, u = hover(params)
    assert np.allclose(derivative(x, u, np.zeros(3), params), 0.0, atol=1e-14)


def test_level_disturbance_accelerates_along_force():
    params = QuadParams(mass=1.0, drag=np.zeros(3), gravity=9.81)
    xdot = derivative(np.zeros(9), np.array([9.81, 0, 0, 0]), np.array([1.0, 0, 0]), params)
    assert np.allclose(xdot[3:6], [1.0, 0.0, 0.0], atol=1e-14)


def test_level_drag_opposes_velocity():
    params = QuadParams(mass=1.0, drag=np.full(3, 0.3))
    x = np.zeros(9)
    x[3] = 1.0
    xdot = derivative(x, np.array([9.81, 0, 0, 0]), np.zeros(3), params)
    assert np.allclose(xdot[3:6], [-0.3, 0.0, 0.0], atol=1e-14)


def test_rates_pass_through():
    params = QuadParams()
    x, u = hover(params)
    u[1:] = [0.1, -0.2, 0.3]
    assert np.allclose(derivative(x, u, np.zeros(3), params)[6:], [0.1, -0.2, 0.3])


def test_rotation_is_zyx():
    # Independent construction from elementary rotations.
    r, p, y = 0.3, -0.2, 1.1
    Rx = np.array([[1, 0, 0], [0, np.cos(r), -np.sin(r)], [0, np.sin(r), np.cos(r)]])
    Ry = np.array([[np.cos(p), 0, np.sin(p)], [0, 1, 0], [-np.sin(p), 0, np.cos(p)]])
    Rz = np.array([[np.cos(y), -np.sin(y), 0], [np.sin(y), np.cos(y), 0], [0, 0, 1]])
    assert np.allclose(rotation(r, p, y), Rz @ Ry @ Rx, atol=1e-15)


def test_nonfinite_rejected():
    params = QuadParams()
    x, u = hover(params)
    x[0] = np.nan
    with pytest.raises(DynamicsError):
        derivative(x, u, np.zeros(3), params)
    with pytest.raises(DynamicsError):
        derivative(np.zeros(9), u, np.array([np.inf, 0, 0]), params)


def test_singularity_guard():
    params = QuadParams()
    x, u = hover(params)
    x[7] = np.deg2rad(86.0)
    with pytest.raises(SingularityError):
        derivative(x, u, np.zeros(3), params)
    with pytest.raises(SingularityError):
        jacobians(x, u, params)


@pytest.mark.parametrize("kwargs", [
    {"mass": 0.0}, {"drag": np.diag([0.1, -0.2, 0.1])}, {"thrust_min": 5.0, "thrust_max": 1.0},
    {"drag": np.array([[0.1, 0.05, 0], [0, 0.1, 0], [0, 0, 0.1]])},
])
def test_params_invariants(kwargs):
    with pytest.raises(ValueError):
        QuadParams(**kwargs)


def test_euler_hover_unchanged():
    params = QuadParams()
    x, u = hover(params)
    for dt in (0.001, 0.1, 1.0):
        assert np.allclose(step_euler(x, u, np.zeros(3), dt, params), x, atol=1e-14)


def test_euler_free_fall():
    params = QuadParams()
    x1 = step_euler(np.zeros(9), np.zeros(4), np.zeros(3), 0.01, params)
    assert x1[5] == pytest.approx(-0.0981, abs=1e-12)


def test_euler_rejects_bad_dt():
    params = QuadParams()
    with pytest.raises(ValueError):
        step_euler(np.zeros(9), np.zeros(4), np.zeros(3), 0.0, params)


def test_euler_local_error_is_second_order():
    params = QuadParams()
    rng = np.random.default_rng(3)
    x, u = random_state(rng)
    f = rng.normal(size=3)

    def exact(dt):
        sol = solve_ivp(lambda t, y: derivative(y, u, f, params), (0, dt), x, method="DOP853",
                        rtol=1e-12, atol=1e-12)
        return sol.y[:, -1]

    errs = [np.linalg.norm(step_euler(x, u, f, dt, params) - exact(dt)) for dt in (0.02, 0.01, 0.005)]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.1)


def test_rk4_matches_reference_integrator():
    params = QuadParams()
    rng = np.random.default_rng(4)
    x, u = random_state(rng)
    sol = solve_ivp(lambda t, y: derivative(y, u, np.zeros(3), params), (0, 0.01), x, rtol=1e-12, atol=1e-12,
                    method="DOP853")
    assert np.allclose(step_rk4(x, u, np.zeros(3), 0.01, params), sol.y[:, -1], atol=1e-10)


def test_euler_deterministic():
    params = QuadParams()
    x, u = random_state(np.random.default_rng(5))
    a = step_euler(x, u, np.ones(3), 0.01, params)
    b = step_euler(x.copy(), u.copy(), np.ones(3), 0.01, params)
    assert np.array_equal(a, b)


def test_linear_in_disturbance():
    params = QuadParams()
    rng = np.random.default_rng(6)
    for _ in range(20):
        x, u = random_state(rng)
        f = rng.normal(size=3)
        base = derivative(x, u, np.zeros(3), params)
        one = derivative(x, u, f, params) - base
        for alpha in (-3.0, 0.5, 7.0):
            assert np.allclose(derivative(x, u, alpha * f, params) - base, alpha * one, atol=1e-12)


def test_no_drag_matches_drag_free_model():
    params = QuadParams(drag=np.zeros(3))
    rng = np.random.default_rng(7)
    x, u = random_state(rng)
    R = rotation(*x[6:9])
    expected = R[:, 2] * u[0] / params.mass - np.array([0, 0, params.gravity])
    assert np.allclose(derivative(x, u, np.zeros(3), params)[3:6], expected, atol=1e-13)


def test_linearize_blocks():
    params = QuadParams(mass=1.7)
    x, u = random_state(np.random.default_rng(8))
    K = FeedbackGain.at_hover(params)
    lin = linearize(x, u, np.zeros(3), params, K)
    assert np.allclose(lin.A[0:3, 3:6], np.eye(3))
    assert np.allclose(lin.D[3:6], np.eye(3) / 1.7)
    assert np.allclose(lin.D[[0, 1, 2, 6, 7, 8]], 0.0)
    assert np.allclose(lin.Phi, lin.A + lin.B @ K)


def test_jacobians_match_finite_differences():
    params = QuadParams()
    rng = np.random.default_rng(9)
    h = 1e-6
    worst = 0.0
    for _ in range(100):
        x, u = random_state(rng)
        A, B, _ = jacobians(x, u, params)
        fd_A = np.column_stack([(derivative(x + h * e, u, np.zeros(3), params)
                                 - derivative(x - h * e, u, np.zeros(3), params)) / (2 * h) for e in np.eye(9)])
        fd_B = np.column_stack([(derivative(x, u + h * e, np.zeros(3), params)
                                 - derivative(x, u - h * e, np.zeros(3), params)) / (2 * h) for e in np.eye(4)])
        for an, fd in ((A, fd_A), (B, fd_B)):
            worst = max(worst, np.abs(an - fd).max() / max(1.0, np.abs(fd).max()))
    assert worst < 1e-5


def test_hover_gain_stabilizes():
    params = QuadParams()
    x, u = hover(params)
    lin = linearize(x, u, np.zeros(3), params, FeedbackGain.at_hover(params))
    assert np.linalg.eigvals(lin.Phi).real.max() < 0


def test_gain_cache_recomputes_only_on_move():
    params = QuadParams()
    gain = FeedbackGain(params, threshold=0.05)
    x, u = hover(params)
    gain(x, u)
    x2 = x.copy()
    x2[0] = 10.0  # position does not enter A or B
    gain(x2, u)
    assert gain.recomputations == 1
    x2[6] = 0.2
    gain(x2, u)
    assert gain.recomputations == 2


def test_flat_state_reproduces_acceleration():
    params = QuadParams()
    acc = np.array([1.0, -0.5, 0.3])
    vel = np.array([0.5, 0.2, 0.0])
    f = np.array([0.4, 0.1, 0.0])
    x, thrust = flat_state(np.zeros(3), vel, acc, 0.4, params, f_dist=f)
    xdot = derivative(x, np.array([thrust, 0, 0, 0]), f, params)
    assert np.allclose(xdot[3:6], acc, atol=1e-2)
    x0, thrust0 = flat_state(np.zeros(3), np.zeros(3), acc, 0.4, params, f_dist=f)
    xdot0 = derivative(x0, np.array([thrust0, 0, 0, 0]), f, params)
    assert np.allclose(xdot0[3:6], acc, atol=1e-12)
