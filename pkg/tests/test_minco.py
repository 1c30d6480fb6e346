import numpy as np
import pytest
from scipy.integrate import simpson

from quadsafe.minco import (
    basis,
    Boundary, MincoTrajectory, TrajectoryError, constraint_points, construct, dtime_dtau, sample_count,
    tau_from_time, time_from_tau, trapezoid_weights,
)


def random_traj(rng, M=5):
    q = np.cumsum(rng.uniform(0.5, 1.5, (M - 1, 3)), axis=0)
    T = rng.uniform(0.5, 2.0, M)
    b = Boundary.from_states(np.zeros(3), rng.normal(size=3), rng.normal(size=3),
                             q[-1] + 1.0, rng.normal(size=3), rng.normal(size=3))
    return construct(q, T, b)


def hermite_quintic(p0, v0, a0, p1, v1, a1, T):
    # Solve the 6x6 boundary system directly, one axis at a time.
    rows = np.array([
        [1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0],
        [1, T, T**2, T**3, T**4, T**5], [0, 1, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
        [0, 0, 2, 6 * T, 12 * T**2, 20 * T**3],
    ])
    return np.linalg.solve(rows, np.stack([p0, v0, a0, p1, v1, a1]))


def test_rest_to_same_point_is_constant():
    traj = construct(np.zeros((0, 3)), [2.0], Boundary.rest([1, 2, 3], [1, 2, 3]))
    assert np.allclose(traj.coeffs[0, 0], [1, 2, 3])
    assert np.allclose(traj.coeffs[0, 1:], 0.0, atol=1e-12)
    for order in (1, 2, 3):
        assert np.allclose(traj.evaluate(0.7, order), 0.0, atol=1e-12)


def test_single_quintic_monomial():
    # Boundary data of p(t) = (t^5, 0, 0) over [0, 1].
    b = Boundary.from_states(np.zeros(3), np.zeros(3), np.zeros(3), [1, 0, 0], [5, 0, 0], [20, 0, 0])
    traj = construct(np.zeros((0, 3)), [1.0], b)
    assert np.allclose(traj.coeffs[0, :, 0], [0, 0, 0, 0, 0, 1], atol=1e-12)
    assert np.allclose(traj.evaluate(1.0, 2), [20.0, 0.0, 0.0])


def test_single_piece_matches_hermite():
    rng = np.random.default_rng(0)
    p0, v0, a0, p1, v1, a1 = rng.normal(size=(6, 3))
    T = 1.7
    traj = construct(np.zeros((0, 3)), [T], Boundary.from_states(p0, v0, a0, p1, v1, a1))
    assert np.allclose(traj.coeffs[0], hermite_quintic(p0, v0, a0, p1, v1, a1, T), atol=1e-10)


def test_interpolation_and_continuity():
    rng = np.random.default_rng(1)
    for _ in range(10):
        traj = random_traj(rng)
        ends = np.cumsum(traj.T)[:-1]
        for j, t in enumerate(ends):
            left, right = traj.coeffs[j], traj.coeffs[j + 1]
            assert np.abs(basis(traj.T[j]) @ left - traj.q[j]).max() < 1e-9
            for d in range(5):
                jump = basis(traj.T[j], d) @ left - basis(0.0, d) @ right
                assert np.abs(jump).max() < 1e-8


def test_boundary_conditions_hold():
    rng = np.random.default_rng(2)
    traj = random_traj(rng)
    b = traj.boundary
    for d in range(3):
        assert np.allclose(traj.evaluate(0.0, d), b.start[d], atol=1e-9)
        assert np.allclose(traj.evaluate(traj.duration, d), b.end[d], atol=1e-9)


@pytest.mark.parametrize("T", [[1.0, 0.0], [1.0, -1.0], [np.inf], []])
def test_bad_durations_rejected(T):
    with pytest.raises(TrajectoryError):
        MincoTrajectory(np.zeros((max(len(T) - 1, 0), 3)), T, Boundary.rest(np.zeros(3), np.ones(3)))


def test_waypoint_count_checked():
    with pytest.raises(TrajectoryError):
        construct(np.zeros((2, 3)), [1.0, 1.0], Boundary.rest(np.zeros(3), np.ones(3)))


def test_evaluate_range_and_order():
    traj = random_traj(np.random.default_rng(3))
    with pytest.raises(TrajectoryError):
        traj.evaluate(traj.duration + 0.1)
    with pytest.raises(TrajectoryError):
        traj.evaluate(-0.1)
    with pytest.raises(TrajectoryError):
        traj.evaluate(0.5, 5)


def test_velocity_matches_finite_difference():
    traj = random_traj(np.random.default_rng(4))
    h = 1e-6
    for t in np.linspace(0.1, traj.duration - 0.1, 37):
        fd = (traj.evaluate(t + h) - traj.evaluate(t - h)) / (2 * h)
        v = traj.evaluate(t, 1)
        assert np.linalg.norm(fd - v) / max(1.0, np.linalg.norm(v)) < 1e-6


def test_constraint_point_times():
    traj = construct(np.zeros((0, 3)), [1.0], Boundary.rest(np.zeros(3), np.ones(3)))
    pts = constraint_points(traj, 0.25)
    assert [p.time for p in pts] == pytest.approx([0, 0.25, 0.5, 0.75, 1.0])
    assert sample_count(1.0, 0.25) == 4


def test_junction_belongs_to_later_piece():
    traj = construct([[1.0, 0, 0]], [0.5, 0.5], Boundary.rest(np.zeros(3), [2.0, 0, 0]))
    pts = constraint_points(traj, 0.25)
    at_junction = [p for p in pts if p.time == pytest.approx(0.5)][0]
    assert at_junction.piece == 1 and at_junction.local_time == pytest.approx(0.0)
    assert pts[-1].piece == 1 and pts[-1].local_time == pytest.approx(0.5)


def test_tail_span():
    w, tail = trapezoid_weights(1.0, 0.3)
    assert sample_count(1.0, 0.3) == 3
    assert len(w) == 4
    assert tail == pytest.approx(0.1)
    assert w.sum() + tail == pytest.approx(1.0)


def test_linear_in_waypoints():
    rng = np.random.default_rng(5)
    T = rng.uniform(0.5, 2, 4)
    b = Boundary.rest(np.zeros(3), np.ones(3))
    q1, q2 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    c1, c2 = construct(q1, T, b).coeffs, construct(q2, T, b).coeffs
    for alpha in (0.3, -1.2):
        c = construct(alpha * q1 + (1 - alpha) * q2, T, b).coeffs
        assert np.allclose(c, alpha * c1 + (1 - alpha) * c2, atol=1e-10)


def test_smoothness_cost_matches_simpson():
    traj = random_traj(np.random.default_rng(6))
    total = 0.0
    for j in range(traj.pieces):
        t = np.linspace(0, traj.T[j], 2001)
        jerk = basis(t, 3) @ traj.coeffs[j]
        total += simpson((jerk**2).sum(axis=1), x=t)
    assert traj.smoothness_cost() == pytest.approx(total, rel=1e-6)


def test_zero_coefficient_gradient():
    traj = random_traj(np.random.default_rng(7))
    gq, gT = traj.backward_gradients(np.zeros((traj.pieces, 6, 3)), np.zeros(traj.pieces))
    assert np.allclose(gq, 0) and np.allclose(gT, 0)


def test_gradient_shape_mismatch_rejected():
    traj = random_traj(np.random.default_rng(8))
    with pytest.raises(TrajectoryError):
        traj.backward_gradients(np.zeros((2, 6, 3)), np.zeros(traj.pieces))
    with pytest.raises(TrajectoryError):
        traj.backward_gradients(np.zeros((traj.pieces, 6, 3)), np.zeros(1))


def test_smoothness_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    traj = random_traj(rng)
    gq, gT = traj.backward_gradients(*traj.smoothness_gradients())

    def cost(q, T):
        return construct(q, T, traj.boundary).smoothness_cost()

    h = 1e-6
    fd_q = np.zeros_like(traj.q)
    for idx in np.ndindex(traj.q.shape):
        dq = np.zeros_like(traj.q)
        dq[idx] = h
        fd_q[idx] = (cost(traj.q + dq, traj.T) - cost(traj.q - dq, traj.T)) / (2 * h)
    fd_T = np.array([(cost(traj.q, traj.T + h * e) - cost(traj.q, traj.T - h * e)) / (2 * h)
                     for e in np.eye(traj.pieces)])
    scale = max(1.0, np.abs(fd_q).max(), np.abs(fd_T).max())
    assert np.abs(gq - fd_q).max() / scale < 1e-4
    assert np.abs(gT - fd_T).max() / scale < 1e-4


def test_time_bijection():
    tau = np.linspace(-5, 5, 101)
    T = time_from_tau(tau)
    assert np.all(T > 0) and np.all(np.diff(T) > 0)
    assert np.allclose(tau_from_time(T), tau, atol=1e-9)
    h = 1e-6
    assert np.allclose(dtime_dtau(tau), (time_from_tau(tau + h) - time_from_tau(tau - h)) / (2 * h), atol=1e-6)


def test_csv_export(tmp_path):
    traj = random_traj(np.random.default_rng(10))
    path = tmp_path / "traj.csv"
    traj.to_csv(path, rate=20.0)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,px,py,pz,vx,vy,vz,ax,ay,az"
    assert len(lines) - 1 == int(np.floor(traj.duration * 20 + 1e-9)) + 1
