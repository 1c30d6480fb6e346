import json

import numpy as np
import pytest

from quadsafe.config import apply_overrides, load_scenario, resolve_scenario
from quadsafe.reach import DisturbanceEstimate
from quadsafe.sim import (
    DynamicObstacle,
    WindModel,
    WindStream,
    obstacle_position,
    obstacle_state,
    run_episode,
    snapshot,
    wind_force,
)
from quadsafe.sim import episode as episode_mod


@pytest.fixture(scope="module")
def benign():
    return load_scenario(resolve_scenario("benign"))


@pytest.fixture(scope="module")
def benign_run(benign):
    return run_episode(benign, seed=0)


# --- wind ---------------------------------------------------------------------

def test_no_wind_is_zero():
    m = WindModel("none")
    assert all(np.array_equal(wind_force(m, t), np.zeros(3)) for t in (0.0, 1.0, 123.4))


def test_constant_wind_maps_speed_to_force():
    m = WindModel("constant", mean=(0.0, 5.0, 0.0), coefficient=1.0)
    for t in (0.0, 7.3):
        np.testing.assert_array_equal(wind_force(m, t), [0.0, 5.0, 0.0])
    m2 = WindModel("constant", mean=(0.0, 5.0, 0.0), coefficient=0.4)
    np.testing.assert_allclose(wind_force(m2, 0.0), [0.0, 2.0, 0.0])


def test_gusty_speed_statistics():
    m = WindModel("gusty", mean=(0.0, 5.0, 0.0), variance=1.0, correlation_time=0.05)
    s = WindStream(m, np.random.default_rng(0), dt=0.01).speeds(100_000)
    # correlation time 0.05 s gives ~5e4 effective samples: standard errors 0.0045 and 0.0063
    assert abs(s.mean() - 5.0) < 0.05
    assert abs(s.var() - 1.0) < 0.1


def test_gusty_stationary_variance_matches_ou():
    # exact discretization: lag-one correlation exp(-dt/tau)
    m = WindModel("gusty", mean=(1.0, 0.0, 0.0), variance=2.0, correlation_time=0.5)
    s = WindStream(m, np.random.default_rng(3), dt=0.01).speeds(200_000) - 1.0
    rho = np.dot(s[:-1], s[1:]) / np.dot(s, s)
    assert rho == pytest.approx(np.exp(-0.02), abs=2e-3)


def test_gusty_force_direction_and_determinism():
    m = WindModel("gusty", mean=(3.0, 4.0, 0.0), variance=1.0, coefficient=2.0)
    a = WindStream(m, np.random.default_rng(5))
    b = WindStream(m, np.random.default_rng(5))
    ts = np.linspace(0, 10, 57)
    fa = np.array([wind_force(m, t, a) for t in ts])
    fb = np.array([wind_force(m, t, b) for t in reversed(ts)])[::-1]
    np.testing.assert_array_equal(fa, fb)
    cross = fa[:, 0] * 4.0 - fa[:, 1] * 3.0
    np.testing.assert_allclose(cross, 0.0, atol=1e-12)
    assert np.array_equal(wind_force(m, 2.0, a), 2.0 * a.speed(2.0) * np.array([0.6, 0.8, 0.0]))


@pytest.mark.parametrize("kwargs", [
    {"kind": "breezy"},
    {"kind": "constant", "variance": -1.0},
    {"kind": "constant", "coefficient": 0.0},
    {"kind": "gusty", "mean": (0.0, 0.0, 0.0)},
    {"kind": "gusty", "mean": (1.0, 0.0, 0.0), "correlation_time": 0.0},
])
def test_wind_model_validation(kwargs):
    with pytest.raises(ValueError):
        WindModel(**kwargs)


def test_gusty_needs_stream():
    with pytest.raises(ValueError):
        wind_force(WindModel("gusty", mean=(1.0, 0.0, 0.0)), 0.0)


# --- obstacles ----------------------------------------------------------------

def test_constant_velocity_obstacle():
    ob = DynamicObstacle(position=(1.0, 2.0, 1.5), velocity=(0.8, 0.0, 0.0))
    np.testing.assert_allclose(obstacle_position(ob, 2.0), [2.6, 2.0, 1.5])


@pytest.fixture
def shuttle():
    return DynamicObstacle(position=(0.0, 0.0, 1.0), velocity=(0.8, 0.0, 0.0), radius=0.3,
                           pattern="back_and_forth", endpoints=((0.0, 0.0, 1.0), (4.0, 0.0, 1.0)))


def test_back_and_forth_period(shuttle):
    np.testing.assert_allclose(obstacle_position(shuttle, 5.0), [4.0, 0.0, 1.0], atol=1e-12)
    for t in (0.0, 1.3, 2.7, 6.1):
        np.testing.assert_allclose(obstacle_position(shuttle, t + 10.0), obstacle_position(shuttle, t), atol=1e-12)
    np.testing.assert_allclose(obstacle_position(shuttle, 7.5), [2.0, 0.0, 1.0], atol=1e-12)


def test_back_and_forth_velocity_flips_at_endpoints(shuttle):
    eps = 1e-6
    _, before = obstacle_state(shuttle, 5.0 - eps)
    _, after = obstacle_state(shuttle, 5.0 + eps)
    np.testing.assert_allclose(before, [0.8, 0.0, 0.0])
    np.testing.assert_allclose(after, [-0.8, 0.0, 0.0])
    _, v = obstacle_state(shuttle, 10.0 + eps)
    np.testing.assert_allclose(v, [0.8, 0.0, 0.0])


def test_back_and_forth_stays_on_segment(shuttle):
    xs = np.array([obstacle_position(shuttle, t)[0] for t in np.linspace(0, 30, 301)])
    assert xs.min() >= -1e-12 and xs.max() <= 4.0 + 1e-12


def test_back_and_forth_starting_backwards():
    ob = DynamicObstacle(position=(1.0, 0.0, 1.0), velocity=(-0.5, 0.0, 0.0),
                         pattern="back_and_forth", endpoints=((0.0, 0.0, 1.0), (4.0, 0.0, 1.0)))
    np.testing.assert_allclose(obstacle_position(ob, 1.0), [0.5, 0.0, 1.0])
    np.testing.assert_allclose(obstacle_position(ob, 3.0), [0.5, 0.0, 1.0])


@pytest.mark.parametrize("kwargs", [
    {"radius": 0.0},
    {"pattern": "zigzag"},
    {"pattern": "back_and_forth"},
    {"pattern": "back_and_forth", "endpoints": ((1, 1, 1), (1, 1, 1))},
])
def test_obstacle_validation(kwargs):
    with pytest.raises(ValueError):
        DynamicObstacle(position=(0, 0, 0), velocity=(1, 0, 0), **kwargs)


def test_snapshot_prediction_matches_truth_for_constant_velocity():
    ob = DynamicObstacle(position=(5.0, -1.0, 1.5), velocity=(-0.7, 0.4, 0.1))
    snap = snapshot(ob, 1.25, horizon=3.0)
    ts = np.linspace(1.25, 4.25, 13)
    pred, valid = snap.predict(ts)
    assert valid.all()
    truth = np.array([obstacle_position(ob, t) for t in ts])
    assert np.max(np.abs(pred - truth)) < 1e-9


# --- episodes -----------------------------------------------------------------

def test_benign_episode_tracks_closely(benign_run):
    _, m = benign_run
    assert m.success and m.outcome == "success"
    assert m.tracking_rmse < 0.05
    assert m.tracking_min <= m.tracking_avg <= m.tracking_max
    assert m.final_distance < 0.3


def test_episode_is_bit_reproducible(benign, benign_run):
    log, _ = benign_run
    again, _ = run_episode(benign, seed=0)
    assert again.files() == log.files()
    assert again.digest() == log.digest()


def test_gusty_episode_is_bit_reproducible(benign):
    s = apply_overrides(benign, {"wind.kind": "gusty", "wind.mean": [0.0, 2.0, 0.0], "sim.max_time": 4.0})
    a, _ = run_episode(s, seed=7)
    b, _ = run_episode(s, seed=7)
    c, _ = run_episode(s, seed=8)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_log_files_written(benign, tmp_path):
    s = apply_overrides(benign, {"sim.max_time": 2.0})
    log, m = run_episode(s, seed=1, out_dir=tmp_path)
    names = {"state.csv", "control.csv", "estimate.csv", "plans.jsonl", "metrics.json", "timing.json"}
    assert names <= {p.name for p in tmp_path.iterdir()}
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["outcome"] == m.outcome
    rows = (tmp_path / "state.csv").read_text().splitlines()
    assert rows[0].startswith("t,px,py,pz")
    assert len(rows) - 1 == len(log.state)


class _ZeroOutputObserver(episode_mod.DisturbanceObserver):
    def update(self, t, x_meas, thrust, dt):
        super().update(t, x_meas, thrust, dt)
        return DisturbanceEstimate(stamp=t)


def test_observer_with_zero_output_matches_observer_off(benign, monkeypatch):
    s = apply_overrides(benign, {"sim.max_time": 6.0})
    off, _ = run_episode(s, seed=2, observer=False)
    monkeypatch.setattr(episode_mod, "DisturbanceObserver", _ZeroOutputObserver)
    on, _ = run_episode(s, seed=2, observer=True)
    assert on.state == off.state
    assert on.control == off.control
    assert on.plans == off.plans
