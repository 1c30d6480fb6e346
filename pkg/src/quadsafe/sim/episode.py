"""One closed-loop episode: plant, observer, tracking controller and event-driven replanning."""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import _kernels
from ..config import (
    Scenario,
    build_frs,
    build_map,
    build_nmpc,
    build_obstacles,
    build_observer,
    build_params,
    build_weights,
    build_wind,
)
from ..dynamics import NX, TILT_GUARD
from ..minco import Boundary, MincoTrajectory, TrajectoryError
from ..nmpc import FlatnessError, NmpcTracker, hover_reference, reference_from_trajectory
from ..observer import DisturbanceObserver
from ..planner import Planner, PlanningError, check_replan
from ..planner.penalties import ObstaclePrediction
from ..reach import DisturbanceEstimate, FrsResult
from .world import WindStream, obstacle_state, snapshot, wind_force

STATE_HEADER = ["t", "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw",
                "ref_px", "ref_py", "ref_pz", "wind_fx", "wind_fy", "wind_fz"]
CONTROL_HEADER = ["t", "thrust", "roll_rate", "pitch_rate", "yaw_rate",
                  "fhat_x", "fhat_y", "fhat_z", "iterations", "converged", "state_clamped"]
ESTIMATE_HEADER = ["t", "z1_x", "z1_y", "z1_z", "z2_x", "z2_y", "z2_z", "true_x", "true_y", "true_z"]


def _fmt(values) -> str:
    return ",".join(f"{v:.6f}" for v in values)


@dataclass
class PlanRecord:
    """A trajectory that became (or was scheduled to become) active."""

    requested: float  # world time the planner was invoked
    start_time: float  # world time of trajectory t = 0
    reason: str
    trajectory: MincoTrajectory
    frs: FrsResult
    predictions: tuple[ObstaclePrediction, ...]


@dataclass
class EpisodeMetrics:
    success: bool
    outcome: str  # success | collision | planning_failure | timeout
    min_clearance: float  # smallest gap between the vehicle envelope and any obstacle (m)
    min_obstacle_distance: float  # smallest center distance to a moving obstacle (m)
    tracking_avg: float
    tracking_min: float
    tracking_max: float
    tracking_rmse: float
    replan_count: int
    plan_failures: int
    flight_time: float
    final_distance: float

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float):
                return None if not np.isfinite(v) else round(v, 6)
            return v

        return json.dumps({k: clean(v) for k, v in asdict(self).items()}, indent=2, sort_keys=True)


@dataclass
class EpisodeLog:
    """Deterministic record of one run; wall-clock timing is kept apart in ``timing``."""

    state: list[str] = field(default_factory=list)
    control: list[str] = field(default_factory=list)
    estimate: list[str] = field(default_factory=list)
    plans: list[str] = field(default_factory=list)
    records: list[PlanRecord] = field(default_factory=list)
    timing: dict = field(default_factory=lambda: {"nmpc": [], "planner": []})
    metrics: EpisodeMetrics | None = None

    def files(self) -> dict[str, str]:
        """Deterministic output files by name."""
        out = {
            "state.csv": "\n".join([",".join(STATE_HEADER)] + self.state) + "\n",
            "control.csv": "\n".join([",".join(CONTROL_HEADER)] + self.control) + "\n",
            "estimate.csv": "\n".join([",".join(ESTIMATE_HEADER)] + self.estimate) + "\n",
            "plans.jsonl": "".join(line + "\n" for line in self.plans),
        }
        if self.metrics is not None:
            out["metrics.json"] = self.metrics.to_json() + "\n"
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, text in sorted(self.files().items()):
            h.update(name.encode())
            h.update(text.encode())
        return h.hexdigest()

    def timing_summary(self) -> dict:
        def stats(xs):
            if not xs:
                return {"count": 0}
            a = np.asarray(xs)
            return {"count": len(a), "mean_ms": 1e3 * a.mean(), "max_ms": 1e3 * a.max()}

        return {k: stats(v) for k, v in self.timing.items()}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files().items():
            (out / name).write_text(text)
        (out / "timing.json").write_text(json.dumps(self.timing_summary(), indent=2) + "\n")
        return out


class _Context:
    """Runtime objects built once from a scenario."""

    def __init__(self, scenario: Scenario):
        s = scenario
        self.s = s
        self.params = build_params(s)
        self.weights = build_weights(s)
        self.frs_cfg = build_frs(s)
        self.nmpc_cfg = build_nmpc(s)
        self.observer_cfg = build_observer(s)
        self.grid, self.esdf = build_map(s)
        self.wind = build_wind(s)
        self.obstacles = build_obstacles(s)


def reference_trajectory(s: Scenario) -> MincoTrajectory:
    """Fixed tracking trajectory of a tracking-only scenario (laps joined at the start point)."""
    r = s.reference
    start = np.asarray(s.mission.start, dtype=float)
    lap = [np.asarray(w, dtype=float) for w in r.waypoints]
    waypoints = (lap + [start]) * r.laps
    waypoints = waypoints[:-1]
    durations = list(r.durations) * r.laps
    return MincoTrajectory(np.array(waypoints), np.array(durations), Boundary.rest(start, start))


def run_episode(scenario: Scenario, seed: int | None = None, out_dir=None,
                frs: bool | None = None, observer: bool | None = None) -> tuple[EpisodeLog, EpisodeMetrics]:
    """Simulate one episode.

    Args:
        scenario: Validated scenario.
        seed: Overrides ``scenario.seed``; all randomness derives from it.
        out_dir: When given, logs and metrics are written there.
        frs: Overrides ``scenario.sim.frs``.
        observer: Overrides ``scenario.sim.observer``.

    Returns:
        The episode log and its metrics. Planning failures are reported through
        ``metrics.outcome`` rather than raised.
    """
    s = scenario.with_flags(frs=frs, observer=observer)
    seed = s.seed if seed is None else int(seed)
    ctx = _Context(s)
    params, sim = ctx.params, s.sim
    wind_seq, noise_seq = np.random.SeedSequence(seed).spawn(2)
    wind_stream = WindStream(ctx.wind, np.random.default_rng(wind_seq), dt=1.0 / sim.control_rate)
    noise_rng = np.random.default_rng(noise_seq)

    dt = 1.0 / sim.control_rate
    n_sub = int(round(sim.plant_rate / sim.control_rate))
    dt_plant = 1.0 / sim.plant_rate
    yaw = s.mission.yaw
    start = np.asarray(s.mission.start, dtype=float)
    goal = np.asarray(s.mission.goal, dtype=float)
    arena_lo, arena_hi = np.asarray(s.map.lower), np.asarray(s.map.upper)

    planner = Planner(params, ctx.weights, ctx.frs_cfg, use_frs=sim.frs)
    tracker = NmpcTracker(ctx.nmpc_cfg, params)
    obs = DisturbanceObserver(params, ctx.observer_cfg)
    log = EpisodeLog()

    x = np.zeros(NX)
    x[0:3] = start
    x[8] = yaw
    obs.reset(x[3:6])
    u_prev = np.array([params.hover_thrust, 0.0, 0.0, 0.0])

    active: PlanRecord | None = None
    pending: PlanRecord | None = None
    if s.tracking_only:
        traj = reference_trajectory(s)
        active = PlanRecord(0.0, sim.warmup, "reference", traj, FrsResult(np.zeros(0), np.zeros((0, 3, 3)), np.zeros(0)), ())
        log.records.append(active)
    next_check = sim.warmup
    track_err: list[float] = []
    min_clear = np.inf
    min_obs = np.inf
    replans = failures = 0
    outcome = "timeout"
    steps = int(np.floor(sim.max_time / dt + 1e-9))

    def plan(now: float, reason: str, boundary: Boundary, est: DisturbanceEstimate) -> PlanRecord | None:
        nonlocal failures
        preds = tuple(snapshot(ob, now, ctx.weights.prediction_horizon) for ob in ctx.obstacles)
        anchor = now + ctx.weights.planning_budget
        wall = time.perf_counter()
        try:
            res = planner.plan(ctx.esdf, boundary, est, preds, start_time=anchor)
        except (PlanningError, TrajectoryError) as exc:
            log.timing["planner"].append(time.perf_counter() - wall)
            failures += 1
            log.plans.append(json.dumps({"t": round(now, 6), "reason": reason, "status": "failed",
                                         "error": str(exc)}, sort_keys=True))
            return None
        log.timing["planner"].append(time.perf_counter() - wall)
        opt = res.optimization
        log.plans.append(json.dumps({
            "t": round(now, 6), "reason": reason, "status": opt.status, "start_time": round(anchor, 6),
            "iterations": opt.iterations, "cost": round(opt.cost, 6), "min_clearance": round(res.min_clearance, 6),
            "max_violation": round(opt.max_violation, 6), "duration": round(res.trajectory.duration, 6),
            "pieces": res.trajectory.pieces, "d_q_start": round(float(res.frs.radii[0]), 6),
        }, sort_keys=True))
        return PlanRecord(now, anchor, reason, res.trajectory, res.frs, preds)

    for step in range(steps):
        t = step * dt
        v_meas = x[3:6] + sim.noise_std * noise_rng.standard_normal(3)
        meas = x.copy()
        meas[3:6] = v_meas
        f_true = wind_force(ctx.wind, t, wind_stream)
        if t < sim.wind_ramp:
            f_true = f_true * (t / sim.wind_ramp)
        if sim.observer:
            est = obs.update(t, meas, u_prev[0], dt)
            f_hat = est.force
        else:
            est = DisturbanceEstimate(stamp=t)
            f_hat = np.zeros(3)
        log.estimate.append(_fmt([t, *obs.state.z1, *obs.state.z2, *f_true]))

        # Planning events (logical time; compute latency is below the budget).
        if not s.tracking_only and t >= next_check - 1e-9:
            next_check = t + sim.replan_period
            if active is None and pending is None:
                rec = plan(t, "initial", Boundary.rest(start, goal), est)
                if rec is None:
                    outcome = "planning_failure"
                    break
                pending = rec
            elif active is not None and pending is None:
                preds = [snapshot(ob, t, ctx.weights.prediction_horizon) for ob in ctx.obstacles]
                decision = check_replan(
                    active.trajectory, active.frs, preds, ctx.weights.replan_trigger, t,
                    start_time=active.start_time, lookahead=ctx.weights.lookahead, delta=ctx.weights.delta,
                    esdf=ctx.esdf if sim.static_replan else None,
                    static_threshold=ctx.weights.static_clearance,
                )
                if decision.triggered:
                    anchor = t + ctx.weights.planning_budget
                    tl = min(max(anchor - active.start_time, 0.0), active.trajectory.duration)
                    p0, v0, a0 = (active.trajectory.sample(np.array([tl]), k)[0] for k in range(3))
                    rec = plan(t, decision.reason, Boundary.from_states(p0, v0, a0, goal), est)
                    if rec is not None:
                        pending = rec
                        replans += 1
        if pending is not None and t >= pending.start_time - 1e-9:
            active, pending = pending, None
            log.records.append(active)

        # Reference and control.
        try:
            if active is not None and t >= active.start_time - 1e-9:
                tl = t - active.start_time
                p_ref = active.trajectory.sample(np.array([tl]))[0]
                refs = reference_from_trajectory(active.trajectory, tl, ctx.nmpc_cfg, yaw, params, f_hat)
                track_err.append(float(np.linalg.norm(x[0:3] - p_ref)))
            else:
                p_ref = start
                refs = hover_reference(start, yaw, ctx.nmpc_cfg, params, f_hat)
        except FlatnessError:
            p_ref = x[0:3].copy()
            refs = hover_reference(p_ref, yaw, ctx.nmpc_cfg, params, f_hat)
        wall = time.perf_counter()
        sol = tracker.step(meas, refs, f_hat)
        log.timing["nmpc"].append(time.perf_counter() - wall)
        u = sol.control
        log.state.append(_fmt([t, *x, *p_ref, *f_true]))
        log.control.append(_fmt([t, *u, *f_hat]) + f",{sol.iterations},{int(sol.converged)},{int(sol.state_clamped)}")

        # Plant.
        xs = _kernels.rk4_steps(x, u, f_true, dt_plant, n_sub, params.mass, params.drag, params.gravity,
                                params.max_tilt if sim.tilt_limit else 0.0)
        u_prev = u
        times = t + dt_plant * np.arange(1, n_sub + 1)
        d, _, _ = ctx.esdf.query_batch(xs[:, 0:3])
        clearance = float(d.min()) - params.radius
        outside = np.any(xs[:, 0:3] < arena_lo) or np.any(xs[:, 0:3] > arena_hi)
        collided = clearance < 0 or bool(outside)  # leaving the arena counts as a crash
        for ob in ctx.obstacles:
            for ti, xi in zip(times[::2], xs[1::2]):
                dist = float(np.linalg.norm(xi[0:3] - obstacle_state(ob, ti)[0]))
                min_obs = min(min_obs, dist)
                clearance = min(clearance, dist - params.radius - ob.radius)
                collided |= dist < params.radius + ob.radius
        min_clear = min(min_clear, clearance)
        x = xs[-1]
        if not np.all(np.isfinite(x)) or abs(x[7]) >= TILT_GUARD:
            outcome = "collision"
            break
        if collided:
            outcome = "collision"
            break
        t_next = t + dt
        if active is not None and pending is None and t_next >= active.start_time + active.trajectory.duration:
            if s.tracking_only or np.linalg.norm(x[0:3] - goal) < sim.goal_tolerance:
                outcome = "success"
                break

    errs = np.asarray(track_err) if track_err else np.array([np.nan])
    final_distance = float(np.linalg.norm(x[0:3] - goal))
    metrics = EpisodeMetrics(
        success=outcome == "success", outcome=outcome, min_clearance=float(min_clear),
        min_obstacle_distance=float(min_obs), tracking_avg=float(errs.mean()), tracking_min=float(errs.min()),
        tracking_max=float(errs.max()), tracking_rmse=float(np.sqrt(np.mean(errs**2))),
        replan_count=replans, plan_failures=failures, flight_time=float(t + dt), final_distance=final_distance,
    )
    log.metrics = metrics
    if out_dir is not None:
        log.write(out_dir)
    return log, metrics
