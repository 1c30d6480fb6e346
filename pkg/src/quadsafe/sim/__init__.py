"""Closed-loop simulation: world models, episodes and benchmarks."""

from .benchmark import BenchmarkSummary, Suite, load_suite, run_benchmark
from .episode import EpisodeLog, EpisodeMetrics, PlanRecord, reference_trajectory, run_episode
from .world import DynamicObstacle, WindModel, WindStream, obstacle_position, obstacle_state, snapshot, wind_force

__all__ = [
    "BenchmarkSummary", "Suite", "load_suite", "run_benchmark",
    "DynamicObstacle", "EpisodeLog", "EpisodeMetrics", "PlanRecord", "WindModel", "WindStream",
    "obstacle_position", "obstacle_state", "reference_trajectory", "run_episode", "snapshot", "wind_force",
]
