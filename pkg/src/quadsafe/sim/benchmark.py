"""Seeded benchmark matrix: conditions x ablations x trials, with CSV and JSON summaries.

A suite file names a base scenario, a list of conditions (each a set of dotted
overrides) and a list of ablations (``frs`` / ``observer`` flags)::

    name: table
    scenario: corridor.yaml
    trials: 30
    seed: 0
    conditions:
      - {name: low, overrides: {wind.mean: [0.0, 1.5, 0.0]}}
      - {name: high, overrides: {wind.mean: [0.0, 6.5, 0.0]}}
    ablations:
      - {frs: true, observer: true}
      - {frs: false, observer: true}

Trial ``i`` of every condition and ablation uses seed ``seed + i``, so
ablations are paired per seed.
"""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..config import ConfigError, Scenario, apply_overrides, load_scenario, resolve_scenario
from .episode import run_episode

SUMMARY_COLUMNS = ["condition", "wind_mean", "frs", "observer", "trials", "success_rate", "rmse_mean"]
_SUITE_KEYS = {"name", "scenario", "trials", "seed", "conditions", "ablations"}


@dataclass
class Condition:
    name: str
    overrides: dict = field(default_factory=dict)


@dataclass
class Ablation:
    frs: bool = True
    observer: bool = True

    @property
    def label(self) -> str:
        return f"frs-{'on' if self.frs else 'off'}_obs-{'on' if self.observer else 'off'}"


@dataclass
class Suite:
    name: str
    scenario: Scenario
    conditions: list[Condition]
    ablations: list[Ablation]
    trials: int = 30
    seed: int = 0


def load_suite(path) -> Suite:
    path = resolve_scenario(path)
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"YAML syntax error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("<root>", "suite must be a mapping")
    unknown = set(data) - _SUITE_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "scenario" not in data:
        raise ConfigError("scenario", "missing")
    base = Path(data["scenario"])
    if not base.is_absolute() and (Path(path).parent / base).exists():
        base = Path(path).parent / base
    scenario = load_scenario(resolve_scenario(base))
    conditions = []
    for i, c in enumerate(data.get("conditions") or [{"name": "base"}]):
        if not isinstance(c, dict) or "name" not in c or set(c) - {"name", "overrides"}:
            raise ConfigError(f"conditions[{i}]", "expected {name, overrides}")
        conditions.append(Condition(str(c["name"]), dict(c.get("overrides") or {})))
        apply_overrides(scenario, conditions[-1].overrides)  # fail early on bad keys
    ablations = []
    for i, a in enumerate(data.get("ablations") or [{}]):
        if not isinstance(a, dict) or set(a) - {"frs", "observer"}:
            raise ConfigError(f"ablations[{i}]", "expected {frs, observer}")
        ablations.append(Ablation(bool(a.get("frs", True)), bool(a.get("observer", True))))
    trials = data.get("trials", 30)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials", "must be a positive integer")
    return Suite(str(data.get("name", Path(path).stem)), scenario, conditions, ablations,
                 trials, int(data.get("seed", 0)))


@dataclass
class TrialResult:
    condition: str
    frs: bool
    observer: bool
    seed: int
    success: bool
    outcome: str
    rmse: float
    min_clearance: float
    wall_time: float


def _run_trial(args) -> TrialResult:
    name, scenario, ablation, seed, out_dir = args
    wall = time.perf_counter()
    _, m = run_episode(scenario, seed=seed, out_dir=out_dir, frs=ablation.frs, observer=ablation.observer)
    return TrialResult(name, ablation.frs, ablation.observer, seed, m.success, m.outcome,
                       m.tracking_rmse, m.min_clearance, time.perf_counter() - wall)


@dataclass
class BenchmarkSummary:
    rows: list[dict]
    trials: list[TrialResult]

    def row(self, condition: str, frs: bool = True, observer: bool = True) -> dict:
        for r in self.rows:
            if r["condition"] == condition and r["frs"] == frs and r["observer"] == observer:
                return r
        raise KeyError((condition, frs, observer))

    def paired(self, condition: str, key: str = "rmse", **flags) -> np.ndarray:
        """Per-seed values for one ablation, ordered by seed."""
        sel = [t for t in self.trials if t.condition == condition
               and all(getattr(t, k) == v for k, v in flags.items())]
        return np.array([getattr(t, key) for t in sorted(sel, key=lambda t: t.seed)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({**r, "frs": int(r["frs"]), "observer": int(r["observer"]),
                        "wind_mean": f"{r['wind_mean']:.6f}", "success_rate": f"{r['success_rate']:.6f}",
                        "rmse_mean": f"{r['rmse_mean']:.6f}"})
        return buf.getvalue()

    def to_json(self) -> str:
        trials = [{k: (round(v, 6) if isinstance(v, float) else v) for k, v in t.__dict__.items()
                   if k != "wall_time"} for t in self.trials]
        return json.dumps({"rows": self.rows, "trials": trials}, indent=2, sort_keys=True)


def _aggregate(suite: Suite, results: list[TrialResult]) -> list[dict]:
    rows = []
    for c in suite.conditions:
        wind = np.linalg.norm(apply_overrides(suite.scenario, c.overrides).wind.mean)
        for a in suite.ablations:
            sel = [r for r in results if r.condition == c.name and r.frs == a.frs and r.observer == a.observer]
            rows.append({
                "condition": c.name, "wind_mean": round(float(wind), 6), "frs": a.frs, "observer": a.observer,
                "trials": len(sel),
                "success_rate": round(float(np.mean([r.success for r in sel])), 6),
                "rmse_mean": round(float(np.mean([r.rmse for r in sel])), 6),
            })
    return rows


def run_benchmark(suite: Suite, trials: int | None = None, out_dir=None, workers: int = 1,
                  keep_logs: bool = False, progress=None) -> BenchmarkSummary:
    """Run every (condition, ablation, seed) episode and summarize.

    Args:
        suite: Loaded suite.
        trials: Overrides ``suite.trials``.
        out_dir: Where ``summary.csv`` and ``summary.json`` go; ``None`` writes nothing.
        workers: Process count; results do not depend on it.
        keep_logs: Also write every episode's logs under ``out_dir``.
        progress: Optional callback receiving each finished :class:`TrialResult`.

    Returns:
        The summary with one row per condition and ablation.
    """
    trials = suite.trials if trials is None else int(trials)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = []
    for c in suite.conditions:
        scenario = apply_overrides(suite.scenario, c.overrides)
        for a in suite.ablations:
            for i in range(trials):
                seed = suite.seed + i
                log_dir = None
                if keep_logs and out_dir is not None:
                    log_dir = Path(out_dir) / c.name / a.label / f"seed_{seed:04d}"
                jobs.append((c.name, scenario, a, seed, log_dir))
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for r in pool.map(_run_trial, jobs):
                results.append(r)
                if progress:
                    progress(r)
    else:
        for job in jobs:
            r = _run_trial(job)
            results.append(r)
            if progress:
                progress(r)
    summary = BenchmarkSummary(_aggregate(suite, results), results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(summary.to_csv())
        (out / "summary.json").write_text(summary.to_json())
    return summary
