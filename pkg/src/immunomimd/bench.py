"""Experiment harness: single runs, population traces and the speedup sweep."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import DEFAULT_MAX_STEPS, AgentType, Simulation
from .layout import LayoutGrid

TRACE_HEADER = ["step"] + [t.name.lower() for t in AgentType]
SPEEDUP_HEADER = ["n_agents", "mean", "min", "max"]
DEFAULT_AGENT_COUNTS = (10, 25, 50, 100, 175, 250)


class CapExceeded(RuntimeError):
    def __init__(self, record: "RunRecord"):
        self.record = record
        super().__init__(
            f"{record.layout}: N={record.n_agents} seed={record.seed} "
            f"did not finish within {record.max_steps} steps"
        )


@dataclass
class RunRecord:
    layout: str
    n_agents: int
    seed: int
    max_steps: int
    completion_step: int | None  # None when the cap was hit
    population_trace: list = field(repr=False)

    @property
    def capped(self) -> bool:
        return self.completion_step is None


@dataclass
class SpeedupRow:
    n_agents: int
    mean: float
    min: int
    max: int
    steps: tuple  # per seed, in seed order


@dataclass
class SpeedupTable:
    layout: str
    seed0: int
    repeats: int
    rows: list
    slope: float
    intercept: float


def run_once(
    grid: LayoutGrid, n_agents: int, seed: int, max_steps: int = DEFAULT_MAX_STEPS, layout: str = ""
) -> RunRecord:
    if n_agents < 1:
        raise ValueError("need at least one agent")
    sim = Simulation(grid, n_agents, seed)
    sim.run(max_steps)
    return RunRecord(layout, n_agents, seed, max_steps, sim.completion_step, list(sim.trace))


def _run_job(job):
    return run_once(*job)


def fit_loglog(ns, means) -> tuple[float, float]:
    """Least-squares line through (ln N, ln T); returns (slope, intercept)."""
    slope, intercept = np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(means, float)), 1)
    return float(slope), float(intercept)


def speedup_experiment(
    grid: LayoutGrid,
    ns,
    repeats: int,
    seed0: int = 1,
    max_steps: int = DEFAULT_MAX_STEPS,
    layout: str = "",
    workers: int | None = None,
) -> SpeedupTable:
    """Run every N over seeds seed0 .. seed0+repeats-1 and fit the scaling exponent.

    ``workers`` > 1 dispatches runs to a process pool; runs are independent
    and deterministic, so the table does not depend on it.
    """
    ns = list(ns)
    if repeats < 2:
        raise ValueError("need at least two seeds per agent count")
    if not ns or min(ns) < 1:
        raise ValueError("agent counts must be positive")
    jobs = [(grid, n, seed0 + r, max_steps, layout) for n in ns for r in range(repeats)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_job, jobs))
    else:
        records = [_run_job(j) for j in jobs]
    for rec in records:
        if rec.capped:
            raise CapExceeded(rec)
    rows = []
    for k, n in enumerate(ns):
        steps = tuple(r.completion_step for r in records[k * repeats : (k + 1) * repeats])
        rows.append(SpeedupRow(n, sum(steps) / repeats, min(steps), max(steps), steps))
    if len(ns) >= 2 and all(r.mean > 0 for r in rows):
        slope, intercept = fit_loglog(ns, [r.mean for r in rows])
    else:
        slope = intercept = math.nan
    return SpeedupTable(layout, seed0, repeats, rows, slope, intercept)


def _csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def emit_trace_csv(record: RunRecord) -> str:
    return _csv([TRACE_HEADER] + [[step, *counts] for step, counts in enumerate(record.population_trace)])


def emit_speedup_csv(table: SpeedupTable) -> str:
    return _csv([SPEEDUP_HEADER] + [[r.n_agents, repr(r.mean), r.min, r.max] for r in table.rows])


def parse_speedup_csv(text: str) -> list[tuple[int, float, int, int]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != SPEEDUP_HEADER:
        raise ValueError(f"unexpected header {header}")
    return [(int(n), float(mean), int(lo), int(hi)) for n, mean, lo, hi in reader]
