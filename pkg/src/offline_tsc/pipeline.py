"""Reward inference for logged days: decomposition, MH inference and shockwave performance.

For every controlled lane and interval, the lane-cycles whose green ends inside the
interval are decomposed against the interval flow. Their greens carry all of the
interval's departures, so the conservation residual passed to the decomposition is 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LaneCycleObservation, Settings
from .cycledecomp import DecompositionError, decompose
from .gpmh import mh_batch
from .perf import cycle_performance, interval_reward
from .simenv import DayLog, lane_cycle_observations

log = logging.getLogger(__name__)

CYCLES_PER_DAY = 10_000  # stride of the per-day cycle index used for MH seeding


@dataclass(frozen=True)
class LaneCycleEstimate:
    lane: int
    interval: int
    start: float
    red: float
    green: float
    flow: float  # decomposed cycle flow
    theta: tuple[float, float, float]
    low_confidence: bool
    q_max: float
    delay: float


@dataclass
class DayInference:
    day: int
    cycles: list[LaneCycleEstimate]
    rewards: np.ndarray  # (intervals,) flow-weighted lane-cycle delay
    total_delay: np.ndarray  # (intervals,) summed lane-cycle delay

    def q_max_by_interval(self, lanes: int) -> list[list[float]]:
        out = [[0.0] * lanes for _ in range(len(self.rewards))]
        for c in self.cycles:
            out[c.interval][c.lane] = max(out[c.interval][c.lane], c.q_max)
        return out


def _boundary_counts(obs: Sequence[LaneCycleObservation]) -> list[float]:
    """Counts nearest each cycle start plus the end of the last cycle."""
    b = [float(o.counts[0]) if o.counts.size else 0.0 for o in obs]
    last = obs[-1]
    b.append(float(last.counts[-1]) if last.counts.size else 0.0)
    return b


def decompose_day(log_: DayLog, settings: Settings):
    """``[(obs_with_flow, interval, cycle_index)]`` for every controlled lane-cycle."""
    spec = settings.spec
    out = []
    for lane in range(spec.lane_count):
        if not spec.controlled[lane]:
            continue
        by_interval: dict[int, list[LaneCycleObservation]] = {}
        for k, (obs, interval) in enumerate(lane_cycle_observations(log_, spec, lane)):
            by_interval.setdefault(interval, []).append((k, obs))
        for interval, items in sorted(by_interval.items()):
            obs = [o for _, o in items]
            xf = float(log_.flows[interval, lane])
            try:
                dec = decompose(xf, obs, 0.0, _boundary_counts(obs))
                flows = dec.cycle_flows
            except DecompositionError as exc:
                log.debug("lane %d interval %d: %s; splitting flow by cycle length",
                            lane, interval, exc)
                T = np.array([o.cycle_length for o in obs])
                flows = xf * T / T.sum()
            for (k, o), f in zip(items, flows):
                out.append((o.with_flow(float(f)), interval, log_.day * CYCLES_PER_DAY + k))
    return out


def infer_thetas(tasks, settings: Settings, jobs: int = 1):
    """MH result per task, or ``None`` for empty lane-cycles (no flow, nothing detected)."""
    busy = [i for i, (o, _, _) in enumerate(tasks) if o.cycle_flow > 0 or np.any(o.counts > 0)]
    results = mh_batch([(tasks[i][0], tasks[i][0].cycle_flow, tasks[i][2]) for i in busy],
                       settings.spec, settings.gp, settings.mh, jobs=jobs)
    out = [None] * len(tasks)
    for i, r in zip(busy, results):
        out[i] = r
    return out


def estimate(obs: LaneCycleObservation, interval: int, theta, low: bool,
             settings: Settings) -> LaneCycleEstimate:
    """Shockwave performance of one lane-cycle; ``theta=None`` means an empty cycle."""
    if theta is None:
        return LaneCycleEstimate(obs.lane_id, interval, obs.start_time, obs.red, obs.green,
                                 obs.cycle_flow, (0.0, 0.0, 0.0), low, 0.0, 0.0)
    perf = cycle_performance(theta, obs.red, settings.spec)
    return LaneCycleEstimate(obs.lane_id, interval, obs.start_time, obs.red, obs.green,
                             obs.cycle_flow, tuple(theta.as_array()), low, perf.q_max, perf.delay)


def aggregate(day: int, cycles: Sequence[LaneCycleEstimate], intervals: int) -> DayInference:
    rewards = np.zeros(intervals)
    totals = np.zeros(intervals)
    grouped: dict[int, list[LaneCycleEstimate]] = {}
    for c in cycles:
        grouped.setdefault(c.interval, []).append(c)
    for t, cs in grouped.items():
        rewards[t] = interval_reward([c.delay for c in cs], [c.flow for c in cs])
        totals[t] = sum(c.delay for c in cs)
    return DayInference(day, list(cycles), rewards, totals)


def infer_day(log_: DayLog, settings: Settings, jobs: int = 1) -> DayInference:
    tasks = decompose_day(log_, settings)
    results = infer_thetas(tasks, settings, jobs)
    cycles = [estimate(o, interval, r.theta if r else None, r.low_confidence if r else False,
                       settings) for (o, interval, _), r in zip(tasks, results)]
    return aggregate(log_.day, cycles, log_.n_intervals)


def truth_by_interval(log_: DayLog) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (total lane-cycle delay, flow-weighted delay) per interval."""
    n = log_.n_intervals
    total = np.zeros(n)
    num = np.zeros(n)
    den = np.zeros(n)
    for c in log_.truth_cycles:
        total[c.interval] += c.delay
        num[c.interval] += c.delay * c.flow
        den[c.interval] += c.flow
    return total, np.divide(num, den, out=np.zeros(n), where=den > 0)


