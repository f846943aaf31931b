"""Desk-scale intersection simulator.

Each lane is a point queue advanced in 1-second steps: Poisson arrivals join the
queue, and while the lane shows green the queue discharges at the saturation rate.
Queued vehicles are projected onto the road at jam spacing. The camera sees
vehicles inside the detection range, and during local spillback new vehicles
enter the range only once space freed at the stopline has travelled back to its
upstream edge. Ground truth (stopped time and furthest stopped position per
lane-cycle) is kept separately and never enters the coarse observations.

Simplifications: no lost time between phases, and each 5-minute interval holds
a whole number of cycles, so a commanded cycle length is realized as
``300 / round(300 / T_c)`` seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import (COUNT_CADENCE, INTERVAL_SECONDS, INTERVALS_PER_DAY, CycleLog,
                   DemandPattern, IntersectionSpec, IntervalObservation, LaneCycleObservation,
                   Settings, SimConfig, TimingPlan, TransitionDataset)
from .orl import build_state, phase_pool, state_from_observation

DAY_SECONDS = INTERVAL_SECONDS * INTERVALS_PER_DAY
SAMPLES_PER_INTERVAL = INTERVAL_SECONDS // COUNT_CADENCE


# ---------------------------------------------------------------- demand

@dataclass(frozen=True)
class ArrivalProfile:
    """Per-interval arrival rates for one day, shape ``(INTERVALS_PER_DAY, L)``."""

    rates: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != INTERVALS_PER_DAY:
            raise ValueError(f"rates must cover {INTERVALS_PER_DAY} intervals")
        if np.any(r < 0):
            raise ValueError("arrival rates must be non-negative")
        object.__setattr__(self, "rates", r)

    @classmethod
    def constant(cls, rates: Sequence[float]) -> "ArrivalProfile":
        return cls(np.tile(np.asarray(rates, dtype=float), (INTERVALS_PER_DAY, 1)))

    def scaled(self, factor) -> "ArrivalProfile":
        return ArrivalProfile(self.rates * factor)


def _bump(h, center, width):
    return np.exp(-0.5 * ((h - center) / width) ** 2)


def day_profile(pattern: DemandPattern, day: int, seed: int, variation: float = 0.1,
                scale: float = 1.0) -> ArrivalProfile:
    """Rates for one day; peaks shift and lanes scale randomly per ``(seed, day)``."""
    rng = np.random.default_rng([seed, day, 7919])
    L = len(pattern.base)
    h = (np.arange(INTERVALS_PER_DAY) + 0.5) * INTERVAL_SECONDS / 3600.0
    daytime = pattern.night_factor + (1 - pattern.night_factor) * (
        1 / (1 + np.exp(-(h - 6.0) * 2)) - 1 / (1 + np.exp(-(h - 22.0) * 2)))
    am_c = 8.0 + rng.normal(0, 0.25)
    pm_c = 17.5 + rng.normal(0, 0.25)
    lane_f = np.exp(rng.normal(0, variation, L))
    rates = (np.outer(daytime, pattern.base) + np.outer(_bump(h, am_c, 1.0), pattern.am)
             + np.outer(_bump(h, pm_c, 1.2), pattern.pm))
    return ArrivalProfile(rates * lane_f * scale)


# ---------------------------------------------------------------- controllers

class Controller(Protocol):
    name: str

    def plan(self, obs: IntervalObservation | None) -> TimingPlan: ...


@dataclass
class FixedPlan:
    plan_: TimingPlan
    name: str = "fixed"

    def plan(self, obs):
        return self.plan_


def fixed_plan(settings: Settings) -> FixedPlan:
    spec, sim = settings.spec, settings.sim
    ratios = sim.fixed_ratios or (1.0 / spec.phase_count,) * spec.phase_count
    return FixedPlan(TimingPlan(sim.fixed_cycle, ratios, spec.cycle_min, spec.cycle_max))


@dataclass
class ProportionalDemand:
    """Stand-in for a saturation-balance controller, with seeded exploration noise.

    Green ratios follow phase-pooled demand of the last interval, the cycle grows
    with the critical flow ratio.
    """

    spec: IntersectionSpec
    saturation_rate: float
    ratio_noise: float = 0.25
    cycle_noise: float = 15.0
    seed: int = 0
    name: str = "behavior"
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng([self.seed, 104729])

    def plan(self, obs):
        spec = self.spec
        P = spec.phase_count
        if obs is None:
            demand = np.ones(P)
            crit = 0.0
        else:
            pid = np.zeros(spec.phase_order_count)
            pid[obs.phase_order] = 1.0
            demand = phase_pool(obs.flows, pid, spec.phase_order_matrix) + 1.0
            pattern = spec.phase_order_matrix[obs.phase_order]
            lane_rate = obs.flows / INTERVAL_SECONDS
            crit = sum(float(np.max(lane_rate * pattern[p], initial=0.0)) for p in range(P))
        y = crit / self.saturation_rate
        lo, hi = spec.cycle_min, spec.cycle_max
        cycle = lo + (hi - lo) * min(max(y / 0.9, 0.0), 1.0)
        cycle = float(np.clip(cycle + self.cycle_noise * self.rng.standard_normal(), lo, hi))
        ratios = demand / demand.sum() * np.exp(self.ratio_noise * self.rng.standard_normal(P))
        ratios = np.maximum(ratios / ratios.sum(), 0.02)
        ratios = ratios / math.fsum(ratios)
        return TimingPlan(cycle, tuple(ratios), lo, hi)


def behavior_policy(settings: Settings, seed: int) -> ProportionalDemand:
    sim = settings.sim
    return ProportionalDemand(settings.spec, sim.saturation_rate, sim.behavior_noise,
                              sim.behavior_cycle_noise, seed)


# ---------------------------------------------------------------- simulator

@dataclass
class LaneCycleTruth:
    lane: int
    start: int
    green_start: int
    end: int
    interval: int
    flow: int
    arrivals: int
    initial_count: float
    delay: float
    q_max: float


@dataclass
class DayLog:
    """Everything one simulated day produced; ``truth_*`` fields are hidden ground truth."""

    day: int
    actions: np.ndarray  # (intervals, 1 + P) realized [cycle_length, ratios]
    orders: np.ndarray  # (intervals,)
    flows: np.ndarray  # (intervals, L)
    counts: np.ndarray  # (DAY_SECONDS // COUNT_CADENCE + 1, L)
    cycles: list[CycleLog]
    truth_delay: np.ndarray  # (intervals, L) stopped vehicle-seconds per interval
    truth_cycles: list[LaneCycleTruth]

    def observation(self, i: int) -> IntervalObservation:
        a, b = i * SAMPLES_PER_INTERVAL, (i + 1) * SAMPLES_PER_INTERVAL
        lo, hi = i * INTERVAL_SECONDS, (i + 1) * INTERVAL_SECONDS
        cyc = tuple(c for c in self.cycles if lo <= c.start_time < hi)
        return IntervalObservation(i, self.flows[i], self.counts[a:b], int(self.orders[i]), cyc)

    @property
    def n_intervals(self) -> int:
        return len(self.flows)


def realize_plan(plan: TimingPlan, spec: IntersectionSpec, sim: SimConfig, start: int,
                 order: int) -> list[CycleLog]:
    """Integer-second cycles tiling one interval for the commanded plan."""
    n = max(1, round(INTERVAL_SECONDS / plan.cycle_length))
    while n > 1 and INTERVAL_SECONDS / n < spec.cycle_min - 1e-9:
        n -= 1
    while INTERVAL_SECONDS / n > spec.cycle_max + 1e-9:
        n += 1
    edges = np.round(np.arange(n + 1) * INTERVAL_SECONDS / n).astype(int) + start
    ratios = np.asarray(plan.green_ratios, dtype=float)
    logs = []
    for c0, c1 in zip(edges[:-1], edges[1:]):
        length = c1 - c0
        r = ratios.copy()
        floor = min(sim.min_green / length, 1.0 / len(r))
        for _ in range(len(r)):
            low = r < floor
            if not low.any():
                break
            r[low] = floor
            r[~low] *= (1 - floor * low.sum()) / r[~low].sum()
        bounds = np.round(np.concatenate([[0.0], np.cumsum(r)]) * length).astype(int)
        bounds[-1] = length
        logs.append(CycleLog(float(c0), float(length), tuple(float(g) for g in np.diff(bounds)),
                             order))
    return logs


def green_mask(cycles: Sequence[CycleLog], spec: IntersectionSpec, t0: int, n: int) -> np.ndarray:
    """Boolean ``(n, L)`` green indicator for seconds ``t0 .. t0 + n - 1``."""
    mask = np.zeros((n, spec.lane_count), dtype=bool)
    uncontrolled = ~np.asarray(spec.controlled)
    for c in cycles:
        s = int(c.start_time)
        pattern = spec.phase_order_matrix[c.phase_order] > 0
        for p, g in enumerate(c.greens):
            a, b = max(s - t0, 0), min(s + int(g) - t0, n)
            if b > a:
                mask[a:b] |= pattern[p]
            s += int(g)
    mask[:, uncontrolled] = True
    return mask


class IntersectionSim:
    """One day of one intersection; call :meth:`run_interval` 288 times."""

    def __init__(self, spec: IntersectionSpec, sim: SimConfig, profile: ArrivalProfile,
                 seed: int = 0, order_schedule: Sequence[int] | None = None):
        self.spec, self.cfg, self.profile = spec, sim, profile
        self.rng = np.random.default_rng([seed, 15485863])
        L = spec.lane_count
        self.t = 0
        self.queue = np.zeros(L, dtype=np.int64)
        self.green_age = np.zeros(L, dtype=np.int64)  # seconds since current green began
        self.was_green = np.zeros(L, dtype=bool)
        self.cum_arr = np.zeros((DAY_SECONDS + 1, L), dtype=np.int64)
        self.cum_dep = np.zeros((DAY_SECONDS + 1, L), dtype=np.int64)
        self.green_hist = np.zeros((DAY_SECONDS, L), dtype=bool)
        self.cycles: list[CycleLog] = []
        self.actions, self.orders = [], []
        self.order_schedule = order_schedule
        self.pending: list[CycleLog] = []

    # one code path for single steps and whole intervals
    def _advance(self, n: int):
        spec, L = self.spec, self.spec.lane_count
        t0 = self.t
        if t0 + n > DAY_SECONDS:
            raise ValueError("simulation horizon exceeded")
        green = green_mask(self.pending, spec, t0, n)
        rate = self.profile.rates[np.minimum(np.arange(t0, t0 + n) // INTERVAL_SECONDS,
                                             INTERVALS_PER_DAY - 1)]
        arrivals = self.rng.poisson(rate)
        # discharge capacity: floor(v_s (k + 1)) - floor(v_s k), k = seconds into green
        prev = np.vstack([self.was_green, green[:-1]])
        steps = np.arange(n)[:, None]
        last_start = np.maximum.accumulate(np.where(green & ~prev, steps, -1), axis=0)
        age = np.where(last_start >= 0, steps - last_start, self.green_age + 1 + steps)
        age = np.where(green, age, 0)
        vs = self.cfg.saturation_rate
        cap = np.where(green, np.floor(vs * (age + 1)) - np.floor(vs * age), 0).astype(np.int64)
        # queued vehicles discharge on the capacity pattern; once a green lane is
        # empty, arrivals pass straight through until the next red
        departures = np.zeros((n, L), dtype=np.int64)
        queue = np.zeros((n, L), dtype=np.int64)
        for l in range(L):
            q = int(self.queue[l])
            arr_l, cap_l, g_l = arrivals[:, l].tolist(), cap[:, l].tolist(), green[:, l].tolist()
            dep_l, q_l = [0] * n, [0] * n
            for i in range(n):  # scalar loop: far cheaper than tiny numpy calls
                a = arr_l[i]
                if g_l[i] and q == 0:
                    d = a
                else:
                    d = min(q + a, cap_l[i])
                q += a - d
                dep_l[i], q_l[i] = d, q
            departures[:, l], queue[:, l] = dep_l, q_l
        self.cum_arr[t0 + 1:t0 + n + 1] = self.cum_arr[t0] + np.cumsum(arrivals, axis=0)
        self.cum_dep[t0 + 1:t0 + n + 1] = self.cum_dep[t0] + np.cumsum(departures, axis=0)
        self.green_hist[t0:t0 + n] = green
        self.queue = queue[-1].copy()
        self.green_age, self.was_green = age[-1].copy(), green[-1].copy()
        self.t = t0 + n

    def step(self, plan: TimingPlan | None = None, dt: int = 1):
        """Advance ``dt`` seconds within the current interval.

        The first step of every interval must carry the plan for that interval.
        """
        i = self.t // INTERVAL_SECONDS
        if len(self.actions) <= i:
            if plan is None:
                raise ValueError("a timing plan is required at an interval boundary")
            self._start_interval(plan)
        if dt < 1 or (self.t % INTERVAL_SECONDS) + dt > INTERVAL_SECONDS:
            raise ValueError("dt must be positive and stay within the current interval")
        self._advance(dt)

    def _order_at(self, interval: int) -> int:
        if self.order_schedule is None:
            return 0
        return int(self.order_schedule[interval])

    def _start_interval(self, plan: TimingPlan):
        i = self.t // INTERVAL_SECONDS
        order = self._order_at(i)
        self.pending = realize_plan(plan, self.spec, self.cfg, self.t, order)
        self.cycles.extend(self.pending)
        c = self.pending[0]
        self.actions.append([c.cycle_length, *(g / c.cycle_length for g in c.greens)])
        self.orders.append(order)

    def run_interval(self, plan: TimingPlan):
        if self.t % INTERVAL_SECONDS:
            raise ValueError("run_interval must start on an interval boundary")
        self.step(plan, INTERVAL_SECONDS)

    @property
    def in_system(self) -> np.ndarray:
        return self.cum_arr[self.t] - self.cum_dep[self.t]

    # ---------------------------------------------------------------- observation

    def detected_counts(self, upto: int | None = None, start: int = 0) -> np.ndarray:
        """Spatial counts at instants ``start..upto`` with spillback truncation."""
        upto = self.t if upto is None else upto
        idx = np.arange(start, upto + 1)
        lag = int(round(self.spec.shockwave_traverse_time))
        A = self.cum_arr[idx]
        D = self.cum_dep[idx]
        D_lag = np.where((idx >= lag)[:, None], self.cum_dep[np.maximum(idx - lag, 0)], 0)
        return np.minimum(A, D_lag + self.spec.capacity) - D

    def log(self, day: int = 0) -> DayLog:
        """Coarse observations plus hidden truth for the intervals simulated so far."""
        n_int = self.t // INTERVAL_SECONDS
        end = n_int * INTERVAL_SECONDS
        counts = self.detected_counts(end)[::COUNT_CADENCE]
        dep = self.cum_dep[:end + 1:INTERVAL_SECONDS]
        flows = np.diff(dep, axis=0).astype(float)
        stopped, delays_by_vehicle = self._stopped_profile(end)
        truth_delay = stopped.reshape(n_int, INTERVAL_SECONDS, -1).sum(axis=1).astype(float)
        truth_cycles = self._lane_cycle_truth(end, stopped, delays_by_vehicle)
        return DayLog(day, np.array(self.actions[:n_int]), np.array(self.orders[:n_int]),
                      flows, counts.astype(float),
                      [c for c in self.cycles if c.start_time < end],
                      truth_delay, truth_cycles)

    def _vehicle_times(self, lane: int, end: int):
        A = self.cum_arr[:end + 1, lane]
        D = self.cum_dep[:end + 1, lane]
        n_arr = int(A[-1])
        k = np.arange(1, n_arr + 1)
        t_arr = np.searchsorted(A, k, side="left") - 1  # second during which it arrived
        t_dep = np.searchsorted(D, k, side="left") - 1
        t_dep = np.where(k <= D[-1], t_dep, end)  # still queued at the horizon
        return t_arr, t_dep

    def _stopped_profile(self, end: int):
        """Per-second count of stopped vehicles (wait above the threshold)."""
        L = self.spec.lane_count
        stopped = np.zeros((end, L), dtype=np.int64)
        per_vehicle = []
        thr = self.cfg.stop_threshold
        for l in range(L):
            t_arr, t_dep = self._vehicle_times(l, end)
            wait = t_dep - t_arr
            s = wait > thr
            diff = np.zeros(end + 1, dtype=np.int64)
            np.add.at(diff, t_arr[s], 1)
            np.add.at(diff, t_dep[s], -1)
            stopped[:, l] = np.cumsum(diff)[:end]
            per_vehicle.append((t_arr, t_dep, wait))
        return stopped, per_vehicle

    def _lane_cycle_truth(self, end, stopped, per_vehicle):
        spec, thr = self.spec, self.cfg.stop_threshold
        out = []
        step = 1.0 / spec.free_flow_speed + 1.0 / spec.shockwave_speed
        for l in range(spec.lane_count):
            if not spec.controlled[l]:
                continue
            t_arr, t_dep, wait = per_vehicle[l]  # FIFO: both sorted
            is_stop = wait > thr
            stop_idx = np.flatnonzero(is_stop)
            n_stop = np.concatenate([[0], np.cumsum(is_stop)])
            for start, g0, g1 in lane_green_blocks(self.cycles, spec, l, end):
                lo, hi = np.searchsorted(t_dep, [g0, g1])
                j = np.searchsorted(stop_idx, hi) - 1  # last stopped vehicle leaving before g1
                q = 0.0
                if j >= 0 and stop_idx[j] >= lo:
                    q = (t_dep[stop_idx[j]] - g0 + 1) / step
                waiting = np.searchsorted(t_arr, g1)  # arrived before the green ended
                left = int(n_stop[max(waiting, hi)] - n_stop[hi])
                if left:
                    q = max(q, (int(n_stop[hi] - n_stop[lo]) + left) / spec.jam_density)
                out.append(LaneCycleTruth(
                    lane=l, start=start, green_start=g0, end=g1,
                    interval=(g1 - 1) // INTERVAL_SECONDS,
                    flow=int(self.cum_dep[g1, l] - self.cum_dep[start, l]),
                    arrivals=int(self.cum_arr[g1, l] - self.cum_arr[start, l]),
                    initial_count=float(self.cum_arr[start, l] - self.cum_dep[start, l]),
                    delay=float(stopped[start:g1, l].sum()), q_max=float(q)))
        return out


def lane_green_blocks(cycles: Sequence[CycleLog], spec: IntersectionSpec, lane: int,
                      end: int) -> list[tuple[int, int, int]]:
    """``(cycle_start, green_start, green_end)`` per lane-cycle, red first then green."""
    spans = []
    for c in cycles:
        s = int(c.start_time)
        pattern = spec.phase_order_matrix[c.phase_order]
        for p, g in enumerate(c.greens):
            if pattern[p, lane] > 0 and g > 0:
                if spans and spans[-1][1] == s:
                    spans[-1][1] = s + int(g)
                else:
                    spans.append([s, s + int(g)])
            s += int(g)
    blocks, prev = [], 0
    for g0, g1 in spans:
        if g1 > end:
            break
        blocks.append((prev, g0, g1))
        prev = g1
    return blocks


def lane_cycle_observations(log: DayLog, spec: IntersectionSpec, lane: int):
    """Lane-cycles of one lane with their 5-second count samples."""
    end = log.n_intervals * INTERVAL_SECONDS
    times = np.arange(log.counts.shape[0]) * COUNT_CADENCE
    out = []
    for start, g0, g1 in lane_green_blocks(log.cycles, spec, lane, end):
        sel = (times >= start) & (times <= g1)
        out.append((LaneCycleObservation(lane, float(start), float(g1 - start), float(g0 - start),
                                         float(g1 - g0), times[sel] - start,
                                         log.counts[sel, lane]),
                    (g1 - 1) // INTERVAL_SECONDS))
    return out


# ---------------------------------------------------------------- rollouts

def order_schedule(spec: IntersectionSpec) -> np.ndarray:
    """Phase order per interval: order 1 (when present) in peak hours, else 0."""
    h = np.arange(INTERVALS_PER_DAY) * INTERVAL_SECONDS / 3600.0
    peak = ((h >= 7) & (h < 10)) | ((h >= 16) & (h < 20))
    return np.where(peak & (spec.phase_order_count > 1), 1, 0)


class _Observer:
    """Incremental interval observations without rebuilding the whole day log."""

    def __init__(self, engine: IntersectionSim):
        self.engine = engine

    def observation(self, i: int) -> IntervalObservation:
        e = self.engine
        lo, hi = i * INTERVAL_SECONDS, (i + 1) * INTERVAL_SECONDS
        counts = e.detected_counts(hi - 1, lo)[::COUNT_CADENCE].astype(float)
        flows = (e.cum_dep[hi] - e.cum_dep[lo]).astype(float)
        return IntervalObservation(i, flows, counts, e.orders[i],
                                   tuple(c for c in e.cycles if lo <= c.start_time < hi))


def run_day(spec: IntersectionSpec, sim: SimConfig, profile: ArrivalProfile,
            controller: Controller, seed: int, day: int = 0,
            intervals: int = INTERVALS_PER_DAY, warmup: Controller | None = None) -> DayLog:
    """Closed-loop day: the controller sees the previous interval's coarse observation."""
    engine = IntersectionSim(spec, sim, profile, seed=seed, order_schedule=order_schedule(spec))
    observer = _Observer(engine)
    obs = None
    for i in range(intervals):
        ctl = warmup if (obs is None and warmup is not None) else controller
        engine.run_interval(ctl.plan(obs))
        obs = observer.observation(i)
    return engine.log(day)


def day_seed(seed: int, day: int) -> int:
    return int(np.random.SeedSequence([seed, day]).generate_state(1)[0])


def demand_pattern(settings: Settings) -> DemandPattern:
    if settings.demand is None:
        raise ValueError("the configuration has no [demand] section")
    return settings.demand


def generate_logs(settings: Settings, pattern: DemandPattern, days: int, seed: int,
                  controller_factory=None, first_day: int = 0) -> list[DayLog]:
    logs = []
    for d in range(first_day, first_day + days):
        profile = day_profile(pattern, d, seed, settings.sim.day_variation,
                              settings.sim.demand_scale)
        ctl = (controller_factory or (lambda s: behavior_policy(settings, s)))(day_seed(seed, d))
        logs.append(run_day(settings.spec, settings.sim, profile, ctl, day_seed(seed, d) + 1, d))
    return logs


def transitions_from_logs(logs: Sequence[DayLog], spec: IntersectionSpec,
                          rewards: Sequence[np.ndarray] | None = None) -> TransitionDataset:
    """One transition per interval: state from the previous interval, zero state at day start."""
    parts = []
    for k, log in enumerate(logs):
        n = log.n_intervals
        obs_states = np.array([state_from_observation(log.observation(i), spec) for i in range(n)])
        empty = build_state(np.zeros(spec.lane_count), np.zeros(spec.lane_count), 0, spec)
        states = np.vstack([empty, obs_states[:-1]])
        terminals = np.zeros(n)
        terminals[-1] = 1.0
        r = np.full(n, np.nan) if rewards is None else np.asarray(rewards[k], dtype=float)
        parts.append(TransitionDataset(states, log.actions, r, obs_states, terminals))
    return TransitionDataset.concat(parts)


def generate_dataset(settings: Settings, pattern: DemandPattern, days: int, seed: int,
                     reward_fn=None) -> tuple[TransitionDataset, list[DayLog]]:
    """Roll out the behavior controller and record 5-minute transitions.

    ``reward_fn(log) -> (intervals,)`` fills the rewards; without it they are NaN
    until reward inference runs.
    """
    logs = generate_logs(settings, pattern, days, seed)
    rewards = [reward_fn(log) for log in logs] if reward_fn else None
    if not logs:
        return TransitionDataset(np.zeros((0, settings.spec.state_dim)),
                                 np.zeros((0, settings.spec.action_dim)), [],
                                 np.zeros((0, settings.spec.state_dim)), []), logs
    return transitions_from_logs(logs, settings.spec, rewards), logs


@dataclass
class EvalReport:
    policy: str
    days: list[int]
    total_delay: list[float]
    total_queue: list[float]

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.total_delay))

    @property
    def mean_queue(self) -> float:
        return float(np.mean(self.total_queue))

    def rows(self):
        for d, dl, q in zip(self.days, self.total_delay, self.total_queue):
            yield d, dl, q
        yield "mean", self.mean_delay, self.mean_queue


def evaluate(controller: Controller, settings: Settings, pattern: DemandPattern,
             days: Sequence[int], seed: int,
             warmup: Controller | None = None) -> EvalReport:
    """Closed-loop ground-truth totals per day (delay in vehicle-seconds, queue in meters)."""
    delays, queues = [], []
    ctl_mask = np.asarray(settings.spec.controlled)
    for d in days:
        profile = day_profile(pattern, d, seed, settings.sim.day_variation,
                              settings.sim.demand_scale)
        log = run_day(settings.spec, settings.sim, profile, controller, day_seed(seed, d) + 1, d,
                      warmup=warmup or fixed_plan(settings))
        delays.append(float(log.truth_delay[:, ctl_mask].sum()))
        queues.append(float(sum(c.q_max for c in log.truth_cycles)))
    return EvalReport(getattr(controller, "name", "policy"), list(days), delays, queues)


# ---------------------------------------------------------------- observation files

def _headers(spec: IntersectionSpec) -> dict[str, list[str]]:
    L, P = spec.lane_count, spec.phase_count
    return {
        "flows": ["day", "interval", "phase_order", "cycle_length",
                  *(f"ratio_{p}" for p in range(P)), *(f"flow_{l}" for l in range(L))],
        "counts": ["day", "time", *(f"count_{l}" for l in range(L))],
        "timing": ["day", "start_time", "cycle_length", "phase_order",
                   *(f"green_{p}" for p in range(P))],
        "truth_cycles": ["day", "lane", "start", "green_start", "end", "interval", "flow",
                         "arrivals", "initial_count", "delay", "q_max"],
        "truth_intervals": ["day", "interval", *(f"delay_{l}" for l in range(L))],
    }


OBSERVATION_FILES = ("flows", "counts", "timing")
TRUTH_FILES = ("truth_cycles", "truth_intervals")


def write_logs(directory, logs: Sequence[DayLog], spec: IntersectionSpec, truth: bool = True):
    """Coarse observation files (plus hidden truth files) for a list of days."""
    from .core import write_table
    from pathlib import Path
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h = _headers(spec)
    rows = {k: [] for k in h}
    for log_ in logs:
        n = log_.n_intervals
        rows["flows"].append(np.column_stack([np.full(n, log_.day), np.arange(n), log_.orders,
                                              log_.actions, log_.flows]))
        times = np.arange(log_.counts.shape[0]) * COUNT_CADENCE
        rows["counts"].append(np.column_stack([np.full(len(times), log_.day), times, log_.counts]))
        timing = [[log_.day, c.start_time, c.cycle_length, c.phase_order, *c.greens]
                  for c in log_.cycles]
        rows["timing"].append(np.array(timing).reshape(-1, len(h["timing"])))
        rows["truth_cycles"].append(np.array(
            [[log_.day, c.lane, c.start, c.green_start, c.end, c.interval, c.flow, c.arrivals,
              c.initial_count, c.delay, c.q_max] for c in log_.truth_cycles]).reshape(-1, 11))
        rows["truth_intervals"].append(np.column_stack([np.full(n, log_.day), np.arange(n),
                                                        log_.truth_delay]))
    names = OBSERVATION_FILES + (TRUTH_FILES if truth else ())
    for k in names:
        data = np.vstack(rows[k]) if rows[k] else np.zeros((0, len(h[k])))
        write_table(d / f"{k}.csv", h[k], data)
    return [d / f"{k}.csv" for k in names]


def read_logs(directory, spec: IntersectionSpec) -> list[DayLog]:
    """Rebuild day logs from observation files; truth files are optional."""
    from .core import read_table
    from pathlib import Path
    d = Path(directory)
    h = _headers(spec)
    tab = {k: read_table(d / f"{k}.csv", h[k]) for k in OBSERVATION_FILES}
    for k in TRUTH_FILES:
        if (d / f"{k}.csv").is_file():
            tab[k] = read_table(d / f"{k}.csv", h[k])
    P = spec.phase_count
    logs = []
    for day in np.unique(tab["flows"][:, 0]).astype(int):
        f = tab["flows"][tab["flows"][:, 0] == day]
        f = f[np.argsort(f[:, 1])]
        c = tab["counts"][tab["counts"][:, 0] == day]
        c = c[np.argsort(c[:, 1])]
        t = tab["timing"][tab["timing"][:, 0] == day]
        cycles = [CycleLog(float(r[1]), float(r[2]), tuple(float(g) for g in r[4:4 + P]), int(r[3]))
                  for r in t[np.argsort(t[:, 1])]]
        truth_delay = np.zeros((len(f), spec.lane_count))
        truth_cycles = []
        if "truth_intervals" in tab:
            ti = tab["truth_intervals"][tab["truth_intervals"][:, 0] == day]
            truth_delay[ti[:, 1].astype(int)] = ti[:, 2:]
        if "truth_cycles" in tab:
            for r in tab["truth_cycles"][tab["truth_cycles"][:, 0] == day]:
                truth_cycles.append(LaneCycleTruth(int(r[1]), int(r[2]), int(r[3]), int(r[4]),
                                                   int(r[5]), int(r[6]), int(r[7]), float(r[8]),
                                                   float(r[9]), float(r[10])))
        logs.append(DayLog(int(day), f[:, 3:4 + P], f[:, 2].astype(int), f[:, 4 + P:],
                           c[:, 2:], cycles, truth_delay, truth_cycles))
    return logs
