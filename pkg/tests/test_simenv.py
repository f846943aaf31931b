import dataclasses
import filecmp

import numpy as np
import pytest

from offline_tsc.core import (INTERVAL_SECONDS, INTERVALS_PER_DAY, IntersectionSpec, TimingPlan,
                              normalize_states)
from offline_tsc.orl import write_dataset
from offline_tsc.perf import max_queue
from offline_tsc.queuing import QueueParams
from offline_tsc.simenv import (ArrivalProfile, FixedPlan, IntersectionSim, behavior_policy,
                                evaluate, fixed_plan, generate_dataset, generate_logs,
                                read_logs, run_day, write_logs)

PLAN = TimingPlan(100, (.25, .25, .25, .25), 60, 120)


def run(settings, rates, intervals=12, seed=0, spec=None, plan=PLAN):
    spec = spec or settings.spec
    return run_day(spec, settings.sim, ArrivalProfile.constant(rates), FixedPlan(plan), seed,
                   intervals=intervals)


def test_zero_arrivals(settings):
    log = run(settings, [0.0] * 8)
    assert np.all(log.flows == 0) and np.all(log.counts == 0)
    assert np.all(log.truth_delay == 0)
    assert all(c.delay == 0 and c.q_max == 0 for c in log.truth_cycles)


def test_always_green_lane_never_queues(settings):
    phi = np.zeros((1, 2, 2))
    phi[0, :, 0] = 1  # lane 0 is green in every phase
    phi[0, 1, 1] = 1
    spec = IntersectionSpec(2, 2, 1, phi)
    plan = TimingPlan(100, (0.5, 0.5), 60, 120)
    engine = IntersectionSim(spec, settings.sim, ArrivalProfile.constant([0.3, 0.1]), seed=1)
    for _ in range(6):
        engine.run_interval(plan)
    assert engine.cum_arr[engine.t, 0] > 0
    assert np.array_equal(engine.cum_arr[:, 0], engine.cum_dep[:, 0])
    assert engine.log().truth_delay[:, 0].sum() == 0


@pytest.mark.parametrize("rate", [0.04, 0.05, 0.06])
def test_cycle_queue_matches_shockwave_formula(settings, rate):
    log = run(settings, [rate] * 8, intervals=48, seed=2)
    cycles = [c for c in log.truth_cycles if c.lane == 0 and c.start > 0]
    red = cycles[0].green_start - cycles[0].start
    expected = max_queue(QueueParams(rate, settings.sim.saturation_rate, 0.0), red, settings.spec)
    assert np.mean([c.q_max for c in cycles]) == pytest.approx(expected, rel=0.10)


def test_full_observability_with_long_range(settings):
    big = dataclasses.replace(settings.spec, detection_range=1e5,
                              shockwave_traverse_time=1e5 / settings.spec.shockwave_speed)
    engine = IntersectionSim(big, settings.sim, ArrivalProfile.constant([0.3] * 8), seed=3)
    for _ in range(4):
        engine.run_interval(PLAN)
    true = engine.cum_arr[:engine.t + 1] - engine.cum_dep[:engine.t + 1]
    assert np.array_equal(engine.detected_counts(), true)


def test_spillback_truncates_detected_count(settings):
    log = run(settings, [0.45, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05, 0.05], intervals=6, seed=4)
    engine_queue = log.truth_cycles
    assert log.counts[:, 0].max() == pytest.approx(settings.spec.capacity)
    longest = max(c.q_max for c in engine_queue if c.lane == 0)
    assert longest * settings.spec.jam_density > settings.spec.capacity


def test_vehicle_conservation(settings):
    engine = IntersectionSim(settings.spec, settings.sim,
                             ArrivalProfile.constant([0.1, 0.2, 0.05, 0.0, 0.3, 0.1, 0.05, 0.02]),
                             seed=5)
    for i in range(24):
        engine.run_interval(PLAN)
        assert np.all(engine.in_system >= 0)
    assert np.all(np.diff(engine.cum_arr[:engine.t + 1], axis=0) >= 0)
    assert np.all(np.diff(engine.cum_dep[:engine.t + 1], axis=0) >= 0)
    log = engine.log()
    assert np.array_equal(log.flows.sum(axis=0), engine.cum_dep[engine.t])
    assert np.array_equal(engine.cum_arr[engine.t],
                          engine.cum_dep[engine.t] + engine.in_system)


def test_step_api(settings):
    engine = IntersectionSim(settings.spec, settings.sim, ArrivalProfile.constant([0.1] * 8))
    with pytest.raises(ValueError, match="timing plan"):
        engine.step()
    engine.step(PLAN, dt=10)
    for _ in range(INTERVAL_SECONDS - 10):
        engine.step()
    with pytest.raises(ValueError):
        engine.step()
    engine.step(PLAN)
    assert engine.t == INTERVAL_SECONDS + 1


def test_observations_have_interval_shape(settings):
    log = generate_logs(settings, settings.demand, 1, seed=0)[0]
    assert log.n_intervals == INTERVALS_PER_DAY
    obs = log.observation(100)
    assert obs.counts.shape == (60, settings.spec.lane_count)
    assert all(100 * 300 <= c.start_time < 101 * 300 for c in obs.cycles)
    assert np.all(log.truth_delay >= 0)


def test_determinism_and_dataset_bytes(settings, tmp_path):
    a, logs_a = generate_dataset(settings, settings.demand, 2, seed=9,
                                 reward_fn=lambda log: log.truth_delay.sum(axis=1))
    b, _ = generate_dataset(settings, settings.demand, 2, seed=9,
                            reward_fn=lambda log: log.truth_delay.sum(axis=1))
    write_dataset(tmp_path / "a.csv", a, settings.spec, None, "h")
    write_dataset(tmp_path / "b.csv", b, settings.spec, None, "h")
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)
    c, _ = generate_dataset(settings, settings.demand, 2, seed=10,
                            reward_fn=lambda log: log.truth_delay.sum(axis=1))
    assert not np.array_equal(a.actions, c.actions)
    write_logs(tmp_path / "logs", logs_a, settings.spec)
    back = read_logs(tmp_path / "logs", settings.spec)
    assert np.array_equal(back[1].counts, logs_a[1].counts)
    assert back[1].cycles == logs_a[1].cycles


def test_seven_days_give_2016_transitions(settings):
    data, _ = generate_dataset(settings, settings.demand, 7, seed=1)
    assert len(data) == 7 * 288 == 2016
    assert data.terminals.sum() == 7
    assert np.all(np.isnan(data.rewards))


def test_no_days_means_empty_dataset(settings):
    data, logs = generate_dataset(settings, settings.demand, 0, seed=1)
    assert len(data) == 0 and logs == []
    with pytest.raises(ValueError, match="empty"):
        normalize_states(data, settings.spec)


def test_behavior_plans_are_valid(settings):
    ctl = behavior_policy(settings, 3)
    log = generate_logs(settings, settings.demand, 1, seed=3)[0]
    for i in (0, 50, 100, 200):
        plan = ctl.plan(log.observation(i))
        assert settings.spec.cycle_min <= plan.cycle_length <= settings.spec.cycle_max
        assert abs(sum(plan.green_ratios) - 1) < 1e-9


def test_evaluation_is_reproducible_and_load_sensitive(settings):
    calm = dataclasses.replace(settings.demand)
    heavy = dataclasses.replace(settings.demand,
                                base=(0.2,) + settings.demand.base[1:])
    ctl = fixed_plan(settings)
    a = evaluate(ctl, settings, calm, [0], seed=1)
    b = evaluate(ctl, settings, calm, [0], seed=1)
    assert a.total_delay == b.total_delay and np.isfinite(a.mean_delay)
    h = evaluate(ctl, settings, heavy, [0], seed=1)
    assert h.mean_delay > a.mean_delay
    calm_lane = run(settings, [0.05] * 8, seed=6).truth_delay[:, 0].sum()
    busy_lane = run(settings, [0.2] + [0.05] * 7, seed=6).truth_delay[:, 0].sum()
    assert busy_lane > calm_lane
    rows = list(a.rows())
    assert rows[-1] == ("mean", a.mean_delay, a.mean_queue)
