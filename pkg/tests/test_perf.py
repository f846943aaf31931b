import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from oracles import point_queue_delay_oracle, shockwave_front_oracle, stopline_arrivals
from offline_tsc.core import NormStats, TransitionDataset, normalize_states
from offline_tsc.perf import (cycle_performance, interval_reward, lane_delay, max_queue,
                              shockwave_speeds, to_training_reward, write_reward_table)
from offline_tsc.queuing import QueueParams


def test_shockwave_speed_examples(spec):
    w1, w2 = shockwave_speeds(QueueParams(0.1, 0.5, 0.0), spec)
    assert w1 == pytest.approx(-1 / (spec.jam_density * 8 + 1 / 6))
    assert w1 == pytest.approx(-0.8108, abs=1e-4)
    assert w2 == -6.0
    near, _ = shockwave_speeds(QueueParams(0.5 - 1e-9, 0.5, 0.0), spec)
    assert -near == pytest.approx(spec.shockwave_speed, rel=1e-6)


def test_degenerate_geometry(spec):
    th = QueueParams(0.2, 0.5, 0.0)
    assert max_queue(th, 0.0, spec) == 0.0
    assert lane_delay(th, 0.0, spec) == 0.0
    T_r = 30.0
    q = max_queue(th, T_r, spec)
    assert lane_delay(th, T_r, spec) == pytest.approx(0.5 * T_r * q * spec.jam_density)
    assert max_queue(th, 2 * T_r, spec) > q


def test_performance_record(spec):
    th = QueueParams(0.1, 0.5, 3.0)
    p = cycle_performance(th, 40.0, spec)
    assert p.q0 == pytest.approx(3 / spec.jam_density)
    assert p.q_max >= p.q0 and p.delay >= 0
    assert p.w1 < 0 and p.w2 < 0
    assert (p.q_max, p.delay) == (max_queue(th, 40.0, spec), lane_delay(th, 40.0, spec))


def test_q_max_matches_front_oracle(spec):
    rng = np.random.default_rng(3)
    for _ in range(200):
        v_s = rng.uniform(0.3, 1.0)
        th = QueueParams(rng.uniform(0.02, 0.9 * v_s), v_s, rng.uniform(0, spec.capacity))
        T_r = rng.uniform(5, 90)
        w1, w2 = shockwave_speeds(th, spec)
        ref, _ = shockwave_front_oracle(th.xi0 / spec.jam_density, -w1, -w2, T_r)
        assert max_queue(th, T_r, spec) == pytest.approx(ref, rel=0.10)


def test_delay_matches_front_oracle_area(spec):
    th = QueueParams(0.2, 0.5, 4.0)
    w1, w2 = shockwave_speeds(th, spec)
    _, area = shockwave_front_oracle(4 / spec.jam_density, -w1, -w2, 45.0, dt=0.01)
    assert lane_delay(th, 45.0, spec) == pytest.approx(area * spec.jam_density, rel=0.01)


def test_delay_matches_discrete_event_oracle(spec):
    # discharge at the fundamental-diagram capacity, so the stopped-vehicle picture
    # and the shockwave picture describe the same traffic
    v_s = spec.jam_density / (1 / spec.free_flow_speed + 1 / spec.shockwave_speed)
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 300:
        th = QueueParams(rng.uniform(0.02, 0.9 * v_s), v_s, float(rng.integers(0, 8)))
        T_r = rng.uniform(10, 80)
        arrivals = stopline_arrivals(th.v_n, th.xi0, th.xi0 / spec.jam_density,
                                     spec.free_flow_speed, horizon=10_000)
        wait, stopped = point_queue_delay_oracle(arrivals, T_r, v_s)
        if stopped < 5:  # too few vehicles for a fluid comparison
            continue
        assert lane_delay(th, T_r, spec) == pytest.approx(wait, rel=0.15)
        checked += 1


def test_interval_reward_examples():
    assert interval_reward([10, 20], [1, 3]) == pytest.approx(17.5)
    assert interval_reward([7, 7, 7], [1, 5, 2]) == pytest.approx(7)
    assert interval_reward([10, 20], [0, 0]) == 0.0


@hsettings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0.1, 50)), min_size=1, max_size=20))
def test_reward_sandwich(pairs):
    d, x = zip(*pairs)
    r = interval_reward(d, x)
    assert min(d) - 1e-9 <= r <= max(d) + 1e-9


def _stats(delays, spec):
    D = spec.state_dim
    n = len(delays)
    ds = TransitionDataset(np.zeros((n, D)), np.tile([90, .25, .25, .25, .25], (n, 1)),
                           delays, np.zeros((n, D)), np.zeros(n))
    return normalize_states(ds, spec)


def test_training_reward_examples(spec):
    norm, stats = _stats([10.0, 20.0, 30.0], spec)
    assert norm.rewards.mean() == pytest.approx(5.0)
    assert norm.rewards.std() == pytest.approx(1.0)
    assert to_training_reward(-stats.reward_mean, stats) == pytest.approx(5.0)
    assert to_training_reward(25.0, stats) < to_training_reward(15.0, stats)
    assert isinstance(stats, NormStats)


@hsettings(max_examples=100, deadline=None)
@given(st.floats(0.02, 0.4), st.floats(0, 19), st.floats(1, 90), st.floats(0.1, 30))
def test_monotone_in_red_time(spec, v_n, xi0, T_r, extra):
    th = QueueParams(v_n, 0.5, xi0)
    assert max_queue(th, T_r + extra, spec) >= max_queue(th, T_r, spec)
    assert lane_delay(th, T_r + extra, spec) >= lane_delay(th, T_r, spec)
    assert max_queue(th, T_r, spec) >= xi0 / spec.jam_density


def test_reward_table(tmp_path):
    write_reward_table(tmp_path / "r.csv", [(0, 12.5, 4.2, [10.0, 0.0])])
    assert (tmp_path / "r.csv").read_text().splitlines() == [
        "interval,reward,normalized_reward,q_max", "0,12.500000,4.200000,10.000 0.000"]
