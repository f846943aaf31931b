import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from oracles import fluid_count_oracle
from offline_tsc.queuing import (CycleTiming, InfeasibleFlow, QueueParams, breakpoints,
                                 count_components, cumulative_arrival, cumulative_departure,
                                 dissipation_time, dump_trajectory, theoretical_count)

THETA = QueueParams(0.1, 0.5, 2.0)
TIMING = CycleTiming(30.0, 30.0)


def random_instance(rng, spec, vs_max=0.8):
    """Feasible (theta, timing, x_f) with the initial count inside the detection range."""
    v_s = rng.uniform(0.3, vs_max)
    v_n = rng.uniform(0.02, 0.9 * v_s)
    T_r, T_g = rng.uniform(10, 80, 2)
    xi0 = rng.uniform(0, spec.capacity)
    hi = min(v_s * T_g, xi0 + v_n * (T_r + T_g))
    xf = rng.uniform(v_n * T_g, max(hi, v_n * T_g))
    return QueueParams(v_n, v_s, xi0), CycleTiming(T_r, T_g), xf


def oracle_error(th, tm, xf, spec):
    t, ref, _ = fluid_count_oracle(th.v_n, th.v_s, th.xi0, tm.red, tm.green, xf,
                                   spec.capacity, spec.shockwave_traverse_time)
    t = np.minimum(t, tm.cycle_length)
    return float(np.max(np.abs(theoretical_count(th, tm, xf, spec, t) - ref)))


def test_arrival_examples():
    assert cumulative_arrival(THETA, 0.0) == 2.0
    assert cumulative_arrival(THETA, 30.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        QueueParams(0.0, 0.5, 2.0)
    with pytest.raises(ValueError):
        cumulative_arrival(THETA, 61.0, T_c=60.0)


def test_departure_examples():
    assert np.all(cumulative_departure(THETA, TIMING, 6.0, np.linspace(0, 30, 7)) == 0)
    assert cumulative_departure(THETA, TIMING, 6.0, 60.0) == 6.0
    assert cumulative_departure(THETA, TIMING, 6.0, 40.0) == pytest.approx(4.0)
    left = cumulative_departure(THETA, TIMING, 6.0, 37.5 - 1e-9)
    right = cumulative_departure(THETA, TIMING, 6.0, 37.5 + 1e-9)
    assert left == pytest.approx(3.75, abs=1e-6) and right == pytest.approx(3.75, abs=1e-6)


def test_dissipation_examples():
    th = QueueParams(0.1, 0.5, 0.0)
    assert dissipation_time(th, 40, 4.0) == pytest.approx(0.0)
    assert dissipation_time(th, 40, 20.0) == pytest.approx(40.0)
    assert dissipation_time(th, 40, 12.0) == pytest.approx(20.0)
    with pytest.raises(InfeasibleFlow, match="x_f=25"):
        dissipation_time(th, 40, 25.0)
    with pytest.raises(InfeasibleFlow):
        dissipation_time(th, 40, 1.0)


def test_count_examples(spec):
    th = QueueParams(0.1, 0.5, 5.0)
    assert theoretical_count(th, TIMING, 6.0, spec, 0.0) == pytest.approx(5.0)
    assert theoretical_count(THETA, TIMING, 6.0, spec, 30.0) == pytest.approx(5.0)


def test_spec_trajectory_matches_oracle(spec):
    assert oracle_error(THETA, TIMING, 6.0, spec) <= 0.6


def test_random_instances_match_oracle(spec):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        th, tm, xf = random_instance(rng, spec, vs_max=1.2)
        worst = max(worst, oracle_error(th, tm, xf, spec))
    assert worst <= 0.6


def test_spillback_caps_count(spec):
    # long red with heavy arrivals fills the detection range
    th = QueueParams(0.4, 0.5, 10.0)
    tm = CycleTiming(80.0, 40.0)
    xi = theoretical_count(th, tm, 19.0, spec, np.linspace(0, 80, 81))
    assert xi.max() == pytest.approx(spec.capacity)


def test_ties_and_degenerate_green(spec):
    # x_f = v_s * T_g: saturated for the whole green, tau == T_g
    th = QueueParams(0.2, 0.5, 4.0)
    tm = CycleTiming(30.0, 30.0)
    t = np.linspace(0, 60, 601)
    assert np.all(np.isfinite(theoretical_count(th, tm, 15.0, spec, t)))


def test_clamps_initial_count_over_capacity(spec, caplog):
    th = QueueParams(0.1, 0.5, 25.0)
    with caplog.at_level("WARNING"):
        xi = theoretical_count(th, TIMING, 6.0, spec, 0.0)
    assert xi == pytest.approx(spec.capacity)
    assert "clamping" in caplog.text


def test_dump_trajectory(spec, tmp_path):
    dump_trajectory(THETA, TIMING, 6.0, spec, tmp_path / "xi.csv")
    rows = (tmp_path / "xi.csv").read_text().splitlines()
    assert rows[0] == "t,xi" and len(rows) == 62
    assert rows[1] == "0,2.000000"


@hsettings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_continuity_at_breakpoints(spec, seed):
    th, tm, xf = random_instance(np.random.default_rng(seed), spec, vs_max=1.5)
    eps = 1e-6
    for b in breakpoints(th, tm, xf, spec):
        lo, hi = theoretical_count(th, tm, xf, spec, [b - eps, b + eps])
        assert abs(lo - hi) <= th.v_s * 2 * eps + 1e-9


@hsettings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounds_and_monotonicity(spec, seed):
    th, tm, xf = random_instance(np.random.default_rng(seed), spec)
    t = np.linspace(0, tm.cycle_length, 400)
    xi = theoretical_count(th, tm, xf, spec, t)
    xi1, _ = count_components(th, tm, xf, spec, t)
    assert np.all(xi >= -1e-9)
    assert np.all(xi <= spec.capacity + th.xi0 + 1e-9)
    assert np.all(xi <= xi1 + 1e-9)
    A = cumulative_arrival(th, t, tm.cycle_length)
    D = cumulative_departure(th, tm, xf, t)
    assert np.all(np.diff(A) >= 0) and np.all(np.diff(D) >= -1e-12)
    assert cumulative_departure(th, tm, xf, tm.cycle_length) == xf
