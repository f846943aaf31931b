"""Queue length, delay and reward from inferred queuing parameters.

Unit conventions:

    q_0, q_max        meters      (count / jam density)
    shockwave speeds  m/s         (negative = propagating upstream)
    queue area        m * s       (enclosed by the shockwave boundaries)
    delay d           veh * s     (area * jam density)

The queue geometry works with wave *magnitudes*: the tail moves upstream at
``|w_1|`` from ``q_0`` and the discharge front leaves the stopline at ``|w_2|``
when the green starts, so they meet at ``q_max >= q_0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import IntersectionSpec, NormStats
from .queuing import QueueParams


@dataclass(frozen=True)
class CyclePerformance:
    w1: float
    w2: float
    q0: float
    q_max: float
    delay: float


def shockwave_speeds(theta: QueueParams, spec: IntersectionSpec) -> tuple[float, float]:
    if theta.v_n == theta.v_s:
        raise ZeroDivisionError("v_n == v_s leaves the stopping shockwave undefined")
    pace = spec.jam_density * (1.0 / theta.v_n - 1.0 / theta.v_s)
    w1 = -1.0 / (pace + spec.shockwave_traverse_time / spec.detection_range)
    w2 = -spec.shockwave_speed
    return w1, w2


def _geometry(theta: QueueParams, T_r: float, spec: IntersectionSpec):
    w1, w2 = shockwave_speeds(theta, spec)
    a, b = abs(w1), abs(w2)
    if b <= a:
        raise ValueError(f"degenerate fundamental diagram: |w2|={b} <= |w1|={a}")
    q0 = theta.xi0 / spec.jam_density
    meet = (q0 + b * T_r) / (b - a)  # time the discharge front reaches the tail
    q_max = b * (q0 + a * T_r) / (b - a)
    return w1, w2, q0, meet, q_max


def max_queue(theta: QueueParams, T_r: float, spec: IntersectionSpec) -> float:
    return _geometry(theta, T_r, spec)[4]


def lane_delay(theta: QueueParams, T_r: float, spec: IntersectionSpec) -> float:
    _, _, q0, meet, q_max = _geometry(theta, T_r, spec)
    area = 0.5 * (T_r * q_max + q0 * meet)
    return area * spec.jam_density


def cycle_performance(theta: QueueParams, T_r: float, spec: IntersectionSpec) -> CyclePerformance:
    w1, w2, q0, meet, q_max = _geometry(theta, T_r, spec)
    delay = 0.5 * (T_r * q_max + q0 * meet) * spec.jam_density
    return CyclePerformance(w1, w2, q0, q_max, delay)


def interval_reward(delays: Sequence[float], flows: Sequence[float]) -> float:
    """Flow-weighted mean of lane-cycle delays; 0 when nothing flowed."""
    d = np.asarray(delays, dtype=float).ravel()
    x = np.asarray(flows, dtype=float).ravel()
    total = x.sum()
    if total <= 0:
        return 0.0
    return float(np.dot(d, x) / total)


def to_training_reward(r_t, stats: NormStats):
    return stats.norm_reward(r_t)


def write_reward_table(path, rows):
    """Rows of ``(interval, r_t, normalized, [q_max per lane])``."""
    with open(path, "w") as fh:
        fh.write("interval,reward,normalized_reward,q_max\n")
        for interval, r, z, qs in rows:
            fh.write(f"{interval},{r:.6f},{z:.6f},{' '.join(f'{q:.3f}' for q in qs)}\n")
