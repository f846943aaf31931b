"""Single-cycle shockwave queuing model.

A lane-cycle starts at red onset: red lasts ``T_r`` seconds, then green lasts ``T_g``.
Arrivals are constant-rate, the queue discharges at saturation rate until it is
gone, and the detection range only admits new vehicles once space freed at the
stopline has propagated back to its upstream edge (``t_S`` seconds later).

All array functions broadcast over parameter batches, so ``v_n`` etc. may be
arrays of shape ``(M, 1)`` evaluated against timestamps of shape ``(n,)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import IntersectionSpec

log = logging.getLogger(__name__)


class InfeasibleFlow(ValueError):
    """The cycle flow cannot be produced by the given parameters."""


@dataclass(frozen=True)
class QueueParams:
    v_n: float
    v_s: float
    xi0: float

    def __post_init__(self):
        if not 0 < self.v_n < self.v_s:
            raise ValueError(f"need 0 < v_n < v_s, got v_n={self.v_n}, v_s={self.v_s}")
        if self.xi0 < 0:
            raise ValueError(f"xi0 must be non-negative, got {self.xi0}")

    def as_array(self) -> np.ndarray:
        return np.array([self.v_n, self.v_s, self.xi0])


@dataclass(frozen=True)
class CycleTiming:
    red: float
    green: float

    @property
    def cycle_length(self) -> float:
        return self.red + self.green


def _check_t(t, T_c):
    t = np.asarray(t, dtype=float)
    if np.any(t < -1e-9) or np.any(t > T_c + 1e-9):
        raise ValueError(f"t outside the cycle [0, {T_c}]")
    return t


def cumulative_arrival(theta: QueueParams, t, T_c: float = np.inf):
    t = _check_t(t, T_c)
    return theta.xi0 + theta.v_n * t


def dissipation_time(theta: QueueParams, T_g: float, xf: float) -> float:
    if not theta.v_s > theta.v_n:
        raise InfeasibleFlow(f"v_s={theta.v_s} must exceed v_n={theta.v_n}")
    tau = (xf - theta.v_n * T_g) / (theta.v_s - theta.v_n)
    if not -1e-9 <= tau <= T_g + 1e-9:
        raise InfeasibleFlow(f"dissipation time {tau:g} outside [0, {T_g:g}] for "
                             f"theta={theta}, x_f={xf:g}")
    return min(max(tau, 0.0), T_g)


def _departure(v_n, v_s, tau, T_r, t):
    """Piecewise departure curve; zero for t <= T_r (including t < 0)."""
    sat = v_s * (t - T_r)
    after = v_s * tau + v_n * (t - T_r - tau)
    return np.where(t <= T_r, 0.0, np.where(t <= T_r + tau, sat, after))


def cumulative_departure(theta: QueueParams, timing: CycleTiming, xf: float, t):
    T_c = timing.cycle_length
    t = _check_t(t, T_c)
    tau = dissipation_time(theta, timing.green, xf)
    d = _departure(theta.v_n, theta.v_s, tau, timing.red, t)
    # exact endpoint, free of rounding in the piecewise expression
    return np.where(np.isclose(t, T_c, rtol=0, atol=1e-12), xf, d)


def count_batch(v_n, v_s, xi0, T_r, T_g, xf, capacity, t_s, t):
    """Theoretical spatial count for parameter batches.

    Returns ``(xi, feasible)``; rows with infeasible parameters get ``nan``.
    """
    v_n = np.asarray(v_n, dtype=float)
    v_s = np.asarray(v_s, dtype=float)
    xi0 = np.minimum(np.asarray(xi0, dtype=float), capacity)
    t = np.asarray(t, dtype=float)
    T_c = T_r + T_g
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = (xf - v_n * T_g) / (v_s - v_n)
    feasible = (v_s > v_n) & (tau >= -1e-9) & (tau <= T_g + 1e-9)
    tau = np.clip(np.where(feasible, tau, 0.0), 0.0, T_g)

    # A_t - D_t
    xi1 = np.where(t <= T_r, xi0 + v_n * t,
                   np.where(t <= T_r + tau, xi0 + v_s * T_r + (v_n - v_s) * t,
                            xi0 + v_n * T_c - xf))

    # D_{t - t_S} - D_t, tabulated by regime. After dissipation the pieces are:
    #   t <= T_r + t_S          : upstream departures not yet started -> -D_t
    #   t <= T_r + tau + t_S    : upstream still discharging saturated
    #   otherwise               : both ends at arrival rate -> -v_n t_S
    # The first piece is only non-empty when t_S > tau.
    red_part = np.zeros_like(v_n * t)
    sat_part = np.where(t <= T_r + t_s, -v_s * (t - T_r), -v_s * t_s)
    post_lag = -xf + v_n * T_c - v_n * t
    post_sat = v_n * T_c - v_s * (t_s + T_r) - xf + (v_s - v_n) * t
    post_free = -v_n * t_s + red_part
    post = np.where(t <= T_r + t_s, post_lag,
                    np.where(t <= T_r + tau + t_s, post_sat, post_free))
    xi2 = np.where(t <= T_r, red_part, np.where(t <= T_r + tau, sat_part, post))

    xi = np.minimum(xi1, xi2 + capacity)
    xi = np.where(feasible, xi, np.nan)
    return xi, feasible


def theoretical_count(theta: QueueParams, timing: CycleTiming, xf: float,
                      spec: IntersectionSpec, t):
    t = _check_t(t, timing.cycle_length)
    dissipation_time(theta, timing.green, xf)
    xi0 = theta.xi0
    if xi0 > spec.capacity:
        log.warning("initial count %.3f exceeds detection capacity %.3f; clamping",
                    xi0, spec.capacity)
    xi, _ = count_batch(theta.v_n, theta.v_s, xi0, timing.red, timing.green, xf,
                        spec.capacity, spec.shockwave_traverse_time, t)
    return xi


def count_components(theta: QueueParams, timing: CycleTiming, xf: float,
                     spec: IntersectionSpec, t):
    """``(xi1, xi2)`` before the spillback minimum; used by diagnostics and tests."""
    t = np.asarray(t, dtype=float)
    tau = dissipation_time(theta, timing.green, xf)
    xi0 = min(theta.xi0, spec.capacity)
    A = xi0 + theta.v_n * t
    D = _departure(theta.v_n, theta.v_s, tau, timing.red, t)
    D_lag = _departure(theta.v_n, theta.v_s, tau, timing.red, t - spec.shockwave_traverse_time)
    return A - D, D_lag - D


def breakpoints(theta: QueueParams, timing: CycleTiming, xf: float,
                spec: IntersectionSpec) -> np.ndarray:
    tau = dissipation_time(theta, timing.green, xf)
    T_r, t_s = timing.red, spec.shockwave_traverse_time
    pts = np.array([T_r, T_r + tau, T_r + t_s, T_r + tau + t_s])
    return np.unique(pts[(pts > 0) & (pts < timing.cycle_length)])


def dump_trajectory(theta: QueueParams, timing: CycleTiming, xf: float,
                    spec: IntersectionSpec, path):
    """Write xi_t sampled every second as ``t,xi`` rows."""
    t = np.arange(0.0, np.floor(timing.cycle_length) + 1)
    t = t[t <= timing.cycle_length]
    xi = theoretical_count(theta, timing, xf, spec, t)
    with open(path, "w") as fh:
        fh.write("t,xi\n")
        for a, b in zip(t, xi):
            fh.write(f"{a:g},{b:.6f}\n")
