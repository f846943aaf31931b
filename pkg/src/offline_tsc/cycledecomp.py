"""Split an interval flow total into per-cycle flows.

Arrival rates are assumed proportional to each cycle's peak spatial count, and the
cycle flows must reproduce the interval total.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import LaneCycleObservation

log = logging.getLogger(__name__)


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class CycleDecomposition:
    zeta: float
    arrival_rates: np.ndarray
    cycle_flows: np.ndarray
    raw_cycle_flows: np.ndarray  # before clamping
    residual: float
    clamped: bool = False


def peak_counts(cycles: Sequence[LaneCycleObservation]) -> np.ndarray:
    """Max count over samples with t_r^c <= t < t_r^{c+1} for every cycle."""
    peaks = []
    for c in cycles:
        x = c.counts[c.timestamps < c.cycle_length] if c.counts.size else c.counts
        peaks.append(float(x.max()) if x.size else 0.0)
    return np.array(peaks)


def decompose(xf: float, cycles: Sequence[LaneCycleObservation], residual: float,
              boundary_counts: Sequence[float] | None = None) -> CycleDecomposition:
    """Per-cycle flows for one lane over one flow interval.

    ``boundary_counts`` holds the C + 1 counts at cycle starts and at the end of the
    last cycle. When omitted, each cycle's first sample is used and the final
    boundary is ``residual``.
    """
    C = len(cycles)
    if C < 1:
        raise DecompositionError("at least one complete cycle is required")
    if boundary_counts is None:
        boundary_counts = [float(c.counts[0]) if c.counts.size else 0.0 for c in cycles]
        boundary_counts.append(residual)
    b = np.asarray(boundary_counts, dtype=float)
    if b.shape != (C + 1,):
        raise DecompositionError(f"need {C + 1} boundary counts, got {b.shape}")
    m = peak_counts(cycles)
    T = np.array([c.cycle_length for c in cycles])
    drops = b[:-1] - b[1:]
    denom = float(np.sum(m * T))
    numer = xf - residual - float(drops.sum())
    if denom <= 0:
        if abs(numer) > 1e-12 and xf != 0:
            raise DecompositionError(
                f"all peak counts are zero but flow {xf:g} is non-zero; counts contradict flow")
        zeta = 0.0
    else:
        zeta = numer / denom
    # pre-clamp flows use the raw zeta so that conservation stays exact
    raw = drops + zeta * m * T
    if zeta < 0:
        log.warning("negative normalized arrival rate %.4g clamped to 0", zeta)
        zeta = 0.0
    rates = zeta * m
    flows = raw.copy()
    clamped = bool(np.any(flows < 0))
    if clamped:
        flows = _clamp_redistribute(flows)
    return CycleDecomposition(zeta=zeta, arrival_rates=rates, cycle_flows=flows,
                              raw_cycle_flows=raw, residual=float(residual), clamped=clamped)


def _clamp_redistribute(flows: np.ndarray) -> np.ndarray:
    """Zero negative flows and take the deficit from the positive ones pro rata."""
    flows = flows.copy()
    target = flows.sum()
    for _ in range(len(flows)):
        neg = flows < 0
        if not neg.any():
            break
        flows[neg] = 0.0
        pos = flows > 0
        excess = flows.sum() - target
        if not pos.any() or excess <= 0:
            break
        flows[pos] -= excess * flows[pos] / flows[pos].sum()
    return np.maximum(flows, 0.0)
