"""Gaussian-process likelihood of observed counts and Metropolis-Hastings over theta."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .core import GPHyper, IntersectionSpec, LaneCycleObservation, MHConfig
from .queuing import QueueParams, count_batch

LOG_2PI = math.log(2 * math.pi)


def kernel_matrix(t, hyper: GPHyper) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    diff = (t[:, None] - t[None, :]) / hyper.length_scale
    K = hyper.h0 * np.exp(-diff ** 2)
    K += hyper.noise ** 2 * (t[:, None] == t[None, :])
    return K


class _Gaussian:
    """Cholesky-factored covariance for repeated log-density evaluations."""

    def __init__(self, K: np.ndarray):
        c, lower = cho_factor(K, lower=True)
        if not np.all(np.isfinite(c)):
            raise FloatingPointError("covariance factorization failed")
        self.L = np.tril(c)
        self.n = K.shape[0]
        self.half_logdet = float(np.sum(np.log(np.diag(self.L))))

    def logpdf(self, resid: np.ndarray) -> np.ndarray:
        """Log density for residual rows ``(M, n)``."""
        z = solve_triangular(self.L, resid.T, lower=True, check_finite=False)
        quad = np.einsum("ij,ij->j", z, z)
        return -0.5 * quad - self.half_logdet - 0.5 * self.n * LOG_2PI


def _mean_batch(theta: np.ndarray, obs: LaneCycleObservation, xf: float,
                spec: IntersectionSpec):
    theta = np.atleast_2d(theta)
    xi, ok = count_batch(theta[:, :1], theta[:, 1:2], theta[:, 2:3], obs.red, obs.green, xf,
                         spec.capacity, spec.shockwave_traverse_time, obs.timestamps)
    return xi, ok.reshape(-1)


def log_likelihood_batch(theta: np.ndarray, obs: LaneCycleObservation, xf: float,
                         spec: IntersectionSpec, hyper: GPHyper,
                         gauss: _Gaussian | None = None) -> np.ndarray:
    gauss = gauss or _Gaussian(kernel_matrix(obs.timestamps, hyper))
    xi, ok = _mean_batch(theta, obs, xf, spec)
    resid = np.where(ok[:, None], obs.counts[None, :] - xi, 0.0)
    ll = gauss.logpdf(resid)
    valid = ok & (np.atleast_2d(theta)[:, 0] > 0)
    return np.where(valid, ll, -np.inf)


def log_likelihood(theta: QueueParams, obs: LaneCycleObservation, spec: IntersectionSpec,
                   hyper: GPHyper, xf: float | None = None) -> float:
    if obs.counts.size == 0:
        raise ValueError("log-likelihood needs at least one count sample")
    xf = obs.cycle_flow if xf is None else xf
    if xf is None:
        raise ValueError("cycle flow is required")
    return float(log_likelihood_batch(theta.as_array(), obs, xf, spec, hyper)[0])


@dataclass(frozen=True)
class MHResult:
    theta: QueueParams
    accepted: int
    kept: int
    low_confidence: bool
    initial: QueueParams


def initial_theta(obs: LaneCycleObservation, xf: float, spec: IntersectionSpec) -> np.ndarray:
    v_n = max(xf / obs.cycle_length, 1e-3)
    v_s = max(2 * v_n, 0.45)
    xi0 = float(obs.counts[0]) if obs.counts.size else 0.0
    return np.array([v_n, v_s, min(xi0, spec.capacity)])


def propose(rng: np.random.Generator, n: int, cfg: MHConfig, spec: IntersectionSpec,
            xf: float | None = None, T_g: float | None = None) -> np.ndarray:
    """Independent uniform draws from the proposal box.

    With ``xf`` and ``T_g`` the box is cut to v_n <= xf/T_g <= v_s, outside of which
    the dissipation time is infeasible and the likelihood is zero anyway.
    """
    u = rng.random((n, 3))
    vn_hi, vs_lo = cfg.vn_max, 0.0
    if xf is not None and T_g:
        split = xf / T_g
        if 0 < split < cfg.vs_max:
            vn_hi, vs_lo = min(cfg.vn_max, split), split
    v_n = vn_hi * (1.0 - u[:, 0])  # (0, vn_hi]
    lo = np.maximum(v_n, vs_lo)
    v_s = lo + (cfg.vs_max - lo) * (1.0 - u[:, 1])  # (lo, vs_max]
    xi0 = spec.capacity * u[:, 2]
    return np.column_stack([v_n, v_s, xi0])


def mh_infer(obs: LaneCycleObservation, xf: float, spec: IntersectionSpec, hyper: GPHyper,
             cfg: MHConfig, seed: int | np.random.SeedSequence | None = None,
             trace: list | None = None) -> MHResult:
    """Independence Metropolis-Hastings over (v_n, v_s, xi0) for one lane-cycle."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    gauss = _Gaussian(kernel_matrix(obs.timestamps, hyper))
    theta0 = initial_theta(obs, xf, spec)
    proposals = propose(rng, cfg.iterations, cfg, spec, xf, obs.green)
    log_u = np.log(rng.random(cfg.iterations))
    ll_prop = log_likelihood_batch(proposals, obs, xf, spec, hyper, gauss)
    ll_cur = float(log_likelihood_batch(theta0, obs, xf, spec, hyper, gauss)[0])

    accepted_idx = []
    chain_idx = np.empty(cfg.iterations, dtype=int)
    cur = -1  # -1 refers to theta0
    for k in range(cfg.iterations):
        ll = ll_prop[k]
        # -inf proposals never pass; -inf current state accepts any finite proposal
        ok = ll > -np.inf and (ll_cur == -np.inf or log_u[k] < ll - ll_cur)
        if ok:
            cur = k
            ll_cur = ll
            accepted_idx.append(k)
        chain_idx[k] = cur
        if trace is not None:
            trace.append((k, *proposals[k], ll, ok))

    init = QueueParams(*theta0)
    if cfg.estimator == "chain":
        keep = chain_idx[int(math.floor(cfg.burn_in_fraction * cfg.iterations)):]
        states = np.where(keep[:, None] >= 0, proposals[np.maximum(keep, 0)], theta0)
        if np.all(keep < 0):
            return MHResult(init, 0, 0, True, init)
        est = states.mean(axis=0)
        return MHResult(QueueParams(*est), len(accepted_idx), len(keep), False, init)

    n_acc = len(accepted_idx)
    kept = accepted_idx[int(math.floor(cfg.burn_in_fraction * n_acc)):]
    if not kept:
        return MHResult(init, 0, 0, True, init)
    est = proposals[kept].mean(axis=0)
    return MHResult(QueueParams(*est), n_acc, len(kept), False, init)


def task_seed(global_seed: int, lane: int, cycle: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([global_seed, lane, cycle])


def _run_task(args):
    obs, xf, spec, hyper, cfg, seed = args
    return mh_infer(obs, xf, spec, hyper, cfg, seed)


def mh_batch(tasks: Sequence[tuple[LaneCycleObservation, float, int]], spec: IntersectionSpec,
             hyper: GPHyper, cfg: MHConfig, jobs: int = 1) -> list[MHResult]:
    """Infer many lane-cycles; ``tasks`` holds ``(obs, cycle_flow, cycle_index)``.

    Seeds derive from ``(cfg.seed, lane, cycle_index)`` so results do not depend on
    scheduling or ``jobs``.
    """
    args = [(obs, xf, spec, hyper, cfg, task_seed(cfg.seed, obs.lane_id, ci))
            for obs, xf, ci in tasks]
    if jobs <= 1:
        return [_run_task(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_task, args, chunksize=64))


def write_trace(trace, path):
    with open(path, "w") as fh:
        fh.write("iteration,v_n,v_s,xi0,loglik,accepted\n")
        for k, vn, vs, x0, ll, ok in trace:
            fh.write(f"{k},{vn:.6g},{vs:.6g},{x0:.6g},{ll:.6g},{int(ok)}\n")
