"""In-sample offline RL (sparse Q-learning) for cycle length / green split control.

Every Q evaluation inside the losses uses dataset actions only; nothing here ever
talks to the simulator.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (IntersectionSpec, IntervalObservation, NormStats, SqlConfig, TimingPlan,
                   TransitionDataset, spec_hash)
from .nnet import AdamState, Mlp, adam_step, load_checkpoint, mlp_arrays, mlp_from_arrays, \
    save_checkpoint

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
LOGIT_CLIP = 30.0


# ---------------------------------------------------------------- state encoding

def phase_pool(flows, phase_id, phase_matrix) -> np.ndarray:
    """Per-phase demand: flows @ (phase_id . phase_matrix)^T."""
    phase_id = np.asarray(phase_id, dtype=float)
    if phase_id.ndim != 1 or not np.all((phase_id == 0) | (phase_id == 1)) or phase_id.sum() != 1:
        raise ValueError(f"phase order id must be one-hot, got {phase_id}")
    pattern = np.tensordot(phase_id, np.asarray(phase_matrix, dtype=float), axes=1)  # (P, L)
    return np.asarray(flows, dtype=float) @ pattern.T


def one_hot(k: int, n: int) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v


def build_state(flows, counts, phase_order: int, spec: IntersectionSpec) -> np.ndarray:
    """Raw augmented state [flows, counts, order one-hot, phase-pooled demand]."""
    pid = one_hot(phase_order, spec.phase_order_count)
    flows = np.asarray(flows, dtype=float)
    return np.concatenate([flows, np.asarray(counts, dtype=float), pid,
                           phase_pool(flows, pid, spec.phase_order_matrix)])


def state_from_observation(obs: IntervalObservation, spec: IntersectionSpec) -> np.ndarray:
    return build_state(obs.flows, obs.counts.mean(axis=0), obs.phase_order, spec)


def augmentation_noise(rng: np.random.Generator, shape, sigma: float, clip: float) -> np.ndarray:
    if sigma == 0:
        return np.zeros(shape)
    return np.clip(sigma * rng.standard_normal(shape), -clip, clip)


# ---------------------------------------------------------------- SQL objectives

def sql_v_loss(q, v, alpha: float):
    x = np.asarray(q, dtype=float) - np.asarray(v, dtype=float)
    z = 1.0 + x / (2 * alpha)
    return np.where(z > 0, z * z, 0.0) - x / alpha


def sql_v_loss_grad(q, v, alpha: float):
    """Derivative of :func:`sql_v_loss` with respect to ``v``."""
    x = np.asarray(q, dtype=float) - np.asarray(v, dtype=float)
    z = 1.0 + x / (2 * alpha)
    dx = np.where(z > 0, z / alpha, 0.0) - 1.0 / alpha
    return -dx


def optimal_value(q, alpha: float) -> float:
    """Scalar v minimizing mean sql_v_loss(q, v): solves mean((1 + (q - v)/2a)+) = 1."""
    q = np.sort(np.asarray(q, dtype=float).ravel())[::-1]
    n = len(q)
    s = np.cumsum(q)
    for k in range(1, n + 1):
        v = (s[k - 1] + 2 * alpha * (k - n)) / k
        if k == n or 1 + (q[k] - v) / (2 * alpha) <= 0:
            return float(v)
    raise AssertionError("unreachable")


def sql_pi_weight(q, v, alpha: float):
    x = np.asarray(q, dtype=float) - np.asarray(v, dtype=float)
    z = 1.0 + x / (2 * alpha)
    return np.where(z > 0, z, 0.0)


# ---------------------------------------------------------------- policy

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def squash(out: np.ndarray) -> np.ndarray:
    """Raw head -> unit-box action: sigmoid cycle, softmax green ratios."""
    out = np.atleast_2d(out)
    cyc = _sigmoid(out[:, :1])
    logits = np.clip(out[:, 1:], -LOGIT_CLIP, LOGIT_CLIP)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return np.hstack([cyc, e / e.sum(axis=1, keepdims=True)])


def squash_backward(mu: np.ndarray, out: np.ndarray, g_mu: np.ndarray) -> np.ndarray:
    g = np.empty_like(g_mu)
    g[:, 0] = g_mu[:, 0] * mu[:, 0] * (1 - mu[:, 0])
    p, gp = mu[:, 1:], g_mu[:, 1:]
    g[:, 1:] = p * (gp - np.sum(gp * p, axis=1, keepdims=True))
    g[:, 1:] *= np.abs(out[:, 1:]) <= LOGIT_CLIP
    return g


@dataclass
class GaussianPolicy:
    net: Mlp
    log_std: np.ndarray

    def mean(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        mu = squash(self.net.forward(np.atleast_2d(s)))
        return mu[0] if s.ndim == 1 else mu

    def log_prob(self, s, a) -> np.ndarray:
        mu = self.mean(np.atleast_2d(s))
        ls = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        z = (np.atleast_2d(a) - mu) / np.exp(ls)
        return np.sum(-0.5 * z * z - ls - 0.5 * math.log(2 * math.pi), axis=1)

    def weighted_nll(self, s, a, w):
        """Loss -mean(w * log pi(a|s)) and gradients (net params, log_std)."""
        out = self.net.forward(np.atleast_2d(s))
        mu = squash(out)
        ls = np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        var = np.exp(2 * ls)
        diff = np.atleast_2d(a) - mu
        logp = np.sum(-0.5 * diff ** 2 / var - ls - 0.5 * math.log(2 * math.pi), axis=1)
        n = len(logp)
        w = np.asarray(w, dtype=float).reshape(-1)
        loss = -float(np.mean(w * logp))
        g_mu = -(w[:, None] * diff / var) / n
        grads, _ = self.net.backward(squash_backward(mu, out, g_mu))
        inside = (self.log_std >= LOG_STD_MIN) & (self.log_std <= LOG_STD_MAX)
        g_ls = -np.sum(w[:, None] * (diff ** 2 / var - 1.0), axis=0) / n * inside
        return loss, grads, g_ls


# ---------------------------------------------------------------- agent

@dataclass
class Agent:
    q: Mlp
    v: Mlp
    v_target: Mlp
    pi: GaussianPolicy
    opt_q: AdamState
    opt_v: AdamState
    opt_pi: AdamState
    rng: np.random.Generator
    steps: int = 0

    @classmethod
    def create(cls, state_dim: int, action_dim: int, cfg: SqlConfig) -> "Agent":
        rng = np.random.default_rng(cfg.seed)
        hidden = [cfg.hidden] * cfg.depth
        q = Mlp([state_dim + action_dim, *hidden, 1], rng)
        v = Mlp([state_dim, *hidden, 1], rng)
        pi_net = Mlp([state_dim, *hidden, action_dim], rng)
        pi = GaussianPolicy(pi_net, np.full(action_dim, -1.0))
        mk = lambda: AdamState(lr=cfg.learning_rate)  # noqa: E731
        return cls(q, v, v.copy(), pi, mk(), mk(), mk(), rng)

    def q_value(self, s, a):
        return self.q.forward(np.hstack([s, a]))[:, 0]


def value_loss(agent: Agent, s, a, s_aug, alpha: float):
    """SQL value objective on augmented states; returns loss and V gradients."""
    q = agent.q_value(s, a)
    v = agent.v.forward(s_aug)[:, 0]
    loss = float(np.mean(sql_v_loss(q, v, alpha)))
    g = sql_v_loss_grad(q, v, alpha) / len(q)
    grads, _ = agent.v.backward(g[:, None])
    return loss, grads


def q_loss(agent: Agent, s_aug, a, r, s_next, done, gamma: float):
    target = r + gamma * (1.0 - done) * agent.v_target.forward(s_next)[:, 0]
    pred = agent.q_value(s_aug, a)
    err = target - pred
    loss = float(np.mean(err ** 2))
    grads, _ = agent.q.backward((-2.0 * err / len(err))[:, None])
    return loss, grads


def policy_loss(agent: Agent, s, a, alpha: float):
    q = agent.q_value(s, a)
    v = agent.v.forward(s)[:, 0]
    w = sql_pi_weight(q, v, alpha)
    loss, grads, g_ls = agent.pi.weighted_nll(s, a, w)
    return loss, grads, g_ls, w


def _check_finite(name, value):
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite {name} loss")


def train_step(agent: Agent, data: TransitionDataset, cfg: SqlConfig,
               idx: np.ndarray | None = None) -> dict:
    """One gradient step on V, Q and pi from a uniformly drawn batch."""
    rng = agent.rng
    if idx is None:
        idx = rng.integers(0, len(data), size=cfg.batch_size)
    s, a, r = data.states[idx], data.actions[idx], data.rewards[idx]
    s2, done = data.next_states[idx], data.terminals[idx]
    s_aug = s + augmentation_noise(rng, s.shape, cfg.aug_sigma, cfg.aug_clip)

    lv, gv = value_loss(agent, s, a, s_aug, cfg.alpha)
    _check_finite("value", lv)
    adam_step(agent.opt_v, agent.v.params, gv)

    lq, gq = q_loss(agent, s_aug, a, r, s2, done, cfg.gamma)
    _check_finite("q", lq)
    adam_step(agent.opt_q, agent.q.params, gq)

    lp, gp, g_ls, w = policy_loss(agent, s, a, cfg.alpha)
    _check_finite("policy", lp)
    adam_step(agent.opt_pi, agent.pi.net.params + [agent.pi.log_std], gp + [g_ls])
    np.clip(agent.pi.log_std, LOG_STD_MIN, LOG_STD_MAX, out=agent.pi.log_std)

    rho = cfg.target_rate
    for pt, p in zip(agent.v_target.params, agent.v.params):
        pt *= 1 - rho
        pt += rho * p
    agent.steps += 1
    return {"v_loss": lv, "q_loss": lq, "pi_loss": lp, "mean_weight": float(w.mean()),
            "zero_weight_frac": float(np.mean(w == 0))}


@dataclass
class TrainResult:
    agent: Agent
    curves: list[dict] = field(default_factory=list)


def train(dataset: TransitionDataset, cfg: SqlConfig, callback=None) -> TrainResult:
    """Run ``cfg.steps`` SQL updates on a normalized dataset."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if not dataset.normalized:
        raise ValueError("dataset must be normalized before training")
    agent = Agent.create(dataset.states.shape[1], dataset.actions.shape[1], cfg)
    curves = []
    acc: dict[str, float] = {}
    for step in range(1, cfg.steps + 1):
        diag = train_step(agent, dataset, cfg)
        for k, val in diag.items():
            acc[k] = acc.get(k, 0.0) + val
        if step % cfg.log_every == 0 or step == cfg.steps:
            n = (step - 1) % cfg.log_every + 1
            row = {"step": step, **{k: val / n for k, val in acc.items()}}
            curves.append(row)
            acc = {}
            if callback:
                callback(row, agent)
    return TrainResult(agent, curves)


def bc_train(dataset: TransitionDataset, cfg: SqlConfig, callback=None) -> TrainResult:
    """Maximum-likelihood regression of the Gaussian policy onto dataset actions."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    agent = Agent.create(dataset.states.shape[1], dataset.actions.shape[1], cfg)
    ones = np.ones(cfg.batch_size)
    curves = []
    running = 0.0
    for step in range(1, cfg.steps + 1):
        idx = agent.rng.integers(0, len(dataset), size=cfg.batch_size)
        loss, g, g_ls = agent.pi.weighted_nll(dataset.states[idx], dataset.actions[idx], ones)
        _check_finite("policy", loss)
        adam_step(agent.opt_pi, agent.pi.net.params + [agent.pi.log_std], g + [g_ls])
        np.clip(agent.pi.log_std, LOG_STD_MIN, LOG_STD_MAX, out=agent.pi.log_std)
        agent.steps += 1
        running += loss
        if step % cfg.log_every == 0 or step == cfg.steps:
            n = (step - 1) % cfg.log_every + 1
            curves.append({"step": step, "pi_loss": running / n})
            running = 0.0
            if callback:
                callback(curves[-1], agent)
    return TrainResult(agent, curves)


# ---------------------------------------------------------------- deployment

@dataclass
class PolicyCheckpoint:
    """Greedy timing-plan policy plus everything needed to undo normalization."""

    policy: GaussianPolicy
    stats: NormStats
    spec: IntersectionSpec
    kind: str = "sql"
    config_hash: str = ""

    @property
    def name(self) -> str:
        return self.kind

    def plan(self, obs: IntervalObservation | None) -> TimingPlan:
        if obs is None:
            raise ValueError("a learned policy needs the previous interval's observation")
        return act(self, obs)

    def save(self, path):
        sizes = self.policy.net.sizes
        arrays = {**mlp_arrays("pi", self.policy.net), "log_std": self.policy.log_std}
        meta = {"kind": self.kind, "sizes": sizes, "stats": self.stats.to_dict(),
                "spec_hash": spec_hash(self.spec), "config_hash": self.config_hash,
                "state_dim": self.spec.state_dim, "action_dim": self.spec.action_dim}
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path, spec: IntersectionSpec) -> "PolicyCheckpoint":
        arrays, meta = load_checkpoint(path)
        if meta["spec_hash"] != spec_hash(spec) or meta["state_dim"] != spec.state_dim:
            raise ValueError(f"checkpoint intersection {meta['spec_hash']} does not match "
                             f"configured intersection {spec_hash(spec)}")
        net = mlp_from_arrays("pi", meta["sizes"], arrays)
        return cls(GaussianPolicy(net, arrays["log_std"]), NormStats.from_dict(meta["stats"]),
                   spec, meta["kind"], meta["config_hash"])


def act(ckpt: PolicyCheckpoint, obs: IntervalObservation) -> TimingPlan:
    spec = ckpt.spec
    s = state_from_observation(obs, spec)
    if s.shape[0] != ckpt.policy.net.sizes[0]:
        raise ValueError(f"state dimension {s.shape[0]} != policy input {ckpt.policy.net.sizes[0]}")
    mu = ckpt.policy.mean(ckpt.stats.norm_state(s))
    raw = ckpt.stats.denorm_action(mu)
    cycle = float(np.clip(raw[0], spec.cycle_min, spec.cycle_max))
    ratios = mu[1:] / math.fsum(mu[1:])
    return TimingPlan(cycle, tuple(ratios), spec.cycle_min, spec.cycle_max)


# ---------------------------------------------------------------- dataset files

def dataset_to_text(data: TransitionDataset, spec: IntersectionSpec, stats: NormStats | None,
                    cfg_hash: str) -> str:
    header = {"lanes": spec.lane_count, "phase_orders": spec.phase_order_count,
              "phases": spec.phase_count, "normalized": data.normalized,
              "stats": stats.to_dict() if stats else None, "config_hash": cfg_hash}
    D, A = data.states.shape[1], data.actions.shape[1]
    cols = ([f"s{i}" for i in range(D)] + [f"a{i}" for i in range(A)] + ["reward"]
            + [f"next_s{i}" for i in range(D)] + ["terminal"])
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    buf.write(",".join(cols) + "\n")
    for i in range(len(data)):
        row = np.concatenate([data.states[i], data.actions[i], [data.rewards[i]],
                              data.next_states[i], [data.terminals[i]]])
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def write_dataset(path, data, spec, stats, cfg_hash):
    with open(path, "w") as fh:
        fh.write(dataset_to_text(data, spec, stats, cfg_hash))


def read_dataset(path) -> tuple[TransitionDataset, dict]:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing dataset header line")
        header = json.loads(first[2:])
        fh.readline()
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    L, K, P = header["lanes"], header["phase_orders"], header["phases"]
    D, A = 2 * L + K + P, 1 + P
    if body.size == 0:
        body = body.reshape(0, 2 * D + A + 2)
    if body.shape[1] != 2 * D + A + 2:
        raise ValueError(f"{path}: expected {2 * D + A + 2} columns, got {body.shape[1]}")
    data = TransitionDataset(body[:, :D], body[:, D:D + A], body[:, D + A],
                             body[:, D + A + 1:2 * D + A + 1], body[:, -1],
                             normalized=header["normalized"])
    return data, header
