"""Shared domain types, configuration loading and normalization statistics.

Units used throughout the package:

    time            seconds
    distance        meters
    flow / rates    vehicles per second (interval flows are vehicle counts)
    jam density     vehicles per meter  (1 / jam spacing)
    delay           vehicle-seconds
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

INTERVAL_SECONDS = 300
COUNT_CADENCE = 5
INTERVALS_PER_DAY = 86400 // INTERVAL_SECONDS


class ConfigError(ValueError):
    """Raised when a configuration value violates a documented invariant."""


def _fail(name: str, value, why: str):
    raise ConfigError(f"{name}={value!r}: {why}")


@dataclass(frozen=True)
class IntersectionSpec:
    lane_count: int
    phase_count: int
    phase_order_count: int
    phase_order_matrix: np.ndarray  # (K, P, L) binary
    detection_range: float = 150.0
    jam_density: float = 1.0 / 7.5
    free_flow_speed: float = 10.0
    shockwave_speed: float = 6.0
    shockwave_traverse_time: float = 25.0
    cycle_min: float = 60.0
    cycle_max: float = 120.0
    controlled: tuple[bool, ...] | None = None

    def __post_init__(self):
        phi = np.asarray(self.phase_order_matrix, dtype=float)
        object.__setattr__(self, "phase_order_matrix", phi)
        phi.setflags(write=False)
        if self.lane_count <= 0:
            _fail("lane_count", self.lane_count, "must be positive")
        if self.phase_count <= 0:
            _fail("phase_count", self.phase_count, "must be positive")
        if self.phase_order_count <= 0:
            _fail("phase_order_count", self.phase_order_count, "must be positive")
        shape = (self.phase_order_count, self.phase_count, self.lane_count)
        if phi.shape != shape:
            _fail("phase_order_matrix", phi.shape, f"expected shape {shape}")
        if not np.all((phi == 0) | (phi == 1)):
            _fail("phase_order_matrix", "non-binary entry", "entries must be 0 or 1")
        if self.controlled is None:
            ctl = tuple(bool(phi[:, :, l].sum() > 0) for l in range(self.lane_count))
            object.__setattr__(self, "controlled", ctl)
        else:
            object.__setattr__(self, "controlled", tuple(bool(c) for c in self.controlled))
        if len(self.controlled) != self.lane_count:
            _fail("controlled", self.controlled, "length must equal lane_count")
        for k in range(self.phase_order_count):
            for l in range(self.lane_count):
                if self.controlled[l] and phi[k, :, l].sum() < 1:
                    _fail("phase_order_matrix", (k, l), "controlled lane never receives green")
        for name in ("detection_range", "jam_density", "free_flow_speed", "shockwave_speed",
                     "shockwave_traverse_time"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                _fail(name, v, "must be positive and finite")
        expected = self.detection_range / self.shockwave_speed
        if abs(self.shockwave_traverse_time - expected) > 1e-9 * expected:
            _fail("shockwave_traverse_time", self.shockwave_traverse_time,
                  f"inconsistent with detection_range/shockwave_speed = {expected}")
        if not 0 < self.cycle_min <= self.cycle_max:
            _fail("cycle_min/cycle_max", (self.cycle_min, self.cycle_max), "need 0 < min <= max")

    @property
    def capacity(self) -> float:
        """Vehicles that fit in the detection range at jam density."""
        return self.detection_range * self.jam_density

    @property
    def state_dim(self) -> int:
        return 2 * self.lane_count + self.phase_order_count + self.phase_count

    @property
    def action_dim(self) -> int:
        return 1 + self.phase_count

    def lane_phases(self, order: int, lane: int) -> np.ndarray:
        return np.flatnonzero(self.phase_order_matrix[order, :, lane])


@dataclass(frozen=True)
class TimingPlan:
    cycle_length: float
    green_ratios: tuple[float, ...]
    cycle_min: float = 0.0
    cycle_max: float = math.inf

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.green_ratios)
        object.__setattr__(self, "green_ratios", ratios)
        if any(not (r > 0) for r in ratios):
            raise ConfigError(f"green ratios must be positive, got {list(ratios)}")
        total = math.fsum(ratios)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"green ratios sum {total:g} ≠ 1")
        if not self.cycle_min <= self.cycle_length <= self.cycle_max:
            raise ConfigError(f"cycle_length={self.cycle_length} outside "
                              f"[{self.cycle_min}, {self.cycle_max}]")

    @property
    def greens(self) -> np.ndarray:
        return np.asarray(self.green_ratios) * self.cycle_length

    @property
    def reds(self) -> np.ndarray:
        return self.cycle_length - self.greens


@dataclass(frozen=True)
class LaneCycleObservation:
    """Spatial counts of one lane over one signal cycle (red first, then green)."""

    lane_id: int
    start_time: float
    cycle_length: float
    red: float
    green: float
    timestamps: np.ndarray  # relative to start_time
    counts: np.ndarray
    cycle_flow: float | None = None

    def __post_init__(self):
        t = np.asarray(self.timestamps, dtype=float)
        x = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "counts", x)
        if t.shape != x.shape or t.ndim != 1:
            raise ValueError("timestamps and counts must be 1-d arrays of equal length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > self.cycle_length + 1e-9):
            raise ValueError(f"lane {self.lane_id}: timestamps must increase within [0, T_c]")
        if np.any(x < 0):
            raise ValueError(f"lane {self.lane_id}: negative spatial count")
        if abs(self.red + self.green - self.cycle_length) > 1e-6:
            raise ValueError(f"lane {self.lane_id}: red + green != cycle length")

    def check_capacity(self, spec: IntersectionSpec):
        if np.any(self.counts > spec.capacity + 1 + 1e-9):
            raise ValueError(f"lane {self.lane_id}: count exceeds detection capacity "
                             f"{spec.capacity:g} + 1")

    def with_flow(self, flow: float) -> "LaneCycleObservation":
        return replace(self, cycle_flow=float(flow))


@dataclass(frozen=True)
class CycleLog:
    """One intersection cycle as actually run by the controller."""

    start_time: float
    cycle_length: float
    greens: tuple[float, ...]  # seconds per phase slot, played in slot order
    phase_order: int


@dataclass(frozen=True)
class IntervalObservation:
    interval_index: int
    flows: np.ndarray  # (L,)
    counts: np.ndarray  # (INTERVAL_SECONDS // COUNT_CADENCE, L)
    phase_order: int
    cycles: tuple[CycleLog, ...] = ()

    def __post_init__(self):
        flows = np.asarray(self.flows, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        object.__setattr__(self, "flows", flows)
        object.__setattr__(self, "counts", counts)
        if np.any(flows < 0):
            raise ValueError("interval flows must be non-negative")
        if counts.shape[0] != INTERVAL_SECONDS // COUNT_CADENCE:
            raise ValueError(f"expected {INTERVAL_SECONDS // COUNT_CADENCE} count samples, "
                             f"got {counts.shape[0]}")


# ---------------------------------------------------------------- hyperparameters

@dataclass(frozen=True)
class GPHyper:
    h0: float = 0.5
    length_scale: float = 2.0
    noise: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                _fail(f.name, getattr(self, f.name), "must be positive")


@dataclass(frozen=True)
class MHConfig:
    iterations: int = 1000
    burn_in_fraction: float = 0.75
    vn_max: float = 1.0
    vs_max: float = 1.5
    seed: int = 0
    estimator: str = "accepted"  # "accepted" or "chain"

    def __post_init__(self):
        if not 0 < self.burn_in_fraction < 1:
            _fail("burn_in_fraction", self.burn_in_fraction, "must be in (0, 1)")
        if self.iterations < 10:
            _fail("iterations", self.iterations, "must be >= 10")
        if not 0 < self.vn_max < self.vs_max:
            _fail("vn_max/vs_max", (self.vn_max, self.vs_max), "need 0 < vn_max < vs_max")
        if self.estimator not in ("accepted", "chain"):
            _fail("estimator", self.estimator, "must be 'accepted' or 'chain'")


@dataclass(frozen=True)
class SqlConfig:
    alpha: float = 0.01
    gamma: float = 0.99
    aug_sigma: float = 0.01
    aug_clip: float = 0.025
    batch_size: int = 256
    steps: int = 1_000_000
    target_rate: float = 0.005
    learning_rate: float = 3e-5
    hidden: int = 256
    depth: int = 2
    log_every: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            _fail("alpha", self.alpha, "must be positive")
        if not 0 <= self.gamma < 1:
            _fail("gamma", self.gamma, "must be in [0, 1)")
        if not 0 <= self.aug_sigma <= self.aug_clip:
            _fail("aug_sigma", self.aug_sigma, "need 0 <= sigma <= clip")
        if self.batch_size < 1 or self.steps < 0 or self.hidden < 1 or self.depth < 1:
            _fail("batch_size/steps/hidden/depth",
                  (self.batch_size, self.steps, self.hidden, self.depth), "out of range")
        if not 0 < self.target_rate <= 1:
            _fail("target_rate", self.target_rate, "must be in (0, 1]")


@dataclass(frozen=True)
class SimConfig:
    saturation_rate: float = 0.5
    min_green: float = 5.0
    fixed_cycle: float = 100.0
    fixed_ratios: tuple[float, ...] | None = None
    behavior_noise: float = 0.25
    behavior_cycle_noise: float = 15.0
    demand_scale: float = 1.0
    day_variation: float = 0.1
    stop_threshold: float = 0.0  # seconds of waiting that count as stopping


@dataclass(frozen=True)
class DemandPattern:
    """Per-lane arrival rates (veh/s): daytime base plus morning and evening peaks."""

    base: tuple[float, ...]
    am: tuple[float, ...]
    pm: tuple[float, ...]
    night_factor: float = 0.2

    def __post_init__(self):
        if not len(self.base) == len(self.am) == len(self.pm):
            raise ConfigError("demand.base, demand.am and demand.pm need one value per lane")
        if min((*self.base, *self.am, *self.pm)) < 0 or not 0 <= self.night_factor <= 1:
            raise ConfigError("demand rates must be non-negative and night_factor in [0, 1]")


@dataclass(frozen=True)
class Settings:
    spec: IntersectionSpec
    demand: DemandPattern | None = None
    gp: GPHyper = field(default_factory=GPHyper)
    mh: MHConfig = field(default_factory=MHConfig)
    sql: SqlConfig = field(default_factory=SqlConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0

    def config_hash(self) -> str:
        return config_hash(self)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(settings: Settings) -> str:
    blob = json.dumps(_jsonable(asdict(settings)), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def spec_hash(spec: IntersectionSpec) -> str:
    blob = json.dumps(_jsonable(asdict(spec)), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- config parsing

def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _phase_matrix(section, L: int, P: int, K: int) -> np.ndarray:
    phi = np.zeros((K, P, L))
    for k in range(K):
        key = f"order_{k}"
        if key not in section:
            raise ConfigError(f"{key}: missing lane-to-phase map for phase order {k}")
        items = [s.strip() for s in section[key].split(",")]
        if len(items) != L:
            _fail(key, section[key], f"expected {L} comma-separated lane entries")
        for l, item in enumerate(items):
            if item in ("-", ""):
                continue
            for p in item.split("+"):
                p = int(p)
                if not 0 <= p < P:
                    _fail(key, item, f"phase index outside [0, {P})")
                phi[k, p, l] = 1.0
    return phi


def _typed(cls, section, skip=()):
    kwargs = {}
    for f in fields(cls):
        if f.name in skip or f.name not in section:
            continue
        raw = section[f.name]
        default = f.default
        try:
            if isinstance(default, bool):
                kwargs[f.name] = section.getboolean(f.name)
            elif isinstance(default, int):
                kwargs[f.name] = int(float(raw))
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            elif isinstance(default, str):
                kwargs[f.name] = raw.strip()
            else:
                kwargs[f.name] = tuple(_parse_floats(raw))
        except ValueError as exc:
            raise ConfigError(f"{section.name}.{f.name}={raw!r}: {exc}") from None
    return cls(**kwargs)


def parse_config(text: str) -> Settings:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse failure: {exc}") from None
    if "intersection" not in cp:
        raise ConfigError("missing [intersection] section")
    sec = cp["intersection"]
    try:
        L = sec.getint("lanes")
        P = sec.getint("phases")
        K = sec.getint("phase_orders", fallback=1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"intersection sizes: {exc}") from None
    if L is None or P is None:
        raise ConfigError("intersection.lanes and intersection.phases are required")
    phi = _phase_matrix(cp["phase_orders"] if "phase_orders" in cp else {}, L, P, K)

    shock = cp["shockwave"] if "shockwave" in cp else {}
    L_dr = float(shock.get("detection_range", 150.0))
    if "jam_spacing" in shock:
        k_j = 1.0 / float(shock["jam_spacing"])
    else:
        k_j = float(shock.get("jam_density", 1.0 / 7.5))
    u = float(shock.get("free_flow_speed", 10.0))
    w = shock.get("shockwave_speed")
    t_s = shock.get("traverse_time")
    if w is None and t_s is None:
        t_s = 25.0
    if w is None:
        w = L_dr / float(t_s)
    if t_s is None:
        t_s = L_dr / float(w)
    controlled = None
    if "controlled" in sec:
        controlled = tuple(bool(int(v)) for v in _parse_floats(sec["controlled"]))
    spec = IntersectionSpec(
        lane_count=L, phase_count=P, phase_order_count=K, phase_order_matrix=phi,
        detection_range=L_dr, jam_density=k_j, free_flow_speed=u,
        shockwave_speed=float(w), shockwave_traverse_time=float(t_s),
        cycle_min=sec.getfloat("cycle_min", fallback=60.0),
        cycle_max=sec.getfloat("cycle_max", fallback=120.0),
        controlled=controlled,
    )
    empty = configparser.SectionProxy(cp, "DEFAULT")
    gp = _typed(GPHyper, cp["gp"] if "gp" in cp else empty)
    mh = _typed(MHConfig, cp["mh"] if "mh" in cp else empty)
    sql = _typed(SqlConfig, cp["sql"] if "sql" in cp else empty)
    sim = _typed(SimConfig, cp["sim"] if "sim" in cp else empty)
    if sim.fixed_ratios is not None:
        TimingPlan(sim.fixed_cycle, sim.fixed_ratios, spec.cycle_min, spec.cycle_max)
    seed = cp.getint("run", "seed", fallback=0) if "run" in cp else 0
    demand = None
    if "demand" in cp:
        d = cp["demand"]
        try:
            demand = DemandPattern(*(tuple(_parse_floats(d[k])) for k in ("base", "am", "pm")),
                                   night_factor=d.getfloat("night_factor", fallback=0.2))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[demand]: {exc}") from None
        if len(demand.base) != L:
            raise ConfigError(f"[demand] lists {len(demand.base)} lanes, intersection has {L}")
    return Settings(spec=spec, demand=demand, gp=gp, mh=mh, sql=sql, sim=sim, seed=seed)


def load_config(path) -> Settings:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text())


def bundled_config(name: str = "ci") -> Settings:
    return load_config(Path(__file__).parent / "data" / f"{name}.ini")


# ---------------------------------------------------------------- datasets & normalization

@dataclass
class TransitionDataset:
    """Ordered 5-minute transitions.

    Raw datasets carry actions as ``[cycle_length, ratio_1..ratio_P]`` and rewards as the
    interval delay r_t. Normalized datasets carry unit-box actions and training rewards.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=float))
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        self.next_states = np.atleast_2d(np.asarray(self.next_states, dtype=float))
        self.terminals = np.asarray(self.terminals, dtype=float).reshape(-1)
        n = len(self.rewards)
        if n == 0:
            self.states = self.states.reshape(0, self.states.shape[-1] if self.states.size else 0)
        for name in ("states", "actions", "next_states", "terminals"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"dataset field {name} has length {len(getattr(self, name))}, "
                                 f"expected {n}")

    def __len__(self):
        return len(self.rewards)

    @classmethod
    def concat(cls, parts: Sequence["TransitionDataset"]) -> "TransitionDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("no transitions to concatenate")
        return cls(*(np.concatenate([getattr(p, n) for p in parts]) for n in
                     ("states", "actions", "rewards", "next_states", "terminals")),
                   normalized=parts[0].normalized)


@dataclass(frozen=True)
class NormStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    reward_mean: float
    reward_std: float
    action_low: np.ndarray
    action_high: np.ndarray

    def __post_init__(self):
        for name in ("state_mean", "state_std", "action_low", "action_high"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.state_std <= 0) or not self.reward_std > 0:
            raise ValueError("normalization std must be positive")

    def norm_state(self, s):
        return (np.asarray(s, dtype=float) - self.state_mean) / self.state_std

    def denorm_state(self, z):
        return np.asarray(z, dtype=float) * self.state_std + self.state_mean

    def norm_action(self, a):
        return (np.asarray(a, dtype=float) - self.action_low) / (self.action_high - self.action_low)

    def denorm_action(self, z):
        return np.asarray(z, dtype=float) * (self.action_high - self.action_low) + self.action_low

    def norm_reward(self, delay):
        """Training reward: negated delay standardized to mean 5, std 1."""
        return 5.0 + (-np.asarray(delay, dtype=float) - self.reward_mean) / self.reward_std

    def denorm_reward(self, r):
        return -((np.asarray(r, dtype=float) - 5.0) * self.reward_std + self.reward_mean)

    def to_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(**{k: (np.asarray(v, dtype=float) if isinstance(v, list) else v)
                      for k, v in d.items()})


def _safe_std(x: np.ndarray, axis=None):
    std = np.std(x, axis=axis)
    return np.where(std > 0, std, 1.0)


def fit_norm_stats(dataset: TransitionDataset, spec: IntersectionSpec) -> NormStats:
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    neg = -dataset.rewards
    low = np.concatenate([[spec.cycle_min], np.zeros(spec.phase_count)])
    high = np.concatenate([[spec.cycle_max], np.ones(spec.phase_count)])
    return NormStats(
        state_mean=dataset.states.mean(axis=0),
        state_std=_safe_std(dataset.states, axis=0),
        reward_mean=float(neg.mean()),
        reward_std=float(_safe_std(neg)),
        action_low=low,
        action_high=high,
    )


def apply_norm(dataset: TransitionDataset, stats: NormStats) -> TransitionDataset:
    if dataset.normalized:
        return dataset
    return TransitionDataset(
        states=stats.norm_state(dataset.states),
        actions=stats.norm_action(dataset.actions),
        rewards=stats.norm_reward(dataset.rewards),
        next_states=stats.norm_state(dataset.next_states),
        terminals=dataset.terminals,
        normalized=True,
    )


def normalize_states(dataset: TransitionDataset, spec: IntersectionSpec,
                     stats: NormStats | None = None) -> tuple[TransitionDataset, NormStats]:
    """Standardize states, map actions to the unit box and rewards to N(5, 1).

    Statistics are fitted on ``dataset`` unless ``stats`` is given.
    """
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    stats = stats or fit_norm_stats(dataset, spec)
    return apply_norm(dataset, stats), stats


# ---------------------------------------------------------------- observation files

def _fmt(x) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_rows(path, header: Sequence[str]) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(header):
        raise ValueError(f"{path}: expected header {','.join(header)}")
    return rows[1:]


def write_table(path, header: Sequence[str], data):
    """Numeric table as comma-separated text; ``%.17g`` round-trips float64 exactly."""
    data = np.asarray(data, dtype=float).reshape(-1, len(header))
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_table(path, header: Sequence[str]) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing input file: {path}")
    with open(path) as fh:
        first = fh.readline().strip()
        if tuple(first.split(",")) != tuple(header):
            raise ValueError(f"{path}: expected header {','.join(header)}")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    return body.reshape(-1, len(header))
