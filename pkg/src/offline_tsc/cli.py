"""Command-line pipeline: simulate -> decompose -> infer -> reward -> train -> evaluate -> report.

Every stage reads and writes plain files under ``--out-dir`` and records itself in
``manifest.json`` together with the configuration hash and seed it ran with. A stage
refuses upstream outputs produced under a different configuration hash.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import (INTERVALS_PER_DAY, ConfigError, NormStats, Settings, bundled_config,
                   load_config, normalize_states, read_table, write_table)
from .orl import PolicyCheckpoint, bc_train, read_dataset, train, write_dataset
from .perf import write_reward_table
from .pipeline import (CYCLES_PER_DAY, aggregate, decompose_day, estimate, infer_thetas,
                       truth_by_interval)
from .queuing import QueueParams
from .simenv import (behavior_policy, evaluate, fixed_plan, generate_logs,
                     lane_cycle_observations, read_logs, transitions_from_logs, write_logs)

log = logging.getLogger("offline_tsc")

MANIFEST = "manifest.json"
DECOMP_HEADER = ["day", "lane", "interval", "cycle_index", "start", "red", "green", "flow"]
THETA_HEADER = DECOMP_HEADER + ["v_n", "v_s", "xi0", "sampled", "low_confidence"]
PERF_HEADER = ["day", "lane", "interval", "start", "red", "flow", "q_max", "delay"]
EVAL_HEADER = ["seed", "day", "total_delay", "total_queue"]


class PipelineError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- manifest

class Manifest:
    """Stage records: config hash, seed, inputs and outputs per stage."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / MANIFEST
        self.data = {"stages": {}}
        if self.path.is_file():
            self.data = json.loads(self.path.read_text())

    def require(self, stage: str, cfg_hash: str) -> dict:
        rec = self.data["stages"].get(stage)
        if rec is None:
            raise PipelineError("missing_input",
                                f"stage '{stage}' has not been run in this out-dir")
        if rec["config_hash"] != cfg_hash:
            raise PipelineError(
                "hash_mismatch",
                f"upstream stage '{stage}' ran with config hash {rec['config_hash']}, "
                f"current config hash is {cfg_hash}")
        return rec

    def record(self, stage: str, cfg_hash: str, seed: int, inputs, outputs, **extra):
        self.data["stages"][stage] = {
            "config_hash": cfg_hash, "seed": seed,
            "inputs": sorted(str(p) for p in inputs), "outputs": sorted(str(p) for p in outputs),
            **extra}
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- helpers

def _settings(args) -> Settings:
    if args.config:
        settings = load_config(args.config)
    else:
        settings = bundled_config(args.scenario)
    return settings


def _seed(args, settings: Settings) -> int:
    return settings.seed if args.seed is None else args.seed


def _rel(out: Path, p: Path) -> str:
    try:
        return str(p.relative_to(out))
    except ValueError:
        return str(p)


def _day_range(first: int, days: int) -> list[int]:
    if days < 0:
        raise PipelineError("bad_argument", "--days must be non-negative")
    return list(range(first, first + days))


def _task_rows(tasks):
    for o, interval, ci in tasks:
        yield [ci // CYCLES_PER_DAY, o.lane_id, interval, ci, o.start_time, o.red, o.green,
               o.cycle_flow]


def _rebuild_tasks(logs, table: np.ndarray, settings: Settings):
    """Lane-cycle observations with the recorded decomposed flows, in file order."""
    flows = {(int(r[0]), int(r[3])): (int(r[2]), float(r[7])) for r in table}
    tasks = []
    for log_ in logs:
        for lane in range(settings.spec.lane_count):
            if not settings.spec.controlled[lane]:
                continue
            for k, (obs, interval) in enumerate(lane_cycle_observations(log_, settings.spec, lane)):
                ci = log_.day * CYCLES_PER_DAY + k
                if (log_.day, ci) not in flows:
                    raise PipelineError("bad_input",
                                        f"decomposition lacks day {log_.day} cycle {ci}")
                iv, f = flows[(log_.day, ci)]
                tasks.append((obs.with_flow(f), iv, ci))
    order = {(int(r[0]), int(r[3])): i for i, r in enumerate(table)}
    tasks.sort(key=lambda t: order[(t[2] // CYCLES_PER_DAY, t[2])])
    return tasks


# ---------------------------------------------------------------- commands

def cmd_simulate(args, settings: Settings, out: Path, man: Manifest) -> list[Path]:
    if settings.demand is None:
        raise PipelineError("bad_config", "simulation needs a [demand] section")
    seed = _seed(args, settings)
    h = settings.config_hash()
    days = _day_range(args.first_day, args.days)
    if not days:
        raise PipelineError("bad_argument", "--days must be at least 1 to simulate")
    factory = None if args.policy == "behavior" else (lambda s: fixed_plan(settings))
    logs = generate_logs(settings, settings.demand, len(days), seed, factory, first_day=days[0])
    files = write_logs(out / "sim", logs, settings.spec)
    man.record("simulate", h, seed, [], [_rel(out, f) for f in files], days=days,
               policy=args.policy)
    return files


def cmd_decompose(args, settings, out, man):
    h = settings.config_hash()
    man.require("simulate", h)
    logs = read_logs(out / "sim", settings.spec)
    rows = [r for log_ in logs for r in _task_rows(decompose_day(log_, settings))]
    path = out / "decomposition.csv"
    write_table(path, DECOMP_HEADER, np.array(rows, dtype=float).reshape(-1, len(DECOMP_HEADER)))
    man.record("decompose", h, _seed(args, settings), ["sim"], [_rel(out, path)])
    return [path]


def cmd_infer(args, settings, out, man):
    h = settings.config_hash()
    man.require("decompose", h)
    logs = read_logs(out / "sim", settings.spec)
    table = read_table(out / "decomposition.csv", DECOMP_HEADER)
    tasks = _rebuild_tasks(logs, table, settings)
    results = infer_thetas(tasks, settings, args.jobs)
    rows = []
    for (row, (o, interval, ci)), r in zip(zip(_task_rows(tasks), tasks), results):
        theta = r.theta.as_array() if r else np.zeros(3)
        rows.append(row + [*theta, float(r is not None), float(r.low_confidence if r else 0)])
    path = out / "theta.csv"
    write_table(path, THETA_HEADER, np.array(rows, dtype=float).reshape(-1, len(THETA_HEADER)))
    man.record("infer", h, _seed(args, settings), ["decomposition.csv", "sim"], [_rel(out, path)],
               mh_seed=settings.mh.seed)
    return [path]


def cmd_reward(args, settings, out, man):
    h = settings.config_hash()
    man.require("infer", h)
    spec = settings.spec
    logs = read_logs(out / "sim", spec)
    table = read_table(out / "theta.csv", THETA_HEADER)
    tasks = _rebuild_tasks(logs, table[:, :len(DECOMP_HEADER)], settings)
    per_day: dict[int, list] = {}
    perf_rows = []
    for (o, interval, ci), r in zip(tasks, table):
        theta = QueueParams(*r[8:11]) if r[11] > 0 else None
        est = estimate(o, interval, theta, bool(r[12]), settings)
        per_day.setdefault(int(r[0]), []).append(est)
        perf_rows.append([r[0], est.lane, est.interval, est.start, est.red, est.flow, est.q_max,
                          est.delay])
    inferred = {log_.day: aggregate(log_.day, per_day.get(log_.day, []), log_.n_intervals)
                for log_ in logs}
    raw = transitions_from_logs(logs, spec, [inferred[l_.day].rewards for l_ in logs])
    norm, stats = normalize_states(raw, spec)
    files = [out / "cycle_perf.csv", out / "rewards.csv", out / "dataset_raw.csv",
             out / "dataset.csv"]
    write_table(files[0], PERF_HEADER,
                np.array(perf_rows, dtype=float).reshape(-1, len(PERF_HEADER)))
    table_rows = []
    for log_ in logs:
        inf = inferred[log_.day]
        qs = inf.q_max_by_interval(spec.lane_count)
        for t in range(log_.n_intervals):
            table_rows.append((log_.day * INTERVALS_PER_DAY + t, inf.rewards[t],
                               float(stats.norm_reward(inf.rewards[t])), qs[t]))
    write_reward_table(files[1], table_rows)
    write_dataset(files[2], raw, spec, None, h)
    write_dataset(files[3], norm, spec, stats, h)
    man.record("reward", h, _seed(args, settings), ["theta.csv", "sim"],
               [_rel(out, f) for f in files])
    return files


def _load_dataset(out: Path, h: str):
    data, header = read_dataset(out / "dataset.csv")
    if header["config_hash"] != h:
        raise PipelineError("hash_mismatch", f"dataset config hash {header['config_hash']} != "
                                             f"current config hash {h}")
    return data, header


def cmd_train(args, settings, out, man):
    h = settings.config_hash()
    man.require("reward", h)
    data, header = _load_dataset(out, h)
    cfg = settings.sql
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    cfg = replace(cfg, seed=_seed(args, settings) if args.seed is not None else cfg.seed)
    fn = train if args.algo == "sql" else bc_train
    result = fn(data, cfg)
    ckpt = PolicyCheckpoint(result.agent.pi, NormStats.from_dict(header["stats"]), settings.spec,
                            args.algo, h)
    path = out / f"policy_{args.algo}.npz"
    ckpt.save(path)
    curve_path = out / f"curves_{args.algo}.csv"
    keys = list(result.curves[0].keys()) if result.curves else ["step"]
    write_table(curve_path, keys, np.array([[row[k] for k in keys] for row in result.curves]))
    man.record(f"train_{args.algo}", h, cfg.seed, ["dataset.csv"],
               [_rel(out, path), _rel(out, curve_path)], steps=cfg.steps)
    return [path, curve_path]


def _controller(name: str, settings: Settings, out: Path, h: str, seed: int):
    if name == "fixed":
        return fixed_plan(settings)
    if name == "behavior":
        return behavior_policy(settings, seed)
    path = Path(name)
    if not path.suffix:
        path = out / f"policy_{name}.npz"
    if not path.is_file():
        raise PipelineError("missing_input", f"policy checkpoint not found: {path}")
    ckpt = PolicyCheckpoint.load(path, settings.spec)
    if ckpt.config_hash and ckpt.config_hash != h:
        raise PipelineError("hash_mismatch", f"policy config hash {ckpt.config_hash} != current "
                                             f"config hash {h}")
    return ckpt


def cmd_evaluate(args, settings, out, man):
    if settings.demand is None:
        raise PipelineError("bad_config", "evaluation needs a [demand] section")
    h = settings.config_hash()
    base = _seed(args, settings)
    days = _day_range(args.first_day, args.days)
    if not days:
        raise PipelineError("bad_argument", "--days must be at least 1 to evaluate")
    rows = []
    name = args.policy
    for k in range(args.eval_seeds):
        seed = base + 1000 * (k + 1)
        ctl = _controller(name, settings, out, h, seed)
        rep = evaluate(ctl, settings, settings.demand, days, seed)
        rows += [[seed, d, dl, q] for d, dl, q in zip(rep.days, rep.total_delay, rep.total_queue)]
    label = Path(name).stem.removeprefix("policy_") if name not in ("fixed", "behavior") else name
    path = out / f"eval_{label}.csv"
    write_table(path, EVAL_HEADER, np.array(rows, dtype=float))
    man.record(f"evaluate_{label}", h, base, [name], [_rel(out, path)], days=days,
               eval_seeds=args.eval_seeds)
    return [path]


def cmd_report(args, settings, out, man):
    h = settings.config_hash()
    report = out / "report"
    report.mkdir(exist_ok=True)
    evals = sorted(out.glob("eval_*.csv"))
    if not evals:
        raise PipelineError("missing_input", "no eval_*.csv files; run evaluate first")
    files = []
    lines = ["policy,day,total_delay,total_queue"]
    summary = ["policy,mean_delay,std_delay,mean_queue,days"]
    curves = ["policy,day,mean_delay"]
    for path in evals:
        label = path.stem.removeprefix("eval_")
        man.require(f"evaluate_{label}", h)
        t = read_table(path, EVAL_HEADER)
        days = np.unique(t[:, 1]).astype(int)
        for d in days:
            sel = t[:, 1] == d
            dl, q = float(t[sel, 2].mean()), float(t[sel, 3].mean())
            lines.append(f"{label},{d},{dl:.3f},{q:.3f}")
            curves.append(f"{label},{d},{dl:.3f}")
        per_day = np.array([t[t[:, 1] == d, 2].mean() for d in days])
        per_day_q = np.array([t[t[:, 1] == d, 3].mean() for d in days])
        lines.append(f"{label},mean,{per_day.mean():.3f},{per_day_q.mean():.3f}")
        summary.append(f"{label},{per_day.mean():.3f},{per_day.std():.3f},"
                       f"{per_day_q.mean():.3f},{len(days)}")
    for name, body in (("table.csv", lines), ("summary.csv", summary), ("daily_delay.csv", curves)):
        (report / name).write_text("\n".join(body) + "\n")
        files.append(report / name)
    if (out / "rewards.csv").is_file() and "reward" in man.data["stages"]:
        man.require("reward", h)
        logs = read_logs(out / "sim", settings.spec)
        perf = read_table(out / "cycle_perf.csv", PERF_HEADER)
        scatter = ["day,interval,estimated_delay,true_delay"]
        for log_ in logs:
            truth, _ = truth_by_interval(log_)
            p = perf[perf[:, 0] == log_.day]
            est = np.bincount(p[:, 2].astype(int), weights=p[:, 7], minlength=log_.n_intervals)
            scatter += [f"{log_.day},{i},{est[i]:.3f},{truth[i]:.3f}"
                        for i in range(log_.n_intervals)]
        (report / "delay_scatter.csv").write_text("\n".join(scatter) + "\n")
        files.append(report / "delay_scatter.csv")
    man.record("report", h, _seed(args, settings), [_rel(out, p) for p in evals],
               [_rel(out, p) for p in files])
    return files


COMMANDS = {"simulate": cmd_simulate, "decompose": cmd_decompose, "infer": cmd_infer,
            "reward": cmd_reward, "train": cmd_train, "evaluate": cmd_evaluate,
            "report": cmd_report}


# ---------------------------------------------------------------- argument parsing

def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), metavar="PATH",
                   help="INI configuration file (default: bundled scenario)")
    p.add_argument("--scenario", default=d("ci"), choices=["ci", "full17"],
                   help="bundled configuration used when --config is absent (default: ci)")
    p.add_argument("--seed", type=int, default=d(None),
                   help="global seed, overrides [run] seed (integer)")
    p.add_argument("--out-dir", default=d("run"), metavar="DIR",
                   help="directory holding every stage's inputs and outputs (default: run)")
    p.add_argument("--jobs", type=int, default=d(1),
                   help="worker processes for MH inference (count, default: 1)")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False),
                   help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offline-tsc",
        description="Offline traffic signal control: reward inference from coarse counts "
                    "and in-sample offline RL. Units: seconds, meters, vehicles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common],
                       help="simulate days and write coarse observation files (sim/*.csv)")
    p.add_argument("--days", type=int, default=7, help="number of simulated days (days, default 7)")
    p.add_argument("--first-day", type=int, default=0, help="index of the first day (default 0)")
    p.add_argument("--policy", choices=["behavior", "fixed"], default="behavior",
                   help="controller generating the data (default: behavior)")

    sub.add_parser("decompose", parents=[common],
                   help="split 5-min lane flows into cycle flows (vehicles) -> decomposition.csv")
    sub.add_parser("infer", parents=[common],
                   help="MH inference of (v_n veh/s, v_s veh/s, xi0 veh) per lane-cycle "
                        "-> theta.csv")
    sub.add_parser("reward", parents=[common],
                   help="queue length (m), delay (veh*s) and rewards -> rewards.csv, dataset.csv")

    p = sub.add_parser("train", parents=[common], help="train a policy on dataset.csv")
    p.add_argument("--algo", choices=["sql", "bc"], default="sql",
                   help="in-sample SQL or behavior cloning (default: sql)")
    p.add_argument("--steps", type=int, default=None,
                   help="gradient steps (count, default: [sql] steps)")

    p = sub.add_parser("evaluate", parents=[common],
                       help="closed-loop ground-truth delay (veh*s) and queue (m) per day")
    p.add_argument("--policy", default="fixed",
                   help="fixed, behavior, sql, bc or a checkpoint path (default: fixed)")
    p.add_argument("--days", type=int, default=7, help="number of evaluation days (default 7)")
    p.add_argument("--first-day", type=int, default=1000,
                   help="index of the first held-out day (default 1000)")
    p.add_argument("--eval-seeds", type=int, default=3,
                   help="independent evaluation seeds (count, default 3)")

    sub.add_parser("report", parents=[common],
                   help="delay/queue tables and plot data under report/")
    return parser


def _error_line(code: str, message: str) -> str:
    return "ERROR " + json.dumps({"code": code, "message": message}, sort_keys=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        man = Manifest(out)
        files = COMMANDS[args.command](args, settings, out, man)
    except PipelineError as exc:
        print(_error_line(exc.code, str(exc)), file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(_error_line("bad_config", str(exc)), file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(_error_line("bad_input", str(exc)), file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
